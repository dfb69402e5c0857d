"""
The degradation pipeline
========================

Each sample is left alone, resampled through an intermediate rate and
back, or mixed with crowd noise at a fixed SNR, with probabilities
0.4 / 0.4 / 0.2. Every output carries a tag that replays it exactly.
"""

from collections import Counter

import numpy as np

from vocoder_artifacts import augment as A
from vocoder_artifacts import dataset as D
from vocoder_artifacts import dsp

cfg = A.AugmentConfig()
w = D.synth_utterance(3, seconds=1.5)

tags = [A.draw_tag(cfg, A.sample_rng(0, i), w.sample_rate) for i in range(10_000)]
print("branch counts:", Counter(t.branch for t in tags))
print("resample rates:", sorted(Counter(t.parameter for t in tags if t.branch == "resampled").items()))
print("SNRs:", sorted(Counter(t.parameter for t in tags if t.branch == "noisy").items()))

# %%
# Achieved SNR, measured on the added noise before any clamping.
for i in range(20):
    out, tag = A.apply_augment(w, cfg, A.sample_rng(1, i))
    line = tag.to_line(f"sample{i}")
    if tag.branch == "noisy":
        added = out.samples - w.samples
        snr = 10 * np.log10(np.sum(w.samples**2) / np.sum(added**2))
        line += f"   measured {snr:.4f} dB"
    elif tag.branch == "resampled":
        line += f"   correlation {np.corrcoef(out.samples, w.samples)[0, 1]:.5f}"
    print(line)
    assert np.array_equal(A.replay(w, tag, cfg).samples, out.samples)

# %%
# A 5 kHz tone does not survive a trip through 8 kHz.
t = np.arange(24000) / 24000
tone = dsp.Waveform(0.5 * np.sin(2 * np.pi * 5000 * t), 24000)
print("5 kHz tone RMS ratio after 8 kHz round trip:", A.round_trip_resample(tone, 8000).rms() / tone.rms())
