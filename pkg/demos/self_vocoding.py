"""
Self-vocoding a toy corpus
==========================

Real utterances go through a mel transform and back through a vocoder.
Anything that differs from the original was put there by the vocoder,
so each vocoder leaves its own residual. Here the vocoders are
Griffin-Lim surrogates with different settings.

Run: ``python demos/self_vocoding.py [workdir]``
"""

import sys
import tempfile
from pathlib import Path

import numpy as np

from vocoder_artifacts import dataset as D
from vocoder_artifacts import dsp

workdir = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="selfvoc-"))

# A handful of speech-like utterances: harmonic syllables with formants,
# fricative bursts and pauses. Deterministic for a given seed.
D.make_toy_corpus(workdir / "corpus", n=6, seed=0)

plugins = D.surrogate_plugins(["GL-A", "GL-B", "GL-C"])
for p in plugins:
    print(f"{p.name}: {D.SURROGATES[p.name].config()}  fingerprint {p.fingerprint}")

manifest, report = D.build_selfvocoded(workdir / "corpus", plugins, dsp.MelConfig(), workdir / "dataset")
print("per-class counts:", manifest.class_counts())

# %%
# Mean absolute mel difference between each copy and its origin.
cfg = dsp.MelConfig()
real = {r.origin_id: dsp.load_wav(manifest.audio_path(r)) for r in manifest.records if r.y == 0}
residual = {}
for r in manifest.records:
    if r.y == 0:
        continue
    a = dsp.mel_spectrogram(real[r.origin_id], cfg).values
    b = dsp.mel_spectrogram(dsp.load_wav(manifest.audio_path(r)), cfg).values
    t = min(a.shape[1], b.shape[1])
    residual.setdefault(manifest.class_names()[r.c], []).append(np.mean(np.abs(a[:, :t] - b[:, :t])))

for name, vals in residual.items():
    print(f"{name:5s} mean mel residual {np.mean(vals):8.3f}  (per utterance {np.round(vals, 2)})")

# %%
# Per-origin split: every copy of an utterance lands in the same split.
split = D.split_manifest(manifest, (0.5, 0.25, 0.25), seed=0)
for s in D.SPLITS:
    print(s, sorted({r.origin_id for r in split.split(s)}), split.class_counts(s))
print("outputs in", workdir)
