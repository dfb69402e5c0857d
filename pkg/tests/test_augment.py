import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vocoder_artifacts import augment as A
from vocoder_artifacts import dataset as D
from vocoder_artifacts import dsp

RATE = 24000


def tone(freq, seconds=1.0, rate=RATE):
    t = np.arange(int(seconds * rate)) / rate
    return dsp.Waveform(0.5 * np.sin(2 * np.pi * freq * t), rate)


def rms(x):
    return float(np.sqrt(np.mean(np.square(x))))


def test_identity_round_trip():
    w = D.synth_utterance(3, seconds=1.0)
    out = A.round_trip_resample(w, RATE)
    assert len(out) == len(w) and out.sample_rate == RATE
    assert np.corrcoef(out.samples, w.samples)[0, 1] >= 0.9999


def test_narrowband_round_trip_removes_high_tone():
    out = A.round_trip_resample(tone(5000), 8000)
    assert rms(out.samples) < 0.05 * rms(tone(5000).samples)


def test_upsampling_round_trip_preserves_low_tone():
    w = tone(440)
    out = A.round_trip_resample(w, 44100)
    assert np.corrcoef(out.samples, w.samples)[0, 1] >= 0.999


@pytest.mark.parametrize("rate", [8000, 16000, 22050, 32000, 44100, 11025])
def test_round_trip_length_and_rate(rate):
    w = D.synth_utterance(1, seconds=0.73)
    out = A.round_trip_resample(w, rate)
    assert abs(len(out) - len(w)) <= 2 and out.sample_rate == w.sample_rate


def test_round_trip_rejects_bad_rate():
    with pytest.raises(ValueError):
        A.round_trip_resample(tone(440), 0)


def test_degenerate_original_branch():
    cfg = A.AugmentConfig(branch_probs=(1, 0, 0))
    w = tone(300, 0.2)
    for i in range(50):
        out, tag = A.apply_augment(w, cfg, A.sample_rng(0, i))
        assert tag.branch == "original" and tag.parameter is None and out is w


def test_noisy_branch_hits_requested_snr():
    noise = A.crowd_noise(RATE, 2.0, seed=5)
    cfg = A.AugmentConfig(snr_values_db=(10,), branch_probs=(0, 0, 1), noise_bank=(noise,))
    w = D.synth_utterance(2, seconds=1.0)
    for i in range(20):
        out, tag = A.apply_augment(w, cfg, A.sample_rng(1, i))
        assert tag.branch == "noisy" and tag.parameter == 10.0
        added = out.samples - w.samples
        snr = 10 * np.log10(np.sum(w.samples**2) / np.sum(added**2))
        assert abs(snr - 10) <= 0.01


def test_branch_frequencies():
    cfg = A.AugmentConfig()
    counts = dict.fromkeys(A.BRANCHES, 0)
    for i in range(10_000):
        counts[A.draw_tag(cfg, A.sample_rng(11, i), RATE).branch] += 1
    for branch, p in zip(A.BRANCHES, cfg.branch_probs):
        assert abs(counts[branch] / 10_000 - p) <= 0.02


def test_within_branch_parameters_cover_lists():
    cfg = A.AugmentConfig()
    tags = [A.draw_tag(cfg, A.sample_rng(2, i), RATE) for i in range(3000)]
    assert {t.parameter for t in tags if t.branch == "resampled"} == set(map(float, cfg.intermediate_rates))
    assert {t.parameter for t in tags if t.branch == "noisy"} == set(cfg.snr_values_db)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 10_000))
def test_replay_is_bit_exact_and_rate_preserving(seed, index):
    cfg = A.AugmentConfig()
    w = tone(700, 0.25)
    out, tag = A.apply_augment(w, cfg, A.sample_rng(seed, index))
    again, tag2 = A.apply_augment(w, cfg, A.sample_rng(seed, index))
    assert tag == tag2 and np.array_equal(out.samples, again.samples)
    assert np.array_equal(A.replay(w, tag, cfg).samples, out.samples)
    assert out.sample_rate == w.sample_rate and len(out) == len(w)


def test_crowd_noise_is_deterministic_and_normalised():
    a = A.crowd_noise(RATE, 10.0, 0)
    assert len(a) == 10 * RATE
    assert np.array_equal(a.samples, A.crowd_noise.__wrapped__(RATE, 10.0, 0).samples)
    assert rms(a.samples) == pytest.approx(0.1, rel=1e-9)


def test_config_validation_and_dict():
    with pytest.raises(ValueError):
        A.AugmentConfig(branch_probs=(0.5, 0.5, 0.1))
    with pytest.raises(ValueError):
        A.AugmentConfig(branch_probs=(-0.2, 0.6, 0.6))
    with pytest.raises(ValueError):
        A.AugmentConfig(intermediate_rates=())
    with pytest.raises(ValueError):
        A.AugmentConfig(snr_values_db=())
    A.AugmentConfig(snr_values_db=(), branch_probs=(0.5, 0.5, 0.0))
    cfg = A.AugmentConfig(seed=4, snr_values_db=(5,))
    assert A.AugmentConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError, match="unknown"):
        A.AugmentConfig.from_dict({"snr": 3})


def test_tag_invariant_and_line():
    with pytest.raises(ValueError):
        A.AugmentTag("original", 8000.0)
    with pytest.raises(ValueError):
        A.AugmentTag("resampled")
    assert A.AugmentTag("resampled", 22050.0).to_line("x") == "x\tresampled\t22050"
    assert A.AugmentTag("original").to_line("x") == "x\toriginal\t-"


def test_augment_manifest(toy_build, tmp_path):
    _, m, _ = toy_build
    m = D.split_manifest(m, seed=0)
    cfg = A.AugmentConfig(seed=3)
    out = A.augment_manifest(m, "test", cfg, tmp_path / "aug")
    assert out.notes["degraded"] == "true"
    assert [r.id for r in out.records] == [r.id for r in m.split("test")]
    lines = (tmp_path / "aug" / "tags.tsv").read_text().splitlines()
    assert len(lines) == len(out.records)
    back = D.Manifest.load(tmp_path / "aug" / "manifest.tsv")
    for r, line in zip(back.records, lines):
        assert line.split("\t")[0] == r.id
        assert back.audio_path(r).is_file()
