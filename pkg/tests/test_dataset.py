import json
import shutil

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _support import mel_residuals
from vocoder_artifacts import dataset as D
from vocoder_artifacts import dsp


def _records(n_origins, n_classes=3):
    recs = []
    for o in range(n_origins):
        for c in range(n_classes):
            recs.append(D.SampleRecord(f"k{c}/o{o}", f"k{c}/o{o}.wav", f"o{o}", int(c > 0), c, D.UNASSIGNED,
                                       1.0 + o / 10, 24000))
    return recs


def _manifest(n_origins, n_classes=3):
    classes = [D.VocoderClass(i, "real" if i == 0 else f"v{i}", "-" if i == 0 else f"fp{i}")
               for i in range(n_classes)]
    return D.Manifest(_records(n_origins, n_classes), classes, {"mel_log": "false"})


# ------------------------------------------------------------------ records


def test_record_invariants():
    with pytest.raises(ValueError):
        D.SampleRecord("a", "a.wav", "o", 0, 1, "train", 1.0, 24000)
    with pytest.raises(ValueError):
        D.SampleRecord("a", "a.wav", "o", 1, 0, "train", 1.0, 24000)
    with pytest.raises(ValueError):
        D.SampleRecord("a", "a.wav", "o", 1, 1, "train", 0.0, 24000)
    with pytest.raises(ValueError):
        D.SampleRecord("a", "a.wav", "o", 1, 1, "holdout", 1.0, 24000)


def test_manifest_invariants():
    m = _manifest(2)
    with pytest.raises(ValueError, match="unique"):
        D.Manifest(m.records + m.records[:1], m.classes)
    with pytest.raises(ValueError, match="class table"):
        D.Manifest(m.records, m.classes[:2])


def test_manifest_round_trip(tmp_path):
    m = D.split_manifest(_manifest(5), seed=3)
    m.save(tmp_path / "m.tsv")
    back = D.Manifest.load(tmp_path / "m.tsv")
    assert back.records == m.records and back.classes == m.classes and back.notes == m.notes
    assert back.to_text() == m.to_text()
    assert back.root == tmp_path


def test_manifest_layout_is_tab_separated_in_field_order():
    text = _manifest(1).to_text().splitlines()
    assert text[0].startswith(D.MANIFEST_MAGIC)
    header = text.index("\t".join(D.COLUMNS))
    assert text[header + 1].split("\t") == ["k0/o0", "k0/o0.wav", "o0", "0", "0", "-", "1.000000", "24000"]


def test_manifest_rejects_foreign_files(tmp_path):
    (tmp_path / "x.tsv").write_text("id\tpath\n")
    with pytest.raises(ValueError, match="not a manifest"):
        D.Manifest.load(tmp_path / "x.tsv")


# ------------------------------------------------------------------ building


def test_build_counts_and_layout(toy_build):
    root, m, report = toy_build
    assert len(m.records) == 40
    assert m.class_counts() == {"real": 10, "GL-A": 10, "GL-B": 10, "GL-C": 10}
    assert report.skipped == []
    for r in m.records:
        assert m.audio_path(r) == root / "dataset" / r.path
        assert m.audio_path(r).is_file()
    for origin in m.origins():
        assert sorted(r.c for r in m.records if r.origin_id == origin) == [0, 1, 2, 3]
    assert json.loads((root / "dataset" / "build_report.json").read_text())["class_counts"]["GL-B"] == 10
    assert m.notes["mel_log"] == "false" and "mel_config" in m.notes


def test_fake_durations_within_one_hop(toy_build):
    _, m, _ = toy_build
    hop = dsp.MelConfig().stft.hop_length
    real = {r.origin_id: r for r in m.records if r.y == 0}
    for r in m.records:
        if r.y == 1:
            w = dsp.load_wav(m.audio_path(r))
            ref = dsp.load_wav(m.audio_path(real[r.origin_id]))
            assert abs(w.samples.size - ref.samples.size) <= hop
            assert abs(r.duration - real[r.origin_id].duration) <= hop / 24000 + 1e-6


def test_vocoder_fingerprints_are_distinct(toy_build):
    res = mel_residuals(toy_build[1])
    assert all(v > 0 for v in res.values())
    names = sorted(res)
    for i, a in enumerate(names):
        for b in names[i + 1 :]:
            assert abs(res[a] - res[b]) / max(res[a], res[b]) > 0.10, (a, b, res)


def test_rebuild_is_byte_identical(toy_build, tmp_path):
    root, m, _ = toy_build
    m2, _ = D.build_selfvocoded(root / "corpus", D.surrogate_plugins(["GL-A", "GL-B", "GL-C"]), dsp.MelConfig(),
                                tmp_path / "again", seed=0)
    assert (tmp_path / "again" / "manifest.tsv").read_bytes() == (root / "dataset" / "manifest.tsv").read_bytes()
    for r in m.records[:8]:
        assert (tmp_path / "again" / r.path).read_bytes() == m.audio_path(r).read_bytes()


def test_surrogates_are_deterministic_per_seed():
    w = D.synth_utterance(1, seconds=0.5)
    mel = dsp.mel_spectrogram(w, dsp.MelConfig())
    for name, plugin in zip(D.SURROGATES, D.surrogate_plugins(list(D.SURROGATES))):
        a, b = plugin.invert(mel, 7), plugin.invert(mel, 7)
        assert np.array_equal(a.samples, b.samples), name
    fps = {p.fingerprint for p in D.surrogate_plugins(list(D.SURROGATES))}
    assert len(fps) == 3


def test_build_skips_unreadable_audio(tmp_path):
    D.make_toy_corpus(tmp_path / "c", 2, seed=1)
    (tmp_path / "c" / "broken.wav").write_bytes(b"RIFF\x00\x00")
    m, report = D.build_selfvocoded(tmp_path / "c", D.surrogate_plugins(["GL-A", "GL-B"]), dsp.MelConfig(),
                                    tmp_path / "out")
    assert len(m.records) == 6
    assert [s["path"].endswith("broken.wav") for s in report.skipped] == [True]


def test_build_errors(tmp_path):
    plugins = D.surrogate_plugins(["GL-A", "GL-B"])
    with pytest.raises(FileNotFoundError):
        D.build_selfvocoded(tmp_path / "nope", plugins, dsp.MelConfig(), tmp_path / "out")
    D.make_toy_corpus(tmp_path / "c", 1)
    with pytest.raises(ValueError, match="two"):
        D.build_selfvocoded(tmp_path / "c", plugins[:1], dsp.MelConfig(), tmp_path / "out")
    with pytest.raises(ValueError, match="unknown"):
        D.surrogate_plugins(["GL-Z"])
    (tmp_path / "empty").mkdir()
    with pytest.raises(ValueError, match="no readable"):
        D.build_selfvocoded(tmp_path / "empty", plugins, dsp.MelConfig(), tmp_path / "out")


def test_plugin_failure_aborts_and_cleans_up(tmp_path):
    def boom(mel, seed):
        raise RuntimeError("device lost")

    D.make_toy_corpus(tmp_path / "c", 1)
    plugins = D.surrogate_plugins(["GL-A"]) + [D.VocoderPlugin("bad", boom, "x")]
    with pytest.raises(RuntimeError, match="bad"):
        D.build_selfvocoded_safe(tmp_path / "c", plugins, dsp.MelConfig(), tmp_path / "out")
    assert not (tmp_path / "out").exists()


# ------------------------------------------------------------------ splits


def test_split_ten_origins():
    m = D.split_manifest(_manifest(10), (0.6, 0.2, 0.2), seed=0)
    per_split = {s: {r.origin_id for r in m.split(s)} for s in D.SPLITS}
    assert [len(per_split[s]) for s in D.SPLITS] == [6, 2, 2]
    for s in D.SPLITS:
        assert len(set(m.class_counts(s).values())) == 1
    assert m.notes["split_seed"] == "0" and m.notes["mel_log"] == "false"


@settings(max_examples=40, deadline=None)
@given(st.integers(3, 60), st.integers(0, 2**31), st.sampled_from([(0.6, 0.2, 0.2), (0.8, 0.1, 0.1), (0.34, 0.33, 0.33)]))
def test_split_properties(n, seed, ratios):
    m = D.split_manifest(_manifest(n), ratios, seed)
    sets = [{r.origin_id for r in m.split(s)} for s in D.SPLITS]
    assert not (sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2])
    assert sum(map(len, sets)) == n
    for s, r in zip(sets, ratios):
        assert abs(len(s) - n * r) < 1
    for s in D.SPLITS:
        assert len(set(m.class_counts(s).values())) == 1
    assert D.split_manifest(_manifest(n), ratios, seed).records == m.records


def test_split_seed_sensitivity():
    base = _manifest(10)
    ref = [r.split for r in D.split_manifest(base, seed=0).records]
    differ = sum(ref != [r.split for r in D.split_manifest(base, seed=s).records] for s in range(1, 201))
    assert differ / 200 > 0.99


def test_split_errors():
    with pytest.raises(ValueError, match="ratios"):
        D.split_manifest(_manifest(5), (0.5, 0.5, 0.1))
    with pytest.raises(ValueError, match="ratios"):
        D.split_manifest(_manifest(5), (1.0, 0.0, 0.0))
    with pytest.raises(ValueError, match="origins"):
        D.split_manifest(_manifest(2))


# ------------------------------------------------------------------ crop / batches


def test_crop_or_pad_examples():
    x = np.array([1.0, 2, 3, 4, 5])
    assert np.array_equal(D.crop_or_pad(x, 5, train=False), x)
    assert D.crop_or_pad(x, 8, train=False).tolist() == [1, 2, 3, 4, 5, 1, 2, 3]
    long = np.arange(100.0)
    assert np.array_equal(D.crop_or_pad(long, 10, train=False), D.crop_or_pad(long, 10, train=False))
    assert D.crop_or_pad(long, 10, train=False)[0] == 45
    with pytest.raises(ValueError):
        D.crop_or_pad(x, 0)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 300), st.integers(1, 300), st.integers(0, 1000))
def test_crop_is_contiguous_window(n, target, seed):
    x = np.arange(n, dtype=float)
    out = D.crop_or_pad(x, target, np.random.default_rng(seed), train=True)
    assert out.shape == (target,)
    if n >= target:
        assert np.array_equal(out, np.arange(out[0], out[0] + target))
    else:
        assert np.array_equal(out, np.arange(target) % n)


def test_make_batches_sizes_and_labels(toy_build):
    _, m, _ = toy_build
    m = m.with_records(D.SampleRecord(r.id, r.path, r.origin_id, r.y, r.c, "train", r.duration, r.sample_rate)
                       for r in m.records)
    batches = list(D.make_batches(m, "train", 32, seed=1, input_length=4000))
    assert [len(b.ids) for b in batches] == [32, 8]
    assert sorted(i for b in batches for i in b.ids) == sorted(r.id for r in m.records)
    for b in batches:
        assert b.x.shape[1] == 4000
        assert np.array_equal(b.y == 0, b.c == 0)
    again = list(D.make_batches(m, "train", 32, seed=1, input_length=4000))
    assert all(np.array_equal(a.x, b.x) and a.ids == b.ids for a, b in zip(batches, again))
    other = list(D.make_batches(m, "train", 32, seed=1, epoch=1, input_length=4000))
    assert batches[0].ids != other[0].ids


def test_epoch_order_is_seeded_permutation():
    a = D.epoch_order(40, 3, 2)
    assert sorted(a) == list(range(40)) and np.array_equal(a, D.epoch_order(40, 3, 2))
    assert not np.array_equal(a, D.epoch_order(40, 3, 3))


def test_make_batches_errors(toy_build):
    _, m, _ = toy_build
    with pytest.raises(ValueError, match="empty"):
        next(D.make_batches(m, "test", 4, seed=0))
