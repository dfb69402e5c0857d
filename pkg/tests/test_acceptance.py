"""End-to-end acceptance checks; each prints one PASS/FAIL line.

The toy end-to-end and robustness checks share one training run per seed
(about six minutes each on a single CPU core).
"""

import time

import numpy as np
import pytest

from _support import (composition_error, criterion, loss_part_grads, mel_residuals, oracle_eer, random_set,
                      trajectory)
from vocoder_artifacts import augment as A
from vocoder_artifacts import dataset as D
from vocoder_artifacts import dsp, gradcheck
from vocoder_artifacts import experiment as E
from vocoder_artifacts import metrics as Mx
from vocoder_artifacts import model as M
from vocoder_artifacts import train as T

SMALL = M.reduced_config(sample_rate=24000, input_length=2048, num_classes=4)
ELEMENTWISE = {"add", "mul", "leaky_relu", "abs", "sigmoid", "tanh", "sum", "mean"}


def test_gradient_oracle():
    with criterion("gradient oracle: every op and the reduced model, 5 seeds, h=1e-5, < 2 min"):
        t0 = time.perf_counter()
        results = gradcheck.run_all(range(5), include_model=True)
        elapsed = time.perf_counter() - t0
        print(gradcheck.format_table(results))
        assert gradcheck.H == 1e-5
        assert set(gradcheck.OP_CASES) <= {r.name for r in results}
        assert any(r.name.startswith("model") for r in results)
        for r in results:
            limit = 1e-4 if r.name in ELEMENTWISE else 1e-3
            assert r.max_rel_error < limit, r
        assert elapsed < 120, elapsed


def test_eer_oracle_equivalence():
    with criterion("EER oracle equivalence: >= 200 random sets within 1e-12, hand example 1/3, < 10 s"):
        t0 = time.perf_counter()
        rng = np.random.default_rng(7)
        sets = [random_set(rng) for _ in range(250)]
        sets += [(np.full(6, 0.3), np.array([0, 1, 0, 1, 0, 1])),          # all tied
                 (np.array([0.1, 0.2, 0.8, 0.9]), np.array([0, 0, 1, 1])),  # separated
                 (np.array([0.1, 0.2, 0.8, 0.9]), np.array([1, 1, 0, 0])),  # inverted
                 (np.array([0.5, 0.5]), np.array([0, 1]))]
        worst = max(abs(Mx.eer(Mx.ScoreSet(s, y))[0] - float(oracle_eer(s, y))) for s, y in sets)
        hand = Mx.eer(Mx.ScoreSet([0.9, 0.8, 0.3, 0.7, 0.2, 0.1], [1, 1, 1, 0, 0, 0]))[0]
        elapsed = time.perf_counter() - t0
        print(f"sets={len(sets)} worst={worst:.3g} hand={hand!r} seconds={elapsed:.2f}")
        assert worst <= 1e-12 and abs(hand - 1 / 3) <= 1e-12 and elapsed < 10


def test_multitask_objective_structure(toy_build):
    with criterion("multi-task objective: lambda=1 equals binary-only for 10 steps, gradient composition, "
                   "head isolation"):
        split = D.split_manifest(toy_build[1], seed=0)
        base = T.TrainConfig(model=SMALL, batch_size=4, seed=5)
        a = trajectory(split, base.with_(lam=1.0))
        b = trajectory(split, base.with_(lam=1.0, binary_only=True))
        assert len(a) == len(b) == 10
        assert all(np.array_equal(sa[n], sb[n]) for sa, sb in zip(a, b) for n in sa)
        cfg = M.reduced_config()
        worst = max(composition_error(loss_part_grads(cfg, lam, seed), lam) for lam in (0.25, 0.5, 0.9)
                    for seed in (0, 1))
        print(f"composition worst relative error {worst:.3g}")
        assert worst < 1e-5
        g = loss_part_grads(cfg, 0.5)
        for n, grp in g["groups"].items():
            if grp == "vocoder":
                assert not np.any(g["binary"][n])
            if grp == "binary":
                assert not np.any(g["multiclass"][n])


@pytest.mark.slow
def test_toy_end_to_end(toy_experiment):
    with criterion("toy end-to-end: held-out EER <= 10% and multiclass accuracy >= 60% for two seeds, "
                   "<= 30 min training"):
        workdir, results = toy_experiment
        exp = E.ToyExperiment()
        m = D.Manifest.load(workdir / "dataset" / "split.tsv")
        assert len(m.origins()) >= 20 and m.num_classes == 3
        assert [len({r.origin_id for r in m.split(s)}) for s in D.SPLITS] == [24, 8, 8]
        cfg = exp.train_config(0)
        assert (cfg.lam, cfg.lr, cfg.batch_size) == (0.5, 1e-4, 32)
        for seed, r in sorted(results.items()):
            print(f"seed {seed}: clean EER {r.clean_eer:.4f}, accuracy {r.clean_accuracy:.4f}, "
                  f"train {r.train_seconds:.0f} s, {r.steps} steps")
        for r in results.values():
            assert r.train_seconds <= 1800
            assert r.clean_eer <= 0.10
            assert r.clean_accuracy >= 0.60


@pytest.mark.slow
def test_robustness_direction(toy_experiment):
    with criterion("robustness: augmented EER >= clean EER and <= 25%, branch frequencies, SNR within 0.01 dB"):
        _, results = toy_experiment
        for seed, r in sorted(results.items()):
            print(f"seed {seed}: clean {r.clean_eer:.4f} augmented {r.augmented_eer:.4f}")
            assert r.clean_eer <= r.augmented_eer <= 0.25
        cfg = A.AugmentConfig()
        counts = dict.fromkeys(A.BRANCHES, 0)
        for i in range(10_000):
            counts[A.draw_tag(cfg, A.sample_rng(0, i), 24000).branch] += 1
        print(counts)
        for b, p in zip(A.BRANCHES, cfg.branch_probs):
            assert abs(counts[b] / 10_000 - p) <= 0.02
        w = D.synth_utterance(4, seconds=1.5)
        for snr in (8.0, 10.0, 20.0):
            noisy = A.AugmentConfig(snr_values_db=(snr,), branch_probs=(0, 0, 1))
            for i in range(5):
                out, _ = A.apply_augment(w, noisy, A.sample_rng(1, i))
                added = out.samples - w.samples
                achieved = 10 * np.log10(np.sum(w.samples**2) / np.sum(added**2))
                assert abs(achieved - snr) <= 0.01


@pytest.mark.slow
def test_self_vocoding_artifacts(toy_experiment, tmp_path):
    with criterion("self-vocoding artifacts: mel residual positive and > 10% apart for every surrogate pair"):
        workdir, _ = toy_experiment
        m, _ = D.build_selfvocoded(workdir / "corpus", D.surrogate_plugins(list(D.SURROGATES)), dsp.MelConfig(),
                                   tmp_path / "all")
        res = mel_residuals(m)
        print({k: round(v, 4) for k, v in res.items()})
        names = sorted(res)
        assert all(res[n] > 0 for n in names)
        for i, a in enumerate(names):
            for b in names[i + 1 :]:
                assert abs(res[a] - res[b]) / max(res[a], res[b]) > 0.10


def test_determinism(toy_build, tmp_path):
    with criterion("determinism: byte-identical manifests, checkpoints and score files"):
        root, m, _ = toy_build
        for name in ("a", "b"):
            built, _ = D.build_selfvocoded(root / "corpus", D.surrogate_plugins(["GL-A", "GL-B"]), dsp.MelConfig(),
                                           tmp_path / name, seed=2)
            D.split_manifest(built, seed=2).save(tmp_path / name / "split.tsv")
        for f in ("manifest.tsv", "split.tsv"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
        split = D.split_manifest(m, seed=0)
        cfg = T.TrainConfig(model=SMALL, batch_size=4, epochs=2, seed=1, augment=A.AugmentConfig(seed=1))
        for name in ("r1", "r2"):
            ck, _ = T.train(split, cfg, tmp_path / name)
            T.evaluate(ck, split, "test", A.AugmentConfig(seed=3), seed=3, out_dir=tmp_path / name)
        for f in ("best.ckpt", "scores.tsv", "report.txt"):
            assert (tmp_path / "r1" / f).read_bytes() == (tmp_path / "r2" / f).read_bytes()


def test_dsp_suite():
    with criterion("DSP suite: resample lengths and band-limiting, Parseval, mel homogeneity, PCM bounds, < 1 min"):
        t0 = time.perf_counter()
        rng = np.random.default_rng(0)
        for n in (1, 999, 24000, 24001):
            w = dsp.Waveform(rng.uniform(-0.5, 0.5, n), 24000)
            for rate in (8000, 16000, 22050, 24000, 32000, 44100):
                assert abs(len(dsp.resample(w, rate)) - n * rate / 24000) <= 1
        t = np.arange(24000) / 24000
        high = dsp.Waveform(0.5 * np.sin(2 * np.pi * 5000 * t), 24000)
        assert dsp.resample(dsp.resample(high, 8000), 24000).rms() < 0.05 * high.rms()
        low = dsp.Waveform(0.5 * np.sin(2 * np.pi * 440 * t), 24000)
        back = dsp.resample(dsp.resample(low, 44100), 24000)
        assert np.corrcoef(back.samples[200:-200], low.samples[200:-200])[0, 1] >= 0.999

        cfg = dsp.StftConfig()
        x = D.synth_utterance(5, seconds=0.5).samples
        spec = dsp.stft(x, cfg)
        xp = np.pad(x, cfg.fft_size // 2, mode="reflect")
        win = 0.5 * (1 - np.cos(2 * np.pi * np.arange(cfg.window_length) / cfg.window_length))
        energy = np.array([np.sum((xp[i * cfg.hop_length : i * cfg.hop_length + cfg.fft_size] * win) ** 2)
                           for i in range(spec.shape[1])])
        p = np.abs(spec) ** 2
        full = (p[0] + p[-1] + 2 * p[1:-1].sum(axis=0)) / cfg.fft_size
        assert np.max(np.abs(full - energy) / energy) < 1e-6

        mel_cfg = dsp.MelConfig()
        w = dsp.Waveform(x, 24000)
        a = dsp.mel_spectrogram(w, mel_cfg).values
        for alpha in (0.1, 2.0, 3.7):
            b = dsp.mel_spectrogram(dsp.Waveform(alpha * x, 24000), mel_cfg).values
            mask = a > 1e-12
            assert np.max(np.abs(b[mask] - alpha**2 * a[mask]) / (alpha**2 * a[mask])) < 1e-6

        v = rng.uniform(-1, 1, 5000)
        q = dsp.quantize_pcm16(v)
        assert np.max(np.abs(q / 32768.0 - v)) <= 1 / 32768
        assert dsp.quantize_pcm16(np.array([1.0, -1.0, 2.0]))[:3].tolist() == [32767, -32768, 32767]
        elapsed = time.perf_counter() - t0
        print(f"seconds={elapsed:.2f}")
        assert elapsed < 60
