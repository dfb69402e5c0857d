"""``vocart``: command-line front end for the detection pipeline.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
Every command first prints an ``[effective config]`` block with all
defaults resolved, so a run can be repeated from its own log.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import dsp, gradcheck, metrics
from . import dataset as D
from . import ndiff as nd

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _lambda(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"lambda must lie in [0, 1], got {value}")
    return value


def _ratios(text: str):
    try:
        parts = tuple(float(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad ratios {text!r}") from None
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected three comma-separated ratios")
    return parts


def _print_config(cfg: dict) -> None:
    print("[effective config]")
    print(json.dumps(cfg, indent=1, sort_keys=True, default=str))
    print("[/effective config]", flush=True)


def _read_json(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config file {p} not found")
    return json.loads(p.read_text(encoding="utf-8"))


def _mel_config(spec: str) -> dsp.MelConfig:
    return dsp.MelConfig() if spec == "default" else dsp.MelConfig.from_dict(_read_json(spec))


def _augment_config(spec: str | None, seed: int):
    from .augment import AugmentConfig

    if spec is None:
        return None
    d = {} if spec == "default" else _read_json(spec)
    d.setdefault("seed", seed)
    return AugmentConfig.from_dict(d)


# ---------------------------------------------------------------- commands


def cmd_make_corpus(a):
    _print_config({"command": "make-corpus", "out": a.out, "count": a.count, "seed": a.seed,
                   "sample_rate": a.sample_rate})
    paths = D.make_toy_corpus(a.out, a.count, a.seed, a.sample_rate)
    print(f"wrote {len(paths)} utterances to {a.out}")


def cmd_build_dataset(a):
    names = [n.strip() for n in a.vocoders.split(",") if n.strip()]
    plugins = D.surrogate_plugins(names)
    mel = _mel_config(a.mel)
    _print_config({"command": "build-dataset", "corpus": a.corpus, "out": a.out, "vocoders": names,
                   "mel": mel.to_dict(), "log_mel": a.log_mel, "seed": a.seed})
    manifest, report = D.build_selfvocoded_safe(a.corpus, plugins, mel, a.out, log_mel=a.log_mel, seed=a.seed)
    for s in report.skipped:
        print(f"skipped {s['path']}: {s['reason']}")
    print(", ".join(f"{k}: {v}" for k, v in manifest.class_counts().items()))
    print(f"manifest: {Path(a.out) / 'manifest.tsv'}")


def cmd_split(a):
    _print_config({"command": "split", "manifest": a.manifest, "out": a.out, "ratios": list(a.ratios),
                   "seed": a.seed})
    m = D.Manifest.load(a.manifest)
    out = D.split_manifest(m, a.ratios, a.seed)
    out_path = Path(a.out)
    # paths stay valid when the split manifest lives beside the audio
    if out_path.resolve().parent != Path(a.manifest).resolve().parent:
        out.records = [D.SampleRecord(r.id, str(m.audio_path(r).resolve()), r.origin_id, r.y, r.c, r.split,
                                      r.duration, r.sample_rate) for r in out.records]
    out.save(out_path)
    for split in D.SPLITS:
        counts = out.class_counts(split)
        print(f"{split}: " + ", ".join(f"{k}: {v}" for k, v in counts.items()))


def cmd_train(a):
    from .train import TrainConfig, train

    cfg = TrainConfig.load(a.config) if a.config else TrainConfig()
    overrides = {k: v for k, v in (("lam", a.lam), ("seed", a.seed), ("epochs", a.epochs),
                                   ("max_steps", a.max_steps)) if v is not None}
    if a.binary_only:
        overrides["binary_only"] = True
    cfg = cfg.with_(**overrides)
    m = D.Manifest.load(a.manifest)
    if cfg.model.num_classes != m.num_classes:
        cfg = cfg.with_(model=cfg.model.with_(num_classes=m.num_classes))
    _print_config({"command": "train", "manifest": a.manifest, "out": a.out,
                   "class_manifest": a.class_manifest, **cfg.to_dict()})
    if cfg.lam == 1.0 and not cfg.binary_only:
        print("notice: lambda = 1.0 disables vocoder-identification supervision (vocoder head receives no gradient)")
    class_m = D.Manifest.load(a.class_manifest) if a.class_manifest else None
    ck, report = train(m, cfg, a.out, class_manifest=class_m,
                       progress=lambda r: print(json.dumps(r, sort_keys=True), flush=True))
    print(f"best epoch {report.best_epoch}: dev EER {metrics.round_sig(100 * report.best_dev_eer)}%")
    print(f"checkpoint: {report.best_checkpoint}")


def cmd_eval(a):
    from .checkpoint import load_checkpoint
    from .train import evaluate

    aug = _augment_config(a.augment, a.seed)
    _print_config({"command": "eval", "checkpoint": a.checkpoint, "manifest": a.manifest, "split": a.split,
                   "augment": None if aug is None else aug.to_dict(), "seed": a.seed, "out": a.out})
    ck = load_checkpoint(a.checkpoint)
    m = D.Manifest.load(a.manifest)
    rep, _ = evaluate(ck, m, a.split, aug, a.seed, a.out)
    print(rep.to_text(), end="")


def cmd_score(a):
    from .checkpoint import load_checkpoint
    from . import model as M

    _print_config({"command": "score", "checkpoint": a.checkpoint, "inputs": a.inputs, "out": a.out})
    ck = load_checkpoint(a.checkpoint)
    names = ck.meta.get("class_names") or [str(i) for i in range(ck.config.num_classes)]
    paths = []
    for p in map(Path, a.inputs):
        paths += sorted(p.glob("*.wav")) if p.is_dir() else [p]
    if not paths:
        raise FileNotFoundError("no input WAV files")
    lines = []
    for p in paths:
        w = dsp.load_wav(p)
        if w.sample_rate != ck.config.sample_rate:
            w = dsp.resample(w, ck.config.sample_rate)
        x = D.crop_or_pad(w.samples, ck.config.input_length, train=False)[None].astype(ck.config.dtype)
        e = M.forward_embed(x, ck.params, ck.config, train=False)
        score = float(M.forward_binary(e, ck.params).data[0])
        pred = int(metrics.predict_classes(M.forward_vocoder(e, ck.params).data)[0])
        lines.append(f"{p}\t{score!r}\t{names[pred]}")
    text = "\n".join(lines) + "\n"
    if a.out:
        Path(a.out).write_text(text, encoding="utf-8")
    print(text, end="")


def cmd_augment(a):
    from .augment import augment_manifest

    aug = _augment_config(a.config or "default", a.seed)
    _print_config({"command": "augment", "manifest": a.manifest, "split": a.split, "out": a.out,
                   "augment": aug.to_dict()})
    m = D.Manifest.load(a.manifest)
    out = augment_manifest(m, a.split, aug, a.out)
    print(f"wrote {len(out.records)} degraded samples to {a.out}")


def cmd_metrics(a):
    _print_config({"command": "metrics", "scores": a.scores, "det": a.det, "num_classes": a.num_classes})
    s = metrics.read_scores(a.scores)
    print(metrics.report(s, a.num_classes).to_text(), end="")
    if a.det:
        t, far, frr = metrics.det_points(s)
        rows = [f"{float(ti)!r}\t{float(fa)!r}\t{float(fr)!r}" for ti, fa, fr in zip(t, far, frr)]
        Path(a.det).write_text("threshold\tfar\tfrr\n" + "\n".join(rows) + "\n", encoding="utf-8")


def cmd_gradcheck(a):
    _print_config({"command": "gradcheck", "size": a.size, "seeds": a.seeds, "model": not a.no_model,
                   "h": gradcheck.H})
    results = gradcheck.run_all(range(a.seeds), include_model=not a.no_model)
    print(gradcheck.format_table(results))
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"gradient check FAILED for: {', '.join(failed)}")
        return EXIT_NUMERIC
    print("all gradient checks passed")
    return EXIT_OK


def _selfchecks():
    def eer_example():
        e, _ = metrics.eer(metrics.ScoreSet([0.9, 0.8, 0.3, 0.7, 0.2, 0.1], [1, 1, 1, 0, 0, 0]))
        return abs(e - 1 / 3) < 1e-12

    def resample_length():
        w = dsp.Waveform(np.random.default_rng(0).normal(size=24000) * 0.1, 24000)
        return all(len(dsp.resample(w, r)) == round(24000 * r / 24000) for r in (8000, 16000, 22050, 44100))

    def stft_roundtrip():
        x = np.random.default_rng(1).normal(size=5000)
        cfg = dsp.StftConfig()
        return np.max(np.abs(dsp.istft(dsp.stft(x, cfg), cfg, x.size) - x)) < 1e-9

    def mel_homogeneity():
        w = dsp.Waveform(np.random.default_rng(2).normal(size=8000) * 0.1, 24000)
        cfg = dsp.MelConfig()
        a = dsp.mel_spectrogram(w, cfg).values
        b = dsp.mel_spectrogram(dsp.Waveform(2 * w.samples, 24000), cfg).values
        return np.allclose(b, 4 * a, rtol=1e-9, atol=1e-12)

    def pcm_roundtrip():
        x = np.random.default_rng(3).uniform(-1, 1, 1000)
        return np.max(np.abs(dsp.quantize_pcm16(x) / 32768.0 - x)) <= 0.5 / 32768 + 1e-12

    def grads():
        return all(gradcheck.check_op(n, range(2)).passed for n in gradcheck.OP_CASES)

    return [("eer hand example", eer_example), ("resample lengths", resample_length),
            ("stft/istft round trip", stft_roundtrip), ("mel homogeneity", mel_homogeneity),
            ("pcm16 round trip", pcm_roundtrip), ("op gradients", grads)]


def cmd_selfcheck(a):
    _print_config({"command": "selfcheck"})
    ok = True
    for name, fn in _selfchecks():
        passed = bool(fn())
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'}  {name}")
    return EXIT_OK if ok else EXIT_NUMERIC


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vocart", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("make-corpus", help="write a speech-like toy corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, default=24)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--sample-rate", type=int, default=24000)
    s.set_defaults(fn=cmd_make_corpus)

    s = sub.add_parser("build-dataset", help="self-vocode a corpus through surrogate vocoders")
    s.add_argument("--corpus", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--vocoders", required=True, help=f"comma list from {sorted(D.SURROGATES)}")
    s.add_argument("--mel", default="default", help="'default' or a JSON mel config file")
    s.add_argument("--log-mel", action="store_true", help="hand vocoders the log-mel instead of linear energy")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_build_dataset)

    s = sub.add_parser("split", help="assign train/dev/test per origin")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--ratios", type=_ratios, default=(0.6, 0.2, 0.2))
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_split)

    s = sub.add_parser("train", help="multi-task training")
    s.add_argument("--manifest", required=True)
    s.add_argument("--config", help="JSON train config (defaults if omitted)")
    s.add_argument("--out", required=True)
    s.add_argument("--lambda", dest="lam", type=_lambda)
    s.add_argument("--seed", type=int)
    s.add_argument("--epochs", type=int)
    s.add_argument("--max-steps", type=int)
    s.add_argument("--binary-only", action="store_true", help="drop the vocoder loss and freeze its head")
    s.add_argument("--class-manifest", help="separate class-labelled training set for the vocoder loss")
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("eval", help="score a split and report EER and confusion")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--split", default="test", choices=D.SPLITS)
    s.add_argument("--augment", help="'default' or a JSON augment config; degrades input before scoring")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("score", help="score WAV files (id, score, predicted class)")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--inputs", nargs="+", required=True)
    s.add_argument("--out")
    s.set_defaults(fn=cmd_score)

    s = sub.add_parser("augment", help="write a degraded copy of a split")
    s.add_argument("--manifest", required=True)
    s.add_argument("--split", default="test", choices=D.SPLITS)
    s.add_argument("--out", required=True)
    s.add_argument("--config", help="JSON augment config (defaults if omitted)")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_augment)

    s = sub.add_parser("metrics", help="EER/DET/confusion from a score file")
    s.add_argument("--scores", required=True)
    s.add_argument("--det", help="write DET points here")
    s.add_argument("--num-classes", type=int)
    s.set_defaults(fn=cmd_metrics)

    s = sub.add_parser("gradcheck", help="finite-difference check of every op")
    s.add_argument("--size", choices=("reduced",), default="reduced")
    s.add_argument("--seeds", type=int, default=5)
    s.add_argument("--no-model", action="store_true")
    s.set_defaults(fn=cmd_gradcheck)

    s = sub.add_parser("selfcheck", help="quick health checks")
    s.set_defaults(fn=cmd_selfcheck)
    return p


def main(argv=None) -> int:
    from .checkpoint import CheckpointError
    from .train import TrainingDiverged

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        code = args.fn(args)
    except (TrainingDiverged, nd.NonFiniteError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FileNotFoundError, CheckpointError, dsp.WavFormatError, ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK if code is None else code


if __name__ == "__main__":
    sys.exit(main())
