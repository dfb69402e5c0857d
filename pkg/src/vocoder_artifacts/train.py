"""Multi-task training and evaluation loops.

Each step runs the shared encoder once, feeds both heads, combines
``lam * L_b + (1 - lam) * L_m``, back-propagates once and takes a single
Adam step over the encoder, binary and vocoder parameters together.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import metrics
from . import model as M
from . import ndiff as nd
from .augment import AugmentConfig
from .checkpoint import Checkpoint, CheckpointError, save_checkpoint
from .dataset import AudioCache, Manifest, make_batches

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    """Raised when a loss or activation becomes NaN/Inf."""


@dataclass(frozen=True)
class TrainConfig:
    model: M.ModelConfig = field(default_factory=M.ModelConfig)
    lr: float = 1e-4
    batch_size: int = 32
    epochs: int = 30
    lam: float = 0.5
    seed: int = 0
    augment: AugmentConfig | None = None
    include_real_in_lm: bool = True
    patience: int = 10
    binary_only: bool = False
    max_steps: int | None = None
    eval_batch_size: int = 64

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1 or self.eval_batch_size < 1:
            raise ValueError("batch sizes must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.model.lam != self.lam:  # keep the stored model config in step with the objective
            object.__setattr__(self, "model", self.model.with_(lam=self.lam))

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k not in ("model", "augment")}
        d["model"] = self.model.to_dict()
        d["augment"] = None if self.augment is None else self.augment.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        if "model" in d:
            model = dict(d["model"])
            if "lam" not in model and "lam" in d:
                model["lam"] = d["lam"]
            d["model"] = M.ModelConfig.from_dict(model)
        if d.get("augment") is not None:
            d["augment"] = AugmentConfig.from_dict(d["augment"])
        return cls(**d)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def with_(self, **kw) -> "TrainConfig":
        if "lam" in kw:
            kw["model"] = kw.get("model", self.model).with_(lam=kw["lam"])
        return replace(self, **kw)


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)
    best_epoch: int | None = None
    best_dev_eer: float | None = None
    best_checkpoint: str | None = None
    steps: int = 0

    def to_jsonl(self) -> str:
        return "".join(json.dumps(e, sort_keys=True) + "\n" for e in self.epochs)

    def write(self, path) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")


def trainable_names(params: nd.ParamStore, binary_only: bool) -> list:
    if binary_only:
        return params.names("encoder") + params.names("binary")
    return params.names()


def batch_loss(params, cfg: TrainConfig, x, y, c, class_batch=None):
    """Training-mode loss for one batch; returns ``(total, L_b, L_m)`` tensors.

    ``class_batch`` supplies a separate (x, c) batch for the vocoder loss
    when the class-labelled set differs from the binary-labelled one.
    """
    e = M.forward_embed(x, params, cfg.model, train=True)
    b = M.forward_binary(e, params)
    if cfg.binary_only:
        lb = nd.mean(nd.binary_cross_entropy_with_logit(b, y))
        return lb, lb, None
    if class_batch is None:
        parts = M.multitask_loss(b, M.forward_vocoder(e, params), y, c, cfg.lam, cfg.include_real_in_lm)
        return parts.total, parts.binary, parts.multiclass
    xc, cc = class_batch
    lb = nd.mean(nd.binary_cross_entropy_with_logit(b, y))
    yc = (cc > 0).astype(np.int64)
    em = M.forward_embed(xc, params, cfg.model, train=True)
    lm = M.multitask_loss(M.forward_binary(em, params), M.forward_vocoder(em, params), yc, cc,
                          0.0, cfg.include_real_in_lm).multiclass
    dt = lb.dtype
    total = nd.add(nd.mul(lb, np.asarray(cfg.lam, dt)), nd.mul(lm, np.asarray(1 - cfg.lam, dt)))
    return total, lb, lm


def score_split(params, model_cfg: M.ModelConfig, manifest: Manifest, split: str, batch_size: int = 64,
                augment: AugmentConfig | None = None, seed: int = 0, cache: AudioCache | None = None
                ) -> metrics.ScoreSet:
    """Eval-mode scores with centre crops; score = binary logit."""
    ids, scores, ys, cs, preds = [], [], [], [], []
    dtype = np.dtype(model_cfg.dtype)
    for batch in make_batches(manifest, split, batch_size, seed, 0, model_cfg.input_length, augment=augment,
                              train=False, cache=cache, dtype=dtype):
        e = M.forward_embed(batch.x, params, model_cfg, train=False)
        ids += batch.ids
        scores.append(M.forward_binary(e, params).data.astype(np.float64))
        preds.append(metrics.predict_classes(M.forward_vocoder(e, params).data))
        ys.append(batch.y)
        cs.append(batch.c)
    return metrics.ScoreSet(np.concatenate(scores), np.concatenate(ys), tuple(ids),
                            np.concatenate(cs), np.concatenate(preds))


def _meta(cfg: TrainConfig, manifest: Manifest, epoch: int, dev_eer: float) -> dict:
    return {"train_config": cfg.to_dict(), "class_names": manifest.class_names(),
            "epoch": epoch, "dev_eer": dev_eer}


def train(manifest: Manifest, cfg: TrainConfig, out_dir=None, class_manifest: Manifest | None = None,
          on_step: Callable | None = None, progress: Callable | None = None):
    """Train from scratch; returns ``(best_checkpoint, report)``.

    ``on_step(step, params)`` is called after every update (tests use it to
    compare trajectories). With ``out_dir`` the best checkpoint is written
    to ``best.ckpt`` and the epoch log to ``train_report.jsonl``.
    """
    for split in ("train", "dev"):
        if not manifest.split(split):
            raise ValueError(f"manifest has an empty {split!r} split")
    if cfg.model.num_classes != manifest.num_classes:
        raise ValueError(f"model num_classes={cfg.model.num_classes} but the manifest has "
                         f"{manifest.num_classes} classes")
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    dtype = np.dtype(cfg.model.dtype)
    params = M.init_params(cfg.model, cfg.seed)
    adam = nd.AdamState(lr=cfg.lr)
    names = trainable_names(params, cfg.binary_only)
    cache = AudioCache(manifest)
    class_cache = AudioCache(class_manifest) if class_manifest is not None else None
    report = TrainReport()
    best, best_key, stale = None, None, 0
    step = 0
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        sums = np.zeros(3)
        count = 0
        class_iter = None
        if class_manifest is not None:
            class_iter = make_batches(class_manifest, "train", cfg.batch_size, cfg.seed + 1, epoch,
                                      cfg.model.input_length, cfg.augment, True, class_cache, dtype)
        for batch in make_batches(manifest, "train", cfg.batch_size, cfg.seed, epoch, cfg.model.input_length,
                                  cfg.augment, True, cache, dtype):
            class_batch = None
            if class_iter is not None:
                cb = next(class_iter, None)
                if cb is None:
                    class_iter = make_batches(class_manifest, "train", cfg.batch_size, cfg.seed + 1, epoch + 10**6,
                                              cfg.model.input_length, cfg.augment, True, class_cache, dtype)
                    cb = next(class_iter)
                class_batch = (cb.x, cb.c)
            try:
                total, lb, lm = batch_loss(params, cfg, batch.x, batch.y, batch.c, class_batch)
                lb_v = lb.item()
                lm_v = lm.item() if lm is not None else float("nan")
                if not np.isfinite(total.item()):
                    raise nd.NonFiniteError("loss is not finite")
                params.zero_grad()
                total.backward()
            except nd.NonFiniteError as exc:
                raise TrainingDiverged(
                    f"non-finite value at epoch {epoch} step {step} (lam={cfg.lam}): {exc}; "
                    f"batch ids: {', '.join(batch.ids)}") from exc
            nd.adam_step(params, adam, names)
            for n in names:
                if not np.all(np.isfinite(params[n].data)):
                    raise TrainingDiverged(f"parameter {n} became non-finite at step {step}; "
                                           f"L_b={lb_v}, L_m={lm_v}, batch ids: {', '.join(batch.ids)}")
            step += 1
            sums += (total.item(), lb_v, lm_v)
            count += 1
            if on_step is not None:
                on_step(step, params)
            if cfg.max_steps is not None and step >= cfg.max_steps:
                break
        dev = score_split(params, cfg.model, manifest, "dev", cfg.eval_batch_size, None, cfg.seed, cache)
        dev_eer, _ = metrics.eer(dev)
        dev_acc = metrics.confusion(dev.pred_c, dev.c, cfg.model.num_classes).accuracy()
        record = {"epoch": epoch, "steps": step, "loss": float(sums[0] / count), "loss_b": float(sums[1] / count),
                  "loss_m": None if cfg.binary_only else float(sums[2] / count), "dev_eer": dev_eer,
                  "dev_acc": dev_acc, "wall_s": round(time.perf_counter() - t0, 3)}
        report.epochs.append(record)
        if progress is not None:
            progress(record)
        key = (dev_eer, -dev_acc)
        if best_key is None or key < best_key:
            best_key, stale = key, 0
            best = Checkpoint(cfg.model, _copy_store(params), _copy_adam(adam), _meta(cfg, manifest, epoch, dev_eer))
            report.best_epoch, report.best_dev_eer = epoch, dev_eer
            if out_dir is not None:
                save_checkpoint(best, out_dir / "best.ckpt")
                report.best_checkpoint = str(out_dir / "best.ckpt")
        else:
            stale += 1
        if out_dir is not None:
            report.write(out_dir / "train_report.jsonl")
        if stale >= cfg.patience or (cfg.max_steps is not None and step >= cfg.max_steps):
            break
    report.steps = step
    return best, report


def _copy_store(params: nd.ParamStore) -> nd.ParamStore:
    out = nd.ParamStore()
    for n, t in params.params.items():
        out.add(n, t.data.copy(), params.groups[n])
    for n, b in params.buffers.items():
        out.add_buffer(n, b.copy())
    return out


def _copy_adam(a: nd.AdamState) -> nd.AdamState:
    return nd.AdamState(a.lr, a.beta1, a.beta2, a.eps, a.step,
                        {k: v.copy() for k, v in a.m.items()}, {k: v.copy() for k, v in a.v.items()})


def evaluate(ck: Checkpoint, manifest: Manifest, split: str = "test", augment: AugmentConfig | None = None,
             seed: int = 0, out_dir=None, batch_size: int = 64):
    """Score ``split`` and build the metrics report; returns ``(report, scores)``.

    With ``out_dir`` writes ``scores.tsv`` and ``report.txt``.
    """
    if ck.config.num_classes != manifest.num_classes:
        raise CheckpointError(f"checkpoint expects {ck.config.num_classes} classes, "
                              f"manifest has {manifest.num_classes}")
    names = ck.meta.get("class_names")
    if names is not None and list(names) != manifest.class_names():
        raise CheckpointError(f"checkpoint classes {names} differ from manifest classes {manifest.class_names()}")
    degraded = augment is not None or manifest.notes.get("degraded") == "true"
    scores = score_split(ck.params, ck.config, manifest, split, batch_size, augment, seed)
    rep = metrics.report(scores, ck.config.num_classes, manifest.class_names(), degraded)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics.write_scores(scores, out_dir / "scores.tsv")
        (out_dir / "report.txt").write_text(rep.to_text(), encoding="utf-8")
    return rep, scores
