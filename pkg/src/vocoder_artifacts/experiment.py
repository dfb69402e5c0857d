"""Desk-scale end-to-end experiment on the bundled speech-like corpus.

Builds a self-vocoded dataset with two Griffin-Lim surrogate vocoders,
splits it per origin, trains the small detector and evaluates it on the
clean and the degraded test split.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import dataset as D
from . import dsp
from .augment import AugmentConfig
from .checkpoint import save_checkpoint
from .model import ModelConfig
from .train import TrainConfig, evaluate, train

TOY_MODEL = ModelConfig(input_length=12000, sinc_filters=20, sinc_kernel=129, resblock_channels=(16, 16, 32, 32),
                        gru_hidden=32, embedding_dim=32, num_classes=3)


@dataclass(frozen=True)
class ToyExperiment:
    utterances: int = 40
    corpus_seed: int = 0
    vocoders: tuple = ("GL-A", "GL-B")
    split_seed: int = 0
    epochs: int = 200
    patience: int = 60
    model: ModelConfig = field(default=TOY_MODEL)

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(model=self.model.with_(num_classes=1 + len(self.vocoders)), epochs=self.epochs,
                           seed=seed, patience=self.patience)


@dataclass
class ToyResult:
    seed: int
    clean_eer: float
    clean_accuracy: float
    synthetic_accuracy: float
    augmented_eer: float
    best_epoch: int
    steps: int
    train_seconds: float
    first_epoch_loss: float
    fourth_epoch_loss: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def prepare(workdir, exp: ToyExperiment = ToyExperiment()) -> D.Manifest:
    """Build (or reuse) the corpus, the self-vocoded set and its split manifest."""
    workdir = Path(workdir)
    split_path = workdir / "dataset" / "split.tsv"
    if split_path.exists():
        return D.Manifest.load(split_path)
    D.make_toy_corpus(workdir / "corpus", exp.utterances, exp.corpus_seed)
    m, _ = D.build_selfvocoded(workdir / "corpus", D.surrogate_plugins(exp.vocoders), dsp.MelConfig(),
                               workdir / "dataset", seed=exp.corpus_seed)
    m = D.split_manifest(m, (0.6, 0.2, 0.2), exp.split_seed)
    m.save(split_path)
    return m


def run(workdir, seed: int, exp: ToyExperiment = ToyExperiment(), progress=None) -> ToyResult:
    workdir = Path(workdir)
    m = prepare(workdir, exp)
    out = workdir / f"seed{seed}"
    t0 = time.perf_counter()
    ck, rep = train(m, exp.train_config(seed), out, progress=progress)
    seconds = time.perf_counter() - t0
    save_checkpoint(ck, out / "best.ckpt")
    clean, scores = evaluate(ck, m, "test", out_dir=out / "eval_clean")
    degraded, _ = evaluate(ck, m, "test", AugmentConfig(seed=seed), seed=seed, out_dir=out / "eval_augmented")
    synth = scores.y == 1
    result = ToyResult(
        seed=seed,
        clean_eer=clean.eer,
        clean_accuracy=clean.confusion.accuracy(),
        synthetic_accuracy=float(np.mean(scores.pred_c[synth] == scores.c[synth])),
        augmented_eer=degraded.eer,
        best_epoch=rep.best_epoch,
        steps=rep.steps,
        train_seconds=seconds,
        first_epoch_loss=rep.epochs[0]["loss"],
        fourth_epoch_loss=rep.epochs[min(3, len(rep.epochs) - 1)]["loss"],
    )
    (out / "result.json").write_text(result.to_json() + "\n", encoding="utf-8")
    return result
