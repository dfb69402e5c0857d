"""
Training the toy detector
=========================

Builds a 40-utterance self-vocoded set with two surrogate vocoders,
splits it 6:2:2 per origin and trains the small detector with the
multi-task loss (0.5 binary, 0.5 vocoder identification; Adam, lr 1e-4,
batch 32). Then it scores the clean test split and a degraded copy
(resampling round trips and crowd noise).

About six minutes per seed on one CPU core.

Run: ``python demos/train_toy_detector.py [workdir] [seed]``
"""

import sys
import tempfile
from pathlib import Path

from vocoder_artifacts import experiment as E

workdir = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="toy-"))
seed = int(sys.argv[2]) if len(sys.argv) > 2 else 0

exp = E.ToyExperiment()
print("model:", exp.model)


def show(rec):
    if rec["epoch"] % 10 == 0:
        print(f"epoch {rec['epoch']:3d}  loss {rec['loss']:.3f} (binary {rec['loss_b']:.3f}, "
              f"vocoder {rec['loss_m']:.3f})  dev EER {rec['dev_eer']:.3f}  dev acc {rec['dev_acc']:.3f}", flush=True)


result = E.run(workdir, seed, exp, progress=show)
print()
print(f"clean test EER      {100 * result.clean_eer:.2f}%")
print(f"degraded test EER   {100 * result.augmented_eer:.2f}%")
print(f"multiclass accuracy {100 * result.clean_accuracy:.1f}%")
print(f"best epoch {result.best_epoch}, {result.steps} steps, {result.train_seconds:.0f} s")
print((workdir / f"seed{seed}" / "eval_clean" / "report.txt").read_text())
