"""Detection metrics: EER, DET points, confusion matrices and reports.

Orientation is fixed: a higher score means "synthetic" (y=1). A sample
whose score equals the threshold counts as predicted synthetic. Scores
are never flipped, so an inverted classifier can have an EER above 0.5.
"""

from __future__ import annotations

from dataclasses import dataclass
from decimal import ROUND_HALF_EVEN, Decimal
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class ScoreSet:
    scores: np.ndarray
    y: np.ndarray
    ids: tuple | None = None
    c: np.ndarray | None = None
    pred_c: np.ndarray | None = None

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        y = np.asarray(self.y).reshape(-1).astype(np.int64)
        if s.size == 0:
            raise ValueError("ScoreSet is empty")
        if s.shape != y.shape:
            raise ValueError("scores and labels differ in length")
        if not np.all(np.isin(y, (0, 1))):
            raise ValueError("binary labels must be 0 or 1")
        if not np.all(np.isfinite(s)):
            raise ValueError("scores must be finite")
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "y", y)
        for name in ("c", "pred_c"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v).reshape(-1).astype(np.int64)
                if v.shape != y.shape:
                    raise ValueError(f"{name} differs in length from the labels")
                object.__setattr__(self, name, v)
        if self.ids is not None:
            object.__setattr__(self, "ids", tuple(self.ids))
            if len(self.ids) != y.size:
                raise ValueError("ids differ in length from the labels")

    def __len__(self):
        return self.y.size


def _rates(s: ScoreSet):
    """FAR/FRR at -inf, every distinct score (ascending) and +inf."""
    neg = np.sort(s.scores[s.y == 0])
    pos = np.sort(s.scores[s.y == 1])
    if neg.size == 0 or pos.size == 0:
        raise ValueError("EER needs both bona fide (y=0) and synthetic (y=1) samples")
    t = np.unique(s.scores)
    far = (neg.size - np.searchsorted(neg, t, side="left")) / neg.size
    frr = np.searchsorted(pos, t, side="left") / pos.size
    thresholds = np.concatenate([[-np.inf], t, [np.inf]])
    return thresholds, np.concatenate([[1.0], far, [0.0]]), np.concatenate([[0.0], frr, [1.0]])


def det_points(s: ScoreSet):
    """``(thresholds, far, frr)`` along increasing threshold, endpoints included."""
    return _rates(s)


def eer(s: ScoreSet):
    """Equal error rate and the threshold where FAR and FRR cross.

    The crossing is located at the first threshold where FAR - FRR stops
    being positive and linearly interpolated with the preceding point.
    """
    t, far, frr = _rates(s)
    d = far - frr
    i = int(np.argmax(d <= 0))  # d[0] = 1 > 0 and d[-1] = -1, so 1 <= i
    if d[i] == 0:
        return float(far[i]), float(t[i])
    a = d[i - 1] / (d[i - 1] - d[i])
    value = far[i - 1] + a * (far[i] - far[i - 1])
    if np.isinf(t[i - 1]):
        thr = t[i]
    elif np.isinf(t[i]):
        thr = t[i - 1]
    else:
        thr = t[i - 1] + a * (t[i] - t[i - 1])
    return float(value), float(thr)


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    def accuracy(self) -> float:
        total = self.counts.sum()
        return float(np.trace(self.counts) / total) if total else 0.0

    def recall(self) -> np.ndarray:
        """Per-class recall; NaN for classes absent from the ground truth."""
        rows = self.counts.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(rows > 0, np.diag(self.counts) / rows, np.nan)


def confusion(preds, truth, num_classes: int) -> ConfusionMatrix:
    """Rows are ground truth, columns predictions."""
    preds = np.asarray(preds, dtype=np.int64).reshape(-1)
    truth = np.asarray(truth, dtype=np.int64).reshape(-1)
    if preds.shape != truth.shape:
        raise ValueError("preds and truth differ in length")
    for name, v in (("preds", preds), ("truth", truth)):
        if v.size and (v.min() < 0 or v.max() >= num_classes):
            raise ValueError(f"{name} has class indices outside [0, {num_classes})")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (truth, preds), 1)
    return ConfusionMatrix(counts)


def predict_classes(logits: np.ndarray) -> np.ndarray:
    """Argmax over classes; ties go to the lowest index."""
    return np.argmax(np.asarray(logits), axis=-1)


# ------------------------------------------------------------------ files


def write_scores(s: ScoreSet, path) -> None:
    """``id<TAB>score<TAB>y[<TAB>c<TAB>pred_c]`` per line; scores in repr form."""
    ids = s.ids or tuple(str(i) for i in range(len(s)))
    lines = []
    for i, sid in enumerate(ids):
        fields = [sid, repr(float(s.scores[i])), str(s.y[i])]
        if s.c is not None and s.pred_c is not None:
            fields += [str(s.c[i]), str(s.pred_c[i])]
        lines.append("\t".join(fields))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_scores(path) -> ScoreSet:
    ids, scores, ys, cs, ps = [], [], [], [], []
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) not in (3, 5):
            raise ValueError(f"{path}:{n}: expected 3 or 5 fields, got {len(parts)}")
        ids.append(parts[0])
        scores.append(float(parts[1]))
        ys.append(int(parts[2]))
        if len(parts) == 5:
            cs.append(int(parts[3]))
            ps.append(int(parts[4]))
    if cs and len(cs) != len(ids):
        raise ValueError(f"{path}: class columns present on some lines only")
    return ScoreSet(np.array(scores), np.array(ys), tuple(ids),
                    np.array(cs) if cs else None, np.array(ps) if ps else None)


# ----------------------------------------------------------------- report


def round_sig(x: float, digits: int = 4) -> str:
    """Round half-even to ``digits`` significant digits."""
    if x is None or not np.isfinite(x):
        return str(x)
    if x == 0:
        return "0"
    d = Decimal(repr(float(x)))
    q = Decimal(1).scaleb(d.adjusted() - digits + 1)
    return format(d.quantize(q, rounding=ROUND_HALF_EVEN).normalize(), "f")


@dataclass
class Report:
    eer: float
    threshold: float
    num_samples: int
    confusion: ConfusionMatrix | None = None
    class_names: list | None = None
    degraded: bool = False

    def values(self) -> dict:
        out = {"eer": self.eer, "threshold": self.threshold, "num_samples": self.num_samples,
               "degraded": self.degraded}
        if self.confusion is not None:
            out["accuracy"] = self.confusion.accuracy()
            names = self.class_names or [str(i) for i in range(self.confusion.num_classes)]
            for name, r in zip(names, self.confusion.recall()):
                out[f"recall.{name}"] = float(r)
        return out

    def to_text(self) -> str:
        lines = []
        if self.degraded:
            lines.append("[degraded] evaluated on augmented input")
        lines.append(f"EER: {round_sig(100 * self.eer)}% at threshold {round_sig(self.threshold)}"
                     f" over {self.num_samples} samples")
        if self.confusion is not None:
            names = self.class_names or [str(i) for i in range(self.confusion.num_classes)]
            width = max(8, max(len(n) for n in names) + 1)
            lines.append("confusion (rows truth, columns prediction):")
            lines.append(" " * width + "".join(f"{n:>{width}s}" for n in names))
            for name, row in zip(names, self.confusion.counts):
                lines.append(f"{name:<{width}s}" + "".join(f"{v:>{width}d}" for v in row))
            lines.append(f"multiclass accuracy: {round_sig(self.confusion.accuracy())}")
        lines.append("")
        lines.append("[metrics]")
        for k, v in self.values().items():
            if isinstance(v, bool):
                v = str(v).lower()
            elif isinstance(v, float):
                v = round_sig(v)
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"


def parse_report(text: str) -> dict:
    """Read back the key-value block of :meth:`Report.to_text`."""
    out, inside = {}, False
    for line in text.splitlines():
        if line.strip() == "[metrics]":
            inside = True
        elif inside and "=" in line:
            k, v = (p.strip() for p in line.split("=", 1))
            out[k] = v
    return out


def report(s: ScoreSet, num_classes: int | None = None, class_names=None, degraded=False) -> Report:
    e, thr = eer(s)
    cm = None
    if s.c is not None and s.pred_c is not None:
        k = num_classes or (len(class_names) if class_names else int(max(s.c.max(), s.pred_c.max())) + 1)
        cm = confusion(s.pred_c, s.c, k)
    return Report(e, thr, len(s), cm, list(class_names) if class_names else None, degraded)
