"""Self-vocoded dataset construction, manifests, splits and batching.

A manifest lists one real record plus one record per vocoder for every
source utterance. All copies of an utterance share ``origin_id`` and are
always assigned to the same split.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np
from scipy import signal as sps

from . import dsp

log = logging.getLogger(__name__)

MANIFEST_MAGIC = "#vocart-manifest"
MANIFEST_VERSION = 1
COLUMNS = ("id", "path", "origin_id", "y", "c", "split", "duration", "sample_rate")
SPLITS = ("train", "dev", "test")
UNASSIGNED = "-"
REAL_CLASS = "real"


@dataclass(frozen=True)
class SampleRecord:
    id: str
    path: str
    origin_id: str
    y: int
    c: int
    split: str
    duration: float
    sample_rate: int

    def __post_init__(self):
        if (self.y == 0) != (self.c == 0) or self.y not in (0, 1):
            raise ValueError(f"record {self.id}: inconsistent labels y={self.y} c={self.c}")
        if self.duration <= 0:
            raise ValueError(f"record {self.id}: duration must be positive")
        if self.split not in SPLITS + (UNASSIGNED,):
            raise ValueError(f"record {self.id}: unknown split {self.split!r}")

    def to_line(self) -> str:
        return "\t".join([self.id, self.path, self.origin_id, str(self.y), str(self.c),
                          self.split, f"{self.duration:.6f}", str(self.sample_rate)])

    @classmethod
    def from_line(cls, line: str) -> "SampleRecord":
        parts = line.rstrip("\n").split("\t")
        if len(parts) != len(COLUMNS):
            raise ValueError(f"manifest line has {len(parts)} fields, expected {len(COLUMNS)}: {line!r}")
        i, p, o, y, c, s, d, r = parts
        return cls(i, p, o, int(y), int(c), s, float(d), int(r))


@dataclass(frozen=True)
class VocoderClass:
    index: int
    name: str
    fingerprint: str


@dataclass
class Manifest:
    records: list
    classes: list
    notes: dict = field(default_factory=dict)
    root: Path | None = None

    def __post_init__(self):
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            raise ValueError("manifest ids are not unique")
        known = {k.index for k in self.classes}
        missing = {r.c for r in self.records} - known
        if missing:
            raise ValueError(f"records use classes missing from the class table: {sorted(missing)}")

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def class_names(self) -> list:
        return [k.name for k in sorted(self.classes, key=lambda k: k.index)]

    def split(self, name: str) -> list:
        return [r for r in self.records if r.split == name]

    def origins(self) -> list:
        return sorted({r.origin_id for r in self.records})

    def class_counts(self, split: str | None = None) -> dict:
        counts = {k.name: 0 for k in sorted(self.classes, key=lambda k: k.index)}
        names = dict((k.index, k.name) for k in self.classes)
        for r in self.records:
            if split is None or r.split == split:
                counts[names[r.c]] += 1
        return counts

    def audio_path(self, record: SampleRecord) -> Path:
        p = Path(record.path)
        return p if p.is_absolute() or self.root is None else self.root / p

    def to_text(self) -> str:
        lines = [f"{MANIFEST_MAGIC}\t{MANIFEST_VERSION}"]
        for k in sorted(self.classes, key=lambda k: k.index):
            lines.append(f"#class\t{k.index}\t{k.name}\t{k.fingerprint}")
        for key in sorted(self.notes):
            lines.append(f"#note\t{key}\t{self.notes[key]}")
        lines.append("\t".join(COLUMNS))
        lines.extend(r.to_line() for r in self.records)
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Manifest":
        path = Path(path)
        lines = path.read_text(encoding="utf-8").splitlines()
        if not lines or not lines[0].startswith(MANIFEST_MAGIC):
            raise ValueError(f"{path}: not a manifest file")
        version = int(lines[0].split("\t")[1])
        if version != MANIFEST_VERSION:
            raise ValueError(f"{path}: unsupported manifest version {version}")
        classes, notes, records = [], {}, []
        header_seen = False
        for line in lines[1:]:
            if not line:
                continue
            if line.startswith("#class\t"):
                _, idx, name, fp = line.split("\t", 3)
                classes.append(VocoderClass(int(idx), name, fp))
            elif line.startswith("#note\t"):
                _, key, value = line.split("\t", 2)
                notes[key] = value
            elif not header_seen:
                if tuple(line.split("\t")) != COLUMNS:
                    raise ValueError(f"{path}: unexpected column header {line!r}")
                header_seen = True
            else:
                records.append(SampleRecord.from_line(line))
        return cls(records, classes, notes, root=path.parent)

    def with_records(self, records) -> "Manifest":
        return Manifest(list(records), list(self.classes), dict(self.notes), self.root)


# ------------------------------------------------------------- vocoders


def _fingerprint(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


def stable_seed(*parts) -> int:
    """Deterministic 32-bit seed from arbitrary string-able parts."""
    h = hashlib.sha256("\x1f".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(h[:4], "little")


@dataclass(frozen=True)
class VocoderPlugin:
    """A mel-to-waveform inverter. ``invert(mel, seed)`` must be deterministic."""

    name: str
    invert: Callable
    fingerprint: str


@dataclass(frozen=True)
class GriffinLimSurrogate:
    """Griffin-Lim stand-in for a neural vocoder.

    The mel handed over by the builder may be re-binned to ``mel_bins``
    and quantized in the log domain before inversion, so that each
    configuration leaves its own signature.
    """

    iterations: int = 32
    mel_bins: int | None = None
    quantize_db: float | None = None

    def config(self) -> dict:
        return {"kind": "griffin_lim", "iterations": self.iterations,
                "mel_bins": self.mel_bins, "quantize_db": self.quantize_db}

    def __call__(self, mel: dsp.MelSpectrogram, seed: int = 0) -> dsp.Waveform:
        if mel.log:
            mel = dsp.MelSpectrogram(np.maximum(np.exp(mel.values) - dsp.LOG_FLOOR, 0.0), mel.config, False)
        if self.mel_bins is not None and self.mel_bins != mel.config.num_mel_bins:
            cfg = dsp.MelConfig(mel.config.sample_rate, self.mel_bins, mel.config.fmin, mel.config.fmax, mel.config.stft)
            mel = dsp.MelSpectrogram(dsp.mel_filterbank(cfg) @ dsp.mel_pseudo_inverse(mel), cfg, False)
        if self.quantize_db:
            db = 10.0 * np.log10(mel.values + dsp.LOG_FLOOR)
            db = np.round(db / self.quantize_db) * self.quantize_db
            mel = dsp.MelSpectrogram(np.maximum(10.0 ** (db / 10.0) - dsp.LOG_FLOOR, 0.0), mel.config, False)
        return dsp.griffin_lim_invert(mel, self.iterations, seed)

    def plugin(self, name: str) -> VocoderPlugin:
        return VocoderPlugin(name, self, _fingerprint(self.config()))


SURROGATES = {
    "GL-A": GriffinLimSurrogate(iterations=32),
    "GL-B": GriffinLimSurrogate(iterations=8, mel_bins=40),
    "GL-C": GriffinLimSurrogate(iterations=32, quantize_db=6.0),
}


def surrogate_plugins(names: Sequence[str]) -> list:
    unknown = [n for n in names if n not in SURROGATES]
    if unknown:
        raise ValueError(f"unknown surrogate vocoders {unknown}; available: {sorted(SURROGATES)}")
    return [SURROGATES[n].plugin(n) for n in names]


# ---------------------------------------------------------- building


@dataclass
class BuildReport:
    skipped: list = field(default_factory=list)
    class_counts: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({"skipped": self.skipped, "class_counts": self.class_counts}, indent=2, sort_keys=True)


def build_selfvocoded(corpus_dir, plugins: Sequence[VocoderPlugin], mel_cfg: dsp.MelConfig, out_dir,
                      log_mel: bool = False, seed: int = 0):
    """Self-vocode every WAV in ``corpus_dir`` through each plugin.

    Writes ``out_dir/<class>/<origin>.wav`` for the real copy and every
    vocoder, plus ``manifest.tsv`` and ``build_report.json``. Returns
    ``(manifest, report)``. Unreadable files are skipped and reported;
    a plugin failure aborts the build so that class balance holds.
    """
    corpus_dir, out_dir = Path(corpus_dir), Path(out_dir)
    if not corpus_dir.is_dir():
        raise FileNotFoundError(f"corpus directory {corpus_dir} does not exist")
    if len(plugins) < 2:
        raise ValueError("at least two vocoder plugins are required")
    names = [p.name for p in plugins]
    if len(set(names)) != len(names) or REAL_CLASS in names:
        raise ValueError(f"vocoder names must be unique and not {REAL_CLASS!r}: {names}")
    report = BuildReport()
    sources = []
    for path in sorted(corpus_dir.glob("*.wav")):
        try:
            w = dsp.load_wav(path)
            if w.sample_rate != mel_cfg.sample_rate:
                w = dsp.resample(w, mel_cfg.sample_rate)
            dsp.stft(w, mel_cfg.stft)  # length check
        except (dsp.WavFormatError, ValueError, OSError) as exc:
            log.warning("skipping %s: %s", path, exc)
            report.skipped.append({"path": str(path), "reason": str(exc)})
            continue
        sources.append((path.stem, w))
    if not sources:
        raise ValueError(f"no readable WAV files in {corpus_dir}")

    classes = [VocoderClass(0, REAL_CLASS, "-")]
    classes += [VocoderClass(i + 1, p.name, p.fingerprint) for i, p in enumerate(plugins)]
    for k in classes:
        (out_dir / k.name).mkdir(parents=True, exist_ok=True)
    records = []
    for origin, w in sources:
        rel = f"{REAL_CLASS}/{origin}.wav"
        dsp.save_wav(w, out_dir / rel)
        records.append(SampleRecord(f"{REAL_CLASS}/{origin}", rel, origin, 0, 0, UNASSIGNED,
                                    round(w.duration, 6), w.sample_rate))
        mel = dsp.mel_spectrogram(w, mel_cfg, log=log_mel)
        for k, plugin in zip(classes[1:], plugins):
            try:
                fake = plugin.invert(mel, stable_seed(seed, plugin.name, origin))
            except Exception as exc:
                raise RuntimeError(f"vocoder {plugin.name} failed on {origin}: {exc}") from exc
            rel = f"{k.name}/{origin}.wav"
            dsp.save_wav(fake, out_dir / rel)
            records.append(SampleRecord(f"{k.name}/{origin}", rel, origin, 1, k.index, UNASSIGNED,
                                        round(fake.duration, 6), fake.sample_rate))
    notes = {"mel_log": str(bool(log_mel)).lower(),
             "mel_config": json.dumps(mel_cfg.to_dict(), sort_keys=True),
             "seed": str(seed)}
    manifest = Manifest(records, classes, notes, root=out_dir)
    report.class_counts = manifest.class_counts()
    manifest.save(out_dir / "manifest.tsv")
    (out_dir / "build_report.json").write_text(report.to_json() + "\n", encoding="utf-8")
    return manifest, report


def build_selfvocoded_safe(corpus_dir, plugins, mel_cfg, out_dir, **kw):
    """Like :func:`build_selfvocoded` but removes ``out_dir`` if the build fails
    and the directory did not exist before."""
    out_dir = Path(out_dir)
    existed = out_dir.exists()
    try:
        return build_selfvocoded(corpus_dir, plugins, mel_cfg, out_dir, **kw)
    except BaseException:
        if not existed and out_dir.exists():
            shutil.rmtree(out_dir)
        raise


# ------------------------------------------------------------- splits


def _allocate(n: int, ratios) -> list:
    """Largest-remainder allocation of ``n`` items to ``ratios``."""
    raw = [n * r for r in ratios]
    counts = [math.floor(x) for x in raw]
    order = sorted(range(len(ratios)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


def split_manifest(m: Manifest, ratios=(0.6, 0.2, 0.2), seed: int = 0) -> Manifest:
    """Assign train/dev/test per origin so no utterance leaks across splits."""
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be three positive numbers summing to 1, got {ratios}")
    origins = m.origins()
    if len(origins) < len(SPLITS):
        raise ValueError(f"need at least {len(SPLITS)} origins to split, got {len(origins)}")
    perm = np.random.default_rng(seed).permutation(len(origins))
    counts = _allocate(len(origins), ratios)
    assignment = {}
    pos = 0
    for name, count in zip(SPLITS, counts):
        for i in perm[pos : pos + count]:
            assignment[origins[i]] = name
        pos += count
    records = [SampleRecord(r.id, r.path, r.origin_id, r.y, r.c, assignment[r.origin_id], r.duration, r.sample_rate)
               for r in m.records]
    out = m.with_records(records)
    out.notes = dict(m.notes, split_seed=str(seed), split_ratios=",".join(f"{r:g}" for r in ratios))
    return out


# ------------------------------------------------------------ batching


def crop_or_pad(x: np.ndarray, target_len: int, rng: np.random.Generator | None = None, train: bool = True):
    """Fixed-length window: random crop (train) or centre crop (eval);
    short inputs are repeated cyclically from the start."""
    x = np.asarray(x)
    if target_len <= 0:
        raise ValueError("target_len must be positive")
    n = x.shape[0]
    if n == target_len:
        return x
    if n < target_len:
        return np.resize(x, target_len)
    if train:
        if rng is None:
            raise ValueError("train-mode crop needs an rng")
        start = int(rng.integers(0, n - target_len + 1))
    else:
        start = (n - target_len) // 2
    return x[start : start + target_len]


class AudioCache:
    """Loads manifest audio once; audio is immutable so sharing is safe."""

    def __init__(self, manifest: Manifest):
        self.manifest = manifest
        self._cache = {}

    def get(self, record: SampleRecord) -> dsp.Waveform:
        w = self._cache.get(record.id)
        if w is None:
            w = dsp.load_wav(self.manifest.audio_path(record))
            self._cache[record.id] = w
        return w


@dataclass
class Batch:
    ids: list
    x: np.ndarray
    y: np.ndarray
    c: np.ndarray


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def make_batches(m: Manifest, split: str, batch_size: int, seed: int, epoch: int = 0, input_length: int = 38400,
                 augment=None, train: bool = True, cache: AudioCache | None = None,
                 dtype=np.float32) -> Iterator[Batch]:
    """Yield batches for one epoch of ``split``.

    Train mode visits a permutation seeded by ``(seed, epoch)``; eval mode
    keeps manifest order and centre-crops. Augmentation, when given, runs
    per sample before cropping with a counter-based generator.
    """
    from .augment import apply_augment  # local: augment imports dataset helpers

    records = m.split(split)
    if not records:
        raise ValueError(f"split {split!r} is empty")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    cache = cache or AudioCache(m)
    order = epoch_order(len(records), seed, epoch) if train else np.arange(len(records))
    for start in range(0, len(records), batch_size):
        chunk = [records[i] for i in order[start : start + batch_size]]
        xs = []
        for pos, r in zip(range(start, start + len(chunk)), chunk):
            rng = np.random.default_rng([seed, epoch, pos, 1])
            w = cache.get(r)
            if augment is not None:
                w, _ = apply_augment(w, augment, np.random.default_rng([seed, epoch, pos, 2]))
            xs.append(crop_or_pad(w.samples, input_length, rng, train))
        yield Batch([r.id for r in chunk], np.stack(xs).astype(dtype),
                    np.array([r.y for r in chunk]), np.array([r.c for r in chunk]))


# ------------------------------------------------------- toy corpus

VOWELS = [(730, 1090, 2440), (270, 2290, 3010), (300, 870, 2240), (530, 1840, 2480),
          (660, 1720, 2410), (490, 1350, 1690), (570, 840, 2410), (440, 1020, 2240)]


def _resonator(x, freq, bw, rate):
    r = math.exp(-math.pi * bw / rate)
    theta = 2 * math.pi * freq / rate
    a = [1.0, -2 * r * math.cos(theta), r * r]
    return sps.lfilter([1.0 - r], a, x)


def synth_utterance(seed: int, sample_rate: int = 24000, seconds: float | None = None) -> dsp.Waveform:
    """Deterministic speech-like signal: voiced syllables with formants,
    fricative noise bursts and short pauses."""
    rng = np.random.default_rng(seed)
    seconds = seconds if seconds is not None else float(rng.uniform(1.4, 2.2))
    n_total = int(seconds * sample_rate)
    f0_base = rng.uniform(95, 210)
    out = np.zeros(n_total)
    pos = int(rng.uniform(0.02, 0.08) * sample_rate)
    phase = 0.0
    while pos < n_total - int(0.05 * sample_rate):
        seg = min(int(rng.uniform(0.12, 0.26) * sample_rate), n_total - pos)
        t = np.arange(seg) / sample_rate
        if rng.random() < 0.75:
            f0 = f0_base * (1 + 0.08 * rng.standard_normal()) * (1 + 0.05 * np.sin(2 * np.pi * rng.uniform(2, 6) * t))
            inst_phase = phase + 2 * np.pi * np.cumsum(f0) / sample_rate
            phase = inst_phase[-1]
            n_harm = int(min(0.45 * sample_rate, 7000) / f0_base)
            src = np.zeros(seg)
            for k in range(1, n_harm + 1):
                src += np.sin(k * inst_phase) / k**0.9
            f1, f2, f3 = (f * rng.uniform(0.9, 1.1) for f in VOWELS[rng.integers(len(VOWELS))])
            y = _resonator(src, f1, 80, sample_rate) + 0.7 * _resonator(src, f2, 110, sample_rate)
            y += 0.4 * _resonator(src, f3, 160, sample_rate)
        else:
            b, a = sps.butter(4, [2500 / (sample_rate / 2), min(7500, 0.45 * sample_rate) / (sample_rate / 2)], "band")
            y = 0.6 * sps.lfilter(b, a, rng.standard_normal(seg))
        env = np.sin(np.pi * np.arange(seg) / seg) ** 0.6
        out[pos : pos + seg] += y / (np.max(np.abs(y)) + 1e-9) * env * rng.uniform(0.5, 1.0)
        pos += seg + int(rng.uniform(0.0, 0.06) * sample_rate)
    out += 1e-3 * rng.standard_normal(n_total)
    return dsp.Waveform(0.5 * out / np.max(np.abs(out)), sample_rate)


def make_toy_corpus(out_dir, n: int = 24, seed: int = 0, sample_rate: int = 24000) -> list:
    """Write ``n`` speech-like utterances as ``utt###.wav``; returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(n):
        p = out_dir / f"utt{i:03d}.wav"
        dsp.save_wav(synth_utterance(stable_seed("toy-corpus", seed, i), sample_rate), p)
        paths.append(p)
    return paths
