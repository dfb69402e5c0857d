"""Robustness degradation: resample round-trips and crowd-noise injection.

Each call picks one of three branches (original, resampled, noisy) and
returns a tag from which the exact transformation can be replayed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import signal as sps

from . import dsp

BRANCHES = ("original", "resampled", "noisy")


@lru_cache(maxsize=4)
def crowd_noise(sample_rate: int = 24000, seconds: float = 10.0, seed: int = 0) -> dsp.Waveform:
    """Deterministic crowd-like noise.

    Band-passed pink noise plus several speech-band noise streams whose
    amplitude follows slow syllable-rate envelopes, like distant babble.
    """
    rng = np.random.default_rng(seed)
    n = int(round(seconds * sample_rate))
    freqs = np.fft.rfftfreq(n, 1.0 / sample_rate)
    spec = rng.standard_normal(freqs.size) + 1j * rng.standard_normal(freqs.size)
    spec[1:] /= np.sqrt(freqs[1:])
    spec[0] = 0.0
    pink = np.fft.irfft(spec, n)
    nyq = sample_rate / 2
    b, a = sps.butter(2, [80 / nyq, min(8000, 0.9 * nyq) / nyq], "band")
    out = sps.lfilter(b, a, pink)
    out /= np.sqrt(np.mean(out**2))
    t = np.arange(n) / sample_rate
    for _ in range(6):
        lo = rng.uniform(200, 600)
        hi = min(rng.uniform(1500, 3500), 0.9 * nyq)
        b, a = sps.butter(2, [lo / nyq, hi / nyq], "band")
        voice = sps.lfilter(b, a, rng.standard_normal(n))
        rate = rng.uniform(3.0, 6.0)
        env = np.maximum(np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi)), 0.0) ** 2
        out += 0.8 * voice / np.sqrt(np.mean(voice**2)) * env
    out *= 0.1 / np.sqrt(np.mean(out**2))
    return dsp.Waveform(out, sample_rate)


@dataclass(frozen=True)
class AugmentConfig:
    intermediate_rates: tuple = (8000, 16000, 22050, 32000, 44100)
    snr_values_db: tuple = (8.0, 10.0, 20.0)
    branch_probs: tuple = (0.4, 0.4, 0.2)
    noise_bank: tuple = field(default=None, repr=False)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "intermediate_rates", tuple(int(r) for r in self.intermediate_rates))
        object.__setattr__(self, "snr_values_db", tuple(float(s) for s in self.snr_values_db))
        probs = tuple(float(p) for p in self.branch_probs)
        object.__setattr__(self, "branch_probs", probs)
        if len(probs) != 3 or any(p < 0 for p in probs) or abs(sum(probs) - 1.0) > 1e-9:
            raise ValueError(f"branch_probs must be 3 non-negative values summing to 1, got {probs}")
        if probs[1] > 0 and not self.intermediate_rates:
            raise ValueError("intermediate_rates is empty but the resampled branch has probability > 0")
        if any(r <= 0 for r in self.intermediate_rates):
            raise ValueError("intermediate rates must be positive")
        if probs[2] > 0 and not self.snr_values_db:
            raise ValueError("snr_values_db is empty but the noisy branch has probability > 0")
        if self.noise_bank is not None:
            object.__setattr__(self, "noise_bank", tuple(self.noise_bank))
            if probs[2] > 0 and not self.noise_bank:
                raise ValueError("noise_bank is empty but the noisy branch has probability > 0")

    def noises(self, sample_rate: int) -> tuple:
        """Noise bank at ``sample_rate``; defaults to the bundled crowd noise."""
        bank = self.noise_bank if self.noise_bank is not None else (crowd_noise(sample_rate),)
        return tuple(n if n.sample_rate == sample_rate else dsp.resample(n, sample_rate) for n in bank)

    def to_dict(self) -> dict:
        return {"intermediate_rates": list(self.intermediate_rates), "snr_values_db": list(self.snr_values_db),
                "branch_probs": list(self.branch_probs), "seed": self.seed,
                "noise_bank": "crowd" if self.noise_bank is None else f"{len(self.noise_bank)} custom"}

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentConfig":
        d = dict(d)
        d.pop("noise_bank", None)
        unknown = set(d) - {"intermediate_rates", "snr_values_db", "branch_probs", "seed"}
        if unknown:
            raise ValueError(f"unknown augment config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class AugmentTag:
    branch: str
    parameter: float | None = None
    noise_id: int | None = None
    noise_offset: int | None = None

    def __post_init__(self):
        if self.branch not in BRANCHES:
            raise ValueError(f"unknown branch {self.branch!r}")
        if (self.parameter is None) != (self.branch == "original"):
            raise ValueError("parameter must be present exactly when the branch is not original")

    def to_line(self, sample_id: str) -> str:
        param = "-" if self.parameter is None else f"{self.parameter:g}"
        extra = "" if self.noise_id is None else f"\t{self.noise_id}\t{self.noise_offset}"
        return f"{sample_id}\t{self.branch}\t{param}{extra}"


def round_trip_resample(w: dsp.Waveform, intermediate_rate: int) -> dsp.Waveform:
    """Down/up-sample through ``intermediate_rate`` and back to the original rate."""
    if intermediate_rate <= 0:
        raise ValueError("intermediate_rate must be positive")
    back = dsp.resample(dsp.resample(w, int(intermediate_rate)), w.sample_rate)
    n = len(w)
    if len(back) != n:  # rounding in the two length computations
        back = dsp.Waveform(dsp.fit_length(back.samples, n) if len(back) > n else
                            np.pad(back.samples, (0, n - len(back))), w.sample_rate)
    return back


def replay(w: dsp.Waveform, tag: AugmentTag, cfg: AugmentConfig) -> dsp.Waveform:
    """Apply the transformation recorded in ``tag``."""
    if tag.branch == "original":
        return w
    if tag.branch == "resampled":
        return round_trip_resample(w, int(tag.parameter))
    noise = cfg.noises(w.sample_rate)[tag.noise_id]
    out, _ = dsp.mix_noise_at_snr(w, noise, tag.parameter, tag.noise_offset)
    return out


def draw_tag(cfg: AugmentConfig, rng: np.random.Generator, sample_rate: int = 24000) -> AugmentTag:
    u = rng.random()
    cum = np.cumsum(cfg.branch_probs)
    branch = BRANCHES[min(int(np.searchsorted(cum, u, side="right")), 2)]
    while cfg.branch_probs[BRANCHES.index(branch)] == 0:  # guard float edge at cum == u
        branch = BRANCHES[BRANCHES.index(branch) - 1]
    if branch == "original":
        return AugmentTag("original")
    if branch == "resampled":
        return AugmentTag("resampled", float(cfg.intermediate_rates[rng.integers(len(cfg.intermediate_rates))]))
    snr = cfg.snr_values_db[rng.integers(len(cfg.snr_values_db))]
    bank = cfg.noises(sample_rate)
    noise_id = int(rng.integers(len(bank)))
    offset = int(rng.integers(len(bank[noise_id])))
    return AugmentTag("noisy", float(snr), noise_id, offset)


def apply_augment(w: dsp.Waveform, cfg: AugmentConfig, rng: np.random.Generator):
    """Randomly degrade ``w``; returns ``(waveform, tag)``."""
    tag = draw_tag(cfg, rng, w.sample_rate)
    return replay(w, tag, cfg), tag


def sample_rng(seed: int, index: int) -> np.random.Generator:
    """Counter-based generator so each sample's draw is independent of worker layout."""
    return np.random.default_rng([seed, index])


def augment_manifest(manifest, split: str, cfg: AugmentConfig, out_dir):
    """Write degraded copies of every record in ``split``.

    Produces ``out_dir/<class>/<origin>.wav``, a ``tags.tsv`` sidecar and a
    ``manifest.tsv`` whose notes mark the set as degraded.
    """
    from .dataset import AudioCache, SampleRecord

    out_dir = Path(out_dir)
    records = manifest.split(split)
    if not records:
        raise ValueError(f"split {split!r} is empty")
    cache = AudioCache(manifest)
    new, tag_lines = [], []
    for i, r in enumerate(records):
        w, tag = apply_augment(cache.get(r), cfg, sample_rng(cfg.seed, i))
        (out_dir / Path(r.path).parent).mkdir(parents=True, exist_ok=True)
        dsp.save_wav(w, out_dir / r.path)
        new.append(SampleRecord(r.id, r.path, r.origin_id, r.y, r.c, r.split, r.duration, r.sample_rate))
        tag_lines.append(tag.to_line(r.id))
    out = manifest.with_records(new)
    out.root = out_dir
    out.notes = dict(manifest.notes, degraded="true", augment=json.dumps(cfg.to_dict(), sort_keys=True))
    out.save(out_dir / "manifest.tsv")
    (out_dir / "tags.tsv").write_text("\n".join(tag_lines) + "\n", encoding="utf-8")
    return out

