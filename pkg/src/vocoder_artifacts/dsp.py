"""Signal-processing kernels: WAV I/O, resampling, STFT, mel analysis,
Griffin-Lim inversion and SNR-controlled noise mixing.

Every function here is pure: it never mutates its inputs and returns
bit-identical outputs for identical arguments.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PCM16_SCALE = 32768.0
LOG_FLOOR = 1e-10
SNR_DISABLED_DB = 120.0


class WavFormatError(ValueError):
    """Raised for malformed or unsupported WAV files."""


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"waveform must be 1-D, got shape {samples.shape}")
        if int(self.sample_rate) != self.sample_rate or self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be a positive integer, got {self.sample_rate}")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def rms(self) -> float:
        return float(np.sqrt(np.mean(self.samples**2))) if len(self) else 0.0


@dataclass(frozen=True)
class StftConfig:
    window_length: int = 1024
    hop_length: int = 256
    fft_size: int = 1024
    window: str = "hann"

    def __post_init__(self):
        if not 0 < self.hop_length <= self.window_length <= self.fft_size:
            raise ValueError(
                "need 0 < hop_length <= window_length <= fft_size, got "
                f"{self.hop_length}, {self.window_length}, {self.fft_size}"
            )
        if self.window != "hann":
            raise ValueError(f"unsupported window {self.window!r}")

    @property
    def num_bins(self) -> int:
        return self.fft_size // 2 + 1


@dataclass(frozen=True)
class MelConfig:
    sample_rate: int = 24000
    num_mel_bins: int = 80
    fmin: float = 0.0
    fmax: float | None = None
    stft: StftConfig = field(default_factory=StftConfig)

    def __post_init__(self):
        if self.fmax is None:
            object.__setattr__(self, "fmax", self.sample_rate / 2)
        if not 0 <= self.fmin < self.fmax <= self.sample_rate / 2:
            raise ValueError(
                f"need 0 <= fmin < fmax <= sample_rate/2, got fmin={self.fmin}, "
                f"fmax={self.fmax}, sample_rate={self.sample_rate}"
            )
        if self.num_mel_bins < 2:
            raise ValueError("num_mel_bins must be >= 2")

    def to_dict(self) -> dict:
        return {
            "sample_rate": self.sample_rate,
            "num_mel_bins": self.num_mel_bins,
            "fmin": float(self.fmin),
            "fmax": float(self.fmax),
            "window_length": self.stft.window_length,
            "hop_length": self.stft.hop_length,
            "fft_size": self.stft.fft_size,
            "window": self.stft.window,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MelConfig":
        stft = StftConfig(
            window_length=int(d.get("window_length", 1024)),
            hop_length=int(d.get("hop_length", 256)),
            fft_size=int(d.get("fft_size", 1024)),
            window=d.get("window", "hann"),
        )
        return cls(
            sample_rate=int(d.get("sample_rate", 24000)),
            num_mel_bins=int(d.get("num_mel_bins", 80)),
            fmin=float(d.get("fmin", 0.0)),
            fmax=None if d.get("fmax") is None else float(d["fmax"]),
            stft=stft,
        )


@dataclass(frozen=True)
class MelSpectrogram:
    values: np.ndarray
    config: MelConfig
    log: bool = False

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if not np.all(np.isfinite(values)):
            raise ValueError("mel spectrogram contains non-finite values")
        if not self.log and np.any(values < 0):
            raise ValueError("linear-energy mel spectrogram has negative entries")
        object.__setattr__(self, "values", values)

    @property
    def num_frames(self) -> int:
        return self.values.shape[1]


# ---------------------------------------------------------------- WAV I/O


def load_wav(path) -> Waveform:
    """Read a RIFF/WAVE file (PCM16 or float32); channels are averaged."""
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise WavFormatError(f"{path}: not a RIFF/WAVE file")
    fmt = None
    pcm = None
    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos : pos + 4]
        (size,) = struct.unpack("<I", data[pos + 4 : pos + 8])
        body = data[pos + 8 : pos + 8 + size]
        if len(body) < size:
            raise WavFormatError(f"{path}: truncated {chunk_id!r} chunk")
        if chunk_id == b"fmt ":
            if size < 16:
                raise WavFormatError(f"{path}: fmt chunk too short")
            fmt = struct.unpack("<HHIIHH", body[:16])
        elif chunk_id == b"data":
            pcm = body
        pos += 8 + size + (size & 1)
    if fmt is None or pcm is None:
        raise WavFormatError(f"{path}: missing fmt or data chunk")
    audio_format, channels, rate, _, block_align, bits = fmt
    if audio_format == 0xFFFE:  # WAVE_FORMAT_EXTENSIBLE: trust bit depth
        audio_format = 3 if bits == 32 else 1
    if channels < 1 or rate <= 0:
        raise WavFormatError(f"{path}: invalid channel count or rate")
    if audio_format == 1 and bits == 16:
        frames = np.frombuffer(pcm[: len(pcm) // 2 * 2], dtype="<i2").astype(np.float64) / PCM16_SCALE
    elif audio_format == 3 and bits == 32:
        frames = np.frombuffer(pcm[: len(pcm) // 4 * 4], dtype="<f4").astype(np.float64)
    else:
        raise WavFormatError(f"{path}: unsupported codec (format={audio_format}, bits={bits})")
    n = frames.shape[0] // channels
    if n == 0:
        raise WavFormatError(f"{path}: zero-length audio")
    frames = frames[: n * channels].reshape(n, channels).mean(axis=1)
    return Waveform(frames, rate)


def quantize_pcm16(samples: np.ndarray) -> np.ndarray:
    """Clamp to [-1, 1] then round half away from zero onto the int16 grid."""
    x = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0) * PCM16_SCALE
    q = np.sign(x) * np.floor(np.abs(x) + 0.5)
    return np.clip(q, -32768, 32767).astype("<i2")


def save_wav(w: Waveform, path) -> None:
    pcm = quantize_pcm16(w.samples).tobytes()
    header = b"RIFF" + struct.pack("<I", 36 + len(pcm)) + b"WAVE"
    header += b"fmt " + struct.pack("<IHHIIHH", 16, 1, 1, w.sample_rate, w.sample_rate * 2, 2, 16)
    header += b"data" + struct.pack("<I", len(pcm))
    Path(path).write_bytes(header + pcm)


# ------------------------------------------------------------- resampling

RESAMPLE_TAPS = 64
RESAMPLE_BETA = 8.6
RESAMPLE_ROLLOFF = 0.95


def _resample_table(up: int, down: int):
    scale = min(1.0, up / down)
    half = int(math.ceil(RESAMPLE_TAPS / 2 / scale))
    offsets = np.arange(-half + 1, half + 1)
    cutoff = RESAMPLE_ROLLOFF * scale
    phases = np.arange(up)[:, None] / up
    d = offsets[None, :] - phases
    window = np.i0(RESAMPLE_BETA * np.sqrt(np.clip(1.0 - (d / half) ** 2, 0.0, None))) / np.i0(RESAMPLE_BETA)
    table = cutoff * np.sinc(cutoff * d) * window
    return table, offsets, half


def resample(w: Waveform, target_rate: int, chunk: int = 16384) -> Waveform:
    """Band-limited rational resampling with a Kaiser-windowed sinc.

    The filter keeps 64 taps per phase measured at the lower of the two
    rates, so downsampling widens the kernel in input samples.
    """
    if target_rate <= 0 or int(target_rate) != target_rate:
        raise ValueError(f"target_rate must be a positive integer, got {target_rate}")
    target_rate = int(target_rate)
    if target_rate == w.sample_rate:
        return w
    g = math.gcd(w.sample_rate, target_rate)
    up, down = target_rate // g, w.sample_rate // g
    table, offsets, half = _resample_table(up, down)
    x = np.concatenate([np.zeros(half), w.samples, np.zeros(half + 1)])
    n_out = int(round(len(w) * target_rate / w.sample_rate))
    out = np.empty(n_out)
    for start in range(0, n_out, chunk):
        n = np.arange(start, min(start + chunk, n_out), dtype=np.int64)
        base = (n * down) // up
        phase = (n * down) % up
        idx = base[:, None] + offsets[None, :] + half
        out[start : start + n.shape[0]] = np.einsum("ij,ij->i", x[idx], table[phase])
    return Waveform(out, target_rate)


# ------------------------------------------------------------------- STFT


def hann_window(cfg: StftConfig) -> np.ndarray:
    """Periodic Hann of window_length, zero-padded centrally to fft_size."""
    n = cfg.window_length
    win = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)
    left = (cfg.fft_size - n) // 2
    return np.pad(win, (left, cfg.fft_size - n - left))


def num_frames(length: int, cfg: StftConfig) -> int:
    return 1 + length // cfg.hop_length


def _reflect_index(length: int, pad: int) -> np.ndarray:
    j = np.arange(-pad, length + pad)
    j = np.where(j < 0, -j, j)
    return np.where(j >= length, 2 * (length - 1) - j, j)


def stft(w: Waveform | np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Centered STFT with reflection padding; returns [fft_size//2+1, frames]."""
    x = w.samples if isinstance(w, Waveform) else np.asarray(w, dtype=np.float64)
    if x.shape[0] < cfg.window_length:
        raise ValueError(
            f"audio of {x.shape[0]} samples is shorter than one window ({cfg.window_length})"
        )
    pad = cfg.fft_size // 2
    if x.shape[0] <= pad:
        raise ValueError(f"audio of {x.shape[0]} samples too short for reflection padding of {pad}")
    xp = x[_reflect_index(x.shape[0], pad)]
    n = num_frames(x.shape[0], cfg)
    frames = np.lib.stride_tricks.sliding_window_view(xp, cfg.fft_size)[:: cfg.hop_length][:n]
    return np.fft.rfft(frames * hann_window(cfg), axis=1).T


def istft(spec: np.ndarray, cfg: StftConfig, length: int) -> np.ndarray:
    """Least-squares inverse of :func:`stft` for a signal of ``length`` samples.

    Reflection padding maps every padded sample onto exactly one output
    sample, so the normal equations stay diagonal and the estimate is the
    exact minimizer of the framewise squared error.
    """
    pad = cfg.fft_size // 2
    win = hann_window(cfg)
    frames = np.fft.irfft(spec.T, n=cfg.fft_size, axis=1) * win
    n = spec.shape[1]
    padded_len = length + 2 * pad
    starts = np.arange(n) * cfg.hop_length
    pos = (starts[:, None] + np.arange(cfg.fft_size)[None, :]).ravel()
    keep = pos < padded_len
    ola = np.bincount(pos[keep], weights=frames.ravel()[keep], minlength=padded_len)
    wsum = np.bincount(pos[keep], weights=np.broadcast_to(win**2, frames.shape).ravel()[keep], minlength=padded_len)
    src = _reflect_index(length, pad)
    num = np.bincount(src, weights=ola, minlength=length)
    den = np.bincount(src, weights=wsum, minlength=length)
    return np.divide(num, den, out=np.zeros(length), where=den > 1e-12)


# -------------------------------------------------------------------- mel


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_points(cfg: MelConfig) -> np.ndarray:
    """Band edges and centers: num_mel_bins + 2 frequencies in Hz."""
    return mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.num_mel_bins + 2))


def mel_filterbank(cfg: MelConfig) -> np.ndarray:
    n_fft = cfg.stft.fft_size
    freqs = np.arange(n_fft // 2 + 1) * cfg.sample_rate / n_fft
    pts = mel_points(cfg)
    centers = np.round(pts[1:-1] * n_fft / cfg.sample_rate).astype(int)
    if np.any(np.diff(centers) == 0):
        raise ValueError(
            f"degenerate mel band: {cfg.num_mel_bins} mel bins over {n_fft // 2 + 1} FFT bins "
            f"puts adjacent filter centers on the same FFT bin"
        )
    lo, mid, hi = pts[:-2, None], pts[1:-1, None], pts[2:, None]
    rising = (freqs[None, :] - lo) / (mid - lo)
    falling = (hi - freqs[None, :]) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    if np.any(fb.max(axis=1) == 0):
        raise ValueError(
            f"degenerate mel band: {cfg.num_mel_bins} mel bins leave a filter with no FFT bin support"
        )
    return fb


def mel_spectrogram(w: Waveform, cfg: MelConfig, log: bool = False) -> MelSpectrogram:
    if w.sample_rate != cfg.sample_rate:
        raise ValueError(f"waveform rate {w.sample_rate} != mel config rate {cfg.sample_rate}")
    power = np.abs(stft(w, cfg.stft)) ** 2
    values = mel_filterbank(cfg) @ power
    if log:
        values = np.log(values + LOG_FLOOR)
    return MelSpectrogram(values, cfg, log)


def mel_pseudo_inverse(m: MelSpectrogram) -> np.ndarray:
    """Power spectrogram estimate from a linear mel via normalized transpose.

    Each FFT bin takes the filter-weighted average of the mel energies,
    normalized so that a flat power spectrum is recovered exactly.
    """
    if m.log:
        raise ValueError("pseudo-inverse needs a linear-energy mel spectrogram")
    fb = mel_filterbank(m.config)
    norm = fb.T @ fb.sum(axis=1)
    power = np.divide(fb.T @ m.values, norm[:, None], out=np.zeros((fb.shape[1], m.num_frames)), where=norm[:, None] > 0)
    return np.maximum(power, 0.0)


def griffin_lim(magnitude: np.ndarray, cfg: StftConfig, length: int, iterations: int, seed: int,
                return_residuals: bool = False):
    """Phase retrieval for a target magnitude spectrogram.

    Returns the waveform (and optionally the spectral-convergence residual
    after each round, which is non-increasing).
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    rng = np.random.default_rng(seed)
    phase = np.exp(2j * np.pi * rng.random(magnitude.shape))
    norm = np.linalg.norm(magnitude)
    residuals = []
    x = istft(magnitude * phase, cfg, length)
    for _ in range(iterations):
        spec = stft(x, cfg)
        mag = np.abs(spec)
        if return_residuals:
            residuals.append(float(np.linalg.norm(mag - magnitude) / norm) if norm > 0 else 0.0)
        phase = np.divide(spec, mag, out=np.ones_like(spec), where=mag > 0)
        x = istft(magnitude * phase, cfg, length)
    if return_residuals:
        mag = np.abs(stft(x, cfg))
        residuals.append(float(np.linalg.norm(mag - magnitude) / norm) if norm > 0 else 0.0)
        return x, residuals
    return x


def griffin_lim_invert(m: MelSpectrogram, iterations: int = 32, seed: int = 0) -> Waveform:
    """Surrogate vocoder: mel pseudo-inverse followed by Griffin-Lim.

    Output length is ``(frames - 1) * hop``, i.e. within one hop of the
    analysed signal.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    magnitude = np.sqrt(mel_pseudo_inverse(m))
    cfg = m.config.stft
    length = (m.num_frames - 1) * cfg.hop_length
    x = griffin_lim(magnitude, cfg, length, iterations, seed)
    return Waveform(x, m.config.sample_rate)


# ------------------------------------------------------------ noise mixing


def power(x: np.ndarray) -> float:
    return float(np.mean(np.square(x)))


def fit_length(noise: np.ndarray, length: int, offset: int = 0) -> np.ndarray:
    """Loop ``noise`` from ``offset`` until it covers ``length`` samples."""
    idx = (offset + np.arange(length)) % noise.shape[0]
    return noise[idx]


def mix_noise_at_snr(signal: Waveform, noise: Waveform, snr_db: float, offset: int = 0):
    """Add ``noise`` scaled so that P_signal / P_added = 10^(snr_db/10).

    Returns ``(mixed, clipped)`` where ``clipped`` counts samples clamped
    to [-1, 1]. Requests at or above 120 dB return the signal unchanged.
    """
    if signal.sample_rate != noise.sample_rate:
        raise ValueError(f"sample rates differ: {signal.sample_rate} vs {noise.sample_rate}")
    if snr_db >= SNR_DISABLED_DB:
        return signal, 0
    n = fit_length(noise.samples, len(signal), offset)
    p_sig, p_noise = power(signal.samples), power(n)
    if p_sig == 0.0:
        raise ValueError("signal is silent; SNR undefined")
    if p_noise == 0.0:
        raise ValueError("noise is silent; SNR undefined")
    gain = snr_gain(p_sig, p_noise, snr_db)
    mixed = signal.samples + gain * n
    clipped = int(np.count_nonzero(np.abs(mixed) > 1.0))
    return Waveform(np.clip(mixed, -1.0, 1.0), signal.sample_rate), clipped


def snr_gain(p_signal: float, p_noise: float, snr_db: float) -> float:
    return math.sqrt(p_signal / (p_noise * 10.0 ** (snr_db / 10.0)))
