"""Raw-waveform detector: shared encoder, binary head and vocoder-ID head.

The encoder is a scaled-down RawNet2-style stack. A learnable sinc
band-pass front end feeds residual blocks with feature-map scaling (FMS)
gates, and a GRU summarizes the frame sequence into a fixed embedding.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import dsp
from . import ndiff as nd


@dataclass(frozen=True)
class ModelConfig:
    sample_rate: int = 24000
    input_length: int = 38400
    sinc_filters: int = 20
    sinc_kernel: int = 251
    min_low_hz: float = 50.0
    min_band_hz: float = 50.0
    resblock_channels: tuple = (20, 64)
    pool_width: int = 3
    gru_hidden: int = 64
    embedding_dim: int = 64
    num_classes: int = 3
    lam: float = 0.5
    leaky_slope: float = 0.3
    dtype: str = "float32"

    def __post_init__(self):
        object.__setattr__(self, "resblock_channels", tuple(int(c) for c in self.resblock_channels))
        if self.num_classes < 3:
            raise ValueError("num_classes must be >= 3 (real class plus at least two vocoders)")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.sinc_kernel % 2 == 0:
            raise ValueError("sinc_kernel must be odd")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"unsupported dtype {self.dtype!r}")
        if self.frames_after_encoder() < 1:
            raise ValueError(f"input_length {self.input_length} too short for the configured pooling")

    def frames_after_encoder(self) -> int:
        t = self.input_length - self.sinc_kernel + 1
        for _ in range(1 + len(self.resblock_channels)):
            t //= self.pool_width
        return t

    def to_dict(self) -> dict:
        d = asdict(self)
        d["resblock_channels"] = list(self.resblock_channels)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    def with_(self, **kw) -> "ModelConfig":
        return replace(self, **kw)


def reduced_config(**kw) -> ModelConfig:
    """The small configuration used for whole-model gradient checks."""
    base = dict(sample_rate=16000, input_length=1024, sinc_filters=4, sinc_kernel=31,
                resblock_channels=(6,), gru_hidden=8, embedding_dim=8, num_classes=3, dtype="float64")
    base.update(kw)
    return ModelConfig(**base)


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def sinc_init(cfg: ModelConfig):
    """Cutoffs spread on the mel scale between min_low_hz and nyquist."""
    nyq = cfg.sample_rate / 2
    hi = nyq - (cfg.min_low_hz + cfg.min_band_hz)
    hz = dsp.mel_to_hz(np.linspace(dsp.hz_to_mel(30.0), dsp.hz_to_mel(hi), cfg.sinc_filters + 1))
    low = hz[:-1] - cfg.min_low_hz
    band = np.diff(hz) - cfg.min_band_hz
    return np.maximum(low, 1.0), np.maximum(band, 1.0)


def init_params(cfg: ModelConfig, seed: int = 0) -> nd.ParamStore:
    rng = np.random.default_rng(seed)
    ps = nd.ParamStore()
    low, band = sinc_init(cfg)
    ps.add("sinc.low", low, "encoder")
    ps.add("sinc.band", band, "encoder")
    f = cfg.sinc_filters
    _add_bn(ps, "bn0", f)
    cin = f
    for i, cout in enumerate(cfg.resblock_channels):
        p = f"block{i}"
        ps.add(f"{p}.conv1.w", _uniform(rng, (cout, cin, 3), cin * 3), "encoder")
        ps.add(f"{p}.conv1.b", _uniform(rng, (cout,), cin * 3), "encoder")
        _add_bn(ps, f"{p}.bn", cout)
        ps.add(f"{p}.conv2.w", _uniform(rng, (cout, cout, 3), cout * 3), "encoder")
        ps.add(f"{p}.conv2.b", _uniform(rng, (cout,), cout * 3), "encoder")
        if cin != cout:
            ps.add(f"{p}.down.w", _uniform(rng, (cout, cin, 1), cin), "encoder")
            ps.add(f"{p}.down.b", _uniform(rng, (cout,), cin), "encoder")
        ps.add(f"{p}.fms.w", _uniform(rng, (cout, cout), cout), "encoder")
        ps.add(f"{p}.fms.b", _uniform(rng, (cout,), cout), "encoder")
        cin = cout
    _add_bn(ps, "bn_gru", cin)
    h = cfg.gru_hidden
    ps.add("gru.w_ih", _uniform(rng, (3 * h, cin), h), "encoder")
    ps.add("gru.w_hh", _uniform(rng, (3 * h, h), h), "encoder")
    ps.add("gru.b_ih", _uniform(rng, (3 * h,), h), "encoder")
    ps.add("gru.b_hh", _uniform(rng, (3 * h,), h), "encoder")
    e = cfg.embedding_dim
    ps.add("embed.w", _uniform(rng, (e, h), h), "encoder")
    ps.add("embed.b", _uniform(rng, (e,), h), "encoder")
    ps.add("binary.w", _uniform(rng, (1, e), e), "binary")
    ps.add("binary.b", _uniform(rng, (1,), e), "binary")
    ps.add("vocoder.w", _uniform(rng, (cfg.num_classes, e), e), "vocoder")
    ps.add("vocoder.b", _uniform(rng, (cfg.num_classes,), e), "vocoder")
    return ps.astype(np.dtype(cfg.dtype))


def _add_bn(ps, name, c):
    ps.add(f"{name}.gamma", np.ones(c), "encoder")
    ps.add(f"{name}.beta", np.zeros(c), "encoder")
    ps.add_buffer(f"{name}.mean", np.zeros(c))
    ps.add_buffer(f"{name}.var", np.ones(c))


def _bn(ps, name, x, train):
    return nd.batchnorm1d(x, ps[f"{name}.gamma"], ps[f"{name}.beta"],
                          ps.buffers[f"{name}.mean"], ps.buffers[f"{name}.var"], train)


def fms(y, w, b):
    """Feature-map scaling: sigmoid gate from the time-averaged map, applied as y*g + g."""
    gate = nd.sigmoid(nd.linear(nd.mean(y, axis=2), w, b))
    gate = nd.reshape(gate, gate.shape + (1,))
    return nd.add(nd.mul(y, gate), gate), gate


def forward_embed(x, params: nd.ParamStore, cfg: ModelConfig, train: bool = False, return_gates: bool = False):
    """Encoder: waveform windows [B, input_length] -> embeddings [B, embedding_dim]."""
    x = np.asarray(x.data if isinstance(x, nd.Tensor) else x, dtype=np.dtype(cfg.dtype))
    if x.ndim == 1:
        x = x[None]
    if x.shape[1] != cfg.input_length:
        raise ValueError(f"expected windows of {cfg.input_length} samples, got {x.shape[1]}")
    slope = cfg.leaky_slope
    kern = nd.sinc_filters(params["sinc.low"], params["sinc.band"], cfg.sinc_kernel,
                           cfg.sample_rate, cfg.min_low_hz, cfg.min_band_hz)
    kern = nd.reshape(kern, (cfg.sinc_filters, 1, cfg.sinc_kernel))
    h = nd.conv1d(nd.Tensor(x[:, None, :]), kern)
    h = nd.maxpool1d(nd.absolute(h), cfg.pool_width)
    h = nd.leaky_relu(_bn(params, "bn0", h, train), slope)
    gates = []
    cin = cfg.sinc_filters
    for i, cout in enumerate(cfg.resblock_channels):
        p = f"block{i}"
        y = nd.conv1d(h, params[f"{p}.conv1.w"], params[f"{p}.conv1.b"], padding=1)
        y = nd.leaky_relu(_bn(params, f"{p}.bn", y, train), slope)
        y = nd.conv1d(y, params[f"{p}.conv2.w"], params[f"{p}.conv2.b"], padding=1)
        skip = nd.conv1d(h, params[f"{p}.down.w"], params[f"{p}.down.b"]) if cin != cout else h
        y = nd.maxpool1d(nd.add(y, skip), cfg.pool_width)
        h, g = fms(y, params[f"{p}.fms.w"], params[f"{p}.fms.b"])
        gates.append(g.data)
        cin = cout
    h = nd.leaky_relu(_bn(params, "bn_gru", h, train), slope)
    h = nd.transpose(h, (0, 2, 1))
    h0 = nd.Tensor(np.zeros((x.shape[0], cfg.gru_hidden), dtype=x.dtype))
    h = nd.gru_sequence(h, h0, params["gru.w_ih"], params["gru.w_hh"], params["gru.b_ih"], params["gru.b_hh"])
    e = nd.linear(h, params["embed.w"], params["embed.b"])
    return (e, gates) if return_gates else e


def forward_binary(e, params: nd.ParamStore):
    """Detection logit per embedding; higher means more likely synthetic."""
    out = nd.linear(e, params["binary.w"], params["binary.b"])
    return nd.reshape(out, out.shape[:-1])


def forward_vocoder(e, params: nd.ParamStore):
    """Class logits: index 0 is real, 1..C the vocoder identities."""
    return nd.linear(e, params["vocoder.w"], params["vocoder.b"])


@dataclass
class LossParts:
    total: nd.Tensor
    binary: nd.Tensor
    multiclass: nd.Tensor


def check_labels(y, c):
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    c = np.atleast_1d(np.asarray(c, dtype=np.int64))
    if y.shape != c.shape:
        raise ValueError("y and c must have the same length")
    bad = (y == 0) != (c == 0)
    if np.any(bad) or np.any((y != 0) & (y != 1)):
        raise ValueError(f"inconsistent labels: y={y[bad].tolist()} c={c[bad].tolist()} (need y=0 <=> c=0)")
    return y, c


def multitask_loss(binary_logit, class_logits, y, c, lam, include_real=True) -> LossParts:
    """``lam * L_b + (1 - lam) * L_m`` with per-batch mean reduction.

    ``L_b`` is binary cross-entropy on the detection logit and ``L_m`` the
    softmax cross-entropy over {real} + vocoder classes. With
    ``include_real=False`` real rows (c=0) are left out of ``L_m``.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    y, c = check_labels(y, c)
    if binary_logit.ndim == 0:
        binary_logit = nd.reshape(binary_logit, (1,))
    if class_logits.ndim == 1:
        class_logits = nd.reshape(class_logits, (1, class_logits.shape[0]))
    dtype = binary_logit.dtype
    lb = nd.mean(nd.binary_cross_entropy_with_logit(binary_logit, y))
    per_row = nd.softmax_cross_entropy(class_logits, c)
    if include_real:
        lm = nd.mean(per_row)
    else:
        mask = (c > 0).astype(dtype)
        count = mask.sum()
        lm = nd.sum(nd.mul(per_row, mask / count)) if count > 0 else nd.Tensor(np.zeros((), dtype=dtype))
    total = nd.add(nd.mul(lb, np.asarray(lam, dtype=dtype)), nd.mul(lm, np.asarray(1.0 - lam, dtype=dtype)))
    return LossParts(total, lb, lm)


@dataclass
class Detector:
    """Convenience bundle of config and parameters."""

    config: ModelConfig
    params: nd.ParamStore = field(repr=False)

    @classmethod
    def create(cls, config: ModelConfig, seed: int = 0) -> "Detector":
        return cls(config, init_params(config, seed))

    def embed(self, x, train=False):
        return forward_embed(x, self.params, self.config, train)

    def scores(self, x):
        """Eval-mode (binary logits, class logits) as numpy arrays."""
        e = self.embed(x, train=False)
        return forward_binary(e, self.params).data, forward_vocoder(e, self.params).data
