"""A small reverse-mode autodiff engine on top of numpy.

Tensors record the op that produced them; :meth:`Tensor.backward` walks the
recorded graph once in reverse topological order. Every op checks that its
forward value is finite and raises :class:`NonFiniteError` otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft


class NonFiniteError(FloatingPointError):
    pass


class GraphError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind not in "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.op = "leaf"
        self._parents = ()
        self._backward = None
        self._consumed = False

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None):
        """Populate ``.grad`` on every tensor that requires it.

        The graph is freed afterwards; calling backward again on the same
        loss raises :class:`GraphError`.
        """
        if self._consumed:
            raise GraphError("backward called twice on the same graph")
        if grad is None:
            if self.data.size != 1:
                raise GraphError(f"backward needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order = _toposort(self)
        self._accum(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
            node._consumed = node.op != "leaf"
            if node.op != "leaf":
                node._backward = None
                node._parents = ()
                node.grad = None if node is not self else node.grad

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other, self)))

    def __rsub__(self, other):
        return add(_as_tensor(other, self), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _toposort(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _make(data, parents, backward, op):
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite value produced by {op}")
    out = Tensor(data)
    parents = tuple(p for p in parents if isinstance(p, Tensor))
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    out.op = op
    return out


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ------------------------------------------------------------ elementwise


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b, a if isinstance(a, Tensor) else None)

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), backward, "add")


def neg(a):
    def backward(g):
        a._accum(-g)

    return _make(-a.data, (a,), backward, "neg")


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b, a if isinstance(a, Tensor) else None)

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), backward, "mul")


def leaky_relu(x, slope=0.3):
    pos = x.data > 0
    scale = np.where(pos, 1.0, slope).astype(x.dtype)

    def backward(g):
        x._accum(g * scale)

    return _make(x.data * scale, (x,), backward, "leaky_relu")


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x):
    s = _sigmoid(x.data)

    def backward(g):
        x._accum(g * s * (1 - s))

    return _make(s, (x,), backward, "sigmoid")


def tanh(x):
    t = np.tanh(x.data)

    def backward(g):
        x._accum(g * (1 - t * t))

    return _make(t, (x,), backward, "tanh")


def absolute(x):
    sign = np.sign(x.data)

    def backward(g):
        x._accum(g * sign)

    return _make(np.abs(x.data), (x,), backward, "abs")


# -------------------------------------------------------------- reductions


def sum(x, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy
    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x._accum(np.broadcast_to(g, x.shape))

    return _make(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), backward, "sum")


def mean(x, axis=None, keepdims=False):
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x._accum(np.broadcast_to(g / n, x.shape))

    return _make(np.mean(x.data, axis=axis, keepdims=keepdims), (x,), backward, "mean")


# ------------------------------------------------------------ shape ops


def reshape(x, shape):
    def backward(g):
        x._accum(g.reshape(x.shape))

    return _make(x.data.reshape(shape), (x,), backward, "reshape")


def transpose(x, axes):
    inv = np.argsort(axes)

    def backward(g):
        x._accum(np.transpose(g, inv))

    return _make(np.ascontiguousarray(np.transpose(x.data, axes)), (x,), backward, "transpose")


# ----------------------------------------------------------------- linear


def matmul(a, b):
    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _make(a.data @ b.data, (a, b), backward, "matmul")


def linear(x, weight, bias=None):
    """``x @ weight.T + bias`` over the last axis of ``x``."""
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def backward(g):
        if x.requires_grad:
            x._accum(g @ weight.data)
        g2 = g.reshape(-1, g.shape[-1])
        if weight.requires_grad:
            weight._accum(g2.T @ x.data.reshape(-1, x.shape[-1]))
        if bias is not None and bias.requires_grad:
            bias._accum(g2.sum(axis=0))

    return _make(out, (x, weight, bias), backward, "linear")


FFT_CONV_MIN_KERNEL = 16


def _im2col(x, k, stride, t_out):
    """[B, Cin, T] -> [K*Cin, B*t_out], kernel-offset major."""
    span = stride * (t_out - 1) + 1
    cols = np.stack([x[:, :, j : j + span : stride] for j in range(k)], axis=0)
    return np.ascontiguousarray(cols.transpose(0, 2, 1, 3)).reshape(k * x.shape[1], x.shape[0] * t_out)


def _conv_direct(x, w, stride):
    o, i, k = w.shape
    t_out = (x.shape[2] - k) // stride + 1
    cols = _im2col(x, k, stride, t_out)
    w2 = w.transpose(0, 2, 1).reshape(o, k * i)
    out = (w2 @ cols).reshape(o, x.shape[0], t_out).transpose(1, 0, 2)
    return np.ascontiguousarray(out), cols


def _conv_direct_backward(x, w, g, stride, cols, need_x, need_w):
    o, i, k = w.shape
    b, _, t_out = g.shape
    g2 = np.ascontiguousarray(g.transpose(1, 0, 2)).reshape(o, b * t_out)
    gx = gw = None
    if need_w:
        gw = (g2 @ cols.T).reshape(o, k, i).transpose(0, 2, 1)
    if need_x:
        w2 = w.transpose(0, 2, 1).reshape(o, k * i)
        gcols = (w2.T @ g2).reshape(k, i, b, t_out).transpose(0, 2, 1, 3)
        gx = np.zeros_like(x)
        span = stride * (t_out - 1) + 1
        for j in range(k):
            gx[:, :, j : j + span : stride] += gcols[j]
    return gx, gw


def _conv_fft(x, w):
    k = w.shape[2]
    t_out = x.shape[2] - k + 1
    n = sfft.next_fast_len(x.shape[2] + k - 1, real=True)
    xf = sfft.rfft(x, n, axis=-1)
    wf = np.conj(sfft.rfft(w, n, axis=-1))
    if x.shape[1] == 1:
        yf = xf * wf[None, :, 0, :]
    else:
        yf = np.einsum("bif,oif->bof", xf, wf)
    return sfft.irfft(yf, n, axis=-1)[:, :, :t_out].astype(x.dtype), xf, n


def _conv_fft_backward(x, w, g, xf, n, need_x, need_w):
    k = w.shape[2]
    gf = sfft.rfft(g, n, axis=-1)
    gx = gw = None
    if need_w:
        if x.shape[1] == 1:
            cf = np.einsum("bof,bf->of", np.conj(gf), xf[:, 0])[:, None, :]
        else:
            cf = np.einsum("bof,bif->oif", np.conj(gf), xf)
        gw = sfft.irfft(cf, n, axis=-1)[:, :, :k].astype(w.dtype)
    if need_x:
        wf = sfft.rfft(w, n, axis=-1)
        yf = np.einsum("bof,oif->bif", gf, wf)
        gx = sfft.irfft(yf, n, axis=-1)[:, :, : x.shape[2]].astype(x.dtype)
    return gx, gw


def conv1d(x, weight, bias=None, stride=1, padding=0):
    """Cross-correlation of ``x`` [B, Cin, T] with ``weight`` [Cout, Cin, K]."""
    if x.ndim != 3 or weight.ndim != 3 or x.shape[1] != weight.shape[1]:
        raise ValueError(f"conv1d shape mismatch: x {x.shape}, weight {weight.shape}")
    xd = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    if xd.shape[2] < weight.shape[2]:
        raise ValueError(f"conv1d input of length {xd.shape[2]} shorter than kernel {weight.shape[2]}")
    use_fft = stride == 1 and weight.shape[2] >= FFT_CONV_MIN_KERNEL
    if use_fft:
        out, xf, n = _conv_fft(xd, weight.data)
    else:
        out, cols = _conv_direct(xd, weight.data, stride)
    if bias is not None:
        out = out + bias.data[None, :, None]

    def backward(g):
        if use_fft:
            gx, gw = _conv_fft_backward(xd, weight.data, g, xf, n, x.requires_grad, weight.requires_grad)
        else:
            gx, gw = _conv_direct_backward(xd, weight.data, g, stride, cols, x.requires_grad, weight.requires_grad)
        if x.requires_grad:
            x._accum(gx[:, :, padding : padding + x.shape[2]] if padding else gx)
        if weight.requires_grad:
            weight._accum(gw)
        if bias is not None and bias.requires_grad:
            bias._accum(g.sum(axis=(0, 2)))

    return _make(out, (x, weight, bias), backward, "conv1d")


def maxpool1d(x, width):
    """Non-overlapping max pooling over the last axis; ties go to the first index."""
    t_out = x.shape[-1] // width
    if t_out == 0:
        raise ValueError(f"maxpool1d width {width} exceeds length {x.shape[-1]}")
    blocks = x.data[..., : t_out * width].reshape(*x.shape[:-1], t_out, width)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        gb = np.zeros(blocks.shape, dtype=x.dtype)
        np.put_along_axis(gb, idx[..., None], g[..., None], axis=-1)
        full = np.zeros(x.shape, dtype=x.dtype)
        full[..., : t_out * width] = gb.reshape(*x.shape[:-1], t_out * width)
        x._accum(full)

    return _make(out, (x,), backward, "maxpool1d")


def batchnorm1d(x, gamma, beta, running_mean, running_var, train, momentum=0.1, eps=1e-5):
    """Batch norm over all axes except 1 (channels).

    ``running_mean``/``running_var`` are numpy buffers updated in place
    in train mode (unbiased variance, as is conventional).
    """
    axes = (0,) + tuple(range(2, x.ndim))
    shape = [1] * x.ndim
    shape[1] = x.shape[1]
    if train:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        n = x.data.size // x.shape[1]
        running_mean *= 1 - momentum
        running_mean += momentum * mu
        running_var *= 1 - momentum
        running_var += momentum * var * (n / max(n - 1, 1))
    else:
        mu, var = running_mean, running_var
    inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = (x.data - mu.reshape(shape)) * inv.reshape(shape)
    out = xhat * gamma.data.reshape(shape) + beta.data.reshape(shape)

    def backward(g):
        if gamma.requires_grad:
            gamma._accum((g * xhat).sum(axis=axes))
        if beta.requires_grad:
            beta._accum(g.sum(axis=axes))
        if x.requires_grad:
            gx_hat = g * gamma.data.reshape(shape)
            if train:
                m = gx_hat.mean(axis=axes, keepdims=True)
                mx = (gx_hat * xhat).mean(axis=axes, keepdims=True)
                x._accum((gx_hat - m - xhat * mx) * inv.reshape(shape))
            else:
                x._accum(gx_hat * inv.reshape(shape))

    return _make(out.astype(x.dtype), (x, gamma, beta), backward, "batchnorm1d")


# -------------------------------------------------------------- recurrent


def _gru_forward(xp, h, w_hh, b_hh):
    """One GRU step given the precomputed input projection ``xp`` [B, 3H]."""
    hsz = h.shape[1]
    hp = h @ w_hh.T + b_hh
    r = _sigmoid(xp[:, :hsz] + hp[:, :hsz])
    z = _sigmoid(xp[:, hsz : 2 * hsz] + hp[:, hsz : 2 * hsz])
    n = np.tanh(xp[:, 2 * hsz :] + r * hp[:, 2 * hsz :])
    h_new = (1 - z) * n + z * h
    return h_new, (r, z, n, hp)


def _gru_backward(g, h, cache, w_hh):
    """Gradients w.r.t. (input projection, previous hidden, hidden projection)."""
    r, z, n, hp = cache
    hsz = h.shape[1]
    dn = g * (1 - z)
    dz = g * (h - n)
    dh = g * z
    dn_pre = dn * (1 - n * n)
    dr = dn_pre * hp[:, 2 * hsz :]
    dr_pre = dr * r * (1 - r)
    dz_pre = dz * z * (1 - z)
    dxp = np.concatenate([dr_pre, dz_pre, dn_pre], axis=1)
    dhp = np.concatenate([dr_pre, dz_pre, dn_pre * r], axis=1)
    dh = dh + dhp @ w_hh
    return dxp, dh, dhp


def gru_cell(x, h, w_ih, w_hh, b_ih, b_hh):
    """Single GRU step with reset/update/candidate gates (PyTorch layout)."""
    xp = x.data @ w_ih.data.T + b_ih.data
    h_new, cache = _gru_forward(xp, h.data, w_hh.data, b_hh.data)

    def backward(g):
        dxp, dh, dhp = _gru_backward(g, h.data, cache, w_hh.data)
        if x.requires_grad:
            x._accum(dxp @ w_ih.data)
        if h.requires_grad:
            h._accum(dh)
        if w_ih.requires_grad:
            w_ih._accum(dxp.T @ x.data)
        if b_ih.requires_grad:
            b_ih._accum(dxp.sum(axis=0))
        if w_hh.requires_grad:
            w_hh._accum(dhp.T @ h.data)
        if b_hh.requires_grad:
            b_hh._accum(dhp.sum(axis=0))

    return _make(h_new, (x, h, w_ih, w_hh, b_ih, b_hh), backward, "gru_cell")


def gru_sequence(x, h0, w_ih, w_hh, b_ih, b_hh):
    """Run :func:`gru_cell` over ``x`` [B, T, I]; returns the last hidden state.

    Fused so that a long sequence records one graph node instead of T.
    """
    b, t, _ = x.shape
    xp = x.data @ w_ih.data.T + b_ih.data
    hs = [h0.data]
    caches = []
    for step in range(t):
        h_new, cache = _gru_forward(xp[:, step], hs[-1], w_hh.data, b_hh.data)
        hs.append(h_new)
        caches.append(cache)

    def backward(g):
        dxp_all = np.zeros_like(xp)
        dw_hh = np.zeros_like(w_hh.data)
        db_hh = np.zeros_like(b_hh.data)
        dh = g
        for step in reversed(range(t)):
            dxp, dh, dhp = _gru_backward(dh, hs[step], caches[step], w_hh.data)
            dxp_all[:, step] = dxp
            dw_hh += dhp.T @ hs[step]
            db_hh += dhp.sum(axis=0)
        flat = dxp_all.reshape(b * t, -1)
        if x.requires_grad:
            x._accum(dxp_all @ w_ih.data)
        if h0.requires_grad:
            h0._accum(dh)
        if w_ih.requires_grad:
            w_ih._accum(flat.T @ x.data.reshape(b * t, -1))
        if b_ih.requires_grad:
            b_ih._accum(flat.sum(axis=0))
        if w_hh.requires_grad:
            w_hh._accum(dw_hh)
        if b_hh.requires_grad:
            b_hh._accum(db_hh)

    return _make(hs[-1], (x, h0, w_ih, w_hh, b_ih, b_hh), backward, "gru_sequence")


# ------------------------------------------------------------------ losses


def softmax_cross_entropy(logits, classes):
    """Per-row softmax cross-entropy; 1-D logits give a scalar."""
    single = logits.ndim == 1
    z = logits.data[None] if single else logits.data
    c = np.atleast_1d(np.asarray(classes, dtype=np.int64))
    if c.shape[0] != z.shape[0] or np.any(c < 0) or np.any(c >= z.shape[1]):
        raise ValueError(f"class indices {c} incompatible with logits of shape {logits.shape}")
    shifted = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(z.shape[0])
    loss = logsum - shifted[rows, c]
    probs = np.exp(shifted - logsum[:, None])

    def backward(g):
        d = probs.copy()
        d[rows, c] -= 1
        d *= np.reshape(g, (-1, 1))
        logits._accum(d[0] if single else d)

    return _make(loss[0] if single else loss, (logits,), backward, "softmax_cross_entropy")


def binary_cross_entropy_with_logit(logit, label):
    """Elementwise ``-[y log s(z) + (1-y) log(1-s(z))]`` in a stable form."""
    z = logit.data
    y = np.asarray(label, dtype=z.dtype)
    loss = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    s = _sigmoid(z)

    def backward(g):
        logit._accum(g * (s - y))

    return _make(loss.astype(z.dtype), (logit,), backward, "binary_cross_entropy_with_logit")


# ------------------------------------------------------------ sinc filters


def sinc_filters(low_param, band_param, kernel_size, sample_rate, min_low_hz, min_band_hz):
    """Band-pass sinc kernels [F, K] from unconstrained cutoff parameters.

    f_low = min_low_hz + |low_param| (capped at nyquist - min_band_hz) and
    f_high = min(f_low + min_band_hz + |band_param|, nyquist), so every
    filter satisfies min_low_hz <= f_low < f_high <= nyquist.
    """
    if kernel_size % 2 == 0:
        raise ValueError("sinc kernel_size must be odd")
    nyq = sample_rate / 2.0
    pl, pb = low_param.data, band_param.data
    raw_low = min_low_hz + np.abs(pl)
    low_cap = nyq - min_band_hz
    low = np.minimum(raw_low, low_cap)
    raw_high = low + min_band_hz + np.abs(pb)
    high = np.minimum(raw_high, nyq)
    band = high - low
    t = np.arange(kernel_size) - (kernel_size - 1) / 2
    nvec = 2 * np.pi * t / sample_rate
    window = np.hamming(kernel_size)
    center = t == 0
    safe_n = np.where(center, 1.0, nvec)
    sh, sl = np.sin(high[:, None] * safe_n), np.sin(low[:, None] * safe_n)
    g_raw = np.where(center, 2 * band[:, None], 2 * (sh - sl) / safe_n)
    scale = window / (2 * band[:, None])
    out = g_raw * scale

    def backward(g):
        dg_dhigh = np.where(center, 2.0, 2 * np.cos(high[:, None] * safe_n))
        dg_dlow = np.where(center, -2.0, -2 * np.cos(low[:, None] * safe_n))
        # d out / d high = scale*dg_dhigh - out/band ; d out / d low = scale*dg_dlow + out/band
        d_high = np.sum(g * (scale * dg_dhigh - out / band[:, None]), axis=1)
        d_low = np.sum(g * (scale * dg_dlow + out / band[:, None]), axis=1)
        high_free = raw_high < nyq
        low_free = raw_low < low_cap
        d_low_total = (d_low + np.where(high_free, d_high, 0.0)) * np.where(low_free, 1.0, 0.0)
        d_band_total = np.where(high_free, d_high, 0.0)
        if low_param.requires_grad:
            low_param._accum((d_low_total * np.sign(pl)).astype(pl.dtype))
        if band_param.requires_grad:
            band_param._accum((d_band_total * np.sign(pb)).astype(pb.dtype))

    return _make(out.astype(pl.dtype), (low_param, band_param), backward, "sinc_filters")


def sinc_bands(low_param, band_param, sample_rate, min_low_hz, min_band_hz):
    """Effective (f_low, f_high) per filter, matching :func:`sinc_filters`."""
    nyq = sample_rate / 2.0
    low = np.minimum(min_low_hz + np.abs(np.asarray(low_param)), nyq - min_band_hz)
    high = np.minimum(low + min_band_hz + np.abs(np.asarray(band_param)), nyq)
    return low, high


# ------------------------------------------------------------- parameters

GROUPS = ("encoder", "binary", "vocoder")


class ParamStore:
    """Named parameters partitioned into encoder / binary / vocoder groups,
    plus non-trainable buffers (batch-norm running statistics)."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.groups: dict[str, str] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def add(self, name, value, group):
        if group not in GROUPS:
            raise ValueError(f"unknown parameter group {group!r}")
        if name in self.params or name in self.buffers:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(value, requires_grad=True)
        self.params[name] = t
        self.groups[name] = group
        return t

    def add_buffer(self, name, value):
        if name in self.params or name in self.buffers:
            raise ValueError(f"duplicate buffer name {name!r}")
        self.buffers[name] = np.array(value)
        return self.buffers[name]

    def __getitem__(self, name):
        return self.params[name]

    def __iter__(self):
        return iter(self.params)

    def names(self, group=None):
        return [n for n in self.params if group is None or self.groups[n] == group]

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def grads(self, group=None):
        return {n: (self.params[n].grad if self.params[n].grad is not None else np.zeros_like(self.params[n].data))
                for n in self.names(group)}

    def astype(self, dtype):
        for t in self.params.values():
            t.data = t.data.astype(dtype)
        for n in self.buffers:
            self.buffers[n] = self.buffers[n].astype(dtype)
        return self

    def snapshot(self):
        """Deep copy of values (params and buffers) as plain arrays."""
        return ({n: t.data.copy() for n, t in self.params.items()},
                {n: b.copy() for n, b in self.buffers.items()})

    def load_snapshot(self, snap):
        params, buffers = snap
        for n, v in params.items():
            if self.params[n].shape != v.shape:
                raise ValueError(f"shape mismatch for {n}: {self.params[n].shape} vs {v.shape}")
            self.params[n].data = v.copy()
        for n, v in buffers.items():
            self.buffers[n][...] = v


# ------------------------------------------------------------------- Adam


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: ParamStore, state: AdamState, names=None):
    """One bias-corrected Adam update of ``names`` (default: all params)."""
    names = list(params.names()) if names is None else list(names)
    missing = [n for n in names if params[n].grad is None]
    if missing:
        raise GraphError(f"missing gradient for parameters: {', '.join(missing)}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1**state.step
    c2 = 1 - b2**state.step
    for n in names:
        p = params[n]
        g = p.grad
        m = state.m.setdefault(n, np.zeros_like(p.data))
        v = state.v.setdefault(n, np.zeros_like(p.data))
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        update = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data = (p.data - update).astype(p.data.dtype)
    return params, state


# --------------------------------------------------------------- gradcheck


def numerical_grad(fn, arrays, index, h=1e-5):
    """Central finite-difference gradient of scalar ``fn(*arrays)`` w.r.t. ``arrays[index]``."""
    x = arrays[index]
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = fn(*arrays)
        x[i] = old - h
        fm = fn(*arrays)
        x[i] = old
        grad[i] = (fp - fm) / (2 * h)
    return grad


def relative_error(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-8))


def check_gradients(build, arrays, h=1e-5):
    """Compare autodiff and finite-difference gradients.

    ``build`` maps a list of Tensors to a scalar Tensor. Returns the max
    relative error across all inputs.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    loss = build(*tensors)
    loss.backward()

    def value(*arrs):
        return float(build(*[Tensor(a) for a in arrs]).data)

    worst = 0.0
    for i, t in enumerate(tensors):
        analytic = t.grad if t.grad is not None else np.zeros_like(arrays[i])
        numeric = numerical_grad(value, arrays, i, h)
        worst = max(worst, relative_error(analytic, numeric))
    return worst
