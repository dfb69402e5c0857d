"""Finite-difference verification of every differentiable op and the model.

Used by the test-suite and by ``vocart gradcheck``. Each case builds a
scalar from random double-precision inputs; the analytic gradient from
:mod:`ndiff` is compared with central differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model as M
from . import ndiff as nd

H = 1e-5
ELEMENTWISE_TOL = 1e-4
COMPOSITE_TOL = 1e-3


def _probe(x, seed):
    """Contract an op output with fixed random weights so every entry matters."""
    return nd.sum(nd.mul(x, np.random.default_rng(seed).normal(size=x.shape)))


def _cases():
    """name -> (tolerance, make(rng) -> (build, arrays))."""

    # ops are looked up by name at call time so a patched op is the one checked
    def elementwise(name):
        def make(rng):
            w = int(rng.integers(1 << 31))
            return (lambda a: _probe(getattr(nd, name)(a), w)), [rng.normal(size=(3, 4))]
        return make

    def binary(name):
        def make(rng):
            w = int(rng.integers(1 << 31))
            return (lambda a, b: _probe(getattr(nd, name)(a, b), w)), [rng.normal(size=(3, 4)), rng.normal(size=(3, 4))]
        return make

    def make_leaky(rng):
        w = int(rng.integers(1 << 31))
        a = rng.normal(size=(3, 4))
        a = np.where(np.abs(a) < 0.05, 0.5, a)  # keep away from the kink
        return (lambda x: _probe(nd.leaky_relu(x, 0.3), w)), [a]

    def make_abs(rng):
        w = int(rng.integers(1 << 31))
        a = rng.normal(size=(3, 4))
        a = np.where(np.abs(a) < 0.05, 0.5, a)
        return (lambda x: _probe(nd.absolute(x), w)), [a]

    def make_matmul(rng):
        w = int(rng.integers(1 << 31))
        return (lambda a, b: _probe(nd.matmul(a, b), w)), [rng.normal(size=(3, 4)), rng.normal(size=(4, 2))]

    def make_linear(rng):
        w = int(rng.integers(1 << 31))
        return (lambda x, a, b: _probe(nd.linear(x, a, b), w)), [
            rng.normal(size=(2, 3, 4)), rng.normal(size=(5, 4)), rng.normal(size=5)]

    def make_conv(stride, padding, k, cin):
        def make(rng):
            w = int(rng.integers(1 << 31))
            return (lambda x, a, b: _probe(nd.conv1d(x, a, b, stride=stride, padding=padding), w)), [
                rng.normal(size=(2, cin, 40)), rng.normal(size=(3, cin, k)), rng.normal(size=3)]
        return make

    def make_pool(rng):
        w = int(rng.integers(1 << 31))
        return (lambda x: _probe(nd.maxpool1d(x, 3), w)), [rng.normal(size=(2, 3, 13))]

    def make_bn(train):
        def make(rng):
            w = int(rng.integers(1 << 31))
            rm, rv = rng.normal(size=3), rng.uniform(0.5, 2.0, size=3)

            def build(x, g, b):
                return _probe(nd.batchnorm1d(x, g, b, rm.copy(), rv.copy(), train), w)
            return build, [rng.normal(size=(4, 3, 5)), rng.normal(size=3), rng.normal(size=3)]
        return make

    def make_gru(rng):
        w = int(rng.integers(1 << 31))
        return (lambda *a: _probe(nd.gru_cell(*a), w)), [
            rng.normal(size=(2, 3)), rng.normal(size=(2, 4)), rng.normal(size=(12, 3)),
            rng.normal(size=(12, 4)), rng.normal(size=12), rng.normal(size=12)]

    def make_gru_seq(rng):
        w = int(rng.integers(1 << 31))
        return (lambda *a: _probe(nd.gru_sequence(*a), w)), [
            rng.normal(size=(2, 6, 3)), rng.normal(size=(2, 4)), rng.normal(size=(12, 3)),
            rng.normal(size=(12, 4)), rng.normal(size=12), rng.normal(size=12)]

    def make_ce(rng):
        c = rng.integers(0, 4, size=3)
        return (lambda z: nd.sum(nd.softmax_cross_entropy(z, c))), [rng.normal(size=(3, 4))]

    def make_bce(rng):
        y = rng.integers(0, 2, size=5)
        return (lambda z: nd.sum(nd.binary_cross_entropy_with_logit(z, y))), [rng.normal(size=5) * 2]

    def make_sum(rng):
        w = int(rng.integers(1 << 31))
        return (lambda x: _probe(nd.sum(x, axis=1), w)), [rng.normal(size=(3, 4))]

    def make_mean(rng):
        w = int(rng.integers(1 << 31))
        return (lambda x: _probe(nd.mean(x, axis=(0, 2)), w)), [rng.normal(size=(3, 4, 2))]

    def make_sinc(rng):
        w = int(rng.integers(1 << 31))
        low = rng.uniform(50, 5000, size=4)
        band = rng.uniform(100, 2000, size=4)
        return (lambda a, b: _probe(nd.sinc_filters(a, b, 31, 16000, 50.0, 50.0), w)), [low, band]

    def make_fms(rng):
        w = int(rng.integers(1 << 31))
        return (lambda y, a, b: _probe(M.fms(y, a, b)[0], w)), [
            rng.normal(size=(2, 3, 5)), rng.normal(size=(3, 3)), rng.normal(size=3)]

    def make_multitask(rng):
        y = np.array([0, 1, 1, 0])
        c = np.array([0, 1, 2, 0])
        lam = float(rng.uniform(0.1, 0.9))
        return (lambda b, m: M.multitask_loss(b, m, y, c, lam).total), [rng.normal(size=4), rng.normal(size=(4, 3))]

    return {
        "add": (ELEMENTWISE_TOL, binary("add")),
        "mul": (ELEMENTWISE_TOL, binary("mul")),
        "leaky_relu": (ELEMENTWISE_TOL, make_leaky),
        "abs": (ELEMENTWISE_TOL, make_abs),
        "sigmoid": (ELEMENTWISE_TOL, elementwise("sigmoid")),
        "tanh": (ELEMENTWISE_TOL, elementwise("tanh")),
        "sum": (ELEMENTWISE_TOL, make_sum),
        "mean": (ELEMENTWISE_TOL, make_mean),
        "matmul": (COMPOSITE_TOL, make_matmul),
        "linear": (COMPOSITE_TOL, make_linear),
        "conv1d": (COMPOSITE_TOL, make_conv(2, 1, 3, 2)),
        "conv1d_fft": (COMPOSITE_TOL, make_conv(1, 3, 17, 2)),
        "maxpool1d": (COMPOSITE_TOL, make_pool),
        "batchnorm1d_train": (COMPOSITE_TOL, make_bn(True)),
        "batchnorm1d_eval": (COMPOSITE_TOL, make_bn(False)),
        "gru_cell": (COMPOSITE_TOL, make_gru),
        "gru_sequence": (COMPOSITE_TOL, make_gru_seq),
        "softmax_cross_entropy": (COMPOSITE_TOL, make_ce),
        "binary_cross_entropy_with_logit": (COMPOSITE_TOL, make_bce),
        "sinc_filters": (COMPOSITE_TOL, make_sinc),
        "fms": (COMPOSITE_TOL, make_fms),
        "multitask_loss": (COMPOSITE_TOL, make_multitask),
    }


OP_CASES = _cases()


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def check_op(name, seeds=range(5)) -> CheckResult:
    tol, make = OP_CASES[name]
    worst = 0.0
    for seed in seeds:
        build, arrays = make(np.random.default_rng(seed))
        worst = max(worst, nd.check_gradients(build, arrays, H))
    return CheckResult(name, worst, tol)


def model_loss_fn(cfg, params, x, y, c, lam=0.5):
    """Scalar multitask loss of the full model in train mode.

    Batch-norm running buffers are restored after each evaluation so that
    repeated calls are pure.
    """
    buffers = {n: b.copy() for n, b in params.buffers.items()}

    def loss():
        e = M.forward_embed(x, params, cfg, train=True)
        out = M.multitask_loss(M.forward_binary(e, params), M.forward_vocoder(e, params), y, c, lam).total
        for n, b in buffers.items():
            params.buffers[n][...] = b
        return out

    return loss


def check_model(seed=0, per_param=4, cfg=None) -> CheckResult:
    """End-to-end finite-difference check of the reduced model.

    Probes ``per_param`` random coordinates of every parameter tensor.
    """
    cfg = cfg or M.reduced_config()
    rng = np.random.default_rng(seed)
    params = M.init_params(cfg, seed)
    x = rng.normal(size=(3, cfg.input_length)) * 0.3
    y, c = np.array([0, 1, 1]), np.array([0, 1, 2])
    loss = model_loss_fn(cfg, params, x, y, c)
    params.zero_grad()
    loss().backward()
    worst = 0.0
    for name in params.names():
        p = params[name]
        analytic = p.grad.reshape(-1)
        picks = rng.choice(p.data.size, size=min(per_param, p.data.size), replace=False)
        num, ana = [], []
        for i in picks:
            flat = p.data.reshape(-1)
            old = flat[i]
            flat[i] = old + H
            fp = loss().item()
            flat[i] = old - H
            fm = loss().item()
            flat[i] = old
            num.append((fp - fm) / (2 * H))
            ana.append(analytic[i])
        worst = max(worst, nd.relative_error(ana, num))
    return CheckResult("model", worst, COMPOSITE_TOL)


def run_all(seeds=range(5), include_model=True):
    results = [check_op(name, seeds) for name in OP_CASES]
    if include_model:
        model_results = [check_model(seed) for seed in seeds]
        worst = max(model_results, key=lambda r: r.max_rel_error)
        results.append(worst)
    return results


def format_table(results) -> str:
    lines = [f"{'op':34s} {'max rel err':>12s} {'tol':>8s}  status"]
    for r in results:
        lines.append(f"{r.name:34s} {r.max_rel_error:12.3e} {r.tolerance:8.0e}  {'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)
