"""Finite-difference gradient suite over every differentiable primitive and the Lite composite.

Each check builds float64 inputs from a seed, wraps every differentiable
input as a ``Param`` and compares the analytic backward pass against
central differences through ``core.grad_check``.  The loss is a random
projection ``sum(R * out)`` so every output element contributes.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional

import numpy as np

from . import core, pa, vap
from .core import Param
from .model import NetConfig, PANNet, SamplerConfig

PRIMITIVE_TOL = 1e-6
COMPOSITE_TOL = 1e-5
FD_EPS = 1e-5


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    tol: float

    @property
    def ok(self) -> bool:
        return self.max_rel_err < self.tol


def _wrap(**arrays) -> Dict[str, Param]:
    return {k: Param(k, np.asarray(v, dtype=np.float64)) for k, v in arrays.items()}


def _projected(forward: Callable, backward: Callable, params: Dict[str, Param], rng):
    """fn() for grad_check: loss = sum(R * forward(...)), grads from backward(R, ...)."""
    r = rng.standard_normal(np.shape(forward(params)))

    def fn():
        out = forward(params)
        for k, g in backward(r, params).items():
            params[k].grad += g
        return float(np.sum(r * out))

    return fn


def _away_from_kinks(x, margin=1e-3):
    """Nudge values off 0 so relu / max ties are not straddled by the finite difference."""
    return np.where(np.abs(x) < margin, x + np.sign(x + 1e-30) * 2 * margin, x)


def jitter_biases(params: Dict[str, Param], rng, scale: float = 0.1) -> None:
    """Zero-initialised biases put dead channels exactly on the relu kink; move them off it."""
    for p in params.values():
        if p.name.endswith("bias"):
            p.value[...] = rng.normal(0, scale, p.shape)


def check_conv2d(seed: int, stride: int = 1, padding: int = 1) -> float:
    rng = np.random.default_rng(seed)
    p = _wrap(x=rng.standard_normal((2, 3, 7, 6)), w=rng.standard_normal((4, 3, 3, 3)),
              b=rng.standard_normal(4))

    def fwd(q):
        return core.conv2d(q["x"].value, q["w"].value, q["b"].value, stride, padding)

    def bwd(r, q):
        dx, dw, db = core.conv2d_backward(r, q["x"].value, q["w"].value, stride, padding)
        return {"x": dx, "w": dw, "b": db}

    return core.grad_check(_projected(fwd, bwd, p, rng), p, FD_EPS)


def check_maxpool2d(seed: int) -> float:
    rng = np.random.default_rng(seed)
    # distinct values keep every window's max unique under +-eps
    x = rng.permutation(2 * 3 * 6 * 8).reshape(2, 3, 6, 8) * 0.01 + rng.uniform(0, 1e-3, (2, 3, 6, 8))
    p = _wrap(x=x)
    fwd = lambda q: core.maxpool2d(q["x"].value)
    bwd = lambda r, q: {"x": core.maxpool2d_backward(r, q["x"].value)}
    return core.grad_check(_projected(fwd, bwd, p, rng), p, FD_EPS)


def check_dilated_maxpool_time(seed: int, kernel: int = 2, dilation: int = 2) -> float:
    rng = np.random.default_rng(seed)
    n, d = 8, 5
    x = rng.permutation(n * d).reshape(n, d) * 0.01 + rng.uniform(0, 1e-3, (n, d))
    p = _wrap(x=x)
    fwd = lambda q: core.dilated_maxpool_time(q["x"].value, kernel, 1, dilation)
    bwd = lambda r, q: {"x": core.dilated_maxpool_time_backward(r, q["x"].value, kernel, 1, dilation)}
    return core.grad_check(_projected(fwd, bwd, p, rng), p, FD_EPS)


def check_global_avg_pool(seed: int) -> float:
    rng = np.random.default_rng(seed)
    p = _wrap(x=rng.standard_normal((3, 4, 5, 6)))
    fwd = lambda q: core.global_avg_pool(q["x"].value)
    bwd = lambda r, q: {"x": core.global_avg_pool_backward(r, q["x"].value)}
    return core.grad_check(_projected(fwd, bwd, p, rng), p, FD_EPS)


def check_fc(seed: int) -> float:
    rng = np.random.default_rng(seed)
    p = _wrap(x=rng.standard_normal((3, 5)), w=rng.standard_normal((4, 5)), b=rng.standard_normal(4))

    def bwd(r, q):
        dx, dw, db = core.fc_backward(r, q["x"].value, q["w"].value)
        return {"x": dx, "w": dw, "b": db}

    fwd = lambda q: core.fc(q["x"].value, q["w"].value, q["b"].value)
    return core.grad_check(_projected(fwd, bwd, p, rng), p, FD_EPS)


def check_softmax(seed: int) -> float:
    rng = np.random.default_rng(seed)
    p = _wrap(x=rng.standard_normal((3, 6)))
    fwd = lambda q: core.softmax(q["x"].value)
    bwd = lambda r, q: {"x": core.softmax_backward(r, core.softmax(q["x"].value))}
    return core.grad_check(_projected(fwd, bwd, p, rng), p, FD_EPS)


def check_relu(seed: int) -> float:
    rng = np.random.default_rng(seed)
    p = _wrap(x=_away_from_kinks(rng.standard_normal((4, 7))))
    fwd = lambda q: core.relu(q["x"].value)
    bwd = lambda r, q: {"x": core.relu_backward(r, q["x"].value)}
    return core.grad_check(_projected(fwd, bwd, p, rng), p, FD_EPS)


def check_sigmoid(seed: int) -> float:
    rng = np.random.default_rng(seed)
    p = _wrap(x=3 * rng.standard_normal((4, 7)))
    fwd = lambda q: core.sigmoid(q["x"].value)
    bwd = lambda r, q: {"x": core.sigmoid_backward(r, core.sigmoid(q["x"].value))}
    return core.grad_check(_projected(fwd, bwd, p, rng), p, FD_EPS)


def check_mul(seed: int) -> float:
    rng = np.random.default_rng(seed)
    p = _wrap(a=rng.standard_normal((3, 4)), b=rng.standard_normal((3, 4)))

    def bwd(r, q):
        da, db = core.mul_backward(r, q["a"].value, q["b"].value)
        return {"a": da, "b": db}

    fwd = lambda q: core.mul(q["a"].value, q["b"].value)
    return core.grad_check(_projected(fwd, bwd, p, rng), p, FD_EPS)


def check_channel_mean(seed: int) -> float:
    rng = np.random.default_rng(seed)
    p = _wrap(x=rng.standard_normal((2, 5, 4, 3)))
    fwd = lambda q: core.channel_mean(q["x"].value)
    bwd = lambda r, q: {"x": core.channel_mean_backward(r, q["x"].value)}
    return core.grad_check(_projected(fwd, bwd, p, rng), p, FD_EPS)


def check_channel_l2(seed: int) -> float:
    rng = np.random.default_rng(seed)
    p = _wrap(x=rng.standard_normal((2, 5, 4, 3)))
    fwd = lambda q: core.channel_l2(q["x"].value)

    def bwd(r, q):
        x = q["x"].value
        return {"x": core.channel_l2_backward(r, x, core.channel_l2(x))}

    return core.grad_check(_projected(fwd, bwd, p, rng), p, FD_EPS)


def check_timescale_pool(seed: int, n: int = 8) -> float:
    rng = np.random.default_rng(seed)
    x = rng.permutation(n * 4).reshape(n, 4) * 0.01 + rng.uniform(0, 1e-3, (n, 4))
    p = _wrap(x=x)
    fwd = lambda q: vap.timescale_pool(q["x"].value).v
    bwd = lambda r, q: {"x": vap.timescale_pool_backward(r, q["x"].value)}
    return core.grad_check(_projected(fwd, bwd, p, rng), p, FD_EPS)


def check_pa_module(seed: int, encoding=pa.Encoding.E1, depth: int = 1) -> float:
    rng = np.random.default_rng(seed)
    cfg = pa.PAConfig(depth=depth, channels=3, kernel=3, encoding=encoding)
    p = pa.init_pa_weights(cfg, seed, np.float64)
    for prm in p.values():
        prm.value[...] = rng.standard_normal(prm.value.shape) * 0.5
    p["x"] = Param("x", rng.standard_normal((2, 3, 3, 6, 5)))
    r = rng.standard_normal((2, 2, 6, 5))

    def fn():
        out, cache = pa.pa_encode_forward(p["x"].value, p, cfg)
        p["x"].grad += pa.pa_encode_backward(r, cache, p, cfg, need_input_grad=True)
        return float(np.sum(r * out))

    return core.grad_check(fn, p, FD_EPS)


def check_vap_head(seed: int, n: int = 8, d: int = 4, c: int = 3) -> float:
    rng = np.random.default_rng(seed)
    vp = vap.VAPParams.init(n - 1, d, c, alpha=2, seed=seed, dtype=np.float64)
    params = vp.params()
    for prm in params.values():
        prm.value[...] = rng.standard_normal(prm.value.shape) * 0.5
    f = rng.permutation(n * d).reshape(n, d) * 0.05 + rng.uniform(0, 1e-3, (n, d))
    params["f"] = Param("f", f)
    r = rng.standard_normal(c)

    def fn():
        s, _, cache = vap.vap_forward(params["f"].value, vp)
        params["f"].grad += vap.vap_backward(r, cache, vp)
        return float(np.sum(r * s))

    return core.grad_check(fn, params, FD_EPS)


def check_lite_composite(seed: int, max_entries: Optional[int] = 12) -> float:
    """Cross-entropy of a small PAN_Lite (PA, backbone, VAP) on 16x16 frames, N=4, m=2."""
    rng = np.random.default_rng(seed)
    cfg = NetConfig(sampler=SamplerConfig(N=4, m=2), widths=(4, 6, 8), num_classes=4)
    net = PANNet(cfg, seed=seed, dtype=np.float64)
    jitter_biases(net.params, rng)
    stacks = rng.random((4, 2, 3, 16, 16))
    label = int(rng.integers(0, 4))
    return core.grad_check(lambda: net.loss_and_grad(stacks, label)[0], net.params, FD_EPS,
                           max_entries=max_entries, seed=seed)


PRIMITIVES: Dict[str, Callable[[int], float]] = {
    "conv2d": check_conv2d,
    "conv2d_stride2": lambda s: check_conv2d(s, stride=2, padding=1),
    "maxpool2d": check_maxpool2d,
    "dilated_maxpool_time": check_dilated_maxpool_time,
    "global_avg_pool": check_global_avg_pool,
    "fc": check_fc,
    "softmax": check_softmax,
    "relu": check_relu,
    "sigmoid": check_sigmoid,
    "mul": check_mul,
    "channel_mean": check_channel_mean,
    "channel_l2": check_channel_l2,
    "timescale_pool": check_timescale_pool,
    "pa_e1": check_pa_module,
    "pa_e2": lambda s: check_pa_module(s, pa.Encoding.E2),
    "pa_depth2": lambda s: check_pa_module(s, depth=2),
    "vap_head": check_vap_head,
}


def run_suite(seed: int = 0, seeds_per_check: int = 1) -> List[CheckResult]:
    out = []
    for name, check in PRIMITIVES.items():
        worst = max(check(seed + k) for k in range(seeds_per_check))
        out.append(CheckResult(name, worst, PRIMITIVE_TOL))
    out.append(CheckResult("pan_lite", check_lite_composite(seed), COMPOSITE_TOL))
    return out
