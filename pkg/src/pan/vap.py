"""Various-timescale aggregation pooling (VAP) head.

Frame features ``f`` ([N, d]) are max-pooled over time at pyramidal
timescales k = 1, 2, 4, ..., N/2.  Scale k keeps k rows, row j pooling the
frames whose index is congruent to j mod k, which gives T = N-1 rows in
total.  A two-layer perceptron over the per-row feature means yields a
softmax weight per row; the weighted row sum is the clip feature, and a
bias-free linear layer maps it to class scores.

``avg_forward``/``avg_backward`` provide the plain temporal-average head used
as the ablation baseline.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from . import core
from .core import Param


def is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def timescales(N: int) -> List[int]:
    if not is_power_of_two(N) or N < 2:
        raise ValueError(f"pyramidal timescales need N a power of two >= 2, got {N}")
    return [2 ** i for i in range(int(np.log2(N)))]


@dataclass
class TimescaleBank:
    v: np.ndarray                       # [T, d]
    scales: List[Tuple[int, int]]       # (k, offset) per row
    N: int

    @property
    def T(self) -> int:
        return self.v.shape[0]


def timescale_pool(f: np.ndarray) -> TimescaleBank:
    if f.ndim != 2:
        raise ValueError(f"expected [N, d] frame features, got {f.shape}")
    N = f.shape[0]
    rows, scales = [], []
    for k in timescales(N):
        rows.append(core.dilated_maxpool_time(f, kernel=N // k, stride=1, dilation=k))
        scales.extend((k, j) for j in range(k))
    return TimescaleBank(v=np.concatenate(rows, axis=0), scales=scales, N=N)


def timescale_pool_backward(dv: np.ndarray, f: np.ndarray) -> np.ndarray:
    N = f.shape[0]
    df = np.zeros_like(f)
    r = 0
    for k in timescales(N):
        df += core.dilated_maxpool_time_backward(dv[r:r + k], f, kernel=N // k, stride=1, dilation=k)
        r += k
    return df


def shrink(bank: TimescaleBank) -> np.ndarray:
    """Per-row mean over the feature axis: [T, d] -> [T, 1]."""
    return bank.v.mean(axis=1, keepdims=True)


@dataclass
class VAPParams:
    W1: Param
    W2: Param
    b1: Param
    b2: Param
    W3: Param
    prefix: str = field(default="head", repr=False)

    @classmethod
    def init(cls, T: int, d: int, c: int, alpha: int = 4, seed: int = 0,
             dtype=core.DEFAULT_DTYPE, prefix: str = "head") -> "VAPParams":
        if c < 2:
            raise ValueError("need at least two classes")
        rng = np.random.default_rng(seed)

        def uni(shape, fan_in):
            b = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-b, b, shape).astype(dtype)

        h = alpha * T
        return cls(
            W1=Param(f"{prefix}.W1", uni((h, T), T)),
            W2=Param(f"{prefix}.W2", uni((T, h), h)),
            b1=Param(f"{prefix}.b1", np.zeros(h, dtype)),
            b2=Param(f"{prefix}.b2", np.zeros(T, dtype)),
            W3=Param(f"{prefix}.W3", uni((c, d), d)),
            prefix=prefix,
        )

    @classmethod
    def from_params(cls, params: Dict[str, Param], prefix: str = "head") -> "VAPParams":
        vp = cls(*(params[f"{prefix}.{n}"] for n in ("W1", "W2", "b1", "b2", "W3")), prefix=prefix)
        vp.validate()
        return vp

    def validate(self) -> None:
        h, T = self.W1.shape
        if self.W2.shape != (T, h) or self.b1.shape != (h,) or self.b2.shape != (T,):
            raise ValueError(f"inconsistent VAP shapes W1={self.W1.shape} W2={self.W2.shape}")
        if h % T:
            raise ValueError(f"hidden width {h} is not a multiple of T={T}")
        if self.W3.shape[0] < 2:
            raise ValueError("W3 must map to at least two classes")

    @property
    def T(self) -> int:
        return self.W1.shape[1]

    @property
    def alpha(self) -> int:
        return self.W1.shape[0] // self.W1.shape[1]

    def params(self) -> Dict[str, Param]:
        return {p.name: p for p in (self.W1, self.W2, self.b1, self.b2, self.W3)}


def weight_perception(z: np.ndarray, vp: VAPParams) -> np.ndarray:
    if z.shape != (vp.T, 1):
        raise ValueError(f"descriptor shape {z.shape} does not match T={vp.T}")
    h = core.relu(core.fc(z[:, 0], vp.W1.value, vp.b1.value))
    return core.softmax(core.fc(h, vp.W2.value, vp.b2.value))[:, None]


def aggregate(w: np.ndarray, bank: TimescaleBank) -> np.ndarray:
    """Weighted row sum of the bank: [T,1] x [T,d] -> [d]."""
    return w[:, 0] @ bank.v


def predict(f_g: np.ndarray, vp: VAPParams) -> np.ndarray:
    return core.fc(f_g, vp.W3.value)


def vap_forward(f: np.ndarray, vp: VAPParams):
    """Returns ``(scores [c], w [T,1], cache)``."""
    bank = timescale_pool(f)
    if bank.T != vp.T:
        raise ValueError(f"{f.shape[0]} frames give T={bank.T} rows but the head expects T={vp.T}")
    z = shrink(bank)
    pre = core.fc(z[:, 0], vp.W1.value, vp.b1.value)
    h = core.relu(pre)
    w = core.softmax(core.fc(h, vp.W2.value, vp.b2.value))
    fg = w @ bank.v
    s = predict(fg, vp)
    cache = dict(f=f, bank=bank, z=z, pre=pre, h=h, w=w, fg=fg)
    return s, w[:, None], cache


def vap_backward(ds: np.ndarray, cache, vp: VAPParams) -> np.ndarray:
    """Accumulates head gradients into ``vp``; returns d(frame features)."""
    v = cache["bank"].v
    w, fg, h, pre, z = cache["w"], cache["fg"], cache["h"], cache["pre"], cache["z"]
    dfg, dW3, _ = core.fc_backward(ds, fg, vp.W3.value)
    vp.W3.grad += dW3
    dw = v @ dfg
    dv = np.outer(w, dfg)
    do = core.softmax_backward(dw, w)
    dh, dW2, db2 = core.fc_backward(do, h, vp.W2.value)
    vp.W2.grad += dW2
    vp.b2.grad += db2
    dpre = core.relu_backward(dh, pre)
    dz, dW1, db1 = core.fc_backward(dpre, z[:, 0], vp.W1.value)
    vp.W1.grad += dW1
    vp.b1.grad += db1
    dv += dz[:, None] / v.shape[1]
    return timescale_pool_backward(dv, cache["f"])


def init_avg_params(d: int, c: int, seed: int = 0, dtype=core.DEFAULT_DTYPE,
                    prefix: str = "head") -> Dict[str, Param]:
    rng = np.random.default_rng(seed)
    b = 1.0 / np.sqrt(d)
    return {f"{prefix}.W3": Param(f"{prefix}.W3", rng.uniform(-b, b, (c, d)).astype(dtype))}


def avg_forward(f: np.ndarray, W3: Param):
    """Temporal average consensus: scores = W3 . mean_t f."""
    fg = f.mean(axis=0)
    return core.fc(fg, W3.value), dict(f=f, fg=fg)


def avg_backward(ds: np.ndarray, cache, W3: Param) -> np.ndarray:
    dfg, dW3, _ = core.fc_backward(ds, cache["fg"], W3.value)
    W3.grad += dW3
    f = cache["f"]
    return np.broadcast_to(dfg / f.shape[0], f.shape).copy()
