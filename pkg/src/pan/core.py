"""Dense tensor math with hand-written reverse-mode gradients.

Tensors are plain numpy arrays. Every differentiable op ``f`` has a matching
``f_backward(dout, *inputs)`` that returns gradients with respect to the
inputs; composites chain these explicitly, there is no tape.

Shapes must match exactly. Nothing here broadcasts.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DEFAULT_DTYPE = np.float32

# im2col tiles are kept near this many elements so they stay cache resident
_COL_CHUNK = 1 << 16


@dataclass
class Param:
    name: str
    value: np.ndarray
    grad: np.ndarray = field(default=None, repr=False)
    velocity: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.grad.shape != self.value.shape:
            raise ValueError(f"{self.name}: grad shape {self.grad.shape} != value shape {self.value.shape}")

    @property
    def shape(self):
        return self.value.shape

    @property
    def size(self) -> int:
        return int(self.value.size)

    def zero_grad(self) -> None:
        self.grad[...] = 0


Params = Dict[str, Param]


def make_params(arrays: Dict[str, np.ndarray]) -> Params:
    return {name: Param(name, value) for name, value in arrays.items()}


def param_count(params: Params) -> int:
    return sum(p.size for p in params.values())


def zero_grads(params: Params) -> None:
    for p in params.values():
        p.zero_grad()


def cast_params(params: Params, dtype) -> Params:
    """Copy of ``params`` with values cast to ``dtype`` (fresh grads)."""
    return {k: Param(k, p.value.astype(dtype)) for k, p in params.items()}


def _require_same_shape(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {a.shape} vs {b.shape} (no broadcasting)")


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def _check_conv_args(x, w, b, stride, padding):
    if x.ndim not in (3, 4):
        raise ValueError(f"conv2d expects [C,H,W] or [B,C,H,W] input, got shape {x.shape}")
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ValueError(f"conv2d weights must be [C_out,C_in,k,k], got {w.shape}")
    if x.shape[-3] != w.shape[1]:
        raise ValueError(
            f"conv2d channel mismatch: input {x.shape} has {x.shape[-3]} channels, "
            f"weights {w.shape} expect {w.shape[1]}")
    if w.shape[2] % 2 == 0:
        raise ValueError(f"conv2d kernel size must be odd, got {w.shape[2]}")
    if b is not None and b.shape != (w.shape[0],):
        raise ValueError(f"conv2d bias shape {b.shape} does not match weights {w.shape}")
    if stride < 1 or padding < 0:
        raise ValueError(f"invalid stride={stride} / padding={padding}")
    k = w.shape[2]
    if x.shape[-2] + 2 * padding < k or x.shape[-1] + 2 * padding < k:
        raise ValueError(f"kernel {k} larger than padded input {x.shape}")


def _row_blocks(ho: int, wo: int, kdim: int):
    rows = max(1, min(ho, _COL_CHUNK // max(1, wo * kdim)))
    for r0 in range(0, ho, rows):
        yield r0, min(ho, r0 + rows)


def _windows(xp: np.ndarray, k: int, stride: int) -> np.ndarray:
    # [C, Hp, Wp] -> [C, k, k, Ho, Wo] view
    v = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::stride, ::stride]
    return v.transpose(0, 3, 4, 1, 2)


def conv2d(x: np.ndarray, w: np.ndarray, b: Optional[np.ndarray] = None,
           stride: int = 1, padding: int = 0) -> np.ndarray:
    """Zero-padded 2-D cross-correlation; ``x`` is [C,H,W] or [B,C,H,W]."""
    _check_conv_args(x, w, b, stride, padding)
    batched = x.ndim == 4
    xb = x if batched else x[None]
    n, _, h, wd = xb.shape
    cout, cin, k, _ = w.shape
    ho, wo = conv_output_size(h, k, stride, padding), conv_output_size(wd, k, stride, padding)
    kdim = cin * k * k
    wm = w.reshape(cout, kdim)
    dtype = np.result_type(x, w)
    out = np.empty((n, cout, ho, wo), dtype=dtype)
    blocks = list(_row_blocks(ho, wo, kdim))
    buf = np.empty((cin, k, k, blocks[0][1] - blocks[0][0], wo), dtype=dtype)
    for i in range(n):
        xp = np.pad(xb[i], ((0, 0), (padding, padding), (padding, padding)))
        win = _windows(xp, k, stride)
        for r0, r1 in blocks:
            col = buf[:, :, :, :r1 - r0]
            np.copyto(col, win[:, :, :, r0:r1])
            res = wm @ col.reshape(kdim, (r1 - r0) * wo)
            out[i, :, r0:r1] = res.reshape(cout, r1 - r0, wo)
    if b is not None:
        out += b[:, None, None]
    return out if batched else out[0]


def conv2d_backward(dout: np.ndarray, x: np.ndarray, w: np.ndarray, stride: int = 1,
                    padding: int = 0, need_input_grad: bool = True):
    """Gradients ``(dx, dw, db)`` of conv2d; ``dx`` is None when not requested."""
    batched = x.ndim == 4
    xb = x if batched else x[None]
    gb = dout if batched else dout[None]
    n, _, h, wd = xb.shape
    cout, cin, k, _ = w.shape
    ho, wo = gb.shape[2], gb.shape[3]
    kdim = cin * k * k
    wm = w.reshape(cout, kdim)
    dtype = np.result_type(x, w)
    dw = np.zeros((cout, kdim), dtype=dtype)
    dx = np.empty_like(xb) if need_input_grad else None
    blocks = list(_row_blocks(ho, wo, kdim))
    buf = np.empty((cin, k, k, blocks[0][1] - blocks[0][0], wo), dtype=dtype)
    for i in range(n):
        xp = np.pad(xb[i], ((0, 0), (padding, padding), (padding, padding)))
        win = _windows(xp, k, stride)
        dxp = np.zeros_like(xp) if need_input_grad else None
        for r0, r1 in blocks:
            rows = r1 - r0
            col = buf[:, :, :, :rows]
            np.copyto(col, win[:, :, :, r0:r1])
            g = gb[i, :, r0:r1].reshape(cout, rows * wo)
            dw += g @ col.reshape(kdim, rows * wo).T
            if need_input_grad:
                dcol = (wm.T @ g).reshape(cin, k, k, rows, wo)
                for a in range(k):
                    y0 = r0 * stride + a
                    for c in range(k):
                        dxp[:, y0:y0 + (rows - 1) * stride + 1:stride,
                            c:c + (wo - 1) * stride + 1:stride] += dcol[:, a, c]
        if need_input_grad:
            dx[i] = dxp[:, padding:padding + h, padding:padding + wd]
    db = gb.sum(axis=(0, 2, 3))
    if not batched and dx is not None:
        dx = dx[0]
    return dx, dw.reshape(w.shape), db


# ---------------------------------------------------------------------------
# pooling
# ---------------------------------------------------------------------------

def _quads(x: np.ndarray, h: int, w: int):
    # the four members of every 2x2 window, in row-major window order
    return (x[..., 0:2 * h:2, 0:2 * w:2], x[..., 0:2 * h:2, 1:2 * w:2],
            x[..., 1:2 * h:2, 0:2 * w:2], x[..., 1:2 * h:2, 1:2 * w:2])


def maxpool2d(x: np.ndarray) -> np.ndarray:
    """2x2 stride-2 spatial max pool over the last two axes (odd edges dropped)."""
    h, w = x.shape[-2] // 2, x.shape[-1] // 2
    if h == 0 or w == 0:
        raise ValueError(f"maxpool2d needs spatial size >= 2, got {x.shape}")
    a, b, c, d = _quads(x, h, w)
    return np.maximum(np.maximum(a, b), np.maximum(c, d))


def maxpool2d_backward(dout: np.ndarray, x: np.ndarray) -> np.ndarray:
    h, w = dout.shape[-2], dout.shape[-1]
    out = maxpool2d(x)
    dx = np.zeros_like(x)
    # first max in row-major window order takes the gradient
    free = np.ones(out.shape, dtype=bool)
    for src, dst in zip(_quads(x, h, w), _quads(dx, h, w)):
        hit = free & (src == out)
        dst[...] = np.where(hit, dout, 0)
        free &= ~hit
    return dx


def _time_window(n: int, kernel: int, stride: int, dilation: int) -> np.ndarray:
    if kernel < 1 or stride < 1 or dilation < 1:
        raise ValueError(f"invalid pooling args kernel={kernel} stride={stride} dilation={dilation}")
    span = (kernel - 1) * dilation + 1
    if span > n:
        raise ValueError(f"pooling window span {span} exceeds sequence length {n}")
    length = (n - span) // stride + 1
    return np.arange(length)[:, None] * stride + np.arange(kernel)[None, :] * dilation


def dilated_maxpool_time(seq: np.ndarray, kernel: int, stride: int = 1, dilation: int = 1) -> np.ndarray:
    """Max over rows ``j*stride + i*dilation`` for each output row j; seq is [N, d]."""
    if seq.ndim != 2:
        raise ValueError(f"expected [N, d] sequence, got {seq.shape}")
    idx = _time_window(seq.shape[0], kernel, stride, dilation)
    return seq[idx].max(axis=1)


def dilated_maxpool_time_argmax(seq: np.ndarray, kernel: int, stride: int = 1, dilation: int = 1) -> np.ndarray:
    """Source row of each pooled value; ties resolve to the earliest time index."""
    idx = _time_window(seq.shape[0], kernel, stride, dilation)
    pick = seq[idx].argmax(axis=1)  # [L, d]
    return np.take_along_axis(idx, pick, axis=1)


def dilated_maxpool_time_backward(dout: np.ndarray, seq: np.ndarray, kernel: int,
                                  stride: int = 1, dilation: int = 1) -> np.ndarray:
    src = dilated_maxpool_time_argmax(seq, kernel, stride, dilation)
    dseq = np.zeros_like(seq)
    cols = np.broadcast_to(np.arange(seq.shape[1]), src.shape)
    np.add.at(dseq, (src, cols), dout)
    return dseq


def global_avg_pool(x: np.ndarray) -> np.ndarray:
    """[..., C, H, W] -> [..., C]."""
    return x.mean(axis=(-2, -1))


def global_avg_pool_backward(dout: np.ndarray, x: np.ndarray) -> np.ndarray:
    hw = x.shape[-2] * x.shape[-1]
    return np.broadcast_to((dout / hw)[..., None, None], x.shape).copy()


# ---------------------------------------------------------------------------
# dense layers and activations
# ---------------------------------------------------------------------------

def fc(x: np.ndarray, w: np.ndarray, b: Optional[np.ndarray] = None) -> np.ndarray:
    if w.ndim != 2 or x.shape[-1] != w.shape[1]:
        raise ValueError(f"fc: input {x.shape} does not conform to weights {w.shape}")
    if b is not None and b.shape != (w.shape[0],):
        raise ValueError(f"fc: bias {b.shape} does not conform to weights {w.shape}")
    y = x @ w.T
    return y + b if b is not None else y


def fc_backward(dout: np.ndarray, x: np.ndarray, w: np.ndarray):
    """Returns ``(dx, dw, db)``; works for a single vector or a [B, n] batch."""
    dx = dout @ w
    if x.ndim == 1:
        dw = np.outer(dout, x)
        db = dout.copy()
    else:
        dw = dout.T @ x
        db = dout.sum(axis=0)
    return dx, dw, db


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(dout: np.ndarray, y: np.ndarray, axis: int = -1) -> np.ndarray:
    """``y`` is the softmax output."""
    return y * (dout - (dout * y).sum(axis=axis, keepdims=True))


def log_softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def add(a, b):
    _require_same_shape(a, b, "add")
    return a + b


def sub(a, b):
    _require_same_shape(a, b, "sub")
    return a - b


def mul(a, b):
    _require_same_shape(a, b, "mul")
    return a * b


def mul_backward(dout, a, b):
    return dout * b, dout * a


def relu(x):
    return np.maximum(x, 0)


def relu_backward(dout, x):
    return dout * (x > 0)


def sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid_backward(dout, y):
    """``y`` is the sigmoid output."""
    return dout * y * (1 - y)


def channel_mean(x: np.ndarray) -> np.ndarray:
    """[..., C, H, W] -> [..., 1, H, W]."""
    return x.mean(axis=-3, keepdims=True)


def channel_mean_backward(dout: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.broadcast_to(dout / x.shape[-3], x.shape).copy()


def channel_l2(x: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    """sqrt(sum_c x_c^2 + eps): [..., C, H, W] -> [..., 1, H, W]."""
    return np.sqrt(np.einsum("...chw,...chw->...hw", x, x)[..., None, :, :] + eps)


def channel_l2_backward(dout: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """``y`` is the forward output; bounded because y >= sqrt(eps)."""
    return x * (dout / y)


# ---------------------------------------------------------------------------
# checking and optimisation
# ---------------------------------------------------------------------------

def grad_check(fn: Callable[[], float], params: Params, eps: float = 1e-5,
               max_entries: Optional[int] = None, seed: int = 0,
               names: Optional[Iterable[str]] = None) -> float:
    """Largest ``|analytic - central| / max(1, |central|)`` over checked entries.

    ``fn()`` evaluates the scalar loss at the current parameter values and
    accumulates analytic gradients into ``Param.grad``. With ``max_entries``
    each parameter is checked on a seeded random subset of coordinates.
    """
    if not 1e-7 <= eps <= 1e-4:
        raise ValueError(f"eps must lie in [1e-7, 1e-4], got {eps}")
    keys = list(names) if names is not None else list(params)
    for k in keys:
        if params[k].value.dtype != np.float64:
            raise TypeError(f"grad_check needs float64 parameters; {k} is {params[k].value.dtype}")
    rng = np.random.default_rng(seed)
    zero_grads(params)
    fn()
    analytic = {k: params[k].grad.copy() for k in keys}
    worst = 0.0
    for k in keys:
        flat = params[k].value.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        a_flat = analytic[k].reshape(-1)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            lp = fn()
            flat[i] = orig - eps
            lm = fn()
            flat[i] = orig
            num = (lp - lm) / (2 * eps)
            worst = max(worst, abs(a_flat[i] - num) / max(1.0, abs(num)))
    zero_grads(params)
    return float(worst)


def sgd_step(params: Params, lr: float, momentum: float = 0.0, weight_decay: float = 0.0) -> None:
    """v <- momentum*v + grad + wd*value; value <- value - lr*v; grads zeroed."""
    for p in params.values():
        g = p.grad + weight_decay * p.value if weight_decay else p.grad
        if p.velocity is None:
            p.velocity = np.zeros_like(p.value)
        p.velocity *= momentum
        p.velocity += g
        p.value -= (lr * p.velocity).astype(p.value.dtype, copy=False)
        p.zero_grad()
