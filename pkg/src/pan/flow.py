"""Horn-Schunck dense optical flow, the conventional-flow baseline."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

LUMA = (0.299, 0.587, 0.114)


@dataclass
class FlowField:
    u: np.ndarray   # horizontal displacement, px/frame
    v: np.ndarray   # vertical displacement, px/frame
    residuals: Optional[List[float]] = None


def to_gray(frame: np.ndarray) -> np.ndarray:
    """[3, H, W] RGB -> [H, W] luminance; 2-D input passes through."""
    if frame.ndim == 2:
        return frame
    if frame.ndim != 3 or frame.shape[0] != 3:
        raise ValueError(f"expected [3, H, W] or [H, W], got {frame.shape}")
    r, g, b = LUMA
    return r * frame[0] + g * frame[1] + b * frame[2]


def _neighbour_mean(f: np.ndarray) -> np.ndarray:
    p = np.pad(f, 1, mode="edge")
    return 0.25 * (p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:])


def horn_schunck(f1: np.ndarray, f2: np.ndarray, lam: float = 0.01, iters: int = 100,
                 track_residual: bool = False) -> FlowField:
    """Jacobi iterations of the Horn-Schunck equations.

    ``lam`` weights the smoothness term.  Spatial derivatives are central
    differences averaged over both frames; the temporal derivative is the
    frame difference.  With ``track_residual`` the RMS change of the flow at
    every sweep is recorded.
    """
    f1, f2 = to_gray(np.asarray(f1)), to_gray(np.asarray(f2))
    if f1.shape != f2.shape:
        raise ValueError(f"frame shape mismatch: {f1.shape} vs {f2.shape}")
    if iters < 1 or lam <= 0:
        raise ValueError("need iters >= 1 and lam > 0")
    dtype = np.result_type(f1, f2, np.float32)
    f1, f2 = f1.astype(dtype, copy=False), f2.astype(dtype, copy=False)
    iy1, ix1 = np.gradient(f1)
    iy2, ix2 = np.gradient(f2)
    ix, iy = 0.5 * (ix1 + ix2), 0.5 * (iy1 + iy2)
    it = f2 - f1
    denom = lam + ix * ix + iy * iy
    u = np.zeros_like(f1)
    v = np.zeros_like(f1)
    history = [] if track_residual else None
    for _ in range(iters):
        ub, vb = _neighbour_mean(u), _neighbour_mean(v)
        t = (ix * ub + iy * vb + it) / denom
        un, vn = ub - ix * t, vb - iy * t
        if history is not None:
            history.append(float(np.sqrt(np.mean((un - u) ** 2 + (vn - v) ** 2))))
        u, v = un, vn
    return FlowField(u=u, v=v, residuals=history)


def flow_magnitude(flow: FlowField) -> np.ndarray:
    return np.sqrt(flow.u * flow.u + flow.v * flow.v)[None]
