"""Fused inference kernel for the single-layer 7x7 PA module.

The conv stack has no activation, so the feature difference of two frames
equals the bias-free convolution of their pixel difference.  The kernel
convolves the difference and accumulates squares in one pass, blocking eight
output channels per sweep so each input row load feeds 56 multiply-adds.
The eight accumulators are separate arrays on purpose: numba only vectorises
the inner loop when it can prove they do not alias.
"""
from __future__ import annotations

import numpy as np
from numba import njit

BLOCK = 8
TAPS = 7


@njit(cache=True, fastmath=True, nogil=True)
def _pa_k7(a, b, w, eps):  # pragma: no cover - compiled
    C, H, W = a.shape
    nblk = w.shape[0] // 8
    d = np.zeros((C, H + 6, W + 6), np.float32)
    for c in range(C):
        for y in range(H):
            for x in range(W):
                d[c, y + 3, x + 3] = b[c, y, x] - a[c, y, x]
    sq = np.zeros((H, W), np.float32)
    a0 = np.empty(W, np.float32)
    a1 = np.empty(W, np.float32)
    a2 = np.empty(W, np.float32)
    a3 = np.empty(W, np.float32)
    a4 = np.empty(W, np.float32)
    a5 = np.empty(W, np.float32)
    a6 = np.empty(W, np.float32)
    a7 = np.empty(W, np.float32)
    for y in range(H):
        for blk in range(nblk):
            o = blk * 8
            a0[:] = 0
            a1[:] = 0
            a2[:] = 0
            a3[:] = 0
            a4[:] = 0
            a5[:] = 0
            a6[:] = 0
            a7[:] = 0
            for c in range(C):
                for i in range(7):
                    r = d[c, y + i]
                    w00, w01, w02, w03, w04, w05, w06 = w[o + 0, c, i, :7]
                    w10, w11, w12, w13, w14, w15, w16 = w[o + 1, c, i, :7]
                    w20, w21, w22, w23, w24, w25, w26 = w[o + 2, c, i, :7]
                    w30, w31, w32, w33, w34, w35, w36 = w[o + 3, c, i, :7]
                    w40, w41, w42, w43, w44, w45, w46 = w[o + 4, c, i, :7]
                    w50, w51, w52, w53, w54, w55, w56 = w[o + 5, c, i, :7]
                    w60, w61, w62, w63, w64, w65, w66 = w[o + 6, c, i, :7]
                    w70, w71, w72, w73, w74, w75, w76 = w[o + 7, c, i, :7]
                    for x in range(W):
                        r0 = r[x]
                        r1 = r[x + 1]
                        r2 = r[x + 2]
                        r3 = r[x + 3]
                        r4 = r[x + 4]
                        r5 = r[x + 5]
                        r6 = r[x + 6]
                        a0[x] += (w00 * r0 + w01 * r1 + w02 * r2 + w03 * r3
                                  + w04 * r4 + w05 * r5 + w06 * r6)
                        a1[x] += (w10 * r0 + w11 * r1 + w12 * r2 + w13 * r3
                                  + w14 * r4 + w15 * r5 + w16 * r6)
                        a2[x] += (w20 * r0 + w21 * r1 + w22 * r2 + w23 * r3
                                  + w24 * r4 + w25 * r5 + w26 * r6)
                        a3[x] += (w30 * r0 + w31 * r1 + w32 * r2 + w33 * r3
                                  + w34 * r4 + w35 * r5 + w36 * r6)
                        a4[x] += (w40 * r0 + w41 * r1 + w42 * r2 + w43 * r3
                                  + w44 * r4 + w45 * r5 + w46 * r6)
                        a5[x] += (w50 * r0 + w51 * r1 + w52 * r2 + w53 * r3
                                  + w54 * r4 + w55 * r5 + w56 * r6)
                        a6[x] += (w60 * r0 + w61 * r1 + w62 * r2 + w63 * r3
                                  + w64 * r4 + w65 * r5 + w66 * r6)
                        a7[x] += (w70 * r0 + w71 * r1 + w72 * r2 + w73 * r3
                                  + w74 * r4 + w75 * r5 + w76 * r6)
            for x in range(W):
                sq[y, x] += (a0[x] * a0[x] + a1[x] * a1[x] + a2[x] * a2[x] + a3[x] * a3[x]
                             + a4[x] * a4[x] + a5[x] * a5[x] + a6[x] * a6[x] + a7[x] * a7[x])
    out = np.empty((1, H, W), np.float32)
    for y in range(H):
        for x in range(W):
            out[0, y, x] = np.sqrt(sq[y, x] + eps)
    return out


def prepare_weights(weight: np.ndarray) -> np.ndarray:
    """Pad the filter count to a multiple of the block size with zero filters."""
    cout = weight.shape[0]
    pad = (-cout) % BLOCK
    w = np.ascontiguousarray(weight, dtype=np.float32)
    if pad:
        w = np.concatenate([w, np.zeros((pad,) + w.shape[1:], np.float32)])
    return w


def pa_pair_k7(frame_t: np.ndarray, frame_t1: np.ndarray, weight: np.ndarray, eps: float) -> np.ndarray:
    """Float32 PA map [1, H, W] of a depth-1, 7x7 module; ``weight`` from prepare_weights."""
    if weight.shape[2:] != (TAPS, TAPS) or weight.shape[0] % BLOCK:
        raise ValueError(f"fast kernel needs [8k, C, 7, 7] weights, got {weight.shape}")
    a = np.ascontiguousarray(frame_t, dtype=np.float32)
    b = np.ascontiguousarray(frame_t1, dtype=np.float32)
    return _pa_k7(a, b, weight, np.float32(eps))
