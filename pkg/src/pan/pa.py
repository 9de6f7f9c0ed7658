"""Persistence of Appearance: motion saliency from low-level feature differences.

A stack of conv layers (no activation) maps every frame to ``C`` feature maps;
the PA map of two adjacent frames is the per-pixel L2 norm, across channels,
of the feature difference.  Two encodings turn the ``m-1`` maps of an
``m``-frame stack into backbone input:

* ``E1`` stacks the PA maps as channels (motion modality),
* ``E2`` gates the channel-mean feature map of the earlier frame with
  ``sigmoid(PA)`` (spatial attention).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from . import core
from .core import Params


class Encoding(str, enum.Enum):
    E1 = "e1"
    E2 = "e2"


@dataclass(frozen=True)
class PAConfig:
    depth: int = 1
    channels: int = 8
    kernel: int = 7
    eps: float = 1e-12
    encoding: Encoding = Encoding.E1
    in_channels: int = 3
    # reserved slot for an inter-layer activation; only None is implemented
    activation: Optional[str] = None

    def __post_init__(self):
        if self.depth < 0:
            raise ValueError(f"depth must be >= 0, got {self.depth}")
        if self.kernel % 2 == 0 or self.kernel < 1:
            raise ValueError(f"kernel must be odd, got {self.kernel}")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.activation is not None:
            raise NotImplementedError("PA conv layers are purely linear; activations are not implemented")
        object.__setattr__(self, "encoding", Encoding(self.encoding))

    @property
    def padding(self) -> int:
        return (self.kernel - 1) // 2

    @property
    def feature_channels(self) -> int:
        return self.channels if self.depth > 0 else self.in_channels


@dataclass
class PAStack:
    pa_maps: List[np.ndarray]
    features: Optional[List[np.ndarray]] = None

    @property
    def m(self) -> int:
        return len(self.pa_maps) + 1


def layer_names(cfg: PAConfig, prefix: str = "pa") -> List[tuple]:
    return [(f"{prefix}.conv{i}.weight", f"{prefix}.conv{i}.bias") for i in range(cfg.depth)]


def init_pa_weights(cfg: PAConfig, seed: int = 0, dtype=core.DEFAULT_DTYPE, prefix: str = "pa") -> Params:
    rng = np.random.default_rng(seed)
    arrays = {}
    cin = cfg.in_channels
    for wname, bname in layer_names(cfg, prefix):
        fan_in = cin * cfg.kernel * cfg.kernel
        bound = 1.0 / np.sqrt(fan_in)
        arrays[wname] = rng.uniform(-bound, bound, (cfg.channels, cin, cfg.kernel, cfg.kernel)).astype(dtype)
        arrays[bname] = np.zeros(cfg.channels, dtype=dtype)
        cin = cfg.channels
    return core.make_params(arrays)


def _layers(params: Params, cfg: PAConfig, prefix: str):
    try:
        return [(params[w], params[b]) for w, b in layer_names(cfg, prefix)]
    except KeyError as exc:
        raise KeyError(f"missing PA parameter {exc} for depth {cfg.depth}") from None


def _features_forward(x: np.ndarray, params: Params, cfg: PAConfig, prefix: str):
    inputs = []
    for w, b in _layers(params, cfg, prefix):
        inputs.append(x)
        x = core.conv2d(x, w.value, b.value, stride=1, padding=cfg.padding)
    return x, inputs


def _features_backward(dfeat: np.ndarray, inputs, params: Params, cfg: PAConfig, prefix: str,
                       need_input_grad: bool):
    layers = _layers(params, cfg, prefix)
    g = dfeat
    for li in reversed(range(len(layers))):
        w, b = layers[li]
        want_dx = need_input_grad or li > 0
        g, dw, db = core.conv2d_backward(g, inputs[li], w.value, 1, cfg.padding, need_input_grad=want_dx)
        w.grad += dw
        b.grad += db
    return g if need_input_grad else None


def low_level_features(frame: np.ndarray, params: Params, cfg: PAConfig, prefix: str = "pa") -> np.ndarray:
    """``depth`` stacked same-size convolutions; [..., 3, H, W] -> [..., C, H, W]."""
    if cfg.depth < 1:
        raise ValueError("low_level_features needs depth >= 1; depth 0 works directly on pixels")
    lead = frame.shape[:-3]
    flat = frame.reshape((-1,) + frame.shape[-3:])
    out, _ = _features_forward(flat, params, cfg, prefix)
    return out.reshape(lead + out.shape[1:])


def _check_frames(a: np.ndarray, b: np.ndarray, cfg: PAConfig):
    if a.shape != b.shape:
        raise ValueError(f"frame shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim != 3 or a.shape[0] != cfg.in_channels:
        raise ValueError(f"expected [{cfg.in_channels}, H, W] frames, got {a.shape}")


def pa_pair(frame_t: np.ndarray, frame_t1: np.ndarray, params: Params, cfg: PAConfig,
            prefix: str = "pa") -> np.ndarray:
    """PA map [1, H, W] for two adjacent frames."""
    _check_frames(frame_t, frame_t1, cfg)
    if cfg.depth == 0:
        f0, f1 = frame_t, frame_t1
    else:
        feats, _ = _features_forward(np.stack([frame_t, frame_t1]), params, cfg, prefix)
        f0, f1 = feats[0], feats[1]
    return core.channel_l2(f1 - f0, cfg.eps)


def pa_stack(frames: Sequence[np.ndarray], params: Params, cfg: PAConfig, prefix: str = "pa") -> PAStack:
    if len(frames) < 2:
        raise ValueError(f"a PA stack needs at least 2 frames, got {len(frames)}")
    for f in frames[1:]:
        _check_frames(frames[0], f, cfg)
    x = np.stack(frames)
    feats = x if cfg.depth == 0 else _features_forward(x, params, cfg, prefix)[0]
    maps = [core.channel_l2(feats[i + 1] - feats[i], cfg.eps) for i in range(len(frames) - 1)]
    keep = list(feats) if cfg.encoding is Encoding.E2 else None
    return PAStack(pa_maps=maps, features=keep)


def encode_e1(stack: PAStack) -> np.ndarray:
    return np.concatenate(stack.pa_maps, axis=0)


def encode_e2(stack: PAStack) -> np.ndarray:
    if stack.features is None:
        raise ValueError("E2 encoding needs the stack's feature maps (build it with encoding=E2)")
    chans = [core.mul(core.sigmoid(pa), core.channel_mean(stack.features[i]))
             for i, pa in enumerate(stack.pa_maps)]
    return np.concatenate(chans, axis=0)


def encode(stack: PAStack, encoding: Encoding) -> np.ndarray:
    return encode_e1(stack) if Encoding(encoding) is Encoding.E1 else encode_e2(stack)


# ---------------------------------------------------------------------------
# batched, differentiable path used by the networks
# ---------------------------------------------------------------------------

def pa_encode_forward(stacks: np.ndarray, params: Params, cfg: PAConfig, prefix: str = "pa"):
    """Encoded PA for a batch of stacks: [N, m, 3, H, W] -> ([N, m-1, H, W], cache)."""
    if stacks.ndim != 5 or stacks.shape[1] < 2:
        raise ValueError(f"expected [N, m>=2, C, H, W] stacks, got {stacks.shape}")
    n, m = stacks.shape[:2]
    x = stacks.reshape((n * m,) + stacks.shape[2:])
    if cfg.depth == 0:
        feats, inputs = x, None
    else:
        feats, inputs = _features_forward(x, params, cfg, prefix)
    feats = feats.reshape((n, m) + feats.shape[1:])
    diff = feats[:, 1:] - feats[:, :-1]
    pa = core.channel_l2(diff, cfg.eps)            # [n, m-1, 1, H, W]
    cache = {"inputs": inputs, "feats": feats, "diff": diff, "pa": pa, "shape": stacks.shape}
    if cfg.encoding is Encoding.E1:
        out = pa[:, :, 0]
    else:
        gate = core.sigmoid(pa)
        mean = core.channel_mean(feats[:, :-1])
        cache.update(gate=gate, mean=mean)
        out = (gate * mean)[:, :, 0]
    return out, cache


def pa_encode_backward(dout: np.ndarray, cache, params: Params, cfg: PAConfig, prefix: str = "pa",
                       need_input_grad: bool = False):
    """Accumulates PA conv gradients into ``params``; returns d(stacks) if requested."""
    feats, diff, pa = cache["feats"], cache["diff"], cache["pa"]
    d = dout[:, :, None]
    dfeats = np.zeros_like(feats)
    if cfg.encoding is Encoding.E1:
        dpa = d
    else:
        gate, mean = cache["gate"], cache["mean"]
        dpa = core.sigmoid_backward(d * mean, gate)
        dfeats[:, :-1] += core.channel_mean_backward(d * gate, feats[:, :-1])
    ddiff = core.channel_l2_backward(dpa, diff, pa)
    dfeats[:, 1:] += ddiff
    dfeats[:, :-1] -= ddiff
    n, m = cache["shape"][:2]
    flat = dfeats.reshape((n * m,) + dfeats.shape[2:])
    if cfg.depth == 0:
        dx = flat if need_input_grad else None
    else:
        dx = _features_backward(flat, cache["inputs"], params, cfg, prefix, need_input_grad)
    return None if dx is None else dx.reshape(cache["shape"])


# ---------------------------------------------------------------------------
# cost model
# ---------------------------------------------------------------------------

# per-pixel op counts for the elementwise stages
SIGMOID_FLOPS = 4   # negate, exp, add, divide
SQRT_FLOPS = 1


def estimate_flops(cfg: PAConfig, H: int, W: int, n_stacks: int = 1, m: int = 2) -> float:
    """Floating-point operations to turn ``n_stacks`` stacks of ``m`` frames into encoded PA.

    Conv layers count each multiply-add as two operations.  Per pair and
    pixel: C differences, C squares, C accumulations (the last one adds eps)
    and one square root; E2 adds a sigmoid, a channel mean (C ops) and one
    multiply.
    """
    hw = float(H) * float(W)
    frames = n_stacks * m
    pairs = n_stacks * (m - 1)
    conv = 0.0
    cin = cfg.in_channels
    for _ in range(cfg.depth):
        conv += 2.0 * cfg.channels * cin * cfg.kernel * cfg.kernel * hw
        cin = cfg.channels
    c = cfg.feature_channels
    per_pair = (3 * c + SQRT_FLOPS) * hw
    if cfg.encoding is Encoding.E2:
        per_pair += (SIGMOID_FLOPS + c + 1) * hw
    return conv * frames + per_pair * pairs
