"""Desk-scale PAN: segment sampling, a toy CNN backbone and the Lite/Full networks.

A clip is split into N equal segments and one stack of m consecutive frames
is drawn from each.  ``PANNet`` is a single stream (PA module, backbone,
temporal head) whose input is selected by ``mode``:

``lite``
    first frame of each stack concatenated with its encoded PA (3 + m-1 channels)
``rgb``
    first frame only (the appearance branch of PAN_Full)
``pa``
    encoded PA only (the motion branch of PAN_Full)

``PANFull`` pairs an ``rgb`` and a ``pa`` stream and fuses their scores.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from . import core, pa, vap
from .core import Param, Params


class SampleMode(str, enum.Enum):
    TRAIN_RANDOM = "train_random"
    TEST_CENTER = "test_center"


@dataclass(frozen=True)
class SamplerConfig:
    N: int = 8
    m: int = 4
    mode: SampleMode = SampleMode.TEST_CENTER

    def __post_init__(self):
        if not vap.is_power_of_two(self.N) or self.N < 2:
            raise ValueError(f"N must be a power of two >= 2, got {self.N}")
        if self.m < 2:
            raise ValueError(f"m must be >= 2, got {self.m}")
        object.__setattr__(self, "mode", SampleMode(self.mode))


class ClipSample(NamedTuple):
    stacks: np.ndarray        # [N, m, C, H, W]
    first_frames: np.ndarray  # [N, C, H, W]
    starts: List[int]


def segment_starts(length: int, cfg: SamplerConfig, rng: Optional[np.random.Generator] = None) -> List[int]:
    need = cfg.N * cfg.m
    if length < need:
        raise ValueError(f"clip has {length} frames; N={cfg.N} stacks of m={cfg.m} need at least {need}")
    starts = []
    for t in range(cfg.N):
        lo, hi = t * length // cfg.N, (t + 1) * length // cfg.N
        room = hi - lo - cfg.m
        if cfg.mode is SampleMode.TEST_CENTER:
            starts.append(lo + room // 2)
        else:
            if rng is None:
                raise ValueError("random sampling needs a generator")
            starts.append(lo + int(rng.integers(0, room + 1)))
    return starts


def sample_clip(clip, cfg: SamplerConfig, seed=None) -> ClipSample:
    """Pick N stacks of m consecutive frames; ``seed`` may be an int or a Generator."""
    frames = np.asarray(clip)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    starts = segment_starts(len(frames), cfg, rng)
    idx = np.asarray(starts)[:, None] + np.arange(cfg.m)[None, :]
    stacks = frames[idx]
    return ClipSample(stacks=stacks, first_frames=stacks[:, 0], starts=starts)


# ---------------------------------------------------------------------------
# backbone
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BackboneConfig:
    in_channels: int
    widths: Tuple[int, ...] = (16, 32, 64)
    kernel: int = 3

    @property
    def out_dim(self) -> int:
        return self.widths[-1]


def init_backbone(cfg: BackboneConfig, seed: int = 0, dtype=core.DEFAULT_DTYPE,
                  prefix: str = "backbone") -> Params:
    rng = np.random.default_rng(seed)
    arrays = {}
    cin = cfg.in_channels
    for i, cout in enumerate(cfg.widths):
        fan_in = cin * cfg.kernel ** 2
        bound = np.sqrt(6.0 / fan_in)
        arrays[f"{prefix}.conv{i}.weight"] = rng.uniform(-bound, bound, (cout, cin, cfg.kernel, cfg.kernel)).astype(dtype)
        arrays[f"{prefix}.conv{i}.bias"] = np.zeros(cout, dtype)
        cin = cout
    return core.make_params(arrays)


def backbone_forward(x: np.ndarray, params: Params, cfg: BackboneConfig, prefix: str = "backbone"):
    """[B, C_in, H, W] -> ([B, d], cache); conv + relu + 2x2 max pool per stage, then GAP."""
    if x.shape[1] != cfg.in_channels:
        raise ValueError(f"backbone built for {cfg.in_channels} input channels, got input {x.shape}")
    pad = cfg.kernel // 2
    stages = []
    for i in range(len(cfg.widths)):
        w, b = params[f"{prefix}.conv{i}.weight"], params[f"{prefix}.conv{i}.bias"]
        pre = core.conv2d(x, w.value, b.value, stride=1, padding=pad)
        act = core.relu(pre)
        stages.append((x, pre, act))
        x = core.maxpool2d(act)
    return core.global_avg_pool(x), dict(stages=stages, last=x)


def backbone_backward(dfeat: np.ndarray, cache, params: Params, cfg: BackboneConfig,
                      prefix: str = "backbone", need_input_grad: bool = True):
    g = core.global_avg_pool_backward(dfeat, cache["last"])
    pad = cfg.kernel // 2
    for i in reversed(range(len(cfg.widths))):
        x, pre, act = cache["stages"][i]
        g = core.maxpool2d_backward(g, act)
        g = core.relu_backward(g, pre)
        w, b = params[f"{prefix}.conv{i}.weight"], params[f"{prefix}.conv{i}.bias"]
        g, dw, db = core.conv2d_backward(g, x, w.value, 1, pad, need_input_grad=need_input_grad or i > 0)
        w.grad += dw
        b.grad += db
    return g


# ---------------------------------------------------------------------------
# loss and fusion
# ---------------------------------------------------------------------------

def cross_entropy(scores: np.ndarray, label: int) -> Tuple[float, np.ndarray]:
    """``(-log softmax(scores)[label], d loss / d scores)``."""
    if not 0 <= label < scores.shape[-1]:
        raise ValueError(f"label {label} out of range for {scores.shape[-1]} classes")
    logp = core.log_softmax(scores)
    grad = np.exp(logp)
    grad[label] -= 1
    return float(-logp[label]), grad


def fuse_scores(score_list: Sequence[np.ndarray], weights: Sequence[float]) -> np.ndarray:
    if len(score_list) != len(weights):
        raise ValueError(f"{len(score_list)} score vectors but {len(weights)} weights")
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-6:
        raise ValueError(f"fusion weights must be non-negative and sum to 1, got {list(weights)}")
    out = np.zeros_like(np.asarray(score_list[0]))
    for s, wi in zip(score_list, w):
        out = out + wi * np.asarray(s)
    return out


# ---------------------------------------------------------------------------
# networks
# ---------------------------------------------------------------------------

class Variant(str, enum.Enum):
    LITE = "lite"
    FULL = "full"
    ENSEMBLE = "ensemble"


@dataclass(frozen=True)
class NetConfig:
    mode: str = "lite"                    # lite | rgb | pa
    num_classes: int = 4
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    pa: pa.PAConfig = field(default_factory=pa.PAConfig)
    widths: Tuple[int, ...] = (16, 32, 64)
    head: str = "vap"                     # vap | avg
    alpha: int = 4
    zero_pa: bool = False                 # ablation: PA channels replaced by zeros
    # fixed backbone input normalisation: (rgb - rgb_mean) * rgb_scale, pa * pa_gain
    rgb_mean: float = 0.5
    rgb_scale: float = 4.0
    pa_gain: float = 10.0

    def __post_init__(self):
        if self.mode not in ("lite", "rgb", "pa"):
            raise ValueError(f"unknown stream mode {self.mode!r}")
        if self.head not in ("vap", "avg"):
            raise ValueError(f"unknown head {self.head!r}")

    @property
    def uses_pa(self) -> bool:
        return self.mode in ("lite", "pa")

    @property
    def backbone(self) -> BackboneConfig:
        motion = self.sampler.m - 1
        cin = {"lite": 3 + motion, "rgb": 3, "pa": motion}[self.mode]
        return BackboneConfig(in_channels=cin, widths=tuple(self.widths))


class PANNet:
    """One PA + backbone + head stream. Parameter names carry ``prefix``."""

    def __init__(self, cfg: NetConfig, params: Optional[Params] = None, seed: int = 0,
                 dtype=core.DEFAULT_DTYPE, prefix: str = ""):
        self.cfg = cfg
        self.prefix = prefix
        if params is None:
            params = self._init(seed, dtype)
        self.params = params
        self._check()

    def _name(self, s: str) -> str:
        return f"{self.prefix}{s}"

    def _init(self, seed: int, dtype) -> Params:
        cfg = self.cfg
        ss = np.random.SeedSequence(seed).spawn(3)
        params: Params = {}
        if cfg.uses_pa:
            params.update(pa.init_pa_weights(cfg.pa, int(ss[0].generate_state(1)[0]), dtype, self._name("pa")))
        params.update(init_backbone(cfg.backbone, int(ss[1].generate_state(1)[0]), dtype, self._name("backbone")))
        head_seed = int(ss[2].generate_state(1)[0])
        if cfg.head == "vap":
            hp = vap.VAPParams.init(cfg.sampler.N - 1, cfg.backbone.out_dim, cfg.num_classes, cfg.alpha,
                                    head_seed, dtype, self._name("head"))
            params.update(hp.params())
        else:
            params.update(vap.init_avg_params(cfg.backbone.out_dim, cfg.num_classes, head_seed, dtype,
                                              self._name("head")))
        return params

    def _check(self) -> None:
        bb = self.cfg.backbone
        w0 = self.params[self._name("backbone.conv0.weight")]
        # channel wiring is part of the model definition; catch mismatches at build time
        if w0.shape[1] != bb.in_channels:
            raise ValueError(f"{self.cfg.mode} stream needs {bb.in_channels} backbone input channels, "
                             f"parameters have {w0.shape[1]}")
        if self.cfg.head == "vap":
            vap.VAPParams.from_params(self.params, self._name("head"))

    @property
    def head_params(self):
        if self.cfg.head == "vap":
            return vap.VAPParams.from_params(self.params, self._name("head"))
        return self.params[self._name("head.W3")]

    def backbone_input(self, stacks: np.ndarray):
        """Normalised backbone input [N, C_in, H, W] and the PA cache (None without PA)."""
        cfg = self.cfg
        first = (stacks[:, 0] - stacks.dtype.type(cfg.rgb_mean)) * stacks.dtype.type(cfg.rgb_scale)
        if cfg.mode == "rgb":
            return first, None
        if cfg.zero_pa:
            n, m, _, h, w = stacks.shape
            motion = np.zeros((n, m - 1, h, w), stacks.dtype)
            cache = None
        else:
            motion, cache = pa.pa_encode_forward(stacks, self.params, cfg.pa, self._name("pa"))
            motion = motion * motion.dtype.type(cfg.pa_gain)
        if cfg.mode == "pa":
            return motion, cache
        return np.concatenate([first, motion], axis=1), cache

    def forward(self, stacks: np.ndarray):
        """[N, m, 3, H, W] stacks -> (scores [c], timescale weights or None, cache)."""
        if stacks.shape[1] != self.cfg.sampler.m:
            raise ValueError(f"expected stacks of m={self.cfg.sampler.m} frames, got {stacks.shape}")
        x, pa_cache = self.backbone_input(stacks)
        feats, bb_cache = backbone_forward(x, self.params, self.cfg.backbone, self._name("backbone"))
        if self.cfg.head == "vap":
            scores, w, head_cache = vap.vap_forward(feats, self.head_params)
        else:
            scores, head_cache = vap.avg_forward(feats, self.head_params)
            w = None
        cache = dict(pa=pa_cache, bb=bb_cache, head=head_cache, stacks_shape=stacks.shape)
        return scores, w, cache

    def backward(self, dscores: np.ndarray, cache, need_input_grad: bool = False):
        """Accumulates gradients into ``self.params``; optionally returns d(stacks)."""
        cfg = self.cfg
        if cfg.head == "vap":
            dfeat = vap.vap_backward(dscores, cache["head"], self.head_params)
        else:
            dfeat = vap.avg_backward(dscores, cache["head"], self.head_params)
        train_pa = cfg.uses_pa and not cfg.zero_pa
        dx = backbone_backward(dfeat, cache["bb"], self.params, cfg.backbone, self._name("backbone"),
                               need_input_grad=train_pa or need_input_grad)
        if not need_input_grad and not train_pa:
            return None
        dstacks = np.zeros(cache["stacks_shape"], dtype=dx.dtype) if need_input_grad else None
        if cfg.mode == "rgb":
            dstacks[:, 0] += dx * cfg.rgb_scale
            return dstacks
        dmotion = (dx if cfg.mode == "pa" else dx[:, 3:]) * cfg.pa_gain
        if cfg.mode == "lite" and need_input_grad:
            dstacks[:, 0] += dx[:, :3] * cfg.rgb_scale
        if not cfg.zero_pa:
            dpa = pa.pa_encode_backward(dmotion, cache["pa"], self.params, cfg.pa, self._name("pa"),
                                        need_input_grad=need_input_grad)
            if need_input_grad:
                dstacks += dpa
        return dstacks

    def loss_and_grad(self, stacks: np.ndarray, label: int, scale: float = 1.0) -> Tuple[float, np.ndarray]:
        scores, _, cache = self.forward(stacks)
        loss, ds = cross_entropy(scores, label)
        self.backward(ds * scale, cache)
        return loss, scores

    def predict(self, stacks: np.ndarray):
        scores, w, _ = self.forward(stacks)
        return scores, w


DEFAULT_FUSION = (0.5, 0.5)


class PANFull:
    """Appearance (``rgb.``) and motion (``motion.``) streams with score fusion."""

    def __init__(self, cfg: NetConfig, params: Optional[Params] = None, seed: int = 0,
                 dtype=core.DEFAULT_DTYPE, fusion: Sequence[float] = DEFAULT_FUSION):
        self.cfg = cfg
        ss = np.random.SeedSequence(seed).spawn(2)
        seeds = [int(s.generate_state(1)[0]) for s in ss]
        rgb_cfg, pa_cfg = replace(cfg, mode="rgb"), replace(cfg, mode="pa")
        if params is None:
            self.rgb = PANNet(rgb_cfg, seed=seeds[0], dtype=dtype, prefix="rgb.")
            self.motion = PANNet(pa_cfg, seed=seeds[1], dtype=dtype, prefix="motion.")
            fw = np.asarray(fusion, dtype=dtype)
            self.fusion = Param("fusion.weights", fw)
        else:
            self.rgb = PANNet(rgb_cfg, {k: v for k, v in params.items() if k.startswith("rgb.")}, prefix="rgb.")
            self.motion = PANNet(pa_cfg, {k: v for k, v in params.items() if k.startswith("motion.")},
                                 prefix="motion.")
            self.fusion = params.get("fusion.weights") or Param("fusion.weights", np.asarray(fusion, dtype))
        fuse_scores([np.zeros(2), np.zeros(2)], self.fusion.value)  # validates the weights

    @property
    def params(self) -> Params:
        out = dict(self.rgb.params)
        out.update(self.motion.params)
        out["fusion.weights"] = self.fusion
        return out

    def forward(self, stacks: np.ndarray):
        s_rgb, _, _ = self.rgb.forward(stacks)
        s_pa, w, _ = self.motion.forward(stacks)
        fused = fuse_scores([s_rgb, s_pa], self.fusion.value)
        return s_rgb, s_pa, fused, w

    def predict(self, stacks: np.ndarray):
        _, _, fused, w = self.forward(stacks)
        return fused, w


def pan_lite_forward(stacks: np.ndarray, net: PANNet):
    if net.cfg.mode != "lite":
        raise ValueError("pan_lite_forward needs a lite stream")
    scores, _, _ = net.forward(stacks)
    return scores


def pan_full_forward(stacks: np.ndarray, net: PANFull):
    s_rgb, s_pa, fused, _ = net.forward(stacks)
    return s_rgb, s_pa, fused
