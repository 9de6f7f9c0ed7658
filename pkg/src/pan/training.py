"""SGD training, evaluation and checkpoint <-> model conversion."""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from . import core, io, pa
from .model import NetConfig, PANFull, PANNet, SampleMode, SamplerConfig, Variant, cross_entropy, fuse_scores, sample_clip

log = logging.getLogger(__name__)

Model = Union[PANNet, PANFull]


@dataclass
class Hyper:
    lr: float = 0.01
    epochs: int = 30
    batch: int = 8
    momentum: float = 0.9
    weight_decay: float = 1e-4
    seed: int = 42
    milestones: Sequence[int] = (30, 60)

    def lr_at(self, epoch: int) -> float:
        """Learning rate for 0-based ``epoch``: x0.1 for every milestone passed."""
        return self.lr * 0.1 ** sum(epoch >= m for m in self.milestones)


@dataclass
class EpochMetrics:
    epoch: int
    lr: float
    loss: float
    accuracy: float
    seconds: float
    stream: str = "lite"
    val_accuracy: Optional[float] = None


@dataclass
class TrainResult:
    model: Model
    metrics: List[EpochMetrics]
    initial_loss: Dict[str, float] = field(default_factory=dict)


def _mean_loss(net: PANNet, data: io.ClipDataset) -> float:
    cfg = replace(net.cfg.sampler, mode=SampleMode.TEST_CENTER)
    losses = []
    for i in range(len(data)):
        s = sample_clip(data.frames(i), cfg)
        scores, _ = net.predict(s.stacks)
        losses.append(cross_entropy(scores, int(data.labels[i]))[0])
    return float(np.mean(losses))


def train_stream(net: PANNet, data: io.ClipDataset, hyper: Hyper, stream: str = "lite",
                 val: Optional[io.ClipDataset] = None, callback=None) -> List[EpochMetrics]:
    """Mini-batch SGD on one stream; deterministic for a fixed seed."""
    if len(data) == 0:
        raise ValueError("cannot train on an empty dataset")
    sampler = replace(net.cfg.sampler, mode=SampleMode.TRAIN_RANDOM)
    rng = np.random.default_rng(hyper.seed)
    metrics = []
    for epoch in range(hyper.epochs):
        lr = hyper.lr_at(epoch)
        t0 = time.perf_counter()
        order = rng.permutation(len(data))
        losses, correct = [], 0
        for b0 in range(0, len(order), hyper.batch):
            batch = order[b0:b0 + hyper.batch]
            for i in batch:
                s = sample_clip(data.frames(i), sampler, rng)
                loss, scores = net.loss_and_grad(s.stacks, int(data.labels[i]), scale=1.0 / len(batch))
                losses.append(loss)
                correct += int(np.argmax(scores) == data.labels[i])
            core.sgd_step(net.params, lr, hyper.momentum, hyper.weight_decay)
        m = EpochMetrics(epoch=epoch + 1, lr=lr, loss=float(np.mean(losses)), accuracy=correct / len(data),
                         seconds=time.perf_counter() - t0, stream=stream)
        if val is not None:
            m.val_accuracy = evaluate(net, val)["top1"]
        log.info("%s epoch %d lr %.4g loss %.4f acc %.3f (%.1fs)", stream, m.epoch, lr, m.loss, m.accuracy, m.seconds)
        metrics.append(m)
        if callback is not None:
            callback(m)
    return metrics


def train(data: io.ClipDataset, model: Model, hyper: Hyper, val: Optional[io.ClipDataset] = None,
          callback=None) -> TrainResult:
    """Train a lite stream, or both PAN_Full streams with independent optimisers."""
    if len(data) == 0:
        raise ValueError("cannot train on an empty dataset")
    if isinstance(model, PANFull):
        streams = [("rgb", model.rgb), ("motion", model.motion)]
    else:
        streams = [("lite", model)]
    initial = {name: _mean_loss(net, data) for name, net in streams}
    metrics: List[EpochMetrics] = []
    for k, (name, net) in enumerate(streams):
        h = replace(hyper, seed=hyper.seed + k)
        metrics.extend(train_stream(net, data, h, name, val=val, callback=callback))
    return TrainResult(model=model, metrics=metrics, initial_loss=initial)


def predict_scores(model: Model, frames: np.ndarray):
    cfg = replace(model.cfg.sampler, mode=SampleMode.TEST_CENTER)
    s = sample_clip(frames, cfg)
    return model.predict(s.stacks)


def evaluate(model: Union[Model, Sequence[Model]], data: io.ClipDataset,
             weights: Optional[Sequence[float]] = None) -> dict:
    """Top-1, confusion matrix (rows = truth) and mean timescale weights.

    A sequence of models is score-averaged (``weights`` default to equal),
    which is how the Lite + Full ensemble is evaluated.
    """
    models = list(model) if isinstance(model, (list, tuple)) else [model]
    if weights is None:
        weights = [1.0 / len(models)] * len(models)
    c = data.num_classes
    confusion = np.zeros((c, c), dtype=int)
    ws = []
    per_clip = []
    for i in range(len(data)):
        frames = data.frames(i)
        outs = [predict_scores(mdl, frames) for mdl in models]
        scores = fuse_scores([o[0] for o in outs], weights)
        w = outs[0][1]
        if w is not None:
            ws.append(w[:, 0])
        pred = int(np.argmax(scores))
        confusion[int(data.labels[i]), pred] += 1
        per_clip.append({"path": data.paths[i] if data.paths else str(i), "label": int(data.labels[i]),
                         "pred": pred, "w": None if w is None else [float(x) for x in w[:, 0]]})
    top1 = float(np.trace(confusion) / max(1, confusion.sum()))
    return {"top1": top1, "confusion": confusion, "mean_w": np.mean(ws, axis=0) if ws else None,
            "clips": per_clip}


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

_HEADS = {"vap": 0.0, "avg": 1.0}
_VARIANTS = {"lite": 0.0, "full": 1.0}
_ENC = {pa.Encoding.E1: 1.0, pa.Encoding.E2: 2.0}


def model_to_tensors(model: Model) -> Dict[str, np.ndarray]:
    cfg = model.cfg
    variant = "full" if isinstance(model, PANFull) else "lite"
    meta = {
        "meta.variant": _VARIANTS[variant],
        "meta.N": cfg.sampler.N,
        "meta.m": cfg.sampler.m,
        "meta.depth": cfg.pa.depth,
        "meta.pa_channels": cfg.pa.channels,
        "meta.pa_kernel": cfg.pa.kernel,
        "meta.pa_eps": cfg.pa.eps,
        "meta.encoding": _ENC[cfg.pa.encoding],
        "meta.num_classes": cfg.num_classes,
        "meta.head": _HEADS[cfg.head],
        "meta.alpha": cfg.alpha,
        "meta.zero_pa": float(cfg.zero_pa),
        "meta.rgb_mean": cfg.rgb_mean,
        "meta.rgb_scale": cfg.rgb_scale,
        "meta.pa_gain": cfg.pa_gain,
    }
    out = {k: np.array([v], dtype=np.float32) for k, v in meta.items()}
    out["meta.widths"] = np.array(cfg.widths, dtype=np.float32)
    for name, p in model.params.items():
        out[name] = p.value.astype(np.float32)
    return out


def model_from_tensors(tensors: Dict[str, np.ndarray], variant: Optional[str] = None) -> Model:
    try:
        # shortest float32 repr gives back the decimal that was stored (1e-12, not 9.99e-13)
        g = {k[5:]: float(str(v[0])) for k, v in tensors.items() if k.startswith("meta.") and k != "meta.widths"}
        stored = {v: k for k, v in _VARIANTS.items()}[g["variant"]]
        cfg = NetConfig(
            mode="lite",
            num_classes=int(g["num_classes"]),
            sampler=SamplerConfig(N=int(g["N"]), m=int(g["m"])),
            pa=pa.PAConfig(depth=int(g["depth"]), channels=int(g["pa_channels"]), kernel=int(g["pa_kernel"]),
                           eps=g["pa_eps"],
                           encoding={v: k for k, v in _ENC.items()}[g["encoding"]]),
            widths=tuple(int(x) for x in tensors["meta.widths"]),
            head={v: k for k, v in _HEADS.items()}[g["head"]],
            alpha=int(g["alpha"]),
            zero_pa=bool(g["zero_pa"]),
            rgb_mean=g["rgb_mean"],
            rgb_scale=g["rgb_scale"],
            pa_gain=g["pa_gain"],
        )
    except KeyError as exc:
        raise io.FormatError(f"checkpoint is missing model metadata {exc}") from None
    if variant is not None and Variant(variant).value != stored:
        raise ValueError(f"checkpoint holds a {stored} model, not {variant}")
    params = {k: core.Param(k, v.copy()) for k, v in tensors.items() if not k.startswith("meta.")}
    if stored == "full":
        return PANFull(cfg, params)
    return PANNet(cfg, params)


def save_model(model: Model, path) -> None:
    io.save_checkpoint(path, model_to_tensors(model))


def load_model(path, variant: Optional[str] = None) -> Model:
    return model_from_tensors(io.load_checkpoint(path), variant)
