"""Command-line entry point: ``pan <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import bench, checks, io, pa, training
from .model import NetConfig, PANFull, PANNet

log = logging.getLogger("pan")


def _cmd_synth(a) -> int:
    spec = io.SynthSpec(clips_per_class=a.clips_per_class, frames=a.frames, size=a.size, square=a.square,
                        speed=a.speed, noise_sigma=a.noise, seed=a.seed)
    rows = io.synth_dataset(spec, a.out)
    print(f"wrote {len(rows)} clips to {a.out}")
    return 0


def _cmd_train(a) -> int:
    data = io.load_dataset(a.data)
    cfg = NetConfig(num_classes=data.num_classes, head=a.head,
                    pa=pa.PAConfig(depth=a.depth, encoding=pa.Encoding(a.encoding)))
    model = PANFull(cfg, seed=a.seed) if a.variant == "full" else PANNet(cfg, seed=a.seed)
    hyper = training.Hyper(lr=a.lr, epochs=a.epochs, batch=a.batch, seed=a.seed,
                           milestones=tuple(a.milestones))
    result = training.train(data, model, hyper)
    training.save_model(result.model, a.out)
    metrics_path = Path(str(a.out) + ".metrics.json")
    metrics_path.write_text(json.dumps({"initial_loss": result.initial_loss,
                                        "epochs": [vars(m) for m in result.metrics]}, indent=1))
    last = result.metrics[-1]
    print(f"saved {a.out}; final loss {last.loss:.4f}, train top1 {last.accuracy:.3f}")
    return 0


def _cmd_eval(a) -> int:
    data = io.load_dataset(a.data)
    models = [training.load_model(a.ckpt, a.variant)]
    if a.ensemble:
        models.append(training.load_model(a.ensemble))
    res = training.evaluate(models if len(models) > 1 else models[0], data)
    out = {"top1": res["top1"], "confusion": res["confusion"].tolist(),
           "mean_w": None if res["mean_w"] is None else res["mean_w"].tolist()}
    print(json.dumps(out) if a.json else f"top1 {res['top1']:.4f}\nconfusion (rows = truth)\n{res['confusion']}")
    return 0


def _cmd_extract(a) -> int:
    frames = io.load_clip(a.input)
    cfg = pa.PAConfig(depth=a.depth)
    if a.weights:
        model = training.load_model(a.weights)
        net = model.motion if isinstance(model, PANFull) else model
        prefix = net._name("pa")
        cfg = pa.PAConfig(depth=net.cfg.pa.depth, channels=net.cfg.pa.channels, kernel=net.cfg.pa.kernel)
        params = net.params
        if a.depth != cfg.depth:
            raise ValueError(f"checkpoint PA module has depth {cfg.depth}, --depth says {a.depth}")
    else:
        prefix = "pa"
        params = pa.init_pa_weights(cfg, a.seed)
    stack = pa.pa_stack(frames, params, cfg, prefix)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, m in enumerate(stack.pa_maps):
        io.export_pa_png(m, out / f"pa_{i + 1:06d}.png")
    print(f"wrote {len(stack.pa_maps)} PA maps to {out}")
    return 0


def _cmd_bench(a) -> int:
    threads = a.threads if a.threads is not None else bench.default_workers()
    report = bench.run_benchmark(a.methods, a.size, a.pairs, a.reps, threads, a.hs_iters)
    print(report.to_json() if a.json else report.to_table())
    return 0


def _cmd_gradcheck(a) -> int:
    results = checks.run_suite(a.seed)
    for r in results:
        print(f"{'PASS' if r.ok else 'FAIL'} {r.name:<22} max rel err {r.max_rel_err:.2e} (tol {r.tol:.0e})")
    return 0 if all(r.ok for r in results) else 1


def _cmd_viz(a) -> int:
    data = io.load_dataset(a.data)
    model = training.load_model(a.ckpt)
    res = training.evaluate(model, data)
    if res["mean_w"] is None:
        raise ValueError("model has no VAP head, so there are no timescale weights to export")
    Path(a.out).write_text(json.dumps({"mean_w": res["mean_w"].tolist(), "clips": res["clips"]}, indent=1))
    print(f"wrote per-clip timescale weights for {len(data)} clips to {a.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pan", description="PA motion cue, VAP head and desk-scale PAN.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("synth", help="generate the moving-square dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--clips-per-class", type=int, default=100)
    s.add_argument("--frames", type=int, default=32)
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--square", type=int, default=io.SynthSpec.square)
    s.add_argument("--speed", type=int, default=io.SynthSpec.speed)
    s.add_argument("--noise", type=float, default=io.SynthSpec.noise_sigma)
    s.add_argument("--seed", type=int, default=42)
    s.set_defaults(fn=_cmd_synth)

    t = sub.add_parser("train", help="train PAN_Lite or PAN_Full")
    t.add_argument("--variant", choices=["lite", "full"], default="lite")
    t.add_argument("--data", required=True)
    t.add_argument("--epochs", type=int, default=training.Hyper.epochs)
    t.add_argument("--lr", type=float, default=0.01)
    t.add_argument("--batch", type=int, default=8)
    t.add_argument("--seed", type=int, default=42)
    t.add_argument("--milestones", type=int, nargs="*", default=list(training.Hyper.milestones))
    t.add_argument("--head", choices=["vap", "avg"], default="vap")
    t.add_argument("--encoding", choices=["e1", "e2"], default="e1")
    t.add_argument("--depth", type=int, default=1)
    t.add_argument("--out", required=True)
    t.set_defaults(fn=_cmd_train)

    e = sub.add_parser("eval", help="top-1 and confusion matrix of a checkpoint")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--variant", choices=["lite", "full"])
    e.add_argument("--ensemble", help="second checkpoint whose scores are averaged in")
    e.add_argument("--json", action="store_true")
    e.set_defaults(fn=_cmd_eval)

    x = sub.add_parser("extract", help="write PA maps of one clip as PNGs")
    x.add_argument("--input", required=True)
    x.add_argument("--weights", help="checkpoint supplying PA conv weights (default: seeded init)")
    x.add_argument("--depth", type=int, default=1)
    x.add_argument("--seed", type=int, default=0)
    x.add_argument("--out", required=True)
    x.set_defaults(fn=_cmd_extract)

    b = sub.add_parser("bench", help="PA vs Horn-Schunck throughput")
    b.add_argument("--size", type=int, default=224)
    b.add_argument("--pairs", type=int, default=64)
    b.add_argument("--reps", type=int, default=5)
    b.add_argument("--threads", type=int, help=f"worker threads (default ${bench.WORKERS_ENV} or 1)")
    b.add_argument("--hs-iters", type=int, default=100)
    b.add_argument("--methods", nargs="+", choices=bench.METHODS, default=list(bench.METHODS))
    b.add_argument("--json", action="store_true")
    b.set_defaults(fn=_cmd_bench)

    g = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(fn=_cmd_gradcheck)

    v = sub.add_parser("viz", help="export per-clip VAP timescale weights")
    v.add_argument("--ckpt", required=True)
    v.add_argument("--data", required=True)
    v.add_argument("--out", required=True)
    v.set_defaults(fn=_cmd_viz)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    a = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, format="%(message)s")
    try:
        return a.fn(a)
    except (ValueError, OSError) as exc:
        print(f"pan {a.cmd}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
