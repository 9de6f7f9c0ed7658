"""Persistence of appearance on a moving square.

Renders one MoveRight clip, computes PA maps with a freshly initialised
d=1 module and with the depth-0 (raw pixel) variant, and writes both as
PNGs next to a plain frame.  The maps light up on the square's leading
and trailing edges only; the static textured background stays dark.

    python3 demos/pa_maps.py [out_dir]
"""
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from pan import io, pa

out = Path(sys.argv[1] if len(sys.argv) > 1 else "pa_maps_out")
out.mkdir(parents=True, exist_ok=True)

spec = io.SynthSpec(clips_per_class=1, noise_sigma=0.0, seed=0)
frames, geom = io.render_clip(spec, io.CLASSES.index("MoveRight"), np.random.default_rng(3))
clip = [f.transpose(2, 0, 1).astype(np.float32) / 255 for f in frames[:5]]
Image.fromarray(frames[0]).save(out / "frame0.png")
print(f"square starts at {geom['start']}, velocity {geom['velocity']} px/frame")

for depth in (0, 1):
    cfg = pa.PAConfig(depth=depth)
    stack = pa.pa_stack(clip, pa.init_pa_weights(cfg, seed=0), cfg)
    for i, m in enumerate(stack.pa_maps):
        io.export_pa_png(m, out / f"pa_d{depth}_{i}.png")
    m = stack.pa_maps[0][0]
    hot = m > 0.5 * m.max()
    ys, xs = np.nonzero(hot)
    print(f"depth {depth}: {len(stack.pa_maps)} maps, max {m.max():.3f}, "
          f"{hot.mean():.1%} of pixels above half max, columns {xs.min()}..{xs.max()}")
print(f"wrote PNGs to {out}/")
