"""What the VAP timescale bank sees.

Pools a toy 8-step sequence through the k in {1, 2, 4} residue-class
maxima, then shows how the weight-perception MLP turns the bank into a
probability vector over the 7 rows and how a constant sequence collapses
to the per-frame feature.

    python3 demos/vap_timescales.py
"""
import numpy as np

from pan import vap

seq = np.arange(1, 9, dtype=float)[:, None]
bank = vap.timescale_pool(seq)
for (k, j), row in zip(bank.scales, bank.v[:, 0]):
    print(f"k={k} offset {j}: max over frames {list(range(j, 8, k))} -> {row:g}")

rng = np.random.default_rng(0)
f = rng.standard_normal((8, 16))
vp = vap.VAPParams.init(bank.T, 16, 4, alpha=4, seed=0, dtype=np.float64)
scores, w, cache = vap.vap_forward(f, vp)
print("\nrandom features, untrained head")
print("timescale weights w:", np.round(w[:, 0], 3), "sum", round(float(w.sum()), 6))
print("class scores:", np.round(scores, 3))

row = rng.standard_normal(16)
_, _, cache = vap.vap_forward(np.tile(row, (8, 1)), vp)
print("\nconstant sequence: max |f_g - f| =", float(np.abs(cache["fg"] - row).max()))
