#!/usr/bin/env python3
"""Per-refinement growth of the L^{2,lam} norm of |x|^{-1/2} on the unit disk.

The norm over the declared ball family is dominated by the smallest centered
ball, whose term is (2 pi r^(lam - 1))^(1/2).  For lam < 1 that blows up like
r^((lam - 1)/2), so halving h multiplies it by 2^((1 - lam)/2): 1.11 at
lam = 0.7, far short of a doubling.  This prints the measured ratios next to
that prediction.
"""

import numpy as np

from morreykit.field import Ball, ball_family, make_grid, sample
from morreykit.morrey import MorreyIndex, morrey_norm


def norms(lam, resolutions):
    out = []
    for N in resolutions:
        g = make_grid([(-1, 1)] * 2, N, Ball((0, 0), 1.0))
        fam = ball_family(g, max(1, N // 16), 12, anchors=[np.zeros(2)])
        f = sample(lambda x: np.linalg.norm(x, axis=-1) ** -0.5, g)
        out.append(morrey_norm(f, MorreyIndex(2.0, lam), fam).value)
    return np.asarray(out)


if __name__ == "__main__":
    res = [64, 128, 256]
    print("lam   " + "  ".join(f"N={N:<5d}" for N in res) + "  ratios          predicted")
    for lam in (0.4, 0.7, 1.0, 1.3):
        v = norms(lam, res)
        ratios = v[1:] / v[:-1]
        pred = 2 ** max(0.0, (1 - lam) / 2)
        print(f"{lam:<5} " + "  ".join(f"{x:7.4f}" for x in v) + "  " + " ".join(f"{r:6.3f}" for r in ratios) + f"   {pred:.3f}")
