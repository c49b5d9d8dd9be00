#!/usr/bin/env python3
"""Radius scaling of the Riesz-Morrey capacity of centered balls.

At lam = n the Morrey norm is the plain L^p norm and the capacity of B(0, R)
scales like R^(n - alpha p).  We fit the log-log slope at two resolutions with
alpha = 1, p = 1.5 (continuum exponent 0.5), then repeat for lam < n where no
scaling law is claimed.
"""

import numpy as np

from morreykit.capacity import CompactSetSpec, riesz_morrey_capacity
from morreykit.field import Ball, ball_family, make_grid
from morreykit.morrey import MorreyIndex

RADII = [0.1, 0.2, 0.4]


def slope(N, alpha, idx):
    g = make_grid([(-1, 1)] * 2, N, Ball((0, 0), 1.0))
    fam = ball_family(g, max(1, N // 16), 8, anchors=[np.zeros(2)])
    vals = [riesz_morrey_capacity(CompactSetSpec.ball((0.0, 0.0), R), alpha, idx, fam).value for R in RADII]
    return float(np.polyfit(np.log(RADII), np.log(vals), 1)[0]), vals


if __name__ == "__main__":
    for lam in (2.0, 1.5):
        for N in (64, 128):
            s, vals = slope(N, 1.0, MorreyIndex(1.5, lam))
            print(f"lam={lam} N={N}: slope {s:.3f}  values " + " ".join(f"{v:.4g}" for v in vals))
    print("continuum exponent at lam = n: n - alpha p = 0.5")
