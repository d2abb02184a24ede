#!/usr/bin/env python3
"""Print a small diagnostic table for the radial kernel profiles: mass,
tail constants, and the envelope-bound brackets at a few exponents."""

import math
import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from spcantor.geometry import SPoint  # noqa: E402
from spcantor.kernel import (  # noqa: E402
    KernelSpec,
    kernel_bound_audit,
    normalization_mass,
    tail_constant_exact,
)


def run():
    print(f"{'s':>5s} {'mass(t=1)':>12s} {'tail C1':>10s} {'grad sup':>10s} "
          f"{'BG inf':>10s} {'BG sup':>10s}")
    for s in (0.6, 0.75, 0.9, 1.0):
        spec = KernelSpec(1, s)
        mass = normalization_mass(spec, 1.0)
        c1 = tail_constant_exact(1, s) if s < 1.0 else float("nan")
        u_cap = 8.0 if s == 1.0 else math.inf
        pts = [
            SPoint((float(r),), float(t))
            for r in np.geomspace(0.1, 10, 6)
            for t in np.geomspace(0.01, 10, 6)
            if r * t ** (-1 / (2 * s)) <= u_cap
        ]
        rep = kernel_bound_audit(spec, pts)
        print(f"{s:5.2f} {mass:12.9f} {c1:10.5f} "
              f"{rep['grad_ratio']['sup']:10.4f} "
              f"{rep['bg_ratio']['inf']:10.4g} {rep['bg_ratio']['sup']:10.4g}")
    return 0


if __name__ == "__main__":
    sys.exit(run())
