#!/usr/bin/env python3
"""Run the standard desk-scale capacity sweep and print the headline table.

The sweep covers s in {0.75, 1}, contractions {0.2 ... critical}, k <= 3;
outputs land in out/standard_sweep/ (CSV + JSON + sidecars).
"""

import json
import math
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from spcantor.cli import main  # noqa: E402

HERE = os.path.dirname(os.path.abspath(__file__))
OUT = os.path.join(HERE, "..", "out", "standard_sweep")


def run():
    cfg = os.path.join(HERE, "standard_sweep.json")
    code = main(["capacity-sweep", "--config", cfg, "--out", OUT])
    if code != 0:
        return code
    with open(os.path.join(OUT, "sweep.json")) as fh:
        rows = json.load(fh)["rows"]
    print(f"\n{'run':26s} {'bound':>9s} {'l2_ratio':>9s} {'g_aux*rt':>9s} "
          f"{'g_plus*rt':>9s} {'corner':>7s}")
    for r in rows:
        rt = math.sqrt(r["sigma_k"])
        print(f"{r['run_id']:26s} {r['bound']:9.5f} {r['l2_ratio']:9.5f} "
              f"{r['gamma_aux'] * rt:9.4f} {r['gamma_plus_lower'] * rt:9.4f} "
              f"{r['corner_const']:7.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(run())
