"""Command-line interface: config ingestion, subcommand dispatch,
deterministic seeding and report emission.

Config files are JSON; numbers parse with standard correctly-rounded
decimal semantics and scientific notation.  Unknown keys are rejected and
all violations are reported at once.  Every sampled operation draws from a
stream derived from the mandatory seed (one numbered stream per
subsystem), so reruns are byte-identical regardless of worker count.
Emitted CSVs carry a header row and a JSON sidecar (schema version,
config hash, library versions, wall time); wall-clock timing lives only in
the sidecar so the CSVs themselves are reproducible.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .cantor import SParams, build_tree, critical_ratio, min_branching
from .capacity import CapacityReport, ratio_report
from .geometry import SPoint
from .kernel import KernelSpec, kernel_bound_audit
from .multiscale import ScaleAnalysis, lemma_suite
from .operator import PsOperator, QuadratureSpec, op_norm_lower

SCHEMA_VERSION = "1"

# seed stream ids per subsystem
STREAM_GROWTH = 1
STREAM_SUPNORM = 2
STREAM_CORNER = 3
STREAM_BMO = 4
STREAM_AUDIT = 5
STREAM_SCALES = 6

_TOP_KEYS = {
    "n", "s", "d", "tau0", "lambda", "k", "seed", "kernel", "quadrature",
    "analysis", "sweep", "budget", "points", "eps", "weights", "theta_csv",
}
_KERNEL_KEYS = {"quad_tol", "method"}
_QUAD_KEYS = {"base_order", "near_refine", "near_threshold", "target_rel_tol"}
_ANALYSIS_KEYS = {"B", "N_L", "A", "kappa"}
_SWEEP_KEYS = {"n", "s", "d", "tau0", "lambda", "k", "run_id"}


@dataclass
class RunConfig:
    n: int
    s: float
    d: int
    tau0: float
    lam: object
    k: int
    seed: int
    quad: QuadratureSpec
    kernel_tol: float = 1e-8
    B: float = 100.0
    N_L: int = 10
    A: float = 50.0
    kappa: float | None = None
    budget: int = 200
    sweep: list = field(default_factory=list)
    points: list = field(default_factory=list)
    eps: float = 0.0
    weights: object = None
    theta_csv: str | None = None
    raw: dict = field(default_factory=dict)

    def build_tree(self):
        params = SParams(self.n, self.s, d=self.d, tau0=self.tau0)
        return build_tree(params, self.lam, self.k)


class ConfigError(ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


def _reject_json_constants(name):
    raise ValueError(f"non-finite number {name!r} not allowed in config")


def parse_config(source, *, for_capacity: bool = False) -> RunConfig:
    """Validate a config document (path, file object or dict); collects all
    violations instead of stopping at the first."""
    if isinstance(source, dict):
        doc = source
    elif hasattr(source, "read"):
        doc = json.load(source, parse_constant=_reject_json_constants)
    else:
        with open(source, "r", encoding="utf-8") as fh:
            doc = json.load(fh, parse_constant=_reject_json_constants)

    errs: list[str] = []
    if not isinstance(doc, dict):
        raise ConfigError(["config root must be an object"])
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        errs.append(f"unknown keys: {sorted(unknown)}")

    def sub(key, allowed):
        block = doc.get(key, {})
        if not isinstance(block, dict):
            errs.append(f"{key} must be an object")
            return {}
        bad = set(block) - allowed
        if bad:
            errs.append(f"unknown {key} keys: {sorted(bad)}")
        return block

    kern = sub("kernel", _KERNEL_KEYS)
    quad_doc = sub("quadrature", _QUAD_KEYS)
    ana = sub("analysis", _ANALYSIS_KEYS)

    n = doc.get("n", 1)
    if not isinstance(n, int) or n < 1:
        errs.append(f"n must be a positive integer, got {n!r}")
        n = 1
    s = doc.get("s")
    if not isinstance(s, (int, float)):
        errs.append("s is required and must be a number")
        s = 1.0
    s = float(s)
    if not 0.0 < s <= 1.0:
        errs.append(f"s={s} outside (0, 1]")
    elif for_capacity and not s > 0.5:
        errs.append(f"s={s}: capacity and operator commands require s > 1/2")

    d = doc.get("d")
    tau0 = doc.get("tau0")
    if 0.5 < s <= 1.0:
        dmin = min_branching(s)
        if d is None:
            d = dmin
        elif not isinstance(d, int) or d < dmin:
            errs.append(f"d={d} below the minimum admissible branching {dmin}")
            d = dmin
        if tau0 is None:
            tau0 = 0.9 / d
        elif not 0.0 < tau0 < 1.0 / d:
            errs.append(f"tau0={tau0} outside (0, 1/d)=(0, {1.0 / d})")
            tau0 = 0.9 / d
    else:
        d = d or 2
        tau0 = tau0 or 0.9 / d

    k = doc.get("k", 0)
    if not isinstance(k, int) or k < 0:
        errs.append(f"k must be a non-negative integer, got {k!r}")
        k = 0

    lam = doc.get("lambda", "critical")
    if isinstance(lam, str):
        if lam != "critical":
            errs.append(f"lambda spec must be a number, list, or 'critical', got {lam!r}")
        elif 0.5 < s <= 1.0:
            lam_val = critical_ratio(SParams(n, s, d=d, tau0=0.999 / d))
            if lam_val > tau0:
                errs.append(
                    f"critical ratio {lam_val:.6f} exceeds tau0={tau0}; raise tau0"
                )
    elif isinstance(lam, (int, float)):
        if not 0.0 < float(lam) <= tau0:
            errs.append(f"lambda={lam} outside (0, tau0={tau0}]")
    elif isinstance(lam, list):
        if len(lam) != k:
            errs.append(f"lambda list must have k={k} entries, got {len(lam)}")
        for j, v in enumerate(lam, start=1):
            if not isinstance(v, (int, float)) or not 0.0 < float(v) <= tau0:
                errs.append(f"lambda_{j}={v!r} outside (0, tau0={tau0}]")
    else:
        errs.append(f"bad lambda spec {lam!r}")

    seed = doc.get("seed")
    if not isinstance(seed, int):
        errs.append("seed is required (64-bit integer): sampled operations "
                    "must be reproducible")
        seed = 0

    quad = QuadratureSpec(
        base_order=quad_doc.get("base_order", 8),
        near_refine=quad_doc.get("near_refine", 64),
        near_threshold=quad_doc.get("near_threshold", 1.0),
        target_rel_tol=quad_doc.get("target_rel_tol", 1e-6),
    )

    sweep = doc.get("sweep", [])
    if not isinstance(sweep, list):
        errs.append("sweep must be a list of run objects")
        sweep = []
    for i, run in enumerate(sweep):
        if not isinstance(run, dict):
            errs.append(f"sweep[{i}] must be an object")
            continue
        bad = set(run) - _SWEEP_KEYS
        if bad:
            errs.append(f"sweep[{i}] unknown keys: {sorted(bad)}")
        rs = run.get("s", s)
        if for_capacity and not 0.5 < rs <= 1.0:
            errs.append(f"sweep[{i}]: s={rs} outside (1/2, 1]")

    if errs:
        raise ConfigError(errs)

    return RunConfig(
        n=n, s=s, d=d, tau0=tau0, lam=lam, k=k, seed=seed, quad=quad,
        kernel_tol=kern.get("quad_tol", 1e-8),
        B=ana.get("B", 100.0), N_L=ana.get("N_L", 10),
        A=ana.get("A", 50.0), kappa=ana.get("kappa"),
        budget=doc.get("budget", 200),
        sweep=sweep, points=doc.get("points", []),
        eps=doc.get("eps", 0.0), weights=doc.get("weights"),
        theta_csv=doc.get("theta_csv"), raw=doc,
    )


# -- emission helpers ---------------------------------------------------------


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def _write_csv(path, header, rows, sidecar_extra):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    meta = {
        "schema_version": SCHEMA_VERSION,
        "versions": {
            "spcantor": __version__,
            "python": sys.version.split()[0],
            "numpy": np.__version__,
        },
    }
    meta.update(sidecar_extra)
    with open(str(path) + ".meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(
        json.dumps(cfg.raw, sort_keys=True).encode()
    ).hexdigest()


def _rng(cfg: RunConfig, stream: int):
    return np.random.default_rng([cfg.seed, stream])


# -- subcommands --------------------------------------------------------------


def _cmd_gen(cfg: RunConfig, out: str) -> dict:
    t0 = time.perf_counter()
    tree = cfg.build_tree()
    rows = []
    for idx in range(tree.count()):
        cube = tree.gen_cube(idx)
        rows.append([idx] + list(cube.corner.x) + [cube.corner.t, cube.side])
    header = ["index"] + [f"x{i}" for i in range(tree.n)] + ["t", "side"]
    path = os.path.join(out, "cubes.csv")
    _write_csv(path, header, rows, {
        "config_sha256": _config_hash(cfg), "seed": cfg.seed,
        "command": "gen", "wall_time_s": time.perf_counter() - t0,
    })
    return {"command": "gen", "cubes": len(rows), "out": path}


def _cmd_kernel_audit(cfg: RunConfig, out: str) -> dict:
    t0 = time.perf_counter()
    spec = KernelSpec(cfg.n, cfg.s, quad_tol=cfg.kernel_tol)
    rng = _rng(cfg, STREAM_AUDIT)
    # at s = 1 (Gaussian decay) cap the scaled radius so the two-sided
    # profile bracket stays representable
    u_cap = 8.0 if cfg.s == 1.0 else math.inf
    pts = []
    for r in np.geomspace(0.1, 10.0, 8):
        for t in np.geomspace(0.01, 10.0, 8):
            if r * t ** (-1 / (2 * cfg.s)) > u_cap:
                continue
            x = np.zeros(cfg.n)
            x[0] = r
            pts.append(SPoint(tuple(x), float(t)))
    pairs = []
    for p in pts[:: max(1, len(pts) // 24)]:
        scale = max(np.linalg.norm(p.x), abs(p.t) ** (1 / (2 * cfg.s)))
        dx = rng.normal(size=cfg.n) * 0.05 * scale
        dt = rng.normal() * 0.05 * scale ** (2 * cfg.s)
        pairs.append((p, SPoint(tuple(np.add(p.x, dx)), p.t + dt)))
    report = kernel_bound_audit(spec, pts, pairs)
    path = os.path.join(out, "kernel_audit.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"config_sha256": _config_hash(cfg), "report": report},
                  fh, indent=1, sort_keys=True)
        fh.write("\n")
    return {"command": "kernel-audit", "out": path,
            "bg_spread": (report["bg_ratio"]["sup"] or 0)
            - (report["bg_ratio"]["inf"] or 0),
            "wall_time_s": time.perf_counter() - t0}


def _resolve_weights(cfg: RunConfig, N: int):
    if cfg.weights is None or cfg.weights == "ones":
        return None
    w = np.asarray(cfg.weights, dtype=float)
    if w.shape != (N,):
        raise ConfigError([f"weights must have {N} entries"])
    return w


def _cmd_field(cfg: RunConfig, out: str) -> dict:
    t0 = time.perf_counter()
    if not cfg.points:
        raise ConfigError(["field command requires 'points'"])
    tree = cfg.build_tree()
    op = PsOperator(tree, cfg.quad)
    pts = np.asarray(cfg.points, dtype=float)
    F = op.field(pts, weights=_resolve_weights(cfg, op.N), eps=cfg.eps)
    rows = [list(p) + list(f) for p, f in zip(pts, F)]
    header = [f"x{i}" for i in range(tree.n)] + ["t"] + [
        f"field_{i}" for i in range(tree.n)
    ]
    path = os.path.join(out, "field.csv")
    _write_csv(path, header, rows, {
        "config_sha256": _config_hash(cfg), "seed": cfg.seed,
        "command": "field", "eps": cfg.eps,
        "wall_time_s": time.perf_counter() - t0,
    })
    return {"command": "field", "points": len(rows),
            "max_magnitude": float(np.max(np.linalg.norm(F, axis=1))),
            "out": path}


def _cmd_l2norm(cfg: RunConfig, out: str) -> dict:
    t0 = time.perf_counter()
    tree = cfg.build_tree()
    op = PsOperator(tree, cfg.quad)
    w = _resolve_weights(cfg, op.N)
    node_data = op.node_field(weights=w)
    l2 = op.l2_norm_sq(node_data=node_data)
    avgs = op.cube_averages(weights=w)
    rows = [[a] + list(avgs[a]) for a in range(op.N)]
    header = ["index"] + [f"avg_{i}" for i in range(tree.n)]
    path = os.path.join(out, "l2norm.csv")
    _write_csv(path, header, rows, {
        "config_sha256": _config_hash(cfg), "seed": cfg.seed,
        "command": "l2norm", "wall_time_s": time.perf_counter() - t0,
    })
    sigma = tree.sigma()
    return {"command": "l2norm", "l2_sq": l2, "sigma_k": sigma,
            "l2_ratio": l2 / sigma, "out": path}


def _cmd_matrix(cfg: RunConfig, out: str) -> dict:
    t0 = time.perf_counter()
    tree = cfg.build_tree()
    op = PsOperator(tree, cfg.quad)
    mat = op.averaged_matrix()
    rows = []
    for a in range(op.N):
        for b in range(op.N):
            rows.append([a, b] + list(mat.values[a, b]) + [int(mat.flags[a, b])])
    header = ["a", "b"] + [f"m_{i}" for i in range(tree.n)] + ["flagged"]
    path = os.path.join(out, "matrix.csv")
    _write_csv(path, header, rows, {
        "config_sha256": _config_hash(cfg), "seed": cfg.seed,
        "command": "matrix", "wall_time_s": time.perf_counter() - t0,
    })
    sigma = op_norm_lower(mat.values, np.full(op.N, op.mass))
    return {"command": "matrix", "entries": len(rows),
            "opnorm_lower": sigma, "flagged": mat.flagged_count, "out": path}


def _read_theta_csv(path):
    lambdas, thetas = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        cols = set(reader.fieldnames or ())
        for row in reader:
            if "lambda" in cols and row.get("lambda"):
                lambdas.append(float(row["lambda"]))
            if "theta" in cols and row.get("theta"):
                thetas.append(float(row["theta"]))
    return lambdas or None, thetas or None


def _cmd_scales(cfg: RunConfig, out: str) -> dict:
    t0 = time.perf_counter()
    if cfg.theta_csv:
        lambdas, thetas = _read_theta_csv(cfg.theta_csv)
        d = cfg.d
        cpc = (d + 1) * d ** cfg.n
        if thetas is None:
            # derive densities from the contractions
            thetas = [1.0]
            for lam in lambdas:
                thetas.append(thetas[-1] / (cpc * lam ** (cfg.n + 1)))
        if lambdas is None:
            # invert the density recursion
            lambdas = [
                (thetas[j] / (thetas[j + 1] * cpc)) ** (1.0 / (cfg.n + 1))
                for j in range(len(thetas) - 1)
            ]
        analysis = ScaleAnalysis.from_theta(
            thetas, lambdas, d, B=cfg.B, N_L=cfg.N_L
        )
    else:
        analysis = ScaleAnalysis.from_tree(cfg.build_tree(), B=cfg.B, N_L=cfg.N_L)

    rows = []
    for j in range(analysis.k):
        rows.append([
            j, float(analysis.theta[j]),
            float(analysis.p[j]) if analysis.p is not None else "",
            "good" if analysis.good_scales is not None and analysis.good_scales[j]
            else "bad",
        ])
    path1 = os.path.join(out, "scales.csv")
    _write_csv(path1, ["j", "theta", "p", "class"], rows, {
        "config_sha256": _config_hash(cfg), "seed": cfg.seed,
        "command": "scales", "wall_time_s": time.perf_counter() - t0,
    })
    rows = []
    for (lo, hi), good, long_ in zip(
        analysis.intervals, analysis.good_intervals, analysis.long_intervals
    ):
        rows.append([lo, hi, analysis.sigma(lo, hi),
                     "good" if good else "bad",
                     "long" if long_ else "short"])
    path2 = os.path.join(out, "intervals.csv")
    _write_csv(path2, ["s_j", "s_j1", "sigma", "class", "length_class"], rows, {
        "config_sha256": _config_hash(cfg), "seed": cfg.seed,
        "command": "scales", "wall_time_s": time.perf_counter() - t0,
    })
    report = lemma_suite(analysis)
    path3 = os.path.join(out, "lemmas.json")
    with open(path3, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=1, sort_keys=True, default=float)
        fh.write("\n")
    return {"command": "scales", "k": analysis.k,
            "stop": analysis.stop, "lemmas_ok": report["all_ok"],
            "out": [path1, path2, path3]}


def _sweep_row(args):
    run, seed, quad_tuple, budget = args
    quad = QuadratureSpec(*quad_tuple)
    rows, errors = ratio_report([run], seed, quad=quad, budget=budget)
    return rows, errors


def _cmd_capacity_sweep(cfg: RunConfig, out: str, workers: int,
                        fmt: str = "both") -> dict:
    t0 = time.perf_counter()
    runs = cfg.sweep or [{
        "n": cfg.n, "s": cfg.s, "lambda": cfg.lam, "k": cfg.k,
        "d": cfg.raw.get("d"), "tau0": cfg.raw.get("tau0"),
    }]
    for i, run in enumerate(runs):
        run.setdefault("run_id", f"run{i:03d}")
    quad_tuple = (cfg.quad.base_order, cfg.quad.near_refine,
                  cfg.quad.near_threshold, cfg.quad.target_rel_tol)
    jobs = [(run, cfg.seed, quad_tuple, cfg.budget) for run in runs]
    rows: list[CapacityReport] = []
    errors: list[dict] = []
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for r, e in pool.map(_sweep_row, jobs):
                rows.extend(r)
                errors.extend(e)
    else:
        for job in jobs:
            r, e = _sweep_row(job)
            rows.extend(r)
            errors.extend(e)
    paths = []
    if fmt in ("csv", "both"):
        path = os.path.join(out, "sweep.csv")
        _write_csv(path, CapacityReport.CSV_FIELDS,
                   [r.csv_row() for r in rows], {
                       "config_sha256": _config_hash(cfg), "seed": cfg.seed,
                       "command": "capacity-sweep", "workers": workers,
                       "wall_time_s": time.perf_counter() - t0,
                       "row_wall_times_s": [r.wall_time_s for r in rows],
                   })
        paths.append(path)
    if fmt in ("json", "both"):
        jpath = os.path.join(out, "sweep.json")
        with open(jpath, "w", encoding="utf-8") as fh:
            json.dump({
                "rows": [r.to_dict() for r in rows],
                "errors": errors,
            }, fh, indent=1, sort_keys=True, default=float)
            fh.write("\n")
        paths.append(jpath)
    return {"command": "capacity-sweep", "rows": len(rows),
            "errors": len(errors), "out": paths}


_COMMANDS = {
    "gen": (_cmd_gen, False),
    "kernel-audit": (_cmd_kernel_audit, False),
    "field": (_cmd_field, True),
    "l2norm": (_cmd_l2norm, True),
    "matrix": (_cmd_matrix, True),
    "scales": (_cmd_scales, False),
    "capacity-sweep": (_cmd_capacity_sweep, True),
}


def dispatch(cmd: str, cfg: RunConfig, out: str, workers: int = 1,
             fmt: str = "both") -> tuple[int, dict]:
    """Run a subcommand; exit code 0 on success, 1 on per-row failures
    (partial outputs kept), 2 on config errors."""
    os.makedirs(out, exist_ok=True)
    fn, _ = _COMMANDS[cmd]
    if cmd == "capacity-sweep":
        summary = fn(cfg, out, workers, fmt)
        code = 1 if summary.get("errors") else 0
    else:
        summary = fn(cfg, out)
        code = 0
    return code, summary


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="spcantor",
        description="s-parabolic Cantor sets, kernels and capacity estimates",
    )
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", required=True, help="JSON config path")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    parser.add_argument("--workers", type=int, default=None,
                        help="parallel workers for sweeps (default: cores)")
    parser.add_argument("--format", choices=["csv", "json", "both"],
                        default="both")
    args = parser.parse_args(argv)

    try:
        _, needs_cap = _COMMANDS[args.command]
        cfg = parse_config(args.config, for_capacity=needs_cap)
        if args.seed is not None:
            cfg.seed = args.seed
            cfg.raw["seed"] = args.seed
    except ConfigError as exc:
        print(json.dumps({"error": "config", "violations": exc.violations}))
        return 2
    except (OSError, json.JSONDecodeError, ValueError) as exc:
        print(json.dumps({"error": "config", "violations": [str(exc)]}))
        return 2

    workers = args.workers if args.workers is not None else (os.cpu_count() or 1)
    try:
        code, summary = dispatch(args.command, cfg, args.out, workers,
                                 fmt=args.format)
    except ConfigError as exc:
        print(json.dumps({"error": "config", "violations": exc.violations}))
        return 2
    print(json.dumps(summary, sort_keys=True, default=str))
    return code


if __name__ == "__main__":
    sys.exit(main())
