"""Martingale structure on the cube tree and the stopping-scale machinery.

The conditional-expectation projections onto cube-piecewise-constant
functions are exact tree aggregations (all children of a cube carry equal
mass), so differences, orthogonality, telescoping and the energy identity
hold at floating-point exactness.  The scale analysis (densities, smoothed
densities, stopping scales, good/bad classifications) replays the greedy
constructions and checks the inequality lemmas they satisfy.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from math import fsum

import numpy as np

from .cantor import CantorTree

__all__ = [
    "MartingaleDecomposition",
    "ScaleAnalysis",
    "project",
    "orthogonality_check",
    "energy_identity_check",
    "p_sequence",
    "stop_scales",
    "lemma_suite",
]

GOOD_SCALE_FACTOR = 40.0      # p_j <= 40 theta_j defines a good scale
GOOD_INTERVAL_FRACTION = 1.0 / 400.0


@dataclass
class MartingaleDecomposition:
    """Per-generation cube averages S_j and differences D_j = S_{j+1} - S_j.

    S[j] has one row per generation-j cube; D[j] is stored at generation
    j+1 resolution (children minus the parent average).  ``branching`` is
    the number of children per cube."""

    S: list
    D: list
    branching: int

    @property
    def k(self) -> int:
        return len(self.S) - 1

    def expand(self, arr: np.ndarray, gen: int) -> np.ndarray:
        """Replicate a generation-``gen`` vector down to generation k."""
        reps = self.branching ** (self.k - gen)
        return np.repeat(arr, reps, axis=0)

    def gen_mass(self, gen: int) -> float:
        return float(self.branching) ** (-gen)

    def node_slice(self, gen: int, idx: int) -> slice:
        """Rows of D[gen] supported on cube ``idx`` of generation ``gen``."""
        return slice(idx * self.branching, (idx + 1) * self.branching)


def project(tree: CantorTree, averages_k: np.ndarray) -> MartingaleDecomposition:
    """Build all projections from the generation-k cube averages.

    Parent averages are plain means over children (equal masses), so the
    aggregation is exact."""
    avg = np.asarray(averages_k, dtype=float)
    if avg.ndim == 1:
        avg = avg[:, None]
    cpc = tree.params.children_per_cube
    if avg.shape[0] != tree.count():
        raise ValueError("averages must have one row per generation-k cube")
    S = [avg]
    cur = avg
    for _ in range(tree.k):
        cur = cur.reshape(-1, cpc, avg.shape[1]).mean(axis=1)
        S.append(cur)
    S.reverse()
    D = []
    for j in range(tree.k):
        D.append(S[j + 1] - np.repeat(S[j], cpc, axis=0))
    return MartingaleDecomposition(S=S, D=D, branching=cpc)


def orthogonality_check(dec: MartingaleDecomposition, max_pairs: int = 10_000,
                        rng=None) -> float:
    """Max |<D_Q1 f, D_Q2 f>| over distinct difference nodes, exhaustive up
    to ``max_pairs`` pairs and seeded-random beyond."""
    nodes = []
    for j in range(dec.k):
        for idx in range(dec.S[j].shape[0]):
            nodes.append((j, idx))
    total_pairs = len(nodes) * (len(nodes) - 1) // 2
    if total_pairs <= max_pairs:
        pairs = [(a, b) for i, a in enumerate(nodes) for b in nodes[i + 1:]]
    else:
        if rng is None:
            raise ValueError("rng required when sampling pairs")
        idx = rng.integers(0, len(nodes), size=(max_pairs, 2))
        pairs = [(nodes[i], nodes[j]) for i, j in idx if i != j]
    worst = 0.0
    for (j1, i1), (j2, i2) in pairs:
        f1 = dec.expand(dec.D[j1][dec.node_slice(j1, i1)], j1 + 1)
        f2 = dec.expand(dec.D[j2][dec.node_slice(j2, i2)], j2 + 1)
        # supports: cube i1 at gen j1 vs cube i2 at gen j2
        lo1 = i1 * dec.branching ** (dec.k - j1)
        lo2 = i2 * dec.branching ** (dec.k - j2)
        n1, n2 = f1.shape[0], f2.shape[0]
        lo = max(lo1, lo2)
        hi = min(lo1 + n1, lo2 + n2)
        if hi <= lo:
            continue
        a = f1[lo - lo1 : hi - lo1]
        b = f2[lo - lo2 : hi - lo2]
        ip = dec.gen_mass(dec.k) * float(np.sum(a * b))
        worst = max(worst, abs(ip))
    return worst


def energy_identity_check(dec: MartingaleDecomposition) -> dict:
    """Compare ||S_k f||^2 with sum ||D_Q f||^2.

    For mean-zero f the two coincide (the discrete energy identity); in
    general they differ by exactly |mean f|^2, which is also reported."""
    k = dec.k
    mass_k = dec.gen_mass(k)
    lhs = fsum((mass_k * np.sum(dec.S[k] ** 2, axis=1)).tolist())
    terms = []
    for j in range(k):
        mass = dec.gen_mass(j + 1)
        terms.extend((mass * np.sum(dec.D[j] ** 2, axis=1)).tolist())
    rhs = fsum(terms)
    mean = dec.S[0][0]
    mean_sq = float(np.sum(mean ** 2))
    if lhs == 0.0:
        return {"lhs": lhs, "rhs": rhs, "rel_diff": 0.0, "mean_sq": mean_sq,
                "degenerate": True}
    rel = abs(lhs - rhs) / lhs
    norm_f = math.sqrt(lhs)
    bound = max(1e-10, 2.0 * math.sqrt(mean_sq) * norm_f / lhs)
    return {"lhs": lhs, "rhs": rhs, "rel_diff": rel, "mean_sq": mean_sq,
            "within_defect_bound": rel <= bound,
            "defect_bound": bound, "degenerate": False}


def p_sequence(theta: np.ndarray, lambdas) -> np.ndarray:
    """Smoothed densities p_j = sum_{r<=j} theta_r ell_j / ell_r via the
    exact recursion p_j = lambda_j p_{j-1} + theta_j."""
    theta = np.asarray(theta, dtype=float)
    lambdas = np.asarray(lambdas, dtype=float)
    if lambdas.shape[0] != theta.shape[0] - 1:
        raise ValueError("need one contraction per step between thetas")
    p = np.empty_like(theta)
    p[0] = theta[0]
    for j in range(1, theta.shape[0]):
        p[j] = lambdas[j - 1] * p[j - 1] + theta[j]
    return p


def stop_scales(theta: np.ndarray, B: float, k: int | None = None) -> list[int]:
    """Greedy stopping scales: from s_j, the next is the least i > s_j with
    i = k, or theta_i > B theta_{s_j}, or theta_i < theta_{s_j} / B."""
    if not B > 1.0:
        raise ValueError("B must exceed 1")
    theta = np.asarray(theta, dtype=float)
    k = theta.shape[0] - 1 if k is None else k
    stop = [0]
    while stop[-1] < k:
        base = theta[stop[-1]]
        nxt = k
        for i in range(stop[-1] + 1, k + 1):
            if i == k or theta[i] > B * base or theta[i] < base / B:
                nxt = i
                break
        stop.append(nxt)
    return stop


@dataclass
class ScaleAnalysis:
    """Scale-by-scale data: densities, smoothed densities, stopping
    intervals and good/bad, long/short classifications.

    ``N_L`` only labels intervals long/short.  The default (10) exercises
    the long/short code path at desk scale; the long-interval difference
    estimates require N_L far above 400 B^4 + 1, which is astronomically
    larger, so no inequality involving N_L is asserted here."""

    theta: np.ndarray
    lambdas: np.ndarray | None
    d: int
    B: float
    N_L: int
    p: np.ndarray | None = None
    stop: list[int] = field(default_factory=list)
    intervals: list[tuple[int, int]] = field(default_factory=list)
    good_scales: np.ndarray | None = None
    good_intervals: list[bool] = field(default_factory=list)
    long_intervals: list[bool] = field(default_factory=list)

    @property
    def k(self) -> int:
        return self.theta.shape[0] - 1

    def sigma(self, lo: int = 0, hi: int | None = None, subset=None) -> float:
        """sum of theta_j^2 over [lo, hi) intersected with the index subset."""
        hi = self.k if hi is None else hi
        idx = range(lo, hi)
        if subset is not None:
            idx = [j for j in idx if subset[j]]
        return fsum(float(self.theta[j]) ** 2 for j in idx)

    @classmethod
    def from_theta(cls, theta, lambdas=None, d: int = 2, B: float = 100.0,
                   N_L: int = 10) -> "ScaleAnalysis":
        theta = np.asarray(theta, dtype=float)
        if np.any(theta <= 0):
            raise ValueError("densities must be positive")
        lambdas = None if lambdas is None else np.asarray(lambdas, dtype=float)
        a = cls(theta=theta, lambdas=lambdas, d=d, B=B, N_L=N_L)
        if lambdas is not None:
            a.p = p_sequence(theta, lambdas)
            a.good_scales = np.zeros(max(a.k, 0), dtype=bool)
            for j in range(a.k):
                a.good_scales[j] = a.p[j] <= GOOD_SCALE_FACTOR * theta[j]
        a.stop = stop_scales(theta, B)
        a.intervals = list(zip(a.stop[:-1], a.stop[1:]))
        for (lo, hi) in a.intervals:
            a.long_intervals.append(hi - lo >= N_L)
            if a.good_scales is not None:
                si = a.sigma(lo, hi)
                sg = a.sigma(lo, hi, subset=a.good_scales)
                a.good_intervals.append(sg >= GOOD_INTERVAL_FRACTION * si)
            else:
                a.good_intervals.append(False)
        return a

    @classmethod
    def from_tree(cls, tree: CantorTree, B: float = 100.0, N_L: int = 10):
        return cls.from_theta(
            tree.thetas(), np.asarray(tree.lambdas), tree.d, B=B, N_L=N_L
        )


def lemma_suite(analysis: ScaleAnalysis, slack: float = 1e-12) -> dict:
    """The inequality lemmas behind the stopping construction.

    Young bound      : sum p_j^2 <= (d/(d-1))^2 sum theta_j^2 over [0, k-1]
    bad-scale mass   : sigma(bad) <= sigma([0, k-1]) / 400
    good recombination: sigma([0, k-1]) <= (399/398) sum over good intervals
    endpoint bound   : first good scale of a good interval sits in the first
                       400 B^4 / (400 B^4 + 1) fraction of the interval.

    All four are theorems when the densities come from contractions with
    lambda_j <= tau0 < 1/d; each is evaluated with additive slack.
    """
    a = analysis
    k = a.k
    out: dict = {}

    def record(name, lhs, rhs):
        out[name] = {"lhs": lhs, "rhs": rhs,
                     "ok": lhs <= rhs + slack * max(1.0, abs(rhs))}

    if a.p is None:
        warnings.warn("densities not generated from contractions: Young bound skipped")
        out["young"] = {"skipped": True}
    else:
        lhs = fsum(float(a.p[j]) ** 2 for j in range(k))
        rhs = (a.d / (a.d - 1.0)) ** 2 * a.sigma(0, k)
        record("young", lhs, rhs)
        bad = ~a.good_scales
        record("bad_scale_mass", a.sigma(0, k, subset=bad),
               a.sigma(0, k) / 400.0)
        good_sum = fsum(
            a.sigma(lo, hi) for (lo, hi), g in zip(a.intervals, a.good_intervals) if g
        )
        record("good_recombination", a.sigma(0, k), (399.0 / 398.0) * good_sum)
        worst = None
        for (lo, hi), g in zip(a.intervals, a.good_intervals):
            if not g:
                continue
            goods = [j for j in range(lo, hi) if a.good_scales[j]]
            if not goods:
                continue
            j0 = goods[0]
            frac = 400.0 * a.B ** 4 / (400.0 * a.B ** 4 + 1.0)
            lhs = j0 - lo
            rhs = frac * (hi - lo)
            if worst is None or lhs - rhs > worst[0] - worst[1]:
                worst = (lhs, rhs)
        if worst is None:
            out["endpoint_bound"] = {"ok": True, "vacuous": True}
        else:
            record("endpoint_bound", worst[0], worst[1])
    out["all_ok"] = all(v.get("ok", True) for v in out.values() if isinstance(v, dict))
    return out
