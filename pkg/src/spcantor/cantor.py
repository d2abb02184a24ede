"""Corner-like s-parabolic Cantor sets.

Each generation keeps d sub-intervals per spatial axis and d+1 per temporal
axis, placed at the extremes with uniform gaps.  Generation r uses the
contraction ratio lambda_r relative to its parent, so generation-j cubes have
spatial side ell_j = lambda_1 * ... * lambda_j and temporal extent ell_j^(2s).
The uniform probability measure mu_k on generation k factorizes across axes,
which lets box measures be computed exactly by 1-d interval descent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Box, SPCube, SPoint, sp_dilate

__all__ = [
    "SParams",
    "CantorTree",
    "min_branching",
    "critical_ratio",
    "build_tree",
    "growth_check",
    "doubling_search",
    "small_boundary_check",
    "lebesgue_measure",
    "GrowthReport",
]


def min_branching(s: float) -> int:
    """Least integer d >= 2 with d + 1 < d^(2s). Requires s in (1/2, 1]."""
    if not 0.5 < s <= 1.0:
        raise ValueError(f"s must lie in (1/2, 1], got {s}")
    d = 2
    while not d + 1 < d ** (2.0 * s):
        d += 1
    return d


@dataclass(frozen=True)
class SParams:
    """Construction parameters: spatial dimension n, exponent s, branching d,
    contraction cap tau0 < 1/d."""

    n: int
    s: float
    d: int | None = None
    tau0: float | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n}")
        if not 0.5 < self.s <= 1.0:
            raise ValueError(f"s must lie in (1/2, 1], got {self.s}")
        d = min_branching(self.s) if self.d is None else int(self.d)
        if d < 2 or not d + 1 < d ** (2.0 * self.s):
            raise ValueError(
                f"branching d={d} violates d + 1 < d^(2s) at s={self.s} "
                f"(minimum admissible d is {min_branching(self.s)})"
            )
        tau0 = 0.9 / d if self.tau0 is None else float(self.tau0)
        if not 0.0 < tau0 < 1.0 / d:
            raise ValueError(f"tau0 must lie in (0, 1/d) = (0, {1.0 / d}), got {tau0}")
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "tau0", tau0)

    @property
    def children_per_cube(self) -> int:
        return (self.d + 1) * self.d ** self.n


def critical_ratio(params: SParams) -> float:
    """Contraction ((d+1) d^n)^(-1/(n+1)); using it at every generation
    forces theta_j = 1 for all j."""
    return params.children_per_cube ** (-1.0 / (params.n + 1))


def _scale_offsets(lam: float, branch: int, length_exp: float):
    """Relative child offsets inside a unit parent for one axis.

    ``length_exp`` is 1 for spatial axes (child length lam) and 2s for the
    temporal axis (child length lam^(2s), branch d+1 children).
    """
    child = lam ** length_exp
    gap = (1.0 - branch * child) / (branch - 1)
    if gap <= 0:
        raise ValueError(f"contraction {lam} leaves no gap for branch {branch}")
    return np.array([c * (child + gap) for c in range(branch)]), child


class CantorTree:
    """One finite generation of the Cantor construction plus its measure.

    Immutable after construction; all queries are pure.
    """

    def __init__(self, params: SParams, lambdas, k: int):
        if k < 0:
            raise ValueError(f"generation count must be >= 0, got {k}")
        lambdas = tuple(float(v) for v in lambdas)
        if len(lambdas) != k:
            raise ValueError(f"need {k} contraction ratios, got {len(lambdas)}")
        for j, lam in enumerate(lambdas, start=1):
            if not 0.0 < lam <= params.tau0:
                raise ValueError(
                    f"lambda_{j}={lam} outside (0, tau0={params.tau0}]"
                )
        self.params = params
        self.lambdas = lambdas
        self.k = k
        n, d, s = params.n, params.d, params.s

        # ell[j] = spatial side of generation-j cubes; ell[0] = 1
        ell = [1.0]
        for lam in lambdas:
            ell.append(ell[-1] * lam)
        self.ell = np.array(ell)

        # per-generation relative offsets (in units of the parent side/extent)
        self._sp_off = []   # generation r (1-based): (d,) spatial offsets
        self._t_off = []    # generation r: (d+1,) temporal offsets
        for lam in lambdas:
            so, _ = _scale_offsets(lam, d, 1.0)
            to, _ = _scale_offsets(lam, d + 1, 2.0 * s)
            self._sp_off.append(so)
            self._t_off.append(to)

        self._cached_corners: dict[int, np.ndarray] = {}

    # -- basic counts and masses ------------------------------------------

    @property
    def n(self) -> int:
        return self.params.n

    @property
    def s(self) -> float:
        return self.params.s

    @property
    def d(self) -> int:
        return self.params.d

    def count(self, j: int | None = None) -> int:
        j = self.k if j is None else j
        return self.params.children_per_cube ** j

    def cube_mass(self, j: int | None = None) -> float:
        """mu_k mass of a single generation-j cube, (d+1)^-j d^-nj."""
        j = self.k if j is None else j
        return 1.0 / self.count(j)

    def theta(self, j: int) -> float:
        """Density mu_k(Q^j) / ell_j^(n+1); independent of the cube."""
        if not 0 <= j <= self.k:
            raise ValueError(f"generation {j} outside [0, {self.k}]")
        # product form keeps theta exactly 1 at the critical contraction
        val = 1.0
        cpc = self.params.children_per_cube
        for lam in self.lambdas[:j]:
            val /= cpc * lam ** (self.params.n + 1)
        return val

    def thetas(self) -> np.ndarray:
        return np.array([self.theta(j) for j in range(self.k + 1)])

    def sigma(self, j: int | None = None) -> float:
        """Sum of theta_i^2 for i = 0..j."""
        j = self.k if j is None else j
        return float(math.fsum(self.theta(i) ** 2 for i in range(j + 1)))

    def set_volume(self, j: int | None = None) -> float:
        """Lebesgue volume of generation j, (d+1)^j d^(nj) ell_j^(n+2s)."""
        j = self.k if j is None else j
        return self.count(j) * self.ell[j] ** (self.n + 2.0 * self.s)

    def truncate(self, j: int) -> "CantorTree":
        """The tree of the first j generations (mu_j as terminal measure)."""
        if not 0 <= j <= self.k:
            raise ValueError(f"generation {j} outside [0, {self.k}]")
        return CantorTree(self.params, self.lambdas[:j], j)

    # -- cube addressing ---------------------------------------------------

    def split_digit(self, g: int) -> tuple[tuple[int, ...], int]:
        """Factor a flat child digit in [0, (d+1) d^n) into (spatial digits,
        temporal digit)."""
        d, n = self.d, self.n
        if not 0 <= g < self.params.children_per_cube:
            raise ValueError(f"digit {g} out of range")
        tdig, rem = divmod(g, d ** n)
        sp = []
        for _ in range(n):
            rem, r = divmod(rem, d)
            sp.append(r)
        return tuple(reversed(sp)), tdig

    def cube_of(self, addr) -> SPCube:
        """Cube addressed by a sequence of flat digits, one per generation."""
        addr = tuple(int(g) for g in addr)
        if len(addr) > self.k:
            raise ValueError(f"address longer than tree depth {self.k}")
        n, s = self.n, self.s
        x = np.zeros(n)
        t = 0.0
        for r, g in enumerate(addr):
            sp, tdig = self.split_digit(g)
            parent_side = self.ell[r]
            parent_ext = parent_side ** (2.0 * s)
            for i in range(n):
                x[i] += parent_side * self._sp_off[r][sp[i]]
            t += parent_ext * self._t_off[r][tdig]
        side = self.ell[len(addr)]
        return SPCube(SPoint(tuple(x), t), side, s)

    def address_of_index(self, idx: int, j: int | None = None) -> tuple[int, ...]:
        """Flat generation-j cube index -> digit address (big-endian)."""
        j = self.k if j is None else j
        cpc = self.params.children_per_cube
        if not 0 <= idx < self.count(j):
            raise ValueError(f"index {idx} out of range for generation {j}")
        digits = []
        for _ in range(j):
            idx, g = divmod(idx, cpc)
            digits.append(g)
        return tuple(reversed(digits))

    def gen_corners(self, j: int | None = None) -> np.ndarray:
        """Corners of all generation-j cubes, shape (count, n+1), ordered by
        flat index (children of cube i are the contiguous block i*cpc..)."""
        j = self.k if j is None else j
        if j in self._cached_corners:
            return self._cached_corners[j]
        n, s = self.n, self.s
        corners = np.zeros((1, n + 1))
        for r in range(j):
            parent_side = self.ell[r]
            parent_ext = parent_side ** (2.0 * s)
            cpc = self.params.children_per_cube
            offs = np.empty((cpc, n + 1))
            for g in range(cpc):
                sp, tdig = self.split_digit(g)
                for i in range(n):
                    offs[g, i] = parent_side * self._sp_off[r][sp[i]]
                offs[g, n] = parent_ext * self._t_off[r][tdig]
            corners = (corners[:, None, :] + offs[None, :, :]).reshape(-1, n + 1)
        self._cached_corners[j] = corners
        return corners

    def gen_cube(self, idx: int, j: int | None = None) -> SPCube:
        j = self.k if j is None else j
        c = self.gen_corners(j)[idx]
        return SPCube(SPoint(tuple(c[: self.n]), c[self.n]), float(self.ell[j]), self.s)

    # -- exact measure -----------------------------------------------------

    def _nu_1d(self, lo: float, hi: float, temporal: bool) -> float:
        """Mass of [lo, hi] under the normalized 1-d generation-k measure of
        one axis (spatial or temporal)."""
        if temporal:
            lengths = self.ell ** (2.0 * self.s)
            offs = self._t_off
        else:
            lengths = self.ell
            offs = self._sp_off

        k = self.k

        def rec(node_lo: float, gen: int) -> float:
            L = lengths[gen]
            if hi <= node_lo or lo >= node_lo + L:
                return 0.0
            if lo <= node_lo and hi >= node_lo + L:
                return 1.0
            if gen == k:
                return (min(hi, node_lo + L) - max(lo, node_lo)) / L
            branch = len(offs[gen])
            acc = 0.0
            for c in range(branch):
                acc += rec(node_lo + L * offs[gen][c], gen + 1)
            return acc / branch

        return rec(0.0, 0)

    def mu_of_box(self, box: Box | SPCube) -> float:
        """Exact mu_k measure of an axis-parallel box (product of per-axis
        1-d Cantor measures)."""
        if isinstance(box, SPCube):
            box = box.to_box()
        if box.n != self.n:
            raise ValueError("box dimension mismatch")
        if box.is_empty():
            return 0.0
        val = self._nu_1d(box.t_lo, box.t_hi, temporal=True)
        for i in range(self.n):
            if val == 0.0:
                return 0.0
            val *= self._nu_1d(box.x_lo[i], box.x_hi[i], temporal=False)
        return val

    def min_gap_factor(self) -> float:
        """c with: distinct generation-j cubes are >= c * ell_{j-1} apart,
        c = min over generations of min(spatial gap, temporal gap^(1/2s))."""
        d, s = self.d, self.s
        best = math.inf
        for lam in self.lambdas:
            sp_gap = (1.0 - d * lam) / (d - 1)
            t_gap = (1.0 - (d + 1) * lam ** (2.0 * s)) / d
            best = min(best, sp_gap, t_gap ** (1.0 / (2.0 * s)))
        return best if self.k > 0 else math.inf


def build_tree(params: SParams, lambdas, k: int) -> CantorTree:
    """Build a k-generation tree; ``lambdas`` may be a scalar, a sequence of
    length k, or the string 'critical'."""
    if isinstance(lambdas, str):
        if lambdas != "critical":
            raise ValueError(f"unknown lambda spec {lambdas!r}")
        lam = critical_ratio(params)
        if lam > params.tau0:
            raise ValueError(
                f"critical ratio {lam} exceeds tau0={params.tau0}; "
                "raise tau0 to use the critical construction"
            )
        seq = [lam] * k
    elif np.isscalar(lambdas):
        seq = [float(lambdas)] * k
    else:
        seq = list(lambdas)
    return CantorTree(params, seq, k)


def lebesgue_measure(region: Box) -> "callable":
    """Measure handle: Lebesgue restricted to ``region`` (not normalized)."""

    def mu(box: Box | SPCube) -> float:
        if isinstance(box, SPCube):
            box = box.to_box()
        inter = region.intersect(box)
        return 0.0 if inter is None else inter.volume()

    return mu


@dataclass
class GrowthReport:
    max_ratio: float
    bound: float
    trials: int
    worst_box: Box | None = field(default=None, repr=False)

    @property
    def ok(self) -> bool:
        return self.max_ratio <= self.bound * (1.0 + 1e-12)


def growth_check(tree: CantorTree, trials: int, kappa: float, rng) -> GrowthReport:
    """Sample random s-parabolic cubes and check the (n+1)-growth
    mu_k(Q) <= (d+1) d^n * kappa * l(Q)^(n+1).

    The constant (d+1) d^n comes from bracketing: a cube with
    ell_{m+1} < l(Q) <= ell_m meets at most (d+1) d^n generation-m cubes.
    """
    thetas = tree.thetas()
    if np.max(thetas) > kappa * (1.0 + 1e-12):
        raise ValueError(f"kappa={kappa} below max theta_j={np.max(thetas)}")
    n, s = tree.n, tree.s
    bound_const = tree.params.children_per_cube * kappa
    lmin = float(tree.ell[tree.k]) / 4.0
    max_ratio = 0.0
    worst = None
    for _ in range(trials):
        side = math.exp(rng.uniform(math.log(lmin), math.log(2.0)))
        center = rng.uniform(-0.1, 1.1, size=n + 1)
        ext = side ** (2.0 * s)
        box = Box(
            tuple(center[:n] - side / 2.0),
            tuple(center[:n] + side / 2.0),
            center[n] - ext / 2.0,
            center[n] + ext / 2.0,
        )
        ratio = tree.mu_of_box(box) / side ** (n + 1)
        if ratio > max_ratio:
            max_ratio, worst = ratio, box
    # deterministic witnesses: the tree cubes themselves (ratio theta_j)
    for j in range(tree.k + 1):
        if thetas[j] > max_ratio:
            max_ratio = float(thetas[j])
            worst = tree.gen_cube(0, j).to_box()
    return GrowthReport(max_ratio=max_ratio, bound=bound_const, trials=trials, worst_box=worst)


def doubling_search(Q: SPCube, mu, n: int, max_iter: int = 120) -> int | None:
    """Least j0 >= 0 with mu(3^(j0+1) Q) <= 3^(n+2) mu(3^(j0) Q) and
    mu(3^(j0) Q) > 0.  Returns None if mu gives no mass to any tested blowup.
    """
    beta = 3.0 ** (n + 2)
    prev = mu(Q)
    cube = Q
    for j in range(max_iter):
        bigger = sp_dilate(Q, 3.0 ** (j + 1))
        cur = mu(bigger)
        if prev > 0.0 and cur <= beta * prev:
            return j
        prev = cur
        cube = bigger
    return None


def _shell_boxes(Q: SPCube, dist: float) -> tuple[Box, Box | None]:
    """Outer inflation and inner shrink of Q at s-parabolic distance ``dist``.

    Exact for n = 1.  For n >= 2 the outer set inflates per axis (an upper
    bound for the Euclidean-spatial shell), so the check is conservative.
    """
    box = Q.to_box()
    dt = dist ** (2.0 * Q.s)
    outer = Box(
        tuple(v - dist for v in box.x_lo),
        tuple(v + dist for v in box.x_hi),
        box.t_lo - dt,
        box.t_hi + dt,
    )
    inner = Box(
        tuple(v + dist for v in box.x_lo),
        tuple(v - dist for v in box.x_hi),
        box.t_lo + dt,
        box.t_hi - dt,
    )
    return outer, (None if inner.is_empty() else inner)


def small_boundary_check(Q: SPCube, mu, A: float, alphas) -> dict:
    """Check mu({x in 2Q : dist(x, bd Q) <= alpha l(Q)}) <= A alpha mu(2Q)
    on the given alpha grid.  Returns pass/fail, the tightest alpha, and a
    vacuous flag when mu(2Q) = 0."""
    if not A > 0:
        raise ValueError("A must be positive")
    two_q = sp_dilate(Q, 2.0).to_box()
    m2 = mu(two_q)
    if m2 == 0.0:
        return {"ok": True, "vacuous": True, "worst_alpha": None, "worst_ratio": 0.0}
    worst_alpha, worst_ratio = None, -math.inf
    ok = True
    for alpha in alphas:
        outer, inner = _shell_boxes(Q, alpha * Q.side)
        clipped = two_q.intersect(outer)
        m_shell = 0.0 if clipped is None else mu(clipped)
        if inner is not None:
            m_shell -= mu(inner)
        ratio = m_shell / (alpha * m2)
        if ratio > worst_ratio:
            worst_ratio, worst_alpha = ratio, alpha
        if m_shell > A * alpha * m2 * (1.0 + 1e-12):
            ok = False
    return {"ok": ok, "vacuous": False, "worst_alpha": worst_alpha, "worst_ratio": worst_ratio}
