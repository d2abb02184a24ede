"""The singular convolution operator against the Cantor measure.

All integrals reduce to Lebesgue integrals of the gradient kernel over
axis-parallel boxes, because the generation-k measure is uniform on each
generation-k cube.  Two reductions drive the quadrature:

* field at a point: integral over the source box in z = x - y coordinates;
* cube-pair integral: the double integral equals the z-integral of the
  kernel against the cross-correlation of the two boxes, a separable
  piecewise-linear "tent" weight, halving the dimension of the quadrature.

Cells near the kernel singularity are refined dyadically toward the
singular point (spatial halving, temporal quartering keeps the s-parabolic
diameter shrinking geometrically); the unresolved core is bounded
analytically through the Calderon-Zygmund envelope |K(z)| <= C |z|^-(n+1)
(integrable on the diagonal precisely because s > 1/2) and reported as a
certified residual.  The temporal axis is always split at the kernel
support edge z_t = 0, where the kernel is continuous but not smooth.

Determinism: every reduction is accumulated in fixed index order with
exact (fsum) summation at the top level, so reruns are bit-stable for any
worker count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from math import fsum

import numpy as np
from numpy.polynomial.legendre import leggauss

from .cantor import CantorTree
from .geometry import Box, SPCube, SPoint
from .kernel import KernelSpec, cz_sup_constant, grad_values

__all__ = [
    "QuadratureSpec",
    "PairKernelMatrix",
    "PsOperator",
    "op_norm_lower",
    "sup_norm_estimate",
    "OperatorNormError",
]


@dataclass(frozen=True)
class QuadratureSpec:
    """Quadrature controls: Gauss-Legendre order for separated cells,
    dyadic refinement depth and nearness threshold for singular cells,
    and the relative tolerance used for flagging."""

    base_order: int = 8
    near_refine: int = 64
    near_threshold: float = 1.0
    target_rel_tol: float = 1e-6

    def __post_init__(self):
        if self.base_order < 2:
            raise ValueError("base_order must be >= 2")
        if self.near_refine < 0:
            raise ValueError("near_refine must be >= 0")


class OperatorNormError(RuntimeError):
    def __init__(self, msg, best=None):
        super().__init__(msg)
        self.best = best


@dataclass
class PairKernelMatrix:
    """Cube-averaged operator entries M[a][b] (shape (N, N, n)) with
    certified residual bars and tolerance flags."""

    values: np.ndarray
    residuals: np.ndarray
    flags: np.ndarray
    conj: bool = False

    @property
    def flagged_count(self) -> int:
        return int(np.sum(self.flags))


def _axis_tent(alo, ahi, blo, bhi):
    return ("tent", float(alo), float(ahi), float(blo), float(bhi))


def _tent_eval(tent, z):
    if tent is None:
        return np.ones_like(z)
    _, alo, ahi, blo, bhi = tent
    return np.maximum(0.0, np.minimum(ahi, bhi + z) - np.maximum(alo, blo + z))


def _tent_max(tent, lo, hi):
    if tent is None:
        return 1.0
    _, alo, ahi, blo, bhi = tent
    cand = [lo, hi, min(max(alo - blo, lo), hi), min(max(ahi - bhi, lo), hi)]
    return max(float(_tent_eval(tent, np.array([c]))[0]) for c in cand)


class PsOperator:
    """Field evaluation, pair integrals, L2 norms and matrix assembly for
    the convolution operator of one Cantor generation."""

    def __init__(self, tree: CantorTree, quad: QuadratureSpec | None = None,
                 mass_scale: float = 1.0):
        if not tree.s > 0.5:
            raise ValueError("operator quadrature requires s > 1/2")
        self.tree = tree
        self.quad = quad or QuadratureSpec()
        self.n = tree.n
        self.s = tree.s
        self.k = tree.k
        self.N = tree.count()
        self.side = float(tree.ell[tree.k])
        self.ext = self.side ** (2.0 * tree.s)
        self.corners = tree.gen_corners()  # (N, n+1)
        self.mass = tree.cube_mass() * mass_scale
        self.volume = self.side ** self.n * self.ext
        self.dens = self.mass / self.volume
        self.kspec = KernelSpec(tree.n, tree.s)
        self._cz = None
        self._gl_cache: dict[int, tuple] = {}
        self._mat_cache: dict[bool, PairKernelMatrix] = {}
        self._self_cache: dict = {}

    # -- low-level pieces ---------------------------------------------------

    def _gl(self, order: int):
        if order not in self._gl_cache:
            xi, wg = leggauss(order)
            # enforce exact +- symmetry so mirrored cells cancel bitwise
            xi = 0.5 * (xi - xi[::-1])
            wg = 0.5 * (wg + wg[::-1])
            self._gl_cache[order] = (xi, wg)
        return self._gl_cache[order]

    def _K(self, pts: np.ndarray, conj: bool) -> np.ndarray:
        return grad_values(self.kspec, pts[:, : self.n], pts[:, self.n], conj=conj)

    def _cz_const(self) -> float:
        if self._cz is None:
            self._cz = cz_sup_constant(self.kspec)
        return self._cz

    def _residual_bound(self, lo, hi, tents) -> float:
        """Certified bound for |int_cell K W| through the CZ envelope:
        the cell sits in the parabolic ball of radius rho around 0 and
        int_{|z| <= rho} |z|^-(n+1) dz <= 2^(n+2) omega_n rho^(2s-1) /
        (1 - 2^(1-2s))."""
        n, s = self.n, self.s
        sp = math.sqrt(sum(max(abs(lo[i]), abs(hi[i])) ** 2 for i in range(n)))
        tm = max(abs(lo[n]), abs(hi[n])) ** (1.0 / (2.0 * s))
        rho = max(sp, tm)
        if rho == 0.0:
            return 0.0
        wmax = 1.0
        for i in range(n + 1):
            wmax *= _tent_max(None if tents is None else tents[i], lo[i], hi[i])
        omega = math.pi ** (n / 2.0) / math.gamma(n / 2.0 + 1.0)
        fac = 2.0 ** (n + 2) * omega / (1.0 - 2.0 ** (1.0 - 2.0 * s))
        return wmax * self._cz_const() * fac * rho ** (2.0 * s - 1.0)

    def _gl_cells(self, cells, tents, conj, order=None) -> np.ndarray:
        """Tensor Gauss-Legendre over a batch of cells in one kernel call;
        returns per-cell vectors (C, n)."""
        order = order or self.quad.base_order
        xi, wg = self._gl(order)
        n = self.n
        C = len(cells)
        lo = np.array([c[0] for c in cells])  # (C, n+1)
        hi = np.array([c[1] for c in cells])
        mid = 0.5 * (lo + hi)
        half = 0.5 * (hi - lo)
        axes_nodes, axes_w = [], []
        for i in range(n + 1):
            nodes = mid[:, i][:, None] + half[:, i][:, None] * xi[None, :]
            w = half[:, i][:, None] * wg[None, :]
            if tents is not None and tents[i] is not None:
                w = w * _tent_eval(tents[i], nodes)
            axes_nodes.append(nodes)
            axes_w.append(w)
        shape = [C] + [order] * (n + 1)
        zfull = np.empty(shape + [n + 1])
        wfull = np.ones(shape)
        for i in range(n + 1):
            view = [C] + [order if j == i else 1 for j in range(n + 1)]
            zfull[..., i] = np.broadcast_to(axes_nodes[i].reshape(view), shape)
            wfull = wfull * axes_w[i].reshape(view)
        kv = self._K(zfull.reshape(-1, n + 1), conj).reshape(shape + [n])
        return (kv * wfull[..., None]).reshape(C, -1, n).sum(axis=1)

    def _split_axis(self, lo, hi, pts):
        cuts = sorted({p for p in pts if lo < p < hi})
        edges = [lo] + cuts + [hi]
        return list(zip(edges[:-1], edges[1:]))

    def _spatial_gap(self, lo, hi) -> float:
        g2 = 0.0
        for i in range(self.n):
            g = max(0.0, lo[i], -hi[i])
            g2 += g * g
        return math.sqrt(g2)

    def _time_margin_ok(self, lo, hi, conj) -> bool:
        """Gauss-Legendre converges geometrically only with a margin from
        the support edge z_t = 0; cells without one are fine when the
        kernel there is tail-polynomial in t (s < 1) or negligible (s = 1)."""
        n = self.n
        tl = lo[n] if not conj else -hi[n]
        th = hi[n] if not conj else -lo[n]
        if tl >= 0.35 * (th - tl):
            return True
        rmin = self._spatial_gap(lo, hi)
        if rmin <= 0.0:
            return False
        if self.s == 1.0:
            return rmin ** 2 / (4.0 * th) >= 45.0
        prof = self.kspec.profile(self.n + 2)
        return rmin * th ** (-1.0 / (2.0 * self.s)) >= prof.u_tail

    def _kink_residual(self, lo, hi, tents, conj) -> float:
        """|int over a sliver hugging the support edge| <= W Lx C rmin^-(n+1) t_hi."""
        n = self.n
        th = hi[n] if not conj else -lo[n]
        rmin = self._spatial_gap(lo, hi)
        if rmin == 0.0:
            return self._residual_bound(lo, hi, tents)
        wmax = 1.0
        vol_x = 1.0
        for i in range(n):
            wmax *= _tent_max(None if tents is None else tents[i], lo[i], hi[i])
            vol_x *= hi[i] - lo[i]
        wmax *= _tent_max(None if tents is None else tents[n], lo[n], hi[n])
        return wmax * vol_x * self._cz_const() * rmin ** -(n + 1) * max(th, 0.0)

    def _gap_size(self, lo, hi):
        n, s = self.n, self.s
        g2 = 0.0
        for i in range(n):
            g = max(0.0, lo[i], -hi[i])
            g2 += g * g
        gt = max(0.0, lo[n], -hi[n]) ** (1.0 / (2.0 * s))
        gap = max(math.sqrt(g2), gt)
        size = max(
            max(hi[i] - lo[i] for i in range(n)),
            (hi[n] - lo[n]) ** (1.0 / (2.0 * s)),
        )
        return gap, size

    def _rec(self, lo, hi, tents, eps_box, conj, depth, out, res):
        n = self.n
        if any(hi[i] <= lo[i] for i in range(n + 1)):
            return
        # kernel support is one time half-space: drop sign-wrong cells
        if (not conj and hi[n] <= 0.0) or (conj and lo[n] >= 0.0):
            return
        if eps_box is not None:
            elo, ehi = eps_box
            inside = all(elo[i] <= lo[i] and hi[i] <= ehi[i] for i in range(n + 1))
            if inside:
                return
            overlap = all(lo[i] < ehi[i] and elo[i] < hi[i] for i in range(n + 1))
            if overlap:
                pieces = [
                    self._split_axis(lo[i], hi[i], (elo[i], ehi[i]))
                    for i in range(n + 1)
                ]
                for idx in np.ndindex(*[len(p) for p in pieces]):
                    clo = [pieces[i][idx[i]][0] for i in range(n + 1)]
                    chi = [pieces[i][idx[i]][1] for i in range(n + 1)]
                    self._rec(clo, chi, tents, eps_box, conj, depth, out, res)
                return
        gap, size = self._gap_size(lo, hi)
        if gap >= self.quad.near_threshold * size:
            if self._time_margin_ok(lo, hi, conj):
                out.append((tuple(lo), tuple(hi)))
                return
            # the kernel is not analytic across its support edge z_t = 0:
            # shave the temporal axis geometrically toward the edge
            if depth == 0:
                res.append(self._kink_residual(lo, hi, tents, conj))
                return
            n = self.n
            tl, th = lo[n], hi[n]
            cut = tl + 0.25 * (th - tl) if not conj else th - 0.25 * (th - tl)
            for piece in ((tl, cut), (cut, th)):
                clo = list(lo)
                chi = list(hi)
                clo[n], chi[n] = piece
                self._rec(clo, chi, tents, eps_box, conj, depth - 1, out, res)
            return
        if depth == 0:
            res.append(self._residual_bound(lo, hi, tents))
            return
        # split only the parabolic-large axes, so cells stay balanced and
        # exactly one child per level hugs the singular point
        plen = [hi[i] - lo[i] for i in range(n)]
        plen.append((hi[n] - lo[n]) ** (1.0 / (2.0 * self.s)))
        lmax = max(plen)
        pieces = []
        for i in range(n):
            if plen[i] > 0.5 * lmax:
                cut = 0.0 if lo[i] < 0.0 < hi[i] else 0.5 * (lo[i] + hi[i])
                pieces.append([(lo[i], cut), (cut, hi[i])])
            else:
                pieces.append([(lo[i], hi[i])])
        tl, th = lo[n], hi[n]
        if plen[n] > 0.5 * lmax:
            # quarter so the parabolic length at least halves (s <= 1)
            q = 0.25 * (th - tl)
            tcuts = [tl, tl + q, tl + 2 * q, tl + 3 * q, th]
            pieces.append(list(zip(tcuts[:-1], tcuts[1:])))
        else:
            pieces.append([(tl, th)])
        for idx in np.ndindex(*[len(p) for p in pieces]):
            clo = [pieces[i][idx[i]][0] for i in range(n + 1)]
            chi = [pieces[i][idx[i]][1] for i in range(n + 1)]
            self._rec(clo, chi, tents, eps_box, conj, depth - 1, out, res)

    def _zbox_integral(self, lo, hi, tents, eps, conj):
        """Integral of K(z) W(z) over the z-box, with optional exclusion of
        the s-parabolic eps-ball.  Returns (vector, certified residual)."""
        if eps > 0.0 and self.n > 1:
            raise NotImplementedError(
                "geometric eps-truncation is exact only for n = 1 "
                "(the spatial section of the parabolic ball is an interval)"
            )
        eps_box = None
        if eps > 0.0:
            e2s = eps ** (2.0 * self.s)
            eps_box = ([-eps] * self.n + [-e2s], [eps] * self.n + [e2s])
        out: list[tuple] = []
        res: list[float] = []
        # split the temporal axis at the kernel support edge first, and the
        # weight axes at their kinks so each cell has a smooth integrand
        axes_pieces = []
        for i in range(self.n + 1):
            pts = []
            if i == self.n:
                pts.append(0.0)
            if tents is not None and tents[i] is not None:
                _, alo, ahi, blo, bhi = tents[i]
                pts.extend((alo - blo, ahi - bhi))
            axes_pieces.append(self._split_axis(lo[i], hi[i], tuple(pts)))
        for idx in np.ndindex(*[len(p) for p in axes_pieces]):
            clo = [axes_pieces[i][idx[i]][0] for i in range(self.n + 1)]
            chi = [axes_pieces[i][idx[i]][1] for i in range(self.n + 1)]
            self._rec(clo, chi, tents, eps_box, conj, self.quad.near_refine, out, res)
        if out:
            vals = self._gl_cells(out, tents, conj)
            vec = np.array([fsum(vals[:, c].tolist()) for c in range(self.n)])
        else:
            vec = np.zeros(self.n)
        return vec, fsum(res)

    def _point_box_integral(self, p: np.ndarray, box: Box, eps: float, conj: bool):
        """int_box K(p - y) dy (Lebesgue), singular-aware."""
        lo = [p[i] - box.x_hi[i] for i in range(self.n)] + [p[self.n] - box.t_hi]
        hi = [p[i] - box.x_lo[i] for i in range(self.n)] + [p[self.n] - box.t_lo]
        return self._zbox_integral(lo, hi, None, eps, conj)

    def pair_box_integral(self, box_a: Box, box_b: Box, conj: bool = False):
        """Lebesgue double integral of K(x - y) over box_a x box_b, computed
        as the z-integral of K against the box cross-correlation."""
        lo, hi, tents = [], [], []
        ax = list(zip(box_a.x_lo, box_a.x_hi)) + [(box_a.t_lo, box_a.t_hi)]
        bx = list(zip(box_b.x_lo, box_b.x_hi)) + [(box_b.t_lo, box_b.t_hi)]
        for (alo, ahi), (blo, bhi) in zip(ax, bx):
            lo.append(alo - bhi)
            hi.append(ahi - blo)
            tents.append(_axis_tent(alo, ahi, blo, bhi))
        return self._zbox_integral(lo, hi, tents, 0.0, conj)

    # -- vectorized far-field evaluation ------------------------------------

    def _far_points_one_box(self, pts: np.ndarray, box: Box, conj: bool,
                            order: int | None = None) -> np.ndarray:
        """int_box K(p - y) dy for many points p at once; valid when every
        point is separated from the box.  The temporal axis is split at the
        per-point kernel support edge y_t = p_t."""
        order = order or self.quad.base_order
        xi, wg = self._gl(order)
        alpha = 0.5 * (xi + 1.0)
        m = pts.shape[0]
        n = self.n
        sp_nodes, sp_w = [], []
        for i in range(n):
            L = box.x_hi[i] - box.x_lo[i]
            y = box.x_lo[i] + L * alpha
            sp_nodes.append(pts[:, i][:, None] - y[None, :])  # (M, q)
            sp_w.append(0.5 * L * wg)
        T = box.t_hi - box.t_lo
        rel = pts[:, n] - box.t_lo
        if conj:
            # conjugate support is z_t < 0: mirror the splitting
            rel = T - rel
        l1 = np.clip(rel, 0.0, T)
        # the kernel is not analytic across its support edge, which sits at
        # the bottom of the support-side piece when the point's time lies
        # inside the box span: subdivide that piece geometrically toward it
        base = rel - l1
        fracs = [0.0, 0.00390625, 0.015625, 0.0625, 0.25, 1.0]
        zt, wt = [], []
        for g_lo, g_hi in zip(fracs[:-1], fracs[1:]):
            length = l1 * (g_hi - g_lo)
            znodes = (base + l1 * g_lo)[:, None] + length[:, None] * alpha[None, :]
            zt.append(znodes)
            wt.append(0.5 * length[:, None] * wg[None, :])
        length = T - l1
        znodes = base[:, None] - length[:, None] * alpha[None, :]
        zt.append(znodes)
        wt.append(0.5 * length[:, None] * wg[None, :])
        zt = np.concatenate(zt, axis=1)
        wt = np.concatenate(wt, axis=1)
        if conj:
            zt = -zt
        # tensor over spatial axes then time
        nt = zt.shape[1]
        shape = [m] + [order] * n + [nt]
        zfull = np.empty(shape + [n + 1])
        for i in range(n):
            view = sp_nodes[i].reshape([m] + [order if j == i else 1 for j in range(n)] + [1])
            zfull[..., i] = np.broadcast_to(view, shape)
        zfull[..., n] = np.broadcast_to(zt.reshape([m] + [1] * n + [nt]), shape)
        wfull = np.ones(shape)
        for i in range(n):
            wfull = wfull * sp_w[i].reshape([1] + [order if j == i else 1 for j in range(n)] + [1])
        wfull = wfull * wt.reshape([m] + [1] * n + [nt])
        kv = self._K(zfull.reshape(-1, n + 1), conj).reshape(shape + [n])
        return (kv * wfull[..., None]).reshape(m, -1, n).sum(axis=1)

    # -- the field -----------------------------------------------------------

    def field(self, points, weights=None, eps: float = 0.0, conj: bool = False,
              return_residual: bool = False):
        """Values of the operator applied to a generation-k piecewise
        constant function, at arbitrary points.  ``eps`` excludes the
        s-parabolic ball around each point (geometric clipping, n = 1)."""
        pts = self._as_points(points)
        w = self._as_weights(weights)
        m = pts.shape[0]
        out = np.zeros((m, self.n))
        resid = np.zeros(m)
        thr = self.quad.near_threshold * self.side
        for b in range(self.N):
            if w[b] == 0.0:
                continue
            box = self._cube_box(b)
            gaps = self._point_box_gaps(pts, box)
            near = gaps < max(thr, eps * (1.0 + 1e-12)) if eps > 0.0 else gaps < thr
            far = ~near
            if np.any(far):
                out[far] += (w[b] * self.dens) * self._far_points_one_box(
                    pts[far], box, conj
                )
            for i in np.flatnonzero(near):
                vec, r = self._point_box_integral(pts[i], box, eps, conj)
                out[i] += w[b] * self.dens * vec
                resid[i] += abs(w[b]) * self.dens * r
        if return_residual:
            return out, resid
        return out

    def _as_points(self, points) -> np.ndarray:
        if isinstance(points, SPoint):
            points = [points]
        if isinstance(points, (list, tuple)) and points and isinstance(points[0], SPoint):
            return np.array([list(p.x) + [p.t] for p in points], dtype=float)
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[None, :]
        if pts.shape[1] != self.n + 1:
            raise ValueError(f"points must have {self.n + 1} coordinates")
        return pts

    def _as_weights(self, weights) -> np.ndarray:
        if weights is None:
            return np.ones(self.N)
        w = np.asarray(weights, dtype=float)
        if w.shape != (self.N,):
            raise ValueError(f"weights must have shape ({self.N},)")
        return w

    def _cube_box(self, b: int) -> Box:
        c = self.corners[b]
        return Box(
            tuple(c[: self.n]),
            tuple(c[: self.n] + self.side),
            c[self.n],
            c[self.n] + self.ext,
        )

    def _point_box_gaps(self, pts: np.ndarray, box: Box) -> np.ndarray:
        n, s = self.n, self.s
        g2 = np.zeros(pts.shape[0])
        for i in range(n):
            g = np.maximum(0.0, np.maximum(box.x_lo[i] - pts[:, i], pts[:, i] - box.x_hi[i]))
            g2 += g * g
        gt = np.maximum(0.0, np.maximum(box.t_lo - pts[:, n], pts[:, n] - box.t_hi))
        return np.maximum(np.sqrt(g2), gt ** (1.0 / (2.0 * s)))

    # -- cube-pair matrix ----------------------------------------------------

    def _pair_by_delta(self, delta: np.ndarray, conj: bool):
        """Lebesgue pair z-integral for congruent generation-k cubes at
        corner offset delta, cached by the offset (translation invariance)."""
        key = (conj,) + tuple(round(float(d) / self.side, 9) for d in delta)
        cached = self._self_cache.get(("pair", key))
        if cached is not None:
            return cached
        lo, hi, tents = [], [], []
        for i in range(self.n + 1):
            L = self.side if i < self.n else self.ext
            d = float(delta[i])
            lo.append(d - L)
            hi.append(d + L)
            tents.append(_axis_tent(0.0, L, -d, -d + L))
        val = self._zbox_integral(lo, hi, tents, 0.0, conj)
        self._self_cache[("pair", key)] = val
        return val

    def pair_integral(self, a: int, b: int, conj: bool = False):
        """Matrix entry M[a][b] = (1/mu(Q_a)) int_a int_b K d(mu) d(mu)
        plus its certified residual."""
        vec, r = self._pair_by_delta(self.corners[a] - self.corners[b], conj)
        fac = self.mass / self.volume ** 2
        return fac * vec, fac * r

    def averaged_matrix(self, conj: bool = False) -> PairKernelMatrix:
        if conj in self._mat_cache:
            return self._mat_cache[conj]
        N, n = self.N, self.n
        values = np.zeros((N, N, n))
        residuals = np.zeros((N, N))
        deltas = self.corners[:, None, :] - self.corners[None, :, :]
        dt = deltas[..., n]
        sp_gap2 = np.zeros((N, N))
        for i in range(n):
            g = np.maximum(0.0, np.abs(deltas[..., i]) - self.side)
            sp_gap2 += g * g
        t_gap = np.maximum(0.0, np.abs(dt) - self.ext) ** (1.0 / (2.0 * self.s))
        gap = np.maximum(np.sqrt(sp_gap2), t_gap)
        near = gap < self.quad.near_threshold * self.side
        # pairs whose z-range straddles or hugs the support edge z_t = 0
        # off-center go to the adaptive path; exactly-equal-time pairs share
        # a grid refined toward the edge
        slow = near | ((np.abs(dt) < 1.6 * self.ext) & (dt != 0.0))
        equal_t = (dt == 0.0) & ~near
        zero_blk = (dt - self.ext >= 0.0) if conj else (dt + self.ext <= 0.0)
        fac = self.mass / self.volume ** 2

        for kind, mask in (("offset", ~(slow | equal_t) & ~zero_blk),
                           ("equal_time", equal_t)):
            offs, wts = self._pair_tensor_grid(kind, conj)
            fi = np.flatnonzero(mask.ravel())
            chunk = max(1, 2_000_000 // max(1, offs.shape[0]))
            for start in range(0, fi.size, chunk):
                sel = fi[start : start + chunk]
                dsel = deltas.reshape(-1, n + 1)[sel]
                z = dsel[:, None, :] + offs[None, :, :]
                kv = self._K(z.reshape(-1, n + 1), conj).reshape(len(sel), -1, n)
                vals = np.einsum("pkc,k->pc", kv, wts)
                values.reshape(-1, n)[sel] = fac * vals
        for a, b in np.argwhere(slow):
            vec, r = self.pair_integral(int(a), int(b), conj)
            values[a, b] = vec
            residuals[a, b] = r
        # flag entries whose certified bar exceeds the tolerance relative to
        # the matrix operating scale
        scale = max(1e-300, float(np.max(np.abs(values))))
        flags = residuals > self.quad.target_rel_tol * (np.abs(values).max(axis=2) + scale)
        mat = PairKernelMatrix(values=values, residuals=residuals, flags=flags, conj=conj)
        self._mat_cache[conj] = mat
        return mat

    def _pair_tensor_grid(self, kind: str = "offset", conj: bool = False):
        """Shared z-grid for congruent far cube pairs: per axis the tent
        (L - |u|) on [-L, L], split at the peak, with exact mirror nodes.

        ``equal_time`` pairs (corner time offset exactly zero) carry the
        kernel support edge at the peak: the support side is subdivided
        geometrically toward it and the dead side dropped."""
        key = ("grid", kind, conj)
        if key in self._self_cache:
            return self._self_cache[key]
        order = self.quad.base_order
        xi, wg = self._gl(order)
        alpha = 0.5 * (xi + 1.0)
        axes_nodes, axes_w = [], []
        for i in range(self.n + 1):
            L = self.side if i < self.n else self.ext
            if i == self.n and kind == "equal_time":
                fracs = [0.0, 0.00390625, 0.015625, 0.0625, 0.25, 1.0]
                nodes, w = [], []
                for g_lo, g_hi in zip(fracs[:-1], fracs[1:]):
                    length = L * (g_hi - g_lo)
                    nn = L * g_lo + length * alpha
                    ww = 0.5 * length * wg * (L - nn)
                    nodes.append(nn if not conj else -nn)
                    w.append(ww)
                nodes = np.concatenate(nodes)
                w = np.concatenate(w)
            else:
                up = 0.5 * L * (xi + 1.0)
                wp = 0.5 * L * wg * (L - up)
                nodes = np.concatenate([-up[::-1], up])
                w = np.concatenate([wp[::-1], wp])
            axes_nodes.append(nodes)
            axes_w.append(w)
        grids = np.meshgrid(*axes_nodes, indexing="ij")
        offs = np.stack([g.ravel() for g in grids], axis=1)
        wfull = axes_w[0]
        for w in axes_w[1:]:
            wfull = np.multiply.outer(wfull, w)
        out = (offs, wfull.ravel())
        self._self_cache[key] = out
        return out

    def cube_averages(self, weights=None, conj: bool = False) -> np.ndarray:
        """Cube averages of the field, from the pair matrix row sums; this
        is the input vector for the martingale decomposition."""
        w = self._as_weights(weights)
        mat = self.averaged_matrix(conj)
        return np.einsum("abn,b->an", mat.values, w)

    # -- node fields, L2 norms -----------------------------------------------

    def node_grid(self, nodes_per_axis: int):
        """Tensor Gauss-Legendre offsets inside one generation-k cube and
        their Lebesgue weights (summing to the cube volume)."""
        xi, wg = self._gl(nodes_per_axis)
        axes_nodes, axes_w = [], []
        for i in range(self.n + 1):
            L = self.side if i < self.n else self.ext
            axes_nodes.append(0.5 * L * (xi + 1.0))
            axes_w.append(0.5 * L * wg)
        grids = np.meshgrid(*axes_nodes, indexing="ij")
        offs = np.stack([g.ravel() for g in grids], axis=1)
        wfull = axes_w[0]
        for w in axes_w[1:]:
            wfull = np.multiply.outer(wfull, w)
        return offs, wfull.ravel()

    def node_field(self, weights=None, nodes_per_axis: int = 3, conj: bool = False):
        """Field values at the standard per-cube nodes.

        Self-cube contributions depend only on the node offset (all
        generation-k cubes are congruent), so each is integrated once and
        reused across cubes.  Returns a dict with values (N, P, n), the
        node offsets, Lebesgue node weights and accumulated residual."""
        w = self._as_weights(weights)
        offs, glw = self.node_grid(nodes_per_axis)
        P = offs.shape[0]
        key = (nodes_per_axis, conj)
        if key not in self._self_cache:
            unit = Box((0.0,) * self.n, (self.side,) * self.n, 0.0, self.ext)
            vecs, rs = [], []
            for p in offs:
                vec, r = self._point_box_integral(p, unit, 0.0, conj)
                vecs.append(vec)
                rs.append(r)
            self._self_cache[key] = (np.array(vecs), np.array(rs))
        self_vec, self_res = self._self_cache[key]

        pts = (self.corners[:, None, :] + offs[None, :, :]).reshape(-1, self.n + 1)
        owner = np.repeat(np.arange(self.N), P)
        off_idx = np.tile(np.arange(P), self.N)
        vals = np.zeros((self.N * P, self.n))
        resid = np.zeros(self.N * P)
        thr = self.quad.near_threshold * self.side
        unit = Box((0.0,) * self.n, (self.side,) * self.n, 0.0, self.ext)
        for b in range(self.N):
            if w[b] == 0.0:
                continue
            box = self._cube_box(b)
            gaps = self._point_box_gaps(pts, box)
            is_self = owner == b
            near = (gaps < thr) & ~is_self
            far = ~near & ~is_self
            # acausal (point, box) pairs contribute exactly zero
            far &= (pts[:, self.n] > box.t_lo) if not conj else (pts[:, self.n] < box.t_hi)
            if np.any(far):
                vals[far] += (w[b] * self.dens) * self._far_points_one_box(
                    pts[far], box, conj
                )
            for i in np.flatnonzero(near):
                # the integral depends only on (cube offset, node offset):
                # reuse across congruent neighbor pairs
                a = int(owner[i])
                dkey = tuple(
                    round(float(self.corners[a][j] - self.corners[b][j]) / self.side, 9)
                    for j in range(self.n + 1)
                )
                ckey = ("nbr", conj, dkey, int(off_idx[i]))
                hit = self._self_cache.get(ckey)
                if hit is None:
                    rel = self.corners[a] - self.corners[b] + offs[int(off_idx[i])]
                    hit = self._point_box_integral(rel, unit, eps=0.0, conj=conj)
                    self._self_cache[ckey] = hit
                vec, r = hit
                vals[i] += w[b] * self.dens * vec
                resid[i] += abs(w[b]) * self.dens * r
            vals[is_self] += (w[b] * self.dens) * self_vec
            resid[is_self] += abs(w[b]) * self.dens * self_res
        return {
            "values": vals.reshape(self.N, P, self.n),
            "points": pts.reshape(self.N, P, self.n + 1),
            "node_weights": glw,
            "residual": resid.reshape(self.N, P),
            "weights": w,
        }

    def l2_norm_sq(self, weights=None, conj: bool = False,
                   nodes_per_axis: int | None = None, node_data=None) -> float:
        """int |field|^2 d(mu_k) by per-cube node quadrature."""
        if node_data is None:
            npa = nodes_per_axis or (12 if self.k == 0 else 3)
            node_data = self.node_field(weights, npa, conj)
        vals = node_data["values"]
        glw = node_data["node_weights"]
        scale = self.mass / self.volume
        terms = (scale * glw[None, :] * np.sum(vals ** 2, axis=2)).ravel()
        return fsum(terms.tolist())

    # -- cancellation and truncation checks -----------------------------------

    def box_cancellation(self, region: Box | SPCube, outer_order: int = 3,
                         conj: bool = False) -> dict:
        """Two-sided quadrature of int_R (field of chi_R) d(mu_k) together
        with the absolute-value integral; their ratio is the relative
        cancellation defect."""
        if isinstance(region, SPCube):
            region = region.to_box()
        clipped = []
        for a in range(self.N):
            inter = self._cube_box(a).intersect(region)
            if inter is not None:
                clipped.append((a, inter))
        if not clipped:
            return {"vector": np.zeros(self.n), "abs_integral": 0.0,
                    "rel_cancellation": 0.0, "residual": 0.0}
        xi, wg = self._gl(outer_order)
        pts_all, w_all = [], []
        for _, bx in clipped:
            axes_nodes, axes_w = [], []
            for i in range(self.n + 1):
                l = bx.x_lo[i] if i < self.n else bx.t_lo
                h = bx.x_hi[i] if i < self.n else bx.t_hi
                mid, half = 0.5 * (l + h), 0.5 * (h - l)
                axes_nodes.append(mid + half * xi)
                axes_w.append(half * wg)
            grids = np.meshgrid(*axes_nodes, indexing="ij")
            pts_all.append(np.stack([g.ravel() for g in grids], axis=1))
            wfull = axes_w[0]
            for w in axes_w[1:]:
                wfull = np.multiply.outer(wfull, w)
            w_all.append(wfull.ravel())
        pts = np.concatenate(pts_all, axis=0)
        wout = np.concatenate(w_all, axis=0)

        F = np.zeros((pts.shape[0], self.n))
        resid = 0.0
        for _, bx in clipped:
            gaps = self._point_box_gaps(pts, bx)
            size = max(max(h - l for l, h in zip(bx.x_lo, bx.x_hi)),
                       (bx.t_hi - bx.t_lo) ** (1.0 / (2.0 * self.s)))
            near = gaps < self.quad.near_threshold * size
            far = ~near
            if np.any(far):
                F[far] += self.dens * self._far_points_one_box(pts[far], bx, conj)
            for i in np.flatnonzero(near):
                vec, r = self._point_box_integral(pts[i], bx, 0.0, conj)
                F[i] += self.dens * vec
                resid += self.dens * r * wout[i] * self.dens
        vec = np.array(
            [fsum((self.dens * wout * F[:, c]).tolist()) for c in range(self.n)]
        )
        absint = fsum((self.dens * wout * np.linalg.norm(F, axis=1)).tolist())
        rel = float(np.linalg.norm(vec)) / absint if absint > 0 else 0.0
        return {"vector": vec, "abs_integral": absint,
                "rel_cancellation": rel, "residual": resid}

    def annulus_integral(self, p, e1: float, e2: float, weights=None,
                         conj: bool = False) -> np.ndarray:
        """Direct quadrature of the field contribution from the parabolic
        annulus e1 < |p - y| <= e2 (n = 1)."""
        if self.n != 1:
            raise NotImplementedError("annulus decomposition implemented for n = 1")
        if not 0.0 <= e1 < e2:
            raise ValueError("need 0 <= e1 < e2")
        pts = self._as_points(p)[0]
        w = self._as_weights(weights)
        s = self.s
        t2, t1 = e2 ** (2.0 * s), e1 ** (2.0 * s)
        rects = [
            ((-e2, t1), (e2, t2)),
            ((-e2, -t2), (e2, -t1)),
            ((e1, -t1), (e2, t1)),
            ((-e2, -t1), (-e1, t1)),
        ]
        total = np.zeros(self.n)
        for b in range(self.N):
            if w[b] == 0.0:
                continue
            bx = self._cube_box(b)
            zlo = (pts[0] - bx.x_hi[0], pts[1] - bx.t_hi)
            zhi = (pts[0] - bx.x_lo[0], pts[1] - bx.t_lo)
            for (rl, rh) in rects:
                clo = [max(zlo[0], rl[0]), max(zlo[1], rl[1])]
                chi = [min(zhi[0], rh[0]), min(zhi[1], rh[1])]
                if clo[0] >= chi[0] or clo[1] >= chi[1]:
                    continue
                vec, _ = self._zbox_integral(clo, chi, None, 0.0, conj)
                total += w[b] * self.dens * vec
        return total


def op_norm_lower(values: np.ndarray, masses: np.ndarray, tol: float = 1e-8,
                  max_iter: int = 20000) -> float:
    """Largest singular value of the mass-weighted block matrix by power
    iteration: a certified lower bound for the operator norm restricted to
    generation-k piecewise-constant functions.

    The weighting is D^(1/2) M D^(-1/2) (both sides measured in L2(mu)),
    which makes the result exactly linear under scaling mu -> alpha mu.
    """
    values = np.asarray(values, dtype=float)
    if values.ndim == 2:
        values = values[:, :, None]
    N = values.shape[0]
    masses = np.asarray(masses, dtype=float)
    sq = np.sqrt(masses)

    def amat(u):
        return np.einsum("abn,b->an", values, u / sq) * sq[:, None]

    def atmat(g):
        return np.einsum("abn,a,an->b", values, sq, g) / sq

    v = np.ones(N) + 1e-3 * np.linspace(0.0, 1.0, N)
    v /= np.linalg.norm(v)
    sigma = 0.0
    for _ in range(max_iter):
        g = amat(v)
        ng = np.linalg.norm(g)
        if ng == 0.0:
            return 0.0
        w = atmat(g)
        nw = np.linalg.norm(w)
        new_sigma = math.sqrt(nw) if nw > 0 else 0.0
        if abs(new_sigma - sigma) <= tol * max(new_sigma, 1e-300):
            return new_sigma
        sigma = new_sigma
        v = w / nw
    raise OperatorNormError(
        f"power iteration did not converge to rel tol {tol}", best=sigma
    )


def sup_norm_estimate(op: PsOperator, budget: int, rng, conj: bool = False) -> dict:
    """Sampled lower bound for sup |field(1)| over a structured point set:
    cube centers of every generation, corner sub-cube centers, points at
    dyadic parabolic time offsets above/below the set, and uniform random
    points in 2Q0."""
    tree = op.tree
    n, s = op.n, op.s
    pts = []
    for j in range(tree.k + 1):
        corners = tree.gen_corners(j)
        side = float(tree.ell[j])
        ext = side ** (2.0 * s)
        centers = corners + np.array([side / 2.0] * n + [ext / 2.0])
        pts.append(centers)
    qside = op.side / 4.0
    qext = qside ** (2.0 * s)
    base = tree.gen_corners()
    lole = base + np.array([qside / 2.0] * n + [qext / 2.0])
    upri = base + np.array(
        [op.side - qside / 2.0] * n + [op.ext - qext / 2.0]
    )
    pts.extend([lole, upri])
    # the potential of the constant function peaks on the spatial faces of
    # the cubes near the top of their time span: sample those directly,
    # plus dyadic parabolic offsets just past the extent
    for edge in (0.0, op.side):
        for ft in (0.25, 0.5, 0.75, 1.0):
            pts.append(base + np.array([edge] * n + [ft * op.ext]))
        for i in (1, 2, 3):
            delta_t = (2.0 ** (-i) * op.side) ** (2.0 * s)
            pts.append(base + np.array([edge] * n + [op.ext + delta_t]))
    mid = np.array([0.5] * n)
    dy = []
    for i in range(9):
        delta = 2.0 ** (-i)
        dy.append(np.concatenate([mid, [1.0 + delta ** (2.0 * s)]]))
        dy.append(np.concatenate([mid, [-(delta ** (2.0 * s))]]))
    pts.append(np.array(dy))
    if budget > 0:
        ext0 = 2.0 ** (2.0 * s)
        u = rng.random((budget, n + 1))
        rand = np.empty((budget, n + 1))
        rand[:, :n] = -0.5 + 2.0 * u[:, :n]
        rand[:, n] = 0.5 - ext0 / 2.0 + ext0 * u[:, n]
        pts.append(rand)
    allpts = np.concatenate(pts, axis=0)
    F = op.field(allpts, conj=conj)
    mags = np.linalg.norm(F, axis=1)
    i = int(np.argmax(mags))
    return {"value": float(mags[i]), "argmax": allpts[i], "count": allpts.shape[0]}
