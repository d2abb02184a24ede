"""s-parabolic geometry of R^{n+1}: points, cubes, boxes and the anisotropic
distance.

The metric scales space by lambda and time by lambda**(2s), so an s-parabolic
cube of spatial side l has temporal extent l**(2s).  Only the spatial side is
stored; the temporal extent is always derived, which keeps the cube shape
exact under dilation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "SPoint",
    "SPCube",
    "Box",
    "sp_dist",
    "sp_norm",
    "sp_dilate",
    "temporal_reflect",
    "corner_subcube",
    "boundary_dist",
]


def _check_s(s: float) -> None:
    if not 0.0 < s <= 1.0:
        raise ValueError(f"s must lie in (0, 1], got {s}")


@dataclass(frozen=True)
class SPoint:
    """A point (x, t) of R^n x R. ``x`` is stored as a tuple of floats."""

    x: tuple
    t: float

    def __post_init__(self):
        x = tuple(float(v) for v in np.atleast_1d(np.asarray(self.x, dtype=float)))
        if len(x) < 1:
            raise ValueError("spatial dimension must be >= 1")
        if not all(math.isfinite(v) for v in x) or not math.isfinite(float(self.t)):
            raise ValueError("point components must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "t", float(self.t))

    @property
    def n(self) -> int:
        return len(self.x)

    def xarr(self) -> np.ndarray:
        return np.asarray(self.x, dtype=float)

    def __neg__(self) -> "SPoint":
        return SPoint(tuple(-v for v in self.x), -self.t)


@dataclass(frozen=True)
class Box:
    """Axis-parallel box: product of spatial intervals and a time interval.

    Unlike :class:`SPCube` there is no constraint tying the temporal length
    to the spatial sides; boxes are the working type for measure queries,
    clipped domains and quadrature cells.
    """

    x_lo: tuple
    x_hi: tuple
    t_lo: float
    t_hi: float

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(np.asarray(self.x_lo, dtype=float)))
        hi = tuple(float(v) for v in np.atleast_1d(np.asarray(self.x_hi, dtype=float)))
        if len(lo) != len(hi):
            raise ValueError("x_lo and x_hi must have equal length")
        object.__setattr__(self, "x_lo", lo)
        object.__setattr__(self, "x_hi", hi)
        object.__setattr__(self, "t_lo", float(self.t_lo))
        object.__setattr__(self, "t_hi", float(self.t_hi))

    @property
    def n(self) -> int:
        return len(self.x_lo)

    def is_empty(self) -> bool:
        return any(h <= l for l, h in zip(self.x_lo, self.x_hi)) or self.t_hi <= self.t_lo

    def volume(self) -> float:
        if self.is_empty():
            return 0.0
        v = self.t_hi - self.t_lo
        for l, h in zip(self.x_lo, self.x_hi):
            v *= h - l
        return v

    def intersect(self, other: "Box"):
        lo = tuple(max(a, b) for a, b in zip(self.x_lo, other.x_lo))
        hi = tuple(min(a, b) for a, b in zip(self.x_hi, other.x_hi))
        t0 = max(self.t_lo, other.t_lo)
        t1 = min(self.t_hi, other.t_hi)
        b = Box(lo, hi, t0, t1)
        return None if b.is_empty() else b

    def contains_point(self, p: SPoint) -> bool:
        return (
            all(l <= v <= h for v, l, h in zip(p.x, self.x_lo, self.x_hi))
            and self.t_lo <= p.t <= self.t_hi
        )

    def contains_box(self, other: "Box") -> bool:
        return (
            all(l <= ol and oh <= h for l, h, ol, oh in
                zip(self.x_lo, self.x_hi, other.x_lo, other.x_hi))
            and self.t_lo <= other.t_lo and other.t_hi <= self.t_hi
        )


@dataclass(frozen=True)
class SPCube:
    """s-parabolic cube: minimal corner, spatial side l, temporal extent l**(2s)."""

    corner: SPoint
    side: float
    s: float

    def __post_init__(self):
        _check_s(self.s)
        if not self.side > 0:
            raise ValueError(f"side must be positive, got {self.side}")
        object.__setattr__(self, "side", float(self.side))
        object.__setattr__(self, "s", float(self.s))

    @property
    def n(self) -> int:
        return self.corner.n

    @property
    def t_extent(self) -> float:
        return self.side ** (2.0 * self.s)

    def center(self) -> SPoint:
        return SPoint(
            tuple(v + self.side / 2.0 for v in self.corner.x),
            self.corner.t + self.t_extent / 2.0,
        )

    def to_box(self) -> Box:
        return Box(
            self.corner.x,
            tuple(v + self.side for v in self.corner.x),
            self.corner.t,
            self.corner.t + self.t_extent,
        )


def sp_dist(p: SPoint, q: SPoint, s: float) -> float:
    """s-parabolic distance max{|x-y|, |t-tau|^(1/(2s))}.

    The spatial part is Euclidean; the exponent 1/(2s) makes the distance
    1-homogeneous under the anisotropic dilation (x, t) -> (a x, a^(2s) t).
    """
    _check_s(s)
    dx = p.xarr() - q.xarr()
    spatial = float(np.sqrt(np.dot(dx, dx)))
    temporal = abs(p.t - q.t) ** (1.0 / (2.0 * s))
    return max(spatial, temporal)


def sp_norm(p: SPoint, s: float) -> float:
    """Distance from p to the space-time origin."""
    _check_s(s)
    origin = SPoint((0.0,) * p.n, 0.0)
    return sp_dist(p, origin, s)


def sp_dilate(cube: SPCube, alpha: float) -> SPCube:
    """Concentric dilation: spatial side alpha*l, temporal extent (alpha*l)^(2s)."""
    if not alpha > 0:
        raise ValueError(f"dilation factor must be positive, got {alpha}")
    c = cube.center()
    new_side = alpha * cube.side
    new_ext = new_side ** (2.0 * cube.s)
    corner = SPoint(
        tuple(v - new_side / 2.0 for v in c.x),
        c.t - new_ext / 2.0,
    )
    return SPCube(corner, new_side, cube.s)


def temporal_reflect(p: SPoint, t0: float) -> SPoint:
    """Reflect the time coordinate through t0; the spatial part is unchanged."""
    return SPoint(p.x, 2.0 * t0 - p.t)


def corner_subcube(cube: SPCube, which: str) -> SPCube:
    """Sub-cube with side l/4 sharing the maximal ('up-ri') or minimal
    ('lo-le') corner of the cube."""
    child_side = cube.side / 4.0
    if which == "lo-le":
        return SPCube(cube.corner, child_side, cube.s)
    if which == "up-ri":
        child_ext = child_side ** (2.0 * cube.s)
        corner = SPoint(
            tuple(v + cube.side - child_side for v in cube.corner.x),
            cube.corner.t + cube.t_extent - child_ext,
        )
        return SPCube(corner, child_side, cube.s)
    raise ValueError(f"which must be 'up-ri' or 'lo-le', got {which!r}")


def _clip_residual(v: float, lo: float, hi: float) -> float:
    """Distance from v to the interval [lo, hi] (0 if inside)."""
    if v < lo:
        return lo - v
    if v > hi:
        return v - hi
    return 0.0


def boundary_dist(p: SPoint, cube: SPCube, s: float | None = None) -> float:
    """s-parabolic distance from p to the topological boundary of the cube.

    Computed exactly face by face: on each face the free coordinates are
    clipped independently, which is valid because the metric is a max of a
    Euclidean spatial part and a temporal part.
    """
    s = cube.s if s is None else s
    _check_s(s)
    box = cube.to_box()
    x = p.xarr()
    n = cube.n
    inv2s = 1.0 / (2.0 * s)

    clip2 = np.array(
        [_clip_residual(x[j], box.x_lo[j], box.x_hi[j]) ** 2 for j in range(n)]
    )
    t_clip = _clip_residual(p.t, box.t_lo, box.t_hi)

    best = math.inf
    # spatial faces x_i = lo_i, hi_i
    for i in range(n):
        others = clip2.sum() - clip2[i]
        for c in (box.x_lo[i], box.x_hi[i]):
            d_sp = math.sqrt((x[i] - c) ** 2 + others)
            best = min(best, max(d_sp, t_clip ** inv2s))
    # temporal faces t = t_lo, t_hi
    d_sp = math.sqrt(clip2.sum())
    for c in (box.t_lo, box.t_hi):
        best = min(best, max(d_sp, abs(p.t - c) ** inv2s))
    return best
