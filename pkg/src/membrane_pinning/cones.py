"""Simplex cones, cone distances to the pinned set, and the two functional
inequalities that control a field by its second derivatives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .lattice import BoxSpec, LatticeField, gradient_norm_sq, hessian_norm_sq


class ConeError(ValueError):
    pass


def _simplex(d: int) -> np.ndarray:
    if d == 1:
        return np.array([[1.0], [-1.0]])
    c = -1.0 / d
    s = math.sqrt(1.0 - c * c)
    rows = [np.r_[1.0, np.zeros(d - 1)]] + [np.r_[c, s * v] for v in _simplex(d - 1)]
    return np.array(rows)


def widest_aperture(d: int, tol: float = 1e-14) -> float:
    """Largest angular radius keeping points of different caps at obtuse angles.

    Two caps of angular radius k around directions at angle alpha contain
    points at angle alpha - 2k, so the cross dot products stay negative while
    cos(alpha - 2k) < 0.
    """
    alpha = math.acos(-1.0 / d)
    lo, hi = 0.0, alpha / 2
    while hi - lo > tol:
        mid = (lo + hi) / 2
        if math.cos(alpha - 2 * mid) < 0:
            lo = mid
        else:
            hi = mid
    return lo


@dataclass(frozen=True)
class ConeSet:
    """d+1 simplex directions and an angular aperture kappa (radians)."""

    dim: int
    directions: np.ndarray = field(compare=False)
    kappa: float

    @property
    def cos_kappa(self) -> float:
        return math.cos(self.kappa)

    def member(self, y: np.ndarray) -> np.ndarray:
        """Boolean (m, d+1): whether each offset lies in each cone."""
        y = np.atleast_2d(np.asarray(y, dtype=float))
        norm = np.linalg.norm(y, axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            cos = (y @ self.directions.T) / norm[:, None]
        return (norm[:, None] > 0) & (cos >= self.cos_kappa - 1e-12)


def simplex_directions(d: int, aperture_fraction: float = 0.5) -> ConeSet:
    if d < 1:
        raise ConeError("dimension must be positive")
    return ConeSet(d, _simplex(d), aperture_fraction * widest_aperture(d))


@lru_cache(maxsize=32)
def _cone_offsets(d: int, kappa: float, directions: bytes, radius: int) -> tuple[tuple[np.ndarray, np.ndarray], ...]:
    dirs = np.frombuffer(directions).reshape(d + 1, d)
    cones = ConeSet(d, dirs, kappa)
    out = []
    pts = _l1_ball(d, radius)
    mem = cones.member(pts)
    l1 = np.abs(pts).sum(axis=1)
    for i in range(d + 1):
        sel = pts[mem[:, i]]
        norms = l1[mem[:, i]]
        order = np.lexsort(tuple(sel.T[::-1]) + (norms,))
        out.append((sel[order], norms[order]))
    return tuple(out)


def _l1_ball(d: int, radius: int) -> np.ndarray:
    """Nonzero integer points with |y|_1 <= radius, built one axis at a time."""
    pts = np.zeros((1, 0), dtype=np.int64)
    for _ in range(d):
        used = np.abs(pts).sum(axis=1)
        parts = []
        for v in range(-radius, radius + 1):
            ok = used + abs(v) <= radius
            if ok.any():
                parts.append(np.hstack([pts[ok], np.full((int(ok.sum()), 1), v, dtype=np.int64)]))
        pts = np.vstack(parts)
    return pts[np.abs(pts).sum(axis=1) > 0]


def cone_offsets(cones: ConeSet, radius: int) -> tuple[tuple[np.ndarray, np.ndarray], ...]:
    """Per cone, the nonzero lattice offsets in the cone with |y|_1 <= radius,
    sorted by l1 norm."""
    return _cone_offsets(cones.dim, cones.kappa, np.ascontiguousarray(cones.directions).tobytes(), int(radius))


@dataclass
class Indicator:
    """Boolean set given by an array over a box plus a constant outside it."""

    origin: tuple[int, ...]
    values: np.ndarray
    outside: bool = False

    def __call__(self, coords: np.ndarray) -> np.ndarray:
        coords = np.atleast_2d(np.asarray(coords, dtype=np.int64))
        idx = coords - np.asarray(self.origin)
        shape = np.asarray(self.values.shape)
        ok = np.all((idx >= 0) & (idx < shape), axis=1)
        out = np.full(coords.shape[0], self.outside, dtype=bool)
        if ok.any():
            out[ok] = self.values[tuple(idx[ok].T)]
        return out

    @classmethod
    def empty(cls, d: int) -> "Indicator":
        return cls(tuple([0] * d), np.zeros([1] * d, dtype=bool), False)

    @classmethod
    def from_sites(cls, sites: Sequence[Sequence[int]], d: int, outside: bool = False) -> "Indicator":
        if len(sites) == 0:
            ind = cls.empty(d)
            ind.outside = outside
            return ind
        arr = np.asarray(sites, dtype=np.int64).reshape(-1, d)
        lo = arr.min(axis=0)
        vals = np.zeros(tuple(arr.max(axis=0) - lo + 1), dtype=bool)
        vals[tuple((arr - lo).T)] = True
        return cls(tuple(int(v) for v in lo), vals, outside)


def extended_pinned_set(domain_lo: Sequence[int], domain_hi: Sequence[int], pinned: Sequence[Sequence[int]] | np.ndarray) -> Indicator:
    """The pinned set together with the complement of the box [lo, hi]."""
    lo = np.asarray(domain_lo)
    shape = tuple(np.asarray(domain_hi) - lo + 1)
    vals = np.zeros(shape, dtype=bool)
    arr = np.asarray(pinned, dtype=np.int64).reshape(-1, len(lo))
    if len(arr):
        vals[tuple((arr - lo).T)] = True
    return Indicator(tuple(int(v) for v in lo), vals, outside=True)


@dataclass
class ConeDistances:
    points: np.ndarray
    per_cone: np.ndarray

    @property
    def d_star(self) -> np.ndarray:
        return self.per_cone.max(axis=1)


def cone_distances(points: Sequence[Sequence[int]] | np.ndarray, pinned_ext: Indicator, cones: ConeSet, cutoff: int) -> ConeDistances:
    """l1 distance from each point to the nearest set point in each cone.

    Only offsets with l1 norm <= cutoff are scanned; farther hits read +inf.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.int64))
    if cutoff < 0:
        raise ConeError("cutoff must be non-negative")
    out = np.full((pts.shape[0], cones.dim + 1), np.inf)
    for i, (offs, norms) in enumerate(cone_offsets(cones, cutoff)):
        todo = np.arange(pts.shape[0])
        for off, nrm in zip(offs, norms):
            if not len(todo):
                break
            hit = pinned_ext(pts[todo] + off)
            out[todo[hit], i] = nrm
            todo = todo[~hit]
    return ConeDistances(pts, out)


def cone_reach(cones: ConeSet, limit: int = 64) -> int:
    """Largest, over cones, l1 norm of the nearest lattice point in the cone."""
    for r in range(1, limit + 1):
        if all(len(o) for o, _ in cone_offsets(cones, r)):
            return max(int(n[0]) for _, n in cone_offsets(cones, r))
    raise ConeError(f"some cone holds no lattice point within l1 radius {limit}")


# ---------------------------------------------------------------------------
# inequalities


@dataclass
class RatioResult:
    lhs: float
    rhs: float

    @property
    def ratio(self) -> float:
        if self.rhs == 0.0:
            return 0.0 if self.lhs == 0.0 else math.inf
        return self.lhs / self.rhs


def local_poincare_ratio(u: LatticeField, pinned_ext: Indicator, region: Sequence[Sequence[int]] | np.ndarray | BoxSpec,
                         radius: int, cones: ConeSet) -> RatioResult:
    """lhs = sum over V of u^2 1{d_* <= R};  rhs = R^d (1 + 1_{d=4} log R) ||grad^2 u||^2 on V + Q_R."""
    if radius < 2:
        raise ConeError("R must be at least 2")
    d = u.dim
    if isinstance(region, BoxSpec):
        v_sites = np.array(list(region.sites()), dtype=np.int64)
    else:
        v_sites = np.atleast_2d(np.asarray(region, dtype=np.int64))
    coords = u.coordinates().reshape(d, -1).T
    in_ext = pinned_ext(coords)
    if np.any(u.values.reshape(-1)[in_ext] != 0.0):
        raise ConeError("field does not vanish on the extended pinned set")

    vlo = v_sites.min(axis=0)
    vals = u.restricted(vlo, v_sites.max(axis=0)).values[tuple((v_sites - vlo).T)]
    nz = vals != 0.0
    lhs = 0.0
    if nz.any():
        dist = cone_distances(v_sites[nz], pinned_ext, cones, radius)
        lhs = float((vals[nz] ** 2 * (dist.d_star <= radius)).sum())

    # membership in V + Q_R, evaluated only where grad^2 u can be nonzero
    tree = cKDTree(v_sites)

    def region_mask(c: np.ndarray) -> np.ndarray:
        pts = np.moveaxis(c, 0, -1).reshape(-1, d)
        dist, _ = tree.query(pts, k=1, p=np.inf, distance_upper_bound=radius + 0.5)
        return (dist <= radius).reshape(c.shape[1:])

    energy = hessian_norm_sq(u, region_mask)
    factor = radius ** d * (1.0 + (math.log(radius) if d == 4 else 0.0))
    return RatioResult(lhs, factor * energy)


def interpolation_min_side(d: int) -> float:
    return 12.0 * math.sqrt(d) ** (d - 1) * math.sqrt(d)


def interpolation_ratio(u: LatticeField, box: BoxSpec, subset: np.ndarray) -> RatioResult:
    """lhs = ||grad u||^2_Q;  rhs = R^2 ||grad^2 u||^2_Q + R^-2 ||u 1_B||^2_Q.

    ``subset`` is a boolean array over the box Q (same shape as Q).
    """
    side = box.side
    d = box.dim
    if side % 2 == 0 or box.half_diameter != (side - 1) / 2:
        raise ConeError("box side must be odd")
    if side < interpolation_min_side(d):
        raise ConeError(f"box side {side} below {interpolation_min_side(d):.2f}")
    subset = np.asarray(subset, dtype=bool)
    if subset.shape != (side,) * d:
        raise ConeError("subset mask must cover the box")
    if 2 * subset.sum() < side ** d:
        raise ConeError("subset holds fewer than half of the box")
    inside = _box_region(box)
    lhs = gradient_norm_sq(u, inside)
    hess = hessian_norm_sq(u, inside)
    vals = u.restricted(box.lo, box.hi).values
    rhs = side ** 2 * hess + float((vals[subset] ** 2).sum()) / side ** 2
    return RatioResult(lhs, rhs)


def _box_region(box: BoxSpec):
    lo = np.asarray(box.lo).reshape((-1,) + (1,) * box.dim)
    hi = np.asarray(box.hi).reshape((-1,) + (1,) * box.dim)
    return lambda c: np.all((c >= lo) & (c <= hi), axis=0)
