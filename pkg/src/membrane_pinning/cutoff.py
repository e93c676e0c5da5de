"""Multiscale bad-box hierarchy and a cut-off function that is locally
affine on bad boxes.

The cut-off is kept lazy: it is a closed-form base profile plus a list of
affine corrections, and it can be evaluated at arbitrary lattice points.
A macroscopic box in d = 4 has billions of sites, so nothing here ever
materialises the cut-off on its full support.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .cones import ConeSet, Indicator, cone_distances, cone_reach
from .lattice import (
    BoxSpec,
    Grid,
    LatticeField,
    Polymer,
    Scales,
    bilaplacian,
    box_distance_inf,
    diff,
    hessian,
    hessian_array,
    laplacian_array,
    shift,
)


class CutoffError(ValueError):
    pass


class CutoffRefused(CutoffError):
    """A type-I bad macroscopic box touches the annulus around U."""


class CorrectionInfeasible(CutoffError):
    """An affine correction is needed but its radii violate R >= 16 r."""


# ---------------------------------------------------------------------------
# parameters


@dataclass(frozen=True)
class CutoffParams:
    K: int
    L: int
    M: int
    scales: Scales

    def __post_init__(self) -> None:
        if self.K < 3 or self.K % 2 == 0 or self.K % 3:
            raise CutoffError("K must be an odd positive multiple of 3")
        if self.L < 1 or self.L % 2 == 0:
            raise CutoffError("L must be an odd positive integer")
        if self.M < 12 or self.M % 2 == 0:
            raise CutoffError("M must be an odd integer >= 12")

    @property
    def dim(self) -> int:
        return self.scales.dim

    @property
    def micro(self) -> int:
        return self.K * self.scales.lambda_mic

    @property
    def macro(self) -> int:
        return self.K * self.L * self.scales.lambda_mac

    @property
    def sub_macro(self) -> int:
        return self.K * self.scales.lambda_mac

    def ell(self, j: int) -> int:
        if j < 0:
            raise CutoffError("level must be non-negative")
        return self.M ** (j ** 3) * self.micro

    @property
    def j_star(self) -> int:
        j = 0
        while 8 * self.ell(j + 1) <= self.macro:
            j += 1
        return j if 8 * self.ell(0) <= self.macro else -1

    def grid(self, j: int) -> Grid:
        return Grid(self.dim, self.ell(j), overlapping=j >= 1)

    def correction_radii(self, j: int) -> tuple[int, int]:
        """(r, R) of the correction applied to level j-1 boxes."""
        lo, hi = Fraction(self.ell(j - 1)), Fraction(self.ell(j))
        return math.ceil(lo / 2 + lo + 1), math.floor(lo / 2 + hi / 4)


# ---------------------------------------------------------------------------
# smooth ingredients


def smooth_step(s: np.ndarray) -> np.ndarray:
    """C-infinity step: 0 for s <= 0, 1 for s >= 1, built from exp(-1/s)."""
    s = np.asarray(s, dtype=float)
    a = np.where(s > 0, np.exp(-1.0 / np.where(s > 0, s, 1.0)), 0.0)
    b = np.where(s < 1, np.exp(-1.0 / np.where(s < 1, 1.0 - s, 1.0)), 0.0)
    return a / (a + b)


def plateau(z: np.ndarray, outer: float) -> np.ndarray:
    """Product over the last axis of 1D bumps equal to 1 on [-1, 1] and 0
    outside [-outer, outer]."""
    t = np.abs(np.asarray(z, dtype=float))
    return np.prod(1.0 - smooth_step((t - 1.0) / (outer - 1.0)), axis=-1)


def chi(z: np.ndarray) -> np.ndarray:
    return plateau(z, 2.0)


def chi_hat(z: np.ndarray) -> np.ndarray:
    return plateau(z, 9.0 / 7.0)


def xi_profile(y: np.ndarray, r: int, R: int) -> np.ndarray:
    """Correction weight around the origin: 1 on [-2r, 2r]^d, 0 outside
    [-R/2, R/2]^d, logarithmic in between.  ``y`` has shape (m, d)."""
    y = np.asarray(y, dtype=float)
    inner = chi(y / (2 * r))
    outer = chi(y / (R / 4))
    norm = np.linalg.norm(y, axis=-1)
    with np.errstate(divide="ignore"):
        frac = (math.log(R) - np.log(np.where(norm > 0, norm, 1.0))) / (math.log(R) - math.log(r))
    return inner + (outer - inner) * frac


# ---------------------------------------------------------------------------
# polymer distances


def polymer_distance(U: Polymer, points: np.ndarray) -> np.ndarray:
    """l-infinity distance from each point (rows of an (m, d) array) to U."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.int64))
    out = np.full(pts.shape[0], np.iinfo(np.int64).max, dtype=np.int64)
    for b in U.boxes:
        d = np.abs(pts - np.asarray(b.center)).max(axis=1) - b.radius
        out = np.minimum(out, np.maximum(d, 0))
    return out


def _box_distance_range(U: Polymer, box: BoxSpec) -> tuple[int, int]:
    """(min, upper bound on max) of the distance to U over the sites of box."""
    lo = min(max(0, box_distance_inf(box, b)) for b in U.boxes)
    corners = np.array(list(itertools.product(*zip(box.lo, box.hi))), dtype=np.int64)
    hi = min(int((np.abs(corners - np.asarray(b.center)).max(axis=1) - b.radius).max()) for b in U.boxes)
    return lo, max(lo, hi)


# ---------------------------------------------------------------------------
# level-0 bad boxes


def bad_level0(pinned_ext: Indicator, params: CutoffParams, cones: ConeSet,
               region: BoxSpec | tuple[Sequence[int], Sequence[int]], chunk: int = 200_000) -> list[BoxSpec]:
    """Micro-grid boxes meeting ``region`` that hold a site whose cone
    distance to the extended pinned set exceeds K lambda_mic.

    When every cone reaches a lattice point within K lambda_mic and the set
    contains everything outside its stored box, only sites within the cone
    reach of that box can be bad; the scan is restricted accordingly.
    """
    lo, hi = (region.lo, region.hi) if isinstance(region, BoxSpec) else region
    lo = np.asarray(lo, dtype=np.int64)
    hi = np.asarray(hi, dtype=np.int64)
    k = params.micro
    reach = cone_reach(cones)
    scan_lo, scan_hi = lo, hi
    if pinned_ext.outside and reach <= k:
        inner_lo = np.asarray(pinned_ext.origin) - reach
        inner_hi = np.asarray(pinned_ext.origin) + np.asarray(pinned_ext.values.shape) - 1 + reach
        scan_lo, scan_hi = np.maximum(lo, inner_lo), np.minimum(hi, inner_hi)
    grid = params.grid(0)
    bad: set[BoxSpec] = set()
    if np.all(scan_hi >= scan_lo):
        axes = [np.arange(a, b + 1) for a, b in zip(scan_lo, scan_hi)]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(lo))
        for start in range(0, pts.shape[0], chunk):
            block = pts[start:start + chunk]
            dist = cone_distances(block, pinned_ext, cones, k).d_star
            for p in block[dist > k]:
                bad.add(grid.box_of(p))
    return sorted(b for b in bad if all(b.hi[i] >= lo[i] and b.lo[i] <= hi[i] for i in range(len(lo))))


# ---------------------------------------------------------------------------
# hierarchy


def _disjoint_pair_inside(cover: BoxSpec, boxes: Sequence[BoxSpec]) -> bool:
    inside = [b for b in boxes if cover.contains_box(b)]
    return any(not a.intersects(b) for a, b in itertools.combinations(inside, 2))


@dataclass
class Level:
    j: int
    bad: list[BoxSpec]
    clustered: list[BoxSpec] = field(default_factory=list)
    isolated: list[BoxSpec] = field(default_factory=list)


@dataclass
class BadBoxHierarchy:
    params: CutoffParams
    levels: list[Level]
    covers: dict[int, list[BoxSpec]]
    parents: dict[tuple[int, BoxSpec], BoxSpec]
    exact_cover: dict[int, bool]

    @property
    def level0(self) -> list[BoxSpec]:
        return self.levels[0].bad

    def bad(self, j: int) -> list[BoxSpec]:
        return self.levels[j].bad if j < len(self.levels) else []

    @property
    def top(self) -> list[BoxSpec]:
        """Boxes of S^(j_star)."""
        return self.bad(self.params.j_star)

    def isolated(self, j: int) -> list[BoxSpec]:
        return self.levels[j].isolated if j < len(self.levels) else []

    def chain(self, q: BoxSpec) -> list[BoxSpec]:
        out = [q]
        j = 0
        while (j, out[-1]) in self.parents:
            out.append(self.parents[(j, out[-1])])
            j += 1
        return out

    def j_isol(self, q: BoxSpec) -> int:
        """Level at which the parent chain of q ends (j_star if it reaches the top)."""
        return len(self.chain(q)) - 1

    def macro_type_one(self) -> list[BoxSpec]:
        grid = Grid(self.params.dim, self.params.macro)
        out: set[BoxSpec] = set()
        for q in self.top:
            out.update(grid.boxes_meeting(q.lo, q.hi))
        return sorted(out)

    def macro_type_two(self) -> list[BoxSpec]:
        p = self.params
        sub = Grid(p.dim, p.sub_macro)
        macro = Grid(p.dim, p.macro)
        threshold = Fraction(p.scales.ratio ** p.dim, 4)
        counts: dict[BoxSpec, int] = {}
        for q in self.level0:
            for s in sub.boxes_containing(q):
                counts[s] = counts.get(s, 0) + 1
        out: set[BoxSpec] = set()
        for s, c in counts.items():
            if c >= threshold:
                out.update(macro.boxes_containing(s))
        return sorted(out)

    def dump(self) -> str:
        lines = []
        for lev in self.levels:
            iso = set(lev.isolated)
            for b in lev.bad:
                tag = "isolated" if b in iso else ("clustered" if b in lev.clustered else "bad")
                lines.append(f"{lev.j} {tag} {' '.join(map(str, b.center))} {b.side}")
            for b in self.covers.get(lev.j + 1, []):
                lines.append(f"{lev.j + 1} cover {' '.join(map(str, b.center))} {b.side}")
        return "\n".join(lines) + ("\n" if lines else "")


def _min_cover(clustered: list[BoxSpec], grid: Grid, exact_limit: int = 20) -> tuple[list[BoxSpec], bool]:
    """Fewest grid boxes, each holding two disjoint clustered boxes, such that
    every clustered box lies inside one of them; lexicographically first."""
    cands: set[BoxSpec] = set()
    for b in clustered:
        cands.update(c for c in grid.boxes_containing(b) if _disjoint_pair_inside(c, clustered))
    cands_l = sorted(cands)
    holds = [frozenset(k for k, b in enumerate(clustered) if c.contains_box(b)) for c in cands_l]
    target = frozenset(range(len(clustered)))
    if len(cands_l) <= exact_limit:
        for size in range(1, len(cands_l) + 1):
            for combo in itertools.combinations(range(len(cands_l)), size):
                if frozenset().union(*(holds[i] for i in combo)) == target:
                    return [cands_l[i] for i in combo], True
        raise CutoffError("clustered boxes admit no valid cover")
    chosen: list[int] = []
    covered: frozenset[int] = frozenset()
    while covered != target:
        best = max(range(len(cands_l)), key=lambda i: (len(holds[i] - covered), -i))
        if not holds[best] - covered:
            raise CutoffError("clustered boxes admit no valid cover")
        chosen.append(best)
        covered |= holds[best]
    return sorted(cands_l[i] for i in chosen), False


def build_hierarchy(level0: Sequence[BoxSpec], params: CutoffParams, exact_limit: int = 20) -> BadBoxHierarchy:
    js = params.j_star
    if js < 1:
        raise CutoffError(f"j_star = {js} < 1: macroscopic scale too small for the hierarchy")
    levels = [Level(0, sorted(level0))]
    covers: dict[int, list[BoxSpec]] = {}
    parents: dict[tuple[int, BoxSpec], BoxSpec] = {}
    exact: dict[int, bool] = {}
    for j in range(1, js + 1):
        prev = levels[-1]
        half = Fraction(params.ell(j), 2)
        clust = [q for q in prev.bad
                 if any(not q.intersects(p) and box_distance_inf(q, p) <= half for p in prev.bad)]
        cset = set(clust)
        prev.clustered = clust
        prev.isolated = [q for q in prev.bad if q not in cset]
        if not clust:
            break
        cover, exact[j] = _min_cover(clust, params.grid(j), exact_limit)
        covers[j] = cover
        for q in clust:
            parents[(j - 1, q)] = next(c for c in cover if c.contains_box(q))
        levels.append(Level(j, cover))
    return BadBoxHierarchy(params, levels, covers, parents, exact)


# ---------------------------------------------------------------------------
# affine correction


@dataclass
class AffineCorrection:
    w: LatticeField
    growth: float
    gamma: float


def _hess_sup(a: np.ndarray, inner: tuple[slice, ...]) -> float:
    h = hessian_array(a)
    return float(np.sqrt((h ** 2).sum(axis=(0, 1)))[inner].max())


def affine_correction(v: LatticeField, x: Sequence[int], r: int, R: int) -> AffineCorrection:
    """w = xi (u - v) with u the first-order Taylor polynomial of v at x.

    v + w is affine on Q_{2r}(x), hence has zero second differences on
    Q_r(x); w vanishes outside Q_{R-1}(x).  ``growth`` is the measured ratio
    of the sup norms of the second differences over Q_R(x), and ``gamma``
    the constant that ratio implies in 1 + gamma / (log R - log r).
    """
    if r < 1:
        raise CutoffError("r must be positive")
    if R < 16 * r:
        raise CorrectionInfeasible(f"R/r = {R}/{r} = {R / r:.3g} < 16")
    d = v.dim
    x = np.asarray(x, dtype=np.int64)
    lo, hi = x - R - 1, x + R + 1
    vv = v.restricted(lo, hi)
    c = tuple(int(k) for k in (x - lo))
    grad = np.array([vv.values[tuple(np.add(c, np.eye(d, dtype=int)[i]))] - vv.values[c] for i in range(d)])
    y = vv.coordinates() - x.reshape((-1,) + (1,) * d)
    u = vv.values[c] + np.tensordot(grad, y, axes=1)
    weight = xi_profile(np.moveaxis(y, 0, -1), r, R)
    w = weight * (u - vv.values)
    w[np.abs(y).max(axis=0) > R - 1] = 0.0
    inner = tuple(slice(1, -1) for _ in range(d))
    before = _hess_sup(vv.values, inner)
    after = _hess_sup(vv.values + w, inner)
    growth = after / before if before > 0 else (1.0 if after == 0 else math.inf)
    gamma = (growth - 1.0) * (math.log(R) - math.log(r))
    return AffineCorrection(LatticeField(tuple(int(k) for k in lo), w), growth, gamma)


# ---------------------------------------------------------------------------
# cut-off function


@dataclass(frozen=True)
class Correction:
    level: int
    box: BoxSpec
    r: int
    R: int
    value: float
    grad: tuple[float, ...]

    def apply(self, pts: np.ndarray, base: np.ndarray) -> np.ndarray:
        """Increment xi (u - base) at the points (zero off the support)."""
        y = pts - np.asarray(self.box.center)
        out = np.zeros(pts.shape[0])
        near = np.abs(y).max(axis=1) <= self.R - 1
        if near.any():
            yn = y[near].astype(float)
            u = self.value + yn @ np.asarray(self.grad)
            out[near] = xi_profile(yn, self.r, self.R) * (u - base[near])
        return out


@dataclass
class CutoffFunction:
    """eta_* followed by affine corrections, applied level by level from the top.

    ``growth`` maps a correction index to the measured sup-norm ratio of
    grad^2 eta over Q_R of the correction, after versus before it (only
    measured when Q_R is small enough to scan).
    """

    U: Polymer
    params: CutoffParams
    corrections: list[Correction] = field(default_factory=list)
    log: list[str] = field(default_factory=list)
    growth: dict[int, float] = field(default_factory=dict)

    def base(self, pts: np.ndarray) -> np.ndarray:
        """The product profile eta_* at integer points (rows of pts)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=np.int64))
        scale = Fraction(7, 8) * self.params.macro
        out = np.ones(pts.shape[0])
        reach = float(scale * Fraction(9, 7))
        for b in self.U.boxes:
            y = pts - np.asarray(b.center)
            near = np.abs(y).max(axis=1) < reach
            if near.any():
                out[near] *= 1.0 - chi_hat(y[near] / float(scale))
        return out

    def levels(self) -> list[int]:
        return sorted({c.level for c in self.corrections}, reverse=True)

    def __call__(self, pts: np.ndarray, upto: int | None = None) -> np.ndarray:
        """eta at the points; ``upto=j`` stops after the level-j corrections."""
        pts = np.atleast_2d(np.asarray(pts, dtype=np.int64))
        val = self.base(pts)
        for j in self.levels():
            if upto is not None and j < upto:
                break
            snap = val.copy()
            for c in self.corrections:
                if c.level == j:
                    val = val + c.apply(pts, snap)
        return val

    def field(self, lo: Sequence[int], hi: Sequence[int], upto: int | None = None) -> LatticeField:
        f = LatticeField.zeros(lo, hi)
        pts = np.moveaxis(f.coordinates(), 0, -1).reshape(-1, f.dim)
        f.values[...] = self(pts, upto).reshape(f.shape)
        return f

    def hessian_norm(self, lo: Sequence[int], hi: Sequence[int], upto: int | None = None) -> LatticeField:
        """|grad^2 eta| (Frobenius) on the box [lo, hi]."""
        d = self.params.dim
        f = self.field(np.asarray(lo) - 1, np.asarray(hi) + 1, upto)
        h = hessian_array(f.values)
        inner = tuple(slice(1, -1) for _ in range(d))
        return LatticeField(tuple(lo), np.sqrt((h ** 2).sum(axis=(0, 1)))[inner])

    def to_csv(self, lo: Sequence[int], hi: Sequence[int]) -> str:
        f = self.field(lo, hi)
        rows = [",".join(map(str, s)) + f",{v:.17g}" for s, v in zip(f.sites(), f.values.reshape(-1))]
        return "\n".join(rows) + "\n"


def _v_range(params: CutoffParams, j: int) -> tuple[Fraction, Fraction]:
    """V^(j) as {y : a < dist(y, U) <= b} (a superset for non-convex U)."""
    s = Fraction(params.macro)
    a = math.floor(3 * s / 8 - 1)
    b = math.floor(5 * s / 8 + 1)
    for k in range(j + 1, params.j_star + 1):
        a -= params.ell(k)
        b += params.ell(k)
    return Fraction(a), Fraction(b)


def annulus_boxes(U: Polymer) -> list[BoxSpec]:
    """Macro-grid boxes in (U + Q_S) minus U."""
    grid = U.grid
    out: set[BoxSpec] = set()
    for b in U.boxes:
        big = b.expanded(grid.scale)
        out.update(c for c in grid.boxes_meeting(big.lo, big.hi) if big.contains_box(c))
    return sorted(out - set(U.boxes))


def build_cutoff(U: Polymer, hierarchy: BadBoxHierarchy, params: CutoffParams,
                 measure_limit: int = 2_000_000) -> CutoffFunction:
    if params.scales.lambda_mic < 4:
        raise CutoffError("lambda_mic < 4: the plateau regions collide on the lattice")
    if U.grid.scale != params.macro or U.grid.overlapping or not len(U):
        raise CutoffError("U must be a non-empty polymer of the macroscopic grid")
    blocked = set(hierarchy.macro_type_one()) & set(annulus_boxes(U))
    if blocked:
        raise CutoffRefused(f"{len(blocked)} type-I bad macroscopic boxes touch the annulus")
    eta = CutoffFunction(U, params)
    d = params.dim
    eye = np.eye(d, dtype=np.int64)
    for j in range(params.j_star, 0, -1):
        a, b = _v_range(params, j)
        cand = []
        for q in hierarchy.isolated(j - 1):
            lo, hi = _box_distance_range(U, q.expanded(1))
            if lo <= b and hi > a:
                cand.append(q)
        chosen: list[BoxSpec] = []
        for q in cand:
            if all(not q.intersects(p) for p in chosen):
                chosen.append(q)
        if not chosen:
            continue
        r, R = params.correction_radii(j)
        if R < 16 * r:
            raise CorrectionInfeasible(
                f"level {j}: {len(chosen)} corrections needed but R/r = {R}/{r} = {R / r:.3g} < 16")
        growth = 1.0 + 1.0 / (3 * j * j - 3 * j + 1)
        for q in chosen:
            c = np.asarray(q.center, dtype=np.int64)
            pts = np.vstack([c, c + eye])
            vals = eta(pts, upto=j + 1) if eta.corrections else eta.base(pts)
            eta.corrections.append(Correction(j, q, r, R, float(vals[0]), tuple(float(t) for t in vals[1:] - vals[0])))
            eta.log.append(f"level {j} box {q.center} r={r} R={R} bound={growth:.6g}")
        for k, c in enumerate(eta.corrections):
            if c.level != j or (2 * R + 1) ** d > measure_limit:
                continue
            lo = np.asarray(c.box.center) - R
            hi = np.asarray(c.box.center) + R
            before = float(eta.hessian_norm(lo, hi, upto=j + 1).values.max())
            after = float(eta.hessian_norm(lo, hi).values.max())
            eta.growth[k] = after / before if before > 0 else 1.0
            eta.log.append(f"level {j} box {c.box.center} measured growth={eta.growth[k]:.6g}")
    return eta


# ---------------------------------------------------------------------------
# verification of the cut-off properties


@dataclass
class CutoffCheck:
    zero_violations: int
    one_violations: int
    affine_violations: int
    max_bad_hessian: float
    max_hessian: float
    checked: int

    @property
    def ok(self) -> bool:
        return self.zero_violations == 0 and self.one_violations == 0 and self.affine_violations == 0

    @property
    def hessian_constant(self) -> float:
        return self.max_hessian


def probe_points(U: Polymer, params: CutoffParams, count: int, seed: int) -> np.ndarray:
    """Axis and diagonal lines through the annulus plus uniform random points."""
    rng = np.random.default_rng(seed)
    d = params.dim
    s = params.macro
    lo, hi = U.bounds()
    lo = np.asarray(lo) - s - 2
    hi = np.asarray(hi) + s + 2
    pts = [rng.integers(lo, hi + 1, size=(count, d))]
    t = np.arange(-s - 2, s + 3)
    for b in U.boxes:
        c = np.asarray(b.center)
        dirs = [np.eye(d, dtype=np.int64)[i] for i in range(d)] + [np.ones(d, dtype=np.int64)]
        for e in dirs:
            pts.append(c + np.outer(t + (b.radius if e.sum() == 1 else 0), e))
    return np.vstack(pts)


def verify_cutoff(eta: CutoffFunction, level0: Sequence[BoxSpec], probes: np.ndarray,
                  tol: float = 1e-12, max_box_sites: int = 2_000_000) -> CutoffCheck:
    """Check eta = 0 near U, eta = 1 far from U, and zero second differences
    on the 1-neighbourhood of every level-0 bad box in the annulus, at the
    given probe points and at every site of each bad box neighbourhood."""
    p = eta.params
    d = p.dim
    inner = 2 * p.micro
    outer = p.macro - 2 * p.micro
    probes = np.atleast_2d(np.asarray(probes, dtype=np.int64))
    dist = polymer_distance(eta.U, probes)
    vals = eta(probes)
    zero_bad = int(np.sum((dist <= inner) & (vals != 0.0)))
    one_bad = int(np.sum((dist > outer) & (vals != 1.0)))
    offs = np.array(list(itertools.product((-1, 0, 1), repeat=d)), dtype=np.int64)
    stencil = np.unique((probes[:, None, :] + offs[None, :, :]).reshape(-1, d), axis=0)
    hmax = 0.0
    if len(stencil):
        # second differences at the probes, from eta on their 3^d neighbourhoods
        vals_s = eta(stencil)
        lookup = {tuple(s): v for s, v in zip(stencil.tolist(), vals_s)}
        for x in probes.tolist():
            loc = np.array([lookup[tuple(np.add(x, o))] for o in offs.tolist()]).reshape((3,) * d)
            h = hessian_array(np.pad(loc, 1))[(slice(None), slice(None)) + (slice(2, 3),) * d]
            hmax = max(hmax, float(np.sqrt((h ** 2).sum())))
    annulus = annulus_boxes(eta.U)
    affine_bad = 0
    bad_hmax = 0.0
    checked = probes.shape[0]
    for q in level0:
        if not any(a.contains_box(q) for a in annulus):
            continue
        nb = q.expanded(1)
        if len(nb) > max_box_sites:
            raise CutoffError("bad box neighbourhood too large to scan")
        hn = eta.hessian_norm(nb.lo, nb.hi).values
        checked += hn.size
        bad_hmax = max(bad_hmax, float(hn.max()))
        affine_bad += int(np.sum(hn > tol))
        hmax = max(hmax, float(hn.max()))
    return CutoffCheck(zero_bad, one_bad, affine_bad, bad_hmax, hmax * p.macro ** 2, checked)


# ---------------------------------------------------------------------------
# hole filler


@dataclass
class HoleFillerTerms:
    lhs: float
    gradient_term: float
    coupling_term: float
    bilaplacian_term: float
    shifted_lhs: float

    @property
    def rhs(self) -> float:
        return self.gradient_term - self.coupling_term

    @property
    def residual(self) -> float:
        return abs(self.lhs - self.rhs - self.bilaplacian_term)

    @property
    def shifted_residual(self) -> float:
        """Same balance with the diagonal shift eta(x + e_i - e_j) as weight;
        this version is not exact for general eta."""
        return abs(self.shifted_lhs - self.rhs - self.bilaplacian_term)


def hole_filler_terms(u: LatticeField, eta: LatticeField) -> HoleFillerTerms:
    """Terms of the weighted energy identity

        sum_x sum_ij |D_i D_-j u|^2 (eta(x + e_i) + eta(x - e_j)) / 2
          = 1/2 sum_x sum_i |D_i u|^2 (Lap eta(x + e_i) + Lap eta(x))
            - sum_x sum_ij u D_i D_-j u D_i D_-j eta
            + sum_x eta u Lap^2 u,

    which holds exactly for finitely supported u and eta.  The last term
    vanishes when u is biharmonic wherever eta u is nonzero.
    """
    if u.dim != eta.dim:
        raise CutoffError("dimension mismatch")
    d = u.dim
    lo = tuple(min(a, b) - 3 for a, b in zip(u.origin, eta.origin))
    hi = tuple(max(a, b) + 3 for a, b in zip(u.hi, eta.hi))
    U = u.restricted(lo, hi).values
    E = eta.restricted(lo, hi).values
    hu = hessian_array(U)
    he = hessian_array(E)
    lhs = shifted = coupling = 0.0
    for i in range(d):
        for j in range(d):
            sq = hu[i, j] ** 2
            lhs += 0.5 * float((sq * (shift(E, i, 1) + shift(E, j, -1))).sum())
            shifted += float((sq * shift(shift(E, i, 1), j, -1)).sum())
            coupling += float((U * hu[i, j] * he[i, j]).sum())
    lap = laplacian_array(E)
    grad = 0.0
    for i in range(d):
        grad += 0.5 * float((diff(U, i, 1) ** 2 * (shift(lap, i, 1) + lap)).sum())
    bilap = float((E * U * laplacian_array(laplacian_array(U))).sum())
    return HoleFillerTerms(lhs, grad, coupling, bilap, shifted)


def hole_filler_identity_residual(u: LatticeField, eta: LatticeField) -> float:
    return hole_filler_terms(u, eta).residual


# ---------------------------------------------------------------------------
# annulus decay


@dataclass
class AnnulusDecay:
    outer: float
    annulus: float

    @property
    def ratio(self) -> float:
        if self.annulus == 0.0:
            return 0.0 if self.outer == 0.0 else math.inf
        return self.outer / self.annulus


def _hessian_density(u: LatticeField) -> tuple[np.ndarray, np.ndarray]:
    origin, h = hessian(u)
    dens = (h ** 2).sum(axis=(0, 1))
    coords = LatticeField(origin, dens).coordinates()
    return np.moveaxis(coords, 0, -1).reshape(-1, u.dim), dens.reshape(-1)


def check_biharmonic_off(u: LatticeField, U: Polymer, pinned_ext: Indicator | None, tol: float = 1e-8) -> float:
    """Largest |u Lap^2 u| off U relative to max|u| max|Lap^2 u|; raises if
    it exceeds tol or if u is nonzero on the extended pinned set off U."""
    b = bilaplacian(u)
    prod = LatticeField(b.origin, b.values * u.padded(2).values)
    pts = np.moveaxis(prod.coordinates(), 0, -1).reshape(-1, u.dim)
    off = polymer_distance(U, pts) > 0
    scale = float(np.abs(u.values).max() * np.abs(b.values).max()) if u.values.size else 0.0
    worst = float(np.abs(prod.values.reshape(-1)[off]).max()) if off.any() else 0.0
    rel = worst / scale if scale > 0 else 0.0
    if rel > tol:
        raise CutoffError(f"u Lap^2 u off U is {rel:.3e} relative, above {tol}")
    if pinned_ext is not None:
        upts = np.moveaxis(u.coordinates(), 0, -1).reshape(-1, u.dim)
        sel = pinned_ext(upts) & (polymer_distance(U, upts) > 0)
        if np.any(u.values.reshape(-1)[sel] != 0.0):
            raise CutoffError("u does not vanish on the extended pinned set off U")
    return rel


def annulus_decay_ratio(pinned_ext: Indicator | None, U: Polymer, params: CutoffParams, u: LatticeField,
                        tol: float = 1e-8) -> AnnulusDecay:
    """Energy of grad^2 u beyond U + Q_S against its energy on (U + Q_S) minus U."""
    check_biharmonic_off(u, U, pinned_ext, tol)
    pts, dens = _hessian_density(u)
    dist = polymer_distance(U, pts)
    s = params.macro
    return AnnulusDecay(float(dens[dist > s].sum()), float(dens[(dist > 0) & (dist <= s)].sum()))


def iterated_annuli(U: Polymer, u: LatticeField, width: int, count: int) -> list[float]:
    """Energy of grad^2 u on the shells {k w < dist(., U) <= (k+1) w} for
    k < count, followed by the energy beyond the last shell."""
    pts, dens = _hessian_density(u)
    dist = polymer_distance(U, pts)
    out = [float(dens[(dist > k * width) & (dist <= (k + 1) * width)].sum()) for k in range(count)]
    out.append(float(dens[dist > count * width].sum()))
    return out
