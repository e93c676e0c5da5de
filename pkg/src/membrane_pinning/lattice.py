"""Lattice primitives: sites, boxes, polymers, finitely supported fields and
the discrete difference operators built on them.

Fields are stored as dense arrays over a bounding box together with the
coordinates of the array's first entry.  Every read outside that box returns
zero, which is the zero boundary condition used throughout the package.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Iterator, Mapping, Sequence

import numpy as np

Site = tuple[int, ...]


class LatticeError(ValueError):
    pass


# ---------------------------------------------------------------------------
# distances


def linf_distance(x: Sequence[int], y: Sequence[int]) -> int:
    return max(abs(a - b) for a, b in zip(x, y))


def l1_distance(x: Sequence[int], y: Sequence[int]) -> int:
    return sum(abs(a - b) for a, b in zip(x, y))


def euclidean_distance(x: Sequence[float], y: Sequence[float]) -> float:
    return math.sqrt(sum((a - b) ** 2 for a, b in zip(x, y)))


def unit(d: int, i: int) -> Site:
    e = [0] * d
    e[i] = 1
    return tuple(e)


def add(x: Sequence[int], y: Sequence[int]) -> Site:
    return tuple(a + b for a, b in zip(x, y))


# ---------------------------------------------------------------------------
# boxes and grids


@dataclass(frozen=True, order=True)
class BoxSpec:
    """Closed sup-norm ball {y : |y - center|_inf <= half_diameter}."""

    center: Site
    half_diameter: Fraction

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", tuple(int(c) for c in self.center))
        object.__setattr__(self, "half_diameter", Fraction(self.half_diameter))
        if self.half_diameter < 0:
            raise LatticeError("negative half diameter")

    @property
    def dim(self) -> int:
        return len(self.center)

    @property
    def radius(self) -> int:
        return math.floor(self.half_diameter)

    @property
    def lo(self) -> Site:
        return tuple(c - self.radius for c in self.center)

    @property
    def hi(self) -> Site:
        return tuple(c + self.radius for c in self.center)

    @property
    def side(self) -> int:
        return 2 * self.radius + 1

    def __len__(self) -> int:
        return self.side ** self.dim

    def contains(self, site: Sequence[int]) -> bool:
        return linf_distance(site, self.center) <= self.radius

    def sites(self) -> Iterator[Site]:
        ranges = [range(a, b + 1) for a, b in zip(self.lo, self.hi)]
        return itertools.product(*ranges)

    def contains_box(self, other: "BoxSpec") -> bool:
        return all(a <= c and d <= b for a, b, c, d in zip(self.lo, self.hi, other.lo, other.hi))

    def intersects(self, other: "BoxSpec") -> bool:
        return box_gap(self, other) <= 0

    def expanded(self, r: int) -> "BoxSpec":
        return BoxSpec(self.center, self.half_diameter + r)


def box_gap(a: BoxSpec, b: BoxSpec) -> int:
    """Largest coordinate gap between two boxes; <= 0 when they overlap."""
    return max(max(b.lo[i] - a.hi[i], a.lo[i] - b.hi[i]) for i in range(a.dim))


def box_distance_inf(a: BoxSpec, b: BoxSpec) -> int:
    """min |y - y'|_inf over y in a, y' in b."""
    return max(0, box_gap(a, b))


def boxes_connected(a: BoxSpec, b: BoxSpec) -> bool:
    """Whether the union of two boxes is nearest-neighbour connected."""
    gaps = [max(b.lo[i] - a.hi[i], a.lo[i] - b.hi[i]) for i in range(a.dim)]
    positive = [g for g in gaps if g > 0]
    return not positive or (len(positive) == 1 and positive[0] == 1)


@dataclass(frozen=True)
class Grid:
    """Boxes of side ``scale`` centred on ``step * Z^d``.

    ``overlapping=False`` is the partition of Z^d into boxes of odd side
    ``scale``.  ``overlapping=True`` uses centres on (scale/3) Z^d, so each
    site lies in 3^d boxes; ``scale`` must then be an odd multiple of 3.
    """

    dim: int
    scale: int
    overlapping: bool = False

    def __post_init__(self) -> None:
        if self.scale < 1 or self.scale % 2 == 0:
            raise LatticeError(f"grid scale must be odd, got {self.scale}")
        if self.overlapping and self.scale % 3:
            raise LatticeError("overlapping grid needs a scale divisible by 3")

    @property
    def step(self) -> int:
        return self.scale // 3 if self.overlapping else self.scale

    def box(self, index: Sequence[int]) -> BoxSpec:
        return BoxSpec(tuple(self.step * k for k in index), Fraction(self.scale, 2))

    def index_range(self, lo: Sequence[int], hi: Sequence[int]) -> list[range]:
        """Per-axis ranges of box indices whose boxes meet the box [lo, hi]."""
        r = (self.scale - 1) // 2
        out = []
        for a, b in zip(lo, hi):
            kmin = math.ceil((a - r) / self.step)
            kmax = math.floor((b + r) / self.step)
            out.append(range(kmin, kmax + 1))
        return out

    def boxes_meeting(self, lo: Sequence[int], hi: Sequence[int]) -> list[BoxSpec]:
        """Boxes meeting [lo, hi], in lexicographic order of centres."""
        return [self.box(k) for k in itertools.product(*self.index_range(lo, hi))]

    def boxes_containing(self, box: BoxSpec) -> list[BoxSpec]:
        r = (self.scale - 1) // 2
        ranges = []
        for a, b in zip(box.lo, box.hi):
            kmin = math.ceil((b - r) / self.step)
            kmax = math.floor((a + r) / self.step)
            ranges.append(range(kmin, kmax + 1))
        return [self.box(k) for k in itertools.product(*ranges)]

    def box_of(self, site: Sequence[int]) -> BoxSpec:
        if self.overlapping:
            raise LatticeError("a site lies in several overlapping-grid boxes")
        return self.box(tuple(math.floor((c + (self.scale - 1) // 2) / self.scale) for c in site))


def cube(center: Sequence[int], r: int) -> BoxSpec:
    """Q_r(center) with integer half diameter r."""
    return BoxSpec(tuple(center), Fraction(r))


# ---------------------------------------------------------------------------
# polymers


@dataclass(frozen=True)
class Polymer:
    """A finite union of boxes of one grid."""

    grid: Grid
    boxes: frozenset[BoxSpec] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        object.__setattr__(self, "boxes", frozenset(self.boxes))
        side = self.grid.scale
        for b in self.boxes:
            if b.side != side or b.dim != self.grid.dim:
                raise LatticeError("box does not belong to the polymer grid")

    def __len__(self) -> int:
        return len(self.boxes)

    def __iter__(self) -> Iterator[BoxSpec]:
        return iter(sorted(self.boxes))

    def sites(self) -> set[Site]:
        out: set[Site] = set()
        for b in self.boxes:
            out.update(b.sites())
        return out

    def contains(self, site: Sequence[int]) -> bool:
        return any(b.contains(site) for b in self.boxes)

    def linf_distance_to(self, site: Sequence[int]) -> int:
        return min(max(0, linf_distance(site, b.center) - b.radius) for b in self.boxes)

    def bounds(self) -> tuple[Site, Site]:
        lo = tuple(min(b.lo[i] for b in self.boxes) for i in range(self.grid.dim))
        hi = tuple(max(b.hi[i] for b in self.boxes) for i in range(self.grid.dim))
        return lo, hi

    def union(self, other: "Polymer") -> "Polymer":
        return Polymer(self.grid, self.boxes | other.boxes)


def components(p: Polymer) -> list[Polymer]:
    """Connected components, ordered by their smallest box."""
    boxes = sorted(p.boxes)
    parent = list(range(len(boxes)))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in itertools.combinations(range(len(boxes)), 2):
        if boxes_connected(boxes[i], boxes[j]):
            parent[find(i)] = find(j)
    groups: dict[int, list[BoxSpec]] = {}
    for i, b in enumerate(boxes):
        groups.setdefault(find(i), []).append(b)
    comps = [Polymer(p.grid, frozenset(g)) for g in groups.values()]
    return sorted(comps, key=lambda c: min(c.boxes))


def is_connected(p: Polymer) -> bool:
    return len(components(p)) <= 1


def expand(p: Polymer, r: int) -> Polymer:
    """Grid boxes meeting the Minkowski sum p + Q_r(0).

    When r is a multiple of the grid scale on the partition grid the result
    equals the Minkowski sum exactly.
    """
    out: set[BoxSpec] = set()
    for b in p.boxes:
        big = b.expanded(r)
        for c in p.grid.boxes_meeting(big.lo, big.hi):
            out.add(c)
    return Polymer(p.grid, frozenset(out))


def touch(p: Polymer, q: Polymer) -> bool:
    """Disjoint polymers whose union is connected."""
    if any(a.intersects(b) for a in p.boxes for b in q.boxes):
        return False
    return is_connected(p.union(q))


# ---------------------------------------------------------------------------
# fields


@dataclass
class LatticeField:
    """Real field on the box [origin, origin + shape - 1]; zero elsewhere."""

    origin: Site
    values: np.ndarray

    def __post_init__(self) -> None:
        self.origin = tuple(int(o) for o in self.origin)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != len(self.origin):
            raise LatticeError("origin and value array disagree on dimension")

    @classmethod
    def zeros(cls, lo: Sequence[int], hi: Sequence[int]) -> "LatticeField":
        shape = tuple(b - a + 1 for a, b in zip(lo, hi))
        return cls(tuple(lo), np.zeros(shape))

    @classmethod
    def from_mapping(cls, values: Mapping[Site, float]) -> "LatticeField":
        if not values:
            raise LatticeError("empty mapping; give a box explicitly")
        sites = np.array(list(values))
        lo, hi = sites.min(axis=0), sites.max(axis=0)
        f = cls.zeros(lo, hi)
        for s, v in values.items():
            f.values[f.index(s)] = v
        return f

    @classmethod
    def from_function(cls, lo: Sequence[int], hi: Sequence[int], fn: Callable[[np.ndarray], np.ndarray]) -> "LatticeField":
        """Evaluate ``fn`` on the stacked coordinate arrays of the box."""
        f = cls.zeros(lo, hi)
        f.values = np.asarray(fn(f.coordinates()), dtype=float).reshape(f.shape)
        return f

    @property
    def dim(self) -> int:
        return len(self.origin)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def hi(self) -> Site:
        return tuple(o + n - 1 for o, n in zip(self.origin, self.shape))

    def index(self, site: Sequence[int]) -> tuple[int, ...]:
        return tuple(s - o for s, o in zip(site, self.origin))

    def inside(self, site: Sequence[int]) -> bool:
        return all(0 <= s - o < n for s, o, n in zip(site, self.origin, self.shape))

    def __getitem__(self, site: Sequence[int]) -> float:
        if not self.inside(site):
            return 0.0
        return float(self.values[self.index(site)])

    def __setitem__(self, site: Sequence[int], value: float) -> None:
        if not self.inside(site):
            raise LatticeError(f"site {tuple(site)} outside the stored box")
        self.values[self.index(site)] = value

    def coordinates(self) -> np.ndarray:
        """Array of shape (d, *shape) holding the site coordinates."""
        grids = np.meshgrid(*[np.arange(o, o + n) for o, n in zip(self.origin, self.shape)], indexing="ij")
        return np.stack(grids)

    def sites(self) -> Iterator[Site]:
        return itertools.product(*[range(o, o + n) for o, n in zip(self.origin, self.shape)])

    def padded(self, k: int) -> "LatticeField":
        return LatticeField(tuple(o - k for o in self.origin), np.pad(self.values, k))

    def restricted(self, lo: Sequence[int], hi: Sequence[int]) -> "LatticeField":
        """Values on [lo, hi] (zero where not stored)."""
        out = LatticeField.zeros(lo, hi)
        src = [slice(max(a, o) - o, min(b, o + n - 1) - o + 1) for a, b, o, n in zip(lo, hi, self.origin, self.shape)]
        dst = [slice(max(a, o) - a, min(b, o + n - 1) - a + 1) for a, b, o, n in zip(lo, hi, self.origin, self.shape)]
        if all(s.stop > s.start for s in src):
            out.values[tuple(dst)] = self.values[tuple(src)]
        return out

    def copy(self) -> "LatticeField":
        return LatticeField(self.origin, self.values.copy())


def shift(a: np.ndarray, axis: int, s: int) -> np.ndarray:
    """b[x] = a[x + s e_axis] with zero fill (the translation tau_s)."""
    out = np.zeros_like(a)
    n = a.shape[axis]
    if abs(s) >= n:
        return out
    src = [slice(None)] * a.ndim
    dst = [slice(None)] * a.ndim
    if s >= 0:
        src[axis] = slice(s, n)
        dst[axis] = slice(0, n - s)
    else:
        src[axis] = slice(0, n + s)
        dst[axis] = slice(-s, n)
    out[tuple(dst)] = a[tuple(src)]
    return out


def diff(a: np.ndarray, i: int, sign: int = 1) -> np.ndarray:
    """D_i (sign=+1) or D_{-i} (sign=-1) on an array that is zero near its edges."""
    if sign > 0:
        return shift(a, i, 1) - a
    return a - shift(a, i, -1)


def laplacian_array(a: np.ndarray) -> np.ndarray:
    out = -2.0 * a.ndim * a
    for i in range(a.ndim):
        out += shift(a, i, 1) + shift(a, i, -1)
    return out


def hessian_array(a: np.ndarray) -> np.ndarray:
    """Array H[i, j] = D_i D_{-j} a, shape (d, d, *a.shape)."""
    d = a.ndim
    back = [diff(a, j, -1) for j in range(d)]
    return np.stack([np.stack([diff(back[j], i, 1) for j in range(d)]) for i in range(d)])


def forward_diff(u: LatticeField, i: int, x: Sequence[int]) -> float:
    """D_i u(x) for i in 0..d-1; pass ``-(i+1)`` for the backward D_{-i}."""
    d = u.dim
    if i >= 0:
        if i >= d:
            raise LatticeError("direction out of range")
        return u[add(x, unit(d, i))] - u[x]
    j = -i - 1
    if j >= d:
        raise LatticeError("direction out of range")
    return u[x] - u[tuple(c - e for c, e in zip(x, unit(d, j)))]


def laplacian_stencil(d: int) -> dict[Site, float]:
    st: dict[Site, float] = {tuple([0] * d): -2.0 * d}
    for i in range(d):
        e = unit(d, i)
        st[e] = 1.0
        st[tuple(-c for c in e)] = 1.0
    return st


def compose_stencils(a: Mapping[Site, float], b: Mapping[Site, float]) -> dict[Site, float]:
    out: dict[Site, float] = {}
    for ka, va in a.items():
        for kb, vb in b.items():
            k = add(ka, kb)
            out[k] = out.get(k, 0.0) + va * vb
    return {k: v for k, v in out.items() if v != 0.0}


def bilaplacian_stencil(d: int) -> dict[Site, float]:
    """Stencil of the square of the nearest-neighbour Laplacian."""
    lap = laplacian_stencil(d)
    return compose_stencils(lap, lap)


def bilaplacian_apply(u: LatticeField, x: Sequence[int]) -> float:
    return sum(c * u[add(x, k)] for k, c in bilaplacian_stencil(u.dim).items())


def bilaplacian(u: LatticeField) -> LatticeField:
    """Delta^2 u as a field on the stored box padded by 2 (its full support)."""
    p = u.padded(2)
    return LatticeField(p.origin, laplacian_array(laplacian_array(p.values)))


def hessian(u: LatticeField) -> tuple[Site, np.ndarray]:
    """(origin, H) with H[i, j] = D_i D_{-j} u on the box padded by 1."""
    p = u.padded(1)
    return p.origin, hessian_array(p.values)


def hessian_norm_sq(u: LatticeField, region: Callable[[np.ndarray], np.ndarray] | None = None) -> float:
    """sum over x (in region) of sum_ij |D_i D_{-j} u(x)|^2.

    ``region`` maps the coordinate array (d, *shape) to a boolean mask; omit it
    for the global sum.
    """
    origin, h = hessian(u)
    dens = (h ** 2).sum(axis=(0, 1))
    if region is None:
        return float(dens.sum())
    coords = LatticeField(origin, dens).coordinates()
    return float(dens[region(coords)].sum())


def gradient_norm_sq(u: LatticeField, region: Callable[[np.ndarray], np.ndarray] | None = None) -> float:
    """sum over x (in region) of sum_i |D_i u(x)|^2."""
    p = u.padded(1)
    dens = sum(diff(p.values, i, 1) ** 2 for i in range(u.dim))
    if region is None:
        return float(dens.sum())
    return float(dens[region(p.coordinates())].sum())


def box_mask(lo: Sequence[int], hi: Sequence[int]) -> Callable[[np.ndarray], np.ndarray]:
    lo_a = np.array(lo).reshape((-1,) + (1,) * len(lo))
    hi_a = np.array(hi).reshape((-1,) + (1,) * len(hi))
    return lambda c: np.all((c >= lo_a) & (c <= hi_a), axis=0)


# ---------------------------------------------------------------------------
# length scales


def _smallest_odd_at_least(x: float) -> int:
    n = math.ceil(x - 1e-9)
    return n if n % 2 else n + 1


@dataclass(frozen=True)
class Scales:
    """Microscopic and macroscopic length scales.

    ``lambda_mac`` is an odd multiple of ``lambda_mic``.  ``alpha_mic`` and
    ``alpha_mac`` are the rounding offsets from the unrounded bases;
    ``extrapolated`` marks d <= 3, where the d = 4 formulas are reused.
    """

    dim: int
    epsilon: float | None
    lambda_mic: int
    lambda_mac: int
    alpha_mic: float = 0.0
    alpha_mac: float = 0.0
    extrapolated: bool = False

    def __post_init__(self) -> None:
        if self.lambda_mic < 1 or self.lambda_mic % 2 == 0:
            raise LatticeError("lambda_mic must be a positive odd integer")
        q, rem = divmod(self.lambda_mac, self.lambda_mic)
        if rem or q % 2 == 0:
            raise LatticeError("lambda_mac must be an odd multiple of lambda_mic")

    @classmethod
    def explicit(cls, dim: int, lambda_mic: int, lambda_mac: int) -> "Scales":
        """Scales set by hand, for reduced-size experiments."""
        return cls(dim, None, lambda_mic, lambda_mac)

    @property
    def ratio(self) -> int:
        return self.lambda_mac // self.lambda_mic


def scale_bases(d: int, epsilon: float) -> tuple[float, float]:
    """Unrounded (micro, macro) bases."""
    if not 0.0 < epsilon < 1.0:
        raise LatticeError("epsilon must lie in (0, 1)")
    if d < 1:
        raise LatticeError("dimension must be positive")
    if d >= 5:
        return epsilon ** (-1.0 / d), epsilon ** -0.25
    ell = abs(math.log(epsilon))
    return ell ** 0.125 * epsilon ** -0.25, ell ** 0.375 * epsilon ** -0.25


def scales_from_epsilon(d: int, epsilon: float) -> Scales:
    base_mic, base_mac = scale_bases(d, epsilon)
    mic = _smallest_odd_at_least(base_mic)
    q = max(1, math.ceil(base_mac / mic - 1e-9))
    if q % 2 == 0:
        q += 1
    mac = q * mic
    return Scales(d, epsilon, mic, mac, mic - base_mic, mac - base_mac, extrapolated=d <= 3)


def sites_array(sites: Iterable[Sequence[int]]) -> np.ndarray:
    return np.array(sorted(tuple(s) for s in sites), dtype=np.int64)
