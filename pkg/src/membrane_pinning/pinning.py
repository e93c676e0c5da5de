"""Distribution of the set of pinned sites.

Subsets of an ordered site list are bitmasks: bit k stands for ``sites[k]``
and enumeration follows the binary counter.  The weight of a pinned set A is
epsilon^|A| times the Gaussian partition function of the remaining free
sites.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from math import comb
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import logsumexp

from .lattice import Site
from .solver import LOG_2PI, GreenSolver, SolverError

MAX_EXACT_SITES = 20
DRIFT_TOL = 1e-8


class PinningError(ValueError):
    pass


def _normalise_sites(sites: Iterable[Sequence[int]]) -> list[Site]:
    out = sorted({tuple(int(c) for c in s) for s in sites})
    if not out:
        raise PinningError("empty site list")
    return out


def popcounts(n: int) -> np.ndarray:
    masks = np.arange(1 << n, dtype=np.int64)
    counts = np.zeros(1 << n, dtype=np.int64)
    for k in range(n):
        counts += (masks >> k) & 1
    return counts


@dataclass
class PinnedSetDistribution:
    """Pinned-set law on ``sites``.

    Exact mode stores unnormalised log-weights for every bitmask; MC mode
    stores a list of sampled bitmasks.
    """

    sites: list[Site]
    epsilon: float
    log_weights: np.ndarray | None = None
    samples: np.ndarray | None = None
    drift: float = 0.0
    reassembled: bool = False
    _probs: np.ndarray | None = field(default=None, repr=False)

    @property
    def exact(self) -> bool:
        return self.log_weights is not None

    @property
    def n(self) -> int:
        return len(self.sites)

    @property
    def log_normaliser(self) -> float:
        self._require_exact()
        return float(logsumexp(self.log_weights))

    @property
    def probabilities(self) -> np.ndarray:
        self._require_exact()
        if self._probs is None:
            self._probs = np.exp(self.log_weights - self.log_normaliser)
        return self._probs

    @property
    def log_probabilities(self) -> np.ndarray:
        self._require_exact()
        return self.log_weights - self.log_normaliser

    def _require_exact(self) -> None:
        if self.log_weights is None:
            raise PinningError("operation needs exact mode")

    def mask_of(self, subset: Iterable[Sequence[int]]) -> int:
        pos = {s: k for k, s in enumerate(self.sites)}
        m = 0
        for s in subset:
            s = tuple(int(c) for c in s)
            if s not in pos:
                raise PinningError(f"site {s} not in the domain")
            m |= 1 << pos[s]
        return m

    def subset_of(self, mask: int) -> list[Site]:
        return [s for k, s in enumerate(self.sites) if mask >> k & 1]

    def prob(self, subset: Iterable[Sequence[int]] | int) -> float:
        m = subset if isinstance(subset, (int, np.integer)) else self.mask_of(subset)
        if self.exact:
            return float(self.probabilities[m])
        return float(np.mean(self.samples == m))

    def expectation(self, values: np.ndarray) -> float:
        """Mean of a function given as an array indexed by bitmask."""
        if self.exact:
            return float(np.dot(self.probabilities, values))
        return float(np.mean(values[self.samples]))

    def conditional_pin(self) -> np.ndarray:
        """Array c[k, E] = P(site k pinned | pinned set off site k equals E).

        Entries with bit k set in E are NaN.
        """
        self._require_exact()
        n = self.n
        masks = np.arange(1 << n, dtype=np.int64)
        lw = self.log_weights
        out = np.full((n, 1 << n), np.nan)
        for k in range(n):
            free = masks[(masks >> k & 1) == 0]
            diff = lw[free] - lw[free | (1 << k)]
            out[k, free] = 1.0 / (1.0 + np.exp(diff))
        return out

    # -- serialisation ------------------------------------------------------

    def to_text(self) -> str:
        self._require_exact()
        lines = [
            f"# sites {' '.join(','.join(map(str, s)) for s in self.sites)}",
            f"# epsilon {self.epsilon!r}",
            "# mask size log_weight probability",
        ]
        counts = popcounts(self.n)
        width = max(1, (self.n + 3) // 4)
        for m in range(1 << self.n):
            lines.append(f"0x{m:0{width}x} {counts[m]} {self.log_weights[m]:.17g} {self.probabilities[m]:.17g}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "PinnedSetDistribution":
        sites: list[Site] = []
        eps = float("nan")
        rows: list[tuple[int, float]] = []
        for line in text.splitlines():
            if line.startswith("# sites"):
                sites = [tuple(int(c) for c in tok.split(",")) for tok in line.split()[2:]]
            elif line.startswith("# epsilon"):
                eps = float(line.split()[2])
            elif line and not line.startswith("#"):
                mask, _, lw, _ = line.split()
                rows.append((int(mask, 16), float(lw)))
        lw_arr = np.empty(len(rows))
        for m, v in rows:
            lw_arr[m] = v
        if len(rows) != 1 << len(sites):
            raise PinningError("table does not cover every subset")
        return cls(sites, eps, log_weights=lw_arr)


def _leaf_log_partition(sites: list[Site], mask: int) -> float:
    free = [s for k, s in enumerate(sites) if not mask >> k & 1]
    if not free:
        return 0.0
    return GreenSolver(free, method="dense").log_partition()


def zeta_exact(sites: Iterable[Sequence[int]], epsilon: float) -> PinnedSetDistribution:
    """Every subset weight by depth-first pin/unpin with Schur updates."""
    sites = _normalise_sites(sites)
    n = len(sites)
    if n > MAX_EXACT_SITES:
        raise PinningError(f"{n} sites exceed the exact enumeration limit of {MAX_EXACT_SITES}")
    if not epsilon > 0:
        raise PinningError("epsilon must be positive")
    root = GreenSolver(sites, method="dense")
    log_z = np.empty(1 << n)

    def walk(k: int, g: np.ndarray, lz: float, mask: int) -> None:
        # g is the covariance restricted to the undecided sites k..n-1
        if k == n:
            log_z[mask] = lz
            return
        walk(k + 1, g[1:, 1:], lz, mask)
        gkk = g[0, 0]
        if not gkk > 0.0:
            raise SolverError("non-positive pivot during enumeration")
        col = g[1:, 0]
        walk(k + 1, g[1:, 1:] - np.outer(col, col) / gkk, lz - 0.5 * (LOG_2PI + math.log(gkk)), mask | (1 << k))

    walk(0, root.green_matrix(), root.log_partition(), 0)

    # spot-check the updated values against independent assembly
    probe = sorted(set(range(0, 1 << n, max(1, (1 << n) // 15))) | {(1 << n) - 1})
    drift = max(abs(log_z[m] - _leaf_log_partition(sites, m)) / max(1.0, abs(log_z[m])) for m in probe)
    reassembled = False
    if drift > DRIFT_TOL:
        for m in range(1 << n):
            log_z[m] = _leaf_log_partition(sites, m)
        reassembled = True
    lw = popcounts(n) * math.log(epsilon) + log_z
    return PinnedSetDistribution(sites, float(epsilon), log_weights=lw, drift=float(drift), reassembled=reassembled)


def bernoulli_distribution(sites: Iterable[Sequence[int]], p: float) -> PinnedSetDistribution:
    """Independent pinning with probability p at every site (exact mode)."""
    sites = _normalise_sites(sites)
    if not 0.0 <= p <= 1.0:
        raise PinningError("p must lie in [0, 1]")
    counts = popcounts(len(sites))
    with np.errstate(divide="ignore"):
        lw = counts * np.log(p) + (len(sites) - counts) * np.log1p(-p)
    return PinnedSetDistribution(sites, float("nan"), log_weights=lw)


def conditional_pin_probability(free_sites: Iterable[Sequence[int]] | GreenSolver, x: Sequence[int], epsilon: float) -> float:
    """P(x pinned | pinned set off x is E), given the free set Lambda minus E.

    ``free_sites`` must contain x.
    """
    solver = free_sites if isinstance(free_sites, GreenSolver) else GreenSolver(free_sites)
    if solver.position(x) is None:
        raise PinningError(f"site {tuple(x)} is pinned or outside the domain")
    g = solver.variance(x)
    return 1.0 / (1.0 + math.sqrt(2.0 * math.pi * g) / epsilon)


@dataclass
class FKGReport:
    count: int
    pairs: int
    worst_log_margin: float
    violations: list[tuple[int, int]]

    def summary(self) -> str:
        return f"{self.count} violations / {self.pairs} pairs"


def fkg_lattice_check(dist: PinnedSetDistribution, slack: float = 1e-9, max_report: int = 1000) -> FKGReport:
    """Ordered pairs (A, A') with mu(A u A') mu(A n A') < mu(A) mu(A') (1 - slack).

    At most ``max_report`` violating pairs are listed; ``count`` is the total.
    """
    if not dist.exact:
        raise PinningError("FKG check needs exact weights")
    lp = dist.log_probabilities
    size = 1 << dist.n
    tol = math.log1p(-slack)
    masks = np.arange(size, dtype=np.int64)
    violations: list[tuple[int, int]] = []
    count, worst = 0, math.inf
    for a in range(size):
        with np.errstate(invalid="ignore"):
            margin = lp[a | masks] + lp[a & masks] - lp[a] - lp[masks]
        # -inf - -inf terms come from zero-weight sets and carry no constraint
        margin = np.where(np.isnan(margin), 0.0, margin)
        worst = min(worst, float(margin.min()))
        bad = np.nonzero(margin < tol)[0]
        count += len(bad)
        room = max_report - len(violations)
        violations.extend((a, int(b)) for b in bad[:room])
    return FKGReport(count, size * size, worst, violations)


@dataclass
class DominationReport:
    direction: str
    p: float | None
    violations: list[tuple[Site, tuple[Site, ...], float, float]]
    checked: int
    min_conditional: float
    max_conditional: float
    sampled: bool = False

    @property
    def holds(self) -> bool:
        return not self.violations

    def fitted_constants(self, epsilon: float) -> tuple[float, float]:
        """(c, C) with c eps <= conditional <= C eps over the tested family."""
        return self.min_conditional / epsilon, self.max_conditional / epsilon


def strong_domination_check(
    dist: PinnedSetDistribution,
    other: float | PinnedSetDistribution,
    direction: str = "dominates",
    samples: int = 10_000,
    seed: int = 0,
    exhaustive_limit: int = 14,
) -> DominationReport:
    """Compare conditional pinning probabilities of ``dist`` with ``other``.

    ``other`` is either a constant p (a Bernoulli law) or another exact law on
    the same sites.  ``direction="dominates"`` asks whether every conditional
    of ``dist`` is at least the matching one of ``other``.
    """
    if direction not in ("dominates", "dominated"):
        raise PinningError("direction must be 'dominates' or 'dominated'")
    sign = 1.0 if direction == "dominates" else -1.0
    p = other if isinstance(other, (float, int)) else None
    ref = None if p is not None else other.conditional_pin()
    violations = []
    lo, hi, checked = math.inf, -math.inf, 0

    if dist.exact and dist.n <= exhaustive_limit:
        cond = dist.conditional_pin()
        for k in range(dist.n):
            row = cond[k]
            ok = ~np.isnan(row)
            vals = row[ok]
            masks = np.nonzero(ok)[0]
            base = np.full_like(vals, p) if p is not None else ref[k][ok]
            lo, hi = min(lo, vals.min()), max(hi, vals.max())
            checked += len(vals)
            bad = np.nonzero(sign * (vals - base) < -1e-12)[0]
            for b in bad:
                violations.append((dist.sites[k], tuple(dist.subset_of(int(masks[b]))), float(vals[b]), float(base[b])))
        return DominationReport(direction, p, violations, checked, lo, hi)

    # sampled family: E drawn as A minus x with A from the law itself
    rng = np.random.default_rng(seed)
    if dist.exact:
        draws = rng.choice(1 << dist.n, size=samples, p=dist.probabilities)
    else:
        draws = rng.choice(dist.samples, size=samples)
    xs = rng.integers(0, dist.n, size=samples)
    cache: dict[tuple[int, int], float] = {}
    for a, k in zip(draws, xs):
        e = int(a) & ~(1 << int(k))
        key = (e, int(k))
        if key not in cache:
            free = [s for j, s in enumerate(dist.sites) if not e >> j & 1]
            cache[key] = conditional_pin_probability(free, dist.sites[k], dist.epsilon)
        val = cache[key]
        base = p if p is not None else float(ref[k][e])
        lo, hi = min(lo, val), max(hi, val)
        checked += 1
        if sign * (val - base) < -1e-12:
            violations.append((dist.sites[k], tuple(dist.subset_of(e)), val, base))
    return DominationReport(direction, p, violations, checked, lo, hi, sampled=True)


def empty_probability(dist: PinnedSetDistribution, subset: Iterable[Sequence[int]]) -> tuple[float, float]:
    """(P(no site of E pinned), standard error); the error is 0 in exact mode."""
    m = dist.mask_of(subset)
    if dist.exact:
        masks = np.arange(1 << dist.n, dtype=np.int64)
        return float(dist.probabilities[(masks & m) == 0].sum()), 0.0
    hit = (dist.samples & m) == 0
    return float(hit.mean()), float(hit.std(ddof=1) / math.sqrt(len(hit))) if len(hit) > 1 else math.nan


def pinned_density(dist: PinnedSetDistribution) -> tuple[float, float]:
    """(mean pinned fraction, standard error)."""
    counts = popcounts(dist.n)
    if dist.exact:
        return float(np.dot(dist.probabilities, counts) / dist.n), 0.0
    frac = counts[dist.samples] / dist.n
    se = float(frac.std(ddof=1) / math.sqrt(len(frac))) if len(frac) > 1 else math.nan
    return float(frac.mean()), se


def is_increasing(values: np.ndarray, n: int, tol: float = 0.0) -> bool:
    masks = np.arange(1 << n, dtype=np.int64)
    for k in range(n):
        free = masks[(masks >> k & 1) == 0]
        if np.any(values[free | (1 << k)] < values[free] - tol):
            return False
    return True


def restrict_masks(large: Sequence[Site], small: Sequence[Site]) -> np.ndarray:
    """For each bitmask over ``large`` the bitmask of its trace on ``small``."""
    pos = {s: k for k, s in enumerate(large)}
    masks = np.arange(1 << len(large), dtype=np.int64)
    out = np.zeros_like(masks)
    for j, s in enumerate(small):
        if s not in pos:
            raise PinningError("smaller volume is not contained in the larger one")
        out |= ((masks >> pos[s]) & 1) << j
    return out


@dataclass
class VolumeMonotonicity:
    small: float
    large: float
    holds: bool


def volume_monotonicity_check(
    small_sites: Iterable[Sequence[int]],
    large_sites: Iterable[Sequence[int]],
    f: Callable[[frozenset[Site]], float] | np.ndarray,
    epsilon: float,
    slack: float = 1e-9,
) -> VolumeMonotonicity:
    """Check E_small[f] >= E_large[f(A n small)] - slack for increasing f."""
    small = zeta_exact(small_sites, epsilon)
    large = zeta_exact(large_sites, epsilon)
    if callable(f):
        values = np.array([f(frozenset(small.subset_of(m))) for m in range(1 << small.n)], dtype=float)
    else:
        values = np.asarray(f, dtype=float)
    if not is_increasing(values, small.n):
        raise PinningError("set function is not increasing")
    trace = restrict_masks(large.sites, small.sites)
    e_small = small.expectation(values)
    e_large = float(np.dot(large.probabilities, values[trace]))
    return VolumeMonotonicity(e_small, e_large, e_small >= e_large - slack)


# ---------------------------------------------------------------------------
# binomial tail


@dataclass
class TailBound:
    lhs: Fraction
    rhs_float: float
    ok: bool


def binomial_tail_bound_check(n: int, p: Fraction | float | str, r: Fraction | float | str) -> TailBound:
    """Exact check of sum_{j >= ceil(rN)} C(N, j) p^j <= (p / r^2)^(rN).

    Floats are read through their decimal representation, so 0.02 means
    1/50.  With rN = a/b in lowest terms both sides are raised to the power b
    and compared as rationals.
    """
    p = Fraction(str(p)) if isinstance(p, float) else Fraction(p)
    r = Fraction(str(r)) if isinstance(r, float) else Fraction(r)
    if n < 1:
        raise PinningError("N must be positive")
    if not (0 <= p <= r <= Fraction(1, 2)) or r == 0:
        raise PinningError("need 0 <= p <= r <= 1/2 and r > 0")
    rn = r * n
    j0 = math.ceil(rn)
    lhs = sum((comb(n, j) * p ** j for j in range(j0, n + 1)), Fraction(0))
    base = p / (r * r)
    a, b = rn.numerator, rn.denominator
    ok = lhs ** b <= base ** a
    rhs_float = float(base) ** float(rn) if base else 0.0
    return TailBound(lhs, rhs_float, ok)


# ---------------------------------------------------------------------------
# square-well counterexample


def _clip(poly: list[tuple[float, float]], a: tuple[float, float], c: float) -> list[tuple[float, float]]:
    """Clip a convex polygon to the half plane a . x <= c."""
    out = []
    m = len(poly)
    for i in range(m):
        p, q = poly[i], poly[(i + 1) % m]
        fp = a[0] * p[0] + a[1] * p[1] - c
        fq = a[0] * q[0] + a[1] * q[1] - c
        if fp <= 0:
            out.append(p)
        if fp * fq < 0:
            s = fp / (fp - fq)
            out.append((p[0] + s * (q[0] - p[0]), p[1] + s * (q[1] - p[1])))
    return out


def slab_polygon(rows: Sequence[tuple[float, float]], t: float) -> list[tuple[float, float]]:
    """Polygon {x in R^2 : |row . x| <= t for every row} (assumed bounded)."""
    big = 1e3 * max(t, 1.0)
    poly = [(-big, -big), (big, -big), (big, big), (-big, big)]
    for a in rows:
        poly = _clip(poly, a, t)
        poly = _clip(poly, (-a[0], -a[1]), t)
    return poly


def polygon_area(poly: Sequence[tuple[float, float]]) -> float:
    s = 0.0
    for i in range(len(poly)):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % len(poly)]
        s += x0 * y1 - x1 * y0
    return abs(s) / 2.0


_GL_X, _GL_W = np.polynomial.legendre.leggauss(12)


def gaussian_polygon_mass(poly: Sequence[tuple[float, float]]) -> float:
    """Standard bivariate normal mass of a convex polygon (fan + Duffy map)."""
    if len(poly) < 3:
        return 0.0
    u = (_GL_X + 1) / 2
    w = _GL_W / 2
    uu, vv = np.meshgrid(u, u, indexing="ij")
    ww = np.outer(w, w)
    total = 0.0
    p0 = np.array(poly[0])
    for i in range(1, len(poly) - 1):
        p1, p2 = np.array(poly[i]), np.array(poly[i + 1])
        # collapse the unit square onto the triangle p0, p1, p2
        pts = p0[:, None, None] + uu * ((p1 - p0)[:, None, None] + vv * (p2 - p1)[:, None, None])
        jac = abs((p1[0] - p0[0]) * (p2[1] - p1[1]) - (p1[1] - p0[1]) * (p2[0] - p1[0])) * uu
        dens = np.exp(-0.5 * (pts ** 2).sum(axis=0)) / (2 * math.pi)
        total += float((ww * jac * dens).sum())
    return total


# rows of the 6 x 2 map X -> Y; coordinates 1..6 as in the classical example
def square_well_rows(n: float) -> list[tuple[float, float]]:
    return [(1.0, 0.0), (0.0, 1.0), (n, 0.0), (0.0, n), (1.0, 1.0), (1.0, -1.0)]


SQUARE_WELL_SETS = {
    "union": (0, 1, 2, 3, 4, 5),
    "intersection": (4, 5),
    "first": (0, 2, 4, 5),
    "second": (1, 3, 4, 5),
}


@dataclass
class SquareWell:
    n: float
    t: float
    areas: dict[str, float]
    scaled: dict[str, float]

    @property
    def lattice_ratio(self) -> float:
        s = self.scaled
        return s["union"] * s["intersection"] / (s["first"] * s["second"])


def square_well_limits(n: float) -> dict[str, float]:
    a = 4.0 / n - 2.0 / n ** 2
    return {"union": 4.0 / n ** 2, "intersection": 2.0, "first": a, "second": a}


def square_well_counterexample(n: float, t: float) -> SquareWell:
    """Gaussian probabilities that all coordinates in a subset lie in [-t, t].

    ``areas`` are Lebesgue areas divided by t^2; ``scaled`` are the Gaussian
    probabilities multiplied by 2 pi / t^2, which tend to ``areas`` as t -> 0.
    """
    if n < 4:
        raise PinningError("N must be at least 4")
    if t > 0.01 / n:
        warnings.warn("t is large for the small-t limit", RuntimeWarning, stacklevel=2)
    rows = square_well_rows(n)
    areas, scaled = {}, {}
    for name, idx in SQUARE_WELL_SETS.items():
        poly = slab_polygon([rows[i] for i in idx], t)
        areas[name] = polygon_area(poly) / t ** 2
        scaled[name] = gaussian_polygon_mass(poly) * 2 * math.pi / t ** 2
    return SquareWell(n, t, areas, scaled)
