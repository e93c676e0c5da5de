"""Heat-bath sampling of the pinned membrane and the estimators built on it.

Random numbers come from numpy's Philox counter generator.  The key is
derived from (seed, chain), and the update of site k in sweep s reads the
four 64-bit words of Philox block s * n + k.  Any sweep of any chain can
therefore be regenerated without replaying the ones before it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numba
import numpy as np
from scipy import stats

from .lattice import Scales, Site
from .pinning import PinnedSetDistribution, zeta_exact
from .solver import GreenSolver, assemble

SQRT2 = math.sqrt(2.0)


class SamplerError(ValueError):
    pass


@numba.njit(nogil=True, cache=True)
def _sweeps(psi, pinned, indptr, indices, data, eps, raw, n_sweeps, s_offset, watch, rec_every, rec_phase, rec_vals, rec_masks, rec_start):
    n = psi.shape[0]
    log_eps = math.log(eps) if eps > 0.0 else -np.inf
    scale = 1.0 / 9007199254740992.0
    rec = rec_start
    for s in range(n_sweeps):
        for k in range(n):
            base = 4 * (s * n + k)
            diag = 0.0
            acc = 0.0
            for p in range(indptr[k], indptr[k + 1]):
                j = indices[p]
                if j == k:
                    diag = data[p]
                else:
                    acc += data[p] * psi[j]
            var = 1.0 / diag
            m = -var * acc
            # log of sqrt(2 pi var) exp(m^2 / 2 var) / eps; pin probability 1 / (1 + e^a)
            a = 0.5 * math.log(2.0 * math.pi * var) + 0.5 * m * m / var - log_eps
            u = (raw[base] >> np.uint64(11)) * scale
            if a < 700.0 and u * (1.0 + math.exp(a)) < 1.0:
                psi[k] = 0.0
                pinned[k] = True
            else:
                u1 = (raw[base + 1] >> np.uint64(11)) * scale
                u2 = (raw[base + 2] >> np.uint64(11)) * scale
                z = math.sqrt(-2.0 * math.log(1.0 - u1)) * math.cos(2.0 * math.pi * u2)
                psi[k] = m + math.sqrt(var) * z
                pinned[k] = False
        t = s + s_offset
        if rec_every > 0 and t >= rec_phase and (t - rec_phase) % rec_every == 0:
            for w in range(watch.shape[0]):
                rec_vals[rec, w] = psi[watch[w]]
            if n <= 62:
                mask = 0
                for k in range(n):
                    if pinned[k]:
                        mask |= 1 << k
                rec_masks[rec] = mask
            rec += 1
    return rec


def philox_key(seed: int, chain: int) -> np.ndarray:
    return np.random.SeedSequence([int(seed), int(chain)]).generate_state(2, dtype=np.uint64)


def random_words(seed: int, chain: int, n_sites: int, first_sweep: int, n_sweeps: int) -> np.ndarray:
    """Raw 64-bit words for sweeps [first_sweep, first_sweep + n_sweeps)."""
    bg = np.random.Philox(key=philox_key(seed, chain))
    bg.advance(first_sweep * n_sites)
    return bg.random_raw(4 * n_sites * n_sweeps)


@dataclass
class ChainState:
    """Field and pinned flags on the ordered site list of the domain."""

    sites: np.ndarray
    field: np.ndarray
    pinned: np.ndarray
    seed: int
    chain: int = 0
    sweep_count: int = 0

    @classmethod
    def start(cls, sites: Sequence[Sequence[int]] | np.ndarray, seed: int, chain: int = 0) -> "ChainState":
        arr, _ = assemble(sites)
        n = arr.shape[0]
        return cls(arr, np.zeros(n), np.zeros(n, dtype=np.bool_), int(seed), int(chain))

    def pinned_sites(self) -> list[Site]:
        return [tuple(int(c) for c in s) for s in self.sites[self.pinned]]

    def position(self, site: Sequence[int]) -> int:
        hit = np.nonzero((self.sites == np.asarray(site)).all(axis=1))[0]
        if not len(hit):
            raise SamplerError(f"site {tuple(site)} not in the domain")
        return int(hit[0])


class HeatBath:
    """Single-site heat-bath chain for the pinned membrane on a finite domain."""

    def __init__(self, sites: Sequence[Sequence[int]] | np.ndarray, epsilon: float, seed: int = 0, chain: int = 0):
        if epsilon < 0:
            raise SamplerError("epsilon must be non-negative")
        self.state = ChainState.start(sites, seed, chain)
        _, mat = assemble(self.state.sites)
        mat = mat.tocsr()
        mat.sort_indices()
        self.indptr = mat.indptr.astype(np.int64)
        self.indices = mat.indices.astype(np.int64)
        self.data = mat.data.astype(np.float64)
        self.epsilon = float(epsilon)

    @property
    def n(self) -> int:
        return self.state.sites.shape[0]

    def run(self, n_sweeps: int, watch: Sequence[int] = (), record_every: int = 0, record_phase: int = 0, chunk: int | None = None):
        """Advance n_sweeps sweeps.

        When ``record_every`` is positive, sweep s of this call (0-based) is
        recorded when s >= record_phase and (s - record_phase) is a multiple
        of record_every.  Returns (values at watched positions, bitmasks).
        """
        watch_arr = np.asarray(watch, dtype=np.int64)
        n_rec = 0
        if record_every > 0 and n_sweeps > record_phase:
            n_rec = (n_sweeps - 1 - record_phase) // record_every + 1
        vals = np.empty((n_rec, len(watch_arr)))
        masks = np.zeros(n_rec, dtype=np.int64)
        if chunk is None:
            chunk = max(1, min(n_sweeps, 2_000_000 // max(1, self.n)))
        st = self.state
        done, rec = 0, 0
        while done < n_sweeps:
            m = min(chunk, n_sweeps - done)
            raw = random_words(st.seed, st.chain, self.n, st.sweep_count, m)
            rec = _sweeps(st.field, st.pinned, self.indptr, self.indices, self.data, self.epsilon, raw, m, done,
                          watch_arr, max(record_every, 0), record_phase, vals, masks, rec)
            st.sweep_count += m
            done += m
        return vals, masks


def heat_bath_sweep(chain: HeatBath) -> ChainState:
    """One lexicographic sweep; returns the updated state."""
    chain.run(1)
    return chain.state


# ---------------------------------------------------------------------------
# exact sampling


def sample_exact(sites: Sequence[Sequence[int]], epsilon: float, rng: np.random.Generator, size: int = 1,
                 dist: PinnedSetDistribution | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Draw (pinned bitmask, field) pairs: A from the exact law, then psi ~ N(0, G)."""
    dist = dist or zeta_exact(sites, epsilon)
    masks = rng.choice(1 << dist.n, size=size, p=dist.probabilities)
    fields = np.zeros((size, dist.n))
    factors: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    for i, m in enumerate(masks):
        m = int(m)
        if m not in factors:
            free = np.array([k for k in range(dist.n) if not m >> k & 1], dtype=np.int64)
            if len(free):
                g = GreenSolver([dist.sites[k] for k in free], method="dense").green_matrix()
                factors[m] = (free, np.linalg.cholesky(g))
            else:
                factors[m] = (free, np.zeros((0, 0)))
        free, chol = factors[m]
        if len(free):
            fields[i, free] = chol @ rng.standard_normal(len(free))
    return masks, fields


# ---------------------------------------------------------------------------
# statistics


def batch_means(series: np.ndarray, batches: int = 20) -> tuple[float, float]:
    series = np.asarray(series, dtype=float)
    if batches < 10:
        raise SamplerError("batch means need at least 10 batches")
    if len(series) < batches:
        raise SamplerError(f"{len(series)} samples cannot fill {batches} batches")
    size = len(series) // batches
    means = series[: size * batches].reshape(batches, size).mean(axis=1)
    return float(series.mean()), float(means.std(ddof=1) / math.sqrt(batches))


def integrated_autocorrelation_time(series: np.ndarray, c: float = 5.0) -> float:
    """Sokal's self-consistent window estimate, in units of recorded samples."""
    x = np.asarray(series, dtype=float)
    n = len(x)
    if n < 4:
        return float("nan")
    x = x - x.mean()
    var = np.dot(x, x) / n
    if var == 0.0:
        return 1.0
    f = np.fft.rfft(x, 2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n] / (n * var)
    tau = 1.0
    for w in range(1, n):
        tau += 2.0 * acf[w]
        if w >= c * tau:
            break
    return float(max(tau, 1.0))


@dataclass
class ChainConfig:
    epsilon: float
    sweeps: int = 20_000
    burn_in: int = 1_000
    thin: int = 10
    batches: int = 20
    seed: int = 0
    chain: int = 0

    @property
    def samples(self) -> int:
        return max(0, (self.sweeps - self.burn_in) // self.thin)

    def check(self) -> None:
        if self.batches < 10:
            raise SamplerError("batch means need at least 10 batches")
        if self.samples < self.batches:
            raise SamplerError(f"{self.samples} recorded samples cannot fill {self.batches} batches")


@dataclass
class Estimate:
    mean: float
    se: float
    n_samples: int
    tau_int: float

    def within(self, value: float, k: float = 3.0) -> bool:
        return abs(self.mean - value) <= k * self.se


def _run_recorded(sites, cfg: ChainConfig, watch_sites, every: int | None = None):
    chain = HeatBath(sites, cfg.epsilon, cfg.seed, cfg.chain)
    watch = [chain.state.position(w) for w in watch_sites]
    every = every or cfg.thin
    chain.run(cfg.burn_in)
    vals, masks = chain.run(cfg.sweeps - cfg.burn_in, watch, every, every - 1)
    return chain, vals, masks


def _mixture_series(sites, cfg: ChainConfig, origin: Site, targets: list[Site]) -> tuple[np.ndarray, HeatBath]:
    """Per recorded sample, G_{free}(origin, target) for the sampled pinned set."""
    chain = HeatBath(sites, cfg.epsilon, cfg.seed, cfg.chain)
    chain.run(cfg.burn_in)
    rows = []
    all_sites = chain.state.sites
    for _ in range(cfg.samples):
        chain.run(cfg.thin)
        free = all_sites[~chain.state.pinned]
        solver = GreenSolver(free)
        k0 = solver.position(origin)
        if k0 is None:
            rows.append(np.zeros(len(targets)))
            continue
        col = solver.green_column(origin)
        rows.append(np.array([0.0 if (kt := solver.position(t)) is None else col[kt] for t in targets]))
    return np.array(rows), chain


def estimate_variance(sites, x: Sequence[int], cfg: ChainConfig, estimator: str = "field") -> Estimate:
    """Mean of psi_x^2 with a batched-means error bar.

    ``estimator="field"`` averages psi_x^2 along the chain.  ``"mixture"``
    averages the conditional variance G_{free}(x, x) of the sampled pinned
    set, which has the same mean and smaller fluctuations.
    """
    cfg.check()
    x = tuple(int(c) for c in x)
    if estimator == "field":
        _, vals, _ = _run_recorded(sites, cfg, [x])
        series = vals[:, 0] ** 2
    elif estimator == "mixture":
        rows, _ = _mixture_series(sites, cfg, x, [x])
        series = rows[:, 0]
    else:
        raise SamplerError(f"unknown estimator {estimator!r}")
    mean, se = batch_means(series, cfg.batches)
    return Estimate(mean, se, len(series), integrated_autocorrelation_time(series))


@dataclass
class ProfilePoint:
    k: int
    cov: float
    se: float
    n_samples: int
    tau_int: float = float("nan")


def lattice_ray(origin: Sequence[int], theta: Sequence[float], k_max: int) -> list[Site]:
    th = np.asarray(theta, dtype=float)
    th = th / np.linalg.norm(th)
    return [tuple(int(o + math.floor(k * t + 1e-12)) for o, t in zip(origin, th)) for k in range(k_max + 1)]


def covariance_profile(sites, origin: Sequence[int], theta: Sequence[float], k_max: int, cfg: ChainConfig,
                       estimator: str = "field") -> list[ProfilePoint]:
    """E[psi_origin psi_{origin + floor(k theta)}] for k = 0..k_max, signed."""
    cfg.check()
    origin = tuple(int(c) for c in origin)
    ray = lattice_ray(origin, theta, k_max)
    domain = {tuple(int(c) for c in s) for s in np.asarray(assemble(sites)[0])}
    outside = [y for y in ray if y not in domain]
    if outside:
        raise SamplerError(f"ray leaves the domain at {outside[0]}")
    if estimator == "field":
        _, vals, _ = _run_recorded(sites, cfg, ray)
        series = vals[:, :1] * vals
    elif estimator == "mixture":
        series, _ = _mixture_series(sites, cfg, origin, ray)
    else:
        raise SamplerError(f"unknown estimator {estimator!r}")
    out = []
    for k in range(k_max + 1):
        mean, se = batch_means(series[:, k], cfg.batches)
        out.append(ProfilePoint(k, mean, se, series.shape[0], integrated_autocorrelation_time(series[:, k])))
    return out


# ---------------------------------------------------------------------------
# mass


@dataclass
class MassEstimate:
    theta: tuple[float, ...]
    rate: float
    intercept: float
    window: tuple[int, int]
    residual: float
    points: int


def _upper_hull(k: np.ndarray, y: np.ndarray) -> np.ndarray:
    idx: list[int] = []
    for i in range(len(k)):
        while len(idx) >= 2:
            a, b = idx[-2], idx[-1]
            cross = (k[b] - k[a]) * (y[i] - y[a]) - (y[b] - y[a]) * (k[i] - k[a])
            if cross >= 0:
                idx.pop()
            else:
                break
        idx.append(i)
    return np.array(idx)


def estimate_mass(profile: Sequence[ProfilePoint] | Sequence[tuple[int, float, float]], theta: Sequence[float] = (1.0,),
                  window: tuple[int, int] | None = None, min_points: int = 5, fit: str = "envelope") -> MassEstimate:
    """Decay rate of |cov| along a ray.

    Points within one standard error of zero are dropped as oscillation
    nodes; at least ``min_points`` points must exceed three standard errors.
    ``fit="envelope"`` fits a line through the upper concave hull of
    (k, log|cov|), ``fit="theil"`` uses the Theil-Sen slope of all kept points.
    """
    rows = [(p.k, p.cov, p.se) if isinstance(p, ProfilePoint) else tuple(p) for p in profile]
    k = np.array([r[0] for r in rows], dtype=float)
    c = np.array([r[1] for r in rows], dtype=float)
    se = np.array([r[2] for r in rows], dtype=float)
    if window is None:
        window = (int(k.min()), int(k.max()))
    inw = (k >= window[0]) & (k <= window[1])
    keep = inw & (np.abs(c) > se) & (c != 0)
    strong = inw & (np.abs(c) > 3 * se) & (c != 0)
    if strong.sum() < min_points:
        raise SamplerError(f"only {int(strong.sum())} profile points exceed 3 standard errors")
    kk, yy = k[keep], np.log(np.abs(c[keep]))
    if fit == "envelope":
        hull = _upper_hull(kk, yy)
        fk, fy = kk[hull], yy[hull]
        if len(fk) < 2:
            fk, fy = kk, yy
        slope, icpt = np.polyfit(fk, fy, 1)
    elif fit == "theil":
        slope, icpt, _, _ = stats.theilslopes(yy, kk)
    else:
        raise SamplerError(f"unknown fit {fit!r}")
    resid = float(np.sqrt(np.mean((yy - (slope * kk + icpt)) ** 2)))
    th = np.asarray(theta, dtype=float)
    th = tuple(float(v) for v in th / np.linalg.norm(th))
    return MassEstimate(th, float(-slope), float(icpt), (int(window[0]), int(window[1])), resid, int(keep.sum()))


def predicted_mass_rate(scales: Scales) -> float:
    """Rate scale 1/lambda_mac; the multiplicative constant is not known."""
    return 1.0 / scales.lambda_mac


# ---------------------------------------------------------------------------
# oscillator profile


@dataclass
class HeuristicProfile:
    amplitude: float
    rate: float
    phase: float
    power: float
    residual: float
    sign_changes: int
    converged: bool = True
    degenerate: bool = False
    message: str = ""


def oscillator_model(r: np.ndarray, amplitude: float, rate: float, phase: float, power: float) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    return amplitude * r ** (-power) * np.sin(rate * r / SQRT2 - phase) * np.exp(-rate * r / SQRT2)


def fit_heuristic_profile(r: Sequence[float], cov: Sequence[float], dim: int, free_power: bool = False,
                          se: Sequence[float] | None = None) -> HeuristicProfile:
    """Least-squares fit of the damped oscillator profile to signed covariances.

    Diagnostic only.  ``r`` must be positive distances.
    """
    from scipy.optimize import curve_fit

    r = np.asarray(r, dtype=float)
    y = np.asarray(cov, dtype=float)
    if len(r) < 8:
        raise SamplerError("need at least 8 profile points")
    if np.any(r <= 0):
        raise SamplerError("distances must be positive")
    sigma = None if se is None else np.maximum(np.asarray(se, dtype=float), 1e-300)
    nz = y[y != 0]
    sign_changes = int(np.sum(np.signbit(nz[1:]) != np.signbit(nz[:-1])))
    p0 = (dim - 1) / 2.0
    span = r.max() - r.min()
    best = None
    for rate0 in np.geomspace(0.5 / max(span, 1e-9), 20.0 / max(r.min(), 1e-9), 12):
        for ph0 in np.linspace(-np.pi, np.pi, 9, endpoint=False):
            shape = oscillator_model(r, 1.0, rate0, ph0, p0)
            denom = np.dot(shape, shape)
            if denom == 0 or not np.isfinite(denom):
                continue
            a0 = np.dot(shape, y) / denom
            try:
                if free_power:
                    fn = oscillator_model
                    init = (a0, rate0, ph0, p0)
                else:
                    fn = lambda rr, a, k, w: oscillator_model(rr, a, k, w, p0)  # noqa: E731
                    init = (a0, rate0, ph0)
                with np.errstate(all="ignore"):
                    popt, _ = curve_fit(fn, r, y, p0=init, sigma=sigma, maxfev=4000)
                resid = float(np.sqrt(np.mean((fn(r, *popt) - y) ** 2)))
            except (RuntimeError, ValueError):
                continue
            if np.isfinite(resid) and (best is None or resid < best[0]):
                best = (resid, popt)
    if best is None:
        return HeuristicProfile(math.nan, math.nan, math.nan, p0, math.nan, sign_changes, converged=False,
                                degenerate=sign_changes == 0, message="no starting point converged")
    resid, popt = best
    amp, rate, phase = popt[:3]
    power = popt[3] if free_power else p0
    if rate < 0:
        amp, rate, phase = -amp, -rate, -phase
    if amp < 0:
        amp, phase = -amp, phase + np.pi
    phase = float((phase + np.pi) % (2 * np.pi) - np.pi)
    degenerate = sign_changes == 0
    msg = "no sign change: phase and power are not identifiable" if degenerate else ""
    return HeuristicProfile(float(amp), float(rate), phase, float(power), resid, sign_changes, True, degenerate, msg)
