import math

import numpy as np
import pytest

from membrane_pinning.pinning import zeta_exact
from membrane_pinning.sampler import (
    ChainConfig,
    HeatBath,
    ProfilePoint,
    SamplerError,
    batch_means,
    covariance_profile,
    estimate_mass,
    estimate_variance,
    integrated_autocorrelation_time,
    lattice_ray,
    random_words,
    sample_exact,
)
from membrane_pinning.solver import GreenSolver

from conftest import box_sites


def exact_second_moment(sites, x, eps):
    """E[psi_x^2] = sum_A zeta(A) G_{Lambda minus A}(x, x)."""
    law = zeta_exact(sites, eps)
    total = 0.0
    for m, p in enumerate(law.probabilities):
        free = [s for k, s in enumerate(law.sites) if not m >> k & 1]
        if tuple(x) in free:
            total += p * GreenSolver(free).variance(x)
    return total


def test_chain_is_deterministic_and_chunk_independent():
    sites = box_sites(2, 3)
    a = HeatBath(sites, 0.5, seed=3)
    a.run(40)
    b = HeatBath(sites, 0.5, seed=3)
    b.run(15)
    b.run(25)
    assert np.array_equal(a.state.field, b.state.field)
    assert np.array_equal(a.state.pinned, b.state.pinned)
    c = HeatBath(sites, 0.5, seed=4)
    c.run(40)
    assert not np.array_equal(a.state.field, c.state.field)


def test_random_words_skip_ahead():
    full = random_words(9, 0, 5, 0, 10)
    tail = random_words(9, 0, 5, 4, 6)
    # four words per site and sweep
    assert np.array_equal(full[4 * 5 * 4:], tail)


def test_pinned_sites_are_zero():
    chain = HeatBath(box_sites(1, 6), 1.0, seed=1)
    chain.run(50)
    assert np.all(chain.state.field[chain.state.pinned] == 0.0)


def test_zero_epsilon_never_pins():
    chain = HeatBath(box_sites(1, 6), 0.0, seed=1)
    chain.run(100)
    assert not chain.state.pinned.any()


@pytest.mark.parametrize("estimator", ["field", "mixture"])
def test_variance_estimators_match_exact_moment(estimator):
    sites = box_sites(1, 6)
    x = (2,)
    cfg = ChainConfig(1.0, sweeps=40_000, burn_in=500, thin=2, seed=8)
    est = estimate_variance(sites, x, cfg, estimator=estimator)
    assert abs(est.mean - exact_second_moment(sites, x, 1.0)) <= 4 * est.se


def test_exact_sampler_frequencies():
    sites = box_sites(1, 3)
    law = zeta_exact(sites, 1.0)
    masks, fields = sample_exact(sites, 1.0, np.random.default_rng(0), size=20_000, dist=law)
    freq = np.bincount(masks, minlength=8) / len(masks)
    assert np.abs(freq - law.probabilities).max() < 0.02
    assert np.all(fields[masks == 7] == 0.0)


def test_batch_means_and_autocorrelation():
    rng = np.random.default_rng(0)
    iid = rng.normal(size=20_000)
    mean, se = batch_means(iid, 20)
    assert abs(mean) < 4 * se and se == pytest.approx(1 / math.sqrt(20_000), rel=0.5)
    ar = np.zeros(20_000)
    for k in range(1, len(ar)):
        ar[k] = 0.9 * ar[k - 1] + rng.normal()
    # AR(1) with rho = 0.9: tau = 1 + 2 sum rho^k = (1 + rho) / (1 - rho) = 19
    assert integrated_autocorrelation_time(ar) == pytest.approx(19, rel=0.3)
    with pytest.raises(SamplerError):
        batch_means(iid, 5)


def test_lattice_ray_uses_euclidean_steps():
    ray = lattice_ray((0, 0), (1, 1), 4)
    assert ray[0] == (0, 0) and ray[2] == (1, 1) and ray[4] == (2, 2)


def test_covariance_profile_starts_at_variance():
    sites = box_sites(2, 5)
    cfg = ChainConfig(1.0, sweeps=300, burn_in=100, thin=10, batches=10, seed=2)
    prof = covariance_profile(sites, (1, 1), (1, 0), 3, cfg, estimator="mixture")
    assert [p.k for p in prof] == [0, 1, 2, 3]
    assert prof[0].cov > abs(prof[3].cov)
    with pytest.raises(SamplerError):
        covariance_profile(sites, (1, 1), (1, 0), 6, cfg)


def test_mass_fit_recovers_synthetic_rate():
    prof = [ProfilePoint(k, 3.0 * math.exp(-0.3 * k) * (1 + 0.5 * math.cos(k)), 1e-9, 100) for k in range(40)]
    est = estimate_mass(prof, (1.0,), (2, 39))
    assert est.rate == pytest.approx(0.3, rel=0.05)


def test_chain_config_validation():
    with pytest.raises(SamplerError):
        ChainConfig(1.0, sweeps=10, burn_in=20).check()
