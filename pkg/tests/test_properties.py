"""Hypothesis checks of the structural invariants."""

import math

import numpy as np
from hypothesis import assume, given
from hypothesis import strategies as st

from membrane_pinning.config import ExperimentConfig
from membrane_pinning.cutoff import hole_filler_terms, smooth_step
from membrane_pinning.lattice import LatticeField
from membrane_pinning.pinning import fkg_lattice_check, zeta_exact
from membrane_pinning.solver import LOG_2PI, GreenSolver, energy_inner


@st.composite
def domains(draw, max_sites=9):
    d = draw(st.sampled_from([1, 2, 4]))
    extent = {1: 10, 2: 4, 4: 2}[d]
    pts = st.tuples(*[st.integers(0, extent - 1)] * d)
    return sorted(draw(st.sets(pts, min_size=1, max_size=max_sites)))


@st.composite
def fields(draw, d, max_side=5):
    shape = tuple(draw(st.integers(1, max_side)) for _ in range(d))
    origin = tuple(draw(st.integers(-3, 3)) for _ in range(d))
    seed = draw(st.integers(0, 2 ** 32 - 1))
    return LatticeField(origin, np.random.default_rng(seed).normal(size=shape))


@given(domains(), st.data())
def test_partition_ratio(sites, data):
    x = data.draw(st.sampled_from(sites))
    rest = [s for s in sites if s != x]
    full = GreenSolver(sites)
    lhs = GreenSolver(rest).log_partition() - full.log_partition()
    assert math.isclose(lhs, -0.5 * (LOG_2PI + math.log(full.variance(x))), rel_tol=1e-9, abs_tol=1e-12)


@given(domains(), st.data())
def test_green_symmetric_positive_and_cauchy_schwarz(sites, data):
    s = GreenSolver(sites)
    g = s.green_matrix()
    assert np.allclose(g, g.T, atol=1e-14)
    assert np.all(np.diag(g) > 0)
    x = data.draw(st.sampled_from(sites))
    y = data.draw(st.sampled_from(sites))
    assert abs(s.covariance(x, y)) <= math.sqrt(s.variance(x) * s.variance(y)) + 1e-12
    assert math.isclose(energy_inner(s.green_field(x), s.green_field(y)), s.covariance(x, y),
                        rel_tol=1e-8, abs_tol=1e-12)


@given(domains(), st.data())
def test_pinning_lowers_variance(sites, data):
    assume(len(sites) >= 2)
    x = data.draw(st.sampled_from(sites))
    y = data.draw(st.sampled_from([s for s in sites if s != x]))
    before = GreenSolver(sites).variance(x)
    after = GreenSolver([s for s in sites if s != y]).variance(x)
    assert after <= before + 1e-12


@given(domains(max_sites=6), st.floats(0.05, 20.0))
def test_pinned_law_satisfies_lattice_condition(sites, eps):
    law = zeta_exact(sites, eps)
    assert math.isclose(law.probabilities.sum(), 1.0, rel_tol=1e-12)
    assert fkg_lattice_check(law).count == 0


@given(st.sampled_from([1, 2, 4]).flatmap(lambda d: st.tuples(fields(d), fields(d))))
def test_hole_filler_identity(pair):
    u, eta = pair
    eta.values = np.abs(eta.values)
    t = hole_filler_terms(u, eta)
    assert t.residual <= 1e-10 * (1 + abs(t.lhs))


@given(st.floats(-2.0, 3.0))
def test_smooth_step_symmetry(s):
    h = float(smooth_step(np.array(s)))
    assert 0.0 <= h <= 1.0
    assert math.isclose(h + float(smooth_step(np.array(1.0 - s))), 1.0, abs_tol=1e-15)


keys = st.text("abcdefghijklmnopqrstuvwxyz_", min_size=1, max_size=8)
values = st.text("abcdefghijklmnopqrstuvwxyz0123456789.,-+ e", max_size=12).map(str.strip)


@given(st.dictionaries(keys, values, max_size=6))
def test_config_round_trip(d):
    cfg = ExperimentConfig(dict(d))
    again = ExperimentConfig.loads(cfg.dumps())
    assert again.values == cfg.values and again.digest() == cfg.digest()
