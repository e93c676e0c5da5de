import itertools
import math
from fractions import Fraction

import numpy as np
import pytest

from membrane_pinning.pinning import (
    PinnedSetDistribution,
    PinningError,
    binomial_tail_bound_check,
    conditional_pin_probability,
    empty_probability,
    fkg_lattice_check,
    square_well_counterexample,
    square_well_limits,
    strong_domination_check,
    volume_monotonicity_check,
    zeta_exact,
)
from membrane_pinning.solver import GreenSolver

from conftest import box_sites


def brute_force_law(sites, eps):
    """Weights eps^|A| Z_{Lambda minus A} from a fresh solve per subset."""
    n = len(sites)
    logw = np.empty(1 << n)
    for m in range(1 << n):
        free = [s for k, s in enumerate(sites) if not m >> k & 1]
        logz = GreenSolver(free).log_partition() if free else 0.0
        logw[m] = bin(m).count("1") * math.log(eps) + logz
    w = np.exp(logw - logw.max())
    return w / w.sum()


@pytest.mark.parametrize("sites", [box_sites(1, 5), box_sites(2, 2) + [(2, 0)]])
@pytest.mark.parametrize("eps", [0.1, 1.0, 7.0])
def test_zeta_matches_brute_force(sites, eps):
    law = zeta_exact(sites, eps)
    assert np.allclose(law.probabilities, brute_force_law(sorted(sites), eps), rtol=1e-10, atol=1e-15)


def test_conditional_probability_formula():
    sites = box_sites(1, 6)
    law = zeta_exact(sites, 2.0)
    x, rest = (2,), {(0,), (4,)}
    free = [s for s in sites if s not in rest]
    p = conditional_pin_probability(free, x, 2.0)
    g = GreenSolver(free).variance(x)
    assert p == pytest.approx(1 / (1 + math.sqrt(2 * math.pi * g) / 2.0))
    with_x = law.prob(rest | {x})
    assert with_x / (with_x + law.prob(rest)) == pytest.approx(p, rel=1e-10)


def test_single_site_pin_probability():
    assert zeta_exact([(0,)], 1.0).probabilities[1] == pytest.approx(0.49424, abs=5e-6)


def test_fkg_path_report():
    rep = fkg_lattice_check(zeta_exact(box_sites(1, 8), 1.0))
    assert rep.summary() == "0 violations / 65536 pairs"


def test_fkg_detects_a_violating_law():
    # anti-correlated two-site law
    law = PinnedSetDistribution([(0,), (1,)], 1.0, log_weights=np.log([0.1, 0.4, 0.4, 0.1]))
    # the ordered pairs ({0}, {1}) and ({1}, {0})
    assert fkg_lattice_check(law).count == 2


def test_domination_constants_bracket_conditionals():
    law = zeta_exact(box_sites(1, 6), 1.0)
    lo = strong_domination_check(law, 0.1, "dominates")
    hi = strong_domination_check(law, 0.6, "dominated")
    assert lo.holds and hi.holds
    assert not strong_domination_check(law, 0.3, "dominates").holds


def test_volume_monotonicity():
    small, large = box_sites(1, 3, lo=1), box_sites(1, 5)
    res = volume_monotonicity_check(small, large, lambda a: float(len(a) > 0), 1.0)
    assert res.holds and res.small >= res.large


def test_empty_probability_exact_mode():
    law = zeta_exact(box_sites(1, 4), 1.0)
    p, se = empty_probability(law, [(1,), (2,)])
    probs = law.probabilities
    assert se == 0.0
    assert p == pytest.approx(sum(probs[m] for m in range(16) if not m & 0b0110))


def test_tail_bound_example_value():
    t = binomial_tail_bound_check(10, Fraction(1, 10), Fraction(1, 2))
    assert t.lhs == Fraction(27424601, 10 ** 10)
    assert t.ok and t.rhs_float == pytest.approx(0.01024)


def test_tail_bound_rejects_zero_r():
    with pytest.raises(PinningError):
        binomial_tail_bound_check(5, 0, 0)


def test_square_well_limits():
    sw = square_well_counterexample(10, 1e-5)
    lim = square_well_limits(10)
    assert lim == pytest.approx({"union": 0.04, "intersection": 2.0, "first": 0.38, "second": 0.38})
    for k, v in lim.items():
        assert sw.scaled[k] == pytest.approx(v, rel=1e-3)
    assert sw.lattice_ratio > 0.5
