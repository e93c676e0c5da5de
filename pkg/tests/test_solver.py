import itertools
import math

import numpy as np
import pytest

from membrane_pinning.solver import LOG_2PI, GreenSolver, SolverError, assemble, energy_inner

from conftest import bilaplacian_oracle, box_sites


@pytest.mark.parametrize("d,side", [(1, 7), (2, 4), (3, 3), (4, 2)])
def test_assembly_matches_loop_oracle(d, side):
    sites = box_sites(d, side)
    ref_sites, ref = bilaplacian_oracle(sites)
    arr, mat = assemble(sites)
    assert [tuple(s) for s in arr] == ref_sites
    assert np.array_equal(mat.toarray(), ref)


def test_green_matrix_inverts_oracle(rng):
    sites = [s for s in box_sites(2, 5) if rng.random() < 0.7]
    _, ref = bilaplacian_oracle(sites)
    g = GreenSolver(sites).green_matrix()
    assert np.allclose(g, np.linalg.inv(ref), rtol=1e-10, atol=1e-13)


def test_single_site_variance():
    # B = 6 on one site in d = 1, 2*d*(2*d) + 2*d = 4d^2 + 2d in general
    for d in (1, 2, 4):
        assert GreenSolver([(0,) * d]).variance((0,) * d) == pytest.approx(1 / (4 * d * d + 2 * d))


def test_log_partition_matches_oracle(rng):
    sites = [s for s in box_sites(1, 9) if rng.random() < 0.8]
    _, ref = bilaplacian_oracle(sites)
    expect = 0.5 * len(sites) * LOG_2PI - 0.5 * np.linalg.slogdet(ref)[1]
    assert GreenSolver(sites).log_partition() == pytest.approx(expect, rel=1e-12)


def test_methods_agree():
    sites = box_sites(2, 9)
    x = (4, 4)
    dense = GreenSolver(sites, method="dense").variance(x)
    assert GreenSolver(sites, method="sparse").variance(x) == pytest.approx(dense, rel=1e-10)
    assert GreenSolver(sites, method="cg").variance(x) == pytest.approx(dense, rel=1e-8)


def test_cg_mode_has_no_logdet():
    with pytest.raises(SolverError):
        GreenSolver(box_sites(2, 4), method="cg").logdet()


def test_condition_on_pin_matches_fresh_solve():
    sites = box_sites(2, 4)
    s = GreenSolver(sites).condition_on_pin((1, 2))
    fresh = GreenSolver([t for t in sites if t != (1, 2)])
    assert np.allclose(s.green_matrix(), fresh.green_matrix(), atol=1e-13)


def test_energy_form_reproduces_green_function():
    sites = box_sites(3, 3)
    s = GreenSolver(sites)
    for x, y in itertools.combinations([(0, 0, 0), (1, 1, 1), (2, 0, 1)], 2):
        assert energy_inner(s.green_field(x), s.green_field(y)) == pytest.approx(s.covariance(x, y), rel=1e-10)


def test_ratio_identity_one_instance():
    sites = box_sites(1, 6)
    x = (2,)
    lhs = GreenSolver([s for s in sites if s != x]).log_partition() - GreenSolver(sites).log_partition()
    assert lhs == pytest.approx(-0.5 * (LOG_2PI + math.log(GreenSolver(sites).variance(x))), rel=1e-12)
