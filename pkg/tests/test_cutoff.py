import itertools
import math
from fractions import Fraction

import numpy as np
import pytest

from membrane_pinning.cutoff import (
    CorrectionInfeasible,
    CutoffError,
    CutoffParams,
    CutoffRefused,
    affine_correction,
    annulus_boxes,
    build_cutoff,
    build_hierarchy,
    chi,
    chi_hat,
    hole_filler_terms,
    polymer_distance,
    probe_points,
    smooth_step,
    verify_cutoff,
    xi_profile,
)
from membrane_pinning.lattice import BoxSpec, Grid, LatticeField, Polymer, Scales, hessian


def d1_params():
    # M = 101 is large enough for R >= 16 r at level 1
    return CutoffParams(3, 3, 101, Scales.explicit(1, 5, 1355))


def d1_polymer(p):
    return Polymer(Grid(1, p.macro), [BoxSpec((0,), Fraction(p.macro, 2))])


def level0_box(p, site):
    return p.grid(0).box_of(site)


def test_params_validation_and_scales():
    p = d1_params()
    assert (p.micro, p.macro, p.ell(1)) == (15, 12195, 1515)
    assert p.j_star == 1
    assert p.correction_radii(1) == (math.ceil(15 * 1.5 + 1), math.floor(7.5 + 1515 / 4))
    for bad in [(2, 3, 13), (3, 2, 13), (3, 3, 11), (3, 3, 14)]:
        with pytest.raises(CutoffError):
            CutoffParams(*bad, Scales.explicit(1, 5, 1355))


def test_smooth_step_shape():
    s = np.linspace(-0.5, 1.5, 201)
    h = smooth_step(s)
    assert np.all(h[s <= 0] == 0.0) and np.all(h[s >= 1] == 1.0)
    assert np.all(np.diff(h) >= 0)
    assert np.allclose(smooth_step(s) + smooth_step(1 - s), 1.0)


def test_bumps_plateau_and_support():
    z = np.linspace(-3, 3, 601)[:, None]
    c, ch = chi(z), chi_hat(z)
    assert np.all(c[np.abs(z[:, 0]) <= 1] == 1.0) and np.all(c[np.abs(z[:, 0]) >= 2] == 0.0)
    assert np.all(ch[np.abs(z[:, 0]) >= 9 / 7] == 0.0)


def test_xi_profile_levels():
    r, R = 4, 128
    y = np.array([[0.0], [8.0], [-8.0], [64.0], [100.0]])
    xi = xi_profile(y, r, R)
    assert xi[0] == xi[1] == xi[2] == 1.0
    assert xi[3] == 0.0 and xi[4] == 0.0


def test_polymer_distance_brute_force(rng):
    g = Grid(2, 5)
    U = Polymer(g, [g.box((0, 0)), g.box((2, 1))])
    pts = rng.integers(-20, 20, size=(50, 2))
    sites = np.array(sorted(U.sites()))
    brute = [int(np.abs(sites - p).max(axis=1).min()) for p in pts]
    assert list(polymer_distance(U, pts)) == brute


@pytest.mark.parametrize("d", [1, 2])
def test_affine_correction_flattens_centre(d, rng):
    r, R = 1, 16
    shape = (2 * R + 9,) * d
    v = LatticeField((-R - 4,) * d, rng.normal(size=shape))
    res = affine_correction(v, (0,) * d, r, R)
    total = v.restricted(res.w.origin, res.w.hi)
    total.values += res.w.values
    origin, h = hessian(total)
    c = -np.asarray(origin)
    inner = tuple(slice(k - r, k + r + 1) for k in c)
    assert np.abs(h[(slice(None), slice(None)) + inner]).max() < 1e-12
    assert math.isfinite(res.growth)


def test_affine_correction_needs_room():
    v = LatticeField((-10,), np.zeros(21))
    with pytest.raises(CorrectionInfeasible):
        affine_correction(v, (0,), 2, 20)


def test_hierarchy_isolated_and_clustered():
    p = d1_params()
    far = [level0_box(p, (0,)), level0_box(p, (6000,))]
    h = build_hierarchy(far, p)
    assert h.isolated(0) == sorted(far) and not h.top
    near = [level0_box(p, (0,)), level0_box(p, (300,))]
    h = build_hierarchy(near, p)
    assert h.levels[0].clustered == sorted(near)
    assert len(h.top) == 1 and all(h.top[0].contains_box(b) for b in near)
    assert h.j_isol(near[0]) == 1
    assert "cover" in h.dump()


def test_cutoff_without_bad_boxes_is_base_profile():
    p = d1_params()
    U = d1_polymer(p)
    eta = build_cutoff(U, build_hierarchy([], p), p)
    assert not eta.corrections
    pts = probe_points(U, p, 300, 0)
    assert verify_cutoff(eta, [], pts).ok


def test_cutoff_with_one_correction():
    p = d1_params()
    U = d1_polymer(p)
    q = level0_box(p, (12180,))
    eta = build_cutoff(U, build_hierarchy([q], p), p)
    assert len(eta.corrections) == 1
    c = eta.corrections[0]
    assert (c.r, c.R) == p.correction_radii(1)
    chk = verify_cutoff(eta, [q], probe_points(U, p, 500, 1))
    assert chk.ok and chk.max_bad_hessian < 1e-12
    # values stay within the affine correction's reach of [0, 1]
    f = eta.field((12180 - 400,), (12180 + 400,))
    assert np.isfinite(f.values).all()


def test_cutoff_refused_on_type_one_in_annulus():
    p = d1_params()
    U = d1_polymer(p)
    s = 12180
    boxes = [level0_box(p, (s,)), level0_box(p, (s + 150,))]
    h = build_hierarchy(boxes, p)
    assert set(h.macro_type_one()) & set(annulus_boxes(U))
    with pytest.raises(CutoffRefused):
        build_cutoff(U, h, p)


def test_cutoff_infeasible_for_small_m():
    p = CutoffParams(3, 3, 13, Scales.explicit(1, 5, 1355))
    assert p.correction_radii(1)[1] < 16 * p.correction_radii(1)[0]
    U = d1_polymer(p)
    q = level0_box(p, (U.grid.scale - 15,))
    with pytest.raises(CorrectionInfeasible):
        build_cutoff(U, build_hierarchy([q], p), p)


@pytest.mark.parametrize("d", [1, 2, 4])
def test_hole_filler_identity_exact(d, rng):
    for _ in range(5):
        u = LatticeField((0,) * d, rng.normal(size=(4,) * d))
        eta = LatticeField((1,) * d, rng.random(size=(3,) * d))
        t = hole_filler_terms(u, eta)
        assert t.residual <= 1e-10 * (1 + abs(t.lhs))


def test_hole_filler_diagonal_shift_variant_is_not_exact(rng):
    u = LatticeField((0, 0), rng.normal(size=(5, 5)))
    eta = LatticeField((0, 0), rng.random(size=(5, 5)))
    t = hole_filler_terms(u, eta)
    assert t.shifted_residual > 1e-3 * (1 + abs(t.lhs))
