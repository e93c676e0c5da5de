from fractions import Fraction

import numpy as np
import pytest

from membrane_pinning.lattice import (
    BoxSpec,
    Grid,
    LatticeError,
    LatticeField,
    Polymer,
    Scales,
    bilaplacian,
    bilaplacian_stencil,
    box_mask,
    box_distance_inf,
    components,
    cube,
    expand,
    hessian,
    hessian_norm_sq,
    is_connected,
    scales_from_epsilon,
)


def test_bilaplacian_stencil_weights():
    st = bilaplacian_stencil(1)
    assert st == {(-2,): 1.0, (-1,): -4.0, (0,): 6.0, (1,): -4.0, (2,): 1.0}
    st4 = bilaplacian_stencil(4)
    assert st4[(0, 0, 0, 0)] == 72.0
    assert sum(st4.values()) == 0.0


def test_bilaplacian_kills_cubics():
    f = LatticeField.from_function((-4, -4), (4, 4), lambda c: c[0] ** 3 - 2 * c[0] * c[1] ** 2 + c[1])
    inner = bilaplacian(f).restricted((-2, -2), (2, 2))
    assert np.abs(inner.values).max() == 0.0


def test_hessian_of_quadratic_is_constant():
    f = LatticeField.from_function((0, 0), (5, 5), lambda c: 3 * c[0] ** 2 + c[0] * c[1])
    _, h = hessian(f)
    # the field is zero outside its box, so look away from the edges
    h = h[:, :, 2:-2, 2:-2]
    assert np.allclose(h[0, 0], 6) and np.allclose(h[0, 1], 1) and np.allclose(h[1, 1], 0)


def test_hessian_norm_of_affine_field_is_zero():
    f = LatticeField.from_function((0, 0, 0), (3, 3, 3), lambda c: 2 * c[0] - c[2] + 7)
    assert hessian_norm_sq(f, box_mask((1, 1, 1), (2, 2, 2))) == 0.0
    assert hessian_norm_sq(f) > 0.0


def test_box_geometry():
    b = cube((0, 0), 2)
    assert b.lo == (-2, -2) and b.hi == (2, 2) and b.side == 5 and len(b) == 25
    assert box_distance_inf(cube((0,), 1), cube((10,), 1)) == 8
    with pytest.raises(LatticeError):
        BoxSpec((0,), Fraction(-1))


def test_grid_partition_covers_each_site_once():
    g = Grid(2, 5)
    for site in [(0, 0), (2, 2), (3, -3), (-7, 12)]:
        assert g.box_of(site).contains(site)
        assert sum(b.contains(site) for b in g.boxes_meeting(site, site)) == 1


def test_overlapping_grid_covers_each_site_three_to_the_d_times():
    g = Grid(2, 9, overlapping=True)
    for site in [(0, 0), (4, 4), (5, -1)]:
        assert sum(b.contains(site) for b in g.boxes_meeting(site, site)) == 9


def test_grid_rejects_even_scale():
    with pytest.raises(LatticeError):
        Grid(1, 4)


def test_polymer_components():
    g = Grid(1, 3)
    p = Polymer(g, [g.box((0,)), g.box((1,)), g.box((5,))])
    assert len(components(p)) == 2 and not is_connected(p)
    assert is_connected(expand(p, 6))


def test_scales_are_odd_multiples():
    for d in (1, 2, 3, 4, 5, 6):
        for eps in (1e-1, 1e-2, 1e-3):
            s = scales_from_epsilon(d, eps)
            assert s.lambda_mic % 2 == 1 and s.lambda_mac % s.lambda_mic == 0 and s.ratio % 2 == 1
    assert scales_from_epsilon(4, 1e-2).lambda_mac == 15
    with pytest.raises(LatticeError):
        Scales.explicit(4, 7, 14)


def test_scales_reject_bad_epsilon():
    with pytest.raises(LatticeError):
        scales_from_epsilon(4, 1.5)
