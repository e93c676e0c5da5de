import math

import numpy as np
import pytest

from membrane_pinning.cones import (
    ConeError,
    Indicator,
    cone_distances,
    cone_reach,
    extended_pinned_set,
    interpolation_ratio,
    local_poincare_ratio,
    simplex_directions,
    widest_aperture,
)
from membrane_pinning.lattice import LatticeField, cube

from conftest import box_sites


@pytest.mark.parametrize("d", [1, 2, 3, 4])
def test_simplex_directions_are_unit_and_balanced(d):
    c = simplex_directions(d)
    assert c.directions.shape == (d + 1, d)
    assert np.allclose(np.linalg.norm(c.directions, axis=1), 1.0)
    assert np.allclose(c.directions.sum(axis=0), 0.0)
    off = c.directions @ c.directions.T
    assert np.allclose(off[~np.eye(d + 1, dtype=bool)], -1.0 / d)


@pytest.mark.parametrize("d", [2, 3, 4])
def test_cones_with_half_the_widest_aperture_meet_at_obtuse_angles(d):
    c = simplex_directions(d)
    assert c.kappa == pytest.approx(widest_aperture(d) / 2)
    # the angle between two cone axes minus two apertures still exceeds 90 degrees
    alpha = math.acos(-1.0 / d)
    assert alpha - 2 * c.kappa > math.pi / 2 - 1e-12


def test_cone_reach_values():
    assert cone_reach(simplex_directions(1)) == 1
    assert cone_reach(simplex_directions(4)) == 16


def brute_cone_distance(point, pinned, directions, kappa, cutoff):
    out = []
    for u in directions:
        best = math.inf
        for q in pinned:
            y = np.subtract(q, point)
            n = math.sqrt(float(y @ y))
            if n == 0:
                continue
            if math.acos(max(-1.0, min(1.0, float(y @ u) / n))) <= kappa + 1e-9 and np.abs(y).sum() <= cutoff:
                best = min(best, float(np.abs(y).sum()))
        out.append(best)
    return out


def test_cone_distances_match_brute_force(rng):
    c = simplex_directions(2)
    pinned = [tuple(int(v) for v in rng.integers(-8, 9, size=2)) for _ in range(30)]
    ind = Indicator.from_sites(pinned, 2)
    points = [tuple(int(v) for v in rng.integers(-5, 6, size=2)) for _ in range(20)]
    got = cone_distances(points, ind, c, 12).per_cone
    for p, row in zip(points, got):
        assert list(row) == brute_cone_distance(p, pinned, c.directions, c.kappa, 12)


def test_extended_set_contains_exterior():
    ind = extended_pinned_set((0, 0), (3, 3), [(1, 1)])
    coords = np.array([[1, 1], [5, 0], [2, 2]])
    assert list(ind(coords)) == [True, True, False]


def test_local_poincare_ratio_is_finite_and_scale_free(rng):
    d, side = 2, 6
    box = box_sites(d, side)
    pin = [s for s in box if rng.random() < 0.3]
    ext = extended_pinned_set((0, 0), (side - 1, side - 1), pin)
    u = LatticeField(( 0, 0), rng.normal(size=(side, side)))
    for s in pin:
        u[s] = 0.0
    r1 = local_poincare_ratio(u, ext, box, 4, simplex_directions(d))
    u.values *= 3.0
    r2 = local_poincare_ratio(u, ext, box, 4, simplex_directions(d))
    assert math.isfinite(r1.ratio) and r2.ratio == pytest.approx(r1.ratio)
    with pytest.raises(ConeError):
        local_poincare_ratio(u, ext, box, 1, simplex_directions(d))


def test_interpolation_ratio_preconditions(rng):
    bx = cube((0, 0), 12)
    u = LatticeField(bx.lo, rng.normal(size=(25, 25)))
    full = np.ones((25, 25), dtype=bool)
    assert math.isfinite(interpolation_ratio(u, bx, full).ratio)
    with pytest.raises(ConeError):
        interpolation_ratio(u, bx, np.zeros((25, 25), dtype=bool))
    small = cube((0, 0), 5)
    with pytest.raises(ConeError):
        interpolation_ratio(LatticeField(small.lo, np.zeros((11, 11))), small, np.ones((11, 11), dtype=bool))


def test_interpolation_ratio_is_small_for_slowly_varying_fields():
    bx = cube((0, 0), 25)
    u = LatticeField.from_function(bx.lo, bx.hi, lambda c: np.sin(c[0] / 10.0) + np.cos(c[1] / 15.0))
    assert interpolation_ratio(u, bx, np.ones((51, 51), dtype=bool)).ratio < 1.0
