import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fomg.hierarchy import (GridLevel, build_hierarchy, coarse_neighborhood, prolongate,
                            restrict, restrict_bounds_guarded_lower,
                            restrict_bounds_guarded_upper, restrict_bounds_max,
                            restrict_bounds_min)


@pytest.fixture(scope='module')
def hier():
    return build_hierarchy(5)


def test_level_dimensions():
    for k in range(9):
        lev = GridLevel(k)
        assert lev.m == 2 ** (k + 1) - 1
        assert lev.n == lev.m ** 2
        assert lev.h * (lev.m + 1) == 1.0
    assert GridLevel(0).n == 1
    assert GridLevel(4).n == 961
    assert GridLevel(8).n == 261121


def test_build_hierarchy_bounds():
    assert build_hierarchy(0).j == 0
    assert len(build_hierarchy(3).levels) == 4
    with pytest.raises(ValueError):
        build_hierarchy(-1)
    with pytest.raises(ValueError):
        build_hierarchy(13)


def test_coordinates_row_major():
    lev = GridLevel(1)
    x1, x2 = lev.coordinates()
    # idx = i2*m + i1, i1 runs along x1
    assert x1[1] == 0.5 and x2[1] == 0.25
    assert x1[3] == 0.25 and x2[3] == 0.5


def test_prolongate_single_node():
    h = build_hierarchy(1)
    fine = prolongate(h, 1, [1.0])
    expect = np.array([.25, .5, .25, .5, 1, .5, .25, .5, .25])
    np.testing.assert_array_equal(fine, expect)


def test_prolongate_linear_and_zero(hier):
    mc = hier[2].m
    e = np.zeros(hier[2].n)
    a, b = e.copy(), e.copy()
    a[0] = 1.0
    b[mc * mc - 1] = 1.0
    np.testing.assert_allclose(prolongate(hier, 3, a + b),
                               prolongate(hier, 3, a) + prolongate(hier, 3, b))
    assert not prolongate(hier, 3, e).any()


def test_prolongate_nested_trace(hier):
    rng = np.random.default_rng(1)
    for k in range(1, 6):
        v = rng.standard_normal(hier[k - 1].n)
        fine = hier[k].as_grid(prolongate(hier, k, v))
        np.testing.assert_array_equal(fine[1::2, 1::2].ravel(), v)


def test_restrict_examples(hier):
    # all-ones restricts to one everywhere: neighbourhoods are never clipped
    for k in range(1, 6):
        np.testing.assert_allclose(restrict(hier, k, np.ones(hier[k].n)), 1.0)
    e = np.zeros(hier[2].n)
    i = hier[2].n // 2
    e[i] = 1.0
    assert restrict(hier, 3, prolongate(hier, 3, e))[i] == pytest.approx(0.5625)
    assert not restrict(hier, 3, np.zeros(hier[3].n)).any()


def test_length_mismatch(hier):
    with pytest.raises(ValueError):
        prolongate(hier, 2, np.ones(5))
    with pytest.raises(ValueError):
        restrict(hier, 2, np.ones(5))
    with pytest.raises(ValueError):
        restrict(hier, 0, np.ones(1))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.integers(0, 2 ** 31))
def test_adjointness(k, seed):
    hier = build_hierarchy(5)
    rng = np.random.default_rng(seed)
    v, w = rng.standard_normal(hier[k - 1].n), rng.standard_normal(hier[k].n)
    Pv = prolongate(hier, k, v)
    lhs, rhs = Pv @ w, 4 * (v @ restrict(hier, k, w))
    assert abs(lhs - rhs) <= 1e-13 * np.linalg.norm(Pv) * np.linalg.norm(w)


def test_neighborhood_always_full(hier):
    for k in range(1, 4):
        mf = hier[k].m
        for i in range(hier[k - 1].n):
            nb = coarse_neighborhood(hier, k, i)
            assert len(set(nb)) == 9
            assert all(0 <= j < hier[k].n for j in nb)
            b, a = divmod(i, hier[k - 1].m)
            assert (2 * b + 1) * mf + 2 * a + 1 in nb


def test_bound_restrictions_match_neighborhoods(hier):
    rng = np.random.default_rng(3)
    k = 3
    y = rng.standard_normal(hier[k].n)
    mx, mn = restrict_bounds_max(hier, k, y), restrict_bounds_min(hier, k, y)
    for i in range(hier[k - 1].n):
        nb = coarse_neighborhood(hier, k, i)
        assert mx[i] == y[nb].max()
        assert mn[i] == y[nb].min()


def test_bound_restriction_examples(hier):
    k = 2
    n = hier[k].n
    np.testing.assert_array_equal(restrict_bounds_max(hier, k, np.full(n, 3.0)), 3.0)
    np.testing.assert_array_equal(restrict_bounds_min(hier, k, np.full(n, 3.0)), 3.0)
    y = np.zeros(n)
    y[coarse_neighborhood(hier, k, 4)[2]] = 5.0
    assert restrict_bounds_max(hier, k, y)[4] == 5.0
    y = np.zeros(n)
    nb = coarse_neighborhood(hier, k, 0)
    y[nb[0]], y[nb[1]] = -1.0, 2.0
    assert restrict_bounds_min(hier, k, y)[0] == -1.0
    assert np.all(restrict_bounds_min(hier, k, np.full(n, np.inf)) == np.inf)
    assert np.all(restrict_bounds_max(hier, k, np.full(n, -np.inf)) == -np.inf)


def test_guarded_restrictions(hier):
    k = 2
    n = hier[k].n
    none = np.zeros(n, bool)
    np.testing.assert_array_equal(restrict_bounds_guarded_lower(hier, k, -np.ones(n), none), -1)
    np.testing.assert_array_equal(restrict_bounds_guarded_upper(hier, k, np.ones(n), none), 1)
    np.testing.assert_array_equal(
        restrict_bounds_guarded_lower(hier, k, -np.ones(n), np.ones(n, bool)), 0)
    # guard fires exactly on coarse nodes whose block holds an active node
    active = none.copy()
    active[coarse_neighborhood(hier, k, 4)[0]] = True
    touched = {i for i in range(hier[k - 1].n)
               if active[coarse_neighborhood(hier, k, i)].any()}
    out = restrict_bounds_guarded_upper(hier, k, np.ones(n), active)
    for i in range(hier[k - 1].n):
        assert out[i] == (0.0 if i in touched else 1.0)
    assert len(touched) >= 1


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_guarded_equals_plain_without_activity_and_monotone(seed):
    hier = build_hierarchy(3)
    rng = np.random.default_rng(seed)
    y = -rng.random(hier[3].n)
    y2 = y + rng.random(hier[3].n)
    none = np.zeros(hier[3].n, bool)
    np.testing.assert_array_equal(restrict_bounds_guarded_lower(hier, 3, y, none),
                                  restrict_bounds_max(hier, 3, y))
    np.testing.assert_array_equal(restrict_bounds_guarded_upper(hier, 3, y, none),
                                  restrict_bounds_min(hier, 3, y))
    assert np.all(restrict_bounds_max(hier, 3, y) <= restrict_bounds_max(hier, 3, y2))
