import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from groupdens.grid_basis import (
    GridError,
    aligned_bin_count,
    build_basis,
    build_fine_grid,
    build_penalty,
)


def cox_de_boor(x, knots, k, degree):
    """Textbook recursive B-spline evaluation (independent oracle)."""
    if degree == 0:
        return 1.0 if knots[k] <= x < knots[k + 1] else 0.0
    left = right = 0.0
    d1 = knots[k + degree] - knots[k]
    d2 = knots[k + degree + 1] - knots[k + 1]
    if d1 > 0:
        left = (x - knots[k]) / d1 * cox_de_boor(x, knots, k, degree - 1)
    if d2 > 0:
        right = (knots[k + degree + 1] - x) / d2 * cox_de_boor(x, knots, k + 1, degree - 1)
    return left + right


def test_car_cuts_land_on_edges():
    grid = build_fine_grid((0, 3, 4.3, 6.18), 309)
    assert grid.delta == pytest.approx(0.02, rel=1e-12)
    assert list(grid.cut_index) == [0, 150, 215, 309]
    np.testing.assert_allclose(grid.class_cuts, [0, 3, 4.3, 6.18], atol=1e-12)


def test_single_class_grid():
    grid = build_fine_grid((0, 1), 10)
    np.testing.assert_allclose(grid.edges, np.linspace(0, 1, 11), atol=1e-15)
    np.testing.assert_array_equal(grid.composition, np.ones((1, 10)))


def test_simulation_cuts_row_sums():
    grid = build_fine_grid((-1, 1, 3.5, 6), 350)
    assert grid.delta == pytest.approx(0.02)
    np.testing.assert_array_equal(grid.composition.sum(axis=1), [100, 125, 125])


def test_aligned_bin_counts():
    assert aligned_bin_count((0, 3, 4.3, 6.18), 300) == 309
    assert aligned_bin_count((-1, 1, 3.5, 6), 300) == 308


def test_grid_errors():
    with pytest.raises(GridError, match="increasing"):
        build_fine_grid((0, 2, 1), 100)
    with pytest.raises(GridError):
        build_fine_grid((0, 1, 2), 10)  # below 10 bins per class
    with pytest.raises(GridError, match="too coarse"):
        build_fine_grid((0, 0.001, 0.002, 10), 40)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.05, 5.0), min_size=1, max_size=5), st.integers(0, 200))
def test_grid_invariants(widths, extra):
    cuts = np.concatenate(([0.0], np.cumsum(widths)))
    bins = 10 * len(widths) + extra
    try:
        grid = build_fine_grid(cuts, bins)
    except GridError:
        return
    steps = np.diff(grid.edges)
    assert np.max(np.abs(steps / grid.delta - 1)) < 1e-12
    np.testing.assert_array_equal(grid.composition.sum(axis=0), 1)
    assert grid.composition.sum() == grid.I
    for j in range(grid.J):  # contiguous runs of ones
        ones = np.flatnonzero(grid.composition[j])
        np.testing.assert_array_equal(ones, np.arange(ones[0], ones[-1] + 1))
    assert set(grid.class_cuts) <= set(grid.edges)


def test_basis_matches_cox_de_boor_at_knots_and_random_points():
    grid = build_fine_grid((0, 2, 5), 100)
    basis = build_basis(grid, 12)
    inner = basis.knots[(basis.knots >= 0) & (basis.knots < 5)]
    x = np.concatenate([inner, np.random.default_rng(0).uniform(0, 5, 30)])
    got = basis.evaluate(x)
    want = np.array([[cox_de_boor(v, basis.knots, k, 3) for k in range(basis.K)] for v in x])
    np.testing.assert_allclose(got, want, atol=1e-13)
    want_mid = np.array([[cox_de_boor(v, basis.knots, k, 3) for k in range(basis.K)]
                         for v in grid.midpoints])
    np.testing.assert_allclose(basis.B, want_mid, atol=1e-13)


def test_partition_of_unity_and_local_support():
    grid = build_fine_grid((-1, 1, 3.5, 6), 308)
    basis = build_basis(grid, 25)
    x = np.random.default_rng(1).uniform(-1, 6, 1000)
    Bx = basis.evaluate(x)
    np.testing.assert_allclose(Bx.sum(axis=1), 1.0, atol=1e-10)
    assert np.all((Bx > 0).sum(axis=1) <= 4)
    for k in range(basis.K):
        lo, hi = basis.knots[k], basis.knots[k + 4]
        assert np.all(Bx[(x < lo) | (x > hi), k] == 0)
    np.testing.assert_allclose(basis.B.sum(axis=1), 1.0, atol=1e-10)


def test_basis_errors():
    grid = build_fine_grid((0, 1), 20)
    with pytest.raises(ValueError):
        build_basis(grid, 3)
    with pytest.raises(ValueError):
        build_basis(grid, 21)


def test_penalty_examples():
    D = build_penalty(6, 2).D
    np.testing.assert_array_equal(D[0], [1, -2, 1, 0, 0, 0])
    np.testing.assert_array_equal(build_penalty(4, 1).D,
                                  [[-1, 1, 0, 0], [0, -1, 1, 0], [0, 0, -1, 1]])
    with pytest.raises(ValueError):
        build_penalty(3, 3)


@pytest.mark.parametrize("r", [1, 2, 3])
def test_penalty_null_space_and_rank(r):
    K = 25
    pen = build_penalty(K, r)
    assert pen.D.shape == (K - r, K)
    t = np.arange(1, K + 1, dtype=float)
    for d in range(r):
        assert np.linalg.norm(pen.D @ t ** d) < 1e-12 * max(1.0, K ** d)
    np.testing.assert_array_equal(pen.P, pen.P.T)
    eig = np.linalg.eigvalsh(pen.P)
    assert eig.min() > -1e-10
    assert np.linalg.matrix_rank(pen.P) == K - r
