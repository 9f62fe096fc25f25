"""Tests for subspace arithmetic, pole placement and RK4."""

import numpy as np
import pytest

from mg_sentinel.errors import (
    DimensionError,
    IntegrationError,
    PlacementError,
    SynthesisError,
)
from mg_sentinel.numerics import (
    SubspaceBasis,
    eigenvalues,
    invariant_friend,
    kernel_basis,
    max_controlled_invariant,
    place_poles,
    rk4_step,
    spectral_abscissa,
    spectrum_distance,
    subspace_intersect,
    subspace_sum,
    unobservable_subspace,
)
from tests.conftest import TOY_A, TOY_B, TOY_C, TOY_DIRECTION


def _same_span(u: SubspaceBasis, v: SubspaceBasis) -> bool:
    return u.dim == v.dim and np.allclose(u.projector(), v.projector(), atol=1e-9)


@pytest.mark.parametrize(
    ("matrix", "expected"),
    [
        (np.eye(3), [1, 1, 1]),
        (np.diag([1.0, 2.0, 3.0]), [1, 2, 3]),
        (TOY_A, [complex(-0.05, -np.sqrt(0.1975)), complex(-0.05, np.sqrt(0.1975))]),
    ],
)
def test_eigenvalues(matrix: np.ndarray, expected: list[complex]) -> None:
    """Test eigenvalues against known spectra, sorted by real then imaginary."""
    np.testing.assert_allclose(eigenvalues(matrix), expected, atol=1e-10)


def test_toy_eigenvalues_solve_characteristic_polynomial() -> None:
    """Test that the toy system has eigenvalues -0.05 +- 0.4444i."""
    vals = eigenvalues(TOY_A)
    for lam in vals:
        assert abs(lam**2 + 0.1 * lam + 0.2) < 1e-12
    assert abs(vals[1].imag - 0.4444) < 1e-4


def test_eigenvalues_rejects_non_square() -> None:
    """Test that a non-square matrix raises a dimension error."""
    with pytest.raises(DimensionError):
        eigenvalues(np.ones((2, 3)))


def test_spectral_abscissa() -> None:
    """Test the largest real part."""
    assert spectral_abscissa(np.diag([-1.0, -3.0])) == pytest.approx(-1.0)


@pytest.mark.parametrize(
    ("matrix", "expected_dim"),
    [
        (np.array([[1.0, 0.0]]), 1),
        (np.array([[1.0, 2.0], [3.0, 4.0]]), 0),
        (np.array([[1.0, 1.0], [2.0, 2.0]]), 1),
    ],
)
def test_kernel_basis(matrix: np.ndarray, expected_dim: int) -> None:
    """Test null space dimension and that every basis vector is annihilated."""
    basis = kernel_basis(matrix)
    assert basis.dim == expected_dim
    assert np.allclose(matrix @ basis.vectors, 0.0, atol=1e-9)


def test_kernel_of_rank_one_matrix() -> None:
    """Test that ker [[1,1],[2,2]] is spanned by (1,-1)/sqrt(2)."""
    basis = kernel_basis([[1.0, 1.0], [2.0, 2.0]])
    assert _same_span(basis, SubspaceBasis.span([1.0, -1.0]))


def test_subspace_basis_rejects_non_orthonormal() -> None:
    """Test that a basis must have orthonormal columns."""
    with pytest.raises(DimensionError):
        SubspaceBasis(np.array([[1.0, 1.0], [0.0, 1.0]]))


def test_subspace_intersect_cases() -> None:
    """Test absorbing, disjoint and overlapping intersections."""
    e = np.eye(3)
    v = SubspaceBasis.span(np.array([[1.0], [2.0], [0.0]]))
    assert _same_span(subspace_intersect(SubspaceBasis.full(3), v), v)

    e1 = SubspaceBasis.span(np.eye(2)[:, [0]])
    e2 = SubspaceBasis.span(np.eye(2)[:, [1]])
    assert subspace_intersect(e1, e2).is_empty

    left = SubspaceBasis.span(e[:, [0, 1]])
    right = SubspaceBasis.span(e[:, [1, 2]])
    assert _same_span(subspace_intersect(left, right), SubspaceBasis.span(e[:, [1]]))


def test_subspace_intersect_ambient_mismatch() -> None:
    """Test that subspaces of different spaces cannot be intersected."""
    with pytest.raises(DimensionError):
        subspace_intersect(SubspaceBasis.full(2), SubspaceBasis.full(3))


def test_subspace_sum() -> None:
    """Test that the sum of two coordinate lines is the plane."""
    e = np.eye(3)
    total = subspace_sum(SubspaceBasis.span(e[:, 0]), SubspaceBasis.span(e[:, 2]))
    assert total.dim == 2
    assert total.contains(e[:, [0, 2]])


@pytest.mark.parametrize(
    ("a", "c", "expected"),
    [
        (TOY_A, TOY_C, SubspaceBasis.empty(2)),
        (TOY_A, np.zeros((1, 2)), SubspaceBasis.full(2)),
        (np.diag([1.0, 2.0]), np.array([[1.0, 0.0]]), SubspaceBasis.span([0.0, 1.0])),
    ],
)
def test_unobservable_subspace(
    a: np.ndarray, c: np.ndarray, expected: SubspaceBasis
) -> None:
    """Test the unobservable subspace on observable, blind and diagonal pairs."""
    result = unobservable_subspace(a, c)
    assert _same_span(result, expected)
    if not result.is_empty:
        assert np.allclose(c @ result.vectors, 0.0, atol=1e-9)
        assert result.contains(a @ result.vectors)


def test_unobservable_subspace_dimension_mismatch() -> None:
    """Test that C must match the state dimension."""
    with pytest.raises(DimensionError):
        unobservable_subspace(TOY_A, np.ones((1, 3)))


def test_max_controlled_invariant_cases() -> None:
    """Test the full-space, full-actuation and toy cases."""
    full = SubspaceBasis.full(2)
    assert max_controlled_invariant(TOY_A, TOY_B, full).dim == 2

    k = SubspaceBasis.span([1.0, 1.0])
    assert _same_span(max_controlled_invariant(TOY_A, np.eye(2), k), k)

    ker_c = kernel_basis(TOY_C)
    assert max_controlled_invariant(TOY_A, TOY_B, ker_c).is_empty


def test_max_controlled_invariant_is_controlled_invariant() -> None:
    """Test A V within V + Im B on a random instance."""
    rng = np.random.default_rng(3)
    a = rng.standard_normal((4, 4))
    b = rng.standard_normal((4, 1))
    k = SubspaceBasis.span(rng.standard_normal((4, 3)))
    v = max_controlled_invariant(a, b, k)
    if not v.is_empty:
        target = subspace_sum(v, SubspaceBasis.span(b))
        assert target.contains(a @ v.vectors, tol=1e-8)
        assert k.contains(v.vectors)


def test_max_controlled_invariant_is_monotone() -> None:
    """Test that shrinking K never enlarges the result."""
    rng = np.random.default_rng(7)
    for _ in range(10):
        a = rng.standard_normal((4, 4))
        b = rng.standard_normal((4, 1))
        pool = rng.standard_normal((4, 3))
        big = SubspaceBasis.span(pool)
        small = SubspaceBasis.span(pool[:, :2])
        v_big = max_controlled_invariant(a, b, big)
        v_small = max_controlled_invariant(a, b, small)
        assert v_small.dim <= v_big.dim
        if not v_small.is_empty:
            assert v_big.contains(v_small.vectors, tol=1e-8)


def test_known_friend_makes_toy_direction_invariant() -> None:
    """Test (A + B_a Q) w = -2 w for a known friend and direction."""
    q = np.array([[0.8, -1.6], [0.4, -0.8]])
    b_a = np.array([[0.0, 0.0], [1.0, 0.0]])
    w = np.array([-1.0, 2.0])
    np.testing.assert_allclose((TOY_A + b_a @ q) @ w, [2.0, -4.0], atol=1e-12)
    image = (TOY_A + b_a @ q) @ TOY_DIRECTION
    np.testing.assert_allclose(image, -2.0 * TOY_DIRECTION, atol=1e-9)


def test_invariant_friend_on_toy_direction() -> None:
    """Test that the computed friend keeps span{(-1, 2)} invariant."""
    v = SubspaceBasis.span([-1.0, 2.0])
    q = invariant_friend(TOY_A, TOY_B, v)
    image = (TOY_A + TOY_B @ q) @ v.vectors
    assert v.contains(image, tol=1e-8)
    assert np.allclose(image, -2.0 * v.vectors, atol=1e-9)


def test_invariant_friend_full_space() -> None:
    """Test that the whole space needs no correction."""
    q = invariant_friend(TOY_A, TOY_B, SubspaceBasis.full(2))
    assert np.allclose(q, 0.0)


def test_invariant_friend_random_instance() -> None:
    """Test invariance by direct multiplication on a random 3x3 system."""
    rng = np.random.default_rng(11)
    a = rng.standard_normal((3, 3))
    b = rng.standard_normal((3, 2))
    v = SubspaceBasis.span(rng.standard_normal((3, 1)))
    q = invariant_friend(a, b, v)
    assert v.contains((a + b @ q) @ v.vectors, tol=1e-8)


def test_invariant_friend_infeasible() -> None:
    """Test that an unactuated, non-invariant direction is rejected."""
    with pytest.raises(SynthesisError):
        invariant_friend(TOY_A, np.zeros((2, 1)), SubspaceBasis.span([1.0, 0.0]))


@pytest.mark.parametrize(
    ("a", "c", "desired", "expected"),
    [
        ([[1.0]], [[1.0]], [-2.0], [[3.0]]),
        ([[0.0, 1.0], [0.0, 0.0]], [[1.0, 0.0]], [-1.0, -1.0], [[2.0], [1.0]]),
    ],
)
def test_place_poles_known_gains(
    a: list[list[float]],
    c: list[list[float]],
    desired: list[float],
    expected: list[list[float]],
) -> None:
    """Test hand-computed observer gains."""
    np.testing.assert_allclose(place_poles(a, c, desired), expected, atol=1e-8)


def test_place_poles_round_trip() -> None:
    """Test that the achieved spectrum matches a requested complex spectrum."""
    rng = np.random.default_rng(5)
    a = rng.standard_normal((4, 4))
    c = rng.standard_normal((2, 4))
    desired = [-1 + 2j, -1 - 2j, -3.0, -4.0]
    gain = place_poles(a, c, desired)
    assert spectrum_distance(eigenvalues(a - gain @ c), desired) < 1e-6


def test_place_poles_rejects_unpaired_complex_pole() -> None:
    """Test that a complex pole without its conjugate cannot be placed."""
    with pytest.raises(PlacementError):
        place_poles(TOY_A, TOY_C, [-1 + 1j, -2.0])


def test_rk4_constant_field() -> None:
    """Test that a zero field leaves the state unchanged."""
    state = np.array([1.0, -2.0])
    out = rk4_step(lambda _t, x: np.zeros_like(x), state, 0.0, 0.1)
    np.testing.assert_array_equal(out, state)


def test_rk4_exponential_decay() -> None:
    """Test one step of x' = -x against exp(-0.1)."""
    out = rk4_step(lambda _t, x: -x, np.array([1.0]), 0.0, 0.1)
    assert out[0] == pytest.approx(np.exp(-0.1), abs=1e-6)
    assert out[0] == pytest.approx(0.9048375, abs=1e-7)


def test_rk4_matches_taylor_truncation() -> None:
    """Test that RK4 on x' = lam x equals the degree-4 Taylor polynomial."""
    lam, h = -3.0, 0.05
    z = lam * h
    taylor = 1 + z + z**2 / 2 + z**3 / 6 + z**4 / 24
    out = rk4_step(lambda _t, x: lam * x, np.array([1.0]), 0.0, h)
    assert out[0] == pytest.approx(taylor, rel=1e-12)


def test_rk4_pure_time_field() -> None:
    """Test exactness for x' = 1."""
    h = 0.3
    out = rk4_step(lambda _t, x: np.ones_like(x), np.array([0.0]), 0.0, h)
    assert out[0] == pytest.approx(h)


def test_rk4_non_finite_stage() -> None:
    """Test that a non-finite stage raises an integration error with the time."""
    with pytest.raises(IntegrationError) as exc_info:
        rk4_step(lambda _t, x: x * np.inf, np.array([1.0]), 0.25, 0.1)
    assert exc_info.value.t == 0.25
