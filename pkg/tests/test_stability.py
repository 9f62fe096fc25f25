"""Tests for the reduced model, its Jacobians and the decay certificate."""

from collections.abc import Callable

import numpy as np
import pytest

from mg_sentinel.errors import InputError, SingularityError
from mg_sentinel.microgrid import MicrogridPlant
from mg_sentinel.numerics import FloatArray, spectral_abscissa
from mg_sentinel.stability import (
    JacobianBlocks,
    OperatingPoint,
    ReducedState,
    algebraic_residual,
    certify_decay,
    effective_admittance,
    eigen_sets,
    jacobians,
    m_p_matrix,
    operating_point_from_states,
    real_block,
    reduced_derivative,
    reduced_state_matrix,
    solve_algebraic,
    state_matrix,
)


@pytest.fixture(scope="module")
def op(plant: MicrogridPlant, x_eq: FloatArray) -> OperatingPoint:
    """Operating point of the benchmark equilibrium."""
    return operating_point_from_states(plant.cfg, x_eq)


def _numeric_jacobian(
    fn: Callable[[FloatArray], FloatArray], x0: FloatArray
) -> FloatArray:
    cols = []
    for j in range(x0.size):
        h = 1e-6 * max(1.0, abs(float(x0[j])))
        up, down = x0.copy(), x0.copy()
        up[j] += h
        down[j] -= h
        cols.append((fn(up) - fn(down)) / (2 * h))
    return np.column_stack(cols)


def _off_point(op: OperatingPoint) -> ReducedState:
    rng = np.random.default_rng(0)
    x = op.state()
    delta = x.delta.copy()
    delta[op.free_angles] += rng.uniform(-0.01, 0.01, op.n - 1)
    return ReducedState(
        p=x.p * (1 + rng.uniform(-0.05, 0.05, op.n)),
        q=x.q + rng.uniform(-50, 50, op.n),
        delta=delta,
    )


class TestCertifyDecay:
    """Test the Lyapunov decay-rate check."""

    def test_rate_below_slowest_mode(self) -> None:
        """Test diag(-1, -3) certifies 0.9 with a valid witness."""
        a = np.diag([-1.0, -3.0])
        cert = certify_decay(a, 0.9)
        assert cert
        assert cert.margin == pytest.approx(0.1)
        m = cert.witness
        assert m is not None
        assert np.all(np.linalg.eigvalsh(m) > 0)
        lhs = a.T @ m + m @ a + 2 * 0.9 * m
        assert np.all(np.linalg.eigvalsh(lhs) < 0)

    def test_rate_at_slowest_mode(self) -> None:
        """Test diag(-1, -3) does not certify 1.0."""
        cert = certify_decay(np.diag([-1.0, -3.0]), 1.0)
        assert not cert
        assert cert.witness is None
        assert cert.abscissa == pytest.approx(-1.0)

    def test_unstable_matrix(self) -> None:
        """Test that a right-half-plane mode fails even for zero rate."""
        assert not certify_decay([[0.5, 1.0], [0.0, -2.0]])

    def test_negative_rate(self) -> None:
        """Test that the decay rate must be nonnegative."""
        with pytest.raises(InputError, match="nonnegative"):
            certify_decay(np.eye(2) * -1.0, -0.1)


class TestReducedModel:
    """Test the (p, q, delta) model around the benchmark equilibrium."""

    def test_m_p_matrix(self) -> None:
        """Test -m_P1 in the leader column and m_Pi on the diagonal."""
        out = m_p_matrix([1.0, 2.0, 3.0])
        np.testing.assert_array_equal(out, [[-1.0, 2.0, 0.0], [-1.0, 0.0, 3.0]])

    def test_m_p_matrix_other_leader(self) -> None:
        """Test the leader column moves with the leader."""
        out = m_p_matrix([1.0, 2.0, 3.0], leader=1)
        np.testing.assert_array_equal(out, [[1.0, -2.0, 0.0], [0.0, -2.0, 3.0]])

    def test_real_block(self) -> None:
        """Test [[Re, -Im], [Im, Re]] of a 1x1 complex matrix."""
        np.testing.assert_array_equal(real_block([[2 + 3j]]), [[2, -3], [3, 2]])

    def test_singular_network_block(self) -> None:
        """Test that I + Y Z_c = 0 is reported."""
        with pytest.raises(SingularityError):
            effective_admittance(np.array([[1.0 + 0j]]), np.array([-1.0 + 0j]))

    def test_schur_complement(self) -> None:
        """Test Â = f_x − f_z g_z⁻¹ g_x on scalar blocks."""
        blocks = JacobianBlocks(
            fx=np.array([[-1.0]]),
            fz=np.array([[2.0]]),
            gx=np.array([[3.0]]),
            gz=np.array([[4.0]]),
        )
        np.testing.assert_allclose(state_matrix(blocks), [[-2.5]])

    def test_singular_algebraic_block(self) -> None:
        """Test that a singular g_z is reported."""
        zero = np.zeros((1, 1))
        blocks = JacobianBlocks(fx=zero, fz=zero, gx=zero, gz=zero)
        with pytest.raises(SingularityError):
            state_matrix(blocks)

    def test_operating_point_is_equilibrium(self, op: OperatingPoint) -> None:
        """Test zero derivative and zero network residual at the setpoints."""
        x = op.state()
        rate = reduced_derivative(x, op)
        assert np.max(np.abs(rate)) < 1e-6 * max(1.0, float(np.max(np.abs(op.p_opf))))
        g = algebraic_residual(x, op.algebraic(), op)
        scale = float(np.max(np.abs(op.y_red)) * np.max(op.v_opf))
        assert np.max(np.abs(g)) < 1e-9 * max(1.0, scale)
        assert op.delta[op.leader] == 0.0
        assert op.n_x == 3 * op.n - 1

    def test_state_vector_round_trip(self, op: OperatingPoint) -> None:
        """Test stacking drops only the leader angle."""
        x = _off_point(op)
        back = ReducedState.from_vector(x.to_vector(op), op)
        np.testing.assert_array_equal(back.delta, x.delta)
        with pytest.raises(InputError, match="entries"):
            ReducedState.from_vector(np.zeros(3), op)

    def test_jacobians_match_differences(self, op: OperatingPoint) -> None:
        """Test analytic blocks against central differences off the setpoint."""
        x = _off_point(op)
        z = solve_algebraic(x, op)
        vec = x.to_vector(op)
        blocks = jacobians(x, z, op)

        def f_of_x(v: FloatArray) -> FloatArray:
            return reduced_derivative(ReducedState.from_vector(v, op), op, z)

        def f_of_z(zz: FloatArray) -> FloatArray:
            return reduced_derivative(x, op, zz)

        def g_of_x(v: FloatArray) -> FloatArray:
            return algebraic_residual(ReducedState.from_vector(v, op), z, op)

        def g_of_z(zz: FloatArray) -> FloatArray:
            return algebraic_residual(x, zz, op)

        pairs = [
            (blocks.fx, _numeric_jacobian(f_of_x, vec)),
            (blocks.fz, _numeric_jacobian(f_of_z, z)),
            (blocks.gx, _numeric_jacobian(g_of_x, vec)),
            (blocks.gz, _numeric_jacobian(g_of_z, z)),
        ]
        for analytic, numeric in pairs:
            scale = max(1.0, float(np.max(np.abs(numeric))))
            np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-6 * scale)

    def test_state_matrix_matches_closed_differences(self, op: OperatingPoint) -> None:
        """Test A_hat against differences of f with the network solved."""
        vec = op.state().to_vector(op)

        def closed(v: FloatArray) -> FloatArray:
            return reduced_derivative(ReducedState.from_vector(v, op), op)

        numeric = _numeric_jacobian(closed, vec)
        scale = max(1.0, float(np.max(np.abs(numeric))))
        np.testing.assert_allclose(
            reduced_state_matrix(op), numeric, rtol=1e-5, atol=1e-6 * scale
        )

    def test_benchmark_is_stable(self, op: OperatingPoint) -> None:
        """Test the attack-free reduced model is Hurwitz."""
        a_hat = reduced_state_matrix(op)
        assert a_hat.shape == (op.n_x, op.n_x)
        assert spectral_abscissa(a_hat) < 0
        assert certify_decay(a_hat)


class TestEigenSets:
    """Test the tagged eigenvalue export."""

    def test_eigen_sets_tagged(self) -> None:
        """Test one row per eigenvalue with its tag."""
        rows = eigen_sets({"a": np.diag([-1.0, -2.0]), "b": [[0.0, 1.0], [-1.0, 0.0]]})
        assert [tag for tag, _ in rows] == ["a", "a", "b", "b"]
        assert sorted(v.real for tag, v in rows if tag == "a") == [-2.0, -1.0]
        assert sorted(v.imag for tag, v in rows if tag == "b") == pytest.approx(
            [-1.0, 1.0]
        )
