"""Tests for neighbor aggregation, the network solution and Kron reduction."""

import numpy as np
import pytest
from pydantic import ValidationError

from mg_sentinel.dg_model import (
    N_STATES,
    OMEGA_N,
    P,
    U_NBR_ACTIVE,
    U_NBR_OMEGA,
    U_NBR_REACTIVE,
    U_NBR_VOLTAGE,
    U_OMEGA_COM,
    U_REF_OMEGA,
    U_REF_VOLTAGE,
    DgParams,
)
from mg_sentinel.errors import NetworkError, ReductionError
from mg_sentinel.microgrid import (
    LineParams,
    LoadParams,
    MicrogridConfig,
    MicrogridPlant,
    NetworkSolver,
    admittance_matrix,
    assemble_u,
    broadcast_data,
    kron_reduce,
    solve_bus_voltages,
)
from mg_sentinel.numerics import FloatArray
from tests.conftest import single_dg_grid


def _two_dg_grid(dg: DgParams, adjacency: list[list[float]]) -> MicrogridConfig:
    return MicrogridConfig(
        dgs=[dg, dg],
        adjacency=adjacency,
        pinning=[1.0, 0.0],
        lines=[LineParams.model_validate({"from": 1, "to": 2, "r": 0.2, "l": 3e-4})],
        loads=[LoadParams(bus=1, r=30.0, x=15.0), LoadParams(bus=2, r=30.0, x=15.0)],
    )


class TestAssembleU:
    """Test the secondary-control input vector."""

    def test_isolated_dg_has_no_neighbor_terms(self, dg1: DgParams) -> None:
        """Test that an unpinned DG without in-edges gets zero aggregates."""
        cfg = _two_dg_grid(dg1, [[0.0, 0.0], [0.0, 0.0]])
        states = np.random.default_rng(0).standard_normal((2, N_STATES))
        u = assemble_u(1, states, cfg, [0.0, 0.0])
        for idx in (U_NBR_OMEGA, U_REF_OMEGA, U_NBR_ACTIVE, U_NBR_VOLTAGE,
                    U_REF_VOLTAGE, U_NBR_REACTIVE):
            assert u[idx] == 0.0

    def test_single_neighbor_frequency(self, dg1: DgParams) -> None:
        """Test u4 = c_f * omega_j = 9424.8 for one neighbor at 314.16."""
        cfg = _two_dg_grid(dg1, [[0.0, 0.0], [1.0, 0.0]])
        states = np.zeros((2, N_STATES))
        states[0, OMEGA_N] = 314.16
        u = assemble_u(1, states, cfg, [0.0, 0.0])
        assert u[U_NBR_OMEGA] == pytest.approx(9424.8)

    def test_pinned_leader_reference_terms(self, dg1: DgParams) -> None:
        """Test u5 = c_f g omega_ref and u8 = c_v g v_ref for the leader."""
        cfg = _two_dg_grid(dg1, [[0.0, 0.0], [1.0, 0.0]])
        u = assemble_u(0, np.zeros((2, N_STATES)), cfg, [0.0, 0.0])
        assert u[U_REF_OMEGA] == pytest.approx(30 * 314.16)
        assert u[U_REF_VOLTAGE] == pytest.approx(30 * 380.0)

    def test_common_frequency_is_leader(self, dg1: DgParams) -> None:
        """Test u1 = omega_n1 - m_P1 P_1 for every DG."""
        cfg = _two_dg_grid(dg1, [[0.0, 1.0], [1.0, 0.0]])
        states = np.zeros((2, N_STATES))
        states[0, OMEGA_N] = 314.0
        states[0, P] = 1000.0
        states[1, OMEGA_N] = 300.0
        for i in (0, 1):
            u = assemble_u(i, states, cfg, [0.0, 0.0])
            assert u[U_OMEGA_COM] == pytest.approx(314.0 - dg1.m_p * 1000.0)

    def test_broadcast_data_columns(self) -> None:
        """Test the shared (omega, m_P P, v_od, n_Q Q) per DG."""
        x = np.zeros((1, N_STATES))
        x[0, [0, 1, 8, 13]] = [100.0, 50.0, 380.0, 314.0]
        out = broadcast_data(x, np.array([0.01]), np.array([0.02]))
        np.testing.assert_allclose(out, [[313.0, 1.0, 380.0, 1.0]])


class TestNetwork:
    """Test the quasi-static network solution."""

    def test_single_bus_ohms_law(self, dg1: DgParams) -> None:
        """Test 1 A into a 30 + 15j load gives 30 + 15j V."""
        cfg = single_dg_grid(dg1)
        v = solve_bus_voltages([[1.0, 0.0]], [0.0], cfg)
        np.testing.assert_allclose(v, [[30.0, 15.0]], atol=1e-12)

    def test_single_bus_frame_rotation(self, dg1: DgParams) -> None:
        """Test that a rotated DG frame sees the same local voltage."""
        cfg = single_dg_grid(dg1)
        v = solve_bus_voltages([[1.0, 0.0]], [np.pi / 2], cfg)
        np.testing.assert_allclose(v, [[30.0, 15.0]], atol=1e-12)

    def test_zero_injection(self, grid: MicrogridConfig) -> None:
        """Test zero currents give zero voltages."""
        v = solve_bus_voltages(np.zeros((4, 2)), np.zeros(4), grid)
        np.testing.assert_array_equal(v, 0.0)

    def test_stiff_line_equalizes_voltages(self, dg1: DgParams) -> None:
        """Test that a near-zero impedance line ties two buses together."""
        cfg = MicrogridConfig(
            dgs=[dg1, dg1],
            adjacency=[[0.0, 0.0], [1.0, 0.0]],
            pinning=[1.0, 0.0],
            lines=[LineParams.model_validate({"from": 1, "to": 2, "r": 1e-9, "l": 0})],
            loads=[LoadParams(bus=1, r=30, x=15), LoadParams(bus=2, r=30, x=15)],
        )
        v = solve_bus_voltages([[10.0, 0.0], [0.0, 0.0]], [0.0, 0.0], cfg)
        np.testing.assert_allclose(v[0], v[1], atol=1e-6)

    def test_no_load_is_singular(self, dg1: DgParams) -> None:
        """Test that a DG bus with nothing attached cannot be solved."""
        cfg = single_dg_grid(dg1, loads=[])
        with pytest.raises(NetworkError):
            NetworkSolver(cfg)

    def test_power_balance(self, grid: MicrogridConfig) -> None:
        """Test DG injection equals load consumption plus line losses."""
        rng = np.random.default_rng(1)
        solver = NetworkSolver(grid)
        for _ in range(20):
            i_inj = rng.standard_normal(4) * 20 + 1j * rng.standard_normal(4) * 20
            v = solver.full_voltages(i_inj)
            injected = np.sum(v[:4] * np.conj(i_inj))
            consumed = sum(
                abs(v[ld.bus - 1]) ** 2 / np.conj(complex(ld.r, ld.x))
                for ld in grid.loads
            )
            for line in grid.lines:
                z = complex(line.r, grid.omega_base * line.l)
                drop = v[line.from_bus - 1] - v[line.to_bus - 1]
                consumed += abs(drop) ** 2 / np.conj(z)
            assert abs(injected - consumed) <= 1e-6 * abs(injected)

    def test_reduced_and_full_voltages_agree(self, grid: MicrogridConfig) -> None:
        """Test Kron-reduced voltages match the full solve at DG buses."""
        solver = NetworkSolver(grid)
        i_inj = np.array([10 + 2j, 5 - 1j, 8 + 0j, 3 + 3j])
        np.testing.assert_allclose(
            solver.common_voltages(i_inj), solver.full_voltages(i_inj)[:4], rtol=1e-10
        )


class TestKronReduce:
    """Test Schur-complement reduction."""

    def test_two_bus_chain(self) -> None:
        """Test y12 = 1 with shunt 1 at the eliminated bus gives 0.5."""
        y = np.array([[1.0, -1.0], [-1.0, 2.0]])
        np.testing.assert_allclose(kron_reduce(y, [0]), [[0.5]])

    def test_keep_all_is_identity(self, grid: MicrogridConfig) -> None:
        """Test that nothing changes without eliminated buses."""
        y = admittance_matrix(grid)
        np.testing.assert_array_equal(kron_reduce(y, range(4)), y)

    def test_block_diagonal_untouched(self) -> None:
        """Test that reducing one block leaves a decoupled block alone."""
        y = np.zeros((3, 3), dtype=complex)
        y[0, 0] = 2 - 1j
        y[1:, 1:] = [[1.0, -1.0], [-1.0, 2.0]]
        out = kron_reduce(y, [0, 1])
        assert out[0, 0] == 2 - 1j
        assert out[0, 1] == 0
        assert out[1, 1] == pytest.approx(0.5)

    def test_schur_identity(self) -> None:
        """Test Y_kk - Y_ke Y_ee^-1 Y_ek against an explicit inverse."""
        rng = np.random.default_rng(2)
        y = rng.standard_normal((5, 5)) + 1j * rng.standard_normal((5, 5))
        y += 5 * np.eye(5)
        keep, elim = [0, 2], [1, 3, 4]
        want = y[np.ix_(keep, keep)] - y[np.ix_(keep, elim)] @ np.linalg.inv(
            y[np.ix_(elim, elim)]
        ) @ y[np.ix_(elim, keep)]
        np.testing.assert_allclose(kron_reduce(y, keep), want, atol=1e-10)

    def test_singular_block(self) -> None:
        """Test that a floating eliminated island raises."""
        y = np.zeros((3, 3))
        y[0, 0] = 1.0
        y[1:, 1:] = [[1.0, -1.0], [-1.0, 1.0]]
        with pytest.raises(ReductionError):
            kron_reduce(y, [0])


class TestMicrogridConfig:
    """Test validation of the network description."""

    def test_nonzero_diagonal(self, dg1: DgParams) -> None:
        """Test that self-loops in the digraph are rejected."""
        with pytest.raises(ValidationError, match="diagonal"):
            _two_dg_grid(dg1, [[1.0, 0.0], [1.0, 0.0]])

    def test_no_pinned_dg(self, dg1: DgParams) -> None:
        """Test that some DG must hear the reference."""
        with pytest.raises(ValidationError, match="pinned"):
            single_dg_grid(dg1, pinning=[0.0])

    def test_disconnected_buses(self, dg1: DgParams) -> None:
        """Test that two DGs without a line are rejected."""
        with pytest.raises(ValidationError, match="connect"):
            MicrogridConfig(
                dgs=[dg1, dg1],
                adjacency=[[0.0, 0.0], [1.0, 0.0]],
                pinning=[1.0, 0.0],
                loads=[LoadParams(bus=1, r=30, x=15), LoadParams(bus=2, r=30, x=15)],
            )

    def test_line_to_same_bus(self) -> None:
        """Test that a line must join distinct buses."""
        with pytest.raises(ValidationError):
            LineParams.model_validate({"from": 1, "to": 1, "r": 0.1, "l": 0.0})

    def test_benchmark_counts(self, grid: MicrogridConfig) -> None:
        """Test the bundled network has four DG buses and three lines."""
        assert grid.n_dg == 4
        assert grid.n_buses == 4
        assert len(grid.lines) == 3
        assert grid.leader_index == 0


class TestPlant:
    """Test the stacked plant."""

    def test_equilibrium_is_stationary(
        self, plant: MicrogridPlant, x_eq: FloatArray
    ) -> None:
        """Test that the settled state has a negligible derivative."""
        rate = plant.closed_loop(x_eq)
        assert np.max(np.abs(rate)) < 1e-4 * max(1.0, np.max(np.abs(x_eq)))

    def test_equilibrium_in_operating_band(
        self, plant: MicrogridPlant, x_eq: FloatArray
    ) -> None:
        """Test nominal frequency and voltages near 1 p.u. at equilibrium."""
        omega = x_eq[:, OMEGA_N] - plant.m_p * x_eq[:, P]
        np.testing.assert_allclose(omega, 314.16, atol=0.1)
        assert np.all(np.abs(x_eq[:, 8] / 380.0 - 1.0) < 0.05)
