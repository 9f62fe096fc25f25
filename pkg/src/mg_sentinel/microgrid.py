"""Microgrid assembly: communication digraph, electrical network, plant stack."""

import logging
from collections.abc import Sequence
from functools import cached_property

import numpy as np
import numpy.typing as npt
import scipy.sparse
import scipy.sparse.csgraph
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .dg_model import (
    DgParams,
    I_OD,
    I_OQ,
    DELTA,
    N_INPUTS,
    N_STATES,
    OMEGA_N,
    P,
    Q,
    U_NBR_ACTIVE,
    U_NBR_OMEGA,
    U_NBR_REACTIVE,
    U_NBR_VOLTAGE,
    U_OMEGA_COM,
    U_REF_OMEGA,
    U_REF_VOLTAGE,
    U_VBD,
    U_VBQ,
    V_OD,
    build_matrices,
    nonlinear_f_batch,
)
from .errors import NetworkError, ReductionError
from .numerics import ComplexArray, FloatArray

logger = logging.getLogger(__name__)

# Condition number above which a network matrix counts as singular
SINGULAR_COND = 1e12


class LineParams(BaseModel):
    """Series R-L line between two buses (1-based bus numbers)."""

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    from_bus: int = Field(ge=1, alias="from")
    to_bus: int = Field(ge=1, alias="to")
    r: float = Field(ge=0, description="resistance, Ω")
    l: float = Field(ge=0, description="inductance, H")  # noqa: E741

    @model_validator(mode="after")
    def validate_distinct_ends(self) -> "LineParams":
        """Validate that a line joins two different buses."""
        if self.from_bus == self.to_bus:
            raise ValueError("line must join two different buses")
        if self.r == 0 and self.l == 0:
            raise ValueError("line impedance must be nonzero")
        return self


class LoadParams(BaseModel):
    """Constant-impedance load at a bus (1-based)."""

    model_config = ConfigDict(frozen=True)

    bus: int = Field(ge=1)
    r: float = Field(ge=0, description="resistance, Ω")
    x: float = Field(description="reactance at nominal frequency, Ω")

    @model_validator(mode="after")
    def validate_nonzero(self) -> "LoadParams":
        """Validate that the load impedance is nonzero."""
        if self.r == 0 and self.x == 0:
            raise ValueError("load impedance must be nonzero")
        return self


class MicrogridConfig(BaseModel):
    """DG set, digraph, network and references of one islanded microgrid.

    Bus ``i`` for ``i <= len(dgs)`` hosts DG ``i``; higher bus numbers are
    passive buses eliminated by Kron reduction.
    """

    model_config = ConfigDict(frozen=True)

    dgs: list[DgParams]
    adjacency: list[list[float]]
    pinning: list[float]
    lines: list[LineParams] = Field(default_factory=list)
    loads: list[LoadParams] = Field(default_factory=list)
    v_ref: float = Field(default=380.0, gt=0, description="1 p.u. voltage, V")
    omega_ref: float = Field(default=314.16, gt=0)
    omega_base: float = Field(default=314.16, gt=0)
    leader: int = Field(default=1, ge=1, description="DG providing ω_com")
    line_limit: float = Field(default=40.0, gt=0, description="l_max, A")
    v_min: float = Field(default=0.95, gt=0, description="lower band, p.u.")
    v_max: float = Field(default=1.05, gt=0, description="upper band, p.u.")

    @field_validator("dgs")
    @classmethod
    def validate_dgs(cls, v: list[DgParams]) -> list[DgParams]:
        """Validate that at least one DG is present."""
        if not v:
            raise ValueError("at least one DG is required")
        return v

    @field_validator("pinning")
    @classmethod
    def validate_pinning(cls, v: list[float]) -> list[float]:
        """Validate nonnegative gains with the leader pinned."""
        if any(g < 0 for g in v):
            raise ValueError("pinning gains must be nonnegative")
        if not any(g > 0 for g in v):
            raise ValueError("at least one DG must be pinned (g > 0)")
        return v

    @model_validator(mode="after")
    def validate_shapes(self) -> "MicrogridConfig":
        """Validate digraph shape, bus references and connectivity."""
        n = len(self.dgs)
        if len(self.adjacency) != n or any(len(row) != n for row in self.adjacency):
            raise ValueError(f"adjacency must be {n}x{n}")
        for i, row in enumerate(self.adjacency):
            if row[i] != 0:
                raise ValueError("adjacency diagonal must be zero")
            if any(a < 0 for a in row):
                raise ValueError("adjacency weights must be nonnegative")
        if len(self.pinning) != n:
            raise ValueError(f"pinning needs {n} entries")
        if self.leader > n:
            raise ValueError(f"leader {self.leader} is not a DG")
        if self.v_min >= self.v_max:
            raise ValueError("v_min must be below v_max")
        buses = self.n_buses
        for line in self.lines:
            if max(line.from_bus, line.to_bus) > buses:
                bad = max(line.from_bus, line.to_bus)
                raise ValueError(f"line references unknown bus {bad}")
        if buses > 1:
            rows = [line.from_bus - 1 for line in self.lines]
            cols = [line.to_bus - 1 for line in self.lines]
            graph = scipy.sparse.coo_matrix(
                (np.ones(len(rows)), (rows, cols)), shape=(buses, buses)
            )
            count, _ = scipy.sparse.csgraph.connected_components(graph, directed=False)
            if count != 1:
                raise ValueError("line graph must connect all buses")
        return self

    @property
    def n_dg(self) -> int:
        """Number of DGs."""
        return len(self.dgs)

    @property
    def n_buses(self) -> int:
        """Number of buses including passive ones."""
        referenced = [self.n_dg]
        referenced += [max(line.from_bus, line.to_bus) for line in self.lines]
        referenced += [load.bus for load in self.loads]
        return max(referenced)

    @property
    def leader_index(self) -> int:
        """0-based index of the leader DG."""
        return self.leader - 1

    def adjacency_matrix(self) -> FloatArray:
        """Adjacency weights as an array."""
        return np.asarray(self.adjacency, dtype=float)


def admittance_matrix(cfg: MicrogridConfig) -> ComplexArray:
    """Bus admittance matrix with lines and loads at the base frequency."""
    n = cfg.n_buses
    y = np.zeros((n, n), dtype=complex)
    for line in cfg.lines:
        i, j = line.from_bus - 1, line.to_bus - 1
        y_line = 1.0 / complex(line.r, cfg.omega_base * line.l)
        y[i, i] += y_line
        y[j, j] += y_line
        y[i, j] -= y_line
        y[j, i] -= y_line
    for load in cfg.loads:
        y[load.bus - 1, load.bus - 1] += 1.0 / complex(load.r, load.x)
    return y


def kron_reduce(y: npt.ArrayLike, keep: Sequence[int]) -> ComplexArray:
    """Schur complement Y_kk − Y_ke Y_ee⁻¹ Y_ek over the buses in ``keep``."""
    ymat = np.asarray(y, dtype=complex)
    n = ymat.shape[0]
    kept = list(keep)
    kept_set = set(kept)
    elim = [i for i in range(n) if i not in kept_set]
    if not elim:
        return ymat[np.ix_(kept, kept)].copy()
    y_ee = ymat[np.ix_(elim, elim)]
    if np.linalg.cond(y_ee) > SINGULAR_COND:
        raise ReductionError("eliminated admittance block is singular")
    y_ke = ymat[np.ix_(kept, elim)]
    y_ek = ymat[np.ix_(elim, kept)]
    return ymat[np.ix_(kept, kept)] - y_ke @ np.linalg.solve(y_ee, y_ek)


class NetworkSolver:
    """Quasi-static phasor solution of the network seen from the DG buses."""

    def __init__(self, cfg: MicrogridConfig) -> None:
        """Precompute the reduced impedance matrix."""
        self.cfg = cfg
        self.y_bus = admittance_matrix(cfg)
        self.y_red = kron_reduce(self.y_bus, range(cfg.n_dg))
        if np.linalg.cond(self.y_red) > SINGULAR_COND:
            raise NetworkError("reduced bus admittance is singular")
        self.z_red = np.linalg.inv(self.y_red)

    def common_voltages(self, i_common: ComplexArray) -> ComplexArray:
        """DG bus voltages in the common frame for DG current injections."""
        return np.asarray(self.z_red @ i_common, dtype=complex)

    def full_voltages(self, i_common: ComplexArray) -> ComplexArray:
        """Voltages at every bus, passive ones included."""
        inj = np.zeros(self.cfg.n_buses, dtype=complex)
        inj[: self.cfg.n_dg] = i_common
        return np.asarray(np.linalg.solve(self.y_bus, inj), dtype=complex)

    def bus_voltages(
        self, i_od: FloatArray, i_oq: FloatArray, delta: FloatArray
    ) -> FloatArray:
        """Bus voltages (v_bd, v_bq) in each DG's local frame.

        Args:
            i_od: d-axis output currents, shape (N,).
            i_oq: q-axis output currents, shape (N,).
            delta: DG angles against the common frame, shape (N,).

        Returns:
            Array of shape (N, 2).
        """
        rot = np.exp(1j * delta)
        v = self.common_voltages((i_od + 1j * i_oq) * rot) * np.conj(rot)
        return np.column_stack([v.real, v.imag])


def solve_bus_voltages(
    i_o: npt.ArrayLike, delta: npt.ArrayLike, cfg: MicrogridConfig
) -> FloatArray:
    """Local-frame bus voltages for per-DG dq output currents of shape (N, 2)."""
    currents = np.asarray(i_o, dtype=float).reshape(cfg.n_dg, 2)
    solver = NetworkSolver(cfg)
    return solver.bus_voltages(
        currents[:, 0], currents[:, 1], np.asarray(delta, dtype=float)
    )


def broadcast_data(
    outputs: FloatArray, m_p: FloatArray, n_q: FloatArray
) -> FloatArray:
    """Per-DG data shared with neighbors: ω, m_P·P, v_od, n_Q·Q.

    Args:
        outputs: Measured outputs or full states; the columns are looked up by
            state index when the width is 15 and by output index otherwise.
        m_p: Active droops, shape (N,).
        n_q: Reactive droops, shape (N,).
    """
    if outputs.shape[-1] == N_STATES:
        p, q, v_od, omega_n = (outputs[..., i] for i in (P, Q, V_OD, OMEGA_N))
    else:
        p, q, v_od, omega_n = (outputs[..., i] for i in (0, 1, 4, 8))
    return np.stack([omega_n - m_p * p, m_p * p, v_od, n_q * q], axis=-1)


class MicrogridPlant:
    """Stacked linear/bilinear model of all DGs plus the network."""

    def __init__(self, cfg: MicrogridConfig) -> None:
        """Build per-DG matrices and the network solver."""
        self.cfg = cfg
        self.n = cfg.n_dg
        self.adjacency = cfg.adjacency_matrix()
        self.pinning = np.asarray(cfg.pinning, dtype=float)
        mats = [
            build_matrices(p, self.adjacency[i], self.pinning[i])
            for i, p in enumerate(cfg.dgs)
        ]
        self.a = np.stack([m[0] for m in mats])
        self.b = np.stack([m[1] for m in mats])
        self.c = mats[0][2]
        self.m_p = np.array([p.m_p for p in cfg.dgs])
        self.n_q = np.array([p.n_q for p in cfg.dgs])
        self.omega_c = np.array([p.omega_c for p in cfg.dgs])
        self.c_freq = np.array([p.c_freq for p in cfg.dgs])
        self.c_volt = np.array([p.c_volt for p in cfg.dgs])
        self.leader = cfg.leader_index
        logger.debug("plant built with %d DGs", self.n)

    @cached_property
    def network(self) -> NetworkSolver:
        """Network solver, built on first use."""
        return NetworkSolver(self.cfg)

    def bus_voltages(self, x: FloatArray) -> FloatArray:
        """Local-frame bus voltages for stacked states (N, 15)."""
        return self.network.bus_voltages(x[:, I_OD], x[:, I_OQ], x[:, DELTA])

    def inputs(
        self,
        x: FloatArray,
        v_b: FloatArray,
        received: FloatArray | None = None,
    ) -> FloatArray:
        """Input vectors (N, 9) per the secondary consensus protocol.

        Args:
            x: Stacked true states (N, 15).
            v_b: Local bus voltages (N, 2).
            received: Optional per-receiver neighbor data of shape (N, 4)
                already aggregated over incoming edges (Σ a_ij·data_j); when
                omitted the true broadcast of every DG is used.
        """
        if received is None:
            received = self.adjacency @ broadcast_data(x, self.m_p, self.n_q)
        u = np.zeros((self.n, N_INPUTS))
        lead = x[self.leader]
        u[:, U_OMEGA_COM] = lead[OMEGA_N] - self.m_p[self.leader] * lead[P]
        u[:, U_VBD] = v_b[:, 0]
        u[:, U_VBQ] = v_b[:, 1]
        u[:, U_NBR_OMEGA] = self.c_freq * received[:, 0]
        u[:, U_REF_OMEGA] = self.c_freq * self.pinning * self.cfg.omega_ref
        u[:, U_NBR_ACTIVE] = self.c_freq * received[:, 1]
        u[:, U_NBR_VOLTAGE] = self.c_volt * received[:, 2]
        u[:, U_REF_VOLTAGE] = self.c_volt * self.pinning * self.cfg.v_ref
        u[:, U_NBR_REACTIVE] = self.c_volt * received[:, 3]
        return u

    def derivative(self, x: FloatArray, u: FloatArray) -> FloatArray:
        """Stacked A x + f(x) + B u for states (N, 15) and inputs (N, 9)."""
        lin = np.einsum("nij,nj->ni", self.a, x) + np.einsum("nij,nj->ni", self.b, u)
        return lin + nonlinear_f_batch(x, self.m_p, self.omega_c)

    def closed_loop(self, x: FloatArray) -> FloatArray:
        """Attack-free derivative with the network and digraph closed."""
        return self.derivative(x, self.inputs(x, self.bus_voltages(x)))


def assemble_u(
    i: int, states: FloatArray, cfg: MicrogridConfig, v_b: npt.ArrayLike
) -> FloatArray:
    """Input vector of DG ``i`` (0-based) from all DG states and its bus voltage."""
    plant = MicrogridPlant(cfg)
    vb = np.zeros((cfg.n_dg, 2))
    vb[i] = np.asarray(v_b, dtype=float)
    return plant.inputs(np.asarray(states, dtype=float), vb)[i]
