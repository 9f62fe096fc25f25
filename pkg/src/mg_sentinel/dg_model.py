"""Fifteen-state averaged model of one droop-controlled inverter (DG).

State layout (0-based index, 1-based name, unit)::

    0  x1  P        W      filtered active power
    1  x2  Q        var    filtered reactive power
    2  x3  phi_d    V·s    voltage-loop integrator, d axis
    3  x4  phi_q    V·s    voltage-loop integrator, q axis
    4  x5  gamma_d  A·s    current-loop integrator, d axis
    5  x6  gamma_q  A·s    current-loop integrator, q axis
    6  x7  i_ld     A      filter inductor current
    7  x8  i_lq     A
    8  x9  v_od     V      filter capacitor voltage
    9  x10 v_oq     V
    10 x11 i_od     A      output connector current
    11 x12 i_oq     A
    12 x13 delta    rad    angle against the common reference frame
    13 x14 omega_n  rad/s  secondary frequency set point
    14 x15 V_n      V      secondary voltage set point

Input layout (9 entries): omega_com, v_bd, v_bq, c_f·Σa·ω_j, c_f·g·ω_ref,
c_f·Σa·m_Pj·P_j, c_v·Σa·v_odj, c_v·g·v_ref, c_v·Σa·n_Qj·Q_j.
"""

import logging

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, ConfigDict, Field, computed_field, field_validator

from .numerics import FloatArray

logger = logging.getLogger(__name__)

N_STATES = 15
N_INPUTS = 9
N_OUTPUTS = 10

# State indices
P, Q = 0, 1
PHI_D, PHI_Q = 2, 3
GAMMA_D, GAMMA_Q = 4, 5
I_LD, I_LQ = 6, 7
V_OD, V_OQ = 8, 9
I_OD, I_OQ = 10, 11
DELTA = 12
OMEGA_N, V_N = 13, 14

# Input indices
U_OMEGA_COM = 0
U_VBD, U_VBQ = 1, 2
U_NBR_OMEGA = 3
U_REF_OMEGA = 4
U_NBR_ACTIVE = 5
U_NBR_VOLTAGE = 6
U_REF_VOLTAGE = 7
U_NBR_REACTIVE = 8

# Measured states, in output order
MEASURED = (P, Q, I_LD, I_LQ, V_OD, V_OQ, I_OD, I_OQ, OMEGA_N, V_N)
UNMEASURED = (PHI_D, PHI_Q, GAMMA_D, GAMMA_Q, DELTA)

# Output columns
Y_P, Y_Q = 0, 1
Y_ILD, Y_ILQ = 2, 3
Y_VOD, Y_VOQ = 4, 5
Y_IOD, Y_IOQ = 6, 7
Y_OMEGA_N, Y_VN = 8, 9

STATE_NAMES = tuple(f"x{i + 1}" for i in range(N_STATES))


class DgParams(BaseModel):
    """Physical and control constants of one inverter.

    Dispatch fields (cost coefficients and power boxes) are only read by the
    OPF checks.
    """

    model_config = ConfigDict(frozen=True)

    m_p: float = Field(ge=0, description="active droop, rad/(s·W)")
    n_q: float = Field(ge=0, description="reactive droop, V/var")
    r_c: float = Field(ge=0, description="connector resistance, Ω")
    l_c: float = Field(description="connector inductance, H")
    r_f: float = Field(ge=0, description="filter resistance, Ω")
    l_f: float = Field(description="filter inductance, H")
    c_f: float = Field(description="filter capacitance, F")
    k_pv: float
    k_iv: float
    k_pc: float
    k_ic: float
    omega_b: float = Field(default=314.16, description="nominal frequency, rad/s")
    f_comp: float = Field(default=0.75, description="current feed-forward gain")
    omega_c: float = Field(default=31.41, description="power filter cutoff, rad/s")
    c_freq: float = Field(default=30.0, ge=0, description="secondary frequency gain")
    c_volt: float = Field(default=30.0, ge=0, description="secondary voltage gain")
    alpha: float = Field(default=0.0, ge=0, description="quadratic cost, $/W²")
    beta: float = Field(default=0.0, description="linear cost, $/W")
    gamma: float = Field(default=0.0, description="fixed cost, $")
    p_min: float = 0.0
    p_max: float = 1e4
    q_min: float = -1e4
    q_max: float = 1e4

    @field_validator("l_c", "l_f", "c_f", "omega_b", "omega_c")
    @classmethod
    def validate_positive(cls, v: float) -> float:
        """Validate that reactive elements and frequencies are strictly positive."""
        if v <= 0:
            raise ValueError("must be strictly positive")
        return v

    @computed_field
    @property
    def x_c(self) -> float:
        """Connector reactance at the nominal frequency."""
        return self.omega_b * self.l_c


def output_matrix() -> FloatArray:
    """C selecting the measured states in output order."""
    c = np.zeros((N_OUTPUTS, N_STATES))
    for row, col in enumerate(MEASURED):
        c[row, col] = 1.0
    return c


def build_matrices(
    p: DgParams, adjacency_row: npt.ArrayLike, pinning: float
) -> tuple[FloatArray, FloatArray, FloatArray]:
    """Linear part A, input matrix B and output matrix C of one DG.

    Args:
        p: Inverter constants.
        adjacency_row: Communication weights a_ij of this DG's incoming edges.
        pinning: Pinning gain g of this DG.

    Returns:
        (A 15×15, B 15×9, C 10×15).
    """
    a_sum = float(np.sum(adjacency_row))
    g = float(pinning)
    lf = p.l_f
    a = np.zeros((N_STATES, N_STATES))

    # Power filters
    a[P, P] = -p.omega_c
    a[Q, Q] = -p.omega_c

    # Voltage loop integrators
    a[PHI_D, Q] = -p.n_q
    a[PHI_D, V_OD] = -1.0
    a[PHI_D, V_N] = 1.0
    a[PHI_Q, V_OQ] = -1.0

    # Current loop integrators
    a[GAMMA_D, Q] = -p.k_pv * p.n_q
    a[GAMMA_D, PHI_D] = p.k_iv
    a[GAMMA_D, I_LD] = -1.0
    a[GAMMA_D, V_OD] = -p.k_pv
    a[GAMMA_D, V_OQ] = -p.omega_b * p.c_f
    a[GAMMA_D, I_OD] = p.f_comp
    a[GAMMA_D, V_N] = p.k_pv
    a[GAMMA_Q, PHI_Q] = p.k_iv
    a[GAMMA_Q, I_LQ] = -1.0
    a[GAMMA_Q, V_OD] = p.omega_b * p.c_f
    a[GAMMA_Q, V_OQ] = -p.k_pv
    a[GAMMA_Q, I_OQ] = p.f_comp

    # LC filter inductor
    a[I_LD, Q] = -p.k_pc * p.k_pv * p.n_q / lf
    a[I_LD, PHI_D] = p.k_pc * p.k_iv / lf
    a[I_LD, GAMMA_D] = p.k_ic / lf
    a[I_LD, I_LD] = -(p.r_f + p.k_pc) / lf
    a[I_LD, I_LQ] = -p.omega_b
    a[I_LD, V_OD] = -(1 + p.k_pc * p.k_pv) / lf
    a[I_LD, V_OQ] = -p.omega_b * p.k_pc * p.c_f / lf
    a[I_LD, I_OD] = p.k_pc * p.f_comp / lf
    a[I_LD, V_N] = p.k_pc * p.k_pv / lf
    a[I_LQ, PHI_Q] = p.k_pc * p.k_iv / lf
    a[I_LQ, GAMMA_Q] = p.k_ic / lf
    a[I_LQ, I_LD] = p.omega_b
    a[I_LQ, I_LQ] = -(p.r_f + p.k_pc) / lf
    a[I_LQ, V_OD] = p.omega_b * p.k_pc * p.c_f / lf
    a[I_LQ, V_OQ] = -(1 + p.k_pc * p.k_pv) / lf
    a[I_LQ, I_OQ] = p.k_pc * p.f_comp / lf

    # LC filter capacitor
    a[V_OD, I_LD] = 1 / p.c_f
    a[V_OD, I_OD] = -1 / p.c_f
    a[V_OQ, I_LQ] = 1 / p.c_f
    a[V_OQ, I_OQ] = -1 / p.c_f

    # Output connector
    a[I_OD, V_OD] = 1 / p.l_c
    a[I_OD, I_OD] = -p.r_c / p.l_c
    a[I_OQ, V_OQ] = 1 / p.l_c
    a[I_OQ, I_OQ] = -p.r_c / p.l_c

    # Angle and secondary control
    a[DELTA, P] = -p.m_p
    a[DELTA, OMEGA_N] = 1.0
    a[OMEGA_N, P] = p.m_p * p.c_freq * (a_sum + g) - p.c_freq * a_sum * p.m_p
    a[OMEGA_N, OMEGA_N] = -p.c_freq * (a_sum + g)
    a[V_N, Q] = -p.c_volt * p.n_q * a_sum
    a[V_N, V_OD] = -p.c_volt * (a_sum + g)

    b = np.zeros((N_STATES, N_INPUTS))
    b[I_OD, U_VBD] = -1 / p.l_c
    b[I_OQ, U_VBQ] = -1 / p.l_c
    b[DELTA, U_OMEGA_COM] = -1.0
    b[OMEGA_N, [U_NBR_OMEGA, U_REF_OMEGA, U_NBR_ACTIVE]] = 1.0
    b[V_N, [U_NBR_VOLTAGE, U_REF_VOLTAGE, U_NBR_REACTIVE]] = 1.0

    return a, b, output_matrix()


def nonlinear_f_batch(
    x: FloatArray, m_p: npt.ArrayLike, omega_c: npt.ArrayLike
) -> FloatArray:
    """Bilinear part f(x) for a stack of DG states.

    Args:
        x: States of shape (..., 15).
        m_p: Active droops broadcastable against ``x[..., 0]``.
        omega_c: Filter cutoffs broadcastable against ``x[..., 0]``.

    Returns:
        Array shaped like ``x``; only the power, inductor, capacitor and
        connector rows are nonzero.
    """
    m_p = np.asarray(m_p, dtype=float)
    omega_c = np.asarray(omega_c, dtype=float)
    out = np.zeros_like(x)
    # Electrical rotation speed relative to the linearized ω_b terms
    omega = x[..., OMEGA_N] - m_p * x[..., P]
    out[..., P] = omega_c * (x[..., V_OD] * x[..., I_OD] + x[..., V_OQ] * x[..., I_OQ])
    out[..., Q] = omega_c * (x[..., V_OQ] * x[..., I_OD] - x[..., V_OD] * x[..., I_OQ])
    out[..., I_LD] = omega * x[..., I_LQ]
    out[..., I_LQ] = -omega * x[..., I_LD]
    out[..., V_OD] = omega * x[..., V_OQ]
    out[..., V_OQ] = -omega * x[..., V_OD]
    out[..., I_OD] = omega * x[..., I_OQ]
    out[..., I_OQ] = -omega * x[..., I_OD]
    return out


def nonlinear_f(x: npt.ArrayLike, p: DgParams) -> FloatArray:
    """Bilinear part f(x) of one DG."""
    return nonlinear_f_batch(np.asarray(x, dtype=float), p.m_p, p.omega_c)


def dg_derivative(
    x: npt.ArrayLike, u: npt.ArrayLike, p: DgParams, a: FloatArray, b: FloatArray
) -> FloatArray:
    """Right-hand side A x + f(x) + B u."""
    xv = np.asarray(x, dtype=float)
    return a @ xv + nonlinear_f(xv, p) + b @ np.asarray(u, dtype=float)
