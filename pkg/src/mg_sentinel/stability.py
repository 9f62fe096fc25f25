"""Small-signal stability of the reduced (p, q, δ) microgrid model.

Each inverter keeps its filtered powers and angle; voltage and current loops
are taken as settled, so the capacitor voltage follows the reactive droop

    v_o = (v_opf + n_Q·(q_opf − q))·e^{jδ}

and the output currents z = [Re i_o, Im i_o] in the common frame satisfy the
algebraic network equation (I + Y̌ Z_c) i_o − Y̌ v_o = 0.
"""

import logging
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt
import scipy.linalg

from .dg_model import DELTA, V_OD
from .errors import InputError, SingularityError
from .microgrid import MicrogridConfig, admittance_matrix, kron_reduce
from .numerics import ComplexArray, FloatArray, eigenvalues, spectral_abscissa

logger = logging.getLogger(__name__)

SINGULAR_COND = 1e12


@dataclass(frozen=True)
class OperatingPoint:
    """Setpoints and network data the reduced model linearizes around.

    Attributes:
        p_opf: Active power setpoints (N,), W.
        q_opf: Reactive power setpoints (N,), var.
        v_opf: Voltage magnitude setpoints (N,), V.
        delta: Angles at the operating point (N,); the leader's is zero.
        i_o: Output currents in the common frame (N,), complex.
        y_red: Kron-reduced admittance over the DG buses.
        z_c: Connector impedances (N,), complex.
        m_p: Active droops (N,).
        n_q: Reactive droops (N,).
        omega_c: Filter cutoffs (N,).
        leader: 0-based index of the angle reference.
        angle_scale: Factor on (ω − ω_com) in the angle equation.
    """

    p_opf: FloatArray
    q_opf: FloatArray
    v_opf: FloatArray
    delta: FloatArray
    i_o: ComplexArray
    y_red: ComplexArray
    z_c: ComplexArray
    m_p: FloatArray
    n_q: FloatArray
    omega_c: FloatArray
    leader: int
    angle_scale: float

    @property
    def n(self) -> int:
        """Number of inverters."""
        return int(self.p_opf.size)

    @property
    def free_angles(self) -> list[int]:
        """Indices of the angles kept in the reduced state."""
        return [i for i in range(self.n) if i != self.leader]

    @property
    def n_x(self) -> int:
        """Reduced state dimension 3N − 1."""
        return 3 * self.n - 1

    def state(self) -> "ReducedState":
        """The reduced state sitting exactly at this operating point."""
        return ReducedState(
            p=self.p_opf.copy(), q=self.q_opf.copy(), delta=self.delta.copy()
        )

    def algebraic(self) -> FloatArray:
        """z = [Re i_o, Im i_o] at this operating point."""
        return np.concatenate([self.i_o.real, self.i_o.imag])


@dataclass(frozen=True)
class ReducedState:
    """Powers and angles of every inverter; the leader angle stays zero."""

    p: FloatArray
    q: FloatArray
    delta: FloatArray

    def to_vector(self, op: OperatingPoint) -> FloatArray:
        """Stack as [p, q, δ without the leader]."""
        return np.concatenate([self.p, self.q, self.delta[op.free_angles]])

    @classmethod
    def from_vector(cls, x: npt.ArrayLike, op: OperatingPoint) -> "ReducedState":
        """Inverse of ``to_vector``."""
        vec = np.asarray(x, dtype=float)
        n = op.n
        if vec.size != op.n_x:
            raise InputError(f"reduced state needs {op.n_x} entries, got {vec.size}")
        delta = np.zeros(n)
        delta[op.free_angles] = vec[2 * n :]
        return cls(p=vec[:n].copy(), q=vec[n : 2 * n].copy(), delta=delta)


@dataclass(frozen=True)
class JacobianBlocks:
    """∂f̃/∂x, ∂f̃/∂z, ∂g̃/∂x and ∂g̃/∂z of the reduced model."""

    fx: FloatArray
    fz: FloatArray
    gx: FloatArray
    gz: FloatArray


@dataclass(frozen=True)
class DecayCertificate:
    """Outcome of a decay-rate check; truthy when certified.

    Attributes:
        certified: Whether Â has decay rate better than ``eta``.
        eta: Requested decay rate, 1/s.
        abscissa: Spectral abscissa of Â.
        witness: M ≻ 0 with ÂᵀM + MÂ ⪯ −2ηM, when certified.
    """

    certified: bool
    eta: float
    abscissa: float
    witness: FloatArray | None = None

    def __bool__(self) -> bool:
        """Truth value of the certificate."""
        return self.certified

    @property
    def margin(self) -> float:
        """How far the abscissa sits below −η."""
        return -self.abscissa - self.eta


def real_block(m: npt.ArrayLike) -> FloatArray:
    """Real form [[Re, −Im], [Im, Re]] of a complex matrix."""
    c = np.asarray(m, dtype=complex)
    return np.block([[c.real, -c.imag], [c.imag, c.real]])


def effective_admittance(y_red: ComplexArray, z_c: ComplexArray) -> ComplexArray:
    """(I + Y̌ Z_c)⁻¹ Y̌, mapping capacitor voltages to output currents."""
    n = y_red.shape[0]
    lhs = np.eye(n) + y_red @ np.diag(z_c)
    if np.linalg.cond(lhs) > SINGULAR_COND:
        raise SingularityError("algebraic network block is singular")
    return np.asarray(np.linalg.solve(lhs, y_red), dtype=complex)


def connector_impedances(cfg: MicrogridConfig) -> ComplexArray:
    """R_c + jω_b L_c per inverter."""
    return np.array([p.r_c + 1j * p.omega_b * p.l_c for p in cfg.dgs])


def operating_point(
    cfg: MicrogridConfig,
    v_opf: npt.ArrayLike,
    delta: npt.ArrayLike,
    angle_scale: float | None = None,
) -> OperatingPoint:
    """Consistent operating point from voltage magnitudes and angles.

    Currents come from the network equation, powers from v_o·conj(i_o), so
    the point is an exact equilibrium of the reduced model.
    """
    y_red = kron_reduce(admittance_matrix(cfg), range(cfg.n_dg))
    z_c = connector_impedances(cfg)
    mags = np.asarray(v_opf, dtype=float)
    ang = np.asarray(delta, dtype=float) - float(np.asarray(delta)[cfg.leader_index])
    v_o = mags * np.exp(1j * ang)
    i_o = effective_admittance(y_red, z_c) @ v_o
    s = v_o * np.conj(i_o)
    return OperatingPoint(
        p_opf=s.real.copy(), q_opf=s.imag.copy(), v_opf=mags.copy(), delta=ang,
        i_o=i_o, y_red=y_red, z_c=z_c,
        m_p=np.array([p.m_p for p in cfg.dgs]),
        n_q=np.array([p.n_q for p in cfg.dgs]),
        omega_c=np.array([p.omega_c for p in cfg.dgs]),
        leader=cfg.leader_index,
        angle_scale=angle_scale if angle_scale is not None else cfg.omega_base,
    )


def operating_point_from_states(
    cfg: MicrogridConfig, x_eq: npt.ArrayLike, angle_scale: float | None = None
) -> OperatingPoint:
    """Operating point of a full-model equilibrium (N, 15)."""
    x = np.asarray(x_eq, dtype=float)
    return operating_point(cfg, x[:, V_OD], x[:, DELTA], angle_scale)


def _terminal(
    x: ReducedState, op: OperatingPoint
) -> tuple[FloatArray, FloatArray, FloatArray]:
    mag = op.v_opf + op.n_q * (op.q_opf - x.q)
    return mag, mag * np.cos(x.delta), mag * np.sin(x.delta)


def solve_algebraic(x: ReducedState, op: OperatingPoint) -> FloatArray:
    """z solving g̃(x, z) = 0."""
    _, e, f = _terminal(x, op)
    i_o = effective_admittance(op.y_red, op.z_c) @ (e + 1j * f)
    return np.concatenate([i_o.real, i_o.imag])


def algebraic_residual(
    x: ReducedState, z: npt.ArrayLike, op: OperatingPoint
) -> FloatArray:
    """g̃(x, z) = (I + Y̌ Z_c) i_o − Y̌ v_o in real form."""
    n = op.n
    zz = np.asarray(z, dtype=float)
    i_o = zz[:n] + 1j * zz[n:]
    _, e, f = _terminal(x, op)
    g = i_o + op.y_red @ (op.z_c * i_o) - op.y_red @ (e + 1j * f)
    return np.concatenate([g.real, g.imag])


def reduced_derivative(
    x: ReducedState, op: OperatingPoint, z: npt.ArrayLike | None = None
) -> FloatArray:
    """f̃(x, z) stacked like ``ReducedState.to_vector``.

    The currents are solved from the network when ``z`` is omitted.
    """
    n = op.n
    zz = solve_algebraic(x, op) if z is None else np.asarray(z, dtype=float)
    i_d, i_q = zz[:n], zz[n:]
    _, e, f = _terminal(x, op)
    p_dot = -op.omega_c * x.p + op.omega_c * (e * i_d + f * i_q)
    q_dot = -op.omega_c * x.q + op.omega_c * (f * i_d - e * i_q)
    # Only differences of ω matter, so the nominal frequency drops out
    omega = -op.m_p * x.p + op.m_p * op.p_opf
    d_dot = op.angle_scale * (omega - omega[op.leader])
    return np.concatenate([p_dot, q_dot, d_dot[op.free_angles]])


def m_p_matrix(m_p: npt.ArrayLike, leader: int = 0) -> FloatArray:
    """M^p: −m_P of the leader in its column, m_P of each other DG on its own."""
    m = np.asarray(m_p, dtype=float)
    others = [i for i in range(m.size) if i != leader]
    out = np.zeros((len(others), m.size))
    for row, i in enumerate(others):
        out[row, leader] = -m[leader]
        out[row, i] = m[i]
    return out


def jacobians(
    x: ReducedState, z: npt.ArrayLike, op: OperatingPoint
) -> JacobianBlocks:
    """Analytic Jacobian blocks of the reduced model at (x, z)."""
    n = op.n
    free = op.free_angles
    zz = np.asarray(z, dtype=float)
    i_d, i_q = zz[:n], zz[n:]
    mag, e, f = _terminal(x, op)
    cos, sin = np.cos(x.delta), np.sin(x.delta)
    wc, nq = op.omega_c, op.n_q

    # Terminal voltage sensitivities, columns over [p, q, δ_free]
    de = np.zeros((n, op.n_x))
    df = np.zeros((n, op.n_x))
    de[:, n : 2 * n] = np.diag(-nq * cos)
    df[:, n : 2 * n] = np.diag(-nq * sin)
    de[free, 2 * n + np.arange(n - 1)] = -mag[free] * sin[free]
    df[free, 2 * n + np.arange(n - 1)] = mag[free] * cos[free]

    fx = np.zeros((op.n_x, op.n_x))
    fx[:n, :n] = np.diag(-wc)
    fx[:n] += wc[:, None] * (i_d[:, None] * de + i_q[:, None] * df)
    fx[n : 2 * n, n : 2 * n] = np.diag(-wc)
    fx[n : 2 * n] += wc[:, None] * (i_d[:, None] * df - i_q[:, None] * de)
    fx[2 * n :, :n] = -op.angle_scale * m_p_matrix(op.m_p, op.leader)

    fz = np.zeros((op.n_x, 2 * n))
    fz[:n, :n] = np.diag(wc * e)
    fz[:n, n:] = np.diag(wc * f)
    fz[n : 2 * n, :n] = np.diag(wc * f)
    fz[n : 2 * n, n:] = np.diag(-wc * e)

    gx = -real_block(op.y_red) @ np.vstack([de, df])
    gz = np.eye(2 * n) + real_block(op.y_red @ np.diag(op.z_c))
    return JacobianBlocks(fx=fx, fz=fz, gx=gx, gz=gz)


def state_matrix(blocks: JacobianBlocks) -> FloatArray:
    """Â = ∂f̃/∂x − ∂f̃/∂z (∂g̃/∂z)⁻¹ ∂g̃/∂x.

    Raises:
        SingularityError: When ∂g̃/∂z is singular.
    """
    if np.linalg.cond(blocks.gz) > SINGULAR_COND:
        raise SingularityError("algebraic Jacobian block is singular")
    return np.asarray(blocks.fx - blocks.fz @ np.linalg.solve(blocks.gz, blocks.gx))


def reduced_state_matrix(op: OperatingPoint) -> FloatArray:
    """Â at the operating point itself."""
    x = op.state()
    return state_matrix(jacobians(x, solve_algebraic(x, op), op))


def certify_decay(a_hat: npt.ArrayLike, eta: float = 0.0) -> DecayCertificate:
    """Check ÂᵀM + MÂ ⪯ −2ηM for some M ≻ 0.

    Equivalent to Â + ηI being Hurwitz; the witness solves
    (Â + ηI)ᵀM + M(Â + ηI) = −I.
    """
    if eta < 0:
        raise InputError("decay rate must be nonnegative")
    a = np.asarray(a_hat, dtype=float)
    abscissa = spectral_abscissa(a)
    if not abscissa < -eta:
        return DecayCertificate(certified=False, eta=eta, abscissa=abscissa)
    shifted = a + eta * np.eye(a.shape[0])
    witness = scipy.linalg.solve_continuous_lyapunov(shifted.T, -np.eye(a.shape[0]))
    witness = (witness + witness.T) / 2
    if float(np.min(np.linalg.eigvalsh(witness))) <= 0:
        logger.warning(
            "Lyapunov witness not positive definite at abscissa %.3g", abscissa
        )
        return DecayCertificate(certified=False, eta=eta, abscissa=abscissa)
    return DecayCertificate(certified=True, eta=eta, abscissa=abscissa, witness=witness)


def eigen_sets(matrices: dict[str, npt.ArrayLike]) -> list[tuple[str, complex]]:
    """(tag, eigenvalue) pairs for every tagged matrix, in sorted order."""
    rows = []
    for tag, m in matrices.items():
        rows.extend((tag, complex(v)) for v in eigenvalues(m))
    return rows
