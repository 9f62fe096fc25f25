"""Nonlinear state observers for one DG and stacked banks of them.

The error dynamics of the nonlinear observer are

    ξ̇ = (A + D − L′C) ξ + [f(x) − f(x̂) + L″(x̂) C ξ − D ξ]

where L″(x̂) removes the cross terms of ξᵀ(f(x) − f(x̂)) that involve an
estimate, leaving products of measured errors with the true output currents.
D bounds what is left on the operating region.
"""

import logging
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Literal

import numpy as np
import numpy.typing as npt

from .dg_model import (
    DELTA,
    I_LD,
    I_LQ,
    I_OD,
    I_OQ,
    MEASURED,
    N_OUTPUTS,
    N_STATES,
    P,
    Q,
    V_OD,
    V_OQ,
    Y_ILD,
    Y_ILQ,
    Y_IOD,
    Y_IOQ,
    Y_OMEGA_N,
    Y_P,
    Y_VOD,
    Y_VOQ,
    DgParams,
    nonlinear_f_batch,
)
from .errors import DesignError, DimensionError, ObserverDivergenceError, PlacementError
from .numerics import (
    ComplexArray,
    FloatArray,
    eigenvalues,
    place_poles,
    rk4_step,
    spectral_abscissa,
)

logger = logging.getLogger(__name__)

ObserverVariant = Literal["nonlinear", "output_injection"]

# Error states: everything except the angle, which no output sees
ERROR_STATES = tuple(i for i in range(N_STATES) if i != DELTA)
N_ERROR = len(ERROR_STATES)
N_SLOW = N_STATES - len(MEASURED) - 1

DEFAULT_SLOW_POLES = (-300.0, -350.0, -400.0, -450.0)
DEFAULT_FAST_POLES = tuple(-1.0e4 - 1.0e3 * k for k in range(len(MEASURED)))
BOUND_MARGIN = 1.5


@dataclass(frozen=True)
class ObserverGain:
    """Designed observer gain of one DG.

    Attributes:
        l_prime: Constant gain L′ of shape (15, 10); the angle row is zero.
        d: Lipschitz bound matrix D(x̄) of shape (15, 15).
        poles: Requested spectrum of A + D − L′C on the non-angle states.
        spectrum: Achieved spectrum, sorted.
        hurwitz: True when every achieved pole has negative real part.
        variant: Observer form the gain was designed for.
    """

    l_prime: FloatArray
    d: FloatArray
    poles: ComplexArray
    spectrum: ComplexArray
    hurwitz: bool
    variant: ObserverVariant = "nonlinear"


@dataclass
class ObserverState:
    """Estimate and latest residual of one observer."""

    x_hat: FloatArray
    residual: FloatArray


def nonlinear_gain_batch(
    x_hat: FloatArray, m_p: npt.ArrayLike, omega_c: npt.ArrayLike
) -> FloatArray:
    """State-dependent gain L″(x̂) for stacked estimates, shape (..., 15, 10)."""
    m_p = np.asarray(m_p, dtype=float)
    omega_c = np.asarray(omega_c, dtype=float)
    out = np.zeros((*x_hat.shape[:-1], N_STATES, N_OUTPUTS))
    v_od, v_oq = x_hat[..., V_OD], x_hat[..., V_OQ]
    i_ld, i_lq = x_hat[..., I_LD], x_hat[..., I_LQ]
    i_od, i_oq = x_hat[..., I_OD], x_hat[..., I_OQ]

    # Power calculation
    out[..., P, Y_IOD] = -omega_c * v_od
    out[..., P, Y_IOQ] = -omega_c * v_oq
    out[..., Q, Y_IOD] = -omega_c * v_oq
    out[..., Q, Y_IOQ] = omega_c * v_od

    # Rotation by ω_n
    out[..., I_LD, Y_OMEGA_N] = -i_lq
    out[..., I_LQ, Y_OMEGA_N] = i_ld
    out[..., V_OD, Y_OMEGA_N] = -v_oq
    out[..., V_OQ, Y_OMEGA_N] = v_od
    out[..., I_OD, Y_OMEGA_N] = -i_oq
    out[..., I_OQ, Y_OMEGA_N] = i_od

    # Rotation by the droop term m_P·P; the quadratic form only needs the
    # symmetric counterpart, so four of these sit in the P row
    out[..., P, Y_ILD] = m_p * i_lq
    out[..., P, Y_ILQ] = -m_p * i_ld
    out[..., P, Y_VOD] = m_p * v_oq
    out[..., P, Y_VOQ] = -m_p * v_od
    out[..., I_OD, Y_P] = m_p * i_oq
    out[..., I_OQ, Y_P] = -m_p * i_od
    return out


def nonlinear_gain_L2(x_hat: npt.ArrayLike, p: DgParams) -> FloatArray:  # noqa: N802
    """L″(x̂) of one DG, shape (15, 10)."""
    return nonlinear_gain_batch(np.asarray(x_hat, dtype=float), p.m_p, p.omega_c)


def state_bounds(x_eq: npt.ArrayLike, margin: float = BOUND_MARGIN) -> FloatArray:
    """Bounds (x̄_11, x̄_12) on the output currents around equilibria (..., 15)."""
    x = np.asarray(x_eq, dtype=float)
    return margin * np.abs(x[..., [I_OD, I_OQ]])


def bound_matrix(p: DgParams, x_bar: npt.ArrayLike) -> FloatArray:
    """D(x̄): diagonal Lipschitz bound on the P, Q and capacitor voltage rows."""
    bounds = np.asarray(x_bar, dtype=float)
    d = np.zeros((N_STATES, N_STATES))
    level = p.omega_c * float(bounds[0] + bounds[1])
    for i in (P, Q, V_OD, V_OQ):
        d[i, i] = level
    return d


def split_poles(
    poles: Sequence[complex], n_slow: int = N_SLOW
) -> tuple[ComplexArray, ComplexArray]:
    """Split a spectrum into the slowest ``n_slow`` poles and the rest.

    Raises:
        DesignError: When the split would separate a conjugate pair.
    """
    vals = np.asarray(poles, dtype=complex)
    order = np.lexsort((vals.imag, -vals.real))
    ranked = vals[order]
    slow, fast = ranked[:n_slow], ranked[n_slow:]
    for pole in slow:
        if abs(pole.imag) > 0 and not np.any(np.isclose(slow, np.conj(pole))):
            raise DesignError("slow pole group splits a conjugate pair", mode=pole)
    return slow, fast


def real_block(poles: Sequence[complex]) -> FloatArray:
    """Real block-diagonal matrix whose spectrum is ``poles``."""
    remaining = list(np.asarray(poles, dtype=complex))
    blocks: list[FloatArray] = []
    while remaining:
        pole = remaining.pop(0)
        if abs(pole.imag) <= 1e-12 * max(1.0, abs(pole)):
            blocks.append(np.array([[pole.real]]))
            continue
        partner = next(
            (i for i, q in enumerate(remaining) if np.isclose(q, np.conj(pole))), None
        )
        if partner is None:
            raise DesignError("pole has no conjugate partner", mode=pole)
        remaining.pop(partner)
        s, w = pole.real, abs(pole.imag)
        blocks.append(np.array([[s, w], [-w, s]]))
    n = sum(b.shape[0] for b in blocks)
    out = np.zeros((n, n))
    k = 0
    for b in blocks:
        m = b.shape[0]
        out[k : k + m, k : k + m] = b
        k += m
    return out


def check_detectable(a: npt.ArrayLike, c: npt.ArrayLike, tol: float = 1e-9) -> None:
    """Popov-Belevitch-Hautus test on the non-decaying modes of (A, C).

    Raises:
        DesignError: Naming the first mode that no output observes.
    """
    amat = np.asarray(a, dtype=float)
    cmat = np.asarray(c, dtype=float)
    n = amat.shape[0]
    for mode in eigenvalues(amat):
        if mode.real < 0:
            continue
        pencil = np.vstack([mode * np.eye(n) - amat, cmat.astype(complex)])
        s = np.linalg.svd(pencil, compute_uv=False)
        if s[-1] <= tol * max(1.0, s[0]):
            raise DesignError(f"mode {mode:.6g} is not detectable", mode=complex(mode))


def design_gain(
    a: npt.ArrayLike,
    c: npt.ArrayLike,
    p: DgParams,
    x_bar: npt.ArrayLike = (0.0, 0.0),
    poles: Sequence[complex] | None = None,
    variant: ObserverVariant = "nonlinear",
) -> ObserverGain:
    """Constant gain L′ placing the spectrum of A + D − L′C.

    The angle state is left out. On the remaining states the measured block m
    and the unmeasured block u are decoupled by a change of variables
    w = ξ_u − K ξ_m, which makes the error matrix block triangular:

        eig(A + D − L′C) = eig(A_uu − K A_mu) ∪ eig(Λ_m)

    K places the slowest poles through the unmeasured block and Λ_m carries
    the remaining ones.

    Args:
        a: State matrix (15×15).
        c: Output matrix (10×15).
        p: Inverter constants, for ω_c in D(x̄).
        x_bar: Output current bounds (x̄_11, x̄_12); zeros give D = 0, the
            output-injection form.
        poles: 14 requested poles, conjugate-closed; defaults to
            ``DEFAULT_SLOW_POLES + DEFAULT_FAST_POLES``.
        variant: Observer form recorded on the result.

    Raises:
        DesignError: On undetectable modes or unassignable spectra.
    """
    amat = np.asarray(a, dtype=float)
    cmat = np.asarray(c, dtype=float)
    dmat = bound_matrix(p, x_bar)
    if amat.shape != (N_STATES, N_STATES) or cmat.shape != (N_OUTPUTS, N_STATES):
        raise DimensionError("observer design expects a 15-state, 10-output DG")
    requested = np.asarray(
        poles if poles is not None else DEFAULT_SLOW_POLES + DEFAULT_FAST_POLES,
        dtype=complex,
    )
    if requested.size != N_ERROR:
        raise DesignError(f"need {N_ERROR} poles, got {requested.size}")

    keep = list(ERROR_STATES)
    a_r = (amat + dmat)[np.ix_(keep, keep)]
    c_r = cmat[:, keep]
    check_detectable(a_r, c_r)

    m_idx = [keep.index(s) for s in MEASURED]
    u_idx = [i for i in range(N_ERROR) if i not in m_idx]
    a_mm = a_r[np.ix_(m_idx, m_idx)]
    a_mu = a_r[np.ix_(m_idx, u_idx)]
    a_um = a_r[np.ix_(u_idx, m_idx)]
    a_uu = a_r[np.ix_(u_idx, u_idx)]

    slow, fast = split_poles(requested, len(u_idx))
    try:
        k = place_poles(a_uu, a_mu, slow)
    except PlacementError as e:
        raise DesignError(f"unmeasured block not assignable: {e}") from e
    f = a_uu - k @ a_mu
    m0_mm = real_block(fast) - a_mu @ k
    m0_um = k @ m0_mm + f @ k

    l_r = np.zeros((N_ERROR, N_OUTPUTS))
    l_r[m_idx, :] = a_mm - m0_mm
    l_r[u_idx, :] = a_um - m0_um
    l_prime = np.zeros((N_STATES, N_OUTPUTS))
    l_prime[keep, :] = l_r

    spectrum = eigenvalues(a_r - l_r @ c_r)
    hurwitz = spectral_abscissa(a_r - l_r @ c_r) < 0
    if not hurwitz:
        logger.warning(
            "observer error matrix is not Hurwitz (abscissa %.3g)",
            float(np.max(spectrum.real)),
        )
    logger.debug("observer gain designed, |L'| = %.3g", float(np.linalg.norm(l_prime)))
    return ObserverGain(
        l_prime=l_prime, d=dmat, poles=requested, spectrum=spectrum,
        hurwitz=bool(hurwitz), variant=variant,
    )


def initial_estimate(y: npt.ArrayLike) -> FloatArray:
    """Estimate with the measured states copied from y and zeros elsewhere."""
    x_hat = np.zeros((*np.shape(y)[:-1], N_STATES))
    x_hat[..., list(MEASURED)] = np.asarray(y, dtype=float)
    return x_hat


class ObserverBank:
    """One observer per row of a stacked state, evaluated together.

    Args:
        gains: One designed gain per observer; all share one variant.
        a: State matrices (N, 15, 15).
        b: Input matrices (N, 15, 9).
        c: Shared output matrix (10, 15).
        m_p: Active droops (N,).
        omega_c: Filter cutoffs (N,).
    """

    def __init__(
        self,
        gains: Sequence[ObserverGain],
        a: FloatArray,
        b: FloatArray,
        c: FloatArray,
        m_p: npt.ArrayLike,
        omega_c: npt.ArrayLike,
    ) -> None:
        """Stack the gains."""
        variants = {g.variant for g in gains}
        if len(variants) != 1:
            raise DesignError("observer bank mixes observer variants")
        self.variant: ObserverVariant = variants.pop()
        self.gains = list(gains)
        self.l_prime = np.stack([g.l_prime for g in gains])
        self.a = a
        self.b = b
        self.c = c
        self.m_p = np.asarray(m_p, dtype=float)
        self.omega_c = np.asarray(omega_c, dtype=float)

    def outputs(self, x_hat: FloatArray) -> FloatArray:
        """Predicted outputs C x̂, shape (N, 10)."""
        return x_hat[:, list(MEASURED)]

    def derivative(self, x_hat: FloatArray, u: FloatArray, y: FloatArray) -> FloatArray:
        """Stacked observer right-hand side for estimates (N, 15)."""
        innovation = y - self.outputs(x_hat)
        lin = np.einsum("nij,nj->ni", self.a, x_hat)
        lin += np.einsum("nij,nj->ni", self.b, u)
        if self.variant == "nonlinear":
            gain = self.l_prime - nonlinear_gain_batch(x_hat, self.m_p, self.omega_c)
            drift = nonlinear_f_batch(x_hat, self.m_p, self.omega_c)
        else:
            gain = self.l_prime
            mixed = x_hat.copy()
            mixed[:, list(MEASURED)] = y
            drift = nonlinear_f_batch(mixed, self.m_p, self.omega_c)
        return lin + drift + np.einsum("nij,nj->ni", gain, innovation)


def _single_bank(
    gain: ObserverGain, a: FloatArray, b: FloatArray, p: DgParams
) -> ObserverBank:
    c = np.zeros((N_OUTPUTS, N_STATES))
    c[range(N_OUTPUTS), list(MEASURED)] = 1.0
    return ObserverBank([gain], a[None], b[None], c, [p.m_p], [p.omega_c])


def _step(
    bank: ObserverBank,
    obs: ObserverState,
    u: npt.ArrayLike,
    y: npt.ArrayLike,
    dt: float,
    t: float,
) -> ObserverState:
    uu = np.asarray(u, dtype=float)[None]
    yy = np.asarray(y, dtype=float)[None]

    def rhs(_t: float, z: FloatArray) -> FloatArray:
        return bank.derivative(z[None], uu, yy)[0]

    x_hat = rk4_step(rhs, obs.x_hat, t, dt)
    if not np.all(np.isfinite(x_hat)):
        raise ObserverDivergenceError("observer estimate is not finite", t)
    residual = yy[0] - x_hat[list(MEASURED)]
    return ObserverState(x_hat=x_hat, residual=residual)


def observer_step(
    obs: ObserverState,
    u: npt.ArrayLike,
    y: npt.ArrayLike,
    gain: ObserverGain,
    a: FloatArray,
    b: FloatArray,
    p: DgParams,
    dt: float,
    t: float = 0.0,
) -> ObserverState:
    """Advance the nonlinear observer by one RK4 step with u and y held."""
    return _step(_single_bank(gain, a, b, p), obs, u, y, dt, t)


def output_injection_step(
    obs: ObserverState,
    u: npt.ArrayLike,
    y: npt.ArrayLike,
    gain: ObserverGain,
    a: FloatArray,
    b: FloatArray,
    p: DgParams,
    dt: float,
    t: float = 0.0,
) -> ObserverState:
    """Advance the output-injection observer, whose bilinear part reads y."""
    if gain.variant != "output_injection":
        gain = ObserverGain(
            l_prime=gain.l_prime, d=gain.d, poles=gain.poles,
            spectrum=gain.spectrum, hurwitz=gain.hurwitz, variant="output_injection",
        )
    return _step(_single_bank(gain, a, b, p), obs, u, y, dt, t)


def design_bank(
    a: FloatArray,
    b: FloatArray,
    c: FloatArray,
    params: Sequence[DgParams],
    x_eq: FloatArray,
    variant: ObserverVariant = "nonlinear",
    poles: Sequence[complex] | None = None,
    margin: float = BOUND_MARGIN,
) -> ObserverBank:
    """Design one gain per DG around the equilibria ``x_eq`` (N, 15)."""
    gains = []
    bounds = state_bounds(x_eq, margin)
    for i, p in enumerate(params):
        x_bar = bounds[i] if variant == "nonlinear" else np.zeros(2)
        gains.append(design_gain(a[i], c, p, x_bar, poles, variant=variant))
    return ObserverBank(
        gains, a, b, c, [p.m_p for p in params], [p.omega_c for p in params]
    )
