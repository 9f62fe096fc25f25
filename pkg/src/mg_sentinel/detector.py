"""Residual evaluation, adaptive thresholds and mitigation."""

import logging
from dataclasses import dataclass, field

import numpy as np
import numpy.typing as npt
import scipy.integrate
from pydantic import BaseModel, ConfigDict, Field

from .errors import InputError
from .numerics import FloatArray, rk4_step

logger = logging.getLogger(__name__)

DEFAULT_FILTER_POLE = 100.0
DEFAULT_ETA_FLOOR = 1e-6
DEFAULT_ARM_TIME = 0.15
DEFAULT_HOLD_TIME = 0.05
CALIBRATION_MARGIN = 1.2
DEFAULT_CALIBRATION_NOISE = 1e-6


@dataclass
class FilterState:
    """First-order low-pass h_p(s) = λ/(s + λ) with its internal state."""

    pole: float
    z: FloatArray | float = 0.0


class ThresholdParams(BaseModel):
    """Constants of the adaptive threshold η = filtered(χ̄ + ζ̄), floored."""

    model_config = ConfigDict(frozen=True)

    chi_bar: float = Field(default=0.0, ge=0)
    zeta_bar: float = Field(default=0.0, ge=0)
    floor: float = Field(default=DEFAULT_ETA_FLOOR, ge=0)


class DetectorSettings(BaseModel):
    """Detector and mitigation options of a run.

    ``chi_bar`` of None asks the scenario layer to calibrate it from an
    attack-free run with white sensor noise of deviation ``calibration_noise``.
    A noise-free run leaves only solver round-off in the residual, so the
    calibrated χ̄ is sized for the sensors instead. ``eta_floor`` keeps η
    positive when χ̄ is zero and while the threshold filter charges.
    """

    model_config = ConfigDict(frozen=True)

    filter_pole: float = Field(default=DEFAULT_FILTER_POLE, gt=0)
    eta_floor: float = Field(default=DEFAULT_ETA_FLOOR, ge=0)
    chi_bar: float | None = Field(default=None, ge=0)
    zeta_bar: float = Field(default=0.0, ge=0)
    arm_time: float = Field(default=DEFAULT_ARM_TIME, ge=0)
    hold_time: float = Field(default=DEFAULT_HOLD_TIME, ge=0)
    mitigation: bool = False
    use_filtered: bool = False
    calibration_noise: float = Field(default=DEFAULT_CALIBRATION_NOISE, ge=0)

    def threshold_params(self, chi_bar: float | None = None) -> ThresholdParams:
        """Threshold constants, with an optional calibrated χ̄."""
        chi = chi_bar if chi_bar is not None else (self.chi_bar or 0.0)
        return ThresholdParams(
            chi_bar=chi, zeta_bar=self.zeta_bar, floor=self.eta_floor
        )


def filter_step(
    fs: FilterState, value: npt.ArrayLike, dt: float
) -> tuple[FilterState, FloatArray]:
    """One RK4 step of ż = −λ(z − value) with the input held.

    Raises:
        IntegrationError: When the filter state becomes non-finite.
    """
    u = np.asarray(value, dtype=float)
    lam = fs.pole

    def rhs(_t: float, zz: FloatArray) -> FloatArray:
        return -lam * (zz - u)

    nxt = rk4_step(rhs, np.asarray(fs.z, dtype=float), 0.0, dt)
    return FilterState(pole=lam, z=nxt), nxt


def threshold(
    tp: ThresholdParams, fs: FilterState, dt: float
) -> tuple[FilterState, FloatArray]:
    """Advance the threshold filter and return max(filtered(χ̄ + ζ̄), floor)."""
    fs, out = filter_step(fs, tp.chi_bar + tp.zeta_bar, dt)
    return fs, np.maximum(out, tp.floor)


def residual(y: npt.ArrayLike, y_hat: npt.ArrayLike) -> tuple[FloatArray, FloatArray]:
    """Residual r = y − ŷ and its Euclidean norm over the last axis."""
    r = np.asarray(y, dtype=float) - np.asarray(y_hat, dtype=float)
    return r, np.linalg.norm(r, axis=-1)


def detect(r_norm: npt.ArrayLike, eta: npt.ArrayLike) -> npt.NDArray[np.bool_]:
    """Alarm where ‖r‖ strictly exceeds η."""
    return np.asarray(r_norm) > np.asarray(eta)


def channel_flags(r: npt.ArrayLike, eta: npt.ArrayLike) -> npt.NDArray[np.bool_]:
    """Per-channel alarms |r_i| > η/√p for residuals (..., p)."""
    rr = np.asarray(r, dtype=float)
    level = np.asarray(eta, dtype=float)[..., None] / np.sqrt(rr.shape[-1])
    return np.abs(rr) > level


def mitigate(
    y: npt.ArrayLike, y_hat: npt.ArrayLike, flags: npt.ArrayLike
) -> FloatArray:
    """Replace flagged channels of y with their estimates."""
    return np.where(np.asarray(flags, dtype=bool), y_hat, y).astype(float)


def impulse_response(pole: float, n: int, dt: float) -> FloatArray:
    """Samples λ·exp(−λ t) of the filter impulse response at t = k·dt."""
    return pole * np.exp(-pole * dt * np.arange(n))


def filtered_attack_response(
    a_u: npt.ArrayLike, h_p: npt.ArrayLike, t_o: float, dt: float, rate_b: float
) -> FloatArray:
    """∫ h_p(t − τ)(1 − e^{−b(τ − T_o)}) a_u(τ) dτ on the sample grid.

    Samples start at T_o; the integral over [T_o, t_n] uses the trapezoid rule.
    """
    a = np.asarray(a_u, dtype=float)
    h = np.asarray(h_p, dtype=float)
    if a.size == 0 or h.size == 0:
        raise InputError("attack and impulse samples must be nonempty")
    n = a.size
    if h.size < n:
        raise InputError("impulse response shorter than the attack samples")
    tau = t_o + dt * np.arange(n)
    g = (1.0 - np.exp(-rate_b * (tau - t_o))) * a
    out = np.zeros(n)
    for k in range(1, n):
        out[k] = scipy.integrate.trapezoid(h[k::-1] * g[: k + 1], dx=dt)
    return out


def detectability_margin(
    a_u: npt.ArrayLike,
    h_p: npt.ArrayLike,
    eta: npt.ArrayLike,
    t_o: float,
    dt: float,
    rate_b: float,
) -> bool:
    """True when the filtered attack effect exceeds 2η at some sample.

    Raises:
        InputError: On empty sample arrays or mismatched lengths.
    """
    thresholds = np.asarray(eta, dtype=float)
    response = filtered_attack_response(a_u, h_p, t_o, dt, rate_b)
    if thresholds.size != response.size:
        raise InputError("η samples must match the attack samples")
    return bool(np.any(np.abs(response) > 2.0 * thresholds))


@dataclass
class MonitorStep:
    """Detector output for one step across all DGs."""

    r_norm: FloatArray
    eta: FloatArray
    detected: npt.NDArray[np.bool_]
    flags: npt.NDArray[np.bool_]
    mitigated: npt.NDArray[np.bool_]


@dataclass
class ResidualMonitor:
    """Stateful detector for N residual streams.

    Detection is suppressed before ``settings.arm_time``. With mitigation on,
    an alarm latches the mitigated mask for ``settings.hold_time`` after the
    last alarm so the estimate-based inputs do not chatter.
    """

    settings: DetectorSettings
    chi_bar: FloatArray
    n: int
    threshold_filter: FilterState = field(init=False)
    residual_filter: FilterState = field(init=False)
    last_alarm: FloatArray = field(init=False)

    def __post_init__(self) -> None:
        """Start all filters at rest."""
        pole = self.settings.filter_pole
        self.threshold_filter = FilterState(pole=pole, z=np.zeros(self.n))
        self.residual_filter = FilterState(pole=pole, z=np.zeros(self.n))
        self.last_alarm = np.full(self.n, -np.inf)

    def step(self, t: float, r: FloatArray, dt: float) -> MonitorStep:
        """Evaluate residuals (N, p) at time t after a step of length dt."""
        _, r_norm = residual(r, np.zeros_like(r))
        self.residual_filter, r_filt = filter_step(self.residual_filter, r_norm, dt)
        self.threshold_filter, level = filter_step(
            self.threshold_filter, self.chi_bar + self.settings.zeta_bar, dt
        )
        eta = np.maximum(level, self.settings.eta_floor)
        score = r_filt if self.settings.use_filtered else r_norm
        armed = t >= self.settings.arm_time
        detected = detect(score, eta) & armed
        flags = channel_flags(r, eta) & armed
        self.last_alarm = np.where(detected, t, self.last_alarm)
        if self.settings.mitigation:
            mitigated = t - self.last_alarm <= self.settings.hold_time
        else:
            mitigated = np.zeros(self.n, dtype=bool)
        return MonitorStep(
            r_norm=r_norm, eta=eta, detected=detected, flags=flags, mitigated=mitigated
        )

    @property
    def filtered_residual(self) -> FloatArray:
        """Current low-pass filtered residual norms."""
        return np.asarray(self.residual_filter.z, dtype=float)
