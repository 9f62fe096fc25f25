"""Coupled plant, observer and detector simulation with fixed-step RK4."""

import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import numpy.typing as npt
import scipy.optimize

from .attack import AttackPlan, arbitrary_attack, attack_signal
from .detector import DetectorSettings, MonitorStep, ResidualMonitor, mitigate
from .dg_model import (
    DELTA,
    GAMMA_D,
    GAMMA_Q,
    I_LD,
    I_LQ,
    I_OD,
    I_OQ,
    MEASURED,
    N_STATES,
    OMEGA_N,
    P,
    PHI_D,
    PHI_Q,
    Q,
    V_N,
    V_OD,
    V_OQ,
)
from .errors import DimensionError, DivergenceError, InputError, IntegrationError
from .microgrid import MicrogridConfig, MicrogridPlant, broadcast_data
from .numerics import FloatArray, rk4_step
from .observer import ObserverBank, initial_estimate

logger = logging.getLogger(__name__)

DEFAULT_DT = 2e-5
DEFAULT_RECORD_INTERVAL = 1e-4
DIVERGENCE_LIMIT = 1e9
SETTLE_TIME = 0.5


class SimEvent(NamedTuple):
    """State change seen during a run."""

    t: float
    dg: int
    kind: str


@dataclass
class SimTrace:
    """Decimated histories of one run.

    Attributes:
        times: Sample instants (K,), uniform.
        states: Plant states (K, N, 15).
        estimates: Observer estimates (K, N, 15); zeros without observers.
        residuals: Output residuals y − C x̂ (K, N, 10).
        r_norm: Residual norms (K, N).
        eta: Thresholds (K, N).
        detected: Alarm flags (K, N).
        mitigated: Estimate-substitution flags (K, N).
        attack_active: Whether the attack was on at each sample (K,).
        m_p: Active droops (N,), for frequency reconstruction.
        events: Every on/off transition, at step resolution.
    """

    times: FloatArray
    states: FloatArray
    estimates: FloatArray
    residuals: FloatArray
    r_norm: FloatArray
    eta: FloatArray
    detected: npt.NDArray[np.bool_]
    mitigated: npt.NDArray[np.bool_]
    attack_active: npt.NDArray[np.bool_]
    m_p: FloatArray
    events: list[SimEvent] = field(default_factory=list)

    @property
    def n_samples(self) -> int:
        """Number of recorded samples."""
        return int(self.times.size)

    @property
    def n_dg(self) -> int:
        """Number of DGs."""
        return int(self.states.shape[1])

    def frequency(self) -> FloatArray:
        """Electrical frequencies ω = ω_n − m_P·P, shape (K, N)."""
        return self.states[..., OMEGA_N] - self.m_p * self.states[..., P]

    def voltage(self) -> FloatArray:
        """Capacitor d-axis voltages, shape (K, N)."""
        return self.states[..., V_OD]

    def estimation_error(self) -> FloatArray:
        """‖x − x̂‖ over every state except the angle, shape (K, N)."""
        err = self.states - self.estimates
        err[..., DELTA] = 0.0
        return np.linalg.norm(err, axis=-1)

    def first_detection(self, dg: int, after: float = 0.0) -> float | None:
        """Earliest detect_on event of a DG at or after ``after``."""
        hits = [
            e.t
            for e in self.events
            if e.dg == dg and e.kind == "detect_on" and e.t >= after
        ]
        return min(hits) if hits else None

    def detection_count(self, dg: int) -> int:
        """Number of alarm onsets of a DG."""
        return sum(1 for e in self.events if e.dg == dg and e.kind == "detect_on")


def incremental_residual(attacked: SimTrace, nominal: SimTrace) -> FloatArray:
    """r_a = r(attacked) − r(attack-free) from two runs on the same grid."""
    if attacked.residuals.shape != nominal.residuals.shape:
        raise DimensionError("traces were recorded on different grids")
    return attacked.residuals - nominal.residuals


def flat_start(plant: MicrogridPlant) -> FloatArray:
    """Equilibrium estimate with every capacitor voltage at v_ref, angles zero."""
    cfg = plant.cfg
    n = plant.n
    z_c = np.array([p.r_c + 1j * cfg.omega_ref * p.l_c for p in cfg.dgs])
    v_o = np.full(n, cfg.v_ref, dtype=complex)
    i_o = np.linalg.solve(plant.network.z_red + np.diag(z_c), v_o)

    x = np.zeros((n, N_STATES))
    omega = cfg.omega_ref
    for i, p in enumerate(cfg.dgs):
        v_od, v_oq = cfg.v_ref, 0.0
        i_od, i_oq = float(i_o[i].real), float(i_o[i].imag)
        active = v_od * i_od + v_oq * i_oq
        reactive = v_oq * i_od - v_od * i_oq
        i_ld = i_od - omega * p.c_f * v_oq
        i_lq = i_oq + omega * p.c_f * v_od
        x[i, P], x[i, Q] = active, reactive
        x[i, I_LD], x[i, I_LQ] = i_ld, i_lq
        x[i, V_OD], x[i, V_OQ] = v_od, v_oq
        x[i, I_OD], x[i, I_OQ] = i_od, i_oq
        x[i, OMEGA_N] = omega + p.m_p * active
        x[i, V_N] = v_od + p.n_q * reactive
        x[i, PHI_D] = (i_ld + p.omega_b * p.c_f * v_oq - p.f_comp * i_od) / p.k_iv
        x[i, PHI_Q] = (
            i_lq - p.omega_b * p.c_f * v_od + p.k_pv * v_oq - p.f_comp * i_oq
        ) / p.k_iv

    # Current-loop integrators cancel what is left on the inductor rows
    rest = plant.closed_loop(x)
    for i, p in enumerate(cfg.dgs):
        x[i, GAMMA_D] = -rest[i, I_LD] * p.l_f / p.k_ic
        x[i, GAMMA_Q] = -rest[i, I_LQ] * p.l_f / p.k_ic
    return x


def _free_mask(plant: MicrogridPlant) -> npt.NDArray[np.bool_]:
    mask = np.ones((plant.n, N_STATES), dtype=bool)
    mask[plant.leader, DELTA] = False
    return mask


def _solve_equilibrium(
    plant: MicrogridPlant, guess: FloatArray
) -> tuple[FloatArray, float]:
    mask = _free_mask(plant)

    def residual_fn(z: FloatArray) -> FloatArray:
        x = guess.copy()
        x[mask] = z
        return plant.closed_loop(x)[mask]

    z, info, ier, msg = scipy.optimize.fsolve(
        residual_fn, guess[mask], full_output=True, xtol=1e-12
    )
    x = guess.copy()
    x[mask] = z
    worst = float(np.max(np.abs(info["fvec"])))
    logger.debug(
        "fsolve: ier=%d, %d evaluations, max |f| %.3g (%s)",
        ier, info["nfev"], worst, msg,
    )
    return x, worst


def steady_state(
    plant: MicrogridPlant, tol: float = 1e-6, dt: float = DEFAULT_DT
) -> FloatArray:
    """Attack-free operating point of the coupled microgrid, shape (N, 15).

    Solves the closed loop from a flat start; when that fails the plant is
    settled by simulation first and solved again.
    """
    x, worst = _solve_equilibrium(plant, flat_start(plant))
    if worst > tol:
        logger.warning("flat-start equilibrium off by %.3g; settling first", worst)
        settled = settle(plant, flat_start(plant), SETTLE_TIME, dt)
        x, worst = _solve_equilibrium(plant, settled)
        if worst > tol:
            logger.warning("equilibrium residual %.3g above tolerance %.3g", worst, tol)
    logger.info("equilibrium found, max |dx/dt| %.3g", worst)
    return x


def settle(
    plant: MicrogridPlant, x0: FloatArray, duration: float, dt: float
) -> FloatArray:
    """Integrate the attack-free plant alone for ``duration`` seconds."""
    shape = x0.shape

    def rhs(_t: float, z: FloatArray) -> FloatArray:
        return plant.closed_loop(z.reshape(shape)).ravel()

    z = x0.ravel().copy()
    for k in range(int(round(duration / dt))):
        z = rk4_step(rhs, z, k * dt, dt)
    return z.reshape(shape)


@dataclass
class _AttackState:
    """Per-run attack bookkeeping carried between steps."""

    plan: AttackPlan | None
    rng: np.random.Generator
    sample: FloatArray = field(default_factory=lambda: np.zeros(2))
    slot: int | None = None
    active: bool = False

    def begin_step(self, t: float, zeta: FloatArray) -> FloatArray:
        """Update samples and generator resets at the start of a step."""
        plan = self.plan
        if plan is None:
            return zeta
        self.active = plan.window_active(t)
        if plan.stealthy is not None:
            spec = plan.stealthy
            k = spec.schedule.slot(t)
            if self.active and k != self.slot:
                self.slot = k
                assert k is not None
                return -spec.offset(k)
        elif self.active and plan.kind is not None:
            gains = np.asarray(plan.gains, dtype=float)
            self.sample = arbitrary_attack(plan.kind, t, self.rng) * gains
        return zeta


def run_scenario(
    cfg: MicrogridConfig,
    attack: AttackPlan | None,
    observers: ObserverBank | None,
    duration: float,
    dt: float = DEFAULT_DT,
    *,
    detector: DetectorSettings | None = None,
    chi_bar: npt.ArrayLike | None = None,
    seed: int = 0,
    record_interval: float = DEFAULT_RECORD_INTERVAL,
    x0: FloatArray | None = None,
    plant: MicrogridPlant | None = None,
    noise: float = 0.0,
    x_hat0: FloatArray | None = None,
) -> SimTrace:
    """Simulate the microgrid with an optional attack, observers and detector.

    Each RK4 stage solves the network, assembles the inputs of every DG,
    applies the attack and mitigation, and evaluates plant and observers
    together. The detector runs once per step on the updated residual.

    Args:
        cfg: Microgrid description.
        attack: Attack to apply, or None.
        observers: Observer bank, or None to run the plant alone.
        duration: Horizon in seconds; must be at least ``dt``.
        dt: Integration step in seconds.
        detector: Detector options; defaults apply when omitted.
        chi_bar: Per-DG χ̄ overriding ``detector.chi_bar``.
        seed: Seed of the stochastic attack samples.
        record_interval: Spacing of recorded samples.
        x0: Initial plant state (N, 15); the equilibrium when omitted.
        plant: Prebuilt plant for ``cfg``.
        noise: Standard deviation of white sensor noise on every reported
            output, resampled once per step.
        x_hat0: Initial observer estimate (N, 15); the measured states with
            zeros elsewhere when omitted.

    Returns:
        Trace sampled every ``record_interval`` (or every step when shorter).

    Raises:
        InputError: On a non-positive step or a horizon shorter than it.
        DimensionError: When x0 or x_hat0 is not (N, 15).
        DivergenceError: When the plant state blows up.
    """
    if dt <= 0 or duration < dt * (1 - 1e-9):
        raise InputError("need dt > 0 and duration >= dt")
    if noise < 0:
        raise InputError("sensor noise must be nonnegative")
    plant = plant or MicrogridPlant(cfg)
    settings = detector or DetectorSettings()
    n = plant.n
    x = np.array(x0, dtype=float) if x0 is not None else steady_state(plant)
    if x.shape != (n, N_STATES):
        raise DimensionError(f"initial state must be ({n}, {N_STATES})")
    x_hat = (
        np.array(x_hat0, dtype=float)
        if x_hat0 is not None
        else initial_estimate(x[:, list(MEASURED)])
    )
    if x_hat.shape != x.shape:
        raise DimensionError(f"initial estimate must be ({n}, {N_STATES})")
    meas = list(MEASURED)

    chi = np.broadcast_to(
        np.asarray(
            chi_bar if chi_bar is not None else (settings.chi_bar or 0.0), dtype=float
        ),
        (n,),
    ).copy()
    monitor = ResidualMonitor(settings=settings, chi_bar=chi, n=n)

    spec = attack.stealthy if attack is not None else None
    n_zeta = spec.a.shape[0] if spec is not None else 0
    state = _AttackState(plan=attack, rng=np.random.default_rng(seed))
    noise_rng = np.random.default_rng([seed, 1])
    target = attack.target if attack is not None else -1
    injection = attack.injection if attack is not None and spec is None else None
    if attack is not None and not 0 <= target < n:
        raise InputError(f"attack target {target + 1} is not a DG")
    row_sum = plant.adjacency.sum(axis=1)

    n_steps = int(round(duration / dt))
    stride = min(max(1, int(round(record_interval / dt))), n_steps)
    n_rec = n_steps // stride
    times = np.zeros(n_rec)
    states = np.zeros((n_rec, n, N_STATES))
    estimates = np.zeros((n_rec, n, N_STATES))
    residuals = np.zeros((n_rec, n, len(meas)))
    r_norm = np.zeros((n_rec, n))
    eta = np.zeros((n_rec, n))
    detected = np.zeros((n_rec, n), dtype=bool)
    mitigated_rec = np.zeros((n_rec, n), dtype=bool)
    active_rec = np.zeros(n_rec, dtype=bool)
    events: list[SimEvent] = []

    mitigated = np.zeros(n, dtype=bool)
    flags = np.zeros((n, len(meas)), dtype=bool)
    prev_detected = np.zeros(n, dtype=bool)
    prev_active = False
    zeta = np.zeros(n_zeta)
    size = n * N_STATES
    jitter = np.zeros((n, len(meas)))

    def reported(xx: FloatArray, t: float, zz: FloatArray) -> FloatArray:
        y = xx[:, meas] + jitter
        if spec is not None and spec.y_channels and state.active:
            a, _ = attack_signal(spec, t, zz)
            y[target, list(spec.y_channels)] += a[spec.n_u :]
        return y

    def rhs(t: float, z: FloatArray) -> FloatArray:
        xx = z[:size].reshape(n, N_STATES)
        xh = z[size : 2 * size].reshape(n, N_STATES)
        zz = z[2 * size :]
        v_b = plant.bus_voltages(xx)
        y = reported(xx, t, zz)
        s = state.sample

        # Neighbor data is corrupted in transit; alarmed receivers read estimates
        sent = mitigate(y, xh[:, meas], flags & mitigated[:, None])
        received = plant.adjacency @ broadcast_data(sent, plant.m_p, plant.n_q)
        if state.active and injection == "neighbor_data":
            received[target, 0] += row_sum[target] * s[0]
            received[target, 2] += row_sum[target] * s[1]
        if mitigated.any():
            from_estimates = plant.adjacency @ broadcast_data(xh, plant.m_p, plant.n_q)
            received[mitigated] = from_estimates[mitigated]
        u = plant.inputs(xx, v_b, received)

        d_zeta = np.zeros(n_zeta)
        x_eff = xx
        if spec is not None and state.active:
            a, d_zeta = attack_signal(spec, t, zz)
            u[target, list(spec.u_channels)] += a[: spec.n_u]
        elif state.active and injection == "secondary_output":
            x_eff = xx.copy()
            x_eff[target, OMEGA_N] += s[0]
            x_eff[target, V_N] += s[1]
            if mitigated[target]:
                x_eff[target, [OMEGA_N, V_N]] = xh[target, [OMEGA_N, V_N]]

        dx = plant.derivative(x_eff, u)
        if x_eff is not xx:
            true_rows = plant.derivative(xx, u)[target, [OMEGA_N, V_N]]
            dx[target, [OMEGA_N, V_N]] = true_rows

        if observers is not None:
            u_obs = plant.inputs(xx, v_b)
            dxh = observers.derivative(xh, u_obs, y)
        else:
            dxh = np.zeros_like(xh)
        return np.concatenate([dx.ravel(), dxh.ravel(), d_zeta])

    z = np.concatenate([x.ravel(), x_hat.ravel(), zeta])
    rec = 0
    step: MonitorStep | None = None
    logger.info("running %d steps of %.3g s on %d DGs", n_steps, dt, n)
    for k in range(n_steps):
        t = k * dt
        if noise > 0:
            jitter = noise * noise_rng.standard_normal((n, len(meas)))
        zeta = state.begin_step(t, z[2 * size :])
        z[2 * size :] = zeta
        if state.active != prev_active:
            kind = "attack_on" if state.active else "attack_off"
            events.append(SimEvent(t, target, kind))
            prev_active = state.active
        try:
            z = rk4_step(rhs, z, t, dt)
        except IntegrationError as e:
            raise DivergenceError("plant state became non-finite", t) from e
        t_next = (k + 1) * dt
        xx = z[:size].reshape(n, N_STATES)
        if np.max(np.abs(xx)) > DIVERGENCE_LIMIT:
            raise DivergenceError("plant state norm exceeded the blow-up limit", t_next)

        if observers is not None:
            xh = z[size : 2 * size].reshape(n, N_STATES)
            r = reported(xx, t_next, z[2 * size :]) - xh[:, meas]
            step = monitor.step(t_next, r, dt)
            flags = step.flags
            for i in np.flatnonzero(step.detected != prev_detected):
                kind = "detect_on" if step.detected[i] else "detect_off"
                events.append(SimEvent(t_next, int(i), kind))
                if kind == "detect_on":
                    logger.info("DG %d alarm at t=%.4f s", i + 1, t_next)
            for i in np.flatnonzero(step.mitigated != mitigated):
                kind = "mitigation_on" if step.mitigated[i] else "mitigation_off"
                events.append(SimEvent(t_next, int(i), kind))
            prev_detected = step.detected
            mitigated = step.mitigated
        else:
            r = np.zeros((n, len(meas)))
            step = None

        if (k + 1) % stride == 0 and rec < n_rec:
            times[rec] = t_next
            states[rec] = xx
            estimates[rec] = z[size : 2 * size].reshape(n, N_STATES)
            residuals[rec] = r
            if step is not None:
                r_norm[rec] = step.r_norm
                eta[rec] = step.eta
                detected[rec] = step.detected
            else:
                eta[rec] = settings.eta_floor
            mitigated_rec[rec] = mitigated
            active_rec[rec] = state.active
            rec += 1

    return SimTrace(
        times=times, states=states, estimates=estimates, residuals=residuals,
        r_norm=r_norm, eta=eta, detected=detected, mitigated=mitigated_rec,
        attack_active=active_rec, m_p=plant.m_p.copy(), events=events,
    )
