"""Scenario assembly: plant, equilibrium, observers, attack plan and summaries."""

import logging
from dataclasses import dataclass, replace

import numpy as np

from .attack import AttackPlan, Schedule, StealthyAttackSpec, synthesize_stealthy
from .config import ScenarioConfig
from .detector import CALIBRATION_MARGIN
from .dg_model import OMEGA_N, P, V_OD
from .errors import DispatchError, SynthesisError
from .microgrid import MicrogridPlant
from .numerics import FloatArray, spectral_abscissa
from .observer import ObserverBank, design_bank
from .opf import DispatchSettings, dispatch
from .simulation import SimTrace, run_scenario, steady_state
from .stability import (
    OperatingPoint,
    operating_point,
    operating_point_from_states,
    reduced_state_matrix,
)

logger = logging.getLogger(__name__)

EIGEN_TAGS = (
    "attack-free",
    "stealthy",
    "stealthy-intermittent",
    "mitigated-constrained",
)


@dataclass
class Scenario:
    """Objects built from a scenario config.

    Attributes:
        config: Validated scenario.
        plant: Stacked microgrid model.
        x_eq: Attack-free equilibrium (N, 15).
        observers: Observer bank, or None when disabled.
        attack: Attack plan, or None for the attack-free run.
    """

    config: ScenarioConfig
    plant: MicrogridPlant
    x_eq: FloatArray
    observers: ObserverBank | None
    attack: AttackPlan | None

    @property
    def settled_voltage(self) -> FloatArray:
        """Attack-free v_od of every DG."""
        return self.x_eq[:, V_OD]

    @property
    def settled_frequency(self) -> FloatArray:
        """Attack-free ω of every DG."""
        return self.x_eq[:, OMEGA_N] - self.plant.m_p * self.x_eq[:, P]


@dataclass
class SummaryRow:
    """Per-DG outcome of a run."""

    dg: int
    peak_v_dev: float
    peak_w_dev: float
    detections: int
    detection_latency: float | None
    eig_margin: float


def stealthy_spec(cfg: ScenarioConfig, plant: MicrogridPlant) -> StealthyAttackSpec:
    """Synthesize the stealthy generator described by the attack section.

    Raises:
        SynthesisError: When no stealthy direction exists.
    """
    target = cfg.attack.target - 1
    request = cfg.attack.stealthy()
    return synthesize_stealthy(
        plant.a[target], plant.b[target], plant.c,
        [ch - 1 for ch in request.u_channels],
        [ch - 1 for ch in request.y_channels],
        request.schedule, request.norms,
        rate_b=request.rate_b, contraction=request.contraction,
        variant=request.variant, c1=request.c1, c2=request.c2,
        seed=cfg.sim.seed,
    )


def build_attack(cfg: ScenarioConfig, plant: MicrogridPlant) -> AttackPlan | None:
    """Attack plan for the scenario, or None when attack-free."""
    section = cfg.attack
    if not section.enabled:
        return None
    target = section.target - 1
    if section.kind == "stealthy":
        return AttackPlan(target=target, stealthy=stealthy_spec(cfg, plant))
    return AttackPlan(
        target=target, kind=section.family(), start=section.start,
        stop=section.stop, injection=section.injection,
        gains=(section.gains[0], section.gains[1]),
    )


def build_observers(
    cfg: ScenarioConfig, plant: MicrogridPlant, x_eq: FloatArray
) -> ObserverBank | None:
    """Observer bank designed around the equilibrium, if enabled."""
    section = cfg.observer
    if not section.enabled:
        return None
    return design_bank(
        plant.a, plant.b, plant.c, cfg.grid.dgs, x_eq,
        variant=section.variant, poles=section.poles, margin=section.bound_margin,
    )


def build_scenario(cfg: ScenarioConfig) -> Scenario:
    """Assemble plant, equilibrium, observers and attack."""
    plant = MicrogridPlant(cfg.grid)
    x_eq = steady_state(plant, dt=cfg.sim.dt)
    scenario = Scenario(
        config=cfg, plant=plant, x_eq=x_eq,
        observers=build_observers(cfg, plant, x_eq),
        attack=build_attack(cfg, plant),
    )
    logger.info(
        "scenario with %d DGs, attack %s, observer %s",
        plant.n, cfg.attack.kind,
        cfg.observer.variant if cfg.observer.enabled else "off",
    )
    return scenario


def attack_start(plan: AttackPlan | None) -> float | None:
    """Onset of the attack, or None."""
    if plan is None:
        return None
    if plan.stealthy is not None:
        return plan.stealthy.schedule.first_start
    return plan.start


def calibrate_threshold(scenario: Scenario, horizon: float | None = None) -> FloatArray:
    """χ̄ per DG from an attack-free run: margin × peak residual after arming.

    The run lasts ``horizon`` seconds, twice the arming time by default, with
    sensor noise of deviation ``detector.calibration_noise`` on every output.
    """
    cfg = scenario.config
    arm = cfg.detector.arm_time
    length = horizon if horizon is not None else max(2.0 * arm, 10 * cfg.sim.dt)
    quiet = cfg.detector.model_copy(update={"mitigation": False})
    trace = run_scenario(
        cfg.grid, None, scenario.observers, length, cfg.sim.dt,
        detector=quiet, chi_bar=0.0, seed=cfg.sim.seed,
        record_interval=cfg.sim.record_interval, x0=scenario.x_eq,
        plant=scenario.plant, noise=cfg.detector.calibration_noise,
    )
    settled = trace.times >= arm
    window = trace.r_norm[settled] if settled.any() else trace.r_norm[-1:]
    chi = CALIBRATION_MARGIN * np.max(window, axis=0)
    logger.info("calibrated χ̄ %s", np.array2string(chi, precision=3))
    return np.asarray(chi, dtype=float)


def run(scenario: Scenario, chi_bar: FloatArray | None = None) -> SimTrace:
    """Simulate the scenario over its configured horizon.

    χ̄ comes from ``chi_bar``, then the detector section, then a
    calibration run.
    """
    cfg = scenario.config
    chi: FloatArray | float | None = chi_bar
    if chi is None and cfg.detector.chi_bar is not None:
        chi = cfg.detector.chi_bar
    if chi is None and scenario.observers is not None:
        chi = calibrate_threshold(scenario)
    return run_scenario(
        cfg.grid, scenario.attack, scenario.observers, cfg.sim.duration,
        cfg.sim.dt, detector=cfg.detector, chi_bar=chi, seed=cfg.sim.seed,
        record_interval=cfg.sim.record_interval, x0=scenario.x_eq,
        plant=scenario.plant,
    )


def stability_margin(scenario: Scenario) -> float:
    """−abscissa of the reduced model at the attack-free equilibrium."""
    cfg = scenario.config
    scale = cfg.stability.angle_scale
    op = operating_point_from_states(cfg.grid, scenario.x_eq, scale)
    return -spectral_abscissa(reduced_state_matrix(op))


def summarize(
    scenario: Scenario, trace: SimTrace, eig_margin: float | None = None
) -> list[SummaryRow]:
    """Peak deviations from the attack-free settled values and detection stats."""
    margin = stability_margin(scenario) if eig_margin is None else eig_margin
    v_dev = np.max(np.abs(trace.voltage() - scenario.settled_voltage), axis=0)
    w_dev = np.max(np.abs(trace.frequency() - scenario.settled_frequency), axis=0)
    onset = attack_start(scenario.attack)
    rows = []
    for i in range(trace.n_dg):
        latency = None
        if onset is not None:
            first = trace.first_detection(i, after=onset)
            latency = None if first is None else first - onset
        rows.append(
            SummaryRow(
                dg=i + 1, peak_v_dev=float(v_dev[i]), peak_w_dev=float(w_dev[i]),
                detections=trace.detection_count(i), detection_latency=latency,
                eig_margin=margin,
            )
        )
    return rows


def persistent(spec: StealthyAttackSpec) -> StealthyAttackSpec:
    """The same generator held on from the first start to the last stop."""
    window = spec.schedule
    schedule = Schedule(
        starts=[window.first_start],
        durations=[window.last_stop - window.first_start],
    )
    return replace(spec, schedule=schedule, offsets=spec.offsets[:1])


def attacked_operating_point(
    scenario: Scenario, target: int, spec: StealthyAttackSpec
) -> OperatingPoint:
    """Operating point at the mean plant state over the active attack samples.

    The attack runs from the equilibrium through its last slot with the
    observers and the detector off.

    Raises:
        SynthesisError: When no recorded sample falls inside an active slot.
    """
    cfg = scenario.config
    trace = run_scenario(
        cfg.grid, AttackPlan(target=target, stealthy=spec), None,
        spec.schedule.last_stop, cfg.sim.dt, seed=cfg.sim.seed,
        record_interval=cfg.sim.record_interval, x0=scenario.x_eq,
        plant=scenario.plant,
    )
    if not trace.attack_active.any():
        raise SynthesisError("no recorded sample inside an active attack slot")
    mean = trace.states[trace.attack_active].mean(axis=0)
    return operating_point_from_states(cfg.grid, mean, cfg.stability.angle_scale)


def eigen_matrices(scenario: Scenario) -> dict[str, FloatArray]:
    """Reduced state matrices for the attack-free, attacked and dispatched cases.

    The attacked tags linearize the reduced model around the mean of a
    simulated attacked trajectory. Tags whose ingredients
    cannot be built (no stealthy direction, no feasible dispatch) are left
    out with a warning.
    """
    cfg = scenario.config
    stab = cfg.stability
    op = operating_point_from_states(cfg.grid, scenario.x_eq, stab.angle_scale)
    a_hat = reduced_state_matrix(op)
    out = {"attack-free": a_hat}

    plan = scenario.attack
    target = plan.target if plan is not None else cfg.attack.target - 1
    try:
        spec = (
            plan.stealthy
            if plan is not None and plan.stealthy is not None
            else stealthy_spec(cfg, scenario.plant)
        )
    except SynthesisError as e:
        logger.warning("no stealthy generator for the eigen export: %s", e)
    else:
        held = attacked_operating_point(scenario, target, persistent(spec))
        out["stealthy"] = reduced_state_matrix(held)
        slots = attacked_operating_point(scenario, target, spec)
        out["stealthy-intermittent"] = reduced_state_matrix(slots)

    settings = DispatchSettings(
        enforce_stability=stab.enforce,
        angle_scale=stab.angle_scale,
        seed=cfg.sim.seed,
    )
    try:
        sp = dispatch(cfg.grid, stab.eta, settings)
    except DispatchError as e:
        logger.warning("dispatch failed, no constrained eigenvalues: %s", e)
    else:
        dispatched = operating_point(cfg.grid, sp.v, sp.delta, stab.angle_scale)
        out["mitigated-constrained"] = reduced_state_matrix(dispatched)
    return out
