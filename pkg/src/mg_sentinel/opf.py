"""Power flow, OPF constraint evaluation and stability-constrained dispatch."""

import logging
from dataclasses import dataclass
from typing import Literal

import numpy as np
import numpy.typing as npt
import scipy.optimize
from pydantic import BaseModel, ConfigDict, Field, computed_field

from .errors import DispatchError, NetworkError, SingularityError
from .microgrid import MicrogridConfig, NetworkSolver
from .numerics import ComplexArray, FloatArray, spectral_abscissa
from .stability import (
    OperatingPoint,
    connector_impedances,
    effective_admittance,
    operating_point,
    reduced_state_matrix,
)

logger = logging.getLogger(__name__)

Constraint = Literal["balance", "p_box", "q_box", "line", "voltage", "stability"]
ALL_CONSTRAINTS: tuple[Constraint, ...] = (
    "balance", "p_box", "q_box", "line", "voltage", "stability"
)
FEASIBILITY_TOL = 1e-8


@dataclass(frozen=True)
class Setpoints:
    """Inverter setpoints with the network state they produce.

    Attributes:
        p: Active powers (N,), W.
        q: Reactive powers (N,), var.
        v: Capacitor voltage magnitudes (N,), V.
        delta: Angles (N,), the leader's zero.
    """

    p: FloatArray
    q: FloatArray
    v: FloatArray
    delta: FloatArray


class OpfReport(BaseModel):
    """Cost and per-constraint slack of a set of setpoints.

    A negative slack is a violation of that size in the constraint's own
    unit (W, var, A, p.u. or 1/s).
    """

    model_config = ConfigDict(frozen=True)

    cost: float
    slacks: dict[str, float]
    stability_margin: float = Field(description="−abscissa(Â), 1/s")

    @computed_field
    @property
    def feasible(self) -> bool:
        """True when every slack is at least −1e-8."""
        return all(s >= -FEASIBILITY_TOL for s in self.slacks.values())

    @computed_field
    @property
    def violation(self) -> float:
        """Sum of the negative parts of all slacks."""
        return float(sum(max(0.0, -s) for s in self.slacks.values()))

    def format_summary(self) -> str:
        """One line per constraint."""
        lines = [
            f"cost: {self.cost:.6g}",
            f"stability margin: {self.stability_margin:.6g} 1/s",
        ]
        for name, slack in self.slacks.items():
            mark = "ok" if slack >= -FEASIBILITY_TOL else "VIOLATED"
            lines.append(f"{name}: {slack:.6g} ({mark})")
        return "\n".join(lines)


class DispatchSettings(BaseModel):
    """Options of the penalty dispatch heuristic."""

    model_config = ConfigDict(frozen=True)

    constraints: frozenset[Constraint] = frozenset(ALL_CONSTRAINTS)
    enforce_stability: bool = True
    balance_tolerance: float = Field(default=1.0, gt=0, description="W and var")
    penalty: float = Field(default=1e3, gt=0)
    initial_step: float = Field(default=500.0, gt=0, description="W")
    min_step: float = Field(default=1e-2, gt=0, description="W")
    max_sweeps: int = Field(default=400, ge=1)
    seed: int = 0
    angle_scale: float | None = None


def _network(cfg: MicrogridConfig) -> tuple[ComplexArray, ComplexArray]:
    solver = NetworkSolver(cfg)
    z_c = connector_impedances(cfg)
    return effective_admittance(solver.y_red, z_c), z_c


def injections(
    cfg: MicrogridConfig, v: npt.ArrayLike, delta: npt.ArrayLike
) -> ComplexArray:
    """Complex powers drawn from each inverter for voltages v·e^{jδ}."""
    y_eff, _ = _network(cfg)
    v_o = np.asarray(v, dtype=float) * np.exp(1j * np.asarray(delta, dtype=float))
    return v_o * np.conj(y_eff @ v_o)


def power_flow(
    cfg: MicrogridConfig, p: npt.ArrayLike, v: npt.ArrayLike | None = None
) -> Setpoints:
    """Angles meeting the active power of every non-leader inverter.

    The leader is the slack: its active power and every reactive power follow
    from the network.

    Raises:
        NetworkError: When the angle equations do not converge.
    """
    n = cfg.n_dg
    leader = cfg.leader_index
    y_eff, _ = _network(cfg)
    mags = np.full(n, cfg.v_ref) if v is None else np.asarray(v, dtype=float)
    target = np.asarray(p, dtype=float)
    free = [i for i in range(n) if i != leader]

    def flows(angles: FloatArray) -> ComplexArray:
        delta = np.zeros(n)
        delta[free] = angles
        v_o = mags * np.exp(1j * delta)
        return v_o * np.conj(y_eff @ v_o)

    def mismatch(angles: FloatArray) -> FloatArray:
        return flows(angles).real[free] - target[free]

    delta = np.zeros(n)
    if free:
        angles, info, ier, msg = scipy.optimize.fsolve(
            mismatch, np.zeros(n - 1), full_output=True, xtol=1e-12
        )
        worst = float(np.max(np.abs(info["fvec"])))
        if worst > 1e-6 * max(1.0, float(np.max(np.abs(target)))):
            raise NetworkError(f"power flow did not converge: {msg}")
        delta[free] = angles
    s = flows(delta[free])
    return Setpoints(p=s.real.copy(), q=s.imag.copy(), v=mags.copy(), delta=delta)


def cost(cfg: MicrogridConfig, p: npt.ArrayLike) -> float:
    """Σ α P² + β P + γ."""
    pp = np.asarray(p, dtype=float)
    alpha = np.array([d.alpha for d in cfg.dgs])
    beta = np.array([d.beta for d in cfg.dgs])
    gamma = np.array([d.gamma for d in cfg.dgs])
    return float(np.sum(alpha * pp**2 + beta * pp + gamma))


def _setpoint_op(
    cfg: MicrogridConfig, sp: Setpoints, angle_scale: float | None
) -> OperatingPoint:
    return operating_point(cfg, sp.v, sp.delta, angle_scale)


def opf_feasibility(
    setpoints: Setpoints,
    cfg: MicrogridConfig,
    eta_stab: float = 0.0,
    *,
    balance_tolerance: float = 1.0,
    angle_scale: float | None = None,
    constraints: frozenset[Constraint] = frozenset(ALL_CONSTRAINTS),
) -> OpfReport:
    """Evaluate cost and constraint slacks of given setpoints.

    Raises:
        NetworkError: When the network cannot be solved.
    """
    n = cfg.n_dg
    sp = setpoints
    slacks: dict[str, float] = {}

    s = injections(cfg, sp.v, sp.delta)
    if "balance" in constraints:
        gap = float(max(np.max(np.abs(sp.p - s.real)), np.max(np.abs(sp.q - s.imag))))
        slacks["balance"] = balance_tolerance - gap
    if "p_box" in constraints:
        lo = np.array([d.p_min for d in cfg.dgs])
        hi = np.array([d.p_max for d in cfg.dgs])
        slacks["p_box"] = float(min(np.min(sp.p - lo), np.min(hi - sp.p)))
    if "q_box" in constraints:
        lo = np.array([d.q_min for d in cfg.dgs])
        hi = np.array([d.q_max for d in cfg.dgs])
        slacks["q_box"] = float(min(np.min(sp.q - lo), np.min(hi - sp.q)))

    if "line" in constraints or "voltage" in constraints:
        solver = NetworkSolver(cfg)
        v_o = sp.v * np.exp(1j * sp.delta)
        i_o = effective_admittance(solver.y_red, connector_impedances(cfg)) @ v_o
        buses = solver.full_voltages(i_o)
        if "line" in constraints and cfg.lines:
            flows = [
                abs(buses[ln.from_bus - 1] - buses[ln.to_bus - 1])
                / abs(complex(ln.r, cfg.omega_base * ln.l))
                for ln in cfg.lines
            ]
            slacks["line"] = cfg.line_limit - max(flows)
        if "voltage" in constraints:
            pu = np.abs(buses) / cfg.v_ref
            low, high = np.min(pu - cfg.v_min), np.min(cfg.v_max - pu)
            slacks["voltage"] = float(min(low, high))

    try:
        a_hat = reduced_state_matrix(_setpoint_op(cfg, sp, angle_scale))
        margin = -spectral_abscissa(a_hat)
    except SingularityError:
        margin = -np.inf
    if "stability" in constraints:
        slacks["stability"] = margin - eta_stab
    logger.debug("OPF check on %d inverters: %s", n, slacks)
    return OpfReport(cost=cost(cfg, sp.p), slacks=slacks, stability_margin=margin)


@dataclass
class _Search:
    """Best iterates seen by the dispatch loop."""

    best: Setpoints | None = None
    best_cost: float = np.inf
    least_violation: float = np.inf
    evaluations: int = 0


def dispatch(
    cfg: MicrogridConfig,
    eta_stab: float = 0.0,
    settings: DispatchSettings | None = None,
) -> Setpoints:
    """Cheapest setpoints found by projected coordinate descent.

    The objective is the generation cost plus quadratic penalties on the
    enabled constraints. With ``enforce_stability`` any iterate whose decay
    margin is not above ``eta_stab`` is rejected and margins close to it are
    penalized. With the balance constraint enabled the leader is the slack
    bus and the remaining active powers are searched; without it every
    active power is free.

    Raises:
        DispatchError: When no iterate satisfies the enabled constraints.
    """
    opts = settings or DispatchSettings()
    n = cfg.n_dg
    rng = np.random.default_rng(opts.seed)
    balance = "balance" in opts.constraints
    free = [i for i in range(n) if not balance or i != cfg.leader_index]
    lo = np.array([d.p_min for d in cfg.dgs])
    hi = np.array([d.p_max for d in cfg.dgs])
    checks = opts.constraints
    if not opts.enforce_stability:
        checks = checks - {"stability"}
    search = _Search()

    def realize(p: FloatArray) -> Setpoints:
        if balance:
            return power_flow(cfg, p)
        return Setpoints(
            p=p.copy(), q=np.zeros(n), v=np.full(n, cfg.v_ref), delta=np.zeros(n)
        )

    def objective(p: FloatArray) -> float:
        search.evaluations += 1
        try:
            sp = realize(p)
        except NetworkError:
            return np.inf
        report = opf_feasibility(
            sp, cfg, eta_stab, balance_tolerance=opts.balance_tolerance,
            angle_scale=opts.angle_scale, constraints=checks,
        )
        if opts.enforce_stability and report.stability_margin <= eta_stab:
            return np.inf
        hinge = {k: max(0.0, -v) for k, v in report.slacks.items() if k != "stability"}
        value = report.cost + opts.penalty * sum(h**2 for h in hinge.values())
        if opts.enforce_stability:
            room = report.stability_margin - eta_stab
            value += opts.penalty * max(0.0, 1.0 - room) ** 2
        if report.violation < search.least_violation:
            search.least_violation = report.violation
        if report.feasible and report.cost < search.best_cost:
            search.best, search.best_cost = sp, report.cost
        return value

    # Start from droop sharing of the attack-free load
    weights = 1.0 / np.maximum(np.array([d.m_p for d in cfg.dgs]), 1e-12)
    demand = float(np.sum(injections(cfg, np.full(n, cfg.v_ref), np.zeros(n)).real))
    p = np.clip(demand * weights / weights.sum(), lo, hi)
    current = objective(p)
    step = opts.initial_step
    for sweep in range(opts.max_sweeps):
        improved = False
        for i in rng.permutation(free):
            for sign in (1.0, -1.0):
                trial = p.copy()
                trial[i] = np.clip(trial[i] + sign * step, lo[i], hi[i])
                if trial[i] == p[i]:
                    continue
                value = objective(trial)
                if value < current:
                    p, current, improved = trial, value, True
                    break
        if not improved:
            step /= 2
            if step < opts.min_step:
                logger.debug("dispatch converged after %d sweeps", sweep + 1)
                break

    if search.best is None:
        raise DispatchError("no feasible dispatch found", search.least_violation)
    logger.info(
        "dispatch cost %.6g after %d evaluations", search.best_cost, search.evaluations
    )
    return search.best
