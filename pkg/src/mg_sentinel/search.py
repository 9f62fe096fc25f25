"""Worst-case attack search by co-simulation over a bounded parameter family."""

import itertools
import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Literal, NamedTuple

import numpy as np
import scipy.integrate
from pydantic import BaseModel, ConfigDict, Field, field_validator

from .config import AttackSection, ScenarioConfig
from .errors import InputError, MicrogridError
from .numerics import FloatArray
from .scenarios import Scenario, build_scenario, calibrate_threshold, run
from .simulation import SimTrace

logger = logging.getLogger(__name__)

DEFAULT_FREQUENCY_WEIGHT = 1.0


class SearchFamily(BaseModel):
    """Attack parameters explored by the search.

    Offsets are scaled by ``scales`` (then clipped to the section's [c1, c2])
    and the whole schedule is shifted by ``shifts`` seconds.
    """

    model_config = ConfigDict(frozen=True)

    rates: list[float] = Field(default_factory=lambda: [0.1, 0.2, 0.5, 1.0])
    scales: list[float] = Field(default_factory=lambda: [0.25, 0.5, 1.0])
    shifts: list[float] = Field(default_factory=lambda: [0.0, 0.05])
    mode: Literal["grid", "random"] = "grid"

    @field_validator("rates", "scales")
    @classmethod
    def validate_positive(cls, v: list[float]) -> list[float]:
        """Validate nonempty lists of positive values."""
        if not v or any(x <= 0 for x in v):
            raise ValueError("needs at least one positive value")
        return v

    @field_validator("shifts")
    @classmethod
    def validate_shifts(cls, v: list[float]) -> list[float]:
        """Validate a nonempty shift list."""
        if not v:
            raise ValueError("needs at least one shift")
        return v


class AttackCandidate(NamedTuple):
    """One point of the search family."""

    rate_b: float
    scale: float
    shift: float


class RankedAttack(NamedTuple):
    """Evaluated candidate, ordered by objective."""

    objective: float
    evaded: bool
    params: AttackCandidate


def candidates(
    family: SearchFamily, budget: int, seed: int = 0
) -> list[AttackCandidate]:
    """Up to ``budget`` candidates: the grid, or a seeded sample of the ranges."""
    if budget < 1:
        raise InputError("search budget must be at least 1")
    rng = np.random.default_rng(seed)
    if family.mode == "random":
        return [
            AttackCandidate(
                rate_b=float(rng.uniform(min(family.rates), max(family.rates))),
                scale=float(rng.uniform(min(family.scales), max(family.scales))),
                shift=float(rng.uniform(min(family.shifts), max(family.shifts))),
            )
            for _ in range(budget)
        ]
    grid = [
        AttackCandidate(*p)
        for p in itertools.product(family.rates, family.scales, family.shifts)
    ]
    if len(grid) <= budget:
        return grid
    picks = sorted(rng.choice(len(grid), size=budget, replace=False))
    return [grid[i] for i in picks]


def apply_candidate(section: AttackSection, cand: AttackCandidate) -> AttackSection:
    """Stealthy attack section with the candidate's rate, scale and shift."""
    norms = [min(max(n * cand.scale, section.c1), section.c2) for n in section.norms]
    data = section.model_dump()
    data.update(
        kind="stealthy",
        rate_b=cand.rate_b,
        norms=norms,
        starts=[s + cand.shift for s in section.starts],
    )
    return AttackSection.model_validate(data)


def attack_objective(
    trace: SimTrace,
    settled_voltage: FloatArray,
    settled_frequency: FloatArray,
    weight: float = DEFAULT_FREQUENCY_WEIGHT,
) -> float:
    """∫ Σ_i |v_od − v̄| + w·|ω − ω̄| dt over the recorded horizon."""
    dev = np.abs(trace.voltage() - settled_voltage)
    dev = dev + weight * np.abs(trace.frequency() - settled_frequency)
    total = dev.sum(axis=1)
    if total.size < 2:
        return 0.0
    return float(scipy.integrate.trapezoid(total, trace.times))


def evaluate(
    cfg: ScenarioConfig,
    cand: AttackCandidate,
    chi_bar: FloatArray | None,
    weight: float = DEFAULT_FREQUENCY_WEIGHT,
) -> RankedAttack:
    """Run one candidate and score it."""
    attacked = cfg.model_copy(update={"attack": apply_candidate(cfg.attack, cand)})
    try:
        scenario = build_scenario(attacked)
        trace = run(scenario, chi_bar)
    except MicrogridError as e:
        logger.warning("candidate %s failed: %s", cand, e)
        return RankedAttack(objective=float("-inf"), evaded=False, params=cand)
    objective = attack_objective(
        trace, scenario.settled_voltage, scenario.settled_frequency, weight
    )
    evaded = not bool(trace.detected.any())
    logger.debug("candidate %s: objective %.6g, evaded %s", cand, objective, evaded)
    return RankedAttack(objective=objective, evaded=evaded, params=cand)


def _evaluate_packed(
    args: tuple[ScenarioConfig, AttackCandidate, FloatArray | None, float],
) -> RankedAttack:
    return evaluate(*args)


def worst_case_attack_search(
    cfg: ScenarioConfig,
    family: SearchFamily | None = None,
    budget: int = 8,
    seed: int = 0,
    jobs: int = 1,
    weight: float = DEFAULT_FREQUENCY_WEIGHT,
) -> list[RankedAttack]:
    """Evaluate attack candidates and rank them by damage, largest first.

    χ̄ is calibrated once on the attack-free scenario and shared by every
    candidate so that evasion is judged against a single threshold.

    Raises:
        InputError: When ``budget`` is below 1.
    """
    picks = candidates(family or SearchFamily(), budget, seed)
    base = cfg.model_copy(update={"attack": AttackSection()})
    chi_bar: FloatArray | None = None
    if cfg.detector.chi_bar is None and cfg.observer.enabled:
        reference: Scenario = build_scenario(base)
        chi_bar = calibrate_threshold(reference)
    work = [(cfg, cand, chi_bar, weight) for cand in picks]
    logger.info("searching %d attack candidates on %d workers", len(work), jobs)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_evaluate_packed, work))
    else:
        results = [_evaluate_packed(w) for w in work]
    return sorted(results, key=lambda r: r.objective, reverse=True)
