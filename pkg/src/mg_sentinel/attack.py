"""Attack models: scheduled stealthy integrity attacks and stochastic corruption."""

import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from typing import Annotated, Literal

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .errors import SynthesisError
from .numerics import (
    FloatArray,
    SubspaceBasis,
    invariant_friend,
    kernel_basis,
    max_controlled_invariant,
    subspace_intersect,
    unobservable_subspace,
    weakly_unobservable_subspace,
)

logger = logging.getLogger(__name__)

# Assumption bounds on ‖Δz_k‖
DEFAULT_C1 = 1e-4
DEFAULT_C2 = 0.5
DEFAULT_ENVELOPE_RATE = 0.2
DEFAULT_CONTRACTION = -2.0

Variant = Literal["auto", "intersection", "weakly_unobservable", "kernel", "given"]


class Schedule(BaseModel):
    """Activation instants t_k and active durations τ_k of an intermittent attack."""

    model_config = ConfigDict(frozen=True)

    starts: list[float]
    durations: list[float]

    @model_validator(mode="after")
    def validate_slots(self) -> "Schedule":
        """Validate increasing starts and durations that fit between them."""
        if not self.starts:
            raise ValueError("schedule needs at least one slot")
        if len(self.starts) != len(self.durations):
            raise ValueError("starts and durations differ in length")
        if any(tau <= 0 for tau in self.durations):
            raise ValueError("durations must be positive")
        for k in range(len(self.starts) - 1):
            gap = self.starts[k + 1] - self.starts[k]
            if gap <= 0:
                raise ValueError("starts must be strictly increasing")
            if self.durations[k] > gap:
                raise ValueError(
                    f"slot {k + 1} duration {self.durations[k]} overlaps the next start"
                )
        return self

    def slot(self, t: float) -> int | None:
        """Index of the latest slot with t_k ≤ t, or None before the first."""
        k = int(np.searchsorted(self.starts, t, side="right")) - 1
        return k if k >= 0 else None

    def is_active(self, t: float) -> bool:
        """True inside an active interval [t_k, t_k + τ_k)."""
        k = self.slot(t)
        return k is not None and t < self.starts[k] + self.durations[k]

    @property
    def first_start(self) -> float:
        """T_0, the first activation instant."""
        return self.starts[0]

    @property
    def last_stop(self) -> float:
        """End of the last active interval."""
        return self.starts[-1] + self.durations[-1]


@dataclass(frozen=True)
class StealthyAttackSpec:
    """Invariant-subspace attack generator for one DG.

    Attributes:
        basis: Attack subspace V_a.
        q: Friend Q_k of shape (m_u + m_y, n).
        l_a: Exogenous input map L_a of shape (m_u + m_y, r).
        offsets: Initial offsets Δz_k, one per slot (cycled if fewer).
        rate_b: Envelope rate b of β(t) = 1 − exp(−b t).
        a: State matrix of the attacked DG.
        b_a: Joint attack input matrix [B Γ_u, 0].
        u_channels: Attacked input indices (0-based).
        y_channels: Attacked output indices (0-based).
        schedule: Activation schedule.
        variant: Which subspace construction produced ``basis``.
        c1: Lower bound on ‖Δz_k‖.
        c2: Upper bound on ‖Δz_k‖.
    """

    basis: SubspaceBasis
    q: FloatArray
    l_a: FloatArray
    offsets: list[FloatArray]
    rate_b: float
    a: FloatArray
    b_a: FloatArray
    u_channels: tuple[int, ...]
    y_channels: tuple[int, ...]
    schedule: Schedule
    variant: str = "given"
    c1: float = DEFAULT_C1
    c2: float = DEFAULT_C2
    exogenous: Callable[[float], FloatArray] | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        """Check the offset and invariance conditions of the generator."""
        if self.rate_b < 0:
            raise SynthesisError("envelope rate b must be nonnegative")
        for k, dz in enumerate(self.offsets):
            if not self.basis.contains(dz, tol=1e-6):
                raise SynthesisError(f"offset {k + 1} leaves the attack subspace")
            norm = float(np.linalg.norm(dz))
            slack = 1e-9 * self.c2
            if not self.c1 - slack <= norm <= self.c2 + slack:
                raise SynthesisError(
                    f"offset {k + 1} norm {norm:.3g} outside [{self.c1}, {self.c2}]"
                )
        image = self.dynamics @ self.basis.vectors
        scale = max(1.0, float(np.max(np.abs(image), initial=0.0)))
        if not self.basis.contains(image, tol=1e-8 * scale):
            raise SynthesisError("(A + B_a Q) does not leave V_a invariant")

    @property
    def dynamics(self) -> FloatArray:
        """A + B_a Q, the generator dynamics on V_a."""
        return np.asarray(self.a + self.b_a @ self.q, dtype=float)

    @property
    def n_u(self) -> int:
        """Number of attacked input channels."""
        return len(self.u_channels)

    def offset(self, k: int) -> FloatArray:
        """Δz for slot k, cycling through the stored offsets."""
        return self.offsets[k % len(self.offsets)]


class UniformAttack(BaseModel):
    """I.i.d. uniform samples in [lo, hi] per channel per step."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["uniform"] = "uniform"
    lo: float = -0.01
    hi: float = 0.01

    @model_validator(mode="after")
    def validate_bounds(self) -> "UniformAttack":
        """Validate lo < hi."""
        if not self.lo < self.hi:
            raise ValueError("lo must be below hi")
        return self


class GaussianSineAttack(BaseModel):
    """Gaussian samples N(0, σ²) modulated by a sine carrier."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["gaussian_sine"] = "gaussian_sine"
    sigma: float = Field(default=0.0031623, ge=0)
    amplitude: float = 1.0
    frequency: float = Field(default=50.0, ge=0, description="carrier, Hz")


class GaussianAttack(BaseModel):
    """Jamming noise N(μ, σ²)."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["gaussian"] = "gaussian"
    mu: float = 0.0
    sigma: float = Field(default=1.0, ge=0)


class HybridAttack(BaseModel):
    """Uniform false data plus jamming noise."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["hybrid"] = "hybrid"
    lo: float = -1.0
    hi: float = 1.0
    mu: float = 0.0
    sigma: float = Field(default=1.0, ge=0)

    @model_validator(mode="after")
    def validate_bounds(self) -> "HybridAttack":
        """Validate lo < hi."""
        if not self.lo < self.hi:
            raise ValueError("lo must be below hi")
        return self


class SinusoidAttack(BaseModel):
    """Deterministic amplitude·sin(rate·t) on every channel."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["sinusoid"] = "sinusoid"
    amplitude: float = 1.0
    angular_rate: float = 1.0


class StealthyAttack(BaseModel):
    """Synthesis request for a scheduled invariant-subspace attack."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["stealthy"] = "stealthy"
    u_channels: list[int] = Field(default_factory=lambda: [4, 7])
    y_channels: list[int] = Field(default_factory=lambda: [9])
    starts: list[float] = Field(default_factory=lambda: [0.40, 0.54, 0.68])
    durations: list[float] = Field(default_factory=lambda: [0.07, 0.07, 0.07])
    norms: list[float] = Field(default_factory=lambda: [0.5, 0.25, 0.125])
    rate_b: float = Field(default=DEFAULT_ENVELOPE_RATE, ge=0)
    contraction: float = DEFAULT_CONTRACTION
    variant: Variant = "auto"
    c1: float = Field(default=DEFAULT_C1, ge=0)
    c2: float = Field(default=DEFAULT_C2, gt=0)

    @field_validator("u_channels")
    @classmethod
    def validate_u_channels(cls, v: list[int]) -> list[int]:
        """Validate 1-based input channels."""
        if any(not 1 <= ch <= 9 for ch in v):
            raise ValueError("input channels are numbered 1..9")
        return v

    @field_validator("y_channels")
    @classmethod
    def validate_y_channels(cls, v: list[int]) -> list[int]:
        """Validate 1-based output channels."""
        if any(not 1 <= ch <= 10 for ch in v):
            raise ValueError("output channels are numbered 1..10")
        return v

    @property
    def schedule(self) -> Schedule:
        """Validated schedule of this request."""
        return Schedule(starts=self.starts, durations=self.durations)


StochasticAttack = (
    UniformAttack | GaussianSineAttack | GaussianAttack | HybridAttack | SinusoidAttack
)
AttackKind = Annotated[
    UniformAttack
    | GaussianSineAttack
    | GaussianAttack
    | HybridAttack
    | SinusoidAttack
    | StealthyAttack,
    Field(discriminator="kind"),
]


@dataclass(frozen=True)
class AttackPlan:
    """Everything a run needs to corrupt one DG.

    Attributes:
        target: 0-based index of the attacked DG.
        kind: Stochastic family, or None when ``stealthy`` is set.
        stealthy: Synthesized stealthy generator, or None.
        start: Start of the stochastic attack window, seconds.
        stop: End of the stochastic attack window, seconds.
        injection: ``neighbor_data`` corrupts the received ω_j and v_odj;
            ``secondary_output`` corrupts ω_n and V_n seen by the primary loop.
        gains: Scale of the (frequency, voltage) samples in absolute units.
    """

    target: int
    kind: StochasticAttack | None = None
    stealthy: StealthyAttackSpec | None = None
    start: float = 0.4
    stop: float = 0.8
    injection: Literal["neighbor_data", "secondary_output"] = "neighbor_data"
    gains: tuple[float, float] = (314.16, 380.0)

    def __post_init__(self) -> None:
        """Check that exactly one attack source is configured."""
        if (self.kind is None) == (self.stealthy is None):
            raise SynthesisError("attack plan needs exactly one of kind or stealthy")
        if self.stop <= self.start:
            raise SynthesisError("attack window must have positive length")

    def window_active(self, t: float) -> bool:
        """True while a stochastic attack is on."""
        if self.stealthy is not None:
            return self.stealthy.schedule.is_active(t)
        return self.start <= t < self.stop


def _selector(n: int, channels: Sequence[int]) -> FloatArray:
    sel = np.zeros((n, len(channels)))
    for col, ch in enumerate(channels):
        sel[ch, col] = 1.0
    return sel


def _is_null(
    b_a: FloatArray, d: FloatArray, q: FloatArray, basis: SubspaceBasis
) -> bool:
    action = np.vstack([b_a @ q @ basis.vectors, d @ q @ basis.vectors])
    scale = max(1.0, float(np.max(np.abs(q), initial=0.0)))
    return bool(np.max(np.abs(action), initial=0.0) <= 1e-12 * scale)


def synthesize_stealthy(
    a: npt.ArrayLike,
    b: npt.ArrayLike,
    c: npt.ArrayLike,
    u_channels: Sequence[int],
    y_channels: Sequence[int],
    schedule: Schedule,
    norms: Sequence[float],
    *,
    rate_b: float = DEFAULT_ENVELOPE_RATE,
    contraction: float | None = DEFAULT_CONTRACTION,
    variant: Variant = "auto",
    basis: SubspaceBasis | None = None,
    c1: float = DEFAULT_C1,
    c2: float = DEFAULT_C2,
    seed: int = 0,
) -> StealthyAttackSpec:
    """Build a stealthy intermittent attack on the given channels.

    Args:
        a: State matrix (n×n).
        b: Input matrix (n×m).
        c: Output matrix (p×n).
        u_channels: 0-based attacked input indices (Γ_u).
        y_channels: 0-based attacked output indices (Γ_y).
        schedule: Activation schedule.
        norms: Requested ‖Δz_k‖ per slot.
        rate_b: Envelope rate b.
        contraction: Target eigenvalue of the generator on V_a.
        variant: ``intersection`` uses V(W) ∩ V(H), ``weakly_unobservable``
            uses V(W) alone, ``auto`` tries the intersection first and falls
            back when it yields no attack, ``kernel`` keeps a_u in ker(C B_a)
            with no output term, ``given`` uses ``basis``.
        basis: Attack subspace for the ``given`` variant.
        c1: Lower bound on ‖Δz_k‖.
        c2: Upper bound on ‖Δz_k‖.
        seed: Seed for offset directions in multi-dimensional subspaces.

    Returns:
        Validated attack generator.

    Raises:
        SynthesisError: When no channel is attacked or no stealthy direction
            exists for the channel set.
    """
    amat = np.asarray(a, dtype=float)
    bmat = np.asarray(b, dtype=float)
    cmat = np.asarray(c, dtype=float)
    n = amat.shape[0]
    if not u_channels:
        raise SynthesisError("no input channel selected for the attack")
    if variant == "kernel" and y_channels:
        logger.warning(
            "kernel construction drops output channels %s", list(y_channels)
        )
        y_channels = ()
    m_u, m_y = len(u_channels), len(y_channels)
    b_a = np.hstack([bmat @ _selector(bmat.shape[1], u_channels), np.zeros((n, m_y))])
    p = cmat.shape[0]
    d = np.hstack([np.zeros((p, m_u)), _selector(p, y_channels)])

    # Columns of ``inputs`` span the attack directions the friend may use
    inputs = np.eye(m_u + m_y)
    candidates: list[tuple[str, SubspaceBasis, bool]] = []
    if variant == "given":
        if basis is None:
            raise SynthesisError("variant 'given' needs a basis")
        candidates.append(("given", basis, False))
    elif variant == "kernel":
        blind = kernel_basis(cmat @ b_a)
        if blind.is_empty:
            raise SynthesisError(
                f"channels {list(u_channels)} have no input direction in ker(C B_a)"
            )
        inputs = blind.vectors
        hidden = max_controlled_invariant(amat, b_a @ inputs, kernel_basis(cmat))
        candidates.append(("kernel", hidden, False))
    else:
        weak = weakly_unobservable_subspace(amat, b_a, cmat, d)
        if variant in ("auto", "intersection"):
            hidden_set = unobservable_subspace(amat, cmat)
            hidden = max_controlled_invariant(amat, b_a, hidden_set)
            candidates.append(("intersection", subspace_intersect(weak, hidden), True))
        if variant in ("auto", "weakly_unobservable"):
            candidates.append(("weakly_unobservable", weak, True))

    chosen: tuple[str, SubspaceBasis, FloatArray] | None = None
    for name, v_a, zero_output in candidates:
        if v_a.is_empty:
            logger.info("%s subspace is empty for channels %s", name, list(u_channels))
            continue
        q = inputs @ invariant_friend(
            amat, b_a @ inputs, v_a, rate=contraction,
            c=cmat if zero_output else None, d=d @ inputs if zero_output else None,
        )
        if _is_null(b_a, d, q, v_a):
            logger.info("%s subspace admits only the null attack", name)
            continue
        chosen = (name, v_a, q)
        break
    if chosen is None:
        raise SynthesisError("no stealthy direction exists for this channel set")
    name, v_a, q = chosen

    complement = np.eye(n) - v_a.projector()
    l_a = kernel_basis(np.vstack([complement @ b_a, d])).vectors

    rng = np.random.default_rng(seed)
    offsets = []
    for norm in norms:
        if v_a.dim == 1:
            direction = v_a.vectors[:, 0]
        else:
            coeffs = rng.standard_normal(v_a.dim)
            direction = v_a.vectors @ (coeffs / np.linalg.norm(coeffs))
        offsets.append(float(norm) * direction)

    logger.info("stealthy attack from %s subspace of dim %d", name, v_a.dim)
    return StealthyAttackSpec(
        basis=v_a, q=q, l_a=l_a, offsets=offsets, rate_b=rate_b, a=amat, b_a=b_a,
        u_channels=tuple(u_channels), y_channels=tuple(y_channels),
        schedule=schedule, variant=name, c1=c1, c2=c2,
    )


def envelope(rate_b: float, elapsed: float) -> float:
    """β = 1 − exp(−b·elapsed)."""
    return float(1.0 - np.exp(-rate_b * elapsed))


def attack_signal(
    spec: StealthyAttackSpec, t: float, zeta: FloatArray
) -> tuple[FloatArray, FloatArray]:
    """Attack vector a(t) and generator derivative ζ̇ at time t.

    Returns zeros outside the active intervals of ``spec.schedule``, including
    before the first start.
    """
    width = spec.q.shape[0]
    schedule = spec.schedule
    k = schedule.slot(t)
    if k is None or t >= schedule.starts[k] + schedule.durations[k]:
        return np.zeros(width), np.zeros_like(zeta)
    beta = envelope(spec.rate_b, t - schedule.starts[k])
    drive = spec.q @ zeta
    zeta_dot = spec.dynamics @ zeta
    if spec.exogenous is not None and spec.l_a.shape[1]:
        ext = spec.l_a @ spec.exogenous(t)
        drive = drive + ext
        zeta_dot = zeta_dot + spec.b_a @ ext
    return beta * drive, zeta_dot


def arbitrary_attack(
    kind: StochasticAttack, t: float, rng: np.random.Generator, channels: int = 2
) -> FloatArray:
    """Per-channel additive corruption sample for one step."""
    match kind:
        case UniformAttack():
            return rng.uniform(kind.lo, kind.hi, channels)
        case GaussianSineAttack():
            carrier = np.sin(2 * np.pi * kind.frequency * t)
            return rng.normal(0.0, kind.sigma, channels) * kind.amplitude * carrier
        case GaussianAttack():
            return rng.normal(kind.mu, kind.sigma, channels)
        case HybridAttack():
            noise = rng.normal(kind.mu, kind.sigma, channels)
            return rng.uniform(kind.lo, kind.hi, channels) + noise
        case SinusoidAttack():
            return np.full(channels, kind.amplitude * np.sin(kind.angular_rate * t))
    raise TypeError(f"unsupported attack kind {type(kind).__name__}")
