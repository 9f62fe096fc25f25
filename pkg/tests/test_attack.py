"""Tests for stealthy attack synthesis, schedules and stochastic attacks."""

import numpy as np
import pytest
from pydantic import ValidationError

from mg_sentinel.attack import (
    AttackPlan,
    GaussianAttack,
    GaussianSineAttack,
    HybridAttack,
    Schedule,
    SinusoidAttack,
    StealthyAttack,
    StealthyAttackSpec,
    StochasticAttack,
    UniformAttack,
    arbitrary_attack,
    attack_signal,
    envelope,
    synthesize_stealthy,
)
from mg_sentinel.dg_model import DELTA, N_STATES
from mg_sentinel.errors import SynthesisError
from mg_sentinel.microgrid import MicrogridPlant
from mg_sentinel.numerics import FloatArray, SubspaceBasis, rk4_step
from tests.conftest import TOY_A, TOY_B, TOY_C

NORMS = [0.5, 0.25, 0.125]


@pytest.fixture
def schedule() -> Schedule:
    """Three 70 ms slots, 140 ms apart."""
    return Schedule(starts=[0.40, 0.54, 0.68], durations=[0.07, 0.07, 0.07])


@pytest.fixture
def toy_spec(schedule: Schedule) -> StealthyAttackSpec:
    """Stealthy generator on span{(-1, 2)} of the toy system."""
    return synthesize_stealthy(
        TOY_A, TOY_B, TOY_C, [0], [], schedule, NORMS,
        variant="given", basis=SubspaceBasis.span([-1.0, 2.0]),
    )


class TestSchedule:
    """Test activation schedule validation and lookup."""

    def test_active_intervals(self, schedule: Schedule) -> None:
        """Test half-open active intervals and the gaps between them."""
        assert not schedule.is_active(0.39)
        assert schedule.is_active(0.40)
        assert schedule.is_active(0.469)
        assert not schedule.is_active(0.471)
        assert schedule.is_active(0.54)
        assert not schedule.is_active(0.76)
        assert schedule.slot(0.5) == 0
        assert schedule.slot(0.1) is None
        assert schedule.first_start == 0.40
        assert schedule.last_stop == pytest.approx(0.75)

    @pytest.mark.parametrize(
        ("starts", "durations", "message"),
        [
            ([0.4, 0.5], [0.2, 0.1], "overlaps"),
            ([0.5, 0.4], [0.05, 0.05], "increasing"),
            ([0.4], [0.0], "positive"),
            ([], [], "at least one"),
            ([0.4, 0.6], [0.1], "length"),
        ],
    )
    def test_invalid(
        self, starts: list[float], durations: list[float], message: str
    ) -> None:
        """Test that malformed schedules are rejected with a reason."""
        with pytest.raises(ValidationError, match=message):
            Schedule(starts=starts, durations=durations)


class TestSynthesis:
    """Test invariant-subspace attack synthesis."""

    def test_toy_generator_contracts_on_direction(
        self, toy_spec: StealthyAttackSpec
    ) -> None:
        """Test (A + B_a Q) v = -2 v on the given direction."""
        v = toy_spec.basis.vectors
        np.testing.assert_allclose(toy_spec.dynamics @ v, -2.0 * v, atol=1e-9)

    def test_toy_offsets_scaled_and_in_subspace(
        self, toy_spec: StealthyAttackSpec
    ) -> None:
        """Test offsets lie on the direction with norms 0.5, 0.25, 0.125."""
        norms = [float(np.linalg.norm(dz)) for dz in toy_spec.offsets]
        np.testing.assert_allclose(norms, NORMS)
        for dz in toy_spec.offsets:
            assert toy_spec.basis.contains(dz)
        assert toy_spec.offset(4) is toy_spec.offsets[1]

    def test_no_input_channel(self, schedule: Schedule) -> None:
        """Test that an empty input channel set cannot be synthesized."""
        with pytest.raises(SynthesisError, match="no input channel"):
            synthesize_stealthy(TOY_A, TOY_B, TOY_C, [], [], schedule, NORMS)

    def test_offset_above_c2_rejected(self, schedule: Schedule) -> None:
        """Test the ‖Δz‖ ≤ c2 assumption."""
        with pytest.raises(SynthesisError, match="outside"):
            synthesize_stealthy(
                TOY_A, TOY_B, TOY_C, [0], [], schedule, [2.0],
                variant="given", basis=SubspaceBasis.span([-1.0, 2.0]),
            )

    def test_observable_toy_has_no_hidden_direction(self, schedule: Schedule) -> None:
        """Test that an observable single-output toy admits no stealthy attack."""
        with pytest.raises(SynthesisError):
            synthesize_stealthy(
                TOY_A, TOY_B, TOY_C, [0], [], schedule, NORMS, variant="intersection"
            )

    def test_blind_output_accepts_everything(self, schedule: Schedule) -> None:
        """Test that with C = 0 the whole state space hides the attack."""
        spec = synthesize_stealthy(
            TOY_A, TOY_B, np.zeros((1, 2)), [0], [], schedule, NORMS
        )
        assert spec.basis.dim >= 1
        image = spec.dynamics @ spec.basis.vectors
        assert spec.basis.contains(image, tol=1e-8)

    def test_benchmark_generator_invariant_and_hidden(
        self, plant: MicrogridPlant, schedule: Schedule
    ) -> None:
        """Test invariance and C v = 0 for the default DG attack channels."""
        spec = synthesize_stealthy(
            plant.a[1], plant.b[1], plant.c, [3, 6], [8], schedule, NORMS, seed=1
        )
        v = spec.basis.vectors
        image = spec.dynamics @ v
        scale = max(1.0, float(np.abs(image).max()))
        assert spec.basis.contains(image, tol=1e-8 * scale)
        if spec.variant == "intersection":
            np.testing.assert_allclose(plant.c @ v, 0.0, atol=1e-8)

    def test_kernel_variant_blinds_the_outputs(
        self, plant: MicrogridPlant, schedule: Schedule
    ) -> None:
        """Test the kernel construction keeps C B_a Q = 0 and drops output channels."""
        spec = synthesize_stealthy(
            plant.a[1], plant.b[1], plant.c, [0], [8], schedule, NORMS,
            variant="kernel",
        )
        assert spec.variant == "kernel"
        assert spec.y_channels == ()
        np.testing.assert_allclose(plant.c @ spec.b_a @ spec.q, 0.0, atol=1e-12)
        angle = np.zeros(N_STATES)
        angle[DELTA] = 1.0
        assert spec.basis.contains(angle)
        np.testing.assert_allclose(spec.dynamics @ angle, -2.0 * angle, atol=1e-9)

    def test_kernel_variant_needs_blind_input(
        self, plant: MicrogridPlant, schedule: Schedule
    ) -> None:
        """Test that a channel seen by the outputs has no kernel construction."""
        with pytest.raises(SynthesisError, match="ker"):
            synthesize_stealthy(
                plant.a[1], plant.b[1], plant.c, [3], [], schedule, NORMS,
                variant="kernel",
            )


class TestSignal:
    """Test the time profile of the stealthy signal."""

    def test_envelope_value(self) -> None:
        """Test 1 - exp(-0.2) = 0.18127 after one second at b = 0.2."""
        assert envelope(0.2, 1.0) == pytest.approx(0.18127, abs=1e-5)
        assert envelope(0.2, 0.0) == 0.0

    def test_zero_at_activation(self, toy_spec: StealthyAttackSpec) -> None:
        """Test a(t_k) = 0 because the envelope starts from zero."""
        a, _ = attack_signal(toy_spec, 0.40, toy_spec.offsets[0])
        np.testing.assert_array_equal(a, 0.0)

    def test_zero_when_inactive(self, toy_spec: StealthyAttackSpec) -> None:
        """Test zero attack before the first start and between slots."""
        for t in (0.0, 0.39, 0.50, 0.90):
            a, zeta_dot = attack_signal(toy_spec, t, toy_spec.offsets[0])
            np.testing.assert_array_equal(a, 0.0)
            np.testing.assert_array_equal(zeta_dot, 0.0)

    def test_active_signal_follows_friend(self, toy_spec: StealthyAttackSpec) -> None:
        """Test a(t) = beta Q zeta inside a slot."""
        zeta = toy_spec.offsets[0]
        a, zeta_dot = attack_signal(toy_spec, 0.45, zeta)
        beta = envelope(toy_spec.rate_b, 0.05)
        np.testing.assert_allclose(a, beta * toy_spec.q @ zeta)
        np.testing.assert_allclose(zeta_dot, -2.0 * zeta, atol=1e-9)

    @pytest.mark.parametrize("k", [0, 1, 2])
    def test_generator_decays_inside_subspace(
        self, toy_spec: StealthyAttackSpec, k: int
    ) -> None:
        """Test zeta stays in V_a and shrinks as exp(-2 t) through each slot."""
        start = toy_spec.schedule.starts[k]
        zeta = toy_spec.offsets[k].copy()
        size = float(np.linalg.norm(zeta))
        dt = 1e-3

        def rhs(t: float, z: FloatArray) -> FloatArray:
            return attack_signal(toy_spec, t, z)[1]

        for step in range(69):
            zeta = rk4_step(rhs, zeta, start + step * dt, dt)
            elapsed = (step + 1) * dt
            assert toy_spec.basis.contains(zeta, tol=1e-9)
            assert float(np.linalg.norm(zeta)) == pytest.approx(
                size * np.exp(-2.0 * elapsed), rel=1e-6
            )


class TestStochastic:
    """Test the arbitrary attack families."""

    def test_uniform_bounds(self) -> None:
        """Test that uniform samples stay in [lo, hi]."""
        rng = np.random.default_rng(0)
        kind = UniformAttack()
        samples = np.array([arbitrary_attack(kind, 0.0, rng) for _ in range(500)])
        assert samples.min() >= -0.01
        assert samples.max() <= 0.01

    def test_uniform_invalid_bounds(self) -> None:
        """Test lo < hi."""
        with pytest.raises(ValidationError, match="below"):
            UniformAttack(lo=1.0, hi=1.0)

    def test_seed_reproducible(self) -> None:
        """Test identical seeds give identical draws."""
        kind = GaussianSineAttack()
        one = [arbitrary_attack(kind, 0.01, np.random.default_rng(5)) for _ in range(3)]
        two = [arbitrary_attack(kind, 0.01, np.random.default_rng(5)) for _ in range(3)]
        np.testing.assert_array_equal(one, two)

    def test_zero_sigma_is_silent(self) -> None:
        """Test that sigma = 0 injects nothing."""
        rng = np.random.default_rng(0)
        out = arbitrary_attack(GaussianSineAttack(sigma=0.0), 0.003, rng)
        np.testing.assert_array_equal(out, 0.0)

    def test_default_sigma_is_sqrt_variance(self) -> None:
        """Test the default deviation matches a 1e-5 variance."""
        assert GaussianSineAttack().sigma == pytest.approx(np.sqrt(1e-5), rel=1e-4)

    @pytest.mark.parametrize(
        "kind",
        [GaussianAttack(), HybridAttack(), SinusoidAttack(amplitude=2.0)],
    )
    def test_channel_count(self, kind: StochasticAttack) -> None:
        """Test one sample per channel."""
        out = arbitrary_attack(kind, 0.2, np.random.default_rng(1), channels=3)
        assert out.shape == (3,)

    def test_sinusoid_deterministic(self) -> None:
        """Test amplitude sin(rate t) on every channel."""
        out = arbitrary_attack(
            SinusoidAttack(amplitude=2.0, angular_rate=np.pi), 0.5,
            np.random.default_rng(0),
        )
        np.testing.assert_allclose(out, [2.0, 2.0])


class TestAttackPlan:
    """Test plan construction."""

    def test_needs_exactly_one_source(self) -> None:
        """Test that a plan without a source is rejected."""
        with pytest.raises(SynthesisError, match="exactly one"):
            AttackPlan(target=0)

    def test_window(self) -> None:
        """Test the stochastic window [start, stop)."""
        plan = AttackPlan(target=1, kind=UniformAttack(), start=0.4, stop=0.8)
        assert not plan.window_active(0.39)
        assert plan.window_active(0.4)
        assert not plan.window_active(0.8)

    def test_stealthy_request_channels(self) -> None:
        """Test 1-based channel validation on the request."""
        assert StealthyAttack().schedule.starts == [0.40, 0.54, 0.68]
        with pytest.raises(ValidationError, match="1..9"):
            StealthyAttack(u_channels=[0])
