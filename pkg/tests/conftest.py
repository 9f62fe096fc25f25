"""Shared test fixtures for mg_sentinel tests."""

import numpy as np
import pytest

from mg_sentinel.config import ScenarioConfig, load_benchmark
from mg_sentinel.dg_model import N_STATES, DgParams
from mg_sentinel.microgrid import LoadParams, MicrogridConfig, MicrogridPlant
from mg_sentinel.numerics import FloatArray
from mg_sentinel.simulation import SimTrace, steady_state

TOY_A = np.array([[0.0, 1.0], [-0.2, -0.1]])
TOY_B = np.array([[0.0], [1.0]])
TOY_C = np.array([[1.0, 0.0]])
TOY_DIRECTION = np.array([-0.4472, 0.8944])


@pytest.fixture(scope="session")
def benchmark() -> ScenarioConfig:
    """The bundled four-DG benchmark scenario."""
    return load_benchmark()


@pytest.fixture(scope="session")
def grid(benchmark: ScenarioConfig) -> MicrogridConfig:
    """Microgrid section of the benchmark."""
    return benchmark.grid


@pytest.fixture(scope="session")
def dg1(grid: MicrogridConfig) -> DgParams:
    """Inverter constants of DG 1."""
    return grid.dgs[0]


@pytest.fixture(scope="session")
def plant(grid: MicrogridConfig) -> MicrogridPlant:
    """Stacked benchmark plant."""
    return MicrogridPlant(grid)


@pytest.fixture(scope="session")
def x_eq(plant: MicrogridPlant) -> FloatArray:
    """Attack-free benchmark equilibrium (4, 15)."""
    return steady_state(plant)


@pytest.fixture
def short_scenario(benchmark: ScenarioConfig) -> ScenarioConfig:
    """Benchmark shortened to 20 ms with a fixed threshold."""
    sim = benchmark.sim.model_copy(update={"duration": 0.02})
    detector = benchmark.detector.model_copy(update={"chi_bar": 1.0})
    return benchmark.model_copy(update={"sim": sim, "detector": detector})


def single_dg_grid(dg: DgParams, **overrides: object) -> MicrogridConfig:
    """One DG feeding one R-X load at its own bus."""
    data: dict[str, object] = {
        "dgs": [dg],
        "adjacency": [[0.0]],
        "pinning": [1.0],
        "loads": [LoadParams(bus=1, r=30.0, x=15.0)],
    }
    data.update(overrides)
    return MicrogridConfig.model_validate(data)


def make_trace(n_samples: int = 3, n_dg: int = 2) -> SimTrace:
    """All-zero trace sampled every 0.1 ms, for formatter and metric checks."""
    shape = (n_samples, n_dg)
    return SimTrace(
        times=np.arange(1, n_samples + 1) * 1e-4,
        states=np.zeros((*shape, N_STATES)),
        estimates=np.zeros((*shape, N_STATES)),
        residuals=np.zeros((*shape, 10)),
        r_norm=np.zeros(shape),
        eta=np.zeros(shape),
        detected=np.zeros(shape, dtype=bool),
        mitigated=np.zeros(shape, dtype=bool),
        attack_active=np.zeros(n_samples, dtype=bool),
        m_p=np.full(n_dg, 0.01),
    )
