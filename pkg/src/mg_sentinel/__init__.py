"""Attack synthesis, residual detection and stability analysis for microgrids."""

from .config import ScenarioConfig, load_benchmark, parse_config
from .errors import MicrogridError
from .scenarios import build_scenario, run, summarize

__version__ = "0.1.0"

__all__ = [
    "MicrogridError",
    "ScenarioConfig",
    "__version__",
    "build_scenario",
    "load_benchmark",
    "parse_config",
    "run",
    "summarize",
]
