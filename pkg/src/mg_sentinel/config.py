"""Scenario files: parsing, validation and canonical serialization.

A scenario is a line-oriented text document::

    # comment
    [sim]
    duration = 1.0

    [dg.1]
    m_p = 9.4e-5

    [microgrid]
    adjacency = 0, 0, 0, 1; 1, 0, 0, 0; 0, 1, 0, 0; 0, 0, 1, 0

Vectors are comma or whitespace separated and matrix rows end with ``;``.
"""

import logging
import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Literal, NamedTuple

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    ValidationError,
    field_validator,
    model_validator,
)

from .attack import (
    DEFAULT_C1,
    DEFAULT_C2,
    DEFAULT_CONTRACTION,
    DEFAULT_ENVELOPE_RATE,
    GaussianAttack,
    GaussianSineAttack,
    HybridAttack,
    Schedule,
    SinusoidAttack,
    StealthyAttack,
    StochasticAttack,
    UniformAttack,
    Variant,
)
from .detector import DetectorSettings
from .dg_model import DgParams
from .errors import ConfigError
from .microgrid import LineParams, LoadParams, MicrogridConfig
from .observer import DEFAULT_FAST_POLES, DEFAULT_SLOW_POLES, BOUND_MARGIN
from .simulation import DEFAULT_DT, DEFAULT_RECORD_INTERVAL

logger = logging.getLogger(__name__)

AttackFamily = Literal[
    "none", "uniform", "gaussian_sine", "gaussian", "hybrid", "sinusoid", "stealthy"
]


class SimSection(BaseModel):
    """Horizon, step and output of a run."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    duration: float = Field(default=1.0, gt=0, description="seconds")
    dt: float = Field(default=DEFAULT_DT, gt=0, description="RK4 step, seconds")
    record_interval: float = Field(default=DEFAULT_RECORD_INTERVAL, gt=0)
    seed: int = 0
    output: str | None = Field(default=None, description="output directory")

    @model_validator(mode="after")
    def validate_horizon(self) -> "SimSection":
        """Validate that the horizon holds at least one step."""
        if self.duration < self.dt:
            raise ValueError("duration must be at least dt")
        return self


class AttackSection(BaseModel):
    """Attack family, target and parameters.

    Family parameters left unset fall back to the family defaults.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: AttackFamily = "none"
    target: int = Field(default=1, ge=1, description="attacked DG, 1-based")
    start: float = Field(default=0.4, ge=0)
    stop: float = Field(default=0.8, gt=0)
    injection: Literal["neighbor_data", "secondary_output"] = "neighbor_data"
    gains: list[float] = Field(default_factory=lambda: [314.16, 380.0])

    lo: float | None = None
    hi: float | None = None
    mu: float | None = None
    sigma: float | None = Field(default=None, ge=0)
    amplitude: float | None = None
    frequency: float | None = Field(default=None, ge=0)
    angular_rate: float | None = None

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

    @model_validator(mode="after")
    def validate_attack(self) -> "AttackSection":
        """Validate the window, the gains and, for stealthy attacks, the schedule."""
        if self.stop <= self.start:
            raise ValueError("attack stop must be after start")
        if len(self.gains) != 2:
            raise ValueError("gains needs a frequency and a voltage entry")
        if self.kind == "stealthy":
            try:
                Schedule(starts=self.starts, durations=self.durations)
            except ValidationError as e:
                raise ValueError(e.errors()[0]["msg"]) from e
            if len(self.norms) != len(self.starts):
                raise ValueError("norms needs one entry per attack slot")
        return self

    @property
    def enabled(self) -> bool:
        """False for the attack-free scenario."""
        return self.kind != "none"

    def family(self) -> StochasticAttack | None:
        """Stochastic family with the parameters set in this section."""
        names = ("lo", "hi", "mu", "sigma", "amplitude", "frequency", "angular_rate")
        given = {k: getattr(self, k) for k in names if getattr(self, k) is not None}
        match self.kind:
            case "uniform":
                return UniformAttack.model_validate(_only(given, UniformAttack))
            case "gaussian_sine":
                return GaussianSineAttack.model_validate(
                    _only(given, GaussianSineAttack)
                )
            case "gaussian":
                return GaussianAttack.model_validate(_only(given, GaussianAttack))
            case "hybrid":
                return HybridAttack.model_validate(_only(given, HybridAttack))
            case "sinusoid":
                return SinusoidAttack.model_validate(_only(given, SinusoidAttack))
            case _:
                return None

    def stealthy(self) -> StealthyAttack:
        """Synthesis request built from the stealthy parameters."""
        return StealthyAttack(
            u_channels=self.u_channels, y_channels=self.y_channels,
            starts=self.starts, durations=self.durations, norms=self.norms,
            rate_b=self.rate_b, contraction=self.contraction,
            variant=self.variant, c1=self.c1, c2=self.c2,
        )


def _only(values: dict[str, float], model: type[BaseModel]) -> dict[str, float]:
    return {k: v for k, v in values.items() if k in model.model_fields}


def _expand_poles(value: object) -> object:
    """Coerce pole entries to complex; a ``re±imj`` token becomes a conjugate pair."""
    if not isinstance(value, list):
        return value
    out: list[object] = []
    for item in value:
        if isinstance(item, str) and "±" in item:
            re_part, _, im_part = item.partition("±")
            pair = (f"{re_part}+{im_part}", f"{re_part}-{im_part}")
            out.extend(complex(p.replace(" ", "")) for p in pair)
        elif isinstance(item, str):
            out.append(complex(item.replace(" ", "")))
        elif isinstance(item, int | float):
            out.append(complex(item))
        else:
            out.append(item)
    return out


def _conjugate_closed(poles: list[complex]) -> bool:
    rest = [p for p in poles if p.imag != 0]
    while rest:
        pole = rest.pop(0)
        partner = next((i for i, q in enumerate(rest) if q == pole.conjugate()), None)
        if partner is None:
            return False
        rest.pop(partner)
    return True


class ObserverSection(BaseModel):
    """Observer variant and requested spectrum.

    Poles are real or complex; a ``re±imj`` entry stands for a conjugate pair.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    enabled: bool = True
    variant: Literal["nonlinear", "output_injection"] = "nonlinear"
    slow_poles: list[complex] = Field(default_factory=lambda: list(DEFAULT_SLOW_POLES))
    fast_poles: list[complex] = Field(default_factory=lambda: list(DEFAULT_FAST_POLES))
    bound_margin: float = Field(default=BOUND_MARGIN, ge=1)

    @field_validator("slow_poles", "fast_poles", mode="before")
    @classmethod
    def expand_pairs(cls, v: object) -> object:
        """Expand ``re±imj`` shorthand before type validation."""
        return _expand_poles(v)

    @model_validator(mode="after")
    def validate_poles(self) -> "ObserverSection":
        """Validate pole counts, stability and conjugate pairing."""
        if len(self.slow_poles) != len(DEFAULT_SLOW_POLES):
            raise ValueError(f"slow_poles needs {len(DEFAULT_SLOW_POLES)} entries")
        if len(self.fast_poles) != len(DEFAULT_FAST_POLES):
            raise ValueError(f"fast_poles needs {len(DEFAULT_FAST_POLES)} entries")
        if any(p.real >= 0 for p in self.slow_poles + self.fast_poles):
            raise ValueError("observer poles must have negative real part")
        for name in ("slow_poles", "fast_poles"):
            if not _conjugate_closed(getattr(self, name)):
                raise ValueError(f"{name} must hold complex poles in conjugate pairs")
        return self

    @property
    def poles(self) -> tuple[complex, ...]:
        """Requested spectrum, slow block first."""
        return (*self.slow_poles, *self.fast_poles)


class StabilitySection(BaseModel):
    """Decay-rate requirement and reduced-model options."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    eta: float = Field(default=1.0, ge=0, description="required decay rate, 1/s")
    angle_scale: float | None = Field(default=None, gt=0)
    enforce: bool = True


class ScenarioConfig(BaseModel):
    """Everything one scenario run needs."""

    model_config = ConfigDict(frozen=True)

    sim: SimSection = Field(default_factory=SimSection)
    grid: MicrogridConfig
    attack: AttackSection = Field(default_factory=AttackSection)
    observer: ObserverSection = Field(default_factory=ObserverSection)
    detector: DetectorSettings = Field(default_factory=DetectorSettings)
    stability: StabilitySection = Field(default_factory=StabilitySection)

    @model_validator(mode="after")
    def validate_references(self) -> "ScenarioConfig":
        """Validate that the attacked DG exists."""
        if self.attack.enabled and self.attack.target > self.grid.n_dg:
            raise ValueError(f"attack target {self.attack.target} is not a DG")
        return self


# Section models keyed by header name; numbered sections use the stem
SECTION_MODELS: dict[str, type[BaseModel]] = {
    "sim": SimSection,
    "microgrid": MicrogridConfig,
    "dg": DgParams,
    "line": LineParams,
    "load": LoadParams,
    "attack": AttackSection,
    "observer": ObserverSection,
    "detector": DetectorSettings,
    "stability": StabilitySection,
}
NUMBERED = {"dg": "dgs", "line": "lines", "load": "loads"}
MICROGRID_LISTS = frozenset(NUMBERED.values())

VECTOR_KEYS = frozenset({
    "pinning", "gains", "u_channels", "y_channels", "starts", "durations",
    "norms", "slow_poles", "fast_poles",
})
MATRIX_KEYS = frozenset({"adjacency"})
AUTO_KEYS = frozenset({"chi_bar", "angle_scale"})

HEADER_PATTERN = re.compile(r"^\[(?P<name>[a-z_]+)(?:\.(?P<index>\d+))?\]$")
KEY_PATTERN = re.compile(r"^(?P<key>[a-z_][a-z0-9_]*)\s*=\s*(?P<value>.*?)$")
COMMENT_PATTERN = re.compile(r"\s*#.*$")
SPLIT_PATTERN = re.compile(r"[\s,]+")

RawValue = str | list[str] | list[list[str]] | None


class ConfigIssue(NamedTuple):
    """A line of a scenario file that could not be accepted."""

    line_number: int
    line_content: str
    reason: str
    path: str = ""


@dataclass
class RawDocument:
    """Section contents as text, before validation.

    Attributes:
        sections: Values keyed by section name (``dg.2``) then key.
        lines: Source line number of every ``section.key`` path.
        source: Original text lines.
    """

    sections: dict[str, dict[str, RawValue]] = field(default_factory=dict)
    lines: dict[str, int] = field(default_factory=dict)
    source: list[str] = field(default_factory=list)

    def line_of(self, path: str) -> tuple[int | None, str | None]:
        """Line number and text for a dotted path, or its section header."""
        prefix = path
        while prefix:
            if prefix in self.lines:
                number = self.lines[prefix]
                return number, self.source[number - 1]
            prefix = prefix.rpartition(".")[0]
        return None, None


def _allowed_keys(model: type[BaseModel]) -> set[str]:
    keys = set()
    for name, info in model.model_fields.items():
        keys.add(info.alias or name)
    return keys


def parse_value(key: str, text: str) -> RawValue:
    """Split a raw value into the shape its key expects."""
    value = text.strip()
    if key in AUTO_KEYS and value == "auto":
        return None
    if key in MATRIX_KEYS:
        rows = [r for r in value.split(";") if r.strip()]
        return [[t for t in SPLIT_PATTERN.split(r.strip()) if t] for r in rows]
    if key in VECTOR_KEYS:
        return [t for t in SPLIT_PATTERN.split(value) if t]
    return value


class ScenarioParser:
    """Regex-driven reader of scenario documents."""

    def __init__(self) -> None:
        """Start with no issues recorded."""
        self.issues: list[ConfigIssue] = []

    def _section_name(self, match: re.Match[str]) -> str | None:
        name, index = match.group("name"), match.group("index")
        if name not in SECTION_MODELS:
            return None
        if (name in NUMBERED) != (index is not None):
            return None
        if index is not None and int(index) < 1:
            return None
        return name if index is None else f"{name}.{int(index)}"

    def read(self, text: str) -> RawDocument:
        """Split text into sections, recording an issue per bad line."""
        doc = RawDocument(source=text.splitlines())
        current: str | None = None
        for line_number, raw_line in enumerate(doc.source, start=1):
            line = COMMENT_PATTERN.sub("", raw_line).strip()
            if not line:
                continue
            if header := HEADER_PATTERN.match(line):
                current = self._section_name(header)
                if current is None:
                    self.issues.append(
                        ConfigIssue(line_number, raw_line, "unknown section", line)
                    )
                    continue
                if current in doc.sections:
                    self.issues.append(
                        ConfigIssue(line_number, raw_line, "duplicate section", current)
                    )
                doc.sections.setdefault(current, {})
                doc.lines[current] = line_number
                continue
            entry = KEY_PATTERN.match(line)
            if entry is None:
                self.issues.append(
                    ConfigIssue(line_number, raw_line, "expected 'key = value'")
                )
                continue
            key = entry.group("key")
            if current is None:
                self.issues.append(
                    ConfigIssue(line_number, raw_line, "key outside a section", key)
                )
                continue
            path = f"{current}.{key}"
            model = SECTION_MODELS[current.partition(".")[0]]
            allowed = _allowed_keys(model)
            if current == "microgrid":
                allowed -= MICROGRID_LISTS
            if key not in allowed:
                self.issues.append(
                    ConfigIssue(line_number, raw_line, "unknown key", path)
                )
                continue
            if key in doc.sections[current]:
                self.issues.append(
                    ConfigIssue(line_number, raw_line, "duplicate key", path)
                )
                continue
            doc.sections[current][key] = parse_value(key, entry.group("value"))
            doc.lines[path] = line_number
        logger.debug("read %d sections", len(doc.sections))
        return doc


def _numbered(doc: RawDocument, stem: str) -> list[dict[str, RawValue]]:
    indices = sorted(
        int(name.partition(".")[2])
        for name in doc.sections
        if name.partition(".")[0] == stem
    )
    if indices != list(range(1, len(indices) + 1)):
        first_gap = next(
            (i for i, n in enumerate(indices, start=1) if n != i), len(indices) + 1
        )
        raise ConfigError(stem, f"sections must be numbered 1..N, missing {first_gap}")
    return [doc.sections[f"{stem}.{i}"] for i in indices]


def _error_path(loc: tuple[int | str, ...]) -> str:
    parts = [str(p) for p in loc]
    if parts and parts[0] == "grid":
        rest = loc[1:]
        if len(rest) >= 2 and rest[0] in MICROGRID_LISTS and isinstance(rest[1], int):
            stem = {v: k for k, v in NUMBERED.items()}[str(rest[0])]
            tail = ".".join(str(p) for p in rest[2:])
            path = f"{stem}.{rest[1] + 1}"
            return f"{path}.{tail}" if tail else path
        return ".".join(["microgrid", *(str(p) for p in rest)])
    return ".".join(parts)


def build_config(doc: RawDocument) -> ScenarioConfig:
    """Validate a raw document.

    Raises:
        ConfigError: On the first validation failure, with its source line.
    """
    grid: dict[str, object] = dict(doc.sections.get("microgrid", {}))
    for stem, key in NUMBERED.items():
        grid[key] = _numbered(doc, stem)
    payload: dict[str, object] = {"grid": grid}
    for name in ("sim", "attack", "observer", "detector", "stability"):
        if name in doc.sections:
            payload[name] = doc.sections[name]
    try:
        return ScenarioConfig.model_validate(payload)
    except ValidationError as e:
        first = e.errors()[0]
        path = _error_path(tuple(first["loc"])) or "<document>"
        number, content = doc.line_of(path)
        raise ConfigError(path, first["msg"], number, content) from e


def parse_config(text: str) -> ScenarioConfig:
    """Parse and validate a scenario document.

    Raises:
        ConfigError: For the first bad line or invalid value.
    """
    parser = ScenarioParser()
    doc = parser.read(text)
    if parser.issues:
        issue = parser.issues[0]
        raise ConfigError(
            issue.path or "<document>", issue.reason,
            issue.line_number, issue.line_content,
        )
    return build_config(doc)


def with_override(text: str, path: str, value: str) -> ScenarioConfig:
    """Parse a document with one ``section.key`` replaced by ``value``.

    Raises:
        ConfigError: When the path names no section or the result is invalid.
    """
    parser = ScenarioParser()
    doc = parser.read(text)
    if parser.issues:
        issue = parser.issues[0]
        raise ConfigError(
            issue.path or "<document>", issue.reason,
            issue.line_number, issue.line_content,
        )
    section, _, key = path.rpartition(".")
    if section not in doc.sections and section not in SECTION_MODELS:
        raise ConfigError(path, "unknown section")
    if key not in _allowed_keys(SECTION_MODELS[section.partition(".")[0]]):
        raise ConfigError(path, "unknown key")
    doc.sections.setdefault(section, {})[key] = parse_value(key, value)
    return build_config(doc)


def format_value(value: object) -> str:
    """Canonical text for a field value."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, complex):
        if value.imag == 0:
            return repr(value.real)
        sign = "-" if value.imag < 0 else "+"
        return f"{value.real!r}{sign}{abs(value.imag)!r}j"
    if isinstance(value, list | tuple):
        if value and isinstance(value[0], list | tuple):
            return "; ".join(format_value(row) for row in value)
        return ", ".join(format_value(v) for v in value)
    return str(value)


def _section_lines(header: str, model: BaseModel, skip: frozenset[str]) -> list[str]:
    data = model.model_dump(
        by_alias=True, exclude=set(type(model).model_computed_fields) | set(skip)
    )
    lines = [f"[{header}]"]
    for key, value in data.items():
        if value is None:
            if key in AUTO_KEYS:
                lines.append(f"{key} = auto")
            continue
        lines.append(f"{key} = {format_value(value)}")
    return lines


def serialize_config(cfg: ScenarioConfig) -> str:
    """Canonical text of a scenario; ``parse_config`` inverts it."""
    blocks = [_section_lines("sim", cfg.sim, frozenset())]
    blocks.append(_section_lines("microgrid", cfg.grid, MICROGRID_LISTS))
    for i, dg in enumerate(cfg.grid.dgs, start=1):
        blocks.append(_section_lines(f"dg.{i}", dg, frozenset()))
    for i, line in enumerate(cfg.grid.lines, start=1):
        blocks.append(_section_lines(f"line.{i}", line, frozenset()))
    for i, load in enumerate(cfg.grid.loads, start=1):
        blocks.append(_section_lines(f"load.{i}", load, frozenset()))
    blocks.append(_section_lines("attack", cfg.attack, frozenset()))
    blocks.append(_section_lines("observer", cfg.observer, frozenset()))
    blocks.append(_section_lines("detector", cfg.detector, frozenset()))
    blocks.append(_section_lines("stability", cfg.stability, frozenset()))
    return "\n\n".join("\n".join(b) for b in blocks) + "\n"


def benchmark_text() -> str:
    """Text of the bundled four-DG benchmark scenario."""
    return resources.files("mg_sentinel").joinpath("data/benchmark.cfg").read_text()


def load_benchmark() -> ScenarioConfig:
    """The bundled four-DG benchmark scenario."""
    return parse_config(benchmark_text())
