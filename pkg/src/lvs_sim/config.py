"""
TOML configuration for experiments.

Each ``[section]`` of the file is loaded through a marshmallow schema
generated from the pydantic section model below (see :mod:`lvs_sim.schema`),
so unknown keys, type errors and unit violations come back as one
:class:`ConfigError` listing every problem with its line and column.

Precedence, lowest first: model defaults, the config file, ``--set
section.key=value`` overrides, explicit CLI flags.
"""

from __future__ import annotations

import logging
import math
import re
import sys
from collections.abc import Iterator, Mapping, Sequence
from enum import Enum
from typing import Any

import orjson
from marshmallow import ValidationError
from pydantic import BaseModel, ConfigDict, Field, ValidationError as PydanticValidationError, model_validator
from typing_extensions import Self

from .attack import DEFAULT_K1_FLOOR, AngleInterval, Scenario
from .channel import ChannelParams
from .errors import ConfigError, Location, convert_pydantic_errors
from .geometry import DEFAULT_C, DEFAULT_CARRIER_HZ, ArrayGeometry, ArrayKind, PathLossParams, PolarPoint, path_loss
from .montecarlo import DEFAULT_CHUNK_SIZE, DEFAULT_TRIALS, TrialConfig, jitter_std_for_mean_error
from .schema import UNIT_SUFFIXES, section_schema
from .tracking import TrackMode

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

logger = logging.getLogger(__name__)

DEFAULT_SOURCE = "<config>"
OVERRIDE_SOURCE = "<--set>"
DEFAULT_TAU = math.pi


class ExperimentName(str, Enum):
    ROC = "roc"
    KL_MAP = "kl-map"
    TOTAL_ERROR_GRID = "total-error-grid"
    MIN_ANTENNAS_GRID = "min-antennas-grid"
    TRACK = "track"
    CORRELATION = "correlation"


# =============================================================================
# Section models
# =============================================================================


class ExperimentSection(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: ExperimentName | None = None
    output: str | None = None


class ArraySection(BaseModel):
    """An antenna array; τ defaults to π (half-wavelength spacing)."""

    model_config = ConfigDict(frozen=True)

    kind: ArrayKind = ArrayKind.ULA
    n: int = Field(ge=1)
    tau: float | None = Field(default=None, ge=0, allow_inf_nan=False)
    spacing: float | None = Field(default=None, ge=0, allow_inf_nan=False)

    @model_validator(mode="after")
    def _one_size(self) -> Self:
        if self.tau is not None and self.spacing is not None:
            raise ValueError("give either tau or spacing, not both")
        return self

    def geometry(self, prop: PropagationSection) -> ArrayGeometry:
        if self.spacing is not None:
            return ArrayGeometry(kind=self.kind, n=self.n, spacing=self.spacing, carrier_hz=prop.carrier_hz, c=prop.c)
        tau = DEFAULT_TAU if self.tau is None else self.tau
        return ArrayGeometry.from_tau(tau, n=self.n, carrier_hz=prop.carrier_hz, kind=self.kind, c=prop.c)


class MalArraySection(ArraySection):
    """Attacker array; grown to N₁* elements when smaller."""

    n: int = Field(default=2, ge=1)


class PropagationSection(BaseModel):
    model_config = ConfigDict(frozen=True)

    c: float = Field(default=DEFAULT_C, gt=0)
    carrier_hz: float = Field(default=DEFAULT_CARRIER_HZ, gt=0)
    d_r: float = Field(default=1.0, gt=0)
    xi: float = Field(default=2.0, gt=0)


class ClaimedSection(BaseModel):
    model_config = ConfigDict(frozen=True)

    d: float = Field(gt=0, json_schema_extra={"error_messages": {"greater_than": "claimed distance must be positive"}})
    theta: float = Field(allow_inf_nan=False)
    psi: float = Field(default=math.pi / 2, allow_inf_nan=False)


class LegitChannelSection(BaseModel):
    """Legitimate channel; exactly one of p0, rx_power (p₀g(d₀)) or snr (p₀g(d₀)/σ₀²)."""

    model_config = ConfigDict(frozen=True)

    k: float = Field(ge=0, allow_inf_nan=False)
    pure_los: bool = False
    noise: float = Field(
        gt=0,
        allow_inf_nan=False,
        json_schema_extra={"error_messages": {"greater_than": "noise variance must be positive; use noise_db for dB"}},
    )
    p0: float | None = Field(default=None, ge=0, allow_inf_nan=False)
    rx_power: float | None = Field(default=None, gt=0, allow_inf_nan=False)
    snr: float | None = Field(default=None, gt=0, allow_inf_nan=False)

    @model_validator(mode="after")
    def _one_power(self) -> Self:
        given = [name for name in ("p0", "rx_power", "snr") if getattr(self, name) is not None]
        if len(given) != 1:
            raise ValueError(f"exactly one of p0, rx_power or snr is required, got {len(given)}")
        return self

    def tx_power(self, d0: float, path: PathLossParams) -> float:
        if self.p0 is not None:
            return self.p0
        if self.rx_power is not None:
            return self.rx_power / path_loss(d0, path)
        assert self.snr is not None
        return self.snr * self.noise / path_loss(d0, path)


class MalChannelSection(BaseModel):
    """Attacker channel; noise defaults to the legitimate noise variance."""

    model_config = ConfigDict(frozen=True)

    k: float = Field(default=1.0, ge=0, allow_inf_nan=False)
    pure_los: bool = False
    noise: float | None = Field(default=None, gt=0, allow_inf_nan=False)
    psi: float = Field(default=math.pi / 2, allow_inf_nan=False)
    distance: float | None = Field(default=None, gt=0)
    k_floor: float = Field(default=DEFAULT_K1_FLOOR, gt=0)


class AttackSection(BaseModel):
    model_config = ConfigDict(frozen=True)

    r_l: float = Field(default=100.0, gt=0)
    forbidden: list[list[float]] = Field(default_factory=list)
    theta1: float | None = Field(default=None, allow_inf_nan=False)

    @model_validator(mode="after")
    def _pairs(self) -> Self:
        for interval in self.forbidden:
            if len(interval) != 2:
                raise ValueError("each forbidden interval is a [from, to] pair")
        return self


class DetectorSection(BaseModel):
    """Threshold rule: explicit λ, Neyman–Pearson target α, or λ* from the prior."""

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    p0_prior: float = Field(default=0.5, gt=0, lt=1)
    lam: float | None = Field(default=None, gt=0, alias="lambda")
    alpha_target: float | None = Field(default=None, gt=0, lt=1)

    @model_validator(mode="after")
    def _one_rule(self) -> Self:
        if self.lam is not None and self.alpha_target is not None:
            raise ValueError("give either lambda or alpha_target, not both")
        return self


class TrackSection(BaseModel):
    """Claimed trajectory and tracking attack settings; start is the [claimed] point."""

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    slots: int = Field(default=10, ge=1)
    dt: float = Field(default=0.1, gt=0)
    speed: float = Field(default=0.0, ge=0)
    r_u: float = Field(default=3.0, ge=0)
    mode: TrackMode = TrackMode.ON_ROAD
    k_map: list[float] | None = None
    t_min: int | None = Field(default=None, ge=1)
    t_max: int | None = Field(default=None, ge=1)
    lam: float | None = Field(default=None, gt=0, alias="lambda")

    @model_validator(mode="after")
    def _window(self) -> Self:
        if (self.t_min is None) != (self.t_max is None):
            raise ValueError("t_min and t_max go together")
        if self.t_min is not None and self.t_max is not None and not self.t_min <= self.t_max <= self.slots:
            raise ValueError("random window must satisfy t_min ≤ t_max ≤ slots")
        if self.k_map is not None and len(self.k_map) != self.slots:
            raise ValueError(f"k_map needs one K-factor per slot ({self.slots})")
        return self


class MonteCarloSection(BaseModel):
    """Trial count 0 switches to analytic-only output."""

    model_config = ConfigDict(frozen=True)

    trials: int = Field(default=DEFAULT_TRIALS, ge=0)
    seed: int = Field(default=0, ge=0, lt=2**64)
    chunk_size: int = Field(default=DEFAULT_CHUNK_SIZE, ge=1)
    workers: int | None = Field(default=None, ge=1)
    jitter_std: float = Field(default=0.0, ge=0)
    jitter_mean: float | None = Field(default=None, ge=0)

    @model_validator(mode="after")
    def _one_jitter(self) -> Self:
        if self.jitter_mean is not None and self.jitter_std > 0:
            raise ValueError("give either jitter_std or jitter_mean, not both")
        return self

    @property
    def effective_jitter_std(self) -> float:
        if self.jitter_mean is not None:
            return jitter_std_for_mean_error(self.jitter_mean)
        return self.jitter_std


class SweepSection(BaseModel):
    """Sweep axes; dB and π-multiple axes keep their units because they are reported as written."""

    model_config = ConfigDict(frozen=True)

    snr_db: list[float] | None = None
    theta1_pi: list[float] | None = None
    theta1_points: int | None = Field(default=None, ge=2)
    lambdas: list[float] | None = None
    lambda_min: float = Field(default=1e-3, gt=0)
    lambda_max: float = Field(default=1e3, gt=0)
    lambda_points: int = Field(default=50, ge=1)
    n_b: list[int] | None = None
    n_0: list[int] | None = None
    k0_db: list[float] | None = None
    k1_db: list[float] | None = None
    noise1_db: list[float] | None = None

    @model_validator(mode="after")
    def _lambda_range(self) -> Self:
        if self.lambda_max < self.lambda_min:
            raise ValueError("lambda_max must not be below lambda_min")
        if self.lambdas is not None and any(value <= 0 for value in self.lambdas):
            raise ValueError("thresholds must be positive")
        return self


SECTIONS: dict[str, type[BaseModel]] = {
    "experiment": ExperimentSection,
    "bs": ArraySection,
    "legit_vehicle": ArraySection,
    "mal_vehicle": MalArraySection,
    "propagation": PropagationSection,
    "claimed": ClaimedSection,
    "legit_channel": LegitChannelSection,
    "mal_channel": MalChannelSection,
    "attack": AttackSection,
    "detector": DetectorSection,
    "track": TrackSection,
    "montecarlo": MonteCarloSection,
    "sweep": SweepSection,
}


class ExperimentConfig(BaseModel):
    """Everything an experiment run needs besides the scenario."""

    model_config = ConfigDict(frozen=True)

    experiment: ExperimentName
    config_path: str | None = None
    output_path: str | None = None
    seed: int = Field(default=0, ge=0, lt=2**64)
    trials: int = Field(default=DEFAULT_TRIALS, ge=0)
    overrides: tuple[str, ...] = ()
    theta1: float | None = None
    detector: DetectorSection = Field(default_factory=DetectorSection)
    track: TrackSection = Field(default_factory=TrackSection)
    montecarlo: MonteCarloSection = Field(default_factory=MonteCarloSection)
    sweep: SweepSection = Field(default_factory=SweepSection)

    def trial_config(self, **update: Any) -> TrialConfig | None:
        """Monte Carlo settings, or None in analytic-only mode."""
        if self.trials == 0:
            return None
        settings: dict[str, Any] = {
            "trials": self.trials,
            "seed": self.seed,
            "jitter_std": 0.0,
            "p0_prior": self.detector.p0_prior,
            "chunk_size": self.montecarlo.chunk_size,
            "workers": self.montecarlo.workers,
        }
        settings.update(update)
        return TrialConfig(**settings)

    def with_cli(
        self,
        *,
        seed: int | None = None,
        trials: int | None = None,
        output_path: str | None = None,
    ) -> ExperimentConfig:
        """Apply explicit command-line flags, which take precedence over the file."""
        update: dict[str, Any] = {}
        if seed is not None:
            update["seed"] = seed
        if trials is not None:
            update["trials"] = trials
        if output_path is not None:
            update["output_path"] = output_path
        try:
            return self.model_validate({**self.model_dump(by_alias=False), **update})
        except PydanticValidationError as exc:
            raise convert_pydantic_errors(exc, ExperimentConfig, update) from exc


# =============================================================================
# Locations
# =============================================================================

_HEADER = re.compile(r"^\s*\[\s*([A-Za-z0-9_\-]+)\s*\]")
_KEY = re.compile(r"^\s*([A-Za-z0-9_\-]+)\s*=")
_TOML_POSITION = re.compile(r"at line (\d+), column (\d+)")


def index_keys(text: str) -> dict[str, tuple[int, int]]:
    """Map ``section`` and ``section.key`` (lower-cased) to their 1-based (line, column)."""
    index: dict[str, tuple[int, int]] = {}
    section = ""
    for lineno, line in enumerate(text.splitlines(), start=1):
        header = _HEADER.match(line)
        if header:
            section = header.group(1).lower()
            index.setdefault(section, (lineno, header.start(1) + 1))
            continue
        key = _KEY.match(line)
        if key:
            name = key.group(1).lower()
            index.setdefault(f"{section}.{name}" if section else name, (lineno, key.start(1) + 1))
    return index


class _Locator:
    def __init__(self, source: str, index: Mapping[str, tuple[int, int]], overridden: Mapping[str, int]) -> None:
        self.source = source
        self.index = index
        self.overridden = overridden

    def __call__(self, path: str) -> Location:
        parts = path.split(".")
        for size in range(len(parts), 0, -1):
            prefix = ".".join(parts[:size])
            if prefix in self.overridden:
                return OVERRIDE_SOURCE, 1, self.overridden[prefix]
            if prefix in self.index:
                line, column = self.index[prefix]
                return self.source, line, column
        return self.source, 1, 1


def _flatten(messages: Any, prefix: str) -> Iterator[tuple[str, str]]:
    if isinstance(messages, dict):
        for key, value in messages.items():
            yield from _flatten(value, f"{prefix}.{key}" if prefix else str(key))
    elif isinstance(messages, list):
        for item in messages:
            if isinstance(item, (dict, list)):
                yield from _flatten(item, prefix)
            else:
                yield prefix, str(item)
    else:
        yield prefix, str(messages)


# =============================================================================
# Parsing
# =============================================================================


def _load_toml(text: str, source: str) -> dict[str, Any]:
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        line = getattr(exc, "lineno", None)
        column = getattr(exc, "colno", None)
        if line is None:
            match = _TOML_POSITION.search(str(exc))
            line, column = (int(match.group(1)), int(match.group(2))) if match else (1, 1)
        raise ConfigError({"_toml": [str(exc)]}, locations={"_toml": (source, line, column or 1)}) from exc


def _base_name(key: str) -> str:
    for suffix in UNIT_SUFFIXES:
        if key.endswith(suffix):
            return key[: -len(suffix)]
    return key


def apply_overrides(data: dict[str, Any], overrides: Sequence[str]) -> dict[str, int]:
    """
    Apply ``section.key=value`` overrides in place.

    Values are parsed as JSON literals (numbers, booleans, lists, quoted
    strings), falling back to the raw text. An override replaces every
    spelling of the same setting (``noise`` replaces ``noise_db``).

    Returns:
        Dotted path → 1-based position of the override on the command line
    """
    positions: dict[str, int] = {}
    errors: dict[str, list[str]] = {}
    for position, item in enumerate(overrides, start=1):
        path, sep, raw = item.partition("=")
        section, dot, key = path.strip().lower().partition(".")
        if not sep or not dot or not section or not key:
            errors.setdefault("--set", []).append(f"expected section.key=value, got {item!r}")
            continue
        try:
            value: Any = orjson.loads(raw)
        except orjson.JSONDecodeError:
            value = raw
        table = data.setdefault(section, {})
        if not isinstance(table, dict):
            errors.setdefault(section, []).append("is not a table")
            continue
        for existing in [k for k in table if _base_name(str(k).lower()) == _base_name(key)]:
            del table[existing]
        table[key] = value
        positions[f"{section}.{key}"] = position
    if errors:
        raise ConfigError(errors, locations={path: (OVERRIDE_SOURCE, 1, 1) for path in errors})
    return positions


def load_sections(data: Mapping[str, Any], locate: _Locator) -> dict[str, Any]:
    """Validate every section; all problems are collected into one ConfigError."""
    messages: dict[str, list[str]] = {}
    loaded: dict[str, Any] = {}
    normalized: dict[str, Any] = {}
    for name, value in data.items():
        lowered = str(name).lower()
        if lowered not in SECTIONS:
            messages.setdefault(lowered, []).append("Unknown section." if isinstance(value, dict) else "Unknown key.")
            continue
        normalized[lowered] = value
    for name, model in SECTIONS.items():
        schema = section_schema(model)()
        try:
            loaded[name] = schema.load(normalized.get(name, {}))
        except ValidationError as exc:
            for path, message in _flatten(exc.messages, ""):
                head, _, rest = path.partition(".")
                if head == "_schema":
                    full = name
                else:
                    origin = schema.key_origins.get(head, head)
                    full = ".".join(filter(None, (name, origin, rest)))
                messages.setdefault(full, []).append(message)
    if messages:
        raise ConfigError(
            messages,
            valid_data=loaded,
            locations={path: locate(path) for path in messages},
        )
    return loaded


def build_scenario(sections: Mapping[str, Any]) -> Scenario:
    """Assemble the Scenario from validated sections; powers are converted to transmit power."""
    prop: PropagationSection = sections["propagation"]
    claimed: ClaimedSection = sections["claimed"]
    legit: LegitChannelSection = sections["legit_channel"]
    mal: MalChannelSection = sections["mal_channel"]
    attack: AttackSection = sections["attack"]
    path = PathLossParams(d_r=prop.d_r, xi=prop.xi, carrier_hz=prop.carrier_hz, c=prop.c)
    try:
        return Scenario(
            bs=sections["bs"].geometry(prop),
            veh_legit=sections["legit_vehicle"].geometry(prop),
            veh_mal=sections["mal_vehicle"].geometry(prop),
            claimed=PolarPoint(d=claimed.d, theta=claimed.theta),
            legit_chan=ChannelParams(
                k_factor=legit.k,
                pure_los=legit.pure_los,
                noise_var=legit.noise,
                tx_power=legit.tx_power(claimed.d, path),
                path=path,
            ),
            mal_chan=ChannelParams(
                k_factor=mal.k,
                pure_los=mal.pure_los,
                noise_var=legit.noise if mal.noise is None else mal.noise,
                path=path,
            ),
            r_l=attack.r_l,
            forbidden_angles=tuple(AngleInterval(lo=lo, hi=hi) for lo, hi in attack.forbidden),
            psi0=claimed.psi,
            psi1=mal.psi,
            k1_floor=mal.k_floor,
            mal_distance=mal.distance,
        )
    except PydanticValidationError as exc:
        raise convert_pydantic_errors(exc, Scenario, prefix="scenario") from exc


def parse_config(
    text: str,
    *,
    source: str = DEFAULT_SOURCE,
    overrides: Sequence[str] = (),
    experiment: str | ExperimentName | None = None,
) -> tuple[Scenario, ExperimentConfig]:
    """
    Parse a TOML config into a Scenario and an ExperimentConfig.

    Args:
        text: TOML document
        source: Name used in error locations (usually the file path)
        overrides: ``section.key=value`` items applied on top of the file
        experiment: Experiment name; wins over ``[experiment] name``

    Returns:
        (scenario, experiment config) with all dB, degree and km/h keys converted

    Raises:
        ConfigError: any syntax, unknown-key, missing-key or unit problem
    """
    data = _load_toml(text, source)
    positions = apply_overrides(data, overrides)
    locate = _Locator(source, index_keys(text), positions)
    sections = load_sections(data, locate)

    exp: ExperimentSection = sections["experiment"]
    name = experiment if experiment is not None else exp.name
    if name is None:
        raise ConfigError(
            {"experiment.name": ["no experiment given on the command line or in [experiment]"]},
            locations={"experiment.name": locate("experiment.name")},
        )
    scenario = build_scenario(sections)
    mc: MonteCarloSection = sections["montecarlo"]
    attack: AttackSection = sections["attack"]
    cfg = ExperimentConfig(
        experiment=ExperimentName(name),
        config_path=None if source == DEFAULT_SOURCE else source,
        output_path=exp.output,
        seed=mc.seed,
        trials=mc.trials,
        overrides=tuple(overrides),
        theta1=attack.theta1,
        detector=sections["detector"],
        track=sections["track"],
        montecarlo=mc,
        sweep=sections["sweep"],
    )
    logger.debug("parsed %s: %s with %d overrides", source, cfg.experiment.value, len(overrides))
    return scenario, cfg
