"""
Error types for the LVS simulator.

This module provides:
- LvsError and the domain errors raised by the numerical modules
- ConfigError: marshmallow ValidationError carrying line/column locations
- Helpers converting pydantic validation errors into dotted config paths
"""

from __future__ import annotations

from collections.abc import Mapping
from typing import Any

from marshmallow.exceptions import ValidationError as MarshmallowValidationError
from pydantic import BaseModel, ValidationError as PydanticValidationError
from pydantic_core import ErrorDetails

Location = tuple[str, int, int]


class LvsError(Exception):
    """Base class for every error raised by lvs_sim."""


class InvalidGeometryError(LvsError, ValueError):
    """An operation was given an array of the wrong kind (ULA vs UCA)."""


class DomainError(LvsError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class DimensionMismatchError(LvsError, ValueError):
    """Vector or matrix dimensions do not agree."""


class InvalidGridError(LvsError, ValueError):
    """A sweep grid is empty or malformed."""


class InfeasibleAttackError(LvsError):
    """The attacker cannot match the legitimate covariance (σ₁² too large)."""


class UnboundedAntennasError(InfeasibleAttackError):
    """K₁ is below the configured floor, so N₁* diverges."""


class EmptyFeasibleSetError(InfeasibleAttackError):
    """Every attack angle is forbidden."""


class InfeasibleSlotError(InfeasibleAttackError):
    """No attacker position satisfies the r_l and r_u constraints for a slot."""

    def __init__(self, slot: int, message: str) -> None:
        super().__init__(f"slot {slot}: {message}")
        self.slot = slot


class ConstrainedRegimeError(LvsError):
    """N₁ < N₁*: the unconstrained beamformer does not exist."""

    def __init__(self, n1: int, n1_star: int) -> None:
        super().__init__(
            f"attacker array has {n1} elements but {n1_star} are needed; use constrained_beamformer"
        )
        self.n1 = n1
        self.n1_star = n1_star


class ConfigError(MarshmallowValidationError, LvsError):
    """
    Configuration validation error with source locations.

    Extends Marshmallow's ValidationError so callers that already handle
    marshmallow errors keep working.

    Attributes:
        messages: Dict of dotted path -> error messages (Marshmallow format)
        valid_data: Dict of sections that validated
        locations: Dict of dotted path -> (source, line, column), 1-based
    """

    def __init__(
        self,
        message: str | list[Any] | dict[str, Any],
        field_name: str = "_schema",
        data: Any | None = None,
        valid_data: dict[str, Any] | None = None,
        locations: Mapping[str, Location] | None = None,
        **kwargs: Any,
    ) -> None:
        super().__init__(message, field_name, data, valid_data=valid_data or {}, **kwargs)
        self.locations: dict[str, Location] = dict(locations or {})

    def __str__(self) -> str:
        messages = self.messages if isinstance(self.messages, dict) else {"_schema": self.messages}
        lines = []
        for path, errs in messages.items():
            source, line, column = self.locations.get(path, ("<config>", 0, 0))
            for msg in errs if isinstance(errs, list) else [errs]:
                lines.append(f"{source}:{line}:{column}: {path}: {msg}")
        return "\n".join(lines)


def build_error_path(loc: tuple[Any, ...], prefix: str = "") -> str:
    """
    Build a dotted error path from Pydantic's location tuple.

    ("forbidden", 0, "lo") -> "forbidden.0.lo", optionally prefixed by a
    section name.
    """
    path = ".".join(str(part) for part in loc)
    if not prefix:
        return path
    return f"{prefix}.{path}" if path else prefix


def format_pydantic_error(
    error: ErrorDetails,
    model_class: type[BaseModel] | None = None,
) -> str:
    """
    Format a Pydantic error into a user-facing message.

    Custom messages are looked up in the field's
    ``json_schema_extra["error_messages"]`` by error type, then by "default".
    """
    msg: str = error.get("msg", "Validation error")
    error_type: str = error.get("type", "")
    loc = error.get("loc", ())

    if model_class and loc:
        field_info = model_class.model_fields.get(str(loc[0]))
        extra = field_info.json_schema_extra if field_info else None
        if isinstance(extra, dict):
            custom = extra.get("error_messages")
            if isinstance(custom, dict):
                for key in (error_type, "default"):
                    candidate = custom.get(key)
                    if isinstance(candidate, str):
                        return candidate
    return msg


def convert_pydantic_errors(
    pydantic_error: PydanticValidationError,
    model_class: type[BaseModel] | None = None,
    original_data: dict[str, Any] | None = None,
    prefix: str = "",
) -> ConfigError:
    """
    Convert a Pydantic ValidationError to a ConfigError.

    Args:
        pydantic_error: The Pydantic ValidationError to convert
        model_class: The Pydantic model class (for custom messages)
        original_data: The input that failed validation
        prefix: Section name prepended to every path

    Returns:
        ConfigError with dotted-path messages and the fields that passed in valid_data
    """
    errors: dict[str, list[str]] = {}
    failed: set[str] = set()

    for error in pydantic_error.errors():
        loc = tuple(error.get("loc", ()))
        msg = format_pydantic_error(error, model_class)
        path = build_error_path(loc, prefix) if loc else (prefix or "_schema")
        if loc:
            failed.add(str(loc[0]))
        errors.setdefault(path, []).append(msg)

    valid_data: dict[str, Any] = {}
    if original_data and model_class:
        valid_data = {
            name: value
            for name, value in original_data.items()
            if name not in failed and name in model_class.model_fields
        }

    return ConfigError(errors, data=original_data, valid_data=valid_data)


EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_IO = 4


def exit_code(exc: BaseException) -> int:
    """
    Process exit status for an error reaching the command line.

    2 for configuration and grid problems, 3 for infeasible or degenerate
    attacks, 4 for file I/O. Anything else is a bug and is re-raised by the
    caller, so it maps to 1.
    """
    if isinstance(exc, (ConfigError, InvalidGeometryError, InvalidGridError)):
        return EXIT_CONFIG
    if isinstance(exc, (InfeasibleAttackError, ConstrainedRegimeError, DomainError, DimensionMismatchError)):
        return EXIT_INFEASIBLE
    if isinstance(exc, OSError):
        return EXIT_IO
    return 1
