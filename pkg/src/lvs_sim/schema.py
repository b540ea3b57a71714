"""
Marshmallow schemas for config sections, generated from pydantic models.

Flow: raw section → pre_load (lower-case keys, unit suffixes) → marshmallow
fields (types, unknown keys) → post_load (pydantic model validation) → model.

Unit suffixes: a key such as ``noise_db`` or ``theta_pi`` is accepted for a
model field ``noise`` / ``theta`` and converted to the linear or radian value.
A model may declare the suffixed name itself (``snr_db``), in which case the
value is kept as written.
"""

from __future__ import annotations

import math
import threading
from collections.abc import Callable
from enum import Enum
from types import UnionType
from typing import Any, ClassVar, Union, cast, get_args, get_origin

from marshmallow import RAISE, Schema, ValidationError, fields as ma_fields, post_load, pre_load
from pydantic import BaseModel, ValidationError as PydanticValidationError
from pydantic_core import PydanticUndefined

from .errors import convert_pydantic_errors

UNIT_SUFFIXES: dict[str, Callable[[float], float]] = {
    "_db": lambda x: 10.0 ** (x / 10.0),
    "_deg": math.radians,
    "_pi": lambda x: x * math.pi,
    "_kmh": lambda x: x / 3.6,
}

# =============================================================================
# Module-level cache
# =============================================================================
# Section models are immutable after definition: one schema class per model,
# built under the lock on first use and shared afterwards.
_cache_lock = threading.RLock()
_schema_cache: dict[type[BaseModel], type[SectionSchema]] = {}


def _convert_units(value: Any, convert: Callable[[float], float]) -> Any:
    if isinstance(value, list):
        return [_convert_units(item, convert) for item in value]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError("expected a number")
    return convert(float(value))


class SectionSchema(Schema):
    """
    Base schema for one config section.

    Subclasses carry the pydantic ``model`` they build. After ``load`` the
    instance's ``key_origins`` maps each field name back to the key as
    written in the file (``noise`` → ``noise_db``) for error reporting.
    """

    model: ClassVar[type[BaseModel]]

    class Meta:
        unknown = RAISE

    def __init__(self, *args: Any, **kwargs: Any) -> None:
        super().__init__(*args, **kwargs)
        self.key_origins: dict[str, str] = {}

    def _field_keys(self) -> set[str]:
        return {field.data_key or name for name, field in self.fields.items()}

    @pre_load
    def normalize_keys(self, data: Any, **kwargs: Any) -> Any:
        """Lower-case keys and apply unit suffixes."""
        if not isinstance(data, dict):
            raise ValidationError("expected a table of key = value pairs")
        known = self._field_keys()
        result: dict[str, Any] = {}
        errors: dict[str, list[str]] = {}
        for raw_key, value in data.items():
            key = str(raw_key).lower()
            target, converted = key, value
            if key not in known:
                for suffix, convert in UNIT_SUFFIXES.items():
                    stripped = key[: -len(suffix)]
                    if key.endswith(suffix) and stripped in known:
                        try:
                            target, converted = stripped, _convert_units(value, convert)
                        except ValidationError as exc:
                            errors.setdefault(key, []).extend(exc.messages)
                        break
            if target in result:
                errors.setdefault(key, []).append(
                    f"'{self.key_origins[target]}' and '{key}' set the same value"
                )
                continue
            result[target] = converted
            self.key_origins[target] = key
        if errors:
            raise ValidationError(errors)
        return result

    @post_load
    def build_model(self, data: dict[str, Any], **kwargs: Any) -> BaseModel:
        """Validate the loaded section with the pydantic model."""
        try:
            return self.model.model_validate(data)
        except PydanticValidationError as exc:
            raise convert_pydantic_errors(exc, self.model, data) from exc


def _unwrap_optional(annotation: Any) -> tuple[Any, bool]:
    origin = get_origin(annotation)
    if origin is Union or origin is UnionType:
        args = [arg for arg in get_args(annotation) if arg is not type(None)]
        if len(args) == 1:
            return args[0], True
    return annotation, False


def type_to_field(annotation: Any) -> ma_fields.Field:
    """Map a section field annotation to a marshmallow field."""
    inner, optional = _unwrap_optional(annotation)
    origin = get_origin(inner)
    field: ma_fields.Field
    if origin in (list, tuple):
        args = [arg for arg in get_args(inner) if arg is not Ellipsis]
        field = ma_fields.List(type_to_field(args[0]) if args else ma_fields.Raw())
    elif inner is bool:
        field = ma_fields.Boolean()
    elif inner is int:
        field = ma_fields.Integer(strict=True)
    elif inner is float:
        field = ma_fields.Float(allow_nan=False)
    elif inner is str:
        field = ma_fields.String()
    elif isinstance(inner, type) and issubclass(inner, Enum):
        field = ma_fields.Enum(inner, by_value=True)
    else:
        field = ma_fields.Raw()
    field.allow_none = optional
    return field


def _convert_field(field_info: Any) -> ma_fields.Field:
    field = type_to_field(field_info.annotation)
    field.required = field_info.default is PydanticUndefined and field_info.default_factory is None
    if field_info.alias:
        field.data_key = field_info.alias
    return field


def section_schema(model: type[BaseModel]) -> type[SectionSchema]:
    """
    Schema class for a pydantic section model, built once per model.

    Optional fields get no marshmallow default; the pydantic default applies
    when a key is absent.
    """
    cached = _schema_cache.get(model)
    if cached is not None:
        return cached
    with _cache_lock:
        cached = _schema_cache.get(model)
        if cached is None:
            attrs: dict[str, Any] = {name: _convert_field(info) for name, info in model.model_fields.items()}
            attrs["model"] = model
            cached = cast("type[SectionSchema]", type(f"{model.__name__}Schema", (SectionSchema,), attrs))
            _schema_cache[model] = cached
    return cached
