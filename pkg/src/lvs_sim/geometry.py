"""
Coordinates, antenna arrays, steering vectors and path loss.

Positions are polar pairs relative to the base station (BS) at the origin,
with angles measured counterclockwise from the x-axis and normalized to
(−π, π]. The BS always uses a uniform linear array (ULA); vehicles may use a
ULA or a uniform circular array (UCA).

Example:
    >>> bs = ArrayGeometry.from_tau(math.pi, n=4, carrier_hz=5.9e9)
    >>> steering_rx(math.pi / 2, bs)      # broadside: all ones
"""

from __future__ import annotations

import logging
import math
from enum import Enum
from typing import Annotated, Any, overload

import numpy as np
from numpy.typing import ArrayLike, NDArray
from pydantic import BaseModel, ConfigDict, Field, PlainValidator, computed_field, field_validator, model_validator
from typing_extensions import Self

from .errors import DomainError, InvalidGeometryError

logger = logging.getLogger(__name__)

SPEED_OF_LIGHT = 2.99792458e8
DEFAULT_C = 3e8
DEFAULT_CARRIER_HZ = 5.9e9

# Only cos θ enters the physics; angles whose cosines agree this closely are the same direction.
COS_TOLERANCE = 1e-12
_DIRICHLET_GUARD = 1e-12

FloatArray = NDArray[np.float64]
ComplexArray = NDArray[np.complex128]


def _as_complex_vector(value: Any) -> ComplexArray:
    array = np.array(value, dtype=np.complex128)
    if array.ndim != 1:
        raise ValueError(f"expected a 1-D complex vector, got shape {array.shape}")
    if not np.all(np.isfinite(array)):
        raise ValueError("complex vector contains non-finite entries")
    array.setflags(write=False)
    return array


ComplexVector = Annotated[np.ndarray, PlainValidator(_as_complex_vector)]
"""Read-only 1-D complex128 array usable as a pydantic field."""


def normalize_angle(theta: float) -> float:
    """Wrap an angle to (−π, π]."""
    wrapped = math.remainder(theta, 2.0 * math.pi)
    if wrapped <= -math.pi:
        return math.pi
    return wrapped


def angular_distance(a: float, b: float) -> float:
    """Smallest absolute difference between two angles."""
    return abs(normalize_angle(a - b))


class PolarPoint(BaseModel):
    """Position (d, θ) relative to the BS."""

    model_config = ConfigDict(frozen=True)

    d: float = Field(gt=0, allow_inf_nan=False)
    theta: float = Field(allow_inf_nan=False)

    @field_validator("theta")
    @classmethod
    def _normalize(cls, value: float) -> float:
        return normalize_angle(value)

    @classmethod
    def from_cartesian(cls, x: float, y: float) -> PolarPoint:
        d = math.hypot(x, y)
        if d <= 0.0:
            raise DomainError("the base station location is not a valid vehicle position")
        return cls(d=d, theta=math.atan2(y, x))

    def to_cartesian(self) -> tuple[float, float]:
        return self.d * math.cos(self.theta), self.d * math.sin(self.theta)

    def distance_to(self, other: PolarPoint) -> float:
        """Euclidean distance between the two physical positions."""
        return math.dist(self.to_cartesian(), other.to_cartesian())


class ArrayKind(str, Enum):
    ULA = "ULA"
    UCA = "UCA"


class ArrayGeometry(BaseModel):
    """
    Antenna array description.

    ``spacing`` is the element spacing ρ for a ULA and the radius a for a UCA.
    The phase constant τ = 2π f_c ρ / c is derived.
    """

    model_config = ConfigDict(frozen=True)

    kind: ArrayKind = ArrayKind.ULA
    n: int = Field(ge=1)
    spacing: float = Field(ge=0, allow_inf_nan=False)
    carrier_hz: float = Field(default=DEFAULT_CARRIER_HZ, gt=0)
    c: float = Field(default=DEFAULT_C, gt=0)

    @model_validator(mode="after")
    def _check_spacing(self) -> Self:
        # A zero-radius UCA is a degenerate but valid array; a ULA needs real spacing.
        if self.kind is ArrayKind.ULA and self.spacing <= 0:
            raise ValueError("ULA element spacing must be positive")
        return self

    @computed_field
    @property
    def tau(self) -> float:
        return 2.0 * math.pi * self.carrier_hz * self.spacing / self.c

    @classmethod
    def from_tau(
        cls,
        tau: float,
        n: int,
        carrier_hz: float = DEFAULT_CARRIER_HZ,
        kind: ArrayKind = ArrayKind.ULA,
        c: float = DEFAULT_C,
    ) -> ArrayGeometry:
        """Build an array from its phase constant instead of its physical spacing."""
        return cls(kind=kind, n=n, spacing=tau * c / (2.0 * math.pi * carrier_hz), carrier_hz=carrier_hz, c=c)

    def with_elements(self, n: int) -> ArrayGeometry:
        return self.model_copy(update={"n": n})


class PathLossParams(BaseModel):
    """g(d) = (c / 4π f_c d_r)² · (d_r / d)^ξ."""

    model_config = ConfigDict(frozen=True)

    d_r: float = Field(default=1.0, gt=0)
    xi: float = Field(default=2.0, gt=0)
    carrier_hz: float = Field(default=DEFAULT_CARRIER_HZ, gt=0)
    c: float = Field(default=DEFAULT_C, gt=0)

    @property
    def reference_gain(self) -> float:
        return (self.c / (4.0 * math.pi * self.carrier_hz * self.d_r)) ** 2


def _require(kind: ArrayKind, geometry: ArrayGeometry, role: str) -> None:
    if geometry.kind is not kind:
        raise InvalidGeometryError(f"{role} requires a {kind.value} array, got {geometry.kind.value}")


def steering_rx(theta: float, bs: ArrayGeometry) -> ComplexArray:
    """BS receive steering vector, element i = exp(j·i·τ_B·cos θ)."""
    _require(ArrayKind.ULA, bs, "receive steering")
    return np.exp(1j * np.arange(bs.n) * (bs.tau * math.cos(theta)))


def steering_rx_batch(thetas: ArrayLike, bs: ArrayGeometry) -> ComplexArray:
    """Receive steering vectors for many angles, shape (..., N_B)."""
    _require(ArrayKind.ULA, bs, "receive steering")
    phase = np.multiply.outer(bs.tau * np.cos(np.asarray(thetas, dtype=np.float64)), np.arange(bs.n))
    return np.exp(1j * phase)


def steering_tx_ula(psi: float, veh: ArrayGeometry) -> ComplexArray:
    """ULA transmit steering row, element i = exp(−j·i·τ·cos ψ)."""
    _require(ArrayKind.ULA, veh, "ULA transmit steering")
    return np.exp(-1j * np.arange(veh.n) * (veh.tau * math.cos(psi)))


def steering_tx_uca(phi1: float, veh: ArrayGeometry) -> ComplexArray:
    """UCA transmit steering row, element m = exp(−j·τ·cos φ_m) with φ_m = 2πm/N + φ₁ (0-based m)."""
    _require(ArrayKind.UCA, veh, "UCA transmit steering")
    phi = 2.0 * math.pi * np.arange(veh.n) / veh.n + phi1
    return np.exp(-1j * veh.tau * np.cos(phi))


def steering_tx(angle: float, veh: ArrayGeometry) -> ComplexArray:
    """Transmit steering row for either array kind; ``angle`` is ψ (ULA) or φ₁ (UCA)."""
    if veh.kind is ArrayKind.UCA:
        return steering_tx_uca(angle, veh)
    return steering_tx_ula(angle, veh)


@overload
def path_loss(d: float, p: PathLossParams) -> float: ...


@overload
def path_loss(d: FloatArray, p: PathLossParams) -> FloatArray: ...


def path_loss(d: float | FloatArray, p: PathLossParams) -> float | FloatArray:
    """Linear path-loss gain g(d); accepts a scalar distance or an array of distances."""
    dist = np.asarray(d, dtype=np.float64)
    if np.any(dist <= 0.0):
        raise DomainError("path loss is only defined for positive distances")
    gain = p.reference_gain * (p.d_r / dist) ** p.xi
    if gain.ndim == 0:
        return float(gain)
    return gain


@overload
def correlation_mag_sq(theta0: float, theta1: float, bs: ArrayGeometry) -> float: ...


@overload
def correlation_mag_sq(theta0: float, theta1: FloatArray, bs: ArrayGeometry) -> FloatArray: ...


def correlation_mag_sq(theta0: float, theta1: float | FloatArray, bs: ArrayGeometry) -> float | FloatArray:
    """
    Closed-form |r₁†r₀|² between receive steering vectors.

    Uses the Dirichlet kernel (sin(½N_B ν)/sin(½ν))² with ν = τ_B(cos θ₀ − cos θ₁);
    equal cosines and grating-lobe zeros of sin(½ν) both evaluate to the limit N_B².

    Args:
        theta0: Claimed-location angle θ₀
        theta1: Attack angle θ₁ (scalar or array)
        bs: BS array (must be a ULA)

    Returns:
        Value(s) in [0, N_B²], same shape as ``theta1``
    """
    _require(ArrayKind.ULA, bs, "steering correlation")
    n = bs.n
    peak = float(n * n)
    delta = math.cos(theta0) - np.cos(np.asarray(theta1, dtype=np.float64))
    nu = bs.tau * delta
    half = np.sin(0.5 * nu)
    singular = (np.abs(delta) <= COS_TOLERANCE) | (np.abs(half) < _DIRICHLET_GUARD)
    safe = np.where(singular, 1.0, half)
    value = np.where(singular, peak, np.minimum((np.sin(0.5 * n * nu) / safe) ** 2, peak))
    if value.ndim == 0:
        return float(value)
    return value
