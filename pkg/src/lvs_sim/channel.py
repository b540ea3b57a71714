"""
Rician channel realizations, observation sampling and Gaussian likelihoods.

A vehicle with channel ``H = √(K/(1+K))·H̄ + √(1/(1+K))·H̃`` transmitting a
unit pilot through beamformer b is observed at the BS as
``y ~ CN(m, cov·I)`` with ``m = √(p g(d) K/(1+K))·H̄ b`` and
``cov = p g(d)/(1+K) + σ²``. Detection statistics sample y directly from that
Gaussian; :func:`sample_observation_via_channel` keeps the explicit-channel
route for cross-checking.

CN(0, 1) means independent real and imaginary parts, each N(0, ½).
"""

from __future__ import annotations

import logging
import math

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, Field

from .errors import DimensionMismatchError, DomainError
from .geometry import ArrayGeometry, ComplexArray, ComplexVector, FloatArray, PathLossParams, path_loss, steering_rx

logger = logging.getLogger(__name__)

BEAMFORMER_NORM_TOLERANCE = 1e-9


class ChannelParams(BaseModel):
    """Per-hypothesis channel: Rician K, noise variance σ², transmit power p and path loss."""

    model_config = ConfigDict(frozen=True)

    k_factor: float = Field(
        default=0.0,
        ge=0,
        allow_inf_nan=False,
        json_schema_extra={
            "error_messages": {"greater_than_equal": "K must be non-negative (linear); use k_db for decibels"}
        },
    )
    pure_los: bool = False
    noise_var: float = Field(
        gt=0,
        allow_inf_nan=False,
        json_schema_extra={
            "error_messages": {"greater_than": "noise variance must be positive (linear); use noise_db for decibels"}
        },
    )
    tx_power: float = Field(default=0.0, ge=0, allow_inf_nan=False)
    path: PathLossParams = Field(default_factory=PathLossParams)

    @property
    def los_fraction(self) -> float:
        """K/(1+K), or 1 for a pure-LOS channel."""
        if self.pure_los:
            return 1.0
        return self.k_factor / (1.0 + self.k_factor)

    @property
    def diffuse_fraction(self) -> float:
        """1/(1+K), or 0 for a pure-LOS channel."""
        if self.pure_los:
            return 0.0
        return 1.0 / (1.0 + self.k_factor)

    def with_power(self, tx_power: float) -> ChannelParams:
        return self.model_copy(update={"tx_power": tx_power})


class GaussianObsModel(BaseModel):
    """y ~ CN(mean, cov_scalar·I)."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    mean: ComplexVector
    cov_scalar: float = Field(gt=0, allow_inf_nan=False)

    @property
    def dim(self) -> int:
        return int(self.mean.shape[0])


class ObservationSnapshot(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    y: ComplexVector
    slot: int = Field(default=1, ge=1)


def complex_normal(rng: np.random.Generator, shape: int | tuple[int, ...]) -> ComplexArray:
    """I.i.d. CN(0, 1) draws."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * math.sqrt(0.5)


def los_matrix(theta_rx: float, tx_steering: ArrayLike, bs: ArrayGeometry) -> ComplexArray:
    """Rank-1 LOS component H̄ = r(θ)·t, shape (N_B, N_k)."""
    tx = np.asarray(tx_steering, dtype=np.complex128)
    if tx.ndim != 1 or tx.size == 0:
        raise DimensionMismatchError(f"transmit steering must be a non-empty row vector, got shape {tx.shape}")
    return np.outer(steering_rx(theta_rx, bs), tx)


def sample_channel(
    k_factor: float,
    los: ArrayLike,
    rng: np.random.Generator,
    *,
    pure_los: bool = False,
) -> ComplexArray:
    """Draw H = √(K/(1+K))·H̄ + √(1/(1+K))·H̃; ``pure_los`` returns H̄ exactly."""
    h_los = np.asarray(los, dtype=np.complex128)
    if pure_los:
        return h_los.copy()
    if k_factor < 0:
        raise DomainError("Rician K-factor must be non-negative")
    scatter = complex_normal(rng, h_los.shape)
    return math.sqrt(k_factor / (1.0 + k_factor)) * h_los + math.sqrt(1.0 / (1.0 + k_factor)) * scatter


def _unit_beamformer(beamformer: ArrayLike) -> ComplexArray:
    b = np.asarray(beamformer, dtype=np.complex128)
    if b.ndim != 1:
        raise DimensionMismatchError("beamformer must be a vector")
    if abs(np.linalg.norm(b) - 1.0) > BEAMFORMER_NORM_TOLERANCE:
        raise DomainError(f"beamformer must have unit norm, got {np.linalg.norm(b)!r}")
    return b


def mean_vector(params: ChannelParams, d: float, los: ArrayLike, beamformer: ArrayLike) -> ComplexArray:
    """m = √(p g(d) K/(1+K))·H̄·b."""
    h_los = np.asarray(los, dtype=np.complex128)
    b = _unit_beamformer(beamformer)
    if h_los.ndim != 2 or h_los.shape[1] != b.size:
        raise DimensionMismatchError(f"LOS matrix {h_los.shape} does not match beamformer length {b.size}")
    amplitude = math.sqrt(params.tx_power * path_loss(d, params.path) * params.los_fraction)
    return amplitude * (h_los @ b)


def cov_scalar(params: ChannelParams, d: float) -> float:
    """R = (p g(d)/(1+K) + σ²)·I, returned as the scalar."""
    return params.tx_power * path_loss(d, params.path) * params.diffuse_fraction + params.noise_var


def legitimate_mean(params: ChannelParams, d: float, theta: float, bs: ArrayGeometry, n_tx: int) -> ComplexArray:
    """m₀ = √(p₀ g(d₀) K₀ N₀/(1+K₀))·r₀, the mean under b₀ = t₀†/‖t₀‖."""
    amplitude = math.sqrt(params.tx_power * path_loss(d, params.path) * params.los_fraction * n_tx)
    return amplitude * steering_rx(theta, bs)


def draw_observations(
    mean: ArrayLike,
    cov: ArrayLike,
    rng: np.random.Generator,
    size: int | None = None,
) -> ComplexArray:
    """
    Vectorized y = mean + √cov·w.

    ``mean`` has shape (..., N) and ``cov`` broadcasts against its leading
    dimensions. With ``size`` the draws get an extra leading axis of that length.
    """
    m = np.asarray(mean, dtype=np.complex128)
    c = np.sqrt(np.asarray(cov, dtype=np.float64))[..., np.newaxis]
    shape = m.shape if size is None else (size, *m.shape)
    return m + c * complex_normal(rng, shape)


def sample_observation(
    model: GaussianObsModel,
    rng: np.random.Generator,
    *,
    slot: int = 1,
    noiseless: bool = False,
) -> ObservationSnapshot:
    """Draw one y ~ CN(m, R); ``noiseless`` returns the mean exactly."""
    if noiseless:
        return ObservationSnapshot(y=model.mean, slot=slot)
    return ObservationSnapshot(y=draw_observations(model.mean, model.cov_scalar, rng), slot=slot)


def sample_observation_via_channel(
    params: ChannelParams,
    d: float,
    los: ArrayLike,
    beamformer: ArrayLike,
    rng: np.random.Generator,
    size: int = 1,
) -> ComplexArray:
    """
    Draw y = √(p g(d))·H·b + n by sampling the fading channel explicitly.

    Returns shape (size, N_B). Matches CN(mean_vector, cov_scalar) in distribution.
    """
    h_los = np.asarray(los, dtype=np.complex128)
    b = _unit_beamformer(beamformer)
    gain = math.sqrt(params.tx_power * path_loss(d, params.path))
    if params.pure_los:
        h = np.broadcast_to(h_los, (size, *h_los.shape))
    else:
        scatter = complex_normal(rng, (size, *h_los.shape))
        h = math.sqrt(params.los_fraction) * h_los + math.sqrt(params.diffuse_fraction) * scatter
    noise = math.sqrt(params.noise_var) * complex_normal(rng, (size, h_los.shape[0]))
    return gain * (h @ b) + noise


def log_likelihood(y: ArrayLike, model: GaussianObsModel) -> float:
    """ln f(y) = −N ln(π·cov) − ‖y − m‖²/cov."""
    obs = np.asarray(y, dtype=np.complex128)
    if obs.shape != model.mean.shape:
        raise DimensionMismatchError(f"observation shape {obs.shape} does not match model {model.mean.shape}")
    residual = float(np.sum(np.abs(obs - model.mean) ** 2))
    return -model.dim * math.log(math.pi * model.cov_scalar) - residual / model.cov_scalar


def log_likelihood_batch(Y: ArrayLike, mean: ArrayLike, cov: float | FloatArray) -> FloatArray:
    """Row-wise log-likelihoods for a stack of observations, shape (M,)."""
    obs = np.asarray(Y, dtype=np.complex128)
    m = np.asarray(mean, dtype=np.complex128)
    c = np.asarray(cov, dtype=np.float64)
    residual = np.sum(np.abs(obs - m) ** 2, axis=-1)
    return -obs.shape[-1] * np.log(np.pi * c) - residual / c
