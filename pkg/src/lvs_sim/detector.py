"""
Single-snapshot likelihood-ratio detector.

With matched covariances the LRT reduces to a linear statistic
𝕋(y) = 2Re{(m₁* − m₀)†y}/cov₀ compared against
Γ = ln λ + Re{(m₁* − m₀)†(m₁* + m₀)}/cov₀. Under either hypothesis 𝕋 is
Gaussian with variance 2D, which gives the closed-form rates
α = Q((ln λ + D)/√(2D)) and β = Q((ln λ − D)/√(2D)).
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from enum import Enum
from typing import overload

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, Field
from scipy.special import erfc, erfcinv

from .attack import Scenario, legitimate_model, min_kl_at, optimal_theta, target_mean
from .errors import DimensionMismatchError, DomainError
from .geometry import ComplexArray, ComplexVector, FloatArray

logger = logging.getLogger(__name__)

# Below this KL the statistic is degenerate and the indicator rates apply.
KL_FLOOR = 1e-12


class Decision(str, Enum):
    LEGITIMATE = "legitimate"
    MALICIOUS = "malicious"


class DetectorConfig(BaseModel):
    """LRT threshold λ and prior P₀ of a legitimate claim."""

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    lam: float = Field(
        default=1.0,
        gt=0,
        alias="lambda",
        allow_inf_nan=False,
        json_schema_extra={"error_messages": {"greater_than": "the LRT threshold must be positive"}},
    )
    p0_prior: float = Field(
        default=0.5,
        gt=0,
        lt=1,
        json_schema_extra={"error_messages": {"default": "the prior P₀ must lie strictly between 0 and 1"}},
    )


class RatePair(BaseModel):
    """False-positive rate α and detection rate β."""

    model_config = ConfigDict(frozen=True)

    alpha: float = Field(ge=0, le=1)
    beta: float = Field(ge=0, le=1)


class LvsView(BaseModel):
    """The detector's model of both hypotheses for one claim."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    m0: ComplexVector
    m1: ComplexVector
    cov0: float = Field(gt=0)

    @property
    def kl(self) -> float:
        return float(np.sum(np.abs(self.m1 - self.m0) ** 2)) / self.cov0


# =============================================================================
# Q-function
# =============================================================================


@overload
def q_function(x: float) -> float: ...


@overload
def q_function(x: FloatArray) -> FloatArray: ...


def q_function(x: float | FloatArray) -> float | FloatArray:
    """Gaussian tail probability Q(x) = ½·erfc(x/√2)."""
    value = 0.5 * erfc(np.asarray(x, dtype=np.float64) / math.sqrt(2.0))
    if np.ndim(value) == 0:
        return float(value)
    return np.asarray(value)


def q_inverse(p: float) -> float:
    """Q⁻¹(p) = √2·erfcinv(2p) for p in (0, 1)."""
    if not 0.0 < p < 1.0:
        raise DomainError(f"Q⁻¹ is defined on (0, 1), got {p!r}")
    return math.sqrt(2.0) * float(erfcinv(2.0 * p))


# =============================================================================
# Statistic, threshold, decision
# =============================================================================


def _difference(m0: ArrayLike, m1_star: ArrayLike) -> tuple[ComplexArray, ComplexArray, ComplexArray]:
    mean0 = np.asarray(m0, dtype=np.complex128)
    mean1 = np.asarray(m1_star, dtype=np.complex128)
    if mean0.shape != mean1.shape:
        raise DimensionMismatchError(f"mean vectors have shapes {mean0.shape} and {mean1.shape}")
    return mean0, mean1, mean1 - mean0


def test_statistic(y: ArrayLike, m0: ArrayLike, m1_star: ArrayLike, cov0: float) -> float | FloatArray:
    """
    𝕋(y) = 2Re{(m₁* − m₀)†y}/cov₀.

    ``y`` may be a single observation or a stack of shape (M, N_B), in which
    case an array of M statistics is returned.
    """
    if cov0 <= 0:
        raise DomainError("covariance must be positive")
    _, _, delta = _difference(m0, m1_star)
    obs = np.asarray(y, dtype=np.complex128)
    if obs.shape[-1] != delta.size:
        raise DimensionMismatchError(f"observation length {obs.shape[-1]} does not match mean length {delta.size}")
    value = 2.0 * np.real(obs @ delta.conj()) / cov0
    if np.ndim(value) == 0:
        return float(value)
    return value


def statistic_offset(m0: ArrayLike, m1_star: ArrayLike, cov0: float) -> float:
    """Re{(m₁* − m₀)†(m₁* + m₀)}/cov₀, the λ-free part of Γ."""
    mean0, mean1, delta = _difference(m0, m1_star)
    return float(np.real(np.vdot(delta, mean1 + mean0))) / cov0


def threshold_gamma(lam: float, m0: ArrayLike, m1_star: ArrayLike, cov0: float) -> float:
    """Γ = ln λ + Re{(m₁* − m₀)†(m₁* + m₀)}/cov₀."""
    if lam <= 0:
        raise DomainError("λ must be positive")
    return math.log(lam) + statistic_offset(m0, m1_star, cov0)


def decide(y: ArrayLike, m0: ArrayLike, m1_star: ArrayLike, cov0: float, lam: float) -> Decision:
    """Malicious iff 𝕋(y) ≥ Γ."""
    _, _, delta = _difference(m0, m1_star)
    if not np.any(delta):
        # 𝕋 ≡ 0 and Γ = ln λ
        return Decision.MALICIOUS if math.log(lam) <= 0.0 else Decision.LEGITIMATE
    statistic = test_statistic(y, m0, m1_star, cov0)
    return Decision.MALICIOUS if statistic >= threshold_gamma(lam, m0, m1_star, cov0) else Decision.LEGITIMATE


# =============================================================================
# Rates
# =============================================================================


def rates_from_kl(kl: float, lam: float) -> RatePair:
    """
    Closed-form (α, β) for a linear Gaussian LRT with divergence D.

    For D below the degeneracy floor both rates collapse to 𝟙(ln λ ≤ 0).
    """
    if lam <= 0:
        raise DomainError("λ must be positive")
    log_lam = math.log(lam)
    if kl < KL_FLOOR:
        indicator = 1.0 if log_lam <= 0.0 else 0.0
        return RatePair(alpha=indicator, beta=indicator)
    spread = math.sqrt(2.0 * kl)
    return RatePair(alpha=q_function((log_lam + kl) / spread), beta=q_function((log_lam - kl) / spread))


def analytic_rates(scn: Scenario, theta1: float, lam: float) -> RatePair:
    return rates_from_kl(min_kl_at(scn, theta1), lam)


def roc_curve(kl: float, lambdas: Sequence[float] | FloatArray) -> list[RatePair]:
    return [rates_from_kl(kl, float(lam)) for lam in lambdas]


def total_error(rates: RatePair, p0_prior: float) -> float:
    """ε = P₀α + (1 − P₀)(1 − β)."""
    return p0_prior * rates.alpha + (1.0 - p0_prior) * (1.0 - rates.beta)


def bayes_threshold(p0_prior: float) -> float:
    """λ* = P₀/(1 − P₀), the threshold minimizing total error."""
    if not 0.0 < p0_prior < 1.0:
        raise DomainError(f"the prior P₀ must lie in (0, 1), got {p0_prior!r}")
    return p0_prior / (1.0 - p0_prior)


def neyman_pearson_threshold(kl: float, alpha_target: float) -> float:
    """λ with α(λ) = α_target: exp(√(2D)·Q⁻¹(α_target) − D)."""
    if kl < KL_FLOOR:
        raise DomainError("a perfect attack leaves no threshold that controls the false positive rate")
    return math.exp(math.sqrt(2.0 * kl) * q_inverse(alpha_target) - kl)


def minimum_total_error(kl: float, p0_prior: float) -> float:
    """ε* at the Bayes threshold."""
    return total_error(rates_from_kl(kl, bayes_threshold(p0_prior)), p0_prior)


def lvs_view(scn: Scenario, theta1: float | None = None) -> LvsView:
    """(m₀, m₁*, cov₀) as the LVS models them; θ₁ defaults to the optimal attack angle."""
    theta = optimal_theta(scn) if theta1 is None else theta1
    model0 = legitimate_model(scn)
    return LvsView(m0=model0.mean, m1=target_mean(scn, theta, model0.mean), cov0=model0.cov_scalar)
