"""
The malicious vehicle's KL-minimizing strategy.

Given what the BS expects to see from a claimed location (m₀, R₀), the
attacker picks an angle θ₁, transmit power p₁ and unit beamformer b₁ so that
its induced observation model is as close as possible, in KL divergence, to
the legitimate one. The power matches the covariances; the beamformer steers
G·b₁ onto the projection of m₀ onto the attacker's receive steering vector;
the angle maximizes the steering correlation |r₁†r₀|².

Example:
    >>> plan = plan_attack(scenario)
    >>> plan.min_kl          # 0.0 whenever ±θc is reachable
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy.optimize import minimize_scalar

from .channel import ChannelParams, GaussianObsModel, cov_scalar, legitimate_mean, los_matrix, mean_vector
from .errors import (
    ConstrainedRegimeError,
    DimensionMismatchError,
    DomainError,
    EmptyFeasibleSetError,
    InfeasibleAttackError,
    UnboundedAntennasError,
)
from .geometry import (
    COS_TOLERANCE,
    ArrayGeometry,
    ComplexArray,
    ComplexVector,
    FloatArray,
    PolarPoint,
    correlation_mag_sq,
    normalize_angle,
    path_loss,
    steering_rx,
    steering_tx,
)

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi
THETA_GRID_POINTS = 100_000
THETA_XATOL = 1e-10
DEFAULT_K1_FLOOR = 1e-6

# Absolute slack when comparing correlation values on the angle grid.
_TIE_TOLERANCE = 1e-12
_ANGLE_EDGE_TOLERANCE = 1e-12
_R_L_SLACK = 1e-9
# Guards ⌈x⌉ against x landing a few ulps above an integer.
_CEIL_GUARD = 1e-12


class AngleInterval(BaseModel):
    """Closed counterclockwise arc from ``lo`` to ``hi``; ``lo > hi`` wraps through ±π."""

    model_config = ConfigDict(frozen=True)

    lo: float = Field(allow_inf_nan=False)
    hi: float = Field(allow_inf_nan=False)

    @field_validator("lo", "hi")
    @classmethod
    def _normalize(cls, value: float) -> float:
        return normalize_angle(value)

    @property
    def width(self) -> float:
        return (self.hi - self.lo) % TWO_PI

    def contains(self, theta: float) -> bool:
        return (theta - self.lo) % TWO_PI <= self.width + _ANGLE_EDGE_TOLERANCE


def forbidden_mask(thetas: ArrayLike, intervals: Sequence[AngleInterval]) -> np.ndarray:
    """Boolean mask of angles that fall in any forbidden interval."""
    angles = np.asarray(thetas, dtype=np.float64)
    mask = np.zeros(angles.shape, dtype=bool)
    for interval in intervals:
        mask |= np.mod(angles - interval.lo, TWO_PI) <= interval.width + _ANGLE_EDGE_TOLERANCE
    return mask


def is_forbidden(theta: float, intervals: Sequence[AngleInterval]) -> bool:
    return any(interval.contains(theta) for interval in intervals)


def feasible_arcs(intervals: Sequence[AngleInterval]) -> list[tuple[float, float]]:
    """
    Open arcs left over once every forbidden interval is removed.

    Each arc is ``(start, end)`` with ``start`` in (−π, π] and ``end > start``
    (``end`` may exceed π when the arc wraps). No intervals gives the whole circle.
    """
    if not intervals:
        return [(-math.pi, math.pi)]

    starts = sorted((interval.lo % TWO_PI, interval.lo % TWO_PI + interval.width) for interval in intervals)
    # A second lap lets arcs that wrap past 2π cover the first ones.
    unrolled = starts + [(s + TWO_PI, e + TWO_PI) for s, e in starts]
    merged: list[list[float]] = []
    for s, e in unrolled:
        if merged and s <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], e)
        else:
            merged.append([s, e])

    origin = starts[0][0]
    arcs: list[tuple[float, float]] = []
    for (_, end), (nxt, _) in zip(merged, merged[1:]):
        if origin <= end < origin + TWO_PI and nxt > end:
            start = normalize_angle(end)
            arcs.append((start, start + (nxt - end)))
    return arcs


class Scenario(BaseModel):
    """Everything the attacker and the LVS know about one claim."""

    model_config = ConfigDict(frozen=True)

    bs: ArrayGeometry
    veh_legit: ArrayGeometry
    veh_mal: ArrayGeometry
    claimed: PolarPoint
    legit_chan: ChannelParams
    mal_chan: ChannelParams
    r_l: float = Field(default=100.0, gt=0, allow_inf_nan=False)
    forbidden_angles: tuple[AngleInterval, ...] = ()
    psi0: float = Field(default=math.pi / 2, allow_inf_nan=False)
    psi1: float = Field(default=math.pi / 2, allow_inf_nan=False)
    k1_floor: float = Field(default=DEFAULT_K1_FLOOR, gt=0)
    mal_distance: float | None = Field(default=None, gt=0)


class AttackPlan(BaseModel):
    """Optimal attacker settings for one claim."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    theta1_star: float
    d1: float = Field(gt=0)
    p1_star: float = Field(ge=0)
    b1_star: ComplexVector
    n1_star: int = Field(ge=2)
    min_kl: float = Field(ge=0)

    @field_validator("b1_star")
    @classmethod
    def _unit_norm(cls, value: ComplexArray) -> ComplexArray:
        if abs(float(np.linalg.norm(value)) - 1.0) > 1e-9:
            raise ValueError("beamformer must have unit norm")
        return value


class ConstrainedAttack(BaseModel):
    """Best attack an array smaller than N₁* can mount."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    p1: float = Field(ge=0)
    b1: ComplexVector
    kl: float = Field(ge=0)


# =============================================================================
# Observation models
# =============================================================================


def legitimate_model(scn: Scenario) -> GaussianObsModel:
    """(m₀, R₀) for a legitimate vehicle transmitting from the claimed location."""
    d0 = scn.claimed.d
    return GaussianObsModel(
        mean=legitimate_mean(scn.legit_chan, d0, scn.claimed.theta, scn.bs, scn.veh_legit.n),
        cov_scalar=cov_scalar(scn.legit_chan, d0),
    )


def legitimate_link(scn: Scenario) -> tuple[ComplexArray, ComplexArray]:
    """
    LOS matrix H̄₀ = r₀t₀ for the vehicle's array at ψ₀, and its beamformer b₀ = t₀†/‖t₀‖.

    H̄₀b₀ = √N₀·r₀ for any ψ₀.
    """
    t0 = steering_tx(scn.psi0, scn.veh_legit)
    return los_matrix(scn.claimed.theta, t0, scn.bs), t0.conj() / np.linalg.norm(t0)


def _same_direction(theta_a: float, theta_b: float) -> bool:
    return abs(math.cos(theta_a) - math.cos(theta_b)) <= COS_TOLERANCE


def target_mean(scn: Scenario, theta1: float, m0: ArrayLike | None = None) -> ComplexArray:
    """m₁*(θ₁) = r₁(r₁†m₀)/N_B, the closest mean an attacker at θ₁ can produce."""
    mean0 = legitimate_model(scn).mean if m0 is None else np.asarray(m0, dtype=np.complex128)
    if _same_direction(theta1, scn.claimed.theta):
        return mean0.copy()
    r1 = steering_rx(theta1, scn.bs)
    return r1 * (np.vdot(r1, mean0) / scn.bs.n)


def induced_model(
    scn: Scenario,
    d1: float,
    theta1: float,
    psi1: float,
    p1: float,
    b: ArrayLike,
) -> GaussianObsModel:
    """Observation model under H₁ for arbitrary attacker settings."""
    chan = scn.mal_chan.with_power(p1)
    h_los = los_matrix(theta1, steering_tx(psi1, scn.veh_mal), scn.bs)
    return GaussianObsModel(mean=mean_vector(chan, d1, h_los, b), cov_scalar=cov_scalar(chan, d1))


def planned_model(scn: Scenario, plan: AttackPlan) -> GaussianObsModel:
    """Model induced by a plan; the attacker array takes the plan's beamformer length."""
    grown = scn.model_copy(update={"veh_mal": scn.veh_mal.with_elements(plan.b1_star.size)})
    return induced_model(grown, plan.d1, plan.theta1_star, scn.psi1, plan.p1_star, plan.b1_star)


def kl_divergence(model0: GaussianObsModel, model1: GaussianObsModel) -> float:
    """
    D(f₁ ‖ f₀) for scalar-covariance complex Gaussians.

    N(ρ − 1 − ln ρ) + ‖m₀ − m₁‖²/cov₀ with ρ = cov₁/cov₀.
    """
    if model0.dim != model1.dim:
        raise DimensionMismatchError(f"models have dimensions {model0.dim} and {model1.dim}")
    rho = model1.cov_scalar / model0.cov_scalar
    mean_term = float(np.sum(np.abs(model0.mean - model1.mean) ** 2)) / model0.cov_scalar
    return max(0.0, model0.dim * (rho - 1.0 - math.log(rho)) + mean_term)


# =============================================================================
# Power, antennas, beamformer
# =============================================================================


def _cov_budget(scn: Scenario) -> float:
    """p₀g(d₀)/(1+K₀) + σ₀² − σ₁², the diffuse power the attacker must supply."""
    budget = cov_scalar(scn.legit_chan, scn.claimed.d) - scn.mal_chan.noise_var
    if budget <= 0:
        raise InfeasibleAttackError(
            "attacker noise variance exceeds the legitimate observation covariance; covariances cannot match"
        )
    return budget


def optimal_power(scn: Scenario, d1: float) -> float:
    """p₁* = (K₁+1)/g(d₁)·(p₀g(d₀)/(1+K₀) + σ₀² − σ₁²); makes cov₁ equal cov₀."""
    budget = _cov_budget(scn)
    if scn.mal_chan.pure_los:
        raise InfeasibleAttackError("a pure-LOS attacker channel has no diffuse power to match the covariance")
    return (scn.mal_chan.k_factor + 1.0) / path_loss(d1, scn.mal_chan.path) * budget


def _n1_ratio(scn: Scenario) -> float:
    budget = _cov_budget(scn)
    if scn.mal_chan.pure_los:
        return 0.0
    k1 = scn.mal_chan.k_factor
    if k1 < scn.k1_floor:
        raise UnboundedAntennasError(f"K₁ = {k1!r} is below the floor {scn.k1_floor!r}; N₁* diverges")
    rx0 = scn.legit_chan.tx_power * path_loss(scn.claimed.d, scn.legit_chan.path)
    return rx0 * scn.legit_chan.los_fraction * scn.veh_legit.n / (k1 * budget)


def min_antennas(scn: Scenario) -> int:
    """N₁* = ⌈max{2, p₀g(d₀)K₀N₀ / (K₁[p₀g(d₀) + (1+K₀)(σ₀² − σ₁²)])}⌉."""
    ratio = _n1_ratio(scn)
    return max(2, math.ceil(ratio * (1.0 - _CEIL_GUARD)))


def _attacker_gain_matrix(scn: Scenario, d1: float, theta1: float, psi1: float, p1: float) -> ComplexArray:
    """G = √(p₁g(d₁)K₁/(1+K₁))·H̄₁."""
    amplitude = math.sqrt(p1 * path_loss(d1, scn.mal_chan.path) * scn.mal_chan.los_fraction)
    return amplitude * los_matrix(theta1, steering_tx(psi1, scn.veh_mal), scn.bs)


def _orthogonal_unit(u: ComplexArray) -> ComplexArray:
    """Gram–Schmidt of the standard basis (e₂ first) against ``u``."""
    n = u.size
    for index in (1, *range(n)):
        e = np.zeros(n, dtype=np.complex128)
        e[index] = 1.0
        v = e - u * np.vdot(u, e)
        norm = float(np.linalg.norm(v))
        if norm > 1e-8:
            return v / norm
    raise DomainError("a single-element array has no direction orthogonal to its beam")


def _solve_beamformer(G: ComplexArray, m0: ComplexArray) -> ComplexArray:
    """
    Minimize ‖G·b − m₀‖² over unit b via the principal direction of Q = G†G.

    The principal coefficient is c₁/η, clamped to unit magnitude with the
    phase of c₁; the rest of the norm goes to a fixed orthogonal direction.
    """
    n1 = G.shape[1]
    eigvals, eigvecs = np.linalg.eigh(G.conj().T @ G)
    eta = float(eigvals[-1])
    u = eigvecs[:, -1]
    if eta <= 0.0:
        b = np.zeros(n1, dtype=np.complex128)
        b[0] = 1.0
        return b
    c1 = complex(np.vdot(u, G.conj().T @ m0))
    coef = c1 / eta
    if abs(coef) > 1.0:
        coef = c1 / abs(c1)
    residual = math.sqrt(max(0.0, 1.0 - abs(coef) ** 2))
    b = coef * u
    if residual > 0.0:
        b = b + residual * _orthogonal_unit(u)
    return b / np.linalg.norm(b)


def optimal_beamformer(scn: Scenario, d1: float, theta1: float, psi1: float) -> ComplexArray:
    """
    Unit beamformer with G·b = m₁*(θ₁) at p₁ = p₁*.

    Raises:
        ConstrainedRegimeError: the attacker array has fewer than N₁* elements
    """
    n1_star = min_antennas(scn)
    if scn.veh_mal.n < n1_star:
        raise ConstrainedRegimeError(scn.veh_mal.n, n1_star)
    p1 = optimal_power(scn, d1)
    G = _attacker_gain_matrix(scn, d1, theta1, psi1, p1)
    return _solve_beamformer(G, legitimate_model(scn).mean)


def constrained_beamformer(scn: Scenario, d1: float, theta1: float, psi1: float, p1: float) -> ComplexArray:
    """Clamped-projection beamformer for a given power; valid for any N₁ ≥ 2."""
    if scn.veh_mal.n < 2:
        raise DomainError("the attacker array needs at least two elements")
    G = _attacker_gain_matrix(scn, d1, theta1, psi1, p1)
    return _solve_beamformer(G, legitimate_model(scn).mean)


def best_constrained_attack(scn: Scenario, theta1: float, d1: float) -> ConstrainedAttack:
    """
    Jointly tune p₁ and the clamped beamformer for an undersized array.

    Bounded Brent search on ln p₁ around p₁*; the KL is never below D(θ₁).
    """
    model0 = legitimate_model(scn)
    p_star = optimal_power(scn, d1)

    def evaluate(log_p: float) -> tuple[float, ComplexArray]:
        p1 = math.exp(log_p)
        b = constrained_beamformer(scn, d1, theta1, scn.psi1, p1)
        return kl_divergence(model0, induced_model(scn, d1, theta1, scn.psi1, p1, b)), b

    centre = math.log(p_star)
    result = minimize_scalar(
        lambda log_p: evaluate(log_p)[0],
        bounds=(centre - 10.0, centre + 10.0),
        method="bounded",
        options={"xatol": THETA_XATOL},
    )
    best_log_p = centre
    best_kl, best_b = evaluate(centre)
    if result.success:
        kl, b = evaluate(float(result.x))
        if kl < best_kl:
            best_log_p, best_kl, best_b = float(result.x), kl, b
    return ConstrainedAttack(p1=math.exp(best_log_p), b1=best_b, kl=best_kl)


# =============================================================================
# Angle and distance
# =============================================================================


def min_kl_at(scn: Scenario, theta1: float) -> float:
    """
    D(θ₁) = [p₀g(d₀)K₀N₀/(p₀g(d₀) + σ₀²(1+K₀))]·(N_B − |r₁†r₀|²/N_B).

    Independent of d₁, K₁ and σ₁²; exactly zero when cos θ₁ = cos θc.
    """
    if _same_direction(theta1, scn.claimed.theta):
        return 0.0
    chan = scn.legit_chan
    rx0 = chan.tx_power * path_loss(scn.claimed.d, chan.path)
    scale = rx0 * chan.los_fraction * scn.veh_legit.n / cov_scalar(chan, scn.claimed.d)
    n_b = scn.bs.n
    return max(0.0, scale * (n_b - correlation_mag_sq(scn.claimed.theta, theta1, scn.bs) / n_b))


def min_kl_curve(scn: Scenario, thetas: FloatArray) -> FloatArray:
    """Vectorized :func:`min_kl_at` over an array of attack angles."""
    chan = scn.legit_chan
    rx0 = chan.tx_power * path_loss(scn.claimed.d, chan.path)
    scale = rx0 * chan.los_fraction * scn.veh_legit.n / cov_scalar(chan, scn.claimed.d)
    n_b = scn.bs.n
    values = scale * (n_b - correlation_mag_sq(scn.claimed.theta, thetas, scn.bs) / n_b)
    same = np.abs(np.cos(thetas) - math.cos(scn.claimed.theta)) <= COS_TOLERANCE
    return np.where(same, 0.0, np.maximum(values, 0.0))


def attack_distance(scn: Scenario, theta1: float) -> float:
    """
    Distance d₁ at which the attacker transmits along bearing θ₁.

    A configured distance wins. Otherwise the nearest point on the ray beyond
    the claimed location that keeps ‖x_c − x₁‖ ≥ r_l, or d_c itself when the
    whole ray is already far enough away.
    """
    if scn.mal_distance is not None:
        position = PolarPoint(d=scn.mal_distance, theta=theta1)
        if position.distance_to(scn.claimed) < scn.r_l - _R_L_SLACK:
            raise InfeasibleAttackError(
                f"configured attacker distance {scn.mal_distance!r} m is within r_l of the claimed location"
            )
        return scn.mal_distance
    d_c = scn.claimed.d
    delta = theta1 - scn.claimed.theta
    offset = d_c * abs(math.sin(delta))
    if scn.r_l >= offset:
        root = d_c * math.cos(delta) + math.sqrt(scn.r_l**2 - offset**2)
        if root > 0.0:
            return root
    return d_c


def _arc_grid(arcs: Sequence[tuple[float, float]]) -> tuple[FloatArray, FloatArray, np.ndarray]:
    """Interior grid points over each arc, the per-point cell width and the owning arc index."""
    total = sum(end - start for start, end in arcs)
    points: list[FloatArray] = []
    steps: list[FloatArray] = []
    owners: list[np.ndarray] = []
    for index, (start, end) in enumerate(arcs):
        width = end - start
        count = max(3, math.ceil(THETA_GRID_POINTS * width / total))
        step = width / count
        grid = np.append(start + step * (np.arange(count) + 0.5), start + 0.5 * width)
        points.append(grid)
        steps.append(np.full(grid.size, step))
        owners.append(np.full(grid.size, index))
    return np.concatenate(points), np.concatenate(steps), np.concatenate(owners)


def optimal_theta(scn: Scenario) -> float:
    """
    Attack angle maximizing |r₁†r₀|² over the allowed directions.

    Returns θc or −θc when either is allowed. Otherwise a dense grid over the
    feasible arcs picks the best cell (ties toward θc), refined by bounded Brent
    search (golden-section steps with parabolic interpolation) inside that cell.

    Raises:
        EmptyFeasibleSetError: every direction is forbidden
    """
    theta_c = scn.claimed.theta
    intervals = scn.forbidden_angles
    for candidate in (theta_c, normalize_angle(-theta_c)):
        if not is_forbidden(candidate, intervals):
            return candidate

    arcs = feasible_arcs(intervals)
    if not arcs:
        raise EmptyFeasibleSetError("every attack angle is forbidden")

    grid, steps, owners = _arc_grid(arcs)
    values = correlation_mag_sq(theta_c, grid, scn.bs)
    best_value = float(values.max())
    ties = np.flatnonzero(values >= best_value - _TIE_TOLERANCE)
    distances = np.abs(np.remainder(grid[ties] - theta_c + math.pi, TWO_PI) - math.pi)
    index = int(ties[np.argmin(distances)])
    best = float(grid[index])
    logger.debug("angle grid of %d points, best cell at %.12f", grid.size, best)

    arc_start, arc_end = arcs[int(owners[index])]
    lo = max(best - steps[index], arc_start + _ANGLE_EDGE_TOLERANCE)
    hi = min(best + steps[index], arc_end - _ANGLE_EDGE_TOLERANCE)
    if hi > lo:
        result = minimize_scalar(
            lambda t: -correlation_mag_sq(theta_c, float(t), scn.bs),
            bounds=(lo, hi),
            method="bounded",
            options={"xatol": THETA_XATOL},
        )
        refined = normalize_angle(float(result.x))
        if (
            result.success
            and not is_forbidden(refined, intervals)
            and correlation_mag_sq(theta_c, refined, scn.bs) > best_value
        ):
            return refined
    return normalize_angle(best)


def plan_attack(scn: Scenario, theta1: float | None = None) -> AttackPlan:
    """
    Full optimal attack: θ₁*, d₁, p₁*, b₁*, N₁* and D(θ₁*).

    An attacker array smaller than N₁* is grown to N₁* elements.
    """
    theta = optimal_theta(scn) if theta1 is None else normalize_angle(theta1)
    d1 = attack_distance(scn, theta)
    n1_star = min_antennas(scn)
    grown = scn
    if scn.veh_mal.n < n1_star:
        logger.debug("growing attacker array from %d to %d elements", scn.veh_mal.n, n1_star)
        grown = scn.model_copy(update={"veh_mal": scn.veh_mal.with_elements(n1_star)})
    return AttackPlan(
        theta1_star=theta,
        d1=d1,
        p1_star=optimal_power(scn, d1),
        b1_star=optimal_beamformer(grown, d1, theta, scn.psi1),
        n1_star=n1_star,
        min_kl=min_kl_at(scn, theta),
    )
