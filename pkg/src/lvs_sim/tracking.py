"""
Tracking LVS: a claimed trajectory observed over T consecutive slots.

Slots are independent given the claims, so the joint LRT is a product of
per-slot likelihood ratios: statistics, thresholds and KL divergences all
add up over the window. The attacker follows the claim greedily, slot by
slot, staying at least r_l away from each claimed point and moving at most
r_u between slots.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from enum import Enum

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, Field, model_validator
from typing_extensions import Self

from .attack import AttackPlan, Scenario, attack_distance, forbidden_mask, min_kl_at, optimal_theta, plan_attack
from .channel import ChannelParams
from .detector import Decision, LvsView, RatePair, lvs_view, rates_from_kl, statistic_offset, test_statistic
from .errors import DimensionMismatchError, DomainError, InfeasibleSlotError
from .geometry import FloatArray, PolarPoint, correlation_mag_sq, normalize_angle

logger = logging.getLogger(__name__)

SPACING_TOLERANCE = 1e-9
CONSTRAINT_TOLERANCE = 1e-9

# On-road search: slot 1 scans this far past r_l on both sides of the claim.
ON_ROAD_MARGIN = 1000.0
ON_ROAD_FIRST_POINTS = 200_001
ON_ROAD_STEP_POINTS = 2_001
# Free-mode search around the previous position.
FREE_RADII = 40
FREE_BEARINGS = 360
FREE_RAY_POINTS = 21
_TIE_TOLERANCE = 1e-12


class TrackMode(str, Enum):
    ON_ROAD = "on-road"
    FREE = "free"


class TrackSlot(BaseModel):
    model_config = ConfigDict(frozen=True)

    claimed: PolarPoint
    legit_chan: ChannelParams


class Trajectory(BaseModel):
    """Claimed positions of a vehicle moving in a straight line at constant speed."""

    model_config = ConfigDict(frozen=True)

    slots: tuple[TrackSlot, ...] = Field(min_length=1)
    dt: float = Field(gt=0)
    speed: float = Field(ge=0)

    @model_validator(mode="after")
    def _check_spacing(self) -> Self:
        step = self.speed * self.dt
        for index, (a, b) in enumerate(zip(self.slots, self.slots[1:]), start=2):
            gap = a.claimed.distance_to(b.claimed)
            if abs(gap - step) > SPACING_TOLERANCE:
                raise ValueError(f"slot {index} is {gap!r} m from slot {index - 1}, expected {step!r} m")
        return self

    def __len__(self) -> int:
        return len(self.slots)

    def heading(self) -> tuple[float, float]:
        """Unit direction of travel; radial toward the BS for a stationary claim."""
        x, y = self.slots[0].claimed.to_cartesian()
        if len(self.slots) > 1 and self.speed > 0:
            x2, y2 = self.slots[1].claimed.to_cartesian()
            norm = math.hypot(x2 - x, y2 - y)
            return (x2 - x) / norm, (y2 - y) / norm
        norm = math.hypot(x, y)
        return -x / norm, -y / norm


class AttackSlot(BaseModel):
    model_config = ConfigDict(frozen=True)

    position: PolarPoint
    plan: AttackPlan


class AttackTrack(BaseModel):
    """Attacker positions and plans, one per slot, moving at most r_u between slots."""

    model_config = ConfigDict(frozen=True)

    points: tuple[AttackSlot, ...] = Field(min_length=1)
    r_u: float = Field(ge=0)

    @model_validator(mode="after")
    def _check_moves(self) -> Self:
        for index, (a, b) in enumerate(zip(self.points, self.points[1:]), start=2):
            move = a.position.distance_to(b.position)
            if move > self.r_u + CONSTRAINT_TOLERANCE:
                raise ValueError(f"slot {index} moves {move!r} m, more than r_u = {self.r_u!r} m")
        return self

    def __len__(self) -> int:
        return len(self.points)

    def prefix(self, length: int) -> AttackTrack:
        return self.model_copy(update={"points": self.points[:length]})


def make_trajectory(
    start: PolarPoint,
    speed: float,
    dt: float,
    slots: int,
    legit_chan: ChannelParams,
    k_map: Sequence[float] | None = None,
) -> Trajectory:
    """
    Radial approach toward the BS at constant speed.

    Slot t sits at d(1) − (t−1)·speed·dt on the bearing of ``start``. ``k_map``
    optionally gives the legitimate K-factor slot by slot.

    Raises:
        DomainError: the path reaches the BS within ``slots`` slots
    """
    if slots < 1:
        raise DomainError("a trajectory needs at least one slot")
    if k_map is not None and len(k_map) != slots:
        raise DimensionMismatchError(f"K-map has {len(k_map)} entries for {slots} slots")
    final = start.d - (slots - 1) * speed * dt
    if final <= 0:
        raise DomainError(f"the claimed path reaches the base station before slot {slots}")
    track: list[TrackSlot] = []
    for t in range(slots):
        chan = legit_chan if k_map is None else legit_chan.model_copy(update={"k_factor": float(k_map[t])})
        claimed = PolarPoint(d=start.d - t * speed * dt, theta=start.theta)
        track.append(TrackSlot(claimed=claimed, legit_chan=chan))
    return Trajectory(slots=tuple(track), dt=dt, speed=speed)


def slot_scenario(scn: Scenario, slot: TrackSlot, mal_distance: float | None = None) -> Scenario:
    """The single-slot scenario seen at one point of the trajectory."""
    return scn.model_copy(
        update={"claimed": slot.claimed, "legit_chan": slot.legit_chan, "mal_distance": mal_distance}
    )


# =============================================================================
# Constrained attack sequence
# =============================================================================


def _to_polar(x: FloatArray, y: FloatArray) -> tuple[FloatArray, FloatArray]:
    return np.hypot(x, y), np.arctan2(y, x)


def _pick(
    xs: FloatArray,
    ys: FloatArray,
    scn: Scenario,
    claimed: PolarPoint,
    secondary: FloatArray,
) -> int | None:
    """
    Index of the admissible candidate with the largest steering correlation.

    Ties go to the smallest angular distance from θc, then to the smallest
    ``secondary`` value.
    """
    d, theta = _to_polar(xs, ys)
    cx, cy = claimed.to_cartesian()
    admissible = (d > CONSTRAINT_TOLERANCE) & ~forbidden_mask(theta, scn.forbidden_angles)
    admissible &= np.hypot(xs - cx, ys - cy) >= scn.r_l - CONSTRAINT_TOLERANCE
    candidates = np.flatnonzero(admissible)
    if candidates.size == 0:
        return None
    values = correlation_mag_sq(claimed.theta, theta[candidates], scn.bs)
    ties = candidates[values >= values.max() - _TIE_TOLERANCE]
    off_angle = np.abs(np.remainder(theta[ties] - claimed.theta + math.pi, 2.0 * math.pi) - math.pi)
    order = np.lexsort((secondary[ties], off_angle))
    return int(ties[order[0]])


def _on_road_positions(
    traj: Trajectory,
    scn: Scenario,
    r_u: float,
) -> list[PolarPoint]:
    x0, y0 = traj.slots[0].claimed.to_cartesian()
    ux, uy = traj.heading()
    step = traj.speed * traj.dt
    positions: list[PolarPoint] = []
    s_prev: float | None = None
    for t, slot in enumerate(traj.slots, start=1):
        s_c = (t - 1) * step
        if s_prev is None:
            reach = scn.r_l + ON_ROAD_MARGIN
            grid = np.linspace(s_c - reach, s_c + reach, ON_ROAD_FIRST_POINTS)
            extra = [s_c - scn.r_l, s_c + scn.r_l]
        else:
            grid = np.linspace(s_prev - r_u, s_prev + r_u, ON_ROAD_STEP_POINTS)
            extra = [s_c - scn.r_l, s_c + scn.r_l, s_prev - r_u, s_prev + r_u, s_prev]
        s = np.concatenate([grid, extra])
        if s_prev is not None:
            s = s[np.abs(s - s_prev) <= r_u + CONSTRAINT_TOLERANCE]
        xs, ys = x0 + s * ux, y0 + s * uy
        index = _pick(xs, ys, scn, slot.claimed, np.abs(s - s_c))
        if index is None:
            raise InfeasibleSlotError(t, "no on-road position satisfies the distance and angle constraints")
        s_prev = float(s[index])
        d, theta = math.hypot(xs[index], ys[index]), math.atan2(ys[index], xs[index])
        positions.append(PolarPoint(d=d, theta=theta))
        logger.debug("slot %d: on-road attacker at s=%.6f (d=%.6f, theta=%.6f)", t, s_prev, d, theta)
    return positions


def _free_candidates(prev: PolarPoint, theta_c: float, r_u: float) -> tuple[FloatArray, FloatArray]:
    px, py = prev.to_cartesian()
    radii = np.linspace(0.0, r_u, FREE_RADII + 1)[1:]
    bearings = np.linspace(-math.pi, math.pi, FREE_BEARINGS, endpoint=False)
    xs = [np.array([px]), (px + np.multiply.outer(radii, np.cos(bearings))).ravel()]
    ys = [np.array([py]), (py + np.multiply.outer(radii, np.sin(bearings))).ravel()]
    # Points on the rays ±θc that lie inside the r_u disk.
    for bearing in {normalize_angle(theta_c), normalize_angle(-theta_c)}:
        ux, uy = math.cos(bearing), math.sin(bearing)
        along = px * ux + py * uy
        across_sq = px * px + py * py - along * along
        if across_sq > r_u * r_u:
            continue
        half = math.sqrt(r_u * r_u - across_sq)
        rho = np.linspace(max(along - half, 0.0), along + half, FREE_RAY_POINTS)
        rho = rho[rho > 0.0]
        xs.append(rho * ux)
        ys.append(rho * uy)
    return np.concatenate(xs), np.concatenate(ys)


def _free_positions(traj: Trajectory, scn: Scenario, r_u: float) -> list[PolarPoint]:
    first = slot_scenario(scn, traj.slots[0])
    theta1 = optimal_theta(first)
    positions = [PolarPoint(d=attack_distance(first, theta1), theta=theta1)]
    for t, slot in enumerate(traj.slots[1:], start=2):
        prev = positions[-1]
        xs, ys = _free_candidates(prev, slot.claimed.theta, r_u)
        px, py = prev.to_cartesian()
        index = _pick(xs, ys, scn, slot.claimed, np.hypot(xs - px, ys - py))
        if index is None:
            raise InfeasibleSlotError(t, "no position within r_u of the previous one satisfies the constraints")
        positions.append(PolarPoint.from_cartesian(float(xs[index]), float(ys[index])))
        logger.debug("slot %d: free attacker at %s", t, positions[-1])
    return positions


def constrained_attack_track(
    traj: Trajectory,
    scn: Scenario,
    r_u: float,
    mode: TrackMode = TrackMode.ON_ROAD,
) -> AttackTrack:
    """
    Greedy slot-by-slot attack maximizing |r₁†r₀|² under the r_l and r_u constraints.

    Args:
        traj: Claimed trajectory
        scn: Scenario supplying arrays, channels, r_l and forbidden angles
        r_u: Maximum attacker displacement between consecutive slots
        mode: ``on-road`` confines the attacker to the trajectory's line

    Returns:
        AttackTrack with one optimal plan per slot

    Raises:
        InfeasibleSlotError: some slot has no admissible position
    """
    if r_u < 0:
        raise DomainError("r_u must be non-negative")
    if TrackMode(mode) is TrackMode.ON_ROAD:
        positions = _on_road_positions(traj, scn, r_u)
    else:
        positions = _free_positions(traj, scn, r_u)
    points = tuple(
        AttackSlot(position=pos, plan=plan_attack(slot_scenario(scn, slot, pos.d), pos.theta))
        for pos, slot in zip(positions, traj.slots)
    )
    return AttackTrack(points=points, r_u=r_u)


# =============================================================================
# Tracking detector
# =============================================================================


def _check_lengths(*lengths: int) -> None:
    if len(set(lengths)) != 1:
        raise DimensionMismatchError(f"per-slot inputs have different lengths: {lengths}")


def slot_kls(track: AttackTrack, traj: Trajectory, scn: Scenario) -> list[float]:
    _check_lengths(len(track), len(traj))
    return [
        min_kl_at(slot_scenario(scn, slot), point.position.theta)
        for point, slot in zip(track.points, traj.slots)
    ]


def track_kl(track: AttackTrack, traj: Trajectory, scn: Scenario) -> float:
    """D_track = Σₜ D(θ₁(t)) evaluated with each slot's claim and channel."""
    return math.fsum(slot_kls(track, traj, scn))


def tracking_rates(track_kl_value: float, lam_track: float) -> RatePair:
    return rates_from_kl(track_kl_value, lam_track)


def slot_views(track: AttackTrack, traj: Trajectory, scn: Scenario) -> list[LvsView]:
    """The LVS's (m₀(t), m₁*(t), cov₀(t)) for every slot."""
    _check_lengths(len(track), len(traj))
    return [lvs_view(slot_scenario(scn, slot), point.position.theta) for point, slot in zip(track.points, traj.slots)]


def tracking_test_statistic(
    Y: Sequence[ArrayLike],
    means0: Sequence[ArrayLike],
    means1: Sequence[ArrayLike],
    covs: Sequence[float],
) -> float:
    """𝕋_track = Σₜ 2Re{(m₁*(t) − m₀(t))†y(t)}/cov₀(t)."""
    _check_lengths(len(Y), len(means0), len(means1), len(covs))
    return math.fsum(float(test_statistic(y, m0, m1, c)) for y, m0, m1, c in zip(Y, means0, means1, covs))


def tracking_threshold(
    lam_track: float,
    means0: Sequence[ArrayLike],
    means1: Sequence[ArrayLike],
    covs: Sequence[float],
) -> float:
    """Γ_track = ln λ + Σₜ Re{(m₁*(t) − m₀(t))†(m₁*(t) + m₀(t))}/cov₀(t)."""
    _check_lengths(len(means0), len(means1), len(covs))
    if lam_track <= 0:
        raise DomainError("λ must be positive")
    return math.log(lam_track) + math.fsum(statistic_offset(m0, m1, c) for m0, m1, c in zip(means0, means1, covs))


def tracking_decide(
    Y: Sequence[ArrayLike],
    means0: Sequence[ArrayLike],
    means1: Sequence[ArrayLike],
    covs: Sequence[float],
    lam_track: float,
) -> Decision:
    """Malicious iff 𝕋_track ≥ Γ_track."""
    statistic = tracking_test_statistic(Y, means0, means1, covs)
    threshold = tracking_threshold(lam_track, means0, means1, covs)
    return Decision.MALICIOUS if statistic >= threshold else Decision.LEGITIMATE
