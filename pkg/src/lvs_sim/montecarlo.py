"""
Monte Carlo validation of the closed-form detector rates.

Trials are grouped into fixed-size chunks. Chunk k under hypothesis h draws
from its own counter-based stream ``Philox(SeedSequence(seed, spawn_key=(h, k)))``,
so the tallies depend only on the seed and the chunk size, never on how many
worker threads run the chunks or in which order they finish.
"""

from __future__ import annotations

import itertools
import logging
import math
import os
import time
from collections.abc import Callable, Iterable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from typing import Any, TypeVar

import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel, ConfigDict, Field, computed_field, field_validator
from scipy.special import ndtri

from .attack import Scenario, legitimate_model, optimal_theta, plan_attack, planned_model
from .channel import draw_observations
from .detector import RatePair, lvs_view, rates_from_kl, statistic_offset, total_error
from .errors import DomainError, InvalidGridError
from .geometry import COS_TOLERANCE, FloatArray, PolarPoint, path_loss, steering_rx, steering_rx_batch
from .tracking import AttackTrack, TrackMode, Trajectory, constrained_attack_track, slot_kls, slot_scenario, slot_views

logger = logging.getLogger(__name__)

THREADS_ENV = "LVS_SIM_THREADS"
DEFAULT_TRIALS = 100_000
DEFAULT_CHUNK_SIZE = 16_384
MAX_JITTER_RETRIES = 64

HYPOTHESIS_LEGIT = 0
HYPOTHESIS_MALICIOUS = 1

# Two-sided 95% Wilson interval.
_WILSON_Z = float(ndtri(0.975))
_MIN_DISTANCE = 1e-9

IntArray = NDArray[np.int64]
Row = dict[str, Any]
Evaluator = Callable[..., Row]
E = TypeVar("E", bound=Evaluator)


class TrialConfig(BaseModel):
    """Monte Carlo settings shared by every run."""

    model_config = ConfigDict(frozen=True)

    trials: int = Field(default=DEFAULT_TRIALS, ge=1)
    seed: int = Field(default=0, ge=0, lt=2**64)
    jitter_std: float = Field(default=0.0, ge=0, allow_inf_nan=False)
    t_range: tuple[int, int] = (1, 1)
    p0_prior: float = Field(default=0.5, gt=0, lt=1)
    chunk_size: int = Field(default=DEFAULT_CHUNK_SIZE, ge=1)
    workers: int | None = Field(default=None, ge=1)

    @field_validator("t_range")
    @classmethod
    def _check_window(cls, value: tuple[int, int]) -> tuple[int, int]:
        lo, hi = value
        if lo < 1 or hi < lo:
            raise ValueError("window range must satisfy 1 ≤ t_min ≤ t_max")
        return value


class RateEstimate(BaseModel):
    """Empirical rate with its binomial standard error and 95% Wilson interval."""

    model_config = ConfigDict(frozen=True)

    count: int = Field(ge=0)
    trials: int = Field(ge=1)

    @computed_field
    @property
    def rate(self) -> float:
        return self.count / self.trials

    @computed_field
    @property
    def se(self) -> float:
        r = self.rate
        return math.sqrt(r * (1.0 - r) / self.trials)

    def _wilson(self) -> tuple[float, float]:
        n, r, z = self.trials, self.rate, _WILSON_Z
        denom = 1.0 + z * z / n
        centre = (r + z * z / (2 * n)) / denom
        half = z * math.sqrt(r * (1.0 - r) / n + z * z / (4 * n * n)) / denom
        return max(0.0, centre - half), min(1.0, centre + half)

    @computed_field
    @property
    def wilson_low(self) -> float:
        return self._wilson()[0]

    @computed_field
    @property
    def wilson_high(self) -> float:
        return self._wilson()[1]


class EmpiricalReport(BaseModel):
    """Empirical and analytic rates for one threshold; ``runtime_ms`` is left out of dumps."""

    model_config = ConfigDict(frozen=True)

    alpha_hat: RateEstimate
    beta_hat: RateEstimate
    analytic: RatePair
    total_error_hat: float
    total_error_analytic: float
    total_error_se: float
    runtime_ms: float = Field(default=0.0, exclude=True)


class SweepGrid(BaseModel):
    """Named axes; points are visited in the Cartesian-product order of the axes as given."""

    model_config = ConfigDict(frozen=True)

    axes: dict[str, list[Any]]

    def points(self) -> Iterable[dict[str, Any]]:
        names = list(self.axes)
        for values in itertools.product(*(self.axes[name] for name in names)):
            yield dict(zip(names, values))

    def __len__(self) -> int:
        return math.prod(len(values) for values in self.axes.values())


EVALUATORS: dict[str, Evaluator] = {}


def register_evaluator(name: str) -> Callable[[E], E]:
    """Register a sweep evaluator under ``name``."""

    def decorator(func: E) -> E:
        EVALUATORS[name] = func
        return func

    return decorator


# =============================================================================
# Streams and workers
# =============================================================================


def stream(seed: int, hypothesis: int, chunk: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(hypothesis, chunk))))


def worker_count(requested: int | None = None) -> int:
    """Worker threads to use: the request (or CPU count) capped by ``LVS_SIM_THREADS``."""
    workers = requested or os.cpu_count() or 1
    raw = os.environ.get(THREADS_ENV)
    if raw:
        try:
            cap = int(raw)
            if cap < 1:
                raise ValueError(raw)
        except ValueError:
            logger.warning("ignoring invalid %s=%r", THREADS_ENV, raw)
        else:
            workers = min(workers, cap)
    return workers


def _chunks(trials: int, chunk_size: int) -> list[tuple[int, int]]:
    full, rest = divmod(trials, chunk_size)
    sizes = [chunk_size] * full + ([rest] if rest else [])
    return list(enumerate(sizes))


def _tally(count_chunk: Callable[[int, int], IntArray], cfg: TrialConfig) -> IntArray:
    """Sum per-chunk count vectors; the sum is independent of scheduling."""
    chunks = _chunks(cfg.trials, cfg.chunk_size)
    workers = min(worker_count(cfg.workers), len(chunks))
    logger.debug("%d trials in %d chunks on %d workers", cfg.trials, len(chunks), workers)
    if workers == 1:
        results = [count_chunk(index, size) for index, size in chunks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda chunk: count_chunk(*chunk), chunks))
    return np.sum(results, axis=0, dtype=np.int64)


def _count_at_least(z: FloatArray, log_lams: FloatArray) -> IntArray:
    """Number of entries of ``z`` that are ≥ each threshold."""
    ordered = np.sort(z)
    return (z.size - np.searchsorted(ordered, log_lams, side="left")).astype(np.int64)


# =============================================================================
# Jitter
# =============================================================================


def jitter_std_for_mean_error(mean_error: float) -> float:
    """Jitter std whose Rayleigh mean displacement equals ``mean_error`` (2·mean/√π)."""
    if mean_error < 0:
        raise DomainError("mean localization error must be non-negative")
    return 2.0 * mean_error / math.sqrt(math.pi)


def _jitter_batch(
    claimed: PolarPoint,
    jitter_std: float,
    rng: np.random.Generator,
    size: int,
) -> tuple[FloatArray, FloatArray]:
    """Jittered (d, θ) arrays; draws landing on the BS are redrawn."""
    cx, cy = claimed.to_cartesian()
    sigma = jitter_std / math.sqrt(2.0)
    xs = cx + sigma * rng.standard_normal(size)
    ys = cy + sigma * rng.standard_normal(size)
    for _ in range(MAX_JITTER_RETRIES):
        bad = np.flatnonzero(np.hypot(xs, ys) <= _MIN_DISTANCE)
        if bad.size == 0:
            return np.hypot(xs, ys), np.arctan2(ys, xs)
        xs[bad] = cx + sigma * rng.standard_normal(bad.size)
        ys[bad] = cy + sigma * rng.standard_normal(bad.size)
    raise DomainError("jittered claims keep landing on the base station")


def apply_jitter(claimed: PolarPoint, jitter_std: float, rng: np.random.Generator) -> PolarPoint:
    """
    Add a 2-D Gaussian displacement with per-axis std ``jitter_std``/√2.

    ``jitter_std`` = 0 returns ``claimed`` unchanged.
    """
    if jitter_std < 0:
        raise DomainError("jitter std must be non-negative")
    if jitter_std == 0:
        return claimed
    d, theta = _jitter_batch(claimed, jitter_std, rng, 1)
    return PolarPoint(d=float(d[0]), theta=float(theta[0]))


def _jittered_statistics(
    scn: Scenario,
    theta1: float,
    d: FloatArray,
    theta: FloatArray,
    Y: NDArray[np.complex128],
) -> FloatArray:
    """
    𝕋 − offset per trial when the LVS builds its view from jittered claims.

    Each row of ``Y`` is judged against (m₀, m₁*, cov₀) recomputed at its own
    (d, θ); the attacker angle θ₁ stays fixed.
    """
    chan = scn.legit_chan
    gain = path_loss(d, chan.path) * chan.tx_power
    amplitude = np.sqrt(gain * chan.los_fraction * scn.veh_legit.n)
    cov = gain * chan.diffuse_fraction + chan.noise_var
    m0 = amplitude[:, np.newaxis] * steering_rx_batch(theta, scn.bs)
    r1 = steering_rx(theta1, scn.bs)
    m1 = (m0 @ r1.conj())[:, np.newaxis] * r1 / scn.bs.n
    same = np.abs(np.cos(theta) - math.cos(theta1)) <= COS_TOLERANCE
    m1[same] = m0[same]
    delta_conj = (m1 - m0).conj()
    statistic = 2.0 * np.real(np.sum(delta_conj * Y, axis=-1)) / cov
    offset = np.real(np.sum(delta_conj * (m1 + m0), axis=-1)) / cov
    return statistic - offset


# =============================================================================
# Reports
# =============================================================================


def _report(
    alpha_count: int,
    beta_count: int,
    analytic: RatePair,
    cfg: TrialConfig,
    runtime_ms: float,
) -> EmpiricalReport:
    alpha = RateEstimate(count=alpha_count, trials=cfg.trials)
    beta = RateEstimate(count=beta_count, trials=cfg.trials)
    p0 = cfg.p0_prior
    return EmpiricalReport(
        alpha_hat=alpha,
        beta_hat=beta,
        analytic=analytic,
        total_error_hat=total_error(RatePair(alpha=alpha.rate, beta=beta.rate), p0),
        total_error_analytic=total_error(analytic, p0),
        total_error_se=math.hypot(p0 * alpha.se, (1.0 - p0) * beta.se),
        runtime_ms=runtime_ms,
    )


def _log_thresholds(lambdas: Sequence[float]) -> FloatArray:
    values = np.asarray(lambdas, dtype=np.float64)
    if values.size == 0 or np.any(values <= 0):
        raise DomainError("thresholds must be a non-empty list of positive values")
    return np.log(values)


# =============================================================================
# Single-slot runs
# =============================================================================


def run_roc(
    scn: Scenario,
    theta1: float | None,
    lambdas: Sequence[float],
    cfg: TrialConfig,
) -> list[EmpiricalReport]:
    """
    Empirical rates at every λ from one set of simulated statistics per hypothesis.

    Under H₁ the attacker transmits with its optimal plan at θ₁ (θ₁* when
    None); under H₀ the legitimate vehicle transmits from the claimed point.
    With jitter the LVS judges each H₀ trial against a view built from a
    jittered claim.
    """
    start = time.perf_counter()
    log_lams = _log_thresholds(lambdas)
    theta = optimal_theta(scn) if theta1 is None else theta1
    plan = plan_attack(scn, theta)
    view = lvs_view(scn, theta)
    offset = statistic_offset(view.m0, view.m1, view.cov0)
    delta_conj = (view.m1 - view.m0).conj()
    model0 = legitimate_model(scn)
    model1 = planned_model(scn, plan)

    def statistics(Y: NDArray[np.complex128]) -> FloatArray:
        return 2.0 * np.real(Y @ delta_conj) / view.cov0 - offset

    def count_legit(chunk: int, size: int) -> IntArray:
        rng = stream(cfg.seed, HYPOTHESIS_LEGIT, chunk)
        if cfg.jitter_std > 0:
            d, th = _jitter_batch(scn.claimed, cfg.jitter_std, rng, size)
            Y = draw_observations(model0.mean, model0.cov_scalar, rng, size)
            return _count_at_least(_jittered_statistics(scn, theta, d, th, Y), log_lams)
        return _count_at_least(statistics(draw_observations(model0.mean, model0.cov_scalar, rng, size)), log_lams)

    def count_malicious(chunk: int, size: int) -> IntArray:
        rng = stream(cfg.seed, HYPOTHESIS_MALICIOUS, chunk)
        return _count_at_least(statistics(draw_observations(model1.mean, model1.cov_scalar, rng, size)), log_lams)

    alpha_counts = _tally(count_legit, cfg)
    beta_counts = _tally(count_malicious, cfg)
    runtime_ms = (time.perf_counter() - start) * 1e3
    logger.info("ROC over %d thresholds at %d trials in %.1f ms", log_lams.size, cfg.trials, runtime_ms)
    return [
        _report(int(a), int(b), rates_from_kl(plan.min_kl, float(lam)), cfg, runtime_ms)
        for a, b, lam in zip(alpha_counts, beta_counts, lambdas)
    ]


def run_single_slot(scn: Scenario, theta1: float | None, lam: float, cfg: TrialConfig) -> EmpiricalReport:
    return run_roc(scn, theta1, [lam], cfg)[0]


# =============================================================================
# Tracking runs
# =============================================================================


def tracking_analytic(kls: Sequence[float], t_range: tuple[int, int], lam_track: float) -> RatePair:
    """Closed-form rates averaged over a window length drawn uniformly from ``t_range``."""
    lo, hi = t_range
    if hi > len(kls):
        raise DomainError(f"window of {hi} slots exceeds the {len(kls)} per-slot divergences")
    pairs = [rates_from_kl(math.fsum(kls[:t]), lam_track) for t in range(lo, hi + 1)]
    count = len(pairs)
    return RatePair(
        alpha=math.fsum(p.alpha for p in pairs) / count,
        beta=math.fsum(p.beta for p in pairs) / count,
    )


def run_tracking(
    traj: Trajectory,
    scn: Scenario,
    r_u: float,
    mode: TrackMode,
    lam_track: float,
    cfg: TrialConfig,
    track: AttackTrack | None = None,
) -> EmpiricalReport:
    """
    Empirical tracking-LVS rates with a random decision window.

    Each trial draws T uniformly from ``cfg.t_range``, simulates the first T
    slots and compares the accumulated statistic against ln λ_track.
    """
    start = time.perf_counter()
    lo, hi = cfg.t_range
    if hi > len(traj):
        raise DomainError(f"window of {hi} slots exceeds the {len(traj)}-slot trajectory")
    if lam_track <= 0:
        raise DomainError("λ must be positive")
    attack = constrained_attack_track(traj, scn, r_u, mode) if track is None else track
    attack = attack.prefix(hi)
    slots = traj.slots[:hi]
    window = Trajectory(slots=slots, dt=traj.dt, speed=traj.speed)
    views = slot_views(attack, window, scn)
    offsets = [statistic_offset(v.m0, v.m1, v.cov0) for v in views]
    deltas = [(v.m1 - v.m0).conj() for v in views]
    models1 = [
        planned_model(slot_scenario(scn, slot, point.position.d), point.plan)
        for slot, point in zip(slots, attack.points)
    ]
    log_lam = np.array([math.log(lam_track)])

    def accumulate(per_slot: list[FloatArray], windows: IntArray) -> FloatArray:
        cumulative = np.cumsum(np.column_stack(per_slot), axis=1)
        return cumulative[np.arange(windows.size), windows - 1]

    def count_legit(chunk: int, size: int) -> IntArray:
        rng = stream(cfg.seed, HYPOTHESIS_LEGIT, chunk)
        windows = rng.integers(lo, hi + 1, size=size)
        per_slot: list[FloatArray] = []
        for slot, point, view, delta, offset in zip(slots, attack.points, views, deltas, offsets):
            if cfg.jitter_std > 0:
                d, th = _jitter_batch(slot.claimed, cfg.jitter_std, rng, size)
                Y = draw_observations(view.m0, view.cov0, rng, size)
                per_slot.append(_jittered_statistics(slot_scenario(scn, slot), point.position.theta, d, th, Y))
            else:
                Y = draw_observations(view.m0, view.cov0, rng, size)
                per_slot.append(2.0 * np.real(Y @ delta) / view.cov0 - offset)
        return _count_at_least(accumulate(per_slot, windows), log_lam)

    def count_malicious(chunk: int, size: int) -> IntArray:
        rng = stream(cfg.seed, HYPOTHESIS_MALICIOUS, chunk)
        windows = rng.integers(lo, hi + 1, size=size)
        per_slot = [
            2.0 * np.real(draw_observations(model.mean, model.cov_scalar, rng, size) @ delta) / view.cov0 - offset
            for model, view, delta, offset in zip(models1, views, deltas, offsets)
        ]
        return _count_at_least(accumulate(per_slot, windows), log_lam)

    alpha_count = int(_tally(count_legit, cfg)[0])
    beta_count = int(_tally(count_malicious, cfg)[0])
    analytic = tracking_analytic(slot_kls(attack, window, scn), cfg.t_range, lam_track)
    runtime_ms = (time.perf_counter() - start) * 1e3
    logger.info("tracking window %s at %d trials in %.1f ms", cfg.t_range, cfg.trials, runtime_ms)
    return _report(alpha_count, beta_count, analytic, cfg, runtime_ms)


# =============================================================================
# Sweeps
# =============================================================================


def sweep(grid: SweepGrid | Mapping[str, Sequence[Any]], evaluator: str | Evaluator, **context: Any) -> list[Row]:
    """
    Evaluate every grid point; one row per point, in axis-product order.

    Args:
        grid: Named axes, each a non-empty list of values
        evaluator: A callable or the name of a registered evaluator
        **context: Passed through to the evaluator

    Returns:
        Rows, each the evaluator's mapping for one point

    Raises:
        InvalidGridError: empty grid, empty axis or unknown evaluator name
    """
    if not isinstance(grid, SweepGrid):
        grid = SweepGrid(axes={name: list(values) for name, values in grid.items()})
    if not grid.axes:
        raise InvalidGridError("sweep grid has no axes")
    empty = [name for name, values in grid.axes.items() if not values]
    if empty:
        raise InvalidGridError(f"sweep axes have no values: {', '.join(empty)}")
    if isinstance(evaluator, str):
        try:
            func = EVALUATORS[evaluator]
        except KeyError:
            raise InvalidGridError(f"unknown evaluator {evaluator!r}") from None
    else:
        func = evaluator
    rows = [func(point, **context) for point in grid.points()]
    logger.debug("sweep produced %d rows", len(rows))
    return rows
