"""
Named experiments and CSV output.

Each experiment turns a Scenario plus an ExperimentConfig into a Table:
sweep axes are walked in Cartesian-product order by
:func:`lvs_sim.montecarlo.sweep` with one registered evaluator per
experiment, so the rows (and the CSV bytes) depend only on the config and
the seed.
"""

from __future__ import annotations

import csv
import logging
import math
import sys
import time
from collections.abc import Callable, Sequence
from typing import IO, Any

import numpy as np
from pydantic import BaseModel, ConfigDict

from .attack import (
    Scenario,
    attack_distance,
    min_antennas,
    min_kl_at,
    optimal_power,
    optimal_theta,
)
from .config import ExperimentConfig, ExperimentName
from .detector import KL_FLOOR, RatePair, bayes_threshold, neyman_pearson_threshold, rates_from_kl, total_error
from .errors import EXIT_OK, InfeasibleAttackError, UnboundedAntennasError
from .geometry import correlation_mag_sq, path_loss
from .montecarlo import EmpiricalReport, Row, register_evaluator, run_roc, run_tracking, sweep, tracking_analytic
from .tracking import constrained_attack_track, make_trajectory, slot_kls

logger = logging.getLogger(__name__)

Cell = float | int | str | bool | None

DEFAULT_THETA_POINTS = 201
CORRELATION_THETA_POINTS = 1001

COLUMNS: dict[ExperimentName, tuple[str, ...]] = {
    ExperimentName.ROC: (
        "snr_db",
        "theta1_pi",
        "lambda",
        "kl",
        "alpha_analytic",
        "beta_analytic",
        "alpha_mc",
        "beta_mc",
        "alpha_se",
        "beta_se",
    ),
    ExperimentName.KL_MAP: ("k0_db", "theta1_pi", "corr_mag_sq", "min_kl", "alpha", "beta", "total_error"),
    ExperimentName.TOTAL_ERROR_GRID: (
        "n_b",
        "n_0",
        "k0_db",
        "theta1_pi",
        "min_kl",
        "alpha",
        "beta",
        "total_error",
        "n1_star",
    ),
    ExperimentName.MIN_ANTENNAS_GRID: ("k1_db", "noise1_db", "n1_star", "p1_star", "status"),
    ExperimentName.TRACK: (
        "t_min",
        "t_max",
        "d_track",
        "alpha_analytic",
        "beta_analytic",
        "total_error_analytic",
        "alpha_mc",
        "beta_mc",
        "alpha_se",
        "beta_se",
        "total_error_mc",
        "alpha_mc_jitter",
        "alpha_jitter_change",
    ),
    ExperimentName.CORRELATION: ("n_b", "theta1_pi", "corr_mag_sq", "kl_shape"),
}


class Table(BaseModel):
    """Experiment output: a header and rows of plain cells."""

    model_config = ConfigDict(frozen=True)

    columns: tuple[str, ...]
    rows: tuple[tuple[Cell, ...], ...]

    @classmethod
    def from_rows(cls, columns: Sequence[str], rows: Sequence[Row]) -> Table:
        """Order each row's values by ``columns``; absent keys become empty cells."""
        return cls(columns=tuple(columns), rows=tuple(tuple(row.get(name) for name in columns) for row in rows))

    def column(self, name: str) -> list[Cell]:
        index = self.columns.index(name)
        return [row[index] for row in self.rows]


# =============================================================================
# Scenario variants
# =============================================================================


def db_to_linear(value_db: float) -> float:
    return 10.0 ** (value_db / 10.0)


def linear_to_db(value: float) -> float | None:
    return 10.0 * math.log10(value) if value > 0 else None


def snr_of(scn: Scenario) -> float:
    """p₀g(d₀)/σ₀² at the claimed location."""
    chan = scn.legit_chan
    return chan.tx_power * path_loss(scn.claimed.d, chan.path) / chan.noise_var


def with_snr(scn: Scenario, snr: float) -> Scenario:
    chan = scn.legit_chan
    power = snr * chan.noise_var / path_loss(scn.claimed.d, chan.path)
    return scn.model_copy(update={"legit_chan": chan.with_power(power)})


def with_k0(scn: Scenario, k0: float) -> Scenario:
    return scn.model_copy(update={"legit_chan": scn.legit_chan.model_copy(update={"k_factor": k0})})


def with_k1(scn: Scenario, k1: float) -> Scenario:
    return scn.model_copy(update={"mal_chan": scn.mal_chan.model_copy(update={"k_factor": k1})})


def with_noise1(scn: Scenario, noise: float) -> Scenario:
    return scn.model_copy(update={"mal_chan": scn.mal_chan.model_copy(update={"noise_var": noise})})


def with_arrays(scn: Scenario, n_b: int | None = None, n_0: int | None = None) -> Scenario:
    update: dict[str, Any] = {}
    if n_b is not None:
        update["bs"] = scn.bs.with_elements(n_b)
    if n_0 is not None:
        update["veh_legit"] = scn.veh_legit.with_elements(n_0)
    return scn.model_copy(update=update)


# =============================================================================
# Axes and thresholds
# =============================================================================


def theta_axis(cfg: ExperimentConfig, grid_points: int | None = None) -> list[float | None]:
    """
    θ₁/π values to visit.

    ``[sweep] theta1_pi`` wins, then ``[attack] theta1``. Otherwise a uniform
    grid on [0, 1] when ``grid_points`` is given, else ``None`` for θ₁*.
    """
    if cfg.sweep.theta1_pi is not None:
        return list(cfg.sweep.theta1_pi)
    if cfg.theta1 is not None:
        return [cfg.theta1 / math.pi]
    if grid_points is None:
        return [None]
    points = cfg.sweep.theta1_points or grid_points
    return [float(value) for value in np.linspace(0.0, 1.0, points)]


def lambda_axis(cfg: ExperimentConfig) -> list[float]:
    if cfg.sweep.lambdas is not None:
        return list(cfg.sweep.lambdas)
    values = np.geomspace(cfg.sweep.lambda_min, cfg.sweep.lambda_max, cfg.sweep.lambda_points)
    return [float(value) for value in values]


def detector_threshold(cfg: ExperimentConfig, kl: float, lam: float | None = None) -> float:
    """
    Threshold for one operating point: explicit λ, then Neyman–Pearson, then λ*.

    A Neyman–Pearson target cannot be met when D is below the degeneracy
    floor; λ* is used there.
    """
    det = cfg.detector
    explicit = lam if lam is not None else det.lam
    if explicit is not None:
        return explicit
    if det.alpha_target is not None and kl >= KL_FLOOR:
        return neyman_pearson_threshold(kl, det.alpha_target)
    return bayes_threshold(det.p0_prior)


def _resolve_theta(scn: Scenario, theta1_pi: float | None) -> float:
    return optimal_theta(scn) if theta1_pi is None else theta1_pi * math.pi


def _rates_row(rates: RatePair, p0_prior: float) -> Row:
    return {"alpha": rates.alpha, "beta": rates.beta, "total_error": total_error(rates, p0_prior)}


def _mc_row(report: EmpiricalReport) -> Row:
    return {
        "alpha_mc": report.alpha_hat.rate,
        "beta_mc": report.beta_hat.rate,
        "alpha_se": report.alpha_hat.se,
        "beta_se": report.beta_hat.se,
    }


# =============================================================================
# Evaluators
# =============================================================================


@register_evaluator(ExperimentName.ROC.value)
def roc_point(
    point: Row,
    *,
    scn: Scenario,
    cfg: ExperimentConfig,
    lambdas: Sequence[float],
    cache: dict[tuple[Any, ...], list[EmpiricalReport]],
) -> Row:
    """One ROC point; Monte Carlo runs once per (SNR, θ₁) curve and is shared by its thresholds."""
    snr_db = point["snr_db"]
    variant = scn if snr_db is None else with_snr(scn, db_to_linear(snr_db))
    theta = _resolve_theta(variant, point["theta1_pi"])
    kl = min_kl_at(variant, theta)
    lam = lambdas[point["lambda_index"]]
    rates = rates_from_kl(kl, lam)
    row: Row = {
        "snr_db": linear_to_db(snr_of(variant)) if snr_db is None else snr_db,
        "theta1_pi": theta / math.pi,
        "lambda": lam,
        "kl": kl,
        "alpha_analytic": rates.alpha,
        "beta_analytic": rates.beta,
    }
    trial = cfg.trial_config(jitter_std=cfg.montecarlo.effective_jitter_std)
    if trial is not None:
        key = (snr_db, point["theta1_pi"])
        if key not in cache:
            cache[key] = run_roc(variant, theta, lambdas, trial)
        row.update(_mc_row(cache[key][point["lambda_index"]]))
    return row


@register_evaluator(ExperimentName.KL_MAP.value)
def kl_map_point(point: Row, *, scn: Scenario, cfg: ExperimentConfig) -> Row:
    k0_db = point["k0_db"]
    variant = scn if k0_db is None else with_k0(scn, db_to_linear(k0_db))
    theta = _resolve_theta(variant, point["theta1_pi"])
    kl = min_kl_at(variant, theta)
    return {
        "k0_db": linear_to_db(variant.legit_chan.k_factor) if k0_db is None else k0_db,
        "theta1_pi": theta / math.pi,
        "corr_mag_sq": correlation_mag_sq(variant.claimed.theta, theta, variant.bs),
        "min_kl": kl,
        **_rates_row(rates_from_kl(kl, detector_threshold(cfg, kl)), cfg.detector.p0_prior),
    }


@register_evaluator(ExperimentName.TOTAL_ERROR_GRID.value)
def total_error_point(point: Row, *, scn: Scenario, cfg: ExperimentConfig) -> Row:
    variant = with_arrays(scn, point["n_b"], point["n_0"])
    if point["k0_db"] is not None:
        variant = with_k0(variant, db_to_linear(point["k0_db"]))
    theta = _resolve_theta(variant, point["theta1_pi"])
    kl = min_kl_at(variant, theta)
    try:
        n1_star: int | None = min_antennas(variant)
    except InfeasibleAttackError as exc:
        logger.debug("no N₁* at %s: %s", point, exc)
        n1_star = None
    return {
        "n_b": variant.bs.n,
        "n_0": variant.veh_legit.n,
        "k0_db": linear_to_db(variant.legit_chan.k_factor),
        "theta1_pi": theta / math.pi,
        "min_kl": kl,
        **_rates_row(rates_from_kl(kl, detector_threshold(cfg, kl)), cfg.detector.p0_prior),
        "n1_star": n1_star,
    }


@register_evaluator(ExperimentName.MIN_ANTENNAS_GRID.value)
def min_antennas_point(point: Row, *, scn: Scenario, theta1: float) -> Row:
    """N₁* and p₁* at one (K₁, σ₁²); status is ok, infeasible or unbounded."""
    variant = scn
    if point["k1_db"] is not None:
        variant = with_k1(variant, db_to_linear(point["k1_db"]))
    if point["noise1_db"] is not None:
        variant = with_noise1(variant, db_to_linear(point["noise1_db"]))
    row: Row = {
        "k1_db": linear_to_db(variant.mal_chan.k_factor) if point["k1_db"] is None else point["k1_db"],
        "noise1_db": linear_to_db(variant.mal_chan.noise_var) if point["noise1_db"] is None else point["noise1_db"],
    }
    try:
        row["p1_star"] = optimal_power(variant, attack_distance(variant, theta1))
    except InfeasibleAttackError:
        row["status"] = "infeasible"
        return row
    try:
        row["n1_star"] = min_antennas(variant)
    except UnboundedAntennasError:
        row["status"] = "unbounded"
        return row
    row["status"] = "ok"
    return row


@register_evaluator(ExperimentName.CORRELATION.value)
def correlation_point(point: Row, *, scn: Scenario) -> Row:
    bs = scn.bs.with_elements(point["n_b"])
    theta = point["theta1_pi"] * math.pi
    corr = correlation_mag_sq(scn.claimed.theta, theta, bs)
    return {"n_b": bs.n, "theta1_pi": point["theta1_pi"], "corr_mag_sq": corr, "kl_shape": bs.n - corr / bs.n}


def _axis(values: Sequence[Any] | None) -> list[Any]:
    return [None] if values is None else list(values)


# =============================================================================
# Tables
# =============================================================================


def _roc_table(scn: Scenario, cfg: ExperimentConfig) -> list[Row]:
    lambdas = lambda_axis(cfg)
    grid = {
        "snr_db": _axis(cfg.sweep.snr_db),
        "theta1_pi": theta_axis(cfg),
        "lambda_index": list(range(len(lambdas))),
    }
    return sweep(grid, ExperimentName.ROC.value, scn=scn, cfg=cfg, lambdas=lambdas, cache={})


def _kl_map_table(scn: Scenario, cfg: ExperimentConfig) -> list[Row]:
    grid = {"k0_db": _axis(cfg.sweep.k0_db), "theta1_pi": theta_axis(cfg, DEFAULT_THETA_POINTS)}
    return sweep(grid, ExperimentName.KL_MAP.value, scn=scn, cfg=cfg)


def _total_error_table(scn: Scenario, cfg: ExperimentConfig) -> list[Row]:
    grid = {
        "n_b": _axis(cfg.sweep.n_b),
        "n_0": _axis(cfg.sweep.n_0),
        "k0_db": _axis(cfg.sweep.k0_db),
        "theta1_pi": theta_axis(cfg),
    }
    return sweep(grid, ExperimentName.TOTAL_ERROR_GRID.value, scn=scn, cfg=cfg)


def _min_antennas_table(scn: Scenario, cfg: ExperimentConfig) -> list[Row]:
    grid = {"k1_db": _axis(cfg.sweep.k1_db), "noise1_db": _axis(cfg.sweep.noise1_db)}
    theta1 = _resolve_theta(scn, theta_axis(cfg)[0])
    return sweep(grid, ExperimentName.MIN_ANTENNAS_GRID.value, scn=scn, theta1=theta1)


def _correlation_table(scn: Scenario, cfg: ExperimentConfig) -> list[Row]:
    thetas = theta_axis(cfg, CORRELATION_THETA_POINTS)
    grid = {
        "n_b": _axis(cfg.sweep.n_b) if cfg.sweep.n_b is not None else [scn.bs.n],
        "theta1_pi": [0.5 if value is None else value for value in thetas],
    }
    return sweep(grid, ExperimentName.CORRELATION.value, scn=scn)


def _track_table(scn: Scenario, cfg: ExperimentConfig) -> list[Row]:
    """One row per fixed window T = 1..slots, then one for the random window when configured."""
    tr = cfg.track
    p0 = cfg.detector.p0_prior
    traj = make_trajectory(scn.claimed, tr.speed, tr.dt, tr.slots, scn.legit_chan, tr.k_map)
    attack = constrained_attack_track(traj, scn, tr.r_u, tr.mode)
    kls = slot_kls(attack, traj, scn)
    jitter = cfg.montecarlo.effective_jitter_std

    windows: list[tuple[int, int]] = [(t, t) for t in range(1, tr.slots + 1)]
    if tr.t_min is not None and tr.t_max is not None:
        windows.append((tr.t_min, tr.t_max))

    rows: list[Row] = []
    for lo, hi in windows:
        fixed = lo == hi
        d_track = math.fsum(kls[:hi]) if fixed else None
        lam = detector_threshold(cfg, d_track, tr.lam) if d_track is not None else tr.lam or cfg.detector.lam
        if lam is None:
            lam = bayes_threshold(p0)
        analytic = tracking_analytic(kls, (lo, hi), lam)
        row: Row = {
            "t_min": lo,
            "t_max": hi,
            "d_track": d_track,
            "alpha_analytic": analytic.alpha,
            "beta_analytic": analytic.beta,
            "total_error_analytic": total_error(analytic, p0),
        }
        trial = cfg.trial_config(t_range=(lo, hi))
        if trial is not None:
            report = run_tracking(traj, scn, tr.r_u, tr.mode, lam, trial, track=attack)
            row.update(_mc_row(report), total_error_mc=report.total_error_hat)
            if jitter > 0:
                jittered = run_tracking(
                    traj, scn, tr.r_u, tr.mode, lam, trial.model_copy(update={"jitter_std": jitter}), track=attack
                )
                alpha = report.alpha_hat.rate
                row["alpha_mc_jitter"] = jittered.alpha_hat.rate
                row["alpha_jitter_change"] = (jittered.alpha_hat.rate - alpha) / alpha if alpha > 0 else None
        rows.append(row)
    return rows


TABLE_BUILDERS: dict[ExperimentName, Callable[[Scenario, ExperimentConfig], list[Row]]] = {
    ExperimentName.ROC: _roc_table,
    ExperimentName.KL_MAP: _kl_map_table,
    ExperimentName.TOTAL_ERROR_GRID: _total_error_table,
    ExperimentName.MIN_ANTENNAS_GRID: _min_antennas_table,
    ExperimentName.TRACK: _track_table,
    ExperimentName.CORRELATION: _correlation_table,
}


def build_table(scn: Scenario, cfg: ExperimentConfig) -> Table:
    """Compute an experiment's rows without touching the filesystem."""
    rows = TABLE_BUILDERS[cfg.experiment](scn, cfg)
    return Table.from_rows(COLUMNS[cfg.experiment], rows)


# =============================================================================
# CSV
# =============================================================================


def format_cell(value: Cell) -> str:
    """Shortest round-trip text for floats; empty for missing values."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(table: Table, handle: IO[str]) -> None:
    writer = csv.writer(handle, lineterminator="\r\n")
    writer.writerow(table.columns)
    writer.writerows([format_cell(cell) for cell in row] for row in table.rows)


def run_experiment(scn: Scenario, cfg: ExperimentConfig) -> int:
    """
    Build the experiment's table and write it as CSV.

    Output goes to ``cfg.output_path`` or stdout.

    Raises:
        OSError: the output file cannot be written
        InfeasibleAttackError: the scenario admits no valid attack
    """
    start = time.perf_counter()
    logger.info("running %s (seed %d, %d trials)", cfg.experiment.value, cfg.seed, cfg.trials)
    table = build_table(scn, cfg)
    if cfg.output_path is None:
        write_csv(table, sys.stdout)
        sys.stdout.flush()
    else:
        with open(cfg.output_path, "w", newline="", encoding="utf-8") as handle:
            write_csv(table, handle)
    elapsed = time.perf_counter() - start
    logger.info("%s: %d rows in %.2f s", cfg.experiment.value, len(table.rows), elapsed)
    return EXIT_OK
