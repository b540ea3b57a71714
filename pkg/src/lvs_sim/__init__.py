"""
lvs-sim: location verification against beamforming attackers in Rician fading.

A vehicle claims a location; a multi-antenna base station checks the claim
with a likelihood-ratio test on the received signal. An attacker that knows
the channel statistics picks its angle, power and beamformer to make its
signal look like the claimed vehicle's.

Core Components:
    Scenario: Arrays, channels and claim for one verification
    plan_attack: The attacker's optimal angle, power and beamformer
    rates_from_kl: Closed-form false positive and detection rates
    constrained_attack_track: Slot-by-slot attack on a claimed trajectory
    run_roc / run_tracking: Monte Carlo validation with deterministic streams
    parse_config / run_experiment: TOML-driven experiments writing CSV

Basic Usage:
    >>> from lvs_sim import parse_config, plan_attack
    >>> scenario, cfg = parse_config(open("configs/roc.toml").read())
    >>> plan = plan_attack(scenario)
    >>> plan.min_kl
"""

# Version is managed by setuptools-scm from git tags
from importlib.metadata import version as _version

from .attack import AngleInterval, AttackPlan, Scenario, min_antennas, min_kl_at, optimal_theta, plan_attack
from .channel import ChannelParams, GaussianObsModel
from .config import ExperimentConfig, ExperimentName, parse_config
from .detector import Decision, DetectorConfig, RatePair, analytic_rates, rates_from_kl, total_error
from .errors import ConfigError, InfeasibleAttackError, LvsError
from .experiments import Table, build_table, run_experiment
from .geometry import ArrayGeometry, ArrayKind, PathLossParams, PolarPoint
from .montecarlo import EmpiricalReport, TrialConfig, run_roc, run_single_slot, run_tracking
from .tracking import AttackTrack, TrackMode, Trajectory, constrained_attack_track, make_trajectory

try:
    __version__ = _version("lvs-sim")
except Exception:
    # Fallback for development or environments without installed package metadata
    __version__ = "0.0.0.dev0"
__all__ = [
    "AngleInterval",
    "ArrayGeometry",
    "ArrayKind",
    "AttackPlan",
    "AttackTrack",
    "ChannelParams",
    "ConfigError",
    "Decision",
    "DetectorConfig",
    "EmpiricalReport",
    "ExperimentConfig",
    "ExperimentName",
    "GaussianObsModel",
    "InfeasibleAttackError",
    "LvsError",
    "PathLossParams",
    "PolarPoint",
    "RatePair",
    "Scenario",
    "Table",
    "TrackMode",
    "Trajectory",
    "TrialConfig",
    "analytic_rates",
    "build_table",
    "constrained_attack_track",
    "make_trajectory",
    "min_antennas",
    "min_kl_at",
    "optimal_theta",
    "parse_config",
    "plan_attack",
    "rates_from_kl",
    "run_experiment",
    "run_roc",
    "run_single_slot",
    "run_tracking",
    "total_error",
]
