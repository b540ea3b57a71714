"""Tests for TOML configuration loading.

Features tested:
- Scenario assembly with unit conversion and defaults
- Experiment selection from the file or the caller
- Error collection with line/column locations (unknown keys, missing keys, syntax)
- --set overrides, including replacement of other spellings
- CLI flag precedence and analytic-only mode
- The bundled experiment configs
"""

import math

import pytest

from lvs_sim.config import ExperimentName, apply_overrides, index_keys, parse_config
from lvs_sim.errors import ConfigError
from lvs_sim.geometry import path_loss
from lvs_sim.montecarlo import jitter_std_for_mean_error

from .conftest import db

CONFIG = """\
[experiment]
name = "roc"

[bs]
n = 4

[legit_vehicle]
n = 3

[claimed]
d = 100.0
theta_pi = 0.5

[legit_channel]
k_db = 1.0
noise_db = 0.0
snr_db = 5.0
"""


def errors_of(text, **kwargs):
    with pytest.raises(ConfigError) as exc_info:
        parse_config(text, source="test.toml", **kwargs)
    return exc_info.value


# =============================================================================
# Scenario assembly
# =============================================================================

class TestScenario:
    """Sections → Scenario."""

    def test_units_are_converted(self):
        """dB and π-multiple keys load as linear values and radians."""
        scn, _ = parse_config(CONFIG)
        assert scn.legit_chan.k_factor == pytest.approx(1.2589254117941673)
        assert scn.legit_chan.noise_var == pytest.approx(1.0)
        assert scn.claimed.theta == pytest.approx(math.pi / 2)

    def test_snr_sets_transmit_power(self):
        """p₀g(d₀)/σ₀² equals the configured SNR."""
        scn, _ = parse_config(CONFIG)
        rx = scn.legit_chan.tx_power * path_loss(scn.claimed.d, scn.legit_chan.path)
        assert rx / scn.legit_chan.noise_var == pytest.approx(db(5.0))

    def test_rx_power_sets_transmit_power(self):
        """rx_power is p₀g(d₀)."""
        text = CONFIG.replace("snr_db = 5.0", "rx_power_db = -75.0")
        scn, _ = parse_config(text)
        rx = scn.legit_chan.tx_power * path_loss(scn.claimed.d, scn.legit_chan.path)
        assert rx == pytest.approx(db(-75.0))

    def test_defaults(self):
        """Unset sections fall back to the documented defaults."""
        scn, cfg = parse_config(CONFIG)
        assert scn.veh_mal.n == 2
        assert scn.mal_chan.noise_var == scn.legit_chan.noise_var
        assert scn.mal_chan.k_factor == 1.0
        assert scn.r_l == 100.0
        assert scn.bs.tau == pytest.approx(math.pi)
        assert scn.legit_chan.path.xi == 2.0
        assert cfg.trials == 100_000
        assert cfg.seed == 0
        assert cfg.detector.p0_prior == 0.5
        assert cfg.detector.lam is None
        assert cfg.track.r_u == 3.0

    def test_forbidden_intervals(self):
        """Forbidden angle pairs become intervals."""
        scn, _ = parse_config(CONFIG + "\n[attack]\nforbidden_deg = [[40.0, 50.0]]\n")
        (interval,) = scn.forbidden_angles
        assert interval.contains(math.pi / 4)
        assert not interval.contains(math.pi / 2)

    def test_keys_are_case_insensitive(self):
        """Section and key names are lower-cased."""
        scn, _ = parse_config(CONFIG.replace("[bs]\nn = 4", "[BS]\nN = 6"))
        assert scn.bs.n == 6

    def test_jitter_mean(self):
        """jitter_mean is converted to a per-point std."""
        _, cfg = parse_config(CONFIG + "\n[montecarlo]\njitter_mean = 5.0\n")
        assert cfg.montecarlo.effective_jitter_std == pytest.approx(jitter_std_for_mean_error(5.0))

    def test_lambda_alias(self):
        """The detector threshold is written ``lambda``."""
        _, cfg = parse_config(CONFIG + "\n[detector]\nlambda = 2.5\n")
        assert cfg.detector.lam == 2.5


# =============================================================================
# Experiment selection
# =============================================================================

class TestExperimentSelection:
    """Where the experiment name comes from."""

    def test_from_file(self):
        _, cfg = parse_config(CONFIG)
        assert cfg.experiment is ExperimentName.ROC

    def test_caller_wins(self):
        """An explicit experiment overrides the file."""
        _, cfg = parse_config(CONFIG, experiment="correlation")
        assert cfg.experiment is ExperimentName.CORRELATION

    def test_missing(self, minimal_config):
        """No name anywhere is a config error at experiment.name."""
        exc = errors_of(minimal_config)
        assert "experiment.name" in exc.messages
        assert exc.locations["experiment.name"] == ("test.toml", 1, 1)

    def test_source_recorded(self):
        _, cfg = parse_config(CONFIG, source="runs/a.toml")
        assert cfg.config_path == "runs/a.toml"


# =============================================================================
# Errors and locations
# =============================================================================

class TestErrors:
    """Every problem, with where it was written."""

    def test_unknown_key_location(self):
        """An unknown key is reported at its own line and column."""
        exc = errors_of(CONFIG.replace("n = 3", "n = 3\n  height = 2.0"))
        assert "legit_vehicle.height" in exc.messages
        assert exc.locations["legit_vehicle.height"] == ("test.toml", 9, 3)

    def test_unknown_section(self):
        exc = errors_of(CONFIG + "\n[radar]\nrange = 1\n")
        assert exc.messages["radar"] == ["Unknown section."]

    def test_missing_key_points_at_header(self):
        """A missing required key is located at its section header."""
        exc = errors_of(CONFIG.replace("d = 100.0\n", ""))
        assert "claimed.d" in exc.messages
        assert exc.locations["claimed.d"] == ("test.toml", 10, 2)

    def test_missing_section_points_at_start(self):
        """A missing section has no line of its own."""
        text = CONFIG.replace("[legit_vehicle]\nn = 3\n", "")
        exc = errors_of(text)
        assert exc.locations["legit_vehicle.n"] == ("test.toml", 1, 1)

    def test_unit_key_reported_as_written(self):
        """Errors on converted keys name the suffixed spelling."""
        exc = errors_of(CONFIG.replace("theta_pi = 0.5", 'theta_pi = "half"'))
        assert "claimed.theta_pi" in exc.messages
        assert exc.locations["claimed.theta_pi"] == ("test.toml", 12, 1)

    def test_all_errors_collected(self):
        """Problems in different sections come back together."""
        text = CONFIG.replace("n = 4", "n = 0").replace("d = 100.0", "d = -1.0")
        exc = errors_of(text)
        assert {"bs.n", "claimed.d"} <= set(exc.messages)
        assert "bs" in exc.valid_data or "legit_vehicle" in exc.valid_data

    def test_cross_field_error(self):
        """Two power settings are reported against the section."""
        exc = errors_of(CONFIG.replace("snr_db = 5.0", "snr_db = 5.0\np0 = 1.0"))
        assert "legit_channel" in exc.messages
        assert exc.locations["legit_channel"] == ("test.toml", 14, 2)

    def test_syntax_error(self):
        """TOML syntax errors carry the parser's line."""
        exc = errors_of(CONFIG + "\n[bs\n")
        assert "_toml" in exc.messages
        source, line, _ = exc.locations["_toml"]
        assert source == "test.toml"
        assert line == CONFIG.count("\n") + 2

    def test_str_lists_locations(self):
        """The message renders source:line:column: path: message."""
        exc = errors_of(CONFIG.replace("n = 3", "n = 3\nheight = 2.0"))
        assert str(exc).startswith("test.toml:9:1: legit_vehicle.height:")

    def test_index_keys(self):
        """Headers and keys are indexed by dotted path."""
        index = index_keys("[a]\n  x = 1\n[B]\ny=2\n")
        assert index == {"a": (1, 2), "a.x": (2, 3), "b": (3, 2), "b.y": (4, 1)}


# =============================================================================
# Overrides
# =============================================================================

class TestOverrides:
    """--set section.key=value."""

    def test_override_value(self):
        """Overrides replace file values; JSON literals are parsed."""
        scn, cfg = parse_config(CONFIG, overrides=["bs.n=8", "montecarlo.trials=0"])
        assert scn.bs.n == 8
        assert cfg.trials == 0
        assert cfg.overrides == ("bs.n=8", "montecarlo.trials=0")

    def test_override_replaces_other_spelling(self):
        """Setting noise replaces noise_db from the file."""
        scn, _ = parse_config(CONFIG, overrides=["legit_channel.noise=2.0"])
        assert scn.legit_chan.noise_var == 2.0

    def test_override_string_fallback(self):
        """Unquoted text is taken as a string."""
        _, cfg = parse_config(CONFIG, overrides=["track.mode=free"])
        assert cfg.track.mode.value == "free"

    def test_override_list(self):
        _, cfg = parse_config(CONFIG, overrides=["sweep.snr_db=[0, 10]"])
        assert cfg.sweep.snr_db == [0.0, 10.0]

    def test_bad_override_value_located_on_command_line(self):
        """Errors in overridden keys point at the --set position."""
        exc = errors_of(CONFIG, overrides=["bs.n=8", "claimed.d=-3"])
        assert exc.locations["claimed.d"] == ("<--set>", 1, 2)

    def test_malformed_override(self):
        exc = errors_of(CONFIG, overrides=["no-dot=1"])
        assert "--set" in exc.messages

    def test_apply_overrides_positions(self):
        """Overrides return their command-line positions."""
        data = {"bs": {"n": 4}, "legit_channel": {"noise_db": 0.0}}
        positions = apply_overrides(data, ["bs.n=5", "legit_channel.noise=1.5"])
        assert positions == {"bs.n": 1, "legit_channel.noise": 2}
        assert data == {"bs": {"n": 5}, "legit_channel": {"noise": 1.5}}


# =============================================================================
# CLI precedence
# =============================================================================

class TestExperimentConfig:
    """Flags, trial settings and analytic-only mode."""

    def test_cli_flags_win(self):
        _, cfg = parse_config(CONFIG + "\n[montecarlo]\nseed = 3\ntrials = 50\n")
        updated = cfg.with_cli(seed=9, trials=10, output_path="out.csv")
        assert (updated.seed, updated.trials, updated.output_path) == (9, 10, "out.csv")
        assert cfg.with_cli() == cfg

    def test_cli_values_validated(self):
        _, cfg = parse_config(CONFIG)
        with pytest.raises(ConfigError) as exc_info:
            cfg.with_cli(trials=-1)
        assert "trials" in exc_info.value.messages

    def test_trial_config(self):
        """Monte Carlo settings carry seed, prior and chunking."""
        _, cfg = parse_config(CONFIG + "\n[montecarlo]\nseed = 3\ntrials = 50\nchunk_size = 7\n")
        trials = cfg.trial_config(jitter_std=1.0)
        assert (trials.trials, trials.seed, trials.chunk_size, trials.jitter_std) == (50, 3, 7, 1.0)

    def test_analytic_only(self):
        """Zero trials gives no Monte Carlo settings."""
        _, cfg = parse_config(CONFIG, overrides=["montecarlo.trials=0"])
        assert cfg.trial_config() is None


# =============================================================================
# Bundled configs
# =============================================================================

class TestBundledConfigs:
    """Every shipped config parses."""

    @pytest.mark.parametrize(
        ("name", "experiment"),
        [
            ("roc.toml", ExperimentName.ROC),
            ("correlation.toml", ExperimentName.CORRELATION),
            ("min_antennas.toml", ExperimentName.MIN_ANTENNAS_GRID),
            ("total_error.toml", ExperimentName.TOTAL_ERROR_GRID),
            ("track.toml", ExperimentName.TRACK),
            ("kl_map.toml", ExperimentName.KL_MAP),
        ],
    )
    def test_parses(self, config_dir, name, experiment):
        path = config_dir / name
        _, cfg = parse_config(path.read_text(encoding="utf-8"), source=str(path))
        assert cfg.experiment is experiment

    def test_track_config(self, config_dir):
        """The tracking config reproduces the reference scenario."""
        scn, cfg = parse_config((config_dir / "track.toml").read_text(encoding="utf-8"))
        assert scn.legit_chan.tx_power == pytest.approx(1000.0)
        assert scn.legit_chan.k_factor == pytest.approx(0.1)
        assert cfg.track.speed == pytest.approx(20.0 / 3.6)
        assert (cfg.track.t_min, cfg.track.t_max) == (1, 10)
        assert cfg.detector.p0_prior == 0.6
