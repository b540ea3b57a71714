"""Shared test fixtures for lvs-sim tests.

This module provides the reference scenarios (one per bundled experiment) and
small factories used across test files. Import fixtures from here rather
than rebuilding scenarios in each test file.
"""

import math
from pathlib import Path

import numpy as np
import pytest

from lvs_sim.attack import AngleInterval, Scenario
from lvs_sim.channel import ChannelParams
from lvs_sim.geometry import ArrayGeometry, PathLossParams, PolarPoint, path_loss

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


def db(value_db):
    """dB → linear."""
    return 10.0 ** (value_db / 10.0)


# =============================================================================
# Scenario factory
# =============================================================================

def make_scenario(
    *,
    n_b=4,
    n_0=3,
    n_1=2,
    d0=100.0,
    theta0=math.pi / 2,
    k0=db(1.0),
    noise0=1.0,
    snr=None,
    rx_power=None,
    p0=None,
    k1=1.0,
    noise1=None,
    xi=2.0,
    r_l=100.0,
    forbidden=(),
    mal_distance=None,
    k1_floor=1e-6,
):
    """Scenario with ULAs at half-wavelength spacing; exactly one of snr, rx_power or p0 sets the power."""
    path = PathLossParams(xi=xi)
    gain = path_loss(d0, path)
    if p0 is None:
        if rx_power is not None:
            p0 = rx_power / gain
        else:
            p0 = (1.0 if snr is None else snr) * noise0 / gain
    return Scenario(
        bs=ArrayGeometry.from_tau(math.pi, n=n_b),
        veh_legit=ArrayGeometry.from_tau(math.pi, n=n_0),
        veh_mal=ArrayGeometry.from_tau(math.pi, n=n_1),
        claimed=PolarPoint(d=d0, theta=theta0),
        legit_chan=ChannelParams(k_factor=k0, noise_var=noise0, tx_power=p0, path=path),
        mal_chan=ChannelParams(k_factor=k1, noise_var=noise0 if noise1 is None else noise1, path=path),
        r_l=r_l,
        forbidden_angles=tuple(AngleInterval(lo=lo, hi=hi) for lo, hi in forbidden),
        mal_distance=mal_distance,
        k1_floor=k1_floor,
    )


@pytest.fixture
def scenario_factory():
    """Factory building scenarios from keyword overrides."""
    return make_scenario


# =============================================================================
# Reference set-ups
# =============================================================================

@pytest.fixture
def roc_scenario():
    """N_B = 4, N_0 = 3, θc = π/2, K_0 = 1 dB, σ₀² = σ₁² = 0 dB, SNR = 5 dB."""
    return make_scenario(snr=db(5.0))


@pytest.fixture
def antenna_scenario():
    """N_0 = 3, p₀g(d₀) = −75 dB, σ₀² = σ₁² = −85 dB, K_0 = 0 dB, K_1 = −5 dB."""
    return make_scenario(
        rx_power=db(-75.0),
        noise0=db(-85.0),
        k0=1.0,
        k1=db(-5.0),
    )


@pytest.fixture
def grid_scenario():
    """θc = π/3, K_1 = 0 dB, SNR = 0 dB; used with θ₁ = π/4 and P₀ = 0.9."""
    return make_scenario(theta0=math.pi / 3, k0=1.0, snr=1.0)


@pytest.fixture
def track_scenario():
    """N_B = 3, N_0 = 2, p₀ = 30 dB, K_0 = −10 dB, ξ = 3, σ₀² = −51 dB, start (10√2, π/4)."""
    return make_scenario(
        n_b=3,
        n_0=2,
        d0=10.0 * math.sqrt(2.0),
        theta0=math.pi / 4,
        k0=db(-10.0),
        noise0=db(-51.0),
        p0=db(30.0),
        k1=1.0,
        xi=3.0,
        forbidden=[(math.radians(40.0), math.radians(50.0))],
    )


@pytest.fixture
def track_speed():
    """20 km/h in m/s."""
    return 20.0 / 3.6


# =============================================================================
# Config helpers
# =============================================================================

MINIMAL_CONFIG = """
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


@pytest.fixture
def minimal_config():
    """Smallest valid config text; the experiment comes from the caller."""
    return MINIMAL_CONFIG


@pytest.fixture
def config_dir():
    return CONFIG_DIR


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
