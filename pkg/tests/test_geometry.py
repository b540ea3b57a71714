"""Tests for array geometry, steering vectors and path loss.

Features tested:
- Angle normalization to (−π, π] and polar/cartesian conversion
- Array phase constant τ derived from spacing and carrier
- Receive and transmit steering vectors (ULA and UCA)
- Closed-form steering correlation against the direct inner product
- Path-loss gain, scalar and vectorized
"""

import math

import numpy as np
import pytest
from pydantic import ValidationError

from lvs_sim.errors import DomainError, InvalidGeometryError
from lvs_sim.geometry import (
    ArrayGeometry,
    ArrayKind,
    PathLossParams,
    PolarPoint,
    angular_distance,
    correlation_mag_sq,
    normalize_angle,
    path_loss,
    steering_rx,
    steering_rx_batch,
    steering_tx,
    steering_tx_uca,
    steering_tx_ula,
)

# =============================================================================
# Angles and points
# =============================================================================

class TestAngles:
    """Angle wrapping and polar points."""

    @pytest.mark.parametrize(
        ("theta", "expected"),
        [
            (0.0, 0.0),
            (math.pi, math.pi),
            (-math.pi, math.pi),
            (3 * math.pi / 2, -math.pi / 2),
            (5 * math.pi, math.pi),
        ],
    )
    def test_normalize_angle(self, theta, expected):
        """Angles wrap into (−π, π]."""
        assert normalize_angle(theta) == pytest.approx(expected, abs=1e-12)

    def test_angular_distance_wraps(self):
        """Distance across the ±π seam is the short way round."""
        assert angular_distance(math.pi - 0.1, -math.pi + 0.1) == pytest.approx(0.2)

    def test_polar_point_normalizes_theta(self):
        """PolarPoint stores θ in (−π, π]."""
        assert PolarPoint(d=1.0, theta=2 * math.pi + 0.5).theta == pytest.approx(0.5)

    def test_polar_point_rejects_non_positive_distance(self):
        """d must be positive."""
        with pytest.raises(ValidationError):
            PolarPoint(d=0.0, theta=0.0)

    def test_cartesian_round_trip(self):
        """from_cartesian inverts to_cartesian."""
        point = PolarPoint(d=10.0 * math.sqrt(2.0), theta=math.pi / 4)
        x, y = point.to_cartesian()
        assert (x, y) == pytest.approx((10.0, 10.0))
        back = PolarPoint.from_cartesian(x, y)
        assert back.d == pytest.approx(point.d)
        assert back.theta == pytest.approx(point.theta)

    def test_from_cartesian_origin_rejected(self):
        """The BS itself is not a vehicle position."""
        with pytest.raises(DomainError):
            PolarPoint.from_cartesian(0.0, 0.0)

    def test_distance_between_points(self):
        """Mirror images across the x-axis are 2·d·sin θ apart."""
        a = PolarPoint(d=5.0, theta=math.pi / 6)
        b = PolarPoint(d=5.0, theta=-math.pi / 6)
        assert a.distance_to(b) == pytest.approx(5.0)


# =============================================================================
# Arrays
# =============================================================================

class TestArrayGeometry:
    """Array construction and the phase constant."""

    def test_half_wavelength_spacing_gives_tau_pi(self):
        """ρ = λ/2 gives τ = π."""
        wavelength = 3e8 / 5.9e9
        array = ArrayGeometry(n=4, spacing=wavelength / 2)
        assert array.tau == pytest.approx(math.pi)

    def test_from_tau_round_trip(self):
        """from_tau stores the spacing that reproduces τ."""
        array = ArrayGeometry.from_tau(0.7 * math.pi, n=3)
        assert array.tau == pytest.approx(0.7 * math.pi)

    def test_with_elements(self):
        """with_elements keeps spacing and kind."""
        array = ArrayGeometry.from_tau(math.pi, n=2, kind=ArrayKind.UCA)
        grown = array.with_elements(7)
        assert grown.n == 7
        assert grown.kind is ArrayKind.UCA
        assert grown.spacing == array.spacing

    def test_rejects_zero_elements(self):
        """n ≥ 1."""
        with pytest.raises(ValidationError):
            ArrayGeometry(n=0, spacing=0.1)


# =============================================================================
# Steering vectors
# =============================================================================

class TestSteering:
    """Receive and transmit steering."""

    def test_receive_steering_elements(self):
        """Element i is exp(j·i·τ·cos θ)."""
        bs = ArrayGeometry.from_tau(math.pi, n=4)
        theta = math.pi / 3
        expected = np.exp(1j * np.arange(4) * math.pi * math.cos(theta))
        np.testing.assert_allclose(steering_rx(theta, bs), expected)

    def test_receive_steering_broadside_is_all_ones(self):
        """cos(π/2) = 0 puts every element in phase."""
        bs = ArrayGeometry.from_tau(math.pi, n=5)
        np.testing.assert_allclose(steering_rx(math.pi / 2, bs), np.ones(5), atol=1e-12)

    def test_batch_matches_single(self):
        """Batched steering rows equal per-angle vectors."""
        bs = ArrayGeometry.from_tau(math.pi, n=3)
        thetas = np.array([0.1, 1.0, -2.0])
        batch = steering_rx_batch(thetas, bs)
        for row, theta in zip(batch, thetas):
            np.testing.assert_allclose(row, steering_rx(float(theta), bs))

    def test_ula_transmit_steering_conjugate_phase(self):
        """ULA transmit element i is exp(−j·i·τ·cos ψ)."""
        veh = ArrayGeometry.from_tau(math.pi, n=3)
        psi = 0.3
        expected = np.exp(-1j * np.arange(3) * math.pi * math.cos(psi))
        np.testing.assert_allclose(steering_tx_ula(psi, veh), expected)

    def test_uca_transmit_steering(self):
        """UCA element m uses φ_m = 2πm/N + φ₁."""
        veh = ArrayGeometry.from_tau(2.0, n=4, kind=ArrayKind.UCA)
        phi1 = 0.25
        phi = 2 * math.pi * np.arange(4) / 4 + phi1
        np.testing.assert_allclose(steering_tx_uca(phi1, veh), np.exp(-1j * 2.0 * np.cos(phi)))

    def test_dispatch_on_kind(self):
        """steering_tx follows the array kind."""
        uca = ArrayGeometry.from_tau(2.0, n=4, kind=ArrayKind.UCA)
        np.testing.assert_allclose(steering_tx(0.2, uca), steering_tx_uca(0.2, uca))

    def test_wrong_kind_raises(self):
        """A UCA cannot be a BS receive array or a ULA transmitter."""
        uca = ArrayGeometry.from_tau(2.0, n=4, kind=ArrayKind.UCA)
        with pytest.raises(InvalidGeometryError):
            steering_rx(0.0, uca)
        with pytest.raises(InvalidGeometryError):
            steering_tx_ula(0.0, uca)


# =============================================================================
# Correlation
# =============================================================================

class TestCorrelation:
    """Closed-form |r₁†r₀|²."""

    @pytest.mark.parametrize("n_b", [2, 4, 8])
    def test_matches_direct_inner_product(self, n_b):
        """Closed form agrees with the direct inner product over a dense grid."""
        bs = ArrayGeometry.from_tau(math.pi, n=n_b)
        theta0 = math.pi / 2
        thetas = np.linspace(-math.pi, math.pi, 10_000)
        closed = correlation_mag_sq(theta0, thetas, bs)
        r0 = steering_rx(theta0, bs)
        direct = np.abs(steering_rx_batch(thetas, bs).conj() @ r0) ** 2
        np.testing.assert_allclose(closed, direct, rtol=1e-9, atol=1e-9)

    def test_peak_is_n_squared(self):
        """Equal cosines give exactly N_B², including the mirror angle."""
        bs = ArrayGeometry.from_tau(math.pi, n=4)
        assert correlation_mag_sq(math.pi / 3, math.pi / 3, bs) == 16.0
        assert correlation_mag_sq(math.pi / 3, -math.pi / 3, bs) == 16.0

    def test_bounded(self):
        """Values lie in [0, N_B²]."""
        bs = ArrayGeometry.from_tau(math.pi, n=6)
        values = correlation_mag_sq(0.4, np.linspace(-3, 3, 1001), bs)
        assert values.min() >= 0.0
        assert values.max() <= 36.0 + 1e-9

    def test_larger_array_larger_kl_shape_off_peak(self):
        """N_B − |r₁†r₀|²/N_B grows with N_B away from the peak."""
        theta0, theta1 = math.pi / 2, 0.4 * math.pi
        shapes = []
        for n_b in (2, 4, 8):
            bs = ArrayGeometry.from_tau(math.pi, n=n_b)
            shapes.append(n_b - correlation_mag_sq(theta0, theta1, bs) / n_b)
        assert shapes[0] < shapes[1] < shapes[2]


# =============================================================================
# Path loss
# =============================================================================

class TestPathLoss:
    """g(d) = (c/4πf_c d_r)²(d_r/d)^ξ."""

    def test_reference_distance(self):
        """At d = d_r only the free-space constant remains."""
        params = PathLossParams()
        expected = (3e8 / (4 * math.pi * 5.9e9)) ** 2
        assert path_loss(1.0, params) == pytest.approx(expected)

    def test_exponent(self):
        """Doubling distance with ξ = 3 divides the gain by 8."""
        params = PathLossParams(xi=3.0)
        assert path_loss(10.0, params) / path_loss(20.0, params) == pytest.approx(8.0)

    def test_vectorized(self):
        """Arrays of distances give arrays of gains."""
        params = PathLossParams()
        gains = path_loss(np.array([1.0, 2.0, 4.0]), params)
        assert gains.shape == (3,)
        assert gains[0] / gains[2] == pytest.approx(16.0)

    def test_non_positive_distance(self):
        """g is undefined at d ≤ 0."""
        with pytest.raises(DomainError):
            path_loss(0.0, PathLossParams())
