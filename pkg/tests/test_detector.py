"""Tests for the single-snapshot LRT detector.

Features tested:
- Q-function and its inverse
- Linear test statistic, threshold Γ and decisions
- Closed-form false positive and detection rates, including the degenerate branch
- Total error, the Bayes threshold λ* and Neyman–Pearson thresholds
- ROC curves and the LVS view of a claim
- Agreement of the linear statistic with the full log-likelihood ratio
"""

import math

import numpy as np
import pytest
from pydantic import ValidationError

from lvs_sim import detector
from lvs_sim.attack import legitimate_model, min_kl_at, target_mean
from lvs_sim.channel import GaussianObsModel, draw_observations, log_likelihood
from lvs_sim.errors import DimensionMismatchError, DomainError

# =============================================================================
# Q-function
# =============================================================================

class TestQFunction:
    """Gaussian tail probabilities."""

    def test_known_values(self):
        """Q(0) = ½ and Q(1.959964) ≈ 0.025."""
        assert detector.q_function(0.0) == pytest.approx(0.5)
        assert detector.q_function(1.959963984540054) == pytest.approx(0.025, rel=1e-12)

    def test_vectorized(self):
        """Arrays in, arrays out."""
        values = detector.q_function(np.array([-1.0, 0.0, 1.0]))
        assert values.shape == (3,)
        assert values[0] + values[2] == pytest.approx(1.0)

    @pytest.mark.parametrize("p", [1e-9, 0.01, 0.3, 0.5, 0.9])
    def test_inverse(self, p):
        """Q(Q⁻¹(p)) = p."""
        assert detector.q_function(detector.q_inverse(p)) == pytest.approx(p, rel=1e-10)

    @pytest.mark.parametrize("p", [0.0, 1.0, -0.1])
    def test_inverse_domain(self, p):
        """Q⁻¹ is defined on (0, 1)."""
        with pytest.raises(DomainError):
            detector.q_inverse(p)


# =============================================================================
# Statistic and decisions
# =============================================================================

M0 = np.array([1.0 + 0.0j, 0.5j, -0.25])
M1 = np.array([0.5 + 0.5j, 0.0, 0.25])
COV = 0.8


class TestStatistic:
    """𝕋(y), Γ and the decision rule."""

    def test_statistic_formula(self):
        """𝕋(y) = 2Re{(m₁* − m₀)†y}/cov₀."""
        y = np.array([0.3, -0.2j, 1.0])
        expected = 2 * np.real(np.vdot(M1 - M0, y)) / COV
        assert detector.test_statistic(y, M0, M1, COV) == pytest.approx(expected)

    def test_statistic_batch(self):
        """A stack of observations gives one statistic per row."""
        Y = np.array([[0.3, -0.2j, 1.0], [1.0, 1.0, 1.0]])
        values = detector.test_statistic(Y, M0, M1, COV)
        assert values.shape == (2,)
        assert values[1] == pytest.approx(detector.test_statistic(Y[1], M0, M1, COV))

    def test_statistic_shape_mismatch(self):
        """Observation and means must agree in length."""
        with pytest.raises(DimensionMismatchError):
            detector.test_statistic(np.zeros(2), M0, M1, COV)
        with pytest.raises(DimensionMismatchError):
            detector.test_statistic(np.zeros(3), M0, M1[:2], COV)

    def test_non_positive_covariance(self):
        """cov₀ must be positive."""
        with pytest.raises(DomainError):
            detector.test_statistic(np.zeros(3), M0, M1, 0.0)

    def test_threshold(self):
        """Γ = ln λ + Re{(m₁* − m₀)†(m₁* + m₀)}/cov₀."""
        offset = np.real(np.vdot(M1 - M0, M1 + M0)) / COV
        assert detector.threshold_gamma(2.0, M0, M1, COV) == pytest.approx(math.log(2.0) + offset)

    def test_threshold_rejects_non_positive_lambda(self):
        """λ > 0."""
        with pytest.raises(DomainError):
            detector.threshold_gamma(0.0, M0, M1, COV)

    def test_statistic_is_log_likelihood_ratio(self, rng):
        """𝕋(y) − Γ(1) equals ln f₁(y) − ln f₀(y) for matched covariances."""
        model0 = GaussianObsModel(mean=M0, cov_scalar=COV)
        model1 = GaussianObsModel(mean=M1, cov_scalar=COV)
        for y in draw_observations(M0, COV, rng, size=20):
            llr = log_likelihood(y, model1) - log_likelihood(y, model0)
            linear = detector.test_statistic(y, M0, M1, COV) - detector.threshold_gamma(1.0, M0, M1, COV)
            assert linear == pytest.approx(llr, abs=1e-10)

    def test_decisions(self):
        """Observations at m₁* are malicious and at m₀ legitimate for λ = 1."""
        assert detector.decide(M1, M0, M1, COV, 1.0) is detector.Decision.MALICIOUS
        assert detector.decide(M0, M0, M1, COV, 1.0) is detector.Decision.LEGITIMATE

    @pytest.mark.parametrize(
        ("lam", "expected"),
        [(0.5, "malicious"), (1.0, "malicious"), (2.0, "legitimate")],
    )
    def test_degenerate_decision(self, lam, expected):
        """With m₁* = m₀ the decision is constant: malicious iff ln λ ≤ 0."""
        assert detector.decide(np.ones(3), M0, M0, COV, lam).value == expected


# =============================================================================
# Rates
# =============================================================================

class TestRates:
    """Closed-form α and β."""

    def test_rates_formula(self):
        """α = Q((ln λ + D)/√(2D)), β = Q((ln λ − D)/√(2D))."""
        kl, lam = 2.5, 3.0
        rates = detector.rates_from_kl(kl, lam)
        spread = math.sqrt(2 * kl)
        assert rates.alpha == pytest.approx(detector.q_function((math.log(lam) + kl) / spread))
        assert rates.beta == pytest.approx(detector.q_function((math.log(lam) - kl) / spread))

    def test_detection_dominates_false_positive(self):
        """β ≥ α for any D > 0."""
        for lam in np.geomspace(1e-3, 1e3, 25):
            rates = detector.rates_from_kl(0.7, float(lam))
            assert rates.beta >= rates.alpha

    @pytest.mark.parametrize(("lam", "expected"), [(0.5, 1.0), (1.0, 1.0), (2.0, 0.0)])
    def test_degenerate_rates(self, lam, expected):
        """Below the KL floor α = β = 𝟙(ln λ ≤ 0)."""
        rates = detector.rates_from_kl(0.0, lam)
        assert rates.alpha == expected
        assert rates.beta == expected

    def test_rates_reject_bad_lambda(self):
        """λ > 0."""
        with pytest.raises(DomainError):
            detector.rates_from_kl(1.0, -1.0)

    def test_analytic_rates_use_min_kl(self, roc_scenario):
        """analytic_rates is rates_from_kl at D(θ₁)."""
        theta1 = 0.4 * math.pi
        assert detector.analytic_rates(roc_scenario, theta1, 1.5) == detector.rates_from_kl(
            min_kl_at(roc_scenario, theta1), 1.5
        )

    def test_roc_curve_monotone(self):
        """Raising λ lowers both rates."""
        curve = detector.roc_curve(1.2, np.geomspace(1e-3, 1e3, 50))
        alphas = [pair.alpha for pair in curve]
        betas = [pair.beta for pair in curve]
        assert alphas == sorted(alphas, reverse=True)
        assert betas == sorted(betas, reverse=True)

    @pytest.mark.parametrize("theta1_pi", [0.4, 0.45])
    def test_higher_snr_roc_dominates(self, scenario_factory, theta1_pi):
        """Across the 0 dB curve's 50 λ points the 5 dB curve detects more at the same α."""
        theta1 = theta1_pi * math.pi
        low = min_kl_at(scenario_factory(snr=1.0), theta1)
        high = min_kl_at(scenario_factory(snr=10 ** 0.5), theta1)
        assert high > low
        for pair in detector.roc_curve(low, np.geomspace(1e-3, 1e3, 50)):
            assert 0.0 < pair.alpha < 1.0
            matched = detector.rates_from_kl(high, detector.neyman_pearson_threshold(high, pair.alpha))
            assert matched.alpha == pytest.approx(pair.alpha, rel=1e-9)
            assert matched.beta > pair.beta

    def test_rate_pair_bounds(self):
        """Rates are probabilities."""
        with pytest.raises(ValidationError):
            detector.RatePair(alpha=1.5, beta=0.0)


# =============================================================================
# Thresholds and total error
# =============================================================================

class TestThresholds:
    """λ*, Neyman–Pearson and total error."""

    def test_total_error(self):
        """ε = P₀α + (1 − P₀)(1 − β)."""
        rates = detector.RatePair(alpha=0.1, beta=0.7)
        assert detector.total_error(rates, 0.6) == pytest.approx(0.6 * 0.1 + 0.4 * 0.3)

    def test_bayes_threshold(self):
        """λ* = P₀/(1 − P₀)."""
        assert detector.bayes_threshold(0.9) == pytest.approx(9.0)
        with pytest.raises(DomainError):
            detector.bayes_threshold(1.0)

    @pytest.mark.parametrize(("p0", "kl"), [(0.5, 0.3), (0.6, 2.0), (0.9, 5.0)])
    def test_bayes_threshold_minimizes_total_error(self, p0, kl):
        """No λ on a dense grid beats λ*."""
        best = detector.minimum_total_error(kl, p0)
        for lam in np.geomspace(1e-4, 1e4, 1000):
            assert detector.total_error(detector.rates_from_kl(kl, float(lam)), p0) >= best - 1e-12

    def test_neyman_pearson_hits_target(self):
        """α(λ_NP) = α_target."""
        lam = detector.neyman_pearson_threshold(1.7, 0.05)
        assert detector.rates_from_kl(1.7, lam).alpha == pytest.approx(0.05, rel=1e-9)

    def test_neyman_pearson_degenerate(self):
        """A perfect attack leaves no controllable threshold."""
        with pytest.raises(DomainError):
            detector.neyman_pearson_threshold(0.0, 0.05)

    def test_detector_config_alias(self):
        """λ is spelled ``lambda`` on input."""
        cfg = detector.DetectorConfig.model_validate({"lambda": 2.0, "p0_prior": 0.6})
        assert cfg.lam == 2.0
        with pytest.raises(ValidationError):
            detector.DetectorConfig(lam=-1.0)


# =============================================================================
# LVS view
# =============================================================================

class TestLvsView:
    """The detector's model of both hypotheses."""

    def test_view_matches_models(self, roc_scenario):
        """(m₀, m₁*, cov₀) come from the legitimate model and the projection."""
        theta1 = 0.45 * math.pi
        view = detector.lvs_view(roc_scenario, theta1)
        model0 = legitimate_model(roc_scenario)
        np.testing.assert_allclose(view.m0, model0.mean)
        np.testing.assert_allclose(view.m1, target_mean(roc_scenario, theta1))
        assert view.cov0 == model0.cov_scalar
        assert view.kl == pytest.approx(min_kl_at(roc_scenario, theta1), rel=1e-10)

    def test_view_defaults_to_optimal_angle(self, roc_scenario):
        """Without θ₁ the view is built at θ₁*, a perfect attack here."""
        assert detector.lvs_view(roc_scenario).kl == 0.0
