"""State-evolution map, fixed point, calibration, and predictors."""

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import norm

from sgl import (
    PointMassMixture,
    PriorSpec,
    ZeroSignal,
    admissible_interval,
    alpha_of_lambda,
    lambda_of_alpha,
    mixed_group_params,
    perfect_group_params,
    predict_metrics,
    se_fixed_point,
    se_map,
    t_func,
)
from sgl.state_evolution import (
    SEParams,
    _boundary_gap,
    _se_map_stats,
    fdp_conditional_mc,
    selection_rate_mc,
)


def fig3_params(**kwargs):
    """Characterization setting: eps=0.5, delta=0.25, sigma_w=1, gamma=0.5,
    perfect two-group layout."""
    prior = PriorSpec(PointMassMixture(0.5, 1.0), noise_sd=1.0)
    opts = dict(mc_samples=40_000, p_mc=2000, seed=11)
    opts.update(kwargs)
    return perfect_group_params(prior, gamma=0.5, delta=0.25, **opts)


class TestTFunc:
    def test_at_zero(self):
        assert t_func(0.0) == pytest.approx(0.5, abs=1e-15)

    def test_tail(self):
        assert 0.0 < t_func(10.0) < 1e-20

    def test_quadrature_oracle(self):
        # t_func(z) is the second moment of the one-sided soft threshold
        val, _ = quad(lambda x: (x - 1.0) ** 2 * norm.pdf(x), 1.0, np.inf)
        assert t_func(1.0) == pytest.approx(val, abs=1e-8)

    def test_strictly_decreasing(self):
        grid = np.linspace(-3, 6, 60)
        vals = t_func(grid)
        assert np.all(np.diff(vals) < 0)


class TestAdmissibleInterval:
    def test_lasso_unbounded_above(self):
        lo, hi = admissible_interval(1.0, 0.25)
        assert np.isinf(hi)
        # lower endpoint solves 2*T(alpha) = delta
        assert 2 * t_func(lo) == pytest.approx(0.25, abs=1e-9)

    def test_group_limit_delta_one(self):
        lo, hi = admissible_interval(0.0, 1.0)
        assert lo == pytest.approx(0.0, abs=1e-12)
        assert hi == pytest.approx(2.0, abs=1e-9)

    def test_grid_scan_oracle(self):
        gamma, delta = 0.5, 0.2
        lo, hi = admissible_interval(gamma, delta)
        grid = np.arange(0.0, 5.0, 1e-4)
        inside = grid[_boundary_gap(grid, gamma) ** 2 <= delta]
        assert abs(lo - inside.min()) <= 1e-4
        assert abs(hi - inside.max()) <= 1e-4

    def test_invalid_delta(self):
        with pytest.raises(ValueError):
            admissible_interval(0.5, 0.0)


class TestSEMap:
    def test_zero_fixed_point(self):
        params = mixed_group_params(PriorSpec(ZeroSignal(), 0.0), 0.5, 0.5,
                                    mc_samples=4000, p_mc=1000)
        assert se_map(0.0, 1.0, params) == 0.0

    def test_lasso_null_closed_form(self):
        # gamma=1, zero signal: F = sigma_w^2 + (tau^2/delta) * 2*T(alpha)
        params = mixed_group_params(PriorSpec(ZeroSignal(), 0.5), 1.0, 0.5,
                                    mc_samples=100_000, p_mc=2000, seed=3)
        tau_sq, alpha = 1.7, 1.1
        est, stderr = _se_map_stats(tau_sq, alpha, params)
        closed = 0.25 + (tau_sq / 0.5) * 2 * t_func(alpha)
        assert abs(est - closed) <= 3 * stderr + 1e-12

    def test_monotone_in_tau_sq(self):
        params = fig3_params()
        grid = np.linspace(0.1, 6.0, 8)
        vals = [se_map(t, 1.0, params) for t in grid]
        assert np.all(np.diff(vals) > -1e-9)

    def test_common_random_numbers(self):
        params = fig3_params()
        assert se_map(2.0, 1.0, params) == se_map(2.0, 1.0, params)

    def test_rejects_negative(self):
        params = fig3_params()
        with pytest.raises(ValueError):
            se_map(-1.0, 1.0, params)
        with pytest.raises(ValueError):
            se_map(1.0, -1.0, params)


class TestFixedPoint:
    def test_zero_prior_zero_noise(self):
        params = mixed_group_params(PriorSpec(ZeroSignal(), 0.0), 0.5, 0.5,
                                    mc_samples=4000, p_mc=1000)
        out = se_fixed_point(1.0, params)
        assert out.tau_star == 0.0
        assert out.predicted_mse == 0.0

    def test_monotone_schedule(self):
        params = fig3_params()
        out = se_fixed_point(1.0, params)
        diffs = np.diff(np.asarray(out.tau_schedule) ** 2)
        assert np.all(diffs <= 1e-9) or np.all(diffs >= -1e-9)

    def test_above_alpha_max_warns_but_converges(self):
        params = fig3_params()
        _, hi = admissible_interval(0.5, 0.25)
        with pytest.warns(UserWarning, match="admissible"):
            out = se_fixed_point(hi + 0.3, params)
        assert np.isfinite(out.tau_star)

    def test_deterministic(self):
        params = fig3_params()
        a = se_fixed_point(1.0, params)
        b = se_fixed_point(1.0, params)
        assert a.tau_star == b.tau_star
        np.testing.assert_array_equal(a.tau_schedule, b.tau_schedule)


class TestCalibration:
    def test_zero_prior_zero_noise_lambda(self):
        params = mixed_group_params(PriorSpec(ZeroSignal(), 0.0), 0.5, 0.5,
                                    mc_samples=4000, p_mc=1000)
        assert lambda_of_alpha(1.0, params) == 0.0

    def test_fig3_anchor(self):
        params = fig3_params()
        assert lambda_of_alpha(1.0, params) == pytest.approx(0.32, abs=0.05)

    def test_lambda_monotone_in_alpha(self):
        params = fig3_params(mc_samples=20_000)
        grid = np.linspace(0.75, 1.6, 6)
        lams = [lambda_of_alpha(a, params) for a in grid]
        assert np.all(np.diff(lams) > -1e-3)

    def test_alpha_of_lambda_fig3(self):
        params = fig3_params()
        assert alpha_of_lambda(0.32, params) == pytest.approx(1.0, abs=0.05)

    def test_round_trip(self):
        params = fig3_params(mc_samples=20_000)
        for a in (0.9, 1.1, 1.3):
            lam = lambda_of_alpha(a, params)
            assert abs(alpha_of_lambda(lam, params) - a) <= 1e-3

    def test_lambda_above_max_rejected(self):
        params = fig3_params(mc_samples=20_000)
        with pytest.raises(ValueError, match="lambda_max"):
            alpha_of_lambda(1e6, params)

    def test_degenerate_lambda_zero(self):
        params = mixed_group_params(PriorSpec(ZeroSignal(), 0.0), 0.5, 0.5,
                                    mc_samples=4000, p_mc=1000)
        a = alpha_of_lambda(0.0, params)
        assert lambda_of_alpha(a, params) == pytest.approx(0.0, abs=1e-9)


class TestPredictMetrics:
    def test_huge_threshold(self):
        params = fig3_params(mc_samples=20_000)
        with pytest.warns(UserWarning):
            out = predict_metrics(8.0, params)
        assert out.tpp_inf < 0.05
        assert out.fdp_inf < 0.2

    def test_point_mass_closed_form_vs_mc(self):
        params = fig3_params()
        out = se_fixed_point(1.0, params)
        tau, c = out.tau_star, 0.5 * 1.0 * out.tau_star
        rng = np.random.default_rng(5)
        draws = 1.0 + tau * rng.standard_normal(200_000)
        mc = np.mean(np.abs(draws) > c)
        se = np.sqrt(mc * (1 - mc) / draws.size)
        pred = predict_metrics(1.0, params, outcome=out)
        assert abs(pred.tpp_inf - mc) <= 3 * se

    def test_fig3_mse_consistency(self):
        params = fig3_params()
        out = predict_metrics(1.0, params)
        fp = se_fixed_point(1.0, params)
        assert out.predicted_mse == pytest.approx(
            0.25 * (fp.tau_star**2 - 1.0), rel=1e-12
        )

    def test_ranges(self):
        params = fig3_params(mc_samples=20_000)
        out = predict_metrics(1.0, params)
        assert 0.0 <= out.tpp_inf <= 1.0
        assert 0.0 <= out.fdp_inf <= 1.0

    def test_zero_prior_conventions(self):
        params = mixed_group_params(PriorSpec(ZeroSignal(), 1.0), 0.5, 0.5,
                                    mc_samples=4000, p_mc=1000)
        out = predict_metrics(1.0, params)
        assert np.isnan(out.tpp_inf)
        assert out.fdp_inf == 1.0

    def test_fdp_two_expressions_agree(self):
        params = fig3_params()
        out = se_fixed_point(1.0, params)
        pred = predict_metrics(1.0, params, outcome=out)
        cond = fdp_conditional_mc(1.0, params, outcome=out)
        # conditional-probability estimate vs closed-form ratio
        assert abs(pred.fdp_inf - cond) <= 0.02

    def test_full_prox_selection_rate_reported(self):
        params = fig3_params()
        out = se_fixed_point(1.0, params)
        rate = selection_rate_mc(1.0, params, outcome=out)
        assert 0.0 <= rate <= 1.0


class TestFProperties:
    def test_concavity_second_differences(self):
        params = fig3_params()
        grid = np.linspace(0.3, 5.0, 10)
        stats = [_se_map_stats(t, 1.0, params) for t in grid]
        vals = np.array([s[0] for s in stats])
        errs = np.array([s[1] for s in stats])
        second = np.diff(vals, 2)
        pooled = np.sqrt(errs[:-2] ** 2 + 4 * errs[1:-1] ** 2 + errs[2:] ** 2)
        assert np.all(second <= 3 * pooled + 1e-9)

    def test_contraction_at_fixed_point(self):
        params = fig3_params()
        out = se_fixed_point(1.0, params)
        t2 = out.tau_star**2
        h = 0.05 * t2
        slope = (se_map(t2 + h, 1.0, params) - se_map(t2 - h, 1.0, params)) / (2 * h)
        assert abs(slope) < 1.0


class TestParams:
    def test_ratio_validation(self):
        with pytest.raises(ValueError, match="sum"):
            SEParams(gamma=0.5, delta=0.5, prior=PriorSpec(ZeroSignal(), 0.0),
                     group_ratios=(0.6, 0.6))

    def test_group_prior_length(self):
        with pytest.raises(ValueError, match="group_priors"):
            SEParams(gamma=0.5, delta=0.5, prior=PriorSpec(ZeroSignal(), 0.0),
                     group_ratios=(0.5, 0.5), group_priors=(ZeroSignal(),))

    def test_perfect_params_fraction(self):
        prior = PriorSpec(PointMassMixture(0.5, 1.0), 1.0)
        params = perfect_group_params(prior, 0.5, 0.25, signal_fraction=0.55)
        assert params.group_ratios[0] == pytest.approx(0.55)
        assert params.group_ratios[1] == pytest.approx(0.45)
        assert params.nonzero_prob == pytest.approx(0.5, abs=1e-3)
        with pytest.raises(ValueError):
            perfect_group_params(prior, 0.5, 0.25, signal_fraction=0.4)
