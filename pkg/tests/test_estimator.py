from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from numpy.testing import assert_allclose, assert_array_equal
from scipy import optimize

from aparchlm.aparch import PRESETS, AparchParams, DistSpec, filter, simulate
from aparchlm.errors import DataError, InsufficientDataError, RankDeficiencyError
from aparchlm.estimator import (
    FitResult,
    ModelSearchError,
    OptimizerConfig,
    _Layout,
    delta_power_tests,
    fit,
    format_report,
    information_criteria,
    model_search,
    numerical_hessian,
    param_names,
    robust_se,
    sandwich,
    standardized_residuals,
)
from aparchlm.longmem import power_sweep
from aparchlm.series import ReturnSeries

from helpers import GILT_TRUTH, RECOVERY_SEEDS, gilt_fit

GARCH = AparchParams(alpha0=0.05, alpha=(0.08,), beta=(0.9,), gamma=(0.0,), delta=2.0, mu=0.02)
APARCH = AparchParams(alpha0=0.02, alpha=(0.08,), beta=(0.9,), gamma=(-0.1,), delta=1.5)


@pytest.fixture(scope="module")
def aparch_fit():
    r = simulate(APARCH, DistSpec(), 4000, seed=21)
    return r, fit(r)


def garch_loglik(th, r):
    """Independent Gaussian GARCH(1,1) likelihood with the same start-up convention."""
    mu, w, a, b = th
    if w <= 0 or a < 0 or b < 0 or a + b >= 1:
        return -np.inf
    e = r - mu
    h = np.empty_like(r)
    h[0] = np.mean((r - r.mean()) ** 2)
    for t in range(1, r.size):
        h[t] = w + a * e[t - 1] ** 2 + b * h[t - 1]
    return float(np.sum(-0.5 * np.log(2 * np.pi) - 0.5 * np.log(h[1:]) - 0.5 * e[1:] ** 2 / h[1:]))


class TestCriteria:
    def test_gilt(self):
        c = information_criteria(384241, 9, 57227)
        assert round(c["aic_total"]) == -768464
        assert round(c["bic_total"]) == -768383

    def test_sterling(self):
        c = information_criteria(221382, 9, 27406)
        assert round(c["aic_total"]) == -442746
        assert round(c["bic_total"]) == -442672

    def test_zero(self):
        c = information_criteria(0.0, 0, 10)
        assert c == {"aic_total": 0.0, "bic_total": 0.0, "aic_per_obs": 0.0, "bic_per_obs": 0.0}

    def test_needs_more_obs_than_params(self):
        with pytest.raises(DataError):
            information_criteria(1.0, 5, 5)

    @given(st.floats(-1e7, 1e7), st.integers(0, 50), st.integers(51, 10**7))
    def test_identity(self, ll, k, n):
        c = information_criteria(ll, k, n)
        assert c["aic_total"] == -2 * ll + 2 * k
        assert c["bic_total"] == -2 * ll + k * math.log(n)
        assert c["aic_per_obs"] == c["aic_total"] / n
        assert c["bic_per_obs"] == c["bic_total"] / n


class TestDeltaTests:
    def test_ftse_row(self):
        assert delta_power_tests(1.07, 0.00766)["t_vs_1"] == pytest.approx(9.14, abs=0.005)

    @given(st.floats(1e-6, 10.0))
    def test_nulls(self, se):
        assert delta_power_tests(1.0, se)["t_vs_1"] == 0.0
        assert delta_power_tests(2.0, se)["t_vs_2"] == 0.0

    def test_missing_se(self):
        assert math.isnan(delta_power_tests(1.5, None)["t_vs_1"])

    def test_gilt_ar_division(self):
        se = 0.53 / 30.13
        assert se == pytest.approx(0.0176, abs=5e-5)
        assert 0.53 / se == pytest.approx(30.13)


class TestSandwich:
    def test_quadratic_closed_form(self):
        c = np.array([4.0, 25.0, 0.5])
        H = numerical_hessian(lambda x: -0.5 * float(np.sum(c * x**2)), np.zeros(3), np.full(3, 1e-3))
        assert_allclose(H, -np.diag(c), atol=1e-6)
        cov = sandwich(H, np.diag(c))
        assert_allclose(np.sqrt(np.diag(cov)), 1 / np.sqrt(c), rtol=1e-6)

    def test_diagonally_dominant(self):
        A = np.array([[5.0, 0.5, 0.1], [0.5, 3.0, 0.2], [0.1, 0.2, 2.0]])
        H = numerical_hessian(lambda x: -0.5 * float(x @ A @ x), np.ones(3), np.full(3, 1e-3))
        assert_allclose(sandwich(H, A), np.linalg.inv(A), rtol=1e-6)

    def test_rank_deficiency_names_direction(self):
        with pytest.raises(RankDeficiencyError) as info:
            sandwich(-np.diag([1.0, 0.0, 2.0]), np.eye(3), ["a", "b", "c"])
        assert info.value.direction == "b"


class TestLayout:
    @pytest.mark.parametrize("order,dist", [((1, 1, 0, 0), DistSpec()), ((2, 1, 1, 1), DistSpec("t", 6.0)),
                                            ((1, 2, 2, 0), DistSpec("ged", 1.5))])
    def test_round_trip(self, order, dist):
        layout = _Layout(order, dist, None)
        u = np.random.default_rng(0).normal(size=layout.k)
        assert_allclose(layout.unconstrained(layout.theta(u)), u, atol=1e-9)

    @settings(max_examples=200, deadline=None)
    @given(arrays(float, 12, elements=st.floats(-30, 30)))
    def test_every_point_is_valid(self, u):
        layout = _Layout((1, 2, 1, 1), DistSpec("t", 5.0), {"gamma[1]": 0.2})
        params, dist = layout.params(layout.theta(u[: layout.k]), check=True)
        assert params.persistence <= 1.0 and dist.shape > 2

    def test_unknown_fixed(self):
        with pytest.raises(DataError):
            _Layout((1, 1, 0, 0), DistSpec(), {"theta": 1.0})

    def test_names(self):
        assert param_names((1, 1, 1, 1), DistSpec("t", 5.0)) == [
            "mu", "ar[1]", "ma[1]", "alpha0", "alpha[1]", "gamma[1]", "beta[1]", "delta", "nu"]


class TestFit:
    def test_refuses_small_samples(self):
        with pytest.raises(InsufficientDataError):
            fit(np.random.default_rng(0).standard_normal(199))

    def test_rejects_non_finite(self):
        r = np.random.default_rng(0).standard_normal(500)
        r[3] = np.nan
        with pytest.raises(DataError):
            fit(r)

    def test_result_fields(self, aparch_fit):
        r, res = aparch_fit
        assert res.converged
        assert res.k_params == 6
        assert res.n_used == r.n - 1
        assert set(res.se_robust) == set(res.free_names)
        assert all(v > 0 for v in res.se_robust.values())
        for name in res.free_names:
            assert res.t_stats[name] == res.estimates[name] / res.se_robust[name]
        assert res.loglik == pytest.approx(filter(r, res.params).loglik, rel=1e-12)

    def test_monotone_path(self, aparch_fit):
        path = aparch_fit[1].loglik_path
        assert all(b >= a for a, b in zip(path, path[1:]))

    def test_deterministic(self, aparch_fit):
        r, res = aparch_fit
        assert fit(r).to_json() == res.to_json()

    def test_json_round_trip(self, aparch_fit, tmp_path):
        res = aparch_fit[1]
        (tmp_path / "f.json").write_text(res.to_json())
        back = FitResult.read_json(tmp_path / "f.json")
        assert back.to_json() == res.to_json()

    def test_report(self, aparch_fit):
        text = format_report(aparch_fit[1], "sim")
        assert text.startswith("sim: ARMA(0, 0)-APARCH(1, 1)")
        assert "***" in text and "Likelihood" in text

    def test_non_convergence_is_reported(self):
        r = simulate(APARCH, DistSpec(), 2000, seed=2)
        res = fit(r, config=OptimizerConfig(max_iterations=1, n_starts=1))
        assert not res.converged
        assert "iteration limit" in res.messages[0]

    def test_garch_profile_matches_oracle(self):
        for seed in range(3):
            r = simulate(GARCH, DistSpec(), 3000, seed=seed).values
            res = fit(r, (1, 1, 0, 0), fixed={"delta": 2.0, "gamma[1]": 0.0})
            best = -np.inf
            for x0 in ([r.mean(), 0.1 * r.var(), 0.1, 0.8], [r.mean(), 0.05 * r.var(), 0.05, 0.9]):
                out = optimize.minimize(lambda th: -garch_loglik(th, r), x0, method="Nelder-Mead",
                                        options=dict(xatol=1e-10, fatol=1e-10, maxiter=20000, maxfev=40000))
                best = max(best, -out.fun)
            assert res.loglik >= best - 1e-4
            assert res.k_params == 4

    def test_null_recovery(self):
        # alpha is identified at zero; beta is not (the likelihood is flat along
        # alpha0 / (1 - beta) once alpha = 0), so the beta check is that the
        # fitted model is no better than a constant variance.
        null = AparchParams(alpha0=1e-4, alpha=(0.0,), beta=(0.0,), delta=2.0)
        within = 0
        for seed in range(8):
            r = simulate(null, DistSpec(), 5000, seed=seed)
            res = fit(r, (1, 1, 0, 0), fixed={"delta": 2.0, "gamma[1]": 0.0})
            a, se = res.estimates["alpha[1]"], res.se_robust["alpha[1]"]
            within += not (abs(a) > 2 * se)
            x = r.values[1:]
            const = -0.5 * x.size * (np.log(2 * np.pi * x.var()) + 1)
            assert 2 * (res.loglik - const) < 12
        assert within >= 6

    def test_fixed_parameters_kept(self):
        r = simulate(APARCH, DistSpec(), 2000, seed=3)
        res = fit(r, fixed={"delta": 1.5})
        assert res.params.delta == 1.5
        assert "delta" not in res.se_robust and res.k_params == 5
        assert "(fixed)" in format_report(res)

    @pytest.mark.parametrize("dist,name", [(DistSpec("t", 6.0), "nu"), (DistSpec("ged", 1.3), "shape")])
    def test_shape_estimated(self, dist, name):
        r = simulate(APARCH, dist, 4000, seed=8)
        res = fit(r, dist=dist.family)
        assert name in res.estimates and res.k_params == 7
        assert abs(res.estimates[name] - dist.shape) < 4 * res.se_robust[name]


class TestRobustSe:
    def test_matches_fit(self, aparch_fit):
        r, res = aparch_fit
        se = robust_se(r, res)
        assert_allclose([se["robust"][k] for k in res.free_names],
                        [res.se_robust[k] for k in res.free_names], rtol=1e-6)

    def test_numerical_hessian_option_agrees(self):
        r = simulate(GARCH, DistSpec(), 5000, seed=4)
        res = fit(r, fixed={"delta": 2.0, "gamma[1]": 0.0})
        num = robust_se(r, res, hessian="numerical")["robust"]
        for k in res.free_names:
            assert num[k] == pytest.approx(res.se_robust[k], rel=0.2)

    def test_smoothing_leaves_smooth_model_alone(self):
        r = simulate(GARCH, DistSpec(), 5000, seed=4)
        res = fit(r, fixed={"delta": 2.0, "gamma[1]": 0.0})
        plain = robust_se(r, res, OptimizerConfig(se_smoothing=0.0))["robust"]
        for k in res.free_names:
            assert plain[k] == pytest.approx(res.se_robust[k], rel=0.05)

    def test_smoothing_widens_kinked_mean_parameters(self):
        p = AparchParams(alpha0=0.02, alpha=(0.1,), beta=(0.85,), gamma=(0.0,), delta=0.5, ar=(0.5,))
        r = simulate(p, DistSpec(), 5000, seed=2)
        res = fit(r, (1, 1, 1, 0), fixed={"gamma[1]": 0.0})
        plain = robust_se(r, res, OptimizerConfig(se_smoothing=0.0))["robust"]
        assert res.se_robust["ar[1]"] >= plain["ar[1]"]

    @pytest.mark.parametrize("kw", [{"se_smoothing": -0.1}, {"se_passes": 0}])
    def test_smoothing_config_validation(self, kw):
        with pytest.raises(DataError):
            OptimizerConfig(**kw)

    def test_unknown_estimator(self, aparch_fit):
        with pytest.raises(DataError):
            robust_se(*aparch_fit, hessian="bogus")

    @pytest.mark.slow
    def test_robust_equals_opg_under_correct_specification(self):
        r = simulate(AparchParams(alpha0=0.01, alpha=(0.1,), beta=(0.85,), gamma=(-0.1,), delta=1.5),
                     DistSpec(), 100_000, seed=0)
        res = fit(r)
        for k in res.free_names:
            assert res.se_robust[k] == pytest.approx(res.se_opg[k], rel=0.15), k


class TestConsistency:
    @pytest.mark.slow
    def test_rmse_shrinks_with_n(self):
        small = np.array([[gilt_fit(s, 12_500).estimates[k] for k in GILT_TRUTH] for s in RECOVERY_SEEDS])
        large = np.array([[gilt_fit(s).estimates[k] for k in GILT_TRUTH] for s in RECOVERY_SEEDS])
        truth = np.array(list(GILT_TRUTH.values()))
        rmse_small = np.sqrt(np.mean((small - truth) ** 2, axis=0))
        rmse_large = np.sqrt(np.mean((large - truth) ** 2, axis=0))
        assert np.all(rmse_large < rmse_small), dict(zip(GILT_TRUTH, rmse_large / rmse_small))


class TestModelSearch:
    def test_single_entry(self):
        r = simulate(APARCH, DistSpec(), 1000, seed=0)
        ranked = model_search(r, [(1, 1, 0, 0)], ["normal"])
        assert len(ranked) == 1 and ranked[0].converged

    def test_empty_grid(self):
        with pytest.raises(DataError):
            model_search(np.zeros(300), [], ["normal"])

    def test_all_fail(self):
        with pytest.raises(ModelSearchError) as info:
            model_search(np.random.default_rng(0).standard_normal(100), [(1, 1, 0, 0)], ["normal", "t"])
        assert len(info.value.failures) == 2

    def test_non_converged_flagged(self):
        r = simulate(APARCH, DistSpec(), 1000, seed=0)
        with pytest.raises(ModelSearchError) as info:
            model_search(r, [(1, 1, 0, 0)], ["normal"], OptimizerConfig(max_iterations=1, n_starts=1))
        assert info.value.results[0].messages[-1] == "flagged: did not converge"

    def test_ranking_independent_of_workers(self):
        r = simulate(APARCH, DistSpec(), 1500, seed=1)
        grid = [(1, 1, 0, 0), (1, 1, 1, 0)]
        a = model_search(r, grid, ["normal", "t"])
        b = model_search(r, grid, ["normal", "t"], workers=2)
        assert [x.to_json() for x in a] == [x.to_json() for x in b]
        bics = [x.bic_total for x in a]
        assert bics == sorted(bics)

    @pytest.mark.slow
    def test_student_t_dominates(self):
        wins = 0
        for seed in range(20):
            r = simulate(APARCH, DistSpec("t", 6.0), 3000, seed=seed)
            wins += model_search(r, [(1, 1, 0, 0)], ["normal", "t"])[0].dist.family == "student_t"
        assert wins >= 18

    @pytest.mark.slow
    def test_bic_prefers_no_arma(self):
        wins = 0
        for seed in range(20):
            r = simulate(APARCH, DistSpec(), 3000, seed=100 + seed)
            wins += model_search(r, [(1, 1, 0, 0), (1, 1, 1, 1)], ["normal"])[0].order == (1, 1, 0, 0)
        assert wins >= 16


class TestStandardizedResiduals:
    def test_constant_volatility_null(self):
        r = simulate(AparchParams(alpha0=1e-4, alpha=(0.0,), beta=(0.0,)), DistSpec(), 1000, seed=5)
        res = fit(r, fixed={"alpha[1]": 0.0, "beta[1]": 0.0, "gamma[1]": 0.0, "delta": 2.0})
        z = standardized_residuals(r, res)
        ratio = z.values / (r.values[1:] - res.params.mu)
        assert_allclose(ratio, ratio[0], rtol=1e-10)
        assert_array_equal(z.timestamps, r.timestamps[1:])

    def test_unit_variance_when_correct(self, aparch_fit):
        z = standardized_residuals(*aparch_fit)
        assert isinstance(z, ReturnSeries)
        assert abs(z.values.var() - 1.0) < 0.05

    def test_iid_sweep_calibration(self):
        r = simulate(AparchParams(alpha0=1e-4, alpha=(0.0,), beta=(0.0,)), DistSpec(), 20_000, seed=9)
        res = fit(r, fixed={"alpha[1]": 0.0, "beta[1]": 0.0, "gamma[1]": 0.0, "delta": 2.0})
        table = power_sweep(standardized_residuals(r, res), max_lag=1000)
        assert 20 <= np.mean([c.total for c in table.cells.values()]) <= 80
