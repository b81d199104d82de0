import numpy as np
import pandas as pd
import pytest

from labourfit.econometrics import (
    EconometricsError,
    RankDeficiencyError,
    RegressionSpec,
    _repair_psd,
    cluster_covariance,
    fit_twoway_fe,
    leave_one_out,
    run_table,
    standard_specs,
)

from oracles import statsmodels_twoway_cgm


def synthetic_panel(
    n_countries=10,
    n_years=5,
    betas=(1.5, -0.8),
    noise=1.0,
    country_shock=0.0,
    seed=42,
    drop_fraction=0.0,
):
    rng = np.random.default_rng(seed)
    rows = []
    alpha = rng.normal(0, 2, n_countries)
    tau = rng.normal(0, 1, n_years)
    shocks = rng.normal(0, country_shock, n_countries)
    for c in range(n_countries):
        for t in range(n_years):
            x = rng.normal(0, 1, len(betas))
            y = alpha[c] + tau[t] + float(np.dot(betas, x)) + shocks[c] + rng.normal(0, noise)
            rows.append({"country": f"C{c:02d}", "year": 2000 + t, "y": y,
                         **{f"x{j+1}": x[j] for j in range(len(betas))}})
    frame = pd.DataFrame(rows)
    if drop_fraction:
        keep = rng.uniform(size=len(frame)) > drop_fraction
        keep[:: n_years] = True  # every country keeps its first year
        frame = frame[keep].reset_index(drop=True)
    return frame


def spec_for(frame, regressors=("x1", "x2"), outcome="y", cluster="twoway"):
    return RegressionSpec(outcome=outcome, regressors=tuple(regressors), cluster=cluster)


def dummy_design_beta(frame, outcome, regressors):
    """Independent estimate: OLS with explicit intercept + FE dummies."""
    x = frame[list(regressors)].to_numpy(dtype=float)
    countries = pd.get_dummies(frame["country"], drop_first=True).to_numpy(dtype=float)
    years = pd.get_dummies(frame["year"], drop_first=True).to_numpy(dtype=float)
    design = np.column_stack([x, countries, years, np.ones(len(frame))])
    beta, *_ = np.linalg.lstsq(design, frame[outcome].to_numpy(dtype=float), rcond=None)
    return beta[: len(regressors)]


class TestSpecValidation:
    def test_needs_regressor(self):
        with pytest.raises(EconometricsError, match="at least one"):
            RegressionSpec(outcome="y", regressors=())

    def test_between_plus_total_rejected(self):
        with pytest.raises(EconometricsError, match="jointly"):
            RegressionSpec(outcome="y", regressors=("between", "dlwf"))

    def test_all_three_rejected(self):
        with pytest.raises(EconometricsError, match="collinear"):
            RegressionSpec(outcome="y", regressors=("between", "within", "dlwf"))

    def test_entropy_family_guarded(self):
        with pytest.raises(EconometricsError, match="jointly"):
            RegressionSpec(outcome="y", regressors=("between_s", "dlws"))

    def test_unknown_cluster(self):
        with pytest.raises(EconometricsError, match="cluster"):
            RegressionSpec(outcome="y", regressors=("x",), cluster="region")


class TestFit:
    def test_noiseless_exact_recovery(self):
        frame = synthetic_panel(betas=(2.0,), noise=0.0, seed=7)
        fit = fit_twoway_fe(frame, spec_for(frame, ("x1",)))
        assert fit.params["x1"] == pytest.approx(2.0, abs=1e-10)
        assert fit.r2 == pytest.approx(1.0, abs=1e-10)
        assert fit.within_r2 == pytest.approx(1.0, abs=1e-10)

    @pytest.mark.parametrize("seed", range(20))
    def test_fwl_equivalence_unbalanced(self, seed):
        frame = synthetic_panel(n_countries=6, n_years=6, seed=seed, drop_fraction=0.25)
        fit = fit_twoway_fe(frame, spec_for(frame))
        reference = dummy_design_beta(frame, "y", ("x1", "x2"))
        assert np.allclose(fit.params.to_numpy(), reference, atol=1e-8)

    def test_constant_shift_absorbed(self):
        frame = synthetic_panel(seed=3)
        base = fit_twoway_fe(frame, spec_for(frame))
        shifted = frame.assign(y=frame["y"] + 1234.5)
        again = fit_twoway_fe(shifted, spec_for(shifted))
        assert np.allclose(base.params.to_numpy(), again.params.to_numpy(), atol=1e-10)

    def test_rank_deficiency_names_column(self):
        frame = synthetic_panel(seed=5)
        frame["x_dup"] = frame["x1"]
        with pytest.raises(RankDeficiencyError) as excinfo:
            fit_twoway_fe(frame, spec_for(frame, ("x1", "x_dup")))
        assert set(excinfo.value.columns) <= {"x1", "x_dup"}

    def test_fe_constant_regressor_rank_deficient(self):
        frame = synthetic_panel(seed=5)
        frame["per_country"] = frame["country"].map(lambda c: float(hash(c) % 7))
        with pytest.raises(RankDeficiencyError, match="per_country"):
            fit_twoway_fe(frame, spec_for(frame, ("x1", "per_country")))

    def test_casewise_deletion_counts(self):
        frame = synthetic_panel(seed=11)
        frame.loc[3, "x1"] = np.nan
        fit = fit_twoway_fe(frame, spec_for(frame))
        assert fit.n == len(frame) - 1

    def test_too_few_rows(self):
        frame = synthetic_panel(n_countries=3, n_years=2, seed=2)
        with pytest.raises(EconometricsError, match="identify"):
            fit_twoway_fe(frame.head(6), spec_for(frame))

    def test_single_observation_group_warns(self, caplog):
        import logging

        frame = synthetic_panel(n_countries=5, n_years=4, seed=9)
        frame = frame[~((frame.country == "C00") & (frame.year > 2000))]
        with caplog.at_level(logging.WARNING):
            fit_twoway_fe(frame, spec_for(frame))
        assert "single observation" in caplog.text

    def test_within_r2_near_zero_for_noise(self):
        rng = np.random.default_rng(123)
        n_countries, n_years = 50, 10  # n = 500
        rows = [
            {"country": f"C{c}", "year": t, "y": rng.normal(), "x1": rng.normal()}
            for c in range(n_countries)
            for t in range(n_years)
        ]
        frame = pd.DataFrame(rows)
        fit = fit_twoway_fe(frame, spec_for(frame, ("x1",)))
        assert fit.within_r2 < 0.05
        # independent closed-form check of the slope on demeaned data
        x_d = fit.design[:, 0]
        y_d = x_d * fit.params["x1"] + fit.residuals
        assert fit.params["x1"] == pytest.approx(float(x_d @ y_d) / float(x_d @ x_d), abs=1e-12)


class TestClusterCovariance:
    def test_twoway_matches_statsmodels_reference(self):
        frame = synthetic_panel(n_countries=10, n_years=5, country_shock=2.0, seed=42)
        fit = fit_twoway_fe(frame, spec_for(frame))
        params_ref, se_ref = statsmodels_twoway_cgm(frame, "y", ["x1", "x2"])
        assert np.allclose(fit.params.to_numpy(), params_ref, atol=1e-8)
        assert np.all(np.abs(fit.se.to_numpy() - se_ref) / se_ref <= 0.10)

    def test_singleton_clusters_equal_hc1(self):
        frame = synthetic_panel(n_countries=8, n_years=4, seed=21)
        fit = fit_twoway_fe(frame, spec_for(frame, cluster="cell"))
        x, u = fit.design, fit.residuals
        n, k_all = len(u), fit.n_params
        bread = np.linalg.inv(x.T @ x)
        hc1 = (n / (n - k_all)) * bread @ (x * (u**2)[:, None]).T @ x @ bread
        assert np.allclose(fit.cov, hc1, rtol=1e-10)

    def test_single_cluster_dimension_errors(self):
        frame = synthetic_panel(n_countries=6, n_years=3, seed=2)
        frame = frame[frame.year == 2000].copy()
        frame = pd.concat([frame, frame.assign(year=2000)], ignore_index=True)
        frame["country"] = [f"C{i:02d}" for i in range(len(frame) // 2) for _ in (0, 1)]
        frame["x2"] = np.random.default_rng(0).normal(size=len(frame))
        with pytest.raises(EconometricsError, match="fewer than 2 clusters"):
            fit_twoway_fe(frame, spec_for(frame, ("x1", "x2")))

    def test_covariance_symmetric_positive_diagonal(self):
        frame = synthetic_panel(seed=13, country_shock=1.0)
        fit = fit_twoway_fe(frame, spec_for(frame))
        assert np.allclose(fit.cov, fit.cov.T)
        assert (np.diag(fit.cov) > 0).all()

    def test_scheme_switch_on_result(self):
        frame = synthetic_panel(seed=17)
        fit = fit_twoway_fe(frame, spec_for(frame))
        by_country = cluster_covariance(fit, "country")
        by_year = cluster_covariance(fit, "year")
        assert by_country.cov.shape == by_year.cov.shape == (2, 2)
        assert not np.allclose(by_country.cov, by_year.cov)

    def test_repair_psd_counts_negatives(self):
        bad = np.array([[1.0, 0.0], [0.0, -0.5]])
        repaired, flagged, count = _repair_psd(bad)
        assert flagged and count == 1
        assert np.linalg.eigvalsh(repaired).min() >= 0

    def test_scale_flag_scales_estimates(self):
        frame = synthetic_panel(seed=31)
        base = fit_twoway_fe(frame, spec_for(frame))
        scaled = fit_twoway_fe(frame, spec_for(frame), scale=100.0)
        assert np.allclose(scaled.params.to_numpy(), base.params.to_numpy() / 100.0, rtol=1e-10)
        assert np.allclose(scaled.se.to_numpy(), base.se.to_numpy() / 100.0, rtol=1e-10)

    def test_use_t_widens_pvalues(self):
        frame = synthetic_panel(seed=37, country_shock=1.0)
        normal = fit_twoway_fe(frame, spec_for(frame))
        student = fit_twoway_fe(frame, spec_for(frame), use_t=True)
        assert (student.pvalues.to_numpy() >= normal.pvalues.to_numpy() - 1e-12).all()


class TestLeaveOneOut:
    def test_exactly_n_results(self):
        frame = synthetic_panel(n_countries=7, seed=3)
        results = leave_one_out(frame, spec_for(frame, ("x1", "x2")), target="x1")
        assert [r.excluded for r in results] == sorted(frame["country"].unique())

    def test_absent_country_errors(self):
        frame = synthetic_panel(seed=3)
        with pytest.raises(EconometricsError, match="absent"):
            leave_one_out(frame, spec_for(frame), target="x1", countries=["ZZ"])

    def test_needs_three_countries(self):
        frame = synthetic_panel(n_countries=2, n_years=8, seed=3)
        with pytest.raises(EconometricsError, match="3 countries"):
            leave_one_out(frame, spec_for(frame), target="x1")

    def test_target_must_be_regressor(self):
        frame = synthetic_panel(seed=3)
        with pytest.raises(EconometricsError, match="target"):
            leave_one_out(frame, spec_for(frame), target="between")

    def test_duplicate_country_bitwise_identical(self):
        # Noiseless integer data on a balanced 5x4 panel: after excluding one
        # duplicate, all group counts are powers of two, every demeaning step
        # is exact in float64, and the residuals are exactly zero, so the two
        # exclusion runs are numerically indistinguishable bit for bit.
        rng = np.random.default_rng(8)
        rows = []
        for c in range(4):
            for t in range(4):
                x = int(rng.integers(-4, 5))
                alpha, tau = 2 * c, 3 * t
                rows.append({"country": f"C{c}", "year": t, "x1": float(x), "y": float(2 * x + alpha + tau)})
        frame = pd.DataFrame(rows)
        twin = frame[frame.country == "C0"].assign(country="C9")
        frame = pd.concat([frame, twin], ignore_index=True)
        results = {r.excluded: r for r in leave_one_out(frame, spec_for(frame, ("x1",)), target="x1")}
        assert results["C0"].estimate == results["C9"].estimate
        assert results["C0"].se == results["C9"].se
        assert results["C0"].significant == results["C9"].significant
        assert results["C0"].estimate == pytest.approx(2.0, abs=1e-12)
        full = fit_twoway_fe(frame, spec_for(frame, ("x1",)))
        assert results["C0"].estimate == pytest.approx(float(full.params["x1"]), abs=1e-10)

    def test_extreme_country_shifts_most(self):
        rng = np.random.default_rng(15)
        frame = synthetic_panel(n_countries=8, n_years=6, betas=(1.0,), noise=0.3, seed=15)
        bend = (frame.country == "C07")
        frame.loc[bend, "x1"] = frame.loc[bend, "x1"] * 6
        frame.loc[bend, "y"] = frame.loc[bend, "y"] + 5.0 * frame.loc[bend, "x1"]
        full = fit_twoway_fe(frame, spec_for(frame, ("x1",)))
        results = leave_one_out(frame, spec_for(frame, ("x1",)), target="x1")
        shifts = {r.excluded: abs(r.estimate - float(full.params["x1"])) for r in results}
        assert max(shifts, key=shifts.get) == "C07"
        # independent check: refit by dummy design without C07
        manual = dummy_design_beta(frame[frame.country != "C07"], "y", ("x1",))[0]
        loo_c07 = next(r for r in results if r.excluded == "C07")
        assert loo_c07.estimate == pytest.approx(manual, abs=1e-8)

    def test_failures_recorded_and_sweep_continues(self):
        frame = synthetic_panel(n_countries=4, n_years=5, seed=19)
        # x2 duplicates x1 except in country C03: removing C03 makes it collinear
        frame["x2"] = frame["x1"]
        mask = frame.country == "C03"
        frame.loc[mask, "x2"] = frame.loc[mask, "x1"] + np.random.default_rng(1).normal(size=mask.sum())
        results = leave_one_out(frame, spec_for(frame, ("x1", "x2")), target="x1")
        by_country = {r.excluded: r for r in results}
        assert by_country["C03"].error is not None
        assert sum(r.error is None for r in results) == 3


class TestRunTable:
    def panel(self):
        rng = np.random.default_rng(77)
        rows = []
        for c in range(6):
            for t in range(6):
                between, within = rng.normal(size=2) * 0.01
                controls = rng.normal(size=4)
                rows.append(
                    {
                        "country": f"C{c}",
                        "year": 2010 + t,
                        "g_pct": rng.normal(),
                        "between": between,
                        "within": within,
                        "dlwf": between + within,
                        "between_s": between * 2,
                        "within_s": within * 2,
                        "dlws": (between + within) * 2,
                        "log_pop": 10 + controls[0],
                        "log_gdppc": 9 + controls[1],
                        "rd_gdp": 2 + controls[2],
                        "exports_gdp": 60 + controls[3],
                    }
                )
        return pd.DataFrame(rows)

    def test_four_model_layout(self):
        table = run_table(self.panel(), standard_specs("g_pct"))
        assert sorted(table["model"].unique()) == [1, 2, 3, 4]
        model1 = table[table.model == 1]
        assert model1["term"].tolist()[0] == "between"
        assert set(model1["term"]) == {"between", "log_pop", "log_gdppc", "rd_gdp", "exports_gdp"}
        model4 = table[table.model == 4]
        assert {"between", "within"} <= set(model4["term"])
        assert {"n", "r2", "within_r2", "stars", "se", "estimate", "label"} <= set(table.columns)

    def test_entropy_labels_present(self):
        table = run_table(self.panel(), standard_specs("g_pct", entropy=True))
        assert {"Between (Entropy)", "Within (Entropy)"} <= set(table["label"])

    def test_empty_spec_set_errors(self):
        with pytest.raises(EconometricsError, match="empty"):
            run_table(self.panel(), [])

    def test_failures_propagate_per_cell(self, caplog):
        import logging

        frame = self.panel()
        frame["between"] = 0.0  # no within variation -> rank deficient in model 1 and 4
        with caplog.at_level(logging.WARNING):
            table = run_table(frame, standard_specs("g_pct"))
        assert (table[table.model == 2]["term"] == "within").any()
        assert "<error>" in set(table[table.model == 1]["term"])
