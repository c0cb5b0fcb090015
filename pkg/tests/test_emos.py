"""Tests for the EMOS link models, estimation and rolling calibration."""
import datetime as dt
import math

import numpy as np
import pytest

from csgemos import emos, simulator
from csgemos.dataio import Dataset, ForecastCase
from csgemos.distributions import csg_point_mass, csg_crps, sample_batch
from csgemos.emos import (
    EmosCoefficients,
    FitConfig,
    GroupingScheme,
    VarianceLink,
    coefficients_from_json,
    coefficients_to_json,
    extract_features,
    fit,
    mean_crps,
    predict,
    rolling_calibrate,
    tune_window,
)
from csgemos.errors import (
    DomainError,
    GroupingError,
    InsufficientDataError,
    MissingMemberError,
    WindowTooLongError,
)

DAY = dt.timedelta(days=1)
D0 = dt.date(2021, 1, 1)


def case(members, obs=None, date=D0, station="S1"):
    return ForecastCase(date, station, tuple(float(v) for v in members), obs)


class TestGroupingScheme:
    def test_singletons(self):
        g = GroupingScheme.singletons(["m1", "m2", "m3"])
        assert g.n_groups == 3 and g.group_sizes == (1, 1, 1)

    def test_partition_enforced(self):
        with pytest.raises(GroupingError):
            GroupingScheme(("m1", "m2"), ((0,),))  # m2 unassigned
        with pytest.raises(GroupingError):
            GroupingScheme(("m1", "m2"), ((0, 1), (1,)))  # overlap
        with pytest.raises(GroupingError):
            GroupingScheme(("m1",), ())

    def test_control_plus_perturbed(self):
        g = GroupingScheme(tuple(f"m{i}" for i in range(11)), ((0,), tuple(range(1, 11))))
        assert g.n_groups == 2 and g.group_sizes == (1, 10)


class TestExtractFeatures:
    def test_single_group(self):
        g = GroupingScheme(("a", "b", "c", "d"), ((0, 1, 2, 3),))
        fv = extract_features(case([2, 2, 2, 2]), g)
        assert fv.group_sums == (8.0,)
        assert fv.ens_mean == 2.0 and fv.ens_var == 0.0 and fv.ens_md == 0.0

    def test_two_singletons(self):
        g = GroupingScheme.singletons(["a", "b"])
        fv = extract_features(case([0, 2]), g)
        assert fv.group_sums == (0.0, 2.0)
        assert fv.ens_mean == 1.0 and fv.ens_var == 2.0 and fv.ens_md == 1.0

    def test_control_grouping_sums(self):
        g = GroupingScheme(tuple(f"m{i}" for i in range(11)), ((0,), tuple(range(1, 11))))
        members = [3.0] + [1.0] * 10
        fv = extract_features(case(members), g)
        assert fv.group_sums == (3.0, 10.0)

    def test_single_member(self):
        g = GroupingScheme(("a",), ((0,),))
        fv = extract_features(case([4.0]), g)
        assert fv.ens_var == 0.0 and fv.ens_md == 0.0

    def test_missing_member(self):
        g = GroupingScheme.singletons(["a", "b"])
        with pytest.raises(MissingMemberError):
            extract_features(case([1.0]), g)

    def test_exchangeability_bit_identical(self):
        # permuting members inside a group must not change a single bit
        rng = np.random.default_rng(0)
        members = list(rng.uniform(0, 7, size=11))
        g = GroupingScheme(tuple(f"m{i}" for i in range(11)), ((0,), tuple(range(1, 11))))
        fv = extract_features(case(members), g)
        for _ in range(20):
            perm = [members[0]] + list(rng.permutation(members[1:]))
            fv_perm = extract_features(case(perm), g)
            assert fv_perm == fv


class TestPredict:
    def test_intercept_only(self):
        g = GroupingScheme.singletons(["a", "b"])
        c = EmosCoefficients((1.0, 0.0, 0.0), VarianceLink("mean", (1.0, 0.0)), 0.0, g)
        params = predict(c, extract_features(case([5, 9]), g))
        assert (params.shape, params.scale, params.shift) == (1.0, 1.0, 0.0)

    def test_affine_substitution(self):
        g = GroupingScheme(("a", "b", "c"), ((0, 1, 2),))
        c = EmosCoefficients((0.1, 1.0), VarianceLink("mean", (0.5, 0.25)), 0.7, g)
        fv = extract_features(case([1.0, 1.0, 1.0]), g)  # sum 3, mean 1... adjust
        # group sum 3.0, ensemble mean 1.0 -> mu = 3.1, sigma2 = 0.75
        params = predict(c, fv)
        mu, sigma2 = 3.1, 0.75
        assert params.shape == pytest.approx(mu * mu / sigma2, rel=1e-14)
        assert params.scale == pytest.approx(sigma2 / mu, rel=1e-14)
        assert params.shift == 0.7

    def test_all_zero_members_floored(self):
        g = GroupingScheme.singletons(["a", "b"])
        c = EmosCoefficients((0.0, 0.5, 0.5), VarianceLink("mean", (0.01, 0.5)), 0.5, g)
        params = predict(c, extract_features(case([0.0, 0.0]), g))
        assert csg_point_mass(params) > 0.99

    def test_variance_link_variants(self):
        g = GroupingScheme.singletons(["a", "b"])
        fv = extract_features(case([1.0, 3.0]), g)  # mean 2, var 2, md 1
        base = (0.2, 0.3, 0.4)
        for kind, expected in [
            ("mean", 0.5 + 0.25 * 2.0),
            ("var", 0.5 + 0.25 * 2.0),
            ("md", 0.5 + 0.25 * 1.0),
            ("mean-squared", (0.5 + 0.25 * 2.0) ** 2),
        ]:
            c = EmosCoefficients(base, VarianceLink(kind, (0.5, 0.25)), 0.0, g)
            params = predict(c, fv)
            mu = 0.2 + 0.3 * 1.0 + 0.4 * 3.0
            assert params.scale == pytest.approx(expected / mu, rel=1e-12), kind

    def test_var_plus_mean_degenerates(self):
        g = GroupingScheme.singletons(["a", "b"])
        fv = extract_features(case([1.0, 3.0]), g)
        a = (0.2, 0.3, 0.4)
        with_b2 = EmosCoefficients(a, VarianceLink("var+mean", (0.5, 0.25, 0.0)), 0.1, g)
        var_only = EmosCoefficients(a, VarianceLink("var", (0.5, 0.25)), 0.1, g)
        assert predict(with_b2, fv) == predict(var_only, fv)

    def test_dimension_mismatch(self):
        g2 = GroupingScheme.singletons(["a", "b"])
        g3 = GroupingScheme.singletons(["a", "b", "c"])
        c = EmosCoefficients((0.1, 0.5, 0.5), VarianceLink("mean", (1.0, 0.5)), 0.0, g2)
        with pytest.raises(DomainError):
            predict(c, extract_features(case([1, 2, 3]), g3))

    def test_nonnegativity_validated(self):
        g = GroupingScheme.singletons(["a", "b"])
        with pytest.raises(DomainError):
            EmosCoefficients((-0.1, 0.5, 0.5), VarianceLink("mean", (1.0, 0.5)), 0.0, g)
        with pytest.raises(DomainError):
            VarianceLink("mean", (1.0, -0.5))
        with pytest.raises(DomainError):
            EmosCoefficients((0.1, 0.5, 0.5), VarianceLink("mean", (1.0, 0.5)), -0.2, g)


class TestMeanCrps:
    def test_single_case_exponential(self):
        g = GroupingScheme.singletons(["a", "b"])
        c = EmosCoefficients((1.0, 0.0, 0.0), VarianceLink("mean", (1.0, 0.0)), 0.0, g)
        assert mean_crps(c, [case([3, 4], obs=0.0)]) == pytest.approx(0.5, abs=1e-12)

    def test_duplicate_invariance(self):
        g = GroupingScheme.singletons(["a", "b"])
        c = EmosCoefficients((0.5, 0.4, 0.6), VarianceLink("mean", (0.5, 0.3)), 0.2, g)
        one = [case([1, 2], obs=1.5)]
        two = one * 2
        assert mean_crps(c, one) == pytest.approx(mean_crps(c, two), rel=1e-15)

    def test_matches_per_case_scores(self):
        spec = simulator.preset("singleton8", n_stations=2, n_dates=50, seed=5)
        ds = simulator.simulate(spec)
        g = spec.coefficients.grouping
        total = 0.0
        for c in ds.cases:
            params = predict(spec.coefficients, extract_features(c, g))
            total += csg_crps(params, c.observation)
        assert mean_crps(spec.coefficients, ds.cases) == pytest.approx(
            total / len(ds.cases), rel=1e-12
        )

    def test_empty_rejected(self):
        g = GroupingScheme.singletons(["a"])
        c = EmosCoefficients((1.0, 0.0), VarianceLink("mean", (1.0, 0.0)), 0.0, g)
        with pytest.raises(InsufficientDataError):
            mean_crps(c, [])


def synthetic_cases(n_dates, n_stations, seed, drift=0.0, grouping=None, coefs=None):
    """Stationary (or intercept-drifting) cases drawn from a known CSG law."""
    g = grouping or GroupingScheme.singletons(["m1", "m2"])
    rng = np.random.default_rng(seed)
    cases = []
    for t in range(n_dates):
        base = coefs or EmosCoefficients(
            (0.3 + drift * t, 0.3, 0.3), VarianceLink("mean", (0.4, 0.2)), 0.3, g
        )
        for s in range(n_stations):
            members = tuple(
                float(v) for v in np.maximum(2.0 + rng.normal(0, 0.5, g.n_members), 0)
            )
            shell = ForecastCase(D0 + t * DAY, f"S{s}", members, None)
            params = predict(base, extract_features(shell, g))
            obs = float(sample_batch(params.shape, params.scale, params.shift, rng))
            cases.append(ForecastCase(shell.date, shell.station, members, obs))
    return Dataset(g.member_names, tuple(cases)), g


class TestFit:
    def test_constraints_and_monotonicity(self):
        ds, g = synthetic_cases(30, 4, seed=1)
        fitted = fit(ds.cases, g, FitConfig())
        assert all(a >= 0 for a in fitted.mean_coefficients)
        assert all(b >= 0 for b in fitted.variance_link.coefficients)
        assert fitted.shift >= 0
        diag = fitted.diagnostics
        assert diag["final_objective"] <= diag["initial_objective"]

    def test_deterministic(self):
        ds, g = synthetic_cases(30, 4, seed=2)
        a = fit(ds.cases, g, FitConfig())
        b = fit(ds.cases, g, FitConfig())
        assert a.mean_coefficients == b.mean_coefficients
        assert a.variance_link == b.variance_link
        assert a.shift == b.shift

    def test_insufficient_data(self):
        ds, g = synthetic_cases(5, 2, seed=3)
        with pytest.raises(InsufficientDataError):
            fit(ds.cases, g, FitConfig(min_cases=50))

    def test_recovers_generating_scores(self):
        spec = simulator.preset("singleton8", n_stations=5, n_dates=80, seed=11)
        ds = simulator.simulate(spec)
        fitted = fit(ds.cases, spec.coefficients.grouping, FitConfig())
        ratio = mean_crps(fitted, ds.cases) / mean_crps(spec.coefficients, ds.cases)
        assert ratio <= 1.01

    def test_all_zero_observations(self):
        g = GroupingScheme.singletons(["m1", "m2"])
        rng = np.random.default_rng(4)
        cases = [
            ForecastCase(
                D0 + t * DAY,
                "S1",
                tuple(float(v) for v in rng.uniform(0.5, 3.0, 2)),
                0.0,
            )
            for t in range(80)
        ]
        fitted = fit(cases, g, FitConfig())
        masses = [
            csg_point_mass(predict(fitted, extract_features(c, g))) for c in cases
        ]
        assert min(masses) >= 0.95

    def test_logscore_cannot_beat_crps_on_crps(self):
        ds, g = synthetic_cases(40, 6, seed=9)
        by_crps = fit(ds.cases, g, FitConfig())
        by_ls = fit(ds.cases, g, FitConfig(objective="logscore"))
        assert mean_crps(by_ls, ds.cases) >= mean_crps(by_crps, ds.cases) - 1e-9

    def test_bounded_mode_agrees(self):
        ds, g = synthetic_cases(40, 4, seed=12)
        free = fit(ds.cases, g, FitConfig())
        boxed = fit(ds.cases, g, FitConfig(bounded=True))
        assert mean_crps(boxed, ds.cases) == pytest.approx(
            mean_crps(free, ds.cases), rel=5e-3
        )

    def test_warm_start_matches_grouping(self):
        ds, g = synthetic_cases(30, 4, seed=13)
        other = GroupingScheme(("m1", "m2"), ((0, 1),))
        wrong = EmosCoefficients((0.1, 0.5), VarianceLink("mean", (1.0, 0.5)), 0.1, other)
        with pytest.raises(DomainError):
            fit(ds.cases, g, FitConfig(), initial=wrong)


class TestRollingCalibrate:
    def test_single_day_window_boundary(self):
        ds, g = synthetic_cases(2, 3, seed=21)
        cfg = FitConfig(min_cases=1)
        out = rolling_calibrate(ds, g, 1, cfg)
        assert len(out) == 1
        assert out[0].date == ds.dates[1]
        assert out[0].coefficients.diagnostics["n_cases"] == 3  # first day only

    def test_window_too_long(self):
        ds, g = synthetic_cases(5, 2, seed=22)
        with pytest.raises(WindowTooLongError):
            rolling_calibrate(ds, g, 5, FitConfig(min_cases=1))

    def test_missing_dates_do_not_count(self):
        # drop one date entirely; the window must deepen past it
        ds, g = synthetic_cases(10, 2, seed=23)
        kept = tuple(c for c in ds.cases if c.date != D0 + 4 * DAY)
        thinned = Dataset(ds.member_names, kept)
        cfg = FitConfig(min_cases=1)
        out = rolling_calibrate(thinned, g, 3, cfg)
        assert len(out) == len(thinned.dates) - 3
        # the fit for the date after the gap trains on 3 available dates
        target_idx = thinned.dates.index(D0 + 5 * DAY)
        day = out[target_idx - 3]
        assert day.date == D0 + 5 * DAY
        assert day.coefficients.diagnostics["n_cases"] == 6  # 3 dates x 2 stations

    def test_forecast_date_count(self):
        ds, g = synthetic_cases(150, 1, seed=24)
        cfg = FitConfig(init="warm", gtol=1e-4)
        out = rolling_calibrate(ds, g, 70, cfg)
        assert len(out) == 80

    def test_warm_start_runs(self):
        ds, g = synthetic_cases(12, 3, seed=25)
        cfg = FitConfig(min_cases=1, init="warm")
        out = rolling_calibrate(ds, g, 5, cfg)
        assert len(out) == 7


class TestTuneWindow:
    def test_degenerate_grid_matches_rolling(self):
        ds, g = synthetic_cases(30, 3, seed=31)
        cfg = FitConfig(min_cases=1)
        rows = tune_window(ds, g, [10], cfg)
        assert len(rows) == 1
        out = rolling_calibrate(ds, g, 10, cfg)
        crps_values = [
            csg_crps(fc.params, fc.case.observation)
            for day in out
            for fc in day.forecasts
        ]
        assert rows[0].mean_crps == pytest.approx(np.mean(crps_values), rel=1e-12)

    def test_drifting_bias_prefers_short_windows(self):
        ds, g = synthetic_cases(70, 4, seed=17, drift=0.12)
        cfg = FitConfig(min_cases=1, init="warm", gtol=1e-5)
        rows = tune_window(ds, g, [5, 15, 30], cfg)
        crps_by_window = [r.mean_crps for r in rows]
        assert crps_by_window == sorted(crps_by_window)
        mae_by_window = [r.mae for r in rows]
        assert mae_by_window == sorted(mae_by_window)

    def test_insufficient_span(self):
        ds, g = synthetic_cases(10, 2, seed=32)
        with pytest.raises(WindowTooLongError):
            tune_window(ds, g, [5, 20], FitConfig(min_cases=1))

    def test_empty_grid(self):
        ds, g = synthetic_cases(10, 2, seed=33)
        with pytest.raises(DomainError):
            tune_window(ds, g, [], FitConfig(min_cases=1))


class TestSerialization:
    def test_round_trip(self):
        ds, g = synthetic_cases(30, 3, seed=41)
        fitted = fit(ds.cases, g, FitConfig())
        restored = coefficients_from_json(coefficients_to_json(fitted))
        assert restored.mean_coefficients == fitted.mean_coefficients
        assert restored.variance_link == fitted.variance_link
        assert restored.shift == fitted.shift
        assert restored.grouping == fitted.grouping
        assert restored.diagnostics == fitted.diagnostics
