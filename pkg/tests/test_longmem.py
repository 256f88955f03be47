from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from numpy.testing import assert_allclose, assert_array_equal

from aparchlm.errors import DegenerateSeriesError, InsufficientDataError, LagRangeError
from aparchlm.longmem import (
    DEFAULT_KS,
    AcfResult,
    acf,
    count_significant,
    estimate_d,
    periodicity_profile,
    power_sweep,
    significance_band,
    write_sweep_csv,
    write_sweep_json,
)
from aparchlm.series import ReturnSeries


def naive_acf(x, max_lag):
    n = len(x)
    m = sum(x) / n
    c = [v - m for v in x]
    denom = sum(v * v for v in c)
    return np.array([sum(c[t] * c[t - j] for t in range(j, n)) / denom for j in range(1, max_lag + 1)])


def synthetic(rho):
    rho = np.asarray(rho, dtype=float)
    return AcfResult(np.arange(1, rho.size + 1), rho, 0.008, 10**6)


class TestAcf:
    def test_matches_double_loop(self, rng):
        x = rng.standard_normal(1000) ** 2
        assert_allclose(acf(x, 200).rho, naive_acf(x.tolist(), 200), rtol=0, atol=1e-12)

    def test_lags_start_at_one(self, rng):
        res = acf(rng.standard_normal(100), 5)
        assert_array_equal(res.lags, [1, 2, 3, 4, 5])

    def test_default_horizon(self, rng):
        assert acf(rng.standard_normal(1234)).max_lag == 123

    def test_accepts_series(self, rng):
        s = ReturnSeries.from_values(rng.standard_normal(50))
        assert_array_equal(acf(s, 5).rho, acf(s.values, 5).rho)

    @pytest.mark.parametrize("lag", [0, 100, 101])
    def test_lag_range(self, lag):
        with pytest.raises(LagRangeError):
            acf(np.arange(100.0), lag)

    def test_constant_series(self):
        with pytest.raises(DegenerateSeriesError):
            acf(np.ones(50), 5)

    @pytest.mark.parametrize("n,band,printed", [(55011, 0.00836, 0.008), (57227, 0.00819, 0.008),
                                                (27406, 0.01184, 0.012)])
    def test_bands(self, n, band, printed):
        b = significance_band(n)
        assert b == pytest.approx(band, abs=5e-6)
        assert round(b, 3) == printed

    def test_ar1_oracle(self):
        rng = np.random.default_rng(3)
        e = rng.standard_normal(100_000)
        x = np.empty_like(e)
        x[0] = e[0]
        for t in range(1, e.size):
            x[t] = 0.5 * x[t - 1] + e[t]
        rho = acf(x, 10).rho
        assert np.all(np.abs(rho - 0.5 ** np.arange(1, 11)) < 0.02)

    @settings(max_examples=50, deadline=None)
    @given(arrays(float, st.integers(20, 200), elements=st.floats(-10, 10)),
           st.floats(-1e3, 1e3), st.floats(0.01, 100.0), st.booleans())
    def test_affine_invariance(self, x, a, b, flip):
        if np.var(x) < 1e-6:
            return
        b = -b if flip else b
        lag = x.size // 2
        assert_allclose(acf(a + b * x, lag).rho, acf(x, lag).rho, rtol=0, atol=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(arrays(float, st.integers(5, 100), elements=st.floats(-10, 10)))
    def test_bounded(self, x):
        if np.var(x) < 1e-9:
            return
        assert np.all(np.abs(acf(x, x.size - 1).rho) <= 1 + 1e-12)

    def test_csv(self, tmp_path, rng):
        res = acf(rng.standard_normal(30), 3)
        res.to_csv(tmp_path / "a.csv")
        rows = (tmp_path / "a.csv").read_text().splitlines()
        assert rows[0] == "lag,rho,band" and len(rows) == 4


class TestCounts:
    def test_zero_rho(self):
        c = count_significant(synthetic(np.zeros(10)))
        assert (c.n_positive, c.n_negative) == (0, 0)

    def test_gilt_lag_one(self):
        c = count_significant(synthetic([0.2455, -0.009]))
        assert (c.n_positive, c.n_negative) == (1, 1)
        assert c.cell() == "1/1"

    def test_strict_inequality(self):
        c = count_significant(synthetic([0.008, -0.008]))
        assert c.total == 0

    @given(arrays(float, st.integers(1, 50), elements=st.floats(-1, 1)),
           st.floats(0, 0.5), st.floats(0, 0.5))
    def test_monotone_in_band(self, rho, b1, b2):
        lo, hi = sorted((b1, b2))
        res = synthetic(rho)
        small, large = count_significant(res, lo), count_significant(res, hi)
        assert large.n_positive <= small.n_positive
        assert large.n_negative <= small.n_negative
        assert small.total <= res.max_lag

    def test_white_noise_calibration_one_seed(self):
        x = np.random.default_rng(0).standard_normal(50_000)
        assert 20 <= count_significant(acf(x, 1000)).total <= 80


class TestSweep:
    def test_transform_identity(self, rng):
        x = rng.standard_t(5, 3000)
        table = power_sweep(x, DEFAULT_KS, 100)
        for k in DEFAULT_KS:
            if 2 * k in DEFAULT_KS:
                assert table["squared", k] == table["absolute", 2 * k]
        assert table["squared", 0.5] == table["absolute", 1.0]

    def test_workers_agree(self, rng):
        x = rng.standard_normal(2000)
        assert power_sweep(x, max_lag=50).cells == power_sweep(x, max_lag=50, workers=3).cells

    def test_iid_cells_near_five_percent(self):
        x = np.random.default_rng(11).standard_normal(20_000)
        table = power_sweep(x, max_lag=1000)
        totals = [c.total for c in table.cells.values()]
        assert 20 <= np.mean(totals) <= 80
        assert all(c.total <= 120 for c in table.cells.values())

    def test_outputs(self, tmp_path, rng):
        tables = {"A": power_sweep(rng.standard_normal(500), (0.5, 1.0), 20),
                  "B": power_sweep(rng.standard_normal(400), (0.5, 1.0), 20)}
        write_sweep_csv(tmp_path / "s.csv", tables)
        write_sweep_json(tmp_path / "s.json", tables)
        lines = (tmp_path / "s.csv").read_text().splitlines()
        assert lines[0] == "contract,mode,k=0.5,k=1"
        assert [ln.split(",")[:2] for ln in lines[1:]] == [
            ["A", "squared"], ["A", "absolute"], ["B", "squared"], ["B", "absolute"]]
        payload = json.loads((tmp_path / "s.json").read_text())
        assert [p["contract"] for p in payload] == ["A", "B"]


class TestEstimateD:
    def test_exact_power_law(self):
        j = np.arange(1, 501)
        fit = estimate_d(synthetic(0.3 * j ** -0.2))
        assert fit.d == pytest.approx(0.4, abs=1e-12)
        assert fit.C == pytest.approx(0.3, rel=1e-12)
        assert fit.r_squared == pytest.approx(1.0, abs=1e-12)

    def test_inverse_lag(self):
        j = np.arange(1, 101)
        assert estimate_d(synthetic(1.0 / j)).d == pytest.approx(0.0, abs=1e-12)

    def test_skips_non_positive(self):
        j = np.arange(1, 101)
        rho = 0.5 * j ** -0.4
        rho[::3] = -0.01
        fit = estimate_d(synthetic(rho))
        assert fit.d == pytest.approx(0.3, abs=1e-12)
        assert fit.n_lags == 66

    def test_lag_window(self):
        j = np.arange(1, 101)
        fit = estimate_d(synthetic(0.2 * j ** -0.6), 20, 80)
        assert fit.lag_range == (20, 80) and fit.n_lags == 61

    def test_too_few(self):
        with pytest.raises(InsufficientDataError):
            estimate_d(synthetic(-np.ones(50) * 0.1))


class TestPeriodicity:
    def test_gilt_length(self, rng):
        res = acf(rng.standard_normal(5000), 700)
        prof = periodicity_profile(res, 120)
        assert prof.rho.size == 600
        assert_array_equal(prof.day_boundaries, [120, 240, 360, 480, 600])

    def test_constant_rho_is_flat(self):
        prof = periodicity_profile(synthetic(np.full(600, 0.1)), 120)
        assert np.ptp(prof.rho) == 0.0

    def test_too_few_lags(self, rng):
        with pytest.raises(LagRangeError):
            periodicity_profile(acf(rng.standard_normal(1000), 100), 120)

    def test_u_shaped_seasonal_peaks_at_day_multiples(self):
        # sharp open/close bursts so neighbouring lags are clearly lower
        ipd, days = 60, 1000
        u = np.linspace(-1, 1, ipd)
        scale = 0.5 + 4.0 * u**16
        z = np.random.default_rng(5).standard_normal(ipd * days)
        r = np.tile(scale, days) * z
        prof = periodicity_profile(acf(np.abs(r), 5 * ipd), ipd)
        for d in range(5):
            block = prof.rho[d * ipd + ipd // 2: (d + 1) * ipd + ipd // 2] if d < 4 else prof.rho[d * ipd + ipd // 2:]
            peak = d * ipd + ipd // 2 + int(np.argmax(block)) + 1
            assert peak % ipd == 0

    def test_csv_marks_day_ends(self, tmp_path):
        prof = periodicity_profile(synthetic(np.linspace(0.1, 0.01, 20)), 4)
        prof.to_csv(tmp_path / "p.csv")
        rows = [r.split(",") for r in (tmp_path / "p.csv").read_text().splitlines()[1:]]
        assert [int(r[0]) for r in rows if r[3] == "1"] == [4, 8, 12, 16, 20]
