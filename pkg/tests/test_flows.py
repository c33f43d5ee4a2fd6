import numpy as np
import pytest

from hones.errors import EmptySeries, ParseError
from hones.flows import (
    FlowConfig,
    PriceSeries,
    flow_for_config,
    load_prices,
    markowitz_flow,
    ons_flow,
    save_prices,
    synthetic_flow,
    synthetic_prices,
)


def constant_prices(n, rows, level=100.0):
    return PriceSeries(
        dates=[f"d{k}" for k in range(rows)],
        tickers=[f"s{k}" for k in range(n)],
        prices=np.full((rows, n), level),
    )


class TestFlowConfig:
    def test_rejects_bad_values(self):
        with pytest.raises(ValueError):
            FlowConfig("nope", 5, 10)
        with pytest.raises(ValueError):
            FlowConfig("synthetic", 0, 10)
        with pytest.raises(ValueError):
            FlowConfig("synthetic", 5, 10, epsilon=0.0)
        with pytest.raises(ValueError):
            FlowConfig("synthetic", 5, 10, c_factor=-1.0)


class TestOnsFlow:
    def test_constant_prices(self):
        n = 4
        prices = constant_prices(n, 6)
        x = np.full(n, 1.0 / n)
        flow = ons_flow(prices, lambda: x)
        for t, (g, c) in enumerate(flow, start=1):
            np.testing.assert_allclose(g, np.ones(n), atol=1e-14)
            np.testing.assert_allclose(c, (t / 4.0) * np.ones(n), atol=1e-12)

    def test_doubling_asset(self):
        prices = PriceSeries(
            dates=["d0", "d1"],
            tickers=["a", "b"],
            prices=np.array([[10.0, 10.0], [20.0, 10.0]]),
        )
        x = np.array([0.5, 0.5])
        g, c = next(iter(ons_flow(prices, lambda: x)))
        np.testing.assert_allclose(g, [4.0 / 3.0, 2.0 / 3.0], atol=1e-14)
        np.testing.assert_allclose(c, 0.25 * g, atol=1e-14)

    def test_drift_is_quarter_of_direction(self):
        prices = synthetic_prices(5, 20, seed=3)
        x = np.full(5, 0.2)
        flow = ons_flow(prices, lambda: x)
        c_prev = np.zeros(5)
        for g, c in flow:
            np.testing.assert_allclose(c - c_prev, 0.25 * g, atol=1e-12)
            c_prev = c

    def test_closed_loop_uses_latest_x(self):
        prices = synthetic_prices(3, 10, seed=1)
        holder = {"x": np.array([1.0, 0.0, 0.0])}
        seen = []
        flow = ons_flow(prices, lambda: seen.append(holder["x"].copy()) or holder["x"])
        it = iter(flow)
        next(it)
        holder["x"] = np.array([0.0, 1.0, 0.0])
        next(it)
        assert np.array_equal(seen[0], [1.0, 0.0, 0.0])
        assert np.array_equal(seen[1], [0.0, 1.0, 0.0])

    def test_rejects_nonpositive_prices(self):
        bad = PriceSeries(["d0", "d1"], ["a"], np.array([[1.0], [-2.0]]))
        with pytest.raises(ValueError):
            ons_flow(bad, lambda: np.ones(1))


class TestMarkowitzFlow:
    def test_identical_returns_give_zero_directions(self):
        w = np.tile(np.array([0.01, -0.02, 0.005]), (8, 1))
        for g, c in markowitz_flow(w):
            np.testing.assert_allclose(g, 0.0, atol=1e-15)
            np.testing.assert_allclose(c, 0.0, atol=1e-15)

    def test_two_observation_example(self):
        w = np.array([[1.0, 0.0], [0.0, 1.0]])
        out = list(markowitz_flow(w))
        np.testing.assert_allclose(out[0][0], [0.0, 0.0], atol=1e-15)
        np.testing.assert_allclose(out[1][0], np.sqrt(0.5) * np.array([-1.0, 1.0]), atol=1e-14)

    def test_rank_one_reconstructs_scaled_covariance(self):
        rng = np.random.default_rng(17)
        T, n = 50, 5
        w = 0.02 * rng.standard_normal((T, n))
        eps = 1e-4
        flow = markowitz_flow(w, epsilon=eps)
        A = flow.a0.copy()
        for t, (g, c) in enumerate(flow, start=1):
            A += np.outer(g, g)
            mean = w[:t].mean(axis=0)
            scaled_cov = sum(np.outer(w[s] - mean, w[s] - mean) for s in range(t))
            np.testing.assert_allclose(A, eps * np.eye(n) + scaled_cov, atol=1e-9)

    def test_risk_aversion_emits_scaled_mean(self):
        rng = np.random.default_rng(2)
        w = rng.standard_normal((10, 3))
        lam = 0.7
        for t, (g, c) in enumerate(markowitz_flow(w, risk_aversion=lam), start=1):
            np.testing.assert_allclose(c, lam * t * w[:t].mean(axis=0), atol=1e-12)


class TestSyntheticFlow:
    def test_zero_c_factor_means_zero_linear_term(self):
        flow = synthetic_flow(FlowConfig("synthetic", 6, 20, c_factor=0.0, seed=5))
        assert np.all(flow.c0 == 0.0)
        for g, c in flow:
            assert np.all(c == 0.0)

    def test_drift_matches_direct_recomputation(self):
        cfg = FlowConfig("synthetic", 8, 30, c_factor=0.1, seed=11)
        flow = synthetic_flow(cfg)
        A = flow.a0.copy()
        c_prev = flow.c0.copy()
        for g, c in flow:
            A += np.outer(g, g)
            np.testing.assert_allclose(c, A @ flow.y, atol=1e-10)
            np.testing.assert_allclose(c - c_prev, g * (g @ flow.y), atol=1e-12)
            c_prev = c

    def test_seed_determinism_bitwise(self):
        cfg = FlowConfig("synthetic", 7, 25, c_factor=0.1, seed=21)
        a = list(synthetic_flow(cfg))
        b = list(synthetic_flow(cfg))
        for (ga, ca), (gb, cb) in zip(a, b):
            assert np.array_equal(ga, gb)
            assert np.array_equal(ca, cb)

    def test_distinct_seeds_differ(self):
        a = next(iter(synthetic_flow(FlowConfig("synthetic", 7, 5, seed=1))))
        b = next(iter(synthetic_flow(FlowConfig("synthetic", 7, 5, seed=2))))
        assert not np.array_equal(a[0], b[0])


class TestPriceIO:
    def test_round_trip(self, tmp_path):
        series = synthetic_prices(4, 12, seed=9)
        path = tmp_path / "prices.csv"
        save_prices(path, series)
        loaded = load_prices(path)
        assert loaded.tickers == series.tickers
        assert loaded.dates == series.dates
        np.testing.assert_array_equal(loaded.prices, series.prices)
        assert loaded.dropped_rows == 0

    def test_well_formed_small_file(self, tmp_path):
        path = tmp_path / "p.csv"
        path.write_text("date,a,b\n2020-01-01,1.0,2.0\n2020-01-02,1.1,2.2\n2020-01-03,1.2,2.1\n")
        series = load_prices(path)
        assert series.steps == 3 and series.n == 2

    def test_nan_row_dropped_with_count(self, tmp_path):
        path = tmp_path / "p.csv"
        path.write_text("date,a,b\n2020-01-01,1.0,2.0\n2020-01-02,NaN,2.2\n2020-01-03,1.2,2.1\n")
        series = load_prices(path)
        assert series.steps == 2
        assert series.dropped_rows == 1

    def test_nonpositive_row_dropped(self, tmp_path):
        path = tmp_path / "p.csv"
        path.write_text("date,a\n2020-01-01,1.0\n2020-01-02,-3.0\n")
        series = load_prices(path)
        assert series.steps == 1 and series.dropped_rows == 1

    def test_ragged_row_is_parse_error(self, tmp_path):
        path = tmp_path / "p.csv"
        path.write_text("date,a,b\n2020-01-01,1.0\n")
        with pytest.raises(ParseError) as err:
            load_prices(path)
        assert err.value.row == 1

    def test_empty_file_raises(self, tmp_path):
        path = tmp_path / "p.csv"
        path.write_text("")
        with pytest.raises(EmptySeries):
            load_prices(path)

    def test_all_rows_dropped_raises(self, tmp_path):
        path = tmp_path / "p.csv"
        path.write_text("date,a\nd0,bad\n")
        with pytest.raises(EmptySeries):
            load_prices(path)


class TestFlowForConfig:
    def test_synthetic_dispatch(self):
        flow = flow_for_config(FlowConfig("synthetic", 5, 10, seed=1))
        assert flow.a0.shape == (5, 5)

    def test_ons_needs_feedback(self):
        with pytest.raises(ValueError):
            flow_for_config(FlowConfig("ons", 5, 10, seed=1))

    def test_markowitz_from_generated_prices(self):
        flow = flow_for_config(FlowConfig("markowitz", 5, 10, seed=1))
        out = list(flow)
        assert len(out) == 10
