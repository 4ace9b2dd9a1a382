import numpy as np
import pytest

from pricing_game import experiment
from pricing_game.exceptions import ConfigError, DegenerateInstanceError
from pricing_game.experiment import (
    MethodKind,
    MethodSpec,
    evaluate_draw,
    expected_rb_rates,
    ks_distance,
    parse_methods,
    rate_cdf,
    run_experiment,
    run_sweep,
)
from pricing_game.net_model import shannon_rate, sinr_cellular, sinr_d2d
from pricing_game.scenario import ScenarioConfig, generate_scenario


@pytest.fixture
def small_cfg():
    return ScenarioConfig(cellular_density=4.0, d2d_density=6.0, subbands=4)


class TestMethods:
    def test_parse_guard_zone(self):
        spec = MethodSpec.parse("guard-zone:150")
        assert spec.kind is MethodKind.GUARD_ZONE and spec.radius == 150.0
        assert spec.label == "guard-zone:150"
        assert MethodSpec.parse("guard-zone").radius == 200.0

    def test_pricing_mapping(self):
        assert MethodSpec.parse("sppp").pricing is not None
        assert MethodSpec.parse("cellular-only").pricing is None

    @pytest.mark.parametrize("text", ["bogus", "sppp:3", "guard-zone:abc", "guard-zone:-5"])
    def test_rejects_bad_methods(self, text):
        with pytest.raises(ConfigError):
            MethodSpec.parse(text)

    def test_comma_list(self):
        labels = [m.label for m in parse_methods("sppp, io,all-active")]
        assert labels == ["sppp", "io", "all-active"]


class TestDraw:
    def test_all_active_matches_direct_sinr(self, small_cfg):
        scenario = generate_scenario(small_cfg, seed=4)
        record = evaluate_draw(scenario, MethodSpec.parse("all-active"))
        ch, pw = scenario.channels, scenario.powers
        everyone = range(scenario.n_d)
        busy = [k for k in range(scenario.rb_count) if scenario.rb_user[k] >= 0]
        expected_cell = [shannon_rate(sinr_cellular(k, everyone, ch, pw)) for k in busy]
        assert np.allclose(record.cellular_rates, expected_cell)
        for i in range(scenario.n_d):
            total = sum(shannon_rate(sinr_d2d(i, everyone, ch, pw, k)) for k in range(scenario.rb_count))
            assert record.d2d_rates[i] == pytest.approx(total)

    def test_zero_radius_guard_zone_is_all_active(self, small_cfg):
        scenario = generate_scenario(small_cfg, seed=6)
        guard = evaluate_draw(scenario, MethodSpec.parse("guard-zone:0"))
        full = evaluate_draw(scenario, MethodSpec.parse("all-active"))
        assert np.array_equal(guard.cellular_rates, full.cellular_rates)
        assert np.array_equal(guard.d2d_rates, full.d2d_rates)

    def test_cellular_only_silences_d2d(self, small_cfg):
        record = evaluate_draw(generate_scenario(small_cfg, seed=2), MethodSpec.parse("cellular-only"))
        assert np.all(record.d2d_rates == 0)
        assert np.all(record.interference_ratio == 0)

    def test_rate_models(self, small_cfg):
        assert MethodSpec.parse("bisection-br").rate_model == experiment.RATE_EXPECTED
        assert MethodSpec.parse("sppp").rate_model == experiment.RATE_POWER_FRACTION
        scenario = generate_scenario(small_cfg, seed=4)
        full = evaluate_draw(scenario, MethodSpec.parse("all-active"))
        d2d = np.zeros(scenario.n_d)
        cellular = []
        for k in range(scenario.rb_count):
            d2d_rb, cellular_rb = expected_rb_rates(scenario, k, np.ones(scenario.n_d))
            d2d += d2d_rb
            if scenario.rb_user[k] >= 0:
                cellular.append(cellular_rb)
        # 0/1 接入时两种速率口径一致
        assert np.allclose(d2d, full.d2d_rates)
        assert np.allclose(cellular, full.cellular_rates)

    def test_summary_names_rate_model(self, small_cfg):
        results = run_experiment(small_cfg, ["bisection-br", "io"], draws=1, seed=3)
        assert results["bisection-br"].summary()["rate_model"] == "expected"
        assert results["io"].summary()["rate_model"] == "power-fraction"


class TestExperiment:
    def test_protection_and_baseline_ordering(self, small_cfg):
        results = run_experiment(small_cfg, ["sppp", "bisection", "io", "all-active"], draws=4, seed=1)
        for label in ("sppp", "bisection", "io"):
            summary = results[label].summary()
            assert summary["failures"] == 0
            assert summary["max_interference_ratio"] <= 1 + 1e-3
        io_records = results["io"].ok_records
        full_records = results["all-active"].ok_records
        for a, b in zip(io_records, full_records):
            assert np.all(a.cellular_rates >= b.cellular_rates - 1e-12)

    def test_deterministic_across_threads(self, small_cfg):
        a = run_experiment(small_cfg, ["bisection", "guard-zone:150"], draws=3, seed=9, threads=1)
        b = run_experiment(small_cfg, ["bisection", "guard-zone:150"], draws=3, seed=9, threads=3)
        for label in a:
            assert a[label].summary() == b[label].summary()
            assert a[label].rate_rows() == b[label].rate_rows()

    def test_failed_draws_are_counted(self, small_cfg, monkeypatch):
        def broken(inst, method):
            raise DegenerateInstanceError("singular")

        monkeypatch.setattr(experiment, "solve_price", broken)
        results = run_experiment(small_cfg, ["sppp", "all-active"], draws=2, seed=0)
        assert results["sppp"].failures == 2
        assert results["sppp"].summary()["draws"] == 0
        assert results["all-active"].failures == 2

    def test_draw_count_validation(self, small_cfg):
        with pytest.raises(ConfigError):
            run_experiment(small_cfg, ["io"], draws=0)

    @pytest.mark.slow
    def test_method_ordering_at_default_scale(self):
        cfg = ScenarioConfig()
        results = run_experiment(cfg, ["bisection", "sppp", "guard-zone:200", "all-active"], draws=200, seed=3)
        cell = {k: v.summary()["cellular_mean_rate"] for k, v in results.items()}
        d2d = {k: v.summary()["d2d_total_rate"] for k, v in results.items()}
        assert cell["bisection"] > cell["guard-zone:200"] > cell["all-active"]
        assert cell["sppp"] > cell["guard-zone:200"]
        assert d2d["all-active"] > d2d["bisection"]

    @pytest.mark.slow
    def test_pricing_gains_at_zero_tolerance(self):
        results = run_experiment(ScenarioConfig(q_tol_db=0.0), ["bisection", "all-active"], draws=500, seed=11)
        priced, full = results["bisection"].summary(), results["all-active"].summary()
        assert priced["cellular_mean_rate"] >= 1.4 * full["cellular_mean_rate"]
        assert 0.8 * full["d2d_total_rate"] <= priced["d2d_total_rate"] <= full["d2d_total_rate"]

    @pytest.mark.slow
    def test_greedy_gap_shrinks_with_tolerance(self):
        shortfall = {}
        for q_db in (-5.0, 5.0):
            results = run_experiment(ScenarioConfig(q_tol_db=q_db), ["sppp", "io"], draws=500, seed=12)
            sppp = results["sppp"].summary()
            assert sppp["failures"] == 0
            shortfall[q_db] = 1 - results["io"].summary()["d2d_total_rate"] / sppp["d2d_total_rate"]
        assert abs(shortfall[5.0]) <= 0.15
        assert shortfall[-5.0] >= 0.15

    @pytest.mark.slow
    def test_lb_and_br_rate_distributions_agree(self):
        cfg = ScenarioConfig(q_tol_db=5.0, rings=0)
        results = run_experiment(cfg, ["bisection", "bisection-br"], draws=200, seed=5)
        assert ks_distance(results["bisection"].series("cellular"),
                           results["bisection-br"].series("cellular")) < 0.15


class TestCdf:
    def test_three_values(self):
        cdf = rate_cdf([3.0, 1.0, 2.0])
        assert cdf[:, 0].tolist() == [1.0, 2.0, 3.0]
        assert np.allclose(cdf[:, 1], [1 / 3, 2 / 3, 1.0])

    def test_single_value(self):
        assert rate_cdf([2.5]).tolist() == [[2.5, 1.0]]

    def test_empty_series(self):
        with pytest.raises(ValueError):
            rate_cdf([])

    def test_ks_of_identical_samples(self):
        assert ks_distance([1, 2, 3], [1, 2, 3]) == 0.0


class TestSweep:
    def test_rows_per_method(self, small_cfg):
        frame = run_sweep(small_cfg, ["io", "all-active"], draws=2, param="q_tol_db", values=[-5, 0, 5])
        assert list(frame.columns) == ["method", "sweep_param", "value", "cellular_mean_rate",
                                       "d2d_total_rate", "total_rate", "draws", "failures"]
        assert len(frame) == 6
        assert frame.groupby("method").size().tolist() == [3, 3]

    def test_unknown_parameter(self, small_cfg):
        with pytest.raises(ConfigError):
            run_sweep(small_cfg, ["io"], draws=1, param="subbands", values=[1])

    @pytest.mark.slow
    def test_tolerance_trend(self):
        frame = run_sweep(ScenarioConfig(), ["bisection"], draws=200, param="q_tol_db",
                          values=[-5, 0, 5, 10, 15], seed=2)
        cell = frame["cellular_mean_rate"].to_numpy()
        d2d = frame["d2d_total_rate"].to_numpy()
        assert np.all(np.diff(cell) <= 1e-9)
        assert np.all(np.diff(d2d) >= -1e-9)
