import numpy as np
import pytest

from complift import benchmark as bench
from complift.benchmark import (
    AblationRow,
    BenchRow,
    METHODS,
    ScenarioResult,
    ablate,
    aggregate_deltas,
    ensure_models,
    histogram_table,
    mean_separation,
    run_scenario,
)
from complift.energynet import TrainConfig
from complift.mcmc import McmcConfig
from complift.scenarios import SCENARIOS

FAST_TRAIN = TrainConfig(steps=500, batch=128)


@pytest.fixture(scope="module")
def store(tmp_path_factory):
    ckpt = tmp_path_factory.mktemp("store")
    conds = ("ring8", "strip", "rect_l", "rect_r")
    models = ensure_models(conds, ckpt, config=FAST_TRAIN)
    return ckpt, models


class TestModelStore:
    def test_trains_saves_and_reloads_identically(self, store, monkeypatch):
        ckpt, models = store
        for cond in ("ring8", "strip"):
            assert bench.checkpoint_path(ckpt, cond).exists()

        def boom(*a, **k):
            raise AssertionError("retrained despite existing checkpoint")

        monkeypatch.setattr(bench, "train", boom)
        again = ensure_models(("ring8", "strip"), ckpt, config=FAST_TRAIN)
        for cond in ("ring8", "strip"):
            for a, b in zip(models[cond].params, again[cond].params):
                assert np.array_equal(a, b)

    def test_unknown_component(self, tmp_path):
        with pytest.raises(KeyError):
            ensure_models(("nonesuch",), tmp_path, config=FAST_TRAIN)


@pytest.fixture(scope="module")
def result(store):
    _, models = store
    return run_scenario(
        SCENARIOS["product_a"], models, METHODS, n=300, seed=3,
        mcmc_config=McmcConfig(steps_per_level=4),
    )


class TestRunScenario:
    def test_one_row_per_method(self, result):
        assert [r.method for r in result.rows] == list(METHODS)
        assert all(r.scenario == "product_a" for r in result.rows)

    def test_ratio_only_for_filters(self, result):
        by = {r.method: r for r in result.rows}
        for m in ("cached", "naive-T50", "naive-T1000"):
            assert 0.0 <= by[m].ratio <= 1.0
            assert by[m].accepted == round(by[m].ratio * 300)
        for m in ("baseline", "ula", "uhmc", "mala", "hmc"):
            assert by[m].ratio is None

    def test_filters_share_the_baseline_cohort(self, result):
        assert result.clouds["baseline"] is result.samples
        for m in ("cached", "naive-T50", "naive-T1000"):
            kept = result.clouds[m]
            # every kept point appears in the cohort
            d = np.abs(kept[:, None, :] - result.samples[None, :, :]).sum(2)
            assert (d.min(axis=1) == 0).all()

    def test_filter_beats_baseline(self, result):
        by = {r.method: r for r in result.rows}
        assert by["naive-T1000"].accuracy >= by["baseline"].accuracy

    def test_scores_and_membership_exported(self, result):
        assert result.scores.shape == (300,)
        assert result.member.shape == (300,)
        assert result.member.dtype == bool

    def test_deterministic_reruns(self, store):
        _, models = store
        kw = dict(methods=("baseline", "cached", "mala"), n=64, seed=9,
                  mcmc_config=McmcConfig(steps_per_level=3))
        a = run_scenario(SCENARIOS["product_a"], models, **kw)
        b = run_scenario(SCENARIOS["product_a"], models, **kw)
        for ra, rb in zip(a.rows, b.rows):
            assert ra.accuracy == rb.accuracy
            assert ra.ratio == rb.ratio
            assert ra.chamfer == rb.chamfer
        for m in kw["methods"]:
            assert np.array_equal(a.clouds[m], b.clouds[m])

    def test_empty_scenario_reports_nulls(self, store):
        _, models = store
        res = run_scenario(SCENARIOS["product_c"], models,
                           ("baseline", "naive-T50"), n=128, seed=1)
        by = {r.method: r for r in res.rows}
        assert by["baseline"].accuracy == 0.0
        assert by["baseline"].chamfer is None
        filt = by["naive-T50"]
        assert filt.chamfer is None
        if filt.accepted == 0:
            assert filt.accuracy is None

    def test_unknown_method_rejected(self, store):
        _, models = store
        with pytest.raises(ValueError):
            run_scenario(SCENARIOS["product_a"], models, ("gibbs",), n=8)


class TestHistograms:
    def test_counts_split_by_membership(self):
        scores = np.array([-2.0, -1.0, 1.0, 2.0, np.inf])
        member = np.array([False, False, True, True, True])
        table = histogram_table(scores, member, bins=4)
        assert table["member"].sum() == 2       # inf excluded
        assert table["non_member"].sum() == 2
        assert len(table["bin_lo"]) == 4
        assert (table["bin_hi"][:-1] == table["bin_lo"][1:]).all()

    def test_constant_scores_get_padded_bins(self):
        table = histogram_table(np.zeros(5), np.zeros(5, bool), bins=3)
        assert table["non_member"].sum() == 5

    def test_mean_separation(self):
        scores = np.array([1.0, 3.0, -1.0, -3.0])
        member = np.array([True, True, False, False])
        assert mean_separation(scores, member) == (2.0, -2.0)
        assert mean_separation(scores, np.ones(4, bool)) is None


def _row(scenario, method, acc, ratio):
    return BenchRow(scenario, method, 100, None, acc, None, ratio, 0.0, 0)


def _result(rows):
    return ScenarioResult(tuple(rows), np.zeros((0, 2)), None,
                          np.zeros(0, bool), {})


class TestAggregateDeltas:
    def test_mean_improvement_in_points(self):
        results = {
            "product_a": _result([_row("product_a", "baseline", 0.5, None),
                                  _row("product_a", "naive-T1000", 0.9, 0.6)]),
            "product_b": _result([_row("product_b", "baseline", 0.3, None),
                                  _row("product_b", "naive-T1000", 0.7, 0.5)]),
        }
        out = aggregate_deltas(results)
        assert out == {"product": pytest.approx(40.0)}

    def test_empty_scenario_scores_the_rejection_rate(self):
        results = {
            "product_c": _result([_row("product_c", "baseline", 0.0, None),
                                  _row("product_c", "naive-T1000", None, 0.01)]),
        }
        out = aggregate_deltas(results)
        assert out == {"product": pytest.approx(99.0)}

    def test_missing_methods_are_skipped(self):
        results = {
            "mixture_a": _result([_row("mixture_a", "baseline", 0.4, None)]),
        }
        assert aggregate_deltas(results) == {}


class TestAblate:
    def test_noise_mode_grid(self, store):
        _, models = store
        rows = ablate(SCENARIOS["product_a"], models, "noise",
                      trials_grid=(5, 10), n=80, seed=2)
        assert len(rows) == 6
        strategies = {r.strategy for r in rows}
        assert strategies == {"shared-per-trial", "independent", "shared-all"}
        assert all(0.0 <= r.ratio <= 1.0 for r in rows)
        assert all(isinstance(r, AblationRow) for r in rows)

    def test_timestep_mode_grid(self, store):
        _, models = store
        rows = ablate(SCENARIOS["product_a"], models, "timestep",
                      trials_grid=(5, 10), n=80, seed=2)
        strategies = [r.strategy for r in rows]
        assert strategies.count("uniform") == 2
        assert strategies.count("importance") == 2
        assert sum(s.startswith("fixed-t") for s in strategies) == 3

    def test_bad_mode(self, store):
        _, models = store
        with pytest.raises(ValueError):
            ablate(SCENARIOS["product_a"], models, "colour", n=8)
