"""Metrics, the k-NN baseline and experiment orchestration."""

import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from probloc import cmdrnn, data
from probloc import evaluation as ev
from probloc.autodiff import NumericalError

TINY_CMDRNN = dict(filters=4, feature_units=8, hidden=8, mdn_hidden=8, mixtures=2, memory=3, epochs=2, batch_size=32)
TINY_VAE = dict(encoder_hidden=(16,), decoder_hidden=(16,), predictor_hidden=(16,), vae_epochs=2, predictor_epochs=2)


@pytest.fixture(scope="module")
def corridor():
    return data.synth_corridor(n_aps=20, n_steps=300, seed=0)


class TestRmse:
    def test_identical(self):
        p = np.random.default_rng(0).normal(size=(5, 2))
        assert ev.rmse(p, p) == 0.0

    def test_single_pair(self):
        assert ev.rmse([[0.0, 0.0]], [[3.0, 4.0]]) == 5.0

    def test_two_pairs(self):
        assert ev.rmse([[0.0, 0.0], [0.0, 0.0]], [[3.0, 0.0], [0.0, 4.0]]) == pytest.approx(math.sqrt(12.5), abs=1e-12)
        assert math.sqrt(12.5) == pytest.approx(3.5355, abs=1e-4)

    def test_empty(self):
        with pytest.raises(ValueError):
            ev.rmse(np.zeros((0, 2)), np.zeros((0, 2)))

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 10_000), n=st.integers(1, 30))
    def test_order_invariant(self, seed, n):
        rng = np.random.default_rng(seed)
        p, t = rng.normal(size=(n, 2)), rng.normal(size=(n, 2))
        perm = rng.permutation(n)
        assert ev.rmse(p[perm], t[perm]) == pytest.approx(ev.rmse(p, t), rel=1e-12)


class TestKnn:
    def test_single_point(self):
        out = ev.knn_predict([[1.0, 2.0]], [[5.0, 6.0]], [9.0, 9.0], k=1)
        np.testing.assert_array_equal(out, [5.0, 6.0])

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 10_000), n=st.integers(1, 40))
    def test_query_in_training_set(self, seed, n):
        rng = np.random.default_rng(seed)
        x, y = rng.normal(size=(n, 4)), rng.normal(size=(n, 2))
        i = int(rng.integers(n))
        np.testing.assert_array_equal(ev.knn_predict(x, y, x[i], k=1), y[i])

    def test_full_k_is_global_mean(self):
        rng = np.random.default_rng(0)
        x, y = rng.normal(size=(7, 3)), rng.normal(size=(7, 2))
        np.testing.assert_allclose(ev.knn_predict(x, y, rng.normal(size=3), k=7), y.mean(0))

    def test_ties_go_to_lower_index(self):
        x = np.array([[1.0], [-1.0], [1.0]])
        y = np.array([[10.0, 0.0], [20.0, 0.0], [30.0, 0.0]])
        np.testing.assert_array_equal(ev.knn_predict(x, y, [0.0], k=1), [10.0, 0.0])
        np.testing.assert_array_equal(ev.knn_predict(x, y, [0.0], k=2), [15.0, 0.0])

    def test_empty_training_set(self):
        with pytest.raises(ValueError):
            ev.knn_predict(np.zeros((0, 2)), np.zeros((0, 2)), [0.0, 0.0])

    def test_k_too_large(self):
        with pytest.raises(ValueError):
            ev.knn_predict(np.zeros((2, 2)), np.zeros((2, 2)), [0.0, 0.0], k=3)


class TestRunReport:
    def _report(self, values, statuses=None):
        statuses = statuses or ["ok"] * len(values)
        seeds = [ev.SeedResult(i, s, v if s == "ok" else None) for i, (v, s) in enumerate(zip(values, statuses))]
        return ev.RunReport("m", "recognition", 0.1, {"a": 1}, seeds, {"dataset": "x"})

    def test_single_seed_std_zero(self):
        assert self._report([0.3]).std == 0.0

    @settings(max_examples=50, deadline=None)
    @given(values=st.lists(st.floats(0, 100, allow_nan=False), min_size=1, max_size=10))
    def test_mean_properties(self, values):
        r = self._report(values)
        assert abs(r.mean - math.fsum(values) / len(values)) <= 1e-12 * max(1.0, max(values))
        assert min(values) - 1e-12 <= r.mean <= max(values) + 1e-12

    def test_failed_seeds_skipped(self):
        r = self._report([1.0, 0.0, 3.0], ["ok", "failed", "ok"])
        assert r.mean == 2.0 and len(r.ok) == 2 and not r.failed

    def test_all_failed(self):
        r = self._report([0.0], ["failed"])
        assert r.failed and math.isnan(r.mean) and r.to_dict()["mean"] is None

    def test_digest_stable(self):
        assert self._report([1.0]).config_digest == self._report([2.0]).config_digest


class TestRunExperiment:
    def test_one_entry_per_seed(self, corridor):
        spec = ev.ExperimentSpec("next-location", ("knn", "previous"), corridor, seeds=range(5))
        for r in ev.run_experiment(spec):
            assert [s.seed for s in r.per_seed] == [0, 1, 2, 3, 4]
            assert len(set(r.values)) == 1  # deterministic baselines

    def test_knn_records_k(self, corridor):
        spec = ev.ExperimentSpec("next-location", ("knn",), corridor, k=5)
        (r,) = ev.run_experiment(spec)
        assert r.k == 5 and r.to_dict()["k"] == 5

    def test_table_row_structure(self, corridor):
        fractions = (0.02, 0.05, 0.1, 0.2, 0.3, 0.5, 0.8)
        spec = ev.ExperimentSpec("recognition", ("knn",), corridor, seeds=(0, 1), fractions=fractions)
        reports = ev.run_experiment(spec)
        assert [r.fraction for r in reports] == list(fractions)

    def test_cmdrnn_reports_both_rmse(self, corridor):
        spec = ev.ExperimentSpec("next-location", ("cmdrnn",), corridor, config=TINY_CMDRNN)
        (r,) = ev.run_experiment(spec)
        assert not r.failed and "rmse-sample" in r.per_seed[0].metrics

    def test_failed_seed_policy(self, corridor, monkeypatch):
        real = cmdrnn.train

        def flaky(model, *a, **kw):
            if model.cfg.seed == 1:
                raise NumericalError("logsumexp")
            return real(model, *a, **kw)

        monkeypatch.setattr(cmdrnn, "train", flaky)
        spec = ev.ExperimentSpec("next-location", ("cmdrnn",), corridor, seeds=(0, 1, 2), config=TINY_CMDRNN)
        (r,) = ev.run_experiment(spec)
        assert [s.status for s in r.per_seed] == ["ok", "failed", "ok"]
        assert r.mean == pytest.approx(np.mean([r.per_seed[0].rmse, r.per_seed[2].rmse]), abs=1e-12)

    def test_parallel_matches_serial(self, corridor):
        spec = ev.ExperimentSpec("next-location", ("cmdrnn",), corridor, seeds=(0, 1), config=TINY_CMDRNN)
        serial = ev.run_experiment(spec)[0].to_dict()
        parallel = ev.run_experiment(spec, jobs=2)[0].to_dict()
        assert serial == parallel

    def test_invalid_model_for_task(self, corridor):
        with pytest.raises(ValueError):
            ev.ExperimentSpec("next-location", ("m1",), corridor)

    def test_m2_improves_with_labels(self):
        ds = data.synth_corridor(seed=0)
        cfg = dict(encoder_hidden=(128, 128), decoder_hidden=(128,), predictor_hidden=(128, 128, 128), vae_epochs=30, predictor_steps=400)
        spec = ev.ExperimentSpec("recognition", ("m2",), ds, fractions=(0.02, 0.8), config=cfg)
        low, high = ev.run_experiment(spec)
        assert high.mean < low.mean


class TestReportsAndSweeps:
    def test_written_reports(self, corridor, tmp_path):
        spec = ev.ExperimentSpec("recognition", ("knn",), corridor, seeds=(0, 1), fractions=(0.1, 0.5))
        paths = ev.write_reports(ev.run_experiment(spec), tmp_path)
        doc = json.loads(paths["json"].read_text())
        assert doc["format-version"] == ev.REPORT_FORMAT_VERSION
        rows = list(csv.DictReader(open(paths["csv"])))
        assert len(rows) == 2 * (2 + 1)
        assert [r["seed"] for r in rows[:3]] == ["0", "1", "aggregate"]

    def test_reports_byte_identical(self, corridor, tmp_path):
        spec = ev.ExperimentSpec("next-location", ("cmdrnn", "knn"), corridor, config=TINY_CMDRNN)
        a = ev.write_reports(ev.run_experiment(spec), tmp_path / "a")
        b = ev.write_reports(ev.run_experiment(spec), tmp_path / "b")
        assert a["json"].read_bytes() == b["json"].read_bytes()
        assert a["csv"].read_bytes() == b["csv"].read_bytes()

    def test_sweep_shape_and_argmin(self, corridor, tmp_path):
        spec = ev.ExperimentSpec("next-location", ("cmdrnn",), corridor, seeds=(0, 1), config=TINY_CMDRNN)
        reports = ev.sweep(spec, "mixture-count", [1, 2, 3])
        assert [r.value for r in reports] == [1, 2, 3] and all(len(r.per_seed) == 2 for r in reports)
        best = min(reports, key=lambda r: r.mean).value
        assert ev.best_value(reports) == best
        ev.write_sweep_csv(reports, tmp_path / "s.csv")
        rows = list(csv.DictReader(open(tmp_path / "s.csv")))
        assert len(rows) == 3 and rows[0]["std"] != ""

    def test_memory_sweep_changes_windows(self, corridor):
        spec = ev.ExperimentSpec("next-location", ("cmdrnn",), corridor, config=TINY_CMDRNN)
        reports = ev.sweep(spec, "memory-length", [1, 4])
        assert [r.config["memory"] for r in reports] == [1, 4]

    def test_unknown_sweep_parameter(self, corridor):
        spec = ev.ExperimentSpec("next-location", ("cmdrnn",), corridor)
        with pytest.raises(ValueError):
            ev.sweep(spec, "hidden-width", [1])

    def test_optimizer_traces(self, corridor, tmp_path):
        spec = ev.ExperimentSpec("next-location", ("cmdrnn",), corridor, config=TINY_CMDRNN)
        rows = ev.compare_optimizers(spec)
        assert {r["label"] for r in rows} == {"rmsprop", "adam"}
        assert len(rows) == 2 * TINY_CMDRNN["epochs"]
        ordering = ev.final_loss_ordering(rows)
        assert [loss for _, loss in ordering] == sorted(loss for _, loss in ordering)
        ev.write_trace_csv(rows, tmp_path / "t.csv")
        assert (tmp_path / "t.csv").read_text().startswith("label,seed,epoch,loss")

    def test_feature_detector_traces(self, corridor):
        spec = ev.ExperimentSpec("next-location", ("cmdrnn",), corridor, config={**TINY_CMDRNN, "ae_layers": (8, 4), "ae_epochs": 1})
        rows = ev.compare_feature_detectors(spec)
        assert {r["label"] for r in rows} == {"rnn+mdn", "ae+rnn+mdn", "cmdrnn"}
