"""Next-location model: construction, gradients, training behaviour, persistence."""

import numpy as np
import pytest

from probloc import autodiff as ad
from probloc import checkpoint, cmdrnn, data, evaluation, mdn
from probloc.cmdrnn import CmdrnnConfig

TINY = dict(filters=4, kernel=3, stride=2, pool=2, feature_units=6, hidden=8, mdn_hidden=6, mixtures=2, memory=2)


def _tiny(input_dim=12, **kw):
    return cmdrnn.Cmdrnn(CmdrnnConfig(input_dim=input_dim, **{**TINY, **kw}))


def _windows(n=6, memory=2, dim=12, seed=0):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(n, memory, dim)), rng.uniform(size=(n, 2))


@pytest.fixture(scope="module")
def corridor():
    ds = data.synth_corridor(n_aps=20, n_steps=400, seed=0)
    train, test = data.split_chronological(ds, 0.8)
    return data.stack_windows(data.make_windows(train, 3)), data.stack_windows(data.make_windows(test, 3))


class TestBuild:
    def test_mdn_output_width(self):
        assert cmdrnn.Cmdrnn(CmdrnnConfig(input_dim=489, mixtures=30)).output_width == 150

    def test_single_component_width(self):
        assert _tiny(mixtures=1).output_width == 5

    def test_tampere_feature_lengths(self):
        cnn = cmdrnn.CNNFeatures(CmdrnnConfig(input_dim=489), np.random.default_rng(0))
        assert (cnn.conv_length, cnn.pooled_length) == (243, 121)

    def test_cmdgru_variant(self):
        m = cmdrnn.ablation_variant("cmdgru", 20, **TINY)
        assert m.cfg.rnn == "gru" and m.cnn is not None and m.cfg.head == "mdn"

    def test_rnn_only_outputs_coordinates(self):
        m = cmdrnn.ablation_variant("rnn-only", 20, **TINY)
        assert m.output_width == 2 and m.cnn is None

    def test_autoencoder_code_size(self):
        m = cmdrnn.ablation_variant("ae+rnn+mdn", 489)
        assert m.ae.code_size == 64

    @pytest.mark.parametrize("kind", sorted(cmdrnn.VARIANTS))
    def test_every_variant_runs(self, kind):
        m = cmdrnn.ablation_variant(kind, 12, **{**TINY, "ae_layers": (8, 4)})
        X, _ = _windows()
        assert m.forward(X).shape == (6, m.output_width)

    @pytest.mark.parametrize(
        "bad", [dict(memory=0), dict(mixtures=0), dict(rnn="bilstm"), dict(head="gp"), dict(kernel=50)]
    )
    def test_invalid_config(self, bad):
        with pytest.raises(ValueError):
            _tiny(**bad)

    def test_same_seed_same_weights(self):
        a, b = _tiny(seed=3), _tiny(seed=3)
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert np.array_equal(pa.data, pb.data)


class TestGradients:
    @pytest.mark.parametrize("rnn", ["vanilla", "lstm", "gru"])
    def test_end_to_end(self, rnn):
        model = _tiny(rnn=rnn)
        X, Y = _windows()
        report = ad.gradient_check(lambda: model.loss(X, Y), model.named_parameters())
        assert report.passed, str(report)

    def test_mse_head(self):
        model = cmdrnn.ablation_variant("cnn+rnn", 12, **TINY)
        X, Y = _windows()
        assert ad.gradient_check(lambda: model.loss(X, Y), model.named_parameters()).passed


class TestPredict:
    def test_untrained_params_valid(self):
        params = _tiny().predict_next(_windows()[0])
        params.validate()

    def test_deterministic(self):
        m = _tiny()
        X, _ = _windows()
        a, b = m.predict_next(X), m.predict_next(X)
        assert np.array_equal(a.weights, b.weights) and np.array_equal(a.means, b.means)

    def test_hidden_state_reset(self):
        m = _tiny()
        X, _ = _windows(n=4)
        alone = m.predict_point(X[2:3])
        _ = m.predict_point(X[:2])
        np.testing.assert_array_equal(m.predict_point(X[2:3]), alone)
        np.testing.assert_allclose(m.predict_point(X)[2:3], alone, rtol=1e-12)

    def test_wrong_window_length(self):
        with pytest.raises(ValueError):
            _tiny().forward(np.zeros((1, 3, 12)))

    def test_predict_next_needs_mixture(self):
        with pytest.raises(ValueError):
            cmdrnn.ablation_variant("rnn-only", 12, **TINY).predict_next(_windows()[0])


class TestTraining:
    def test_zero_epochs(self):
        m = _tiny()
        before = [p.data.copy() for p in m.parameters()]
        trace = cmdrnn.train(m, _windows(), epochs=0)
        assert trace.epoch_loss == [] and m.input_scaler is None
        assert all(np.array_equal(a, p.data) for a, p in zip(before, m.parameters()))

    def test_corridor_loss_decreases(self, corridor):
        (X, Y), _ = corridor
        m = cmdrnn.Cmdrnn(CmdrnnConfig(input_dim=20, **{**TINY, "memory": 3, "mixtures": 3, "lr": 5e-3, "batch_size": 32}))
        trace = cmdrnn.train(m, (X, Y), epochs=50)
        assert trace.epoch_loss[-1] < trace.epoch_loss[0]

    def test_repeated_window_respects_bound(self):
        m = _tiny(lr=1e-2, batch_size=1)
        X, Y = _windows(n=1)
        trace = cmdrnn.train(m, (X, Y), epochs=200)
        assert min(trace.epoch_loss) >= mdn.NLL_LOWER_BOUND
        assert trace.epoch_loss[-1] < trace.epoch_loss[0] - 5.0

    def test_beats_previous_position(self):
        ds = data.synth_corridor(seed=0)
        spec = evaluation.ExperimentSpec(
            "next-location", ("cmdrnn", "previous"), ds, seeds=(0,), config=evaluation.DESK_SCALE_CMDRNN, eval_samples=False
        )
        model, previous = evaluation.run_experiment(spec)
        assert model.mean < previous.mean

    def test_divergence_reports_location(self):
        m = _tiny(lr=1e300)
        with np.errstate(all="ignore"), pytest.raises(cmdrnn.TrainingDiverged) as info:
            cmdrnn.train(m, _windows(n=8), epochs=5)
        assert info.value.epoch >= 0 and info.value.batch >= 0

    def test_traces_bit_identical(self, corridor):
        (X, Y), _ = corridor
        runs = [cmdrnn.train(_tiny(input_dim=20, memory=3, seed=11), (X[:64], Y[:64]), epochs=10).epoch_loss for _ in range(2)]
        assert runs[0] == runs[1]


class TestPersistence:
    def test_round_trip(self, tmp_path, corridor):
        (X, Y), (Xt, _) = corridor
        m = _tiny(input_dim=20, memory=3)
        cmdrnn.train(m, (X[:32], Y[:32]), epochs=2)
        m.scaler = data.TargetScaler.fit(Y)
        m.save(tmp_path / "c.json")
        back = cmdrnn.Cmdrnn.load(tmp_path / "c.json")
        assert np.array_equal(back.predict_point(Xt), m.predict_point(Xt))
        assert back.cfg == m.cfg

    def test_wrong_kind(self, tmp_path):
        checkpoint.save(tmp_path / "v.json", "vae", {}, {})
        with pytest.raises(checkpoint.CheckpointError):
            cmdrnn.Cmdrnn.load(tmp_path / "v.json")
