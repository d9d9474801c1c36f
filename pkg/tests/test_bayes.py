import numpy as np
import pytest

from ppm_uncertainty import bayes, nets
from ppm_uncertainty.bayes import decompose_entropy, entropy
from ppm_uncertainty.nets import EncodedBatch, ModelConfig
from ppm_uncertainty.tensor import RngStream

LN2 = np.log(2.0)

SCENARIOS = {
    "confident": [(1.0, 0.0)] * 10,
    "noisy": [(0.5, 0.5)] * 10,
    "disagreeing": [(1.0, 0.0), (0.0, 1.0)] * 5,
}


class TestEntropyDecomposition:
    @pytest.mark.parametrize("name,expected", [
        ("confident", (0.0, 0.0, 0.0)),
        ("noisy", (0.69, 0.0, 0.69)),
        ("disagreeing", (0.69, 0.69, 0.0)),
    ])
    def test_scenarios_to_two_decimals(self, name, expected):
        H, I, HmI = decompose_entropy(np.array(SCENARIOS[name]))
        np.testing.assert_array_equal(np.round([H, I, HmI], 2), expected)

    def test_disagreeing_exact(self):
        H, I, HmI = decompose_entropy(np.array(SCENARIOS["disagreeing"]))
        assert H == pytest.approx(LN2, rel=1e-15)
        assert I == pytest.approx(LN2, rel=1e-15)
        assert HmI == pytest.approx(0.0, abs=1e-15)

    def test_zero_log_zero(self):
        assert entropy(np.array([1.0, 0.0])) == 0.0

    def test_batched_shapes_and_bounds(self):
        rng = np.random.default_rng(0)
        draws = rng.dirichlet(np.ones(3), size=(7, 12))
        H, I, HmI = decompose_entropy(draws)
        assert H.shape == I.shape == (7,)
        assert np.all(I >= 0) and np.all(HmI >= -1e-12) and np.all(H <= np.log(3) + 1e-12)
        np.testing.assert_allclose(H, I + HmI, rtol=0, atol=1e-15)


def _mlp(p=0.1, task="regression", seed=0):
    return nets.build(ModelConfig(arch="mlp", task=task, dense_widths=(8, 8), dropout_p=p), RngStream(seed))


class TestRegressionMC:
    def test_decomposition_formula(self, monkeypatch):
        # two passes, two samples: [ŷ, s] per pass
        raw = np.array([[[1.0, 0.0], [2.0, np.log(4.0)]],
                        [[3.0, 0.0], [2.0, 0.0]]])
        monkeypatch.setattr(bayes, "_stacked_passes", lambda *a: raw)
        params = _mlp()
        params.meta.update(target_mean=10.0, target_std=2.0)
        pred = bayes.mc_predict_regression(params, EncodedBatch.from_features(np.zeros(2)), T=2, rng=RngStream(0))
        # unscaled ŷ: [12, 14] and [16, 14]; variances ×4: [4, 16] and [4, 4]
        np.testing.assert_array_equal(pred.point, [14.0, 14.0])
        np.testing.assert_array_equal(pred.epistemic, [4.0, 0.0])
        np.testing.assert_array_equal(pred.aleatoric, [4.0, 10.0])
        np.testing.assert_array_equal(pred.total, [8.0, 10.0])

    def test_no_dropout_matches_deterministic(self):
        params = _mlp(p=0.0)
        batch = EncodedBatch.from_features(np.linspace(0, 1, 20))
        pred = bayes.mc_predict_regression(params, batch, T=5, rng=RngStream(1))
        point, var = bayes.deterministic_predict(params, batch)
        np.testing.assert_allclose(pred.point, point, rtol=1e-14)
        np.testing.assert_allclose(pred.aleatoric, var, rtol=1e-14)
        assert np.all(pred.epistemic < 1e-25)

    def test_dropout_gives_spread_and_replays(self):
        params = _mlp(p=0.3)
        # x = 0 maps to exactly 0 through zero-bias relu layers, so start away from it
        batch = EncodedBatch.from_features(np.linspace(0.05, 1, 20))
        a = bayes.mc_predict_regression(params, batch, T=10, rng=RngStream(2))
        b = bayes.mc_predict_regression(params, batch, T=10, rng=RngStream(2))
        assert np.all(a.epistemic > 0)
        np.testing.assert_array_equal(a.point, b.point)

    def test_passes_use_distinct_masks_per_row(self):
        params = _mlp(p=0.5)
        batch = EncodedBatch.from_features(np.full(4, 0.3))
        pred = bayes.mc_predict_regression(params, batch, T=20, rng=RngStream(3))
        # identical inputs still get independent weight samples
        assert len(np.unique(pred.point)) == 4

    def test_single_pass_rejected(self):
        with pytest.raises(ValueError):
            bayes.mc_predict_regression(_mlp(), EncodedBatch.from_features(np.zeros(2)), T=1, rng=RngStream(0))


class TestClassificationMC:
    def test_probabilities_and_decomposition(self):
        params = _mlp(p=0.2, task="classification")
        batch = EncodedBatch.from_features(np.linspace(0, 1, 6))
        pred = bayes.mc_predict_classification(params, batch, T=8, rng=RngStream(0))
        np.testing.assert_allclose(pred.probs.sum(axis=1), 1.0, atol=1e-12)
        np.testing.assert_allclose(pred.entropy_H, entropy(pred.probs), atol=1e-12)
        np.testing.assert_allclose(pred.entropy_H, pred.mutual_info_I + pred.aleatoric_HmI, atol=1e-15)
        np.testing.assert_array_equal(pred.p_positive, pred.probs[:, 1])

    def test_logit_sampling_default_follows_training_loss(self):
        params = _mlp(task="classification")
        assert bayes._default_logit_samples(params) == 0
        params.meta.update(loss="attenuated_ce", T_softmax=7)
        assert bayes._default_logit_samples(params) == 7

    def test_deterministic_probabilities(self):
        params = _mlp(task="classification")
        probs = bayes.deterministic_predict(params, EncodedBatch.from_features(np.zeros(3)))
        assert probs.shape == (3, 2)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0)
