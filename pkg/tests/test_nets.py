import numpy as np
import pytest

from ppm_uncertainty import nets, training
from ppm_uncertainty.losses import LossSpec
from ppm_uncertainty.nets import EncodedBatch, ForwardMode, ModelConfig
from ppm_uncertainty.tensor import RngStream

from gradcheck import check


def seq_batch(n=5, vocab=6, seed=0):
    rng = np.random.default_rng(seed)
    ids = rng.integers(1, vocab, size=(n, 10))
    ids[:, :3] = 0  # left padding
    return EncodedBatch(ids, rng.normal(size=(n, 10)))


SMALL = dict(vocab_size=6, embed_dim=3, conv_channels=(4, 3), lstm_hidden=(3, 2), dense_widths=(5, 4))


class TestConfig:
    def test_dense_widths_are_hidden_layers(self):
        with pytest.raises(ValueError, match="dense_widths"):
            ModelConfig(dense_widths=(8, 8, 8))

    @pytest.mark.parametrize("bad", [{"dropout_p": 1.0}, {"arch": "rnn"}, {"kernel_width": 4}, {"l2_lambda": -1.0}])
    def test_invalid(self, bad):
        with pytest.raises(ValueError):
            ModelConfig(**bad)

    def test_dict_round_trip(self):
        cfg = ModelConfig(arch="lstm", **SMALL)
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg


class TestForward:
    @pytest.mark.parametrize("arch", ["cnn", "lstm"])
    @pytest.mark.parametrize("task,width", [("regression", 2), ("classification", 4)])
    def test_output_shape(self, arch, task, width):
        params = nets.build(ModelConfig(arch=arch, task=task, n_classes=3, **SMALL), RngStream(0))
        assert nets.forward(params, seq_batch()).shape == (5, width)

    def test_mlp_shape(self):
        params = nets.build(ModelConfig(arch="mlp", n_inputs=3, dense_widths=(4, 4)), RngStream(0))
        assert nets.forward(params, EncodedBatch.from_features(np.ones((7, 3)))).shape == (7, 2)

    def test_wrong_sequence_length(self):
        params = nets.build(ModelConfig(**SMALL), RngStream(0))
        with pytest.raises(ValueError, match="activity_ids"):
            nets.forward(params, EncodedBatch(np.ones((2, 9), dtype=int), np.zeros((2, 9))))

    @pytest.mark.parametrize("arch", ["cnn", "lstm"])
    def test_deterministic_mode_ignores_dropout(self, arch):
        params = nets.build(ModelConfig(arch=arch, dropout_p=0.5, **SMALL), RngStream(1))
        a = nets.forward(params, seq_batch()).values
        b = nets.forward(params, seq_batch()).values
        np.testing.assert_array_equal(a, b)
        c = nets.forward(params, seq_batch(), ForwardMode.stochastic(RngStream(2))).values
        assert not np.array_equal(a, c)

    @pytest.mark.parametrize("arch", ["cnn", "lstm"])
    def test_stochastic_replays_with_same_stream(self, arch):
        params = nets.build(ModelConfig(arch=arch, dropout_p=0.3, **SMALL), RngStream(1))
        a = nets.forward(params, seq_batch(), ForwardMode.stochastic(RngStream(7))).values
        b = nets.forward(params, seq_batch(), ForwardMode.stochastic(RngStream(7))).values
        np.testing.assert_array_equal(a, b)

    def test_lstm_masks_one_per_row_shared_over_time(self, monkeypatch):
        shapes = []
        real = nets.tn.dropout_mask

        def spy(shape, p, rng):
            shapes.append(tuple(shape))
            return real(shape, p, rng)
        monkeypatch.setattr(nets.tn, "dropout_mask", spy)
        params = nets.build(ModelConfig(arch="lstm", dropout_p=0.5, **SMALL), RngStream(0))
        nets.forward(params, seq_batch(n=4), ForwardMode.stochastic(RngStream(3)))
        lstm_shapes = shapes[:16]
        # layer 1: 4 input masks over (batch, 1, embed + elapsed), 4 recurrent masks over (batch, hidden)
        assert lstm_shapes[:8] == [(4, 1, 4)] * 4 + [(4, 3)] * 4
        assert lstm_shapes[8:] == [(4, 1, 3)] * 4 + [(4, 2)] * 4

    def test_padding_row_is_zero(self):
        params = nets.build(ModelConfig(**SMALL), RngStream(0))
        np.testing.assert_array_equal(params["embedding"].values[0], 0.0)

    def test_forget_gate_bias(self):
        params = nets.build(ModelConfig(arch="lstm", **SMALL), RngStream(0))
        np.testing.assert_array_equal(params["lstm1.b_f.bias"].values, 1.0)

    def test_feature_standardization_stored(self):
        params = nets.build(ModelConfig(arch="mlp", dense_widths=(4, 4)), RngStream(0))
        x = np.linspace(2.0, 4.0, 16)
        training.fit(params, EncodedBatch.from_features(x), x, LossSpec("mse"),
                     training.TrainConfig(epochs=1, early_stop="none"), RngStream(1))
        assert params.meta["feature_mean"] == pytest.approx([3.0])
        shifted = nets.forward(params, EncodedBatch.from_features(x)).values
        params.meta.pop("feature_mean")
        params.meta.pop("feature_std")
        assert not np.allclose(shifted, nets.forward(params, EncodedBatch.from_features(x)).values)


class TestParameters:
    def test_l2_penalty_excludes_biases_and_padding(self):
        params = nets.build(ModelConfig(**SMALL), RngStream(0))
        for t in params.parameters():
            t.values = np.ones_like(t.values)
        n_weights = sum(params[k].size for k in params.weight_names()) - SMALL["embed_dim"]
        assert nets.l2_penalty(params, 0.5).item() == 0.5 * n_weights

    def test_save_load_exact(self, tmp_path):
        params = nets.build(ModelConfig(arch="lstm", **SMALL), RngStream(4))
        params.meta["target_mean"] = 1.25
        params.save(tmp_path / "m.json")
        again = nets.ModelParams.load(tmp_path / "m.json")
        assert again.config == params.config and again.meta == params.meta
        np.testing.assert_array_equal(nets.forward(again, seq_batch()).values, nets.forward(params, seq_batch()).values)


class TestEndToEndGradients:
    @pytest.mark.parametrize("arch", ["cnn", "lstm"])
    @pytest.mark.parametrize("kind", ["hetero", "attenuated_ce"])
    def test_loss_gradient_through_network(self, arch, kind):
        task = "regression" if kind == "hetero" else "classification"
        params = nets.build(ModelConfig(arch=arch, task=task, dropout_p=0.2, **SMALL), RngStream(0))
        batch = seq_batch(n=3)
        y = np.array([0.5, -1.0, 2.0]) if task == "regression" else np.array([0, 1, 1])
        mode = ForwardMode.train(RngStream(5))
        names = [n for n in sorted(params.tensors) if n != "embedding"][:6] + ["head.weight"]
        inputs = [params[n] for n in names]

        def f():
            return training.batch_loss(params, batch, y, LossSpec(kind), mode, RngStream(6))
        assert check(f, inputs) < 1e-4
