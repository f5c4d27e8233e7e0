from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lisae.errors import ConsistencyError, ModelFormatError, NumericError, ParameterError
from lisae.neural import (
    DEEP_MAGIC,
    DeepModel,
    Gradients,
    Layer,
    MomentumState,
    activate,
    apply_gradients,
    backward,
    build_model,
    clip_gradients,
    forward,
    load_model,
    model_from_bytes,
    model_to_bytes,
    save_model,
    set_freeze,
)
from oracles import central_difference, rel_error


def zero_grads(model):
    return Gradients([np.zeros_like(l.weights) for l in model.layers],
                     [np.zeros_like(l.biases) for l in model.layers],
                     [l.frozen for l in model.layers])


def small_net(seed):
    """Random net with dims <= 4 and random biases."""
    rng = np.random.default_rng(seed)
    m = int(rng.integers(3, 5))
    d = int(rng.integers(1, m))
    hidden = tuple(int(h) for h in rng.integers(1, 5, size=int(rng.integers(0, 2))))
    out_act = ["sigmoid", "identity", "leaky_relu"][seed % 3]
    model = build_model(m, d, hidden, seed=seed, slope=float(rng.uniform(0.01, 0.3)), output_activation=out_act)
    for layer in model.layers:
        layer.weights = layer.weights + 0.5 * rng.standard_normal(layer.weights.shape)
        layer.biases = 0.3 * rng.standard_normal(layer.biases.shape)
    return model, rng


def loss_and_cotangents(model, X, T, w_s):
    """Scalar loss ||out - T||^2 + w_s . s and its gradients wrt output and s."""
    tr = forward(model, X)
    out, s = tr.acts[-1], tr.inputs[tr.latent_index]
    return float(np.sum((out - T) ** 2) + np.sum(w_s * s)), tr, 2 * (out - T), w_s


class TestForward:
    def test_zero_net_outputs_half(self):
        m = build_model(6, 2, (4,), seed=0)
        for layer in m.layers:
            layer.weights = np.zeros_like(layer.weights)
            layer.biases = np.zeros_like(layer.biases)
        assert np.array_equal(forward(m, np.random.default_rng(0).random(6)).output, np.full(6, 0.5))

    def test_tanh_hand_value(self):
        # latent reads x[0] with weight 1, identity decoder
        latent = Layer(np.array([[1.0, 0.0]]), np.zeros(1), "tanh")
        dec = Layer(np.array([[1.0], [0.0]]), np.zeros(2), "identity")
        tr = forward(DeepModel([], latent, [dec]), [0.5, 0.0])
        assert tr.latent[0] == pytest.approx(0.46211715726, abs=1e-11)
        assert tr.latent_preactivation[0] == 0.5

    @given(st.integers(0, 1000), st.floats(-1e6, 1e6))
    def test_latent_strictly_inside(self, seed, scale):
        m = build_model(8, 3, (5,), seed=seed)
        x = np.random.default_rng(seed).standard_normal(8) * scale
        z = forward(m, x).latent
        assert np.all(np.abs(z) < 1)

    def test_replay_is_bit_exact(self, rng):
        m = build_model(10, 3, (6, 4), seed=1)
        X = rng.random((5, 10))
        tr = forward(m, X)
        assert len(tr.inputs) == len(tr.preacts) == len(tr.acts) == len(m.layers)
        h = X
        for layer in m.layers:
            h = activate(layer.activation, h @ layer.weights.T + layer.biases, layer.slope)
        assert np.array_equal(h, tr.output)
        assert np.array_equal(forward(m, X).output, tr.output)

    def test_dimension_mismatch(self):
        with pytest.raises(ParameterError):
            forward(build_model(6, 2, (4,)), np.zeros(5))

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite(self):
        m = build_model(4, 2, (3,), output_activation="identity")
        m.encoder_layers[0].weights = np.full((3, 4), 1e308)
        with pytest.raises(NumericError):
            forward(m, np.ones(4) * 10)

    def test_undercomplete_required(self):
        with pytest.raises(ParameterError):
            build_model(4, 4)

    def test_glorot_bounds_and_determinism(self):
        a, b = build_model(784, 3, seed=7), build_model(784, 3, seed=7)
        assert a.param_blob() == b.param_blob()
        w = a.encoder_layers[0].weights
        assert np.abs(w).max() <= np.sqrt(6 / (784 + 128))
        assert [l.weights.shape for l in a.layers] == [(128, 784), (64, 128), (3, 64), (64, 3), (128, 64), (784, 128)]


class TestBackward:
    @pytest.mark.parametrize("seed", range(50))
    def test_matches_central_difference(self, seed):
        model, rng = small_net(seed)
        X = rng.random((int(rng.integers(1, 4)), model.input_dim))
        T = rng.random(X.shape)
        w_s = rng.standard_normal((X.shape[0], model.latent_layer.in_dim))
        _, tr, g_out, g_s = loss_and_cotangents(model, X, T, w_s)
        grads = backward(model, tr, g_out, g_s)
        for i, layer in enumerate(model.layers):
            f = lambda: loss_and_cotangents(model, X, T, w_s)[0]
            assert rel_error(grads.weights[i], central_difference(f, layer.weights)) < 1e-5
            assert rel_error(grads.biases[i], central_difference(f, layer.biases)) < 1e-5

    def test_zero_cotangent(self, rng):
        m = build_model(6, 2, (4,), seed=0)
        tr = forward(m, rng.random((3, 6)))
        g = backward(m, tr, np.zeros((3, 6)))
        assert all(np.all(w == 0) for w in g.weights) and all(np.all(b == 0) for b in g.biases)

    def test_stale_trace(self, rng):
        m = build_model(6, 2, (4,), seed=0)
        tr = forward(m, rng.random(6))
        apply_gradients(m, zero_grads(m), 0.1, MomentumState())
        with pytest.raises(ConsistencyError):
            backward(m, tr, np.zeros(6))
        with pytest.raises(ConsistencyError):
            backward(m.copy(), forward(m, rng.random(6)), np.zeros(6))

    def test_frozen_layers_get_gradients_marked_skip(self, rng):
        m = build_model(6, 2, (4,), seed=0)
        set_freeze(m, "all_but_latent")
        g = backward(m, forward(m, rng.random(6)), rng.standard_normal(6))
        assert g.skip == [True, False, True, True]
        assert np.any(g.weights[0] != 0)


class TestApply:
    def test_zero_learning_rate(self, rng):
        m = build_model(6, 2, (4,), seed=0)
        before = m.param_blob()
        g = backward(m, forward(m, rng.random(6)), rng.standard_normal(6))
        apply_gradients(m, g, 0.0, MomentumState())
        assert m.param_blob() == before

    def test_plain_step(self):
        m = build_model(6, 2, (4,), seed=0)
        w0 = m.latent_layer.weights[0, 0]
        g = zero_grads(m)
        g.weights[1][0, 0] = 0.7
        apply_gradients(m, g, 0.1, MomentumState(momentum=0.0))
        assert m.latent_layer.weights[0, 0] == w0 - 0.1 * 0.7

    def test_momentum_two_steps(self):
        m = build_model(6, 2, (4,), seed=0)
        state = MomentumState(momentum=0.9)
        g = zero_grads(m)
        g.weights[1][0, 0] = 0.7
        apply_gradients(m, g, 0.1, state)
        w1 = m.latent_layer.weights[0, 0]
        apply_gradients(m, g, 0.1, state)
        assert w1 - m.latent_layer.weights[0, 0] == pytest.approx(0.1 * 0.7 * 1.9, rel=1e-12)

    def test_freeze_contract(self, rng):
        m = build_model(6, 2, (4,), seed=0)
        set_freeze(m, "all_but_latent")
        enc, dec, lat = m.param_blob("encoder"), m.param_blob("decoder"), m.param_blob("latent")
        state = MomentumState()
        for _ in range(5):
            X = rng.random((4, 6))
            tr = forward(m, X)
            apply_gradients(m, backward(m, tr, 2 * (tr.output - X)), 0.1, state)
        assert m.param_blob("encoder") == enc and m.param_blob("decoder") == dec
        assert m.param_blob("latent") != lat
        assert np.any(m.latent_layer.biases != 0)

    def test_unfreeze(self):
        m = build_model(6, 2, (4,))
        set_freeze(m, "all_but_latent")
        set_freeze(m, "none")
        assert not any(l.frozen for l in m.layers)
        with pytest.raises(ParameterError):
            set_freeze(m, "everything")

    def test_shape_mismatch(self):
        m = build_model(6, 2, (4,))
        g = zero_grads(m)
        g.weights[0] = np.zeros((1, 1))
        with pytest.raises(ConsistencyError):
            apply_gradients(m, g, 0.1, MomentumState())

    def test_non_finite_gradient(self):
        m = build_model(6, 2, (4,))
        g = zero_grads(m)
        g.weights[1][0, 0] = np.nan
        with pytest.raises(NumericError):
            apply_gradients(m, g, 0.1, MomentumState())

    def test_clip(self):
        m = build_model(6, 2, (4,))
        g = zero_grads(m)
        g.weights[0][:] = 1.0
        norm = clip_gradients(g, 1.0)
        assert norm == pytest.approx(np.sqrt(24))
        assert np.sqrt(np.sum(g.weights[0] ** 2)) == pytest.approx(1.0)


class TestSerialization:
    def test_round_trip_with_freeze(self, tmp_path, rng):
        m = build_model(10, 3, (6, 4), seed=2)
        set_freeze(m, "all_but_latent")
        save_model(m, tmp_path / "m.bin")
        back = load_model(tmp_path / "m.bin")
        assert back.param_blob() == m.param_blob()
        assert [l.frozen for l in back.layers] == [l.frozen for l in m.layers]
        assert [l.activation for l in back.layers] == [l.activation for l in m.layers]
        X = rng.random((3, 10))
        assert np.array_equal(forward(back, X).output, forward(m, X).output)

    def test_magic_and_truncation(self):
        raw = model_to_bytes(build_model(6, 2, (4,)))
        assert raw.startswith(DEEP_MAGIC)
        with pytest.raises(ModelFormatError):
            model_from_bytes(b"LISAE-LIN1" + raw[10:])
        with pytest.raises(ModelFormatError):
            model_from_bytes(raw[:-3])
        with pytest.raises(ModelFormatError):
            model_from_bytes(raw + b"\0")
