import math

import numpy as np
import pytest

from akmpc.embedding import (EmbeddingModel, LossWeights, ParamMask,
                             loss_and_gradients, make_optimizer,
                             verify_koopman_form)
from akmpc.nets import FeatureNetwork


def random_model(seed, n=4, p=1, n_learned=2, hidden=(6,)):
    net = FeatureNetwork.create([n, *hidden, n_learned], seed)
    rng = np.random.default_rng(seed + 100)
    big_n = n + n_learned
    return EmbeddingModel(net, rng.normal(size=(big_n, big_n)) * 0.3,
                          rng.normal(size=(big_n, p)), n, p)


class TestEmbed:
    def test_decode_embed_is_identity(self):
        model = random_model(0)
        rng = np.random.default_rng(1)
        for _ in range(10):
            x = rng.normal(size=4)
            assert np.array_equal(model.decode(model.embed(x)), x)

    def test_zero_network_appends_zeros(self):
        net = FeatureNetwork([np.zeros((2, 4))], [np.zeros(2)])
        model = EmbeddingModel(net, np.eye(6), np.zeros((6, 1)), 4, 1)
        got = model.embed([1.0, 2.0, 3.0, 4.0])
        np.testing.assert_array_equal(got, [1, 2, 3, 4, 0, 0])

    def test_learned_features_match_independent_forward(self):
        # scripted forward pass with explicit loops
        net = FeatureNetwork.create([4, 3, 2], seed=0)
        model = EmbeddingModel(net, np.eye(6), np.zeros((6, 1)), 4, 1)
        x = [0.1, 0.0, 0.2, 0.0]
        hidden = [math.tanh(sum(w * v for w, v in zip(row, x)) + b)
                  for row, b in zip(net.weights[0], net.biases[0])]
        feats = [sum(w * h for w, h in zip(row, hidden)) + b
                 for row, b in zip(net.weights[1], net.biases[1])]
        got = model.embed(x)
        np.testing.assert_array_equal(got[:4], x)
        np.testing.assert_allclose(got[4:], feats, rtol=1e-14)


class TestPredict:
    def test_identity_dynamics(self):
        model = random_model(2)
        model.A[:] = np.eye(6)
        model.B[:] = 0.0
        xi = np.arange(6.0)
        np.testing.assert_array_equal(model.predict_latent(xi, [3.0]), xi)

    def test_pure_input_response(self):
        model = random_model(3)
        model.B[:] = 0.0
        model.B[0, 0] = 1.0
        got = model.predict_latent(np.zeros(6), [2.0])
        np.testing.assert_array_equal(got, 2.0 * np.eye(6)[0])

    def test_matches_direct_arithmetic(self):
        model = random_model(4)
        rng = np.random.default_rng(5)
        xi = rng.normal(size=6)
        u = rng.normal(size=1)
        want = model.A @ xi + model.B @ u
        np.testing.assert_allclose(model.predict_latent(xi, u), want,
                                   atol=1e-14)

    def test_exact_linear_plant_zero_one_step_error(self):
        # matching state-block dynamics reconstruct the plant exactly
        rng = np.random.default_rng(6)
        a0 = rng.normal(size=(4, 4)) * 0.4
        b0 = rng.normal(size=(4, 1))
        model = EmbeddingModel(None, a0, b0, 4, 1)
        x = rng.normal(size=4)
        u = rng.normal(size=1)
        np.testing.assert_allclose(model.predict_state(x, u),
                                   a0 @ x + b0 @ u, atol=1e-14)


class TestLoss:
    def test_zero_on_consistent_batch(self):
        # latent-linear data generated by the model itself
        model = random_model(7)
        rng = np.random.default_rng(8)
        X = rng.normal(size=(5, 4)) * 0.3
        U = rng.normal(size=(5, 1))
        # choose y so that g(y) = A g(x) + B u cannot hold for the network
        # features in general; instead check the lam2-only decoded residual
        pred = model.embed(X) @ model.A.T + U @ model.B.T
        Y = pred[:, :4]
        loss, _ = loss_and_gradients(model, X, U, Y, LossWeights(0.0, 1.0),
                                     ParamMask(True, True, False))
        assert loss == pytest.approx(0.0, abs=1e-20)

    def test_zero_when_both_reconstruction_conditions_hold(self):
        # pure-state features and an exactly linear plant satisfy both terms
        rng = np.random.default_rng(9)
        a0 = rng.normal(size=(4, 4)) * 0.4
        b0 = rng.normal(size=(4, 1))
        model = EmbeddingModel(None, a0, b0, 4, 1)
        X = rng.normal(size=(6, 4))
        U = rng.normal(size=(6, 1))
        Y = X @ a0.T + U @ b0.T
        loss, _ = loss_and_gradients(model, X, U, Y, LossWeights(1.0, 1.0),
                                     ParamMask(True, True, False))
        assert loss == pytest.approx(0.0, abs=1e-24)

    def test_both_weights_zero_rejected(self):
        with pytest.raises(ValueError):
            LossWeights(0.0, 0.0)

    def test_empty_batch_rejected(self):
        model = random_model(10)
        with pytest.raises(ValueError):
            loss_and_gradients(model, np.empty((0, 4)), np.empty((0, 1)),
                               np.empty((0, 4)), LossWeights(), ParamMask())

    def test_loss_nonnegative(self):
        rng = np.random.default_rng(11)
        for seed in range(5):
            model = random_model(seed)
            X = rng.normal(size=(4, 4))
            U = rng.normal(size=(4, 1))
            Y = rng.normal(size=(4, 4))
            loss, _ = loss_and_gradients(model, X, U, Y,
                                         LossWeights(1.0, 0.5), ParamMask())
            assert loss >= 0.0

    @pytest.mark.parametrize("seed", range(3))
    @pytest.mark.parametrize("lam", [(1.0, 0.0), (1.0, 0.7)])
    def test_gradients_match_finite_differences(self, seed, lam):
        model = random_model(seed)
        rng = np.random.default_rng(seed + 50)
        X = rng.normal(size=(3, 4))
        U = rng.normal(size=(3, 1))
        Y = rng.normal(size=(3, 4))
        weights = LossWeights(*lam)
        mask = ParamMask(True, True, True)
        _, grads = loss_and_gradients(model, X, U, Y, weights, mask)
        step = 1e-5
        for got, arr in zip(grads, model.trainable_params(mask)):
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                orig = arr[idx]
                arr[idx] = orig + step
                hi, _ = loss_and_gradients(model, X, U, Y, weights, mask)
                arr[idx] = orig - step
                lo, _ = loss_and_gradients(model, X, U, Y, weights, mask)
                arr[idx] = orig
                want = (hi - lo) / (2.0 * step)
                assert got[idx] == pytest.approx(want, rel=1e-5, abs=1e-8)

    def test_frozen_A_is_bit_identical_after_training_step(self):
        model = random_model(12)
        mask = ParamMask(update_A=False, update_B=True, update_theta=True)
        opt = make_optimizer(model, mask, lr=1e-2)
        a_before = model.A.copy()
        rng = np.random.default_rng(13)
        for _ in range(5):
            X = rng.normal(size=(4, 4))
            U = rng.normal(size=(4, 1))
            Y = rng.normal(size=(4, 4))
            _, grads = loss_and_gradients(model, X, U, Y, LossWeights(), mask)
            opt.step(model.trainable_params(mask), grads)
        assert np.array_equal(model.A, a_before)

    def test_all_flags_false_rejected(self):
        with pytest.raises(ValueError):
            ParamMask(False, False, False)


class TestKoopmanForm:
    def test_drift_only_residual_zero(self):
        grid = np.linspace(-1, 1, 11)
        resid = verify_koopman_form(0.9, 0.1, 0.5, 3, grid, [0.0])
        assert resid < 1e-12

    def test_linear_case(self):
        grid = np.linspace(-1, 1, 11)
        resid = verify_koopman_form(0.9, 0.0, 0.5, 1, grid, grid)
        assert resid < 1e-8

    def test_polynomial_system_below_quadrature_tolerance(self):
        grid = np.linspace(-1, 1, 21)
        resid = verify_koopman_form(0.9, 0.1, 0.5, 3, grid, grid)
        assert resid < 1e-6


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        model = random_model(14)
        path = tmp_path / "model.json"
        model.save(path)
        back = EmbeddingModel.load(path)
        assert back.n == model.n and back.p == model.p
        assert back.big_n == model.big_n
        for a, b in zip(model.all_params(), back.all_params()):
            np.testing.assert_allclose(a, b, rtol=1e-15)
        x = np.array([0.1, -0.2, 0.3, 0.0])
        np.testing.assert_allclose(back.embed(x), model.embed(x), rtol=1e-15)

    def test_roundtrip_without_network(self, tmp_path):
        model = EmbeddingModel(None, np.eye(4), np.ones((4, 1)), 4, 1)
        path = tmp_path / "lin.json"
        model.save(path)
        back = EmbeddingModel.load(path)
        assert back.net is None
        np.testing.assert_array_equal(back.A, model.A)
