import numpy as np
import pytest

from emireg.errors import ConfigError, ShapeError
from emireg.losses import (
    LossWeights,
    aux_loss,
    mse_loss,
    pearson_loss,
    total_loss,
    vad_reg_loss,
)
from emireg.tensor import grad_check


def _batch(rng, n=8):
    return rng.uniform(0.05, 0.95, size=(n, 6))


class TestMse:
    def test_zero_at_equality(self, rng):
        y = _batch(rng)
        value, grad = mse_loss(y, y)
        assert value == 0.0
        assert np.array_equal(grad, np.zeros_like(y))

    def test_unit_error(self):
        value, _ = mse_loss(np.ones((4, 6)), np.zeros((4, 6)))
        assert value == 1.0

    def test_single_dim_error(self):
        # one sample, error 0.3 in one dim: 0.3^2 / 6 = 0.015
        y_hat = np.zeros((1, 6))
        y_hat[0, 2] = 0.3
        value, _ = mse_loss(y_hat, np.zeros((1, 6)))
        assert value == pytest.approx(0.015, abs=1e-15)

    def test_gradient_formula(self, rng):
        y_hat, y = _batch(rng), _batch(rng)
        _, grad = mse_loss(y_hat, y)
        np.testing.assert_allclose(grad, 2 * (y_hat - y) / (6 * y.shape[0]))

    def test_gradient_check(self, rng):
        y = _batch(rng)

        def f(y_hat):
            return mse_loss(y_hat, y)

        assert grad_check(f, _batch(rng)) < 1e-6

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            mse_loss(np.zeros((2, 6)), np.zeros((3, 6)))


class TestPearsonLoss:
    def test_perfect_correlation(self, rng):
        y = _batch(rng)
        value, grad = pearson_loss(y, y)
        assert value == pytest.approx(0.0, abs=1e-12)

    def test_anti_correlation(self, rng):
        y = _batch(rng)
        value, _ = pearson_loss(1.0 - y, y)
        assert value == pytest.approx(2.0, abs=1e-12)

    def test_constant_prediction_degenerate(self, rng):
        y = _batch(rng)
        y_hat = np.full_like(y, 0.4)
        value, grad = pearson_loss(y_hat, y)
        assert value == 1.0
        assert np.array_equal(grad, np.zeros_like(y))

    def test_single_degenerate_dim(self, rng):
        y = _batch(rng)
        y_hat = y.copy()
        y_hat[:, 3] = 0.25  # one collapsed dim contributes 1, others 0
        value, _ = pearson_loss(y_hat, y)
        assert value == pytest.approx(1.0 / 6.0, abs=1e-12)

    def test_affine_invariance(self, rng):
        y = _batch(rng)
        y_hat = _batch(rng)
        base, _ = pearson_loss(y_hat, y)
        scaled, _ = pearson_loss(3.5 * y_hat + 0.7, y)
        assert scaled == pytest.approx(base, abs=1e-10)

    def test_negation_flips_contribution(self, rng):
        y = _batch(rng)
        y_hat = _batch(rng)
        base, _ = pearson_loss(y_hat, y)
        flipped, _ = pearson_loss(-y_hat, y)
        assert flipped == pytest.approx(2.0 - base, abs=1e-10)

    def test_batch_too_small(self):
        with pytest.raises(ShapeError):
            pearson_loss(np.zeros((1, 6)), np.zeros((1, 6)))

    def test_gradient_check_per_dim(self, rng):
        y = _batch(rng)

        def f(y_hat):
            return pearson_loss(y_hat, y)

        assert grad_check(f, _batch(rng)) < 1e-6

    def test_flat_mode_gradient_check(self, rng):
        y = _batch(rng)

        def f(y_hat):
            return pearson_loss(y_hat, y, mode="flat")

        assert grad_check(f, _batch(rng)) < 1e-6

    def test_flat_mode_differs_from_per_dim(self, rng):
        y = _batch(rng)
        y_hat = _batch(rng)
        per_dim, _ = pearson_loss(y_hat, y)
        flat, _ = pearson_loss(y_hat, y, mode="flat")
        assert per_dim != flat

    def test_unknown_mode(self, rng):
        with pytest.raises(ConfigError):
            pearson_loss(_batch(rng), _batch(rng), mode="solo")


class TestAuxLoss:
    def test_zero_weights(self, rng):
        y = _batch(rng)
        preds = {m: _batch(rng) for m in ("visual", "audio", "text")}
        weights = LossWeights(aux_visual=0.0, aux_audio=0.0, aux_text=0.0)
        total, grads, _ = aux_loss(preds, y, weights)
        assert total == 0.0
        assert all(np.array_equal(g, np.zeros_like(y)) for g in grads.values())

    def test_exact_predictions(self, rng):
        y = _batch(rng)
        preds = {m: y.copy() for m in ("visual", "audio", "text")}
        total, _, _ = aux_loss(preds, y, LossWeights())
        assert total == 0.0

    def test_composition_of_mse(self):
        # each branch with a single 0.3 error: 3 x 0.015 = 0.045
        y = np.zeros((1, 6))
        pred = np.zeros((1, 6))
        pred[0, 0] = 0.3
        preds = {m: pred.copy() for m in ("visual", "audio", "text")}
        total, _, per_branch = aux_loss(preds, y, LossWeights())
        assert total == pytest.approx(0.045, abs=1e-15)
        assert per_branch["audio"] == pytest.approx(0.015, abs=1e-15)


class TestVadRegLoss:
    def test_center_is_zero(self):
        value, grad = vad_reg_loss(np.full((3, 3), 0.5))
        assert value == 0.0
        assert np.array_equal(grad, np.zeros((3, 3)))

    def test_corner(self):
        value, _ = vad_reg_loss(np.ones((1, 3)))
        assert value == 0.75

    def test_mixed(self):
        value, _ = vad_reg_loss(np.array([[0.0, 0.5, 1.0]]))
        assert value == 0.5

    def test_gradient_check(self, rng):
        def f(v):
            return vad_reg_loss(v)

        assert grad_check(f, rng.uniform(0.1, 0.9, (5, 3))) < 1e-6


class TestTotalLoss:
    def _outputs(self, rng, n=8):
        y_hat = _batch(rng, n)
        y = _batch(rng, n)
        aux = {m: _batch(rng, n) for m in ("visual", "audio", "text")}
        v_hat = rng.uniform(0.1, 0.9, (n, 3))
        return y_hat, y, aux, v_hat

    def test_all_zero_weights_give_pure_mse(self, rng):
        y_hat, y, aux, v_hat = self._outputs(rng)
        weights = LossWeights(corr=0.0, aux=0.0, vad=0.0)
        breakdown, grads = total_loss(y_hat, y, aux, v_hat, weights)
        mse_value, mse_grad = mse_loss(y_hat, y)
        assert breakdown.total == mse_value
        np.testing.assert_array_equal(grads.y_hat, mse_grad)
        assert all(np.all(g == 0) for g in grads.aux.values())
        assert np.all(grads.v_hat == 0)

    def test_weighted_sum(self, rng):
        y_hat, y, aux, v_hat = self._outputs(rng)
        weights = LossWeights(corr=1.0, aux=1.0, vad=1.0)
        breakdown, _ = total_loss(y_hat, y, aux, v_hat, weights)
        expected = breakdown.mse + breakdown.corr + breakdown.aux + breakdown.vad
        assert breakdown.total == pytest.approx(expected, abs=1e-15)

    def test_breakdown_recomposes(self, rng):
        y_hat, y, aux, v_hat = self._outputs(rng)
        weights = LossWeights(corr=0.5, aux=0.3, vad=0.1)
        breakdown, _ = total_loss(y_hat, y, aux, v_hat, weights)
        recomposed = (
            breakdown.mse
            + weights.corr * breakdown.corr
            + weights.aux * breakdown.aux
            + weights.vad * breakdown.vad
        )
        assert abs(breakdown.total - recomposed) < 1e-15

    def test_hand_sum(self):
        # mse=0.1, corr=0.5, aux=0.2, vad=0.3 with unit weights -> 1.1
        assert 0.1 + 1.0 * 0.5 + 1.0 * 0.2 + 1.0 * 0.3 == pytest.approx(1.1)

    def test_gradient_check_y_hat(self, rng):
        _, y, aux, v_hat = self._outputs(rng)
        weights = LossWeights(corr=0.5, aux=0.3, vad=0.1)

        def f(y_hat):
            breakdown, grads = total_loss(y_hat, y, aux, v_hat, weights)
            return breakdown.total, grads.y_hat

        assert grad_check(f, _batch(rng)) < 1e-6

    def test_gradient_check_v_hat(self, rng):
        y_hat, y, aux, _ = self._outputs(rng)
        weights = LossWeights(corr=0.5, aux=0.3, vad=0.1)

        def f(v_hat):
            breakdown, grads = total_loss(y_hat, y, aux, v_hat, weights)
            return breakdown.total, grads.v_hat

        assert grad_check(f, rng.uniform(0.1, 0.9, (8, 3))) < 1e-6

    def test_gradient_check_aux(self, rng):
        y_hat, y, aux, v_hat = self._outputs(rng)
        weights = LossWeights(corr=0.5, aux=0.3, vad=0.1)

        def f(pred):
            current = dict(aux, audio=pred)
            breakdown, grads = total_loss(y_hat, y, current, v_hat, weights)
            return breakdown.total, grads.aux["audio"]

        assert grad_check(f, _batch(rng)) < 1e-6

    def test_singleton_batch_is_degenerate_not_fatal(self, rng):
        y_hat = _batch(rng, 1)
        y = _batch(rng, 1)
        aux = {m: _batch(rng, 1) for m in ("visual", "audio", "text")}
        breakdown, grads = total_loss(y_hat, y, aux, None, LossWeights())
        assert breakdown.corr == 1.0
        assert np.all(grads.y_hat == mse_loss(y_hat, y)[1] + 0.0)

    def test_negative_weight_rejected(self):
        with pytest.raises(ConfigError):
            LossWeights(corr=-0.1)
