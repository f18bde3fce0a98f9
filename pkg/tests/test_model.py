import numpy as np
import pytest

from emireg.errors import ConfigError, ShapeError, StateError
from emireg.layers import adaptive_avg_pool
from emireg.model import MODALITIES, Model, fuse, unfuse_grad
from emireg.tensor import grad_check, relu, sigmoid

from support import TINY_DIMS, default_weights, param_loss_fn, tiny_model_case


def tiny_model(seed=0, **kwargs):
    defaults = dict(dims=TINY_DIMS, hidden_dim=6, align_len=8, dropout=0.0, seed=seed)
    defaults.update(kwargs)
    return Model(**defaults)


def tiny_features(rng, batch=4, align=8):
    return {m: rng.normal(size=(batch, align, d)) for m, d in TINY_DIMS.items()}


class TestFuse:
    def test_concat_order(self):
        out = fuse([1.0, 2.0], [3.0, 4.0], [5.0, 6.0], "concat")
        assert np.array_equal(out, [1.0, 2.0, 3.0, 4.0, 5.0, 6.0])

    def test_average(self):
        out = fuse([1.0, 2.0], [3.0, 4.0], [5.0, 6.0], "average")
        assert np.array_equal(out, [3.0, 4.0])

    def test_concat_width_at_paper_hidden_size(self, rng):
        zs = [rng.normal(size=(2, 256)) for _ in range(3)]
        assert fuse(*zs, "concat").shape == (2, 768)

    def test_concat_is_lossless(self, rng):
        zs = {m: rng.normal(size=(3, 5)) for m in MODALITIES}
        fused = fuse(zs["visual"], zs["audio"], zs["text"], "concat")
        for i, m in enumerate(MODALITIES):
            assert np.array_equal(fused[:, 5 * i : 5 * (i + 1)], zs[m])

    def test_unknown_mode(self):
        with pytest.raises(ConfigError):
            fuse([1.0], [2.0], [3.0], "bilinear")

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            fuse([1.0, 2.0], [3.0], [5.0, 6.0], "concat")

    def test_unfuse_concat_roundtrip(self, rng):
        d = rng.normal(size=(4, 15))
        parts = unfuse_grad(d, 5, "concat")
        assert np.array_equal(
            np.concatenate([parts[m] for m in MODALITIES], axis=1), d
        )

    def test_unfuse_average_splits_evenly(self, rng):
        d = rng.normal(size=(4, 5))
        parts = unfuse_grad(d, 5, "average")
        for m in MODALITIES:
            np.testing.assert_array_equal(parts[m], d / 3.0)


class TestBranch:
    def test_constant_rows_reduce_to_projection(self, rng):
        model = tiny_model()
        c = rng.normal(size=TINY_DIMS["visual"])
        seq = np.tile(c, (13, 1))  # time-invariant input
        z = model.branch_embed(seq, "visual")
        expected = relu(model.proj["visual"].weight.value @ c)
        np.testing.assert_allclose(z, expected, atol=1e-12)

    def test_zero_input_zero_bias_gives_zero(self):
        model = tiny_model()
        z = model.branch_embed(np.zeros((5, TINY_DIMS["text"])), "text")
        assert np.array_equal(z, np.zeros(6))

    def test_step_by_step_composition(self, rng):
        model = tiny_model()
        seq = rng.normal(size=(11, TINY_DIMS["audio"]))
        pooled = adaptive_avg_pool(seq, 8)
        projected = pooled @ model.proj["audio"].weight.value.T
        expected = relu(projected).mean(axis=0)  # dropout off, so a no-op
        np.testing.assert_allclose(model.branch_embed(seq, "audio"), expected, atol=1e-12)

    def test_dim_mismatch(self):
        model = tiny_model()
        with pytest.raises(ConfigError):
            model.branch_embed(np.zeros((5, 99)), "visual")


class TestVadPathway:
    def test_zero_injection_is_inert(self, rng):
        model = tiny_model()
        assert np.all(model.inj.weight.value == 0.0)  # zero-start by design
        out = model.forward(tiny_features(rng), train=False)
        np.testing.assert_array_equal(out.z["audio"], out.z_audio_main)

    def test_zero_vad_head_centers_latent(self, rng):
        model = tiny_model()
        model.vad_head.weight.value[...] = 0.0
        model.vad_head.bias.value[...] = 0.0
        out = model.forward(tiny_features(rng), train=False)
        assert np.all(out.v_hat == 0.5)

    def test_full_path_composition(self, rng):
        model = tiny_model()
        model.inj.weight.value[...] = rng.normal(size=(6, 3)) * 0.3
        feats = tiny_features(rng)
        out = model.forward(feats, train=False)
        pre = model._cache["audio"]["pre"].reshape(4, 8, 6)
        a_mean = pre.mean(axis=1)
        v_expected = sigmoid(a_mean @ model.vad_head.weight.value.T + model.vad_head.bias.value)
        np.testing.assert_allclose(out.v_hat, v_expected, atol=1e-12)
        z_expected = out.z_audio_main + v_expected @ model.inj.weight.value.T
        np.testing.assert_allclose(out.z["audio"], z_expected, atol=1e-12)

    def test_vad_free_model_matches_zeroed_injection(self, rng):
        with_vad = tiny_model(seed=5)
        without = tiny_model(seed=5, vad_enabled=False)
        # name-keyed init makes the shared parameters identical already
        shared = without.get_values()
        for name, value in shared.items():
            np.testing.assert_array_equal(with_vad.parameters()[name].value, value)
        feats = tiny_features(rng)
        a = with_vad.forward(feats, train=False)
        b = without.forward(feats, train=False)
        assert np.array_equal(a.y_hat, b.y_hat)
        assert b.v_hat is None
        for m in MODALITIES:
            assert np.array_equal(a.aux[m], b.aux[m])


class TestModelForward:
    def test_zero_features_zero_heads_give_half(self, rng):
        model = tiny_model()
        for name, p in model.parameters().items():
            p.value[...] = 0.0
        feats = {m: np.zeros((1, 8, d)) for m, d in TINY_DIMS.items()}
        out = model.forward(feats, train=False)
        assert np.all(out.y_hat == 0.5)
        assert np.all(out.v_hat == 0.5)
        for m in MODALITIES:
            assert np.all(out.aux[m] == 0.5)

    def test_output_shapes_at_paper_batch_size(self, rng):
        model = tiny_model()
        out = model.forward(tiny_features(rng, batch=32), train=False)
        assert out.y_hat.shape == (32, 6)
        assert out.v_hat.shape == (32, 3)
        for m in MODALITIES:
            assert out.aux[m].shape == (32, 6)
            assert out.z[m].shape == (32, 6)

    def test_outputs_in_unit_interval(self, rng):
        model = tiny_model(seed=3)
        out = model.forward(tiny_features(rng), train=False)
        for arr in (out.y_hat, out.v_hat, *out.aux.values()):
            assert np.all(arr > 0.0) and np.all(arr < 1.0)

    def test_eval_forward_is_repeatable(self, rng):
        model = tiny_model(seed=2, dropout=0.2)
        feats = tiny_features(rng)
        a = model.forward(feats, train=False)
        b = model.forward(feats, train=False)
        assert np.array_equal(a.y_hat, b.y_hat)
        assert np.array_equal(a.v_hat, b.v_hat)

    def test_train_dropout_changes_outputs(self, rng):
        model = tiny_model(seed=2, dropout=0.5)
        feats = tiny_features(rng)
        a = model.forward(feats, train=True)
        b = model.forward(feats, train=True)
        assert not np.array_equal(a.y_hat, b.y_hat)

    def test_average_fusion_shapes(self, rng):
        model = tiny_model(fusion="average")
        out = model.forward(tiny_features(rng), train=False)
        assert out.z_fus.shape == (4, 6)
        assert out.y_hat.shape == (4, 6)

    def test_empty_batch_rejected(self):
        model = tiny_model()
        feats = {m: np.zeros((0, 8, d)) for m, d in TINY_DIMS.items()}
        with pytest.raises(ShapeError):
            model.forward(feats, train=False)

    def test_misaligned_rows_rejected(self, rng):
        model = tiny_model()
        feats = tiny_features(rng)
        feats["audio"] = feats["audio"][:, :5, :]
        with pytest.raises(ShapeError):
            model.forward(feats, train=False)

    def test_wrong_dim_rejected(self, rng):
        model = tiny_model()
        feats = tiny_features(rng)
        feats["text"] = np.zeros((4, 8, 99))
        with pytest.raises(ConfigError):
            model.forward(feats, train=False)


class TestModelBackward:
    def test_backward_before_forward(self):
        model = tiny_model()
        with pytest.raises(StateError):
            model.backward(np.zeros((4, 6)), {}, None)

    def test_zero_upstream_zero_grads(self, rng):
        model = tiny_model()
        model.forward(tiny_features(rng), train=False)
        model.zero_grads()
        model.backward(
            np.zeros((4, 6)),
            {m: np.zeros((4, 6)) for m in MODALITIES},
            np.zeros((4, 3)),
        )
        for p in model.parameters().values():
            assert np.all(p.grad == 0.0)

    def test_no_aux_upstream_zeroes_aux_grads(self, rng):
        model = tiny_model(seed=4)
        model.forward(tiny_features(rng), train=False)
        model.zero_grads()
        model.backward(rng.normal(size=(4, 6)), {}, None)
        for m in MODALITIES:
            assert np.all(model.aux_head[m].weight.grad == 0.0)
            assert np.all(model.aux_head[m].bias.grad == 0.0)

    def test_full_gradient_check(self):
        worst = 0.0
        for seed in range(3):
            model, feats, targets = tiny_model_case(seed)
            f, x0 = param_loss_fn(model, feats, targets, default_weights())
            worst = max(worst, grad_check(f, x0))
        assert worst < 1e-6

    def test_average_fusion_gradient_check(self):
        model, feats, targets = tiny_model_case(11, fusion="average")
        f, x0 = param_loss_fn(model, feats, targets, default_weights())
        assert grad_check(f, x0) < 1e-6

    def test_vad_free_gradient_check(self):
        model, feats, targets = tiny_model_case(12, vad=False)
        f, x0 = param_loss_fn(model, feats, targets, default_weights())
        assert grad_check(f, x0) < 1e-6


class TestParameterPlumbing:
    def test_param_count_formula(self):
        h, dv, da, dt = 6, 5, 4, 3
        model = tiny_model()
        expected = (
            (h * dv + h) + (h * da + h) + (h * dt + h)  # projectors
            + 3 * (6 * h + 6)  # aux heads
            + (3 * h + 3) + (h * 3)  # vad head + injection
            + (h * 3 * h + h) + (6 * h + 6)  # fusion head
        )
        assert model.param_count() == expected

    def test_get_set_roundtrip(self, rng):
        model = tiny_model(seed=1)
        values = model.get_values()
        other = tiny_model(seed=9)
        other.set_values(values)
        feats = tiny_features(rng)
        a = model.forward(feats, train=False)
        b = other.forward(feats, train=False)
        assert np.array_equal(a.y_hat, b.y_hat)

    def test_set_values_rejects_missing(self):
        model = tiny_model()
        values = model.get_values()
        values.pop("fusion.out.bias")
        with pytest.raises(ConfigError):
            model.set_values(values)

    def test_set_values_rejects_bad_shape(self):
        model = tiny_model()
        values = model.get_values()
        values["fusion.out.bias"] = np.zeros(7)
        with pytest.raises(ShapeError):
            model.set_values(values)

    def test_init_is_seed_deterministic(self, rng):
        a = tiny_model(seed=21).get_values()
        b = tiny_model(seed=21).get_values()
        for name in a:
            assert np.array_equal(a[name], b[name])
