"""Adaptive weighting fusion head: features, dynamic filters, mask blend."""

import numpy as np
import pytest

from duofuse import fusion_lsr, ops
from duofuse.fileio import WeightStore
from duofuse.layers import bind
from duofuse.tape import Node, backward, value_of

from helpers import finite_difference_check


def make_inputs(rng, h, w):
    return dict(
        l_hat=rng.random((h, w, 3)),
        l1=rng.random((h, w, 3)),
        l2=rng.random((h, w, 3)),
        d1=rng.uniform(-2, 2, (h, w, 1)),
        d2=rng.uniform(-2, 2, (h, w, 1)),
        f0=rng.uniform(-1, 1, (h, w, 2)),
        f_t=rng.uniform(-1, 1, (h, w, 2)),
    )


def zero_store():
    store = WeightStore()
    for spec in fusion_lsr.param_specs():
        store[spec.name] = np.zeros(spec.shape)
    return store


def fixture_params(seed=42, trainable=False):
    store = fusion_lsr.init_weights(np.random.default_rng(seed))
    return bind(store, fusion_lsr.param_specs(), trainable=trainable)


class TestFusionFeatures:
    def test_zero_weights_zero_features(self):
        rng = np.random.default_rng(0)
        params = bind(zero_store(), fusion_lsr.param_specs())
        ins = make_inputs(rng, 16, 16)
        fm = fusion_lsr.fusion_features(params=params, **ins)
        np.testing.assert_array_equal(fm, 0.0)
        masks = ops.channel_softmax(fm[:, :, 50:53])
        np.testing.assert_allclose(masks, 1.0 / 3.0, atol=1e-15)

    @pytest.mark.parametrize("h,w", [(16, 16), (24, 16), (32, 8)])
    def test_output_shape(self, h, w):
        rng = np.random.default_rng(1)
        params = fixture_params()
        fm = fusion_lsr.fusion_features(params=params, **make_inputs(rng, h, w))
        assert value_of(fm).shape == (h, w, 53)

    def test_channel_layout_validated(self):
        rng = np.random.default_rng(2)
        ins = make_inputs(rng, 16, 16)
        ins["d1"] = rng.random((16, 16, 2))  # wrong channel count
        with pytest.raises(ValueError):
            fusion_lsr.fusion_features(params=fixture_params(), **ins)

    def test_resolution_mismatch_rejected(self):
        rng = np.random.default_rng(3)
        ins = make_inputs(rng, 16, 16)
        ins["l1"] = rng.random((8, 16, 3))
        with pytest.raises(ValueError):
            fusion_lsr.fusion_features(params=fixture_params(), **ins)

    def test_missing_weights_rejected(self):
        store = fusion_lsr.init_weights(np.random.default_rng(4))
        partial = WeightStore({n: a for i, (n, a) in enumerate(store.items()) if i > 0})
        with pytest.raises(KeyError):
            bind(partial, fusion_lsr.param_specs())

    def test_golden_statistics(self):
        # frozen from the first verified run of this head (seed 42 weights,
        # seed 7 inputs); guards against silent numeric drift
        rng = np.random.default_rng(7)
        fm = value_of(fusion_lsr.fusion_features(
            params=fixture_params(), **make_inputs(rng, 16, 16)))
        golden = GOLDEN_FEATURE_STATS
        np.testing.assert_allclose(
            [fm.mean(), np.abs(fm).sum(), fm[3, 5, 10], fm[12, 2, 52]],
            golden, rtol=1e-9)


class TestDynamicFilter:
    def test_delta_kernel_identity(self):
        rng = np.random.default_rng(5)
        img = rng.random((6, 7, 3))
        k = np.zeros((6, 7, 25))
        k[:, :, 12] = 1.0  # center tap (i=2, j=2)
        np.testing.assert_array_equal(fusion_lsr.apply_dynamic_filter(img, k), img)

    def test_uniform_kernel_constant_image(self):
        img = np.full((5, 5, 3), 0.7)
        k = np.full((5, 5, 25), 1.0 / 25.0)
        np.testing.assert_allclose(fusion_lsr.apply_dynamic_filter(img, k), 0.7, atol=1e-12)

    def test_uniform_kernel_delta_image_oracle(self):
        img = np.zeros((5, 5, 1))
        img[2, 2, 0] = 1.0
        k = np.full((5, 5, 25), 1.0 / 25.0)
        out = fusion_lsr.apply_dynamic_filter(img, k)
        # 25-tap summation oracle with replicate borders
        want = np.zeros((5, 5, 1))
        for y in range(5):
            for x in range(5):
                acc = 0.0
                for i in range(5):
                    for j in range(5):
                        sy = min(max(y - 2 + i, 0), 4)
                        sx = min(max(x - 2 + j, 0), 4)
                        acc += img[sy, sx, 0] / 25.0
                want[y, x, 0] = acc
        np.testing.assert_allclose(out, want, atol=1e-12)
        assert np.all(out > 0)  # the delta is within reach of every 5x5 window

    def test_linear_in_image(self):
        rng = np.random.default_rng(6)
        k = rng.standard_normal((6, 6, 25))
        a, b = 1.3, -0.4
        x, y = rng.random((6, 6, 3)), rng.random((6, 6, 3))
        lhs = fusion_lsr.apply_dynamic_filter(a * x + b * y, k)
        rhs = a * fusion_lsr.apply_dynamic_filter(x, k) \
            + b * fusion_lsr.apply_dynamic_filter(y, k)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            fusion_lsr.apply_dynamic_filter(np.zeros((4, 4, 1)), np.zeros((4, 5, 25)))
        with pytest.raises(ValueError):
            fusion_lsr.apply_dynamic_filter(np.zeros((4, 4, 1)), np.zeros((4, 4, 24)))

    def test_gradients(self):
        rng = np.random.default_rng(8)
        img = rng.random((5, 6, 2))
        k = rng.standard_normal((5, 6, 25))
        finite_difference_check(fusion_lsr.apply_dynamic_filter, (img, k), [0, 1],
                                rng, max_coords=60)

    def test_explicit_backward_entrypoint(self):
        rng = np.random.default_rng(9)
        img = rng.random((4, 4, 3))
        k = rng.standard_normal((4, 4, 25))
        g = rng.random((4, 4, 3))
        gi, gk = fusion_lsr.apply_dynamic_filter_backward(img, k, g)
        assert gi.shape == img.shape and gk.shape == k.shape


class TestBlend:
    def test_equal_logits_arithmetic_mean(self):
        rng = np.random.default_rng(10)
        a, b, c = (rng.random((4, 4, 3)) for _ in range(3))
        out = fusion_lsr.blend(a, b, c, np.zeros((4, 4, 3)))
        np.testing.assert_allclose(out, (a + b + c) / 3.0, atol=1e-12)

    def test_saturated_logit_selects_l_hat(self):
        rng = np.random.default_rng(11)
        a, b, c = (rng.random((4, 4, 3)) for _ in range(3))
        logits = np.zeros((4, 4, 3))
        logits[:, :, 2] = 30.0
        out = fusion_lsr.blend(a, b, c, logits)
        assert np.max(np.abs(out - c)) < 1e-9

    def test_identical_inputs_fixed_point(self):
        rng = np.random.default_rng(12)
        x = rng.random((4, 4, 3))
        logits = rng.standard_normal((4, 4, 3)) * 5
        np.testing.assert_allclose(fusion_lsr.blend(x, x, x, logits), x, atol=1e-12)

    def test_convex_combination_bounds(self):
        rng = np.random.default_rng(13)
        for _ in range(20):
            a, b, c = (rng.random((6, 6, 3)) for _ in range(3))
            logits = rng.standard_normal((6, 6, 3)) * 10
            out = fusion_lsr.blend(a, b, c, logits)
            lo = np.minimum(np.minimum(a, b), c)
            hi = np.maximum(np.maximum(a, b), c)
            assert np.all(out >= lo - 1e-12)
            assert np.all(out <= hi + 1e-12)

    def test_masks_sum_to_one(self):
        rng = np.random.default_rng(14)
        masks = ops.channel_softmax(rng.standard_normal((8, 8, 3)) * 20)
        np.testing.assert_allclose(masks.sum(axis=-1), 1.0, atol=1e-6)


class TestFullHead:
    def test_reconstruct_shape_and_range_structure(self):
        rng = np.random.default_rng(15)
        ins = make_inputs(rng, 16, 16)
        out = fusion_lsr.reconstruct(params=fixture_params(), **ins)
        assert value_of(out).shape == (16, 16, 3)

    def test_gradients_through_filters_masks_blend(self):
        rng = np.random.default_rng(16)
        ins = make_inputs(rng, 8, 8)
        args = [ins[k] for k in ("l_hat", "l1", "l2", "d1", "d2", "f0", "f_t")]
        params = fixture_params()
        finite_difference_check(
            lambda *xs: fusion_lsr.reconstruct(*xs, params=params),
            tuple(args), [0, 1, 2], rng, max_coords=25)

    def test_weight_gradients(self):
        rng = np.random.default_rng(17)
        ins = make_inputs(rng, 8, 8)
        store = fusion_lsr.init_weights(np.random.default_rng(42))
        name = "fusion_lsr/head/weight"

        def run(wname_value):
            params = bind(store, fusion_lsr.param_specs())
            params[name] = wname_value
            return fusion_lsr.reconstruct(params=params, **ins)

        finite_difference_check(run, (store[name],), [0], rng, max_coords=20)


GOLDEN_FEATURE_STATS = [-0.01233277174502241, 5663.06329742973,
                        -0.6972592947783911, 0.32600298677193085]
