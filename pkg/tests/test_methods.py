import math

import numpy as np
import pytest

from balancelab import fusion, trainer
from balancelab.datagen import SyntheticSpec, generate, split
from balancelab.errors import SpecError
from balancelab.fusion import init_model
from balancelab.methods import (
    MethodSpec,
    cosine_logits,
    cosine_objective,
    feature_drop,
    feature_mask,
    grad_modulation,
    kl_align_loss,
    resample_weights,
    symmetric_kl,
    unimodal_blend_loss,
)
from balancelab.trainer import TrainConfig, cross_entropy, fit

from oracles import fd_max_rel_error


def small_model_and_batch(seed=0, m=2, h=3):
    rng = np.random.default_rng(seed)
    dims = (5, 4, 6)[:m]
    arch = [[d, 7, 5] for d in dims]
    model = init_model(arch, h, seed)
    batch = [rng.standard_normal((6, d)) for d in dims]
    labels = rng.integers(0, h, 6)
    return model, batch, labels


class TestMethodSpec:
    def test_unknown_kind(self):
        with pytest.raises(SpecError):
            MethodSpec(kind="prototype")

    def test_negative_strength(self):
        with pytest.raises(SpecError):
            MethodSpec(kind="gradmod", alpha=-1.0)

    def test_rho_range(self):
        with pytest.raises(SpecError):
            MethodSpec(kind="feature_mask", rho_mask=1.5)

    def test_neutral_values(self):
        assert MethodSpec().is_neutral()
        assert MethodSpec(kind="unimodal_blend", w_uni=0.0).is_neutral()
        assert MethodSpec(kind="kl_align", kl_weight=0.0).is_neutral()
        assert MethodSpec(kind="gradmod", alpha=0.0).is_neutral()
        assert MethodSpec(kind="feature_mask", rho_mask=0.0).is_neutral()
        assert MethodSpec(kind="feature_drop", p_max=0.0).is_neutral()
        assert MethodSpec(kind="resample", tau=math.inf).is_neutral()
        assert not MethodSpec(kind="cosine").is_neutral()
        assert not MethodSpec(kind="gradmod", alpha=1.0).is_neutral()

    def test_categories(self):
        assert MethodSpec(kind="kl_align").category == "objective"
        assert MethodSpec(kind="gradmod").category == "optimization"
        assert MethodSpec(kind="feature_drop").category == "feed-forward"
        assert MethodSpec(kind="resample").category == "data"


class TestGradModulation:
    def test_equal_scores_no_modulation(self):
        assert np.array_equal(grad_modulation([0.5, 0.5], 2.0), [1.0, 1.0])

    def test_zero_alpha(self):
        assert np.array_equal(grad_modulation([0.9, 0.1], 0.0), [1.0, 1.0])

    def test_worked_example(self):
        kappa = grad_modulation([0.8, 0.4], 1.0)
        assert kappa[0] == pytest.approx(1.0 - math.tanh(1.0))
        assert kappa[1] == 1.0

    def test_negative_alpha(self):
        with pytest.raises(SpecError):
            grad_modulation([0.5, 0.5], -0.5)

    def test_range_and_ordering(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            m = int(rng.integers(2, 4))
            scores = rng.uniform(0.05, 0.95, m)
            alpha = float(rng.uniform(0.0, 4.0))
            kappa = grad_modulation(scores, alpha)
            assert np.all(kappa > 0.0) and np.all(kappa <= 1.0)
            assert kappa[int(np.argmax(scores))] <= kappa.min() + 1e-12


class TestFeatureMask:
    def feats(self, rng, dims=(6, 6)):
        return [rng.standard_normal((5, d)) for d in dims]

    def test_zero_fraction_identity(self):
        rng = np.random.default_rng(1)
        feats = self.feats(rng)
        out, factors = feature_mask(feats, [0.6, 0.4], 0.0, rng)
        assert out is feats and factors == [None, None]

    def test_full_fraction_zeroes_dominant(self):
        rng = np.random.default_rng(2)
        feats = self.feats(rng)
        out, factors = feature_mask(feats, [0.6, 0.4], 1.0, rng)
        assert not out[0].any()
        assert np.array_equal(out[1], feats[1])

    def test_tie_goes_to_lowest_index(self):
        rng = np.random.default_rng(3)
        feats = self.feats(rng)
        out, factors = feature_mask(feats, [0.5, 0.5], 1.0, rng)
        assert not out[0].any() and out[1].any()

    def test_subset_size(self):
        rng = np.random.default_rng(4)
        feats = self.feats(rng, dims=(10, 10))
        out, factors = feature_mask(feats, [0.9, 0.1], 0.25, rng)
        zeroed = (factors[0] == 0.0).sum()
        assert zeroed == math.ceil(0.25 * 10)


class TestFeatureDrop:
    def test_zero_ceiling_identity(self):
        rng = np.random.default_rng(5)
        feats = [rng.standard_normal((5, 4)) for _ in range(2)]
        out, factors = feature_drop(feats, [0.8, 0.4], 0.0, rng)
        assert out is feats

    def test_equal_scores_identity(self):
        rng = np.random.default_rng(6)
        feats = [rng.standard_normal((5, 4)) for _ in range(2)]
        out, factors = feature_drop(feats, [0.5, 0.5], 0.7, rng)
        assert factors == [None, None]

    def test_worked_probability_and_scaling(self):
        # scores (0.8, 0.4): rho = 2, p = 0.5 * min(1, 1) = 0.5
        rng = np.random.default_rng(7)
        feats = [np.ones((4000, 3)), np.ones((4000, 3))]
        out, factors = feature_drop(feats, [0.8, 0.4], 0.5, rng)
        dropped = (factors[0][:, 0] == 0.0).mean()
        assert dropped == pytest.approx(0.5, abs=0.03)
        kept = factors[0][factors[0] > 0]
        assert kept == pytest.approx(2.0)  # 1 / (1 - p)

    def test_saturated_probability_warns(self):
        rng = np.random.default_rng(8)
        feats = [np.ones((500, 3)), np.ones((500, 3))]
        with pytest.warns(UserWarning):
            out, factors = feature_drop(feats, [0.9, 0.2], 1.0, rng)
        kept = factors[0][factors[0] > 0]
        assert kept.size > 0
        assert kept == pytest.approx(1.0 / (1.0 - 0.99))


class TestResampleWeights:
    def test_uniform_when_contributions_equal(self):
        model, batch, labels = small_model_and_batch(1)
        # zero encoders force identical (uniform) partial distributions
        for enc in model.encoders:
            for layer in enc.layers:
                layer.weight[:] = 0.0
                layer.bias[:] = 0.0
        data = type(generate(SyntheticSpec(2, 3, (5, 4), (1, 1), 1.0, 6, 0)))(
            batch, labels, 3, "derived"
        )
        w = resample_weights(model, data, 0.4)
        assert w == pytest.approx(np.ones(6))

    def test_large_tau_flattens(self):
        model, batch, labels = small_model_and_batch(2)
        data = type(generate(SyntheticSpec(2, 3, (5, 4), (1, 1), 1.0, 6, 0)))(
            batch, labels, 3, "derived"
        )
        w = resample_weights(model, data, 1e9)
        assert np.abs(w - 1.0).max() < 1e-6

    def test_weight_ratio_worked_example(self):
        # contributions 0.9 and 0.1 at tau 0.4 give a ratio of e^2
        assert math.exp(0.9 / 0.4) / math.exp(0.1 / 0.4) == pytest.approx(math.exp(2.0))

    def test_bad_tau(self):
        model, batch, labels = small_model_and_batch(3)
        data = type(generate(SyntheticSpec(2, 3, (5, 4), (1, 1), 1.0, 6, 0)))(
            batch, labels, 3, "derived"
        )
        with pytest.raises(SpecError):
            resample_weights(model, data, 0.0)

    def test_mean_one_normalization(self):
        model, batch, labels = small_model_and_batch(4)
        data = type(generate(SyntheticSpec(2, 3, (5, 4), (1, 1), 1.0, 6, 0)))(
            batch, labels, 3, "derived"
        )
        w = resample_weights(model, data, 0.3)
        assert w.mean() == pytest.approx(1.0)
        assert np.all(w > 0)


class TestSymmetricKl:
    def test_worked_example(self):
        val = symmetric_kl([0.5, 0.5], [0.25, 0.75])
        kl_pq = 0.5 * math.log(2.0) + 0.5 * math.log(2.0 / 3.0)
        kl_qp = 0.25 * math.log(0.5) + 0.75 * math.log(1.5)
        assert val == pytest.approx(kl_pq + kl_qp)
        assert val == pytest.approx(0.2746, abs=2e-4)

    def test_identical_distributions(self):
        assert symmetric_kl([0.3, 0.7], [0.3, 0.7]) == 0.0


class TestKlAlignLoss:
    def test_zero_weight_matches_baseline(self):
        model, batch, labels = small_model_and_batch(5)
        cache = fusion.forward(model, batch)
        base = trainer.baseline_loss(model, cache, labels)
        bundle = kl_align_loss(model, cache, labels, 0.0)
        assert bundle.loss == pytest.approx(base.loss)
        for a, b in zip(bundle.head_grads, base.head_grads):
            assert np.allclose(a, b)

    def test_identical_partials_add_nothing(self):
        model, batch, labels = small_model_and_batch(6)
        model.encoders[1] = model.encoders[0].copy()
        model.head_blocks[1] = model.head_blocks[0].copy()
        twin = [batch[0], batch[0].copy()]
        cache = fusion.forward(model, twin)
        base = trainer.baseline_loss(model, cache, labels)
        bundle = kl_align_loss(model, cache, labels, 1.0)
        assert bundle.loss == pytest.approx(base.loss)

    @pytest.mark.parametrize("m", [2, 3])
    def test_gradients_match_finite_differences(self, m):
        model, batch, labels = small_model_and_batch(7, m=m)
        cache = fusion.forward(model, batch)
        bundle = kl_align_loss(model, cache, labels, 0.7)
        grads = trainer._backward_into_model(model, cache, bundle, None, None)

        def loss_fn(mdl):
            c = fusion.forward(mdl, batch)
            return kl_align_loss(mdl, c, labels, 0.7).loss

        assert fd_max_rel_error(loss_fn, model, grads) < 1e-5


class TestCosine:
    def test_parallel_feature_contributes_scale(self):
        model, batch, labels = small_model_and_batch(8)
        # align modality-0 features with head row 0, zero the rest
        cache = fusion.forward(model, batch)
        w_row = model.head_blocks[0][0]
        cache.features[0][:] = 3.0 * w_row  # parallel, arbitrary positive scale
        cache.features[1][:] = 0.0
        logits = cosine_logits(model, cache, 2.5)
        assert logits[:, 0] == pytest.approx(2.5, abs=1e-9)

    def test_scale_invariance(self):
        model, batch, labels = small_model_and_batch(9)
        cache = fusion.forward(model, batch)
        base = cosine_logits(model, cache, 1.0)
        cache.features[0] *= 17.0
        cache.features[1] *= 0.03
        rescaled = cosine_logits(model, cache, 1.0)
        assert np.allclose(base, rescaled, atol=1e-12)
        model.head_blocks[0] *= 5.0
        again = cosine_logits(model, cache, 1.0)
        assert np.allclose(base, again, atol=1e-12)

    def test_hand_value(self):
        # single row [1, 0] against feature [1, 1]: cos = 1/sqrt(2)
        model = init_model([[2, 2], [2, 2]], 2, 0)
        model.head_blocks[0][:] = np.array([[1.0, 0.0], [0.0, 0.0]])
        model.head_blocks[1][:] = 0.0
        cache = fusion.forward(model, [np.ones((1, 2)), np.zeros((1, 2))])
        cache.features[0][:] = np.array([[1.0, 1.0]])
        cache.features[1][:] = 0.0
        logits = cosine_logits(model, cache, 1.0)
        assert logits[0, 0] == pytest.approx(1.0 / math.sqrt(2.0))

    @pytest.mark.parametrize("m", [2, 3])
    def test_gradients_match_finite_differences(self, m):
        model, batch, labels = small_model_and_batch(10, m=m)
        cache = fusion.forward(model, batch)
        bundle = cosine_objective(model, cache, labels, 4.0)
        grads = trainer._backward_into_model(model, cache, bundle, None, None)

        def loss_fn(mdl):
            c = fusion.forward(mdl, batch)
            return cosine_objective(mdl, c, labels, 4.0).loss

        assert fd_max_rel_error(loss_fn, model, grads) < 1e-5

    def test_bias_gets_no_gradient(self):
        model, batch, labels = small_model_and_batch(11)
        cache = fusion.forward(model, batch)
        bundle = cosine_objective(model, cache, labels, 4.0)
        assert not bundle.bias_grad.any()


class TestUnimodalBlend:
    def test_zero_weight_matches_baseline(self):
        model, batch, labels = small_model_and_batch(12)
        cache = fusion.forward(model, batch)
        base = trainer.baseline_loss(model, cache, labels)
        bundle = unimodal_blend_loss(model, cache, labels, 0.0)
        assert bundle.loss == pytest.approx(base.loss)
        for a, b in zip(bundle.head_grads, base.head_grads):
            assert np.allclose(a, b)

    def test_duplicated_modalities_equal_unimodal_losses(self):
        model, batch, labels = small_model_and_batch(13)
        model.encoders[1] = model.encoders[0].copy()
        model.head_blocks[1] = model.head_blocks[0].copy()
        twin = [batch[0], batch[0].copy()]
        cache = fusion.forward(model, twin)
        l1, _ = cross_entropy(fusion.partial_logits(model, cache, 0), labels)
        l2, _ = cross_entropy(fusion.partial_logits(model, cache, 1), labels)
        assert l1 == l2

    def test_loss_is_sum_of_terms(self):
        model, batch, labels = small_model_and_batch(14)
        cache = fusion.forward(model, batch)
        l_mm, _ = cross_entropy(cache.logits, labels)
        l1, _ = cross_entropy(fusion.partial_logits(model, cache, 0), labels)
        l2, _ = cross_entropy(fusion.partial_logits(model, cache, 1), labels)
        bundle = unimodal_blend_loss(model, cache, labels, 0.4)
        assert bundle.loss == pytest.approx(l_mm + 0.4 * (l1 + l2))

    def test_gradients_match_fd_when_no_conflict(self):
        # the projected update is not a gradient, so check a conflict-free case
        model, batch, labels = small_model_and_batch(15)
        cache = fusion.forward(model, batch)
        g_mm = cross_entropy(cache.logits, labels)[1]
        conflict = False
        for i in range(2):
            g_uni = cross_entropy(fusion.partial_logits(model, cache, i), labels)[1]
            inner = np.vdot(g_uni.T @ cache.features[i], g_mm.T @ cache.features[i])
            conflict = conflict or inner < 0
        assert not conflict, "pick a seed without gradient conflict for the FD check"
        bundle = unimodal_blend_loss(model, cache, labels, 0.6)
        grads = trainer._backward_into_model(model, cache, bundle, None, None)

        def loss_fn(mdl):
            c = fusion.forward(mdl, batch)
            return unimodal_blend_loss(mdl, c, labels, 0.6).loss

        assert fd_max_rel_error(loss_fn, model, grads) < 1e-5

    def test_conflict_projection_orthogonalizes(self):
        # build a synthetic conflict: flip the multimodal gradient sign on one block
        model, batch, labels = small_model_and_batch(16)
        cache = fusion.forward(model, batch)
        g_mm = cross_entropy(cache.logits, labels)[1]
        gw_mm = g_mm.T @ cache.features[0]
        g_uni = cross_entropy(fusion.partial_logits(model, cache, 0), labels)[1]
        gw_uni = -3.0 * gw_mm + 0.01 * g_uni.T @ cache.features[0]
        inner = float(np.vdot(gw_uni, gw_mm))
        assert inner < 0
        projected = gw_uni - (inner / float(np.vdot(gw_mm, gw_mm))) * gw_mm
        assert abs(float(np.vdot(projected, gw_mm))) < 1e-9 * np.linalg.norm(gw_mm)

    def test_orthogonal_gradients_unchanged(self):
        # orthogonal unimodal gradient passes through the guard untouched
        a = np.array([[1.0, 0.0], [0.0, 0.0]])
        b = np.array([[0.0, 0.0], [1.0, 0.0]])
        inner = float(np.vdot(a, b))
        assert inner == 0.0  # the guard only fires on a negative inner product


class TestNeutralEquivalence:
    @pytest.mark.parametrize(
        "method",
        [
            MethodSpec(kind="unimodal_blend", w_uni=0.0),
            MethodSpec(kind="kl_align", kl_weight=0.0),
            MethodSpec(kind="gradmod", alpha=0.0),
            MethodSpec(kind="feature_mask", rho_mask=0.0),
            MethodSpec(kind="feature_drop", p_max=0.0),
            MethodSpec(kind="resample", tau=math.inf),
        ],
    )
    def test_neutral_method_is_bitwise_baseline(self, method):
        spec = SyntheticSpec(2, 3, (6, 6), (2.0, 1.0), 1.0, 200, 3)
        data = generate(spec)
        tr, va, _ = split(data, (0.8, 0.1, 0.1), 1)
        cfg = TrainConfig(epochs=3, seed=5)
        base, _ = fit((tr, va), init_model([[6, 8, 4], [6, 8, 4]], 3, 2), cfg, MethodSpec())
        alt, _ = fit((tr, va), init_model([[6, 8, 4], [6, 8, 4]], 3, 2), cfg, method)
        assert base.head_bias.tobytes() == alt.head_bias.tobytes()
        for ba, bb in zip(base.head_blocks, alt.head_blocks):
            assert ba.tobytes() == bb.tobytes()
        for ea, eb in zip(base.encoders, alt.encoders):
            for la, lb in zip(ea.layers, eb.layers):
                assert la.weight.tobytes() == lb.weight.tobytes()
                assert la.bias.tobytes() == lb.bias.tobytes()
