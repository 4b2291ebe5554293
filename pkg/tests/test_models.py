import numpy as np
import pytest

from transnet.dihedral import ALL_ELEMENTS, C4, IDENTITY, M, TransformationSet, apply_spatial, inverse, orbit_mean_params
from transnet.models import (
    ConvLayer,
    ConvSpec,
    Head,
    ModelParams,
    TransNetModel,
    build_model,
    compile_transformation,
    count_flops,
    count_parameters,
    default_architecture,
    feature_map_sizes,
    forward_full,
    forward_head,
    head_logits,
    init_params,
    predict_with_flip_averaging,
    prune,
    prune_heads,
    select_head,
)
from transnet.tensor.ops import softmax
from transnet.util.exception_handler import InputError, ShapeError

from conftest import random_model, small_architecture

X1 = np.array([[[1.0, 1.0, 1.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]])
X2 = np.array([[[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]])


def collision_model():
    """One valid 3x3 layer with kernels (x1, x2); head 0 identity, head 1 swaps the two features."""
    layer = ConvLayer(np.stack([X1, X2]), np.zeros(2), padding="valid")
    heads = [Head(np.eye(2), np.zeros(2)), Head(np.array([[0.0, 1.0], [1.0, 0.0]]), np.zeros(2))]
    return TransNetModel(ModelParams([layer], heads), TransformationSet(["r0", "mr2"]))


class TestCollisionConstruction:
    def test_identity_head(self):
        logits = forward_head(collision_model(), 0, X1)
        np.testing.assert_array_equal(logits, [3.0, 0.0])
        assert np.argmax(logits) == 0

    def test_transformed_head(self):
        model = collision_model()
        t = model.transforms[1]
        np.testing.assert_array_equal(apply_spatial(t, X1), X2)
        np.testing.assert_array_equal(forward_head(model, 1, apply_spatial(t, X1)), [3.0, 0.0])

    def test_full_model_separates_both_samples(self):
        model = collision_model()
        z1 = forward_full(model, X1)
        z2 = forward_full(model, X2)
        assert z1[0] > z1[1]
        assert z2[1] > z2[0]

    def test_invariant_kernels_collide(self):
        # with vertically symmetric kernels x1 and x2 = t(x1) get the same features
        model = collision_model()
        group = TransformationSet(["r0", "mr2"])
        sym = model.with_params(orbit_mean_params(group, model.params))
        for j in range(2):
            np.testing.assert_array_equal(forward_head(sym, j, X1), forward_head(sym, j, X2))


class TestForward:
    def test_zero_model_gives_bias(self, rng):
        beta = np.array([0.5, -2.0, 1.0])
        layer = ConvLayer(np.zeros((4, 2, 3, 3)), np.zeros(4))
        model = TransNetModel(ModelParams([layer], [Head(np.zeros((3, 4)), beta)]), TransformationSet(["r0"]))
        np.testing.assert_array_equal(forward_head(model, 0, rng.normal(size=(2, 6, 6))), beta)

    def test_bad_head_index(self, rng):
        model = random_model(["r0", "r1"], rng)
        with pytest.raises(InputError):
            forward_head(model, 2, rng.normal(size=(2, 8, 8)))

    def test_channel_mismatch(self, rng):
        model = random_model(["r0"], rng)
        with pytest.raises(ShapeError):
            forward_head(model, 0, rng.normal(size=(3, 8, 8)))

    def test_single_identity_head(self, rng):
        model = random_model(["r0"], rng)
        x = rng.normal(size=(2, 8, 8))
        np.testing.assert_array_equal(forward_full(model, x), forward_head(model, 0, x))

    def test_full_is_mean_of_heads(self, rng):
        model = random_model(["r0", "r1", "mr2"], rng)
        x = rng.normal(size=(2, 8, 8))
        per_head = [forward_head(model, j, apply_spatial(t, x)) for j, t in enumerate(model.transforms)]
        np.testing.assert_array_equal(forward_full(model, x), np.mean(np.stack(per_head), axis=0))

    def test_identical_heads(self, rng):
        base = random_model(["r0"], rng)
        params = base.params.with_heads([base.params.heads[0]] * 3)
        model = TransNetModel(params, TransformationSet(["r0"] * 3))
        x = rng.normal(size=(2, 8, 8))
        np.testing.assert_allclose(forward_full(model, x), forward_head(base, 0, x), rtol=0, atol=1e-14)

    def test_probability_averaging(self, rng):
        model = random_model(["r0", "r1"], rng)
        x = rng.normal(size=(2, 8, 8))
        expected = np.mean([softmax(z) for z in head_logits(model, x)], axis=0)
        np.testing.assert_allclose(softmax(forward_full(model, x, "probabilities")), expected, rtol=0, atol=1e-14)

    def test_probability_averaging_far_below_float_range(self):
        base = collision_model()
        heads = [Head(h.weight * 1e5, h.bias) for h in base.params.heads]
        model = base.with_params(base.params.with_heads(heads))
        out = forward_full(model, X1, "probabilities")
        assert np.all(np.isfinite(out))
        np.testing.assert_allclose(out, [0.0, -3e5], rtol=1e-12, atol=1e-12)

    def test_batch_matches_single(self, rng):
        model = random_model(["r0", "r3"], rng)
        xs = rng.normal(size=(3, 2, 8, 8))
        batched = forward_full(model, xs)
        for n in range(3):
            np.testing.assert_allclose(batched[n], forward_full(model, xs[n]), rtol=0, atol=1e-13)


class TestCompilation:
    @pytest.mark.parametrize("layers,pools", [(1, 0), (2, 1), (3, 2), (4, 2)])
    def test_compiled_weights_absorb_transform(self, rng, layers, pools):
        channels = [2, 3, 4, 3, 5][: layers + 1]
        for _ in range(5):
            arch = [ConvSpec(channels[i], channels[i + 1], int(rng.choice([1, 3, 5])), i < pools) for i in range(layers)]
            model = random_model(["r0"], rng, architecture=arch)
            x = rng.normal(size=(2, 2, 8, 8))
            for t in ALL_ELEMENTS:
                compiled = model.with_params(compile_transformation(model.params, t))
                diff = np.max(np.abs(forward_head(model, 0, apply_spatial(t, x)) - forward_head(compiled, 0, x)))
                assert diff < 1e-9

    def test_identity(self, rng):
        params = random_model(["r0"], rng).params
        assert compile_transformation(params, IDENTITY).allclose(params)

    @pytest.mark.parametrize("t", ALL_ELEMENTS, ids=lambda t: t.name)
    def test_round_trip(self, rng, t):
        params = random_model(["r0"], rng).params
        assert compile_transformation(compile_transformation(params, t), inverse(t)).allclose(params)

    def test_invariant_kernels_give_invariant_heads(self, rng):
        model = random_model(["r0", "r1"], rng)
        model = model.with_params(orbit_mean_params(C4, model.params))
        x = rng.normal(size=(2, 8, 8))
        for t in C4:
            for j in range(2):
                np.testing.assert_allclose(forward_head(model, j, apply_spatial(t, x)), forward_head(model, j, x), rtol=0, atol=1e-12)


class TestPrune:
    def test_identity_head_unchanged(self, rng):
        model = random_model(["r0", "r1"], rng)
        pruned = prune(model, 0)
        assert pruned.num_heads == 1 and pruned.transforms.names == ["r0"]
        for a, b in zip(pruned.params.conv_layers, model.params.conv_layers):
            np.testing.assert_array_equal(a.kernels, b.kernels)
        np.testing.assert_array_equal(pruned.params.heads[0].weight, model.params.heads[0].weight)

    @pytest.mark.parametrize("j", [1, 2, 3])
    def test_compiled_head(self, rng, j):
        model = random_model(["r0", "r1", "r2", "mr3"], rng)
        pruned = prune(model, j, compile=True)
        assert pruned.transforms[0] == IDENTITY
        x = rng.normal(size=(4, 2, 8, 8))
        expected = forward_head(model, j, apply_spatial(model.transforms[j], x))
        assert np.max(np.abs(forward_full(pruned, x) - expected)) < 1e-9

    def test_uncompiled_keeps_transform(self, rng):
        model = random_model(["r0", "r1"], rng)
        pruned = prune(model, 1, compile=False)
        assert pruned.transforms.names == ["r1"]
        x = rng.normal(size=(2, 8, 8))
        np.testing.assert_array_equal(forward_full(pruned, x), forward_head(model, 1, apply_spatial(pruned.transforms[0], x)))

    def test_parameter_count_matches_base(self, rng):
        arch = small_architecture()
        model = build_model(arch, ["r0", "r1", "r2"], 3, rng)
        base = build_model(arch, ["r0"], 3, rng)
        assert count_parameters(prune(model, 2)) == count_parameters(base)

    def test_bad_index(self, rng):
        with pytest.raises(InputError):
            prune(random_model(["r0", "r1"], rng), 5)

    def test_prune_heads(self, rng):
        model = random_model(["r0", "r1", "r2"], rng)
        sub = prune_heads(model, [0, 2])
        assert sub.transforms.names == ["r0", "r2"]
        np.testing.assert_array_equal(sub.params.heads[1].weight, model.params.heads[2].weight)

    def test_select_head(self, rng):
        model = random_model(["r1", "r0"], rng)
        assert select_head(model, "identity") == 1
        x = rng.normal(size=(6, 2, 8, 8))
        y = rng.integers(0, 3, size=6)
        assert select_head(model, "best", x, y) in (0, 1)
        with pytest.raises(InputError):
            select_head(model, "best")


class TestFlipAveraging:
    def test_symmetric_input(self, rng):
        model = random_model(["r0", "r1"], rng)
        half = rng.normal(size=(2, 8, 4))
        x = np.concatenate([half, half[..., ::-1]], axis=-1)
        np.testing.assert_array_equal(apply_spatial(M, x), x)
        np.testing.assert_allclose(predict_with_flip_averaging(model, x), forward_full(model, x), rtol=0, atol=1e-15)

    def test_symmetric_kernels(self, rng):
        model = random_model(["r0"], rng, architecture=[ConvSpec(2, 4, 3)])
        mirror = TransformationSet(["r0", "mr0"])
        model = model.with_params(orbit_mean_params(mirror, model.params))
        x = rng.normal(size=(2, 6, 6))
        np.testing.assert_allclose(predict_with_flip_averaging(model, x), forward_full(model, x), rtol=0, atol=1e-12)

    def test_definition(self, rng):
        model = random_model(["r0", "r2"], rng)
        x = rng.normal(size=(2, 8, 8))
        expected = 0.5 * (forward_full(model, x) + forward_full(model, apply_spatial(M, x)))
        np.testing.assert_array_equal(predict_with_flip_averaging(model, x), expected)


class TestCounting:
    def test_head_overhead(self):
        arch = [ConvSpec(3, 512, 1)]
        one = init_params(arch, num_classes=100, num_heads=1, rng=0)
        two = init_params(arch, num_classes=100, num_heads=2, rng=0)
        assert count_parameters(two) - count_parameters(one) == 51_300
        assert one.head_overhead() == 51_300

    @pytest.mark.parametrize("heads", [1, 2, 4])
    def test_head_difference(self, heads):
        arch = small_architecture()
        base = init_params(arch, num_classes=7, num_heads=1, rng=0)
        more = init_params(arch, num_classes=7, num_heads=heads, rng=0)
        assert count_parameters(more) - count_parameters(base) == (heads - 1) * (7 * 6 + 7)

    def test_zero_layers_rejected(self):
        with pytest.raises(InputError):
            init_params([], num_classes=3)
        with pytest.raises(InputError):
            ModelParams([], [Head(np.zeros((3, 4)), np.zeros(3))])

    def test_default_architecture(self):
        arch = default_architecture()
        assert [s.out_channels for s in arch] == [32, 64, 128, 128]
        assert [s.pool_after for s in arch] == [True, True, False, False]
        assert all(s.kernel_size == 3 for s in arch)

    def test_flops_scale_with_heads(self):
        arch = small_architecture()
        model = build_model(arch, ["r0", "r1"], 3, 0)
        assert count_flops(model, 8) == 2 * count_flops(prune(model, 0), 8)
        assert count_flops(model, 8, heads_evaluated=1) == count_flops(prune(model, 0), 8)

    def test_feature_map_sizes(self):
        arch = [ConvSpec(3, 4, 3, True), ConvSpec(4, 4, 3, False, padding="valid"), ConvSpec(4, 2, 1, False)]
        params = init_params(arch, 2, 1, 0)
        assert feature_map_sizes(params, 8) == [8, 2, 2]
        with pytest.raises(InputError):
            feature_map_sizes(params, 7)
        with pytest.raises(InputError):
            feature_map_sizes(params, 2)
