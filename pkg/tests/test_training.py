import math

import numpy as np
import pandas as pd
import pytest

from transnet.dihedral import C4, TransformationSet, apply_spatial, orbit_mean_params
from transnet.models import ConvSpec, ConvLayer, Head, ModelParams, TransNetModel, forward_full, forward_head
from transnet.tensor import ops
from transnet.training import (
    SGD,
    Batch,
    StepLR,
    Trainer,
    TrainingConfig,
    augment,
    augment_batch,
    evaluate,
    exact_mean,
    generalization_ratio,
    loss_and_gradients,
    loss_terms,
    make_optimizer,
    mean_cross_entropy,
    reduction_check,
    seed_stream,
    single_head_loss,
    single_head_step,
    train_step,
    transformation_loss,
    unbiasedness_check,
)
from transnet.util.exception_handler import DivergenceError, InputError, ShapeError

from conftest import random_model, small_architecture

X1 = np.array([[[1.0, 1.0, 1.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]])
X2 = np.array([[[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]])
PAIR = Batch(np.stack([X1, X2]), [0, 1])


def collision_model(scale=1.0):
    layer = ConvLayer(scale * np.stack([X1, X2]), np.zeros(2), padding="valid")
    heads = [Head(np.eye(2), np.zeros(2)), Head(np.array([[0.0, 1.0], [1.0, 0.0]]), np.zeros(2))]
    return TransNetModel(ModelParams([layer], heads), TransformationSet(["r0", "mr2"]))


@pytest.fixture
def batch(rng):
    return Batch(rng.normal(size=(6, 2, 8, 8)), rng.integers(0, 3, size=6))


class TestConfig:
    def test_transnet(self):
        config = TrainingConfig(num_heads=3)
        assert config.train_transforms.names == ["r0", "r1", "r2"]
        assert config.model_transforms == config.train_transforms
        assert config.head_map == [0, 1, 2]
        assert config.label == "T3"

    def test_single_head(self):
        config = TrainingConfig(mode="single-head", num_heads=2)
        assert config.model_transforms.names == ["r0"]
        assert config.head_map == [0, 0]
        assert config.label == "alg-only2"

    def test_arch_only(self):
        config = TrainingConfig(mode="arch_only", num_heads=2)
        assert config.train_transforms.names == ["r0", "r0"]
        assert config.head_map == [0, 1]
        assert config.label == "arch-only2"

    def test_base(self):
        config = TrainingConfig(mode="base", num_heads=4)
        assert config.train_transforms.names == ["r0"] and config.label == "base"

    def test_explicit_transforms(self):
        config = TrainingConfig(transforms=["r0", "mr2"])
        assert config.model_transforms.names == ["r0", "mr2"]

    @pytest.mark.parametrize(
        "kwargs",
        [{"batch_size": 0}, {"learning_rate": 0.0}, {"milestones": (10, 10)}, {"momentum": 1.0}, {"num_heads": 0}],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(InputError):
            TrainingConfig(**kwargs)

    def test_batch_labels(self, rng):
        with pytest.raises(ShapeError):
            Batch(rng.normal(size=(3, 1, 4, 4)), [0, 1])
        with pytest.raises(InputError):
            Batch(rng.normal(size=(2, 1, 4, 4)), [0, 5]).check_labels(3)

    def test_seed_streams(self):
        assert seed_stream(3, "init").random() == seed_stream(3, "init").random()
        assert seed_stream(3, "init").random() != seed_stream(3, "shuffle").random()
        assert seed_stream(3, "init").random() != seed_stream(4, "init").random()


class TestTransformationLoss:
    def test_single_identity_head(self, rng, batch):
        model = random_model(["r0"], rng)
        expected, _ = ops.softmax_cross_entropy(forward_full(model, batch.inputs), batch.labels)
        assert transformation_loss(model, batch) == pytest.approx(expected, abs=1e-12)

    def test_mean_over_heads(self, rng, batch):
        model = random_model(["r0", "r1", "mr0"], rng)
        per_head = [
            ops.softmax_cross_entropy(forward_head(model, j, apply_spatial(t, batch.inputs)), batch.labels)[0]
            for j, t in enumerate(model.transforms)
        ]
        assert transformation_loss(model, batch) == pytest.approx(np.mean(per_head), abs=1e-12)

    def test_collision_construction_separates(self):
        model = collision_model(scale=10.0)
        for j, t in enumerate(model.transforms):
            logits = forward_head(model, j, apply_spatial(t, PAIR.inputs))
            np.testing.assert_array_equal(logits.argmax(axis=1), PAIR.labels)
        assert transformation_loss(model, PAIR) < transformation_loss(collision_model(scale=1.0), PAIR)
        assert transformation_loss(model, PAIR) < 1e-12

    def test_invariant_kernels_cannot_separate(self):
        model = collision_model(scale=10.0)
        sym = model.with_params(orbit_mean_params(TransformationSet(["r0", "mr2"]), model.params))
        for j, t in enumerate(sym.transforms):
            logits = forward_head(sym, j, apply_spatial(t, PAIR.inputs))
            np.testing.assert_array_equal(logits[0], logits[1])
            assert np.mean(logits.argmax(axis=1) != PAIR.labels) >= 0.5
        assert transformation_loss(sym, PAIR) > 0.0

    def test_terms(self, rng):
        model = random_model(["r0", "r1"], rng)
        assert loss_terms(model) == list(zip(model.transforms, [0, 1]))
        single = random_model(["r0"], rng)
        assert [j for _, j in loss_terms(single, ["r0", "r1", "r2"])] == [0, 0, 0]
        with pytest.raises(InputError):
            loss_terms(model, ["r0", "r1", "r2"])
        with pytest.raises(InputError):
            loss_terms(model, ["r0", "r1"], [0, 2])

    def test_single_head_loss(self, rng, batch):
        model = random_model(["r0"], rng)
        copies = [transformation_loss(model, Batch(apply_spatial(t, batch.inputs), batch.labels)) for t in C4]
        assert single_head_loss(model, batch, C4) == pytest.approx(np.mean(copies), abs=1e-12)


class TestGradients:
    def test_finite_differences(self, rng):
        arch = [ConvSpec(2, 3, 3, True), ConvSpec(3, 4, 3)]
        model = random_model(["r0", "r1"], rng, architecture=arch)
        batch = Batch(rng.normal(size=(3, 2, 4, 4)), [0, 2, 1])
        _, _, grads = loss_and_gradients(model, batch)
        arrays = model.params.arrays()
        for i, array in enumerate(arrays):

            def loss_at(value, i=i):
                replaced = list(arrays)
                replaced[i] = value
                return transformation_loss(model.with_params(model.params.replace_arrays(replaced)), batch)

            numeric = ops.numerical_gradient(loss_at, array, 1e-5)
            assert ops.relative_error(grads[i], numeric) < 1e-6, f"array {i}"

    def test_two_heads_average_single_heads(self, rng, batch):
        model = random_model(["r0", "r1"], rng)
        loss, term_losses, grads = loss_and_gradients(model, batch)
        _, _, grads_a = loss_and_gradients(model, batch, ["r0"], [0])
        _, _, grads_b = loss_and_gradients(model, batch, ["r1"], [1])
        for g, a, b in zip(grads, grads_a, grads_b):
            np.testing.assert_allclose(g, 0.5 * (a + b), rtol=0, atol=1e-14)
        assert loss == pytest.approx(term_losses.mean())

    def test_shared_transform_runs_once(self, rng, batch):
        # arch-only: both heads read the same untransformed batch
        model = random_model(["r0", "r0"], rng)
        identical = model.with_params(model.params.with_heads([model.params.heads[0]] * 2))
        _, term_losses, grads = loss_and_gradients(identical, batch)
        assert term_losses[0] == term_losses[1]
        n_conv = 2 * len(model.params.conv_layers)
        np.testing.assert_array_equal(grads[n_conv], grads[n_conv + 2])
        np.testing.assert_array_equal(grads[n_conv + 1], grads[n_conv + 3])


class TestTrainStep:
    def test_zero_lr(self, rng, batch):
        model = random_model(["r0", "r1"], rng)
        updated, _ = train_step(model, batch, SGD(momentum=0.9, weight_decay=1e-4), 0.0)
        for a, b in zip(updated.params.arrays(), model.params.arrays()):
            np.testing.assert_array_equal(a, b)

    def test_sgd_quadratic(self):
        # f(p) = p^2, grad 2p
        opt = SGD(momentum=0.9, weight_decay=0.1)
        p = [np.array([2.0])]
        p = opt.step(p, [2.0 * p[0]], 0.5)
        # v1 = 4 + 0.2 = 4.2; p1 = 2 - 2.1
        np.testing.assert_allclose(p[0], [-0.1], rtol=0, atol=1e-15)
        p = opt.step(p, [2.0 * p[0]], 0.5)
        # v2 = 0.9 * 4.2 - 0.2 - 0.01 = 3.57; p2 = -0.1 - 1.785
        np.testing.assert_allclose(p[0], [-1.885], rtol=0, atol=1e-14)
        assert opt.steps == 2

    def test_decay_mask(self, rng):
        model = random_model(["r0"], rng)
        opt = make_optimizer(TrainingConfig(decay_biases=False), model)
        assert opt.decay_mask == [a.ndim > 1 for a in model.params.arrays()]
        assert make_optimizer(TrainingConfig(), model).decay_mask is None

    def test_step_lr(self):
        schedule = StepLR(0.05, (30, 45), 0.1)
        assert schedule.lr_at(0) == 0.05
        assert schedule.lr_at(30) == pytest.approx(0.005)
        assert schedule.lr_at(59) == pytest.approx(0.0005)

    def test_loss_decreases(self, rng, batch):
        model = random_model(["r0", "r1"], rng)
        opt = SGD(momentum=0.0)
        before = transformation_loss(model, batch)
        for _ in range(5):
            model, _ = train_step(model, batch, opt, 0.05)
        assert transformation_loss(model, batch) < before

    def test_non_finite_aborts(self, rng, batch):
        model = random_model(["r0"], rng)
        inputs = batch.inputs.copy()
        inputs[0, 0, 0, 0] = np.inf
        with pytest.raises(DivergenceError):
            train_step(model, Batch(inputs, batch.labels), SGD(), 0.1)

    def test_single_head_identity_is_base_training(self, rng, batch):
        model = random_model(["r0"], rng)
        a, loss_a = single_head_step(model, batch, SGD(0.9, 1e-4), 0.1, ["r0"])
        b, loss_b = train_step(model, batch, SGD(0.9, 1e-4), 0.1)
        assert loss_a == loss_b
        for x, y in zip(a.params.arrays(), b.params.arrays()):
            np.testing.assert_array_equal(x, y)

    def test_single_head_needs_one_head(self, rng, batch):
        with pytest.raises(InputError):
            single_head_step(random_model(["r0", "r1"], rng), batch, SGD(), 0.1, ["r0", "r1"])

    def test_arch_only_heads_stay_identical(self, rng, batch):
        model = random_model(["r0", "r0"], rng)
        model = model.with_params(model.params.with_heads([model.params.heads[0]] * 2))
        opt = SGD(momentum=0.9)
        for _ in range(3):
            model, _ = train_step(model, batch, opt, 0.1)
        np.testing.assert_array_equal(model.params.heads[0].weight, model.params.heads[1].weight)

    def test_orbit_mean_does_not_increase_convex_loss(self, rng):
        arch = [ConvSpec(2, 4, 3, relu=False)]
        x = Batch(rng.normal(size=(8, 2, 6, 6)), rng.integers(0, 3, size=8))
        for _ in range(10):
            model = random_model(["r0"], rng, architecture=arch)
            averaged = model.with_params(orbit_mean_params(C4, model.params))
            assert single_head_loss(model, x, C4) >= single_head_loss(averaged, x, C4) - 1e-12


class TestAugment:
    def test_identity_when_forced(self, rng):
        x = rng.normal(size=(3, 8, 8))
        np.testing.assert_array_equal(augment(x, rng, flip_prob=0.0, pad_crop=4, offset=(4, 4)), x)

    def test_double_flip(self, rng):
        x = rng.normal(size=(3, 8, 8))
        once = augment(x, rng, pad_crop=0, flip=True)
        np.testing.assert_array_equal(once, x[:, :, ::-1])
        np.testing.assert_array_equal(augment(once, rng, pad_crop=0, flip=True), x)

    def test_shape_kept(self, rng):
        x = rng.normal(size=(2, 6, 6))
        for _ in range(50):
            assert augment(x, rng).shape == x.shape

    def test_crop_shifts_content(self, rng):
        x = rng.normal(size=(1, 6, 6))
        out = augment(x, rng, flip=False, pad_crop=2, offset=(0, 2))
        np.testing.assert_array_equal(out[:, 2:, :], x[:, :4, :])
        assert not out[:, :2, :].any()

    def test_non_square(self, rng):
        with pytest.raises(ShapeError):
            augment(rng.normal(size=(1, 4, 5)), rng)

    def test_batch_passthrough(self, rng):
        x = rng.normal(size=(4, 2, 6, 6))
        np.testing.assert_array_equal(augment_batch(x, rng, 0.0, 0), x)
        assert augment_batch(x, rng).shape == x.shape


class TestUnbiasedness:
    def test_statistical(self, rng):
        model = random_model(["r0", "r1"], rng)
        x = rng.normal(size=(64, 2, 8, 8))
        y = rng.integers(0, 3, size=64)
        result = unbiasedness_check(model, x, y, batch_size=16, n_batches=10_000, rng=1)
        assert abs(result.z_score) < 4
        assert result.n_batches == 10_000 and result.standard_error > 0

    def test_full_pass_exact(self, rng):
        model = random_model(["r0", "r1"], rng)
        x = rng.normal(size=(10, 2, 8, 8))
        y = rng.integers(0, 3, size=10)
        result = unbiasedness_check(model, x, y, batch_size=10, n_batches=5, rng=0, replacement=False)
        assert result.empirical_mean == result.full_loss
        assert result.z_score == 0.0

    def test_single_sample(self, rng):
        model = random_model(["r0", "r1"], rng)
        result = unbiasedness_check(model, rng.normal(size=(1, 2, 8, 8)), [2], batch_size=16, n_batches=100, rng=0)
        assert result.empirical_mean == result.full_loss
        assert result.z_score == 0.0

    def test_exact_batches_agree(self, rng):
        model = random_model(["r0", "r1"], rng)
        x = rng.normal(size=(12, 2, 8, 8))
        y = rng.integers(0, 3, size=12)
        fast = unbiasedness_check(model, x, y, batch_size=4, n_batches=20, rng=7)
        slow = unbiasedness_check(model, x, y, batch_size=4, n_batches=20, rng=7, exact=True)
        assert fast.empirical_mean == pytest.approx(slow.empirical_mean, abs=1e-12)

    def test_empty(self, rng):
        with pytest.raises(InputError):
            unbiasedness_check(random_model(["r0"], rng), np.zeros((0, 2, 8, 8)), [])


class TestGeneralizationRatio:
    def test_same_sets(self, rng):
        model = random_model(["r0", "r1"], rng)
        x = rng.normal(size=(10, 2, 8, 8))
        y = rng.integers(0, 3, size=10)
        assert generalization_ratio(model, x, y, x, y) == 1.0
        assert generalization_ratio(model, x, y, x, y, predictor="identity") == 1.0

    def test_duplicated_test_set(self, rng):
        model = random_model(["r0", "r1"], rng)
        x_train, y_train = rng.normal(size=(10, 2, 8, 8)), rng.integers(0, 3, size=10)
        x_test, y_test = rng.normal(size=(7, 2, 8, 8)), rng.integers(0, 3, size=7)
        once = generalization_ratio(model, x_train, y_train, x_test, y_test)
        twice = generalization_ratio(model, x_train, y_train, np.concatenate([x_test, x_test]), np.concatenate([y_test, y_test]))
        assert twice == pytest.approx(once, rel=1e-12)

    def test_zero_train_loss(self):
        model = collision_model(scale=1000.0)
        assert mean_cross_entropy(model, PAIR.inputs, PAIR.labels) == 0.0
        assert generalization_ratio(model, PAIR.inputs, PAIR.labels, PAIR.inputs, PAIR.labels) == math.inf

    def test_bad_predictor(self, rng):
        model = random_model(["r0"], rng)
        x = rng.normal(size=(2, 2, 8, 8))
        with pytest.raises(InputError):
            generalization_ratio(model, x, [0, 1], x, [0, 1], predictor="best")


class TestReduction:
    def test_holds_for_random_model(self, rng):
        model = random_model(["r0", "r1", "r2"], rng)
        batch = Batch(rng.normal(size=(12, 2, 8, 8)), rng.integers(0, 3, size=12))
        result = reduction_check(model, batch.inputs, batch.labels)
        assert result.holds
        assert result.best_loss <= result.transformation_loss + 1e-9
        _, term_losses, _ = loss_and_gradients(model, batch)
        np.testing.assert_allclose(result.compiled_losses, term_losses, rtol=0, atol=1e-9)
        assert result.best_head == int(np.argmin(term_losses))
        assert result.best_transform == model.transforms[result.best_head]

    def test_single_head_terms(self, rng):
        model = random_model(["r0"], rng)
        batch = Batch(rng.normal(size=(8, 2, 8, 8)), rng.integers(0, 3, size=8))
        result = reduction_check(model, batch.inputs, batch.labels, C4, [0] * 4)
        assert result.holds and len(result.compiled_losses) == 4
        assert result.best_head == 0

    def test_exact_mean_order_free(self, rng):
        values = rng.normal(size=101)
        assert exact_mean(values) == exact_mean(values[::-1]) == exact_mean(rng.permutation(values))


class TestTrainer:
    @pytest.fixture
    def data(self, rng):
        train = Batch(rng.normal(size=(16, 2, 8, 8)), rng.integers(0, 3, size=16))
        test = Batch(rng.normal(size=(6, 2, 8, 8)), rng.integers(0, 3, size=6))
        return train, test

    def config(self, **kwargs):
        defaults = dict(epochs=2, batch_size=8, milestones=(1,), pad_crop=1, learning_rate=0.05, seed=3)
        defaults.update(kwargs)
        return TrainingConfig(**defaults)

    def test_fit_writes_log(self, tmp_path, data):
        train, test = data
        trainer = Trainer(self.config(), log_path=str(tmp_path / "train_log.csv"), progress=False)
        model = trainer.init_model(small_architecture(), 3)
        result = trainer.fit(model, train, test)
        assert result.iterations == 4
        assert result.reduction is not None and result.reduction.holds
        log = pd.read_csv(tmp_path / "train_log.csv")
        assert list(log["epoch"]) == [1, 2]
        np.testing.assert_allclose(log["lr"], [0.05, 0.005])
        for column in ["train_loss", "train_acc", "train_head0_loss", "train_head1_loss", "test_loss", "test_acc", "wall_time_s"]:
            assert column in log.columns
        pd.testing.assert_frame_equal(log, result.history, check_dtype=False)

    def test_reproducible(self, data):
        train, test = data
        runs = []
        for _ in range(2):
            trainer = Trainer(self.config(), progress=False)
            runs.append(trainer.fit(trainer.init_model(small_architecture(), 3), train, test).model)
        for a, b in zip(runs[0].params.arrays(), runs[1].params.arrays()):
            np.testing.assert_array_equal(a, b)

    def test_max_iterations(self, data):
        train, _ = data
        trainer = Trainer(self.config(epochs=10, max_iterations=3), progress=False)
        result = trainer.fit(trainer.init_model(small_architecture(), 3), train)
        assert result.iterations == 3
        assert len(result.history) == 2

    def test_single_head_mode(self, data):
        train, test = data
        trainer = Trainer(self.config(mode="single_head", num_heads=3, epochs=1), progress=False)
        model = trainer.init_model(small_architecture(), 3)
        assert model.num_heads == 1
        result = trainer.fit(model, train, test)
        assert len(result.reduction.compiled_losses) == 3

    def test_evaluate_rows(self, rng, data):
        _, test = data
        model = random_model(["r0", "r1"], rng)
        result = evaluate(model, test.inputs, test.labels, batch_size=4)
        row = result.as_row("test")
        assert set(row) == {"test_loss", "test_acc", "test_head0_loss", "test_head1_loss"}
        assert 0.0 <= result.accuracy <= 1.0
        assert result.loss == pytest.approx(mean_cross_entropy(model, test.inputs, test.labels), abs=1e-12)

    def test_fit_divergence_raises(self, data):
        train, _ = data
        inputs = train.inputs.copy()
        inputs[:, 0, 0, 0] = np.nan
        trainer = Trainer(self.config(), progress=False)
        with pytest.raises(DivergenceError):
            trainer.fit(trainer.init_model(small_architecture(), 3), Batch(inputs, train.labels))
