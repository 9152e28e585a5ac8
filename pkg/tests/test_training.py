import numpy as np
import numpy.testing as npt
import pytest

from gridcast.datapipe import VolumeSample
from gridcast.errors import ConfigError, DataError, DivergenceError, ShapeError
from gridcast.layers import Conv2D, SqueezeChannels
from gridcast.models import ModelGraph, build_variant
from gridcast.training import (
    TrainConfig,
    TrainReport,
    adagrad_step,
    format_train_report,
    loss,
    loss_grad,
    train,
)


def _tiny_model():
    layers = [Conv2D(4, 2), Conv2D(2, 1, activation="linear"), SqueezeChannels()]
    return ModelGraph("tiny", layers, 4, 4, 4, "map")


def _samples(n, seed=0, rows=4, cols=4, depth=4, target=None):
    rng = np.random.default_rng(seed)
    out = []
    for t in range(n):
        tgt = rng.uniform(0, 4, size=(rows, cols)) if target is None \
            else np.full((rows, cols), float(target))
        out.append(VolumeSample(t, rng.uniform(0, 4, size=(rows, cols, depth)), tgt))
    return out


class TestLoss:
    def test_identity_is_zero(self):
        x = np.random.default_rng(0).uniform(size=(3, 3))
        assert loss(x, x) == 0.0

    def test_unit_error_is_one(self):
        assert loss(np.ones((4, 4)), np.zeros((4, 4))) == 1.0

    def test_matches_direct_formula(self):
        rng = np.random.default_rng(1)
        p, t = rng.uniform(size=(5, 6)), rng.uniform(size=(5, 6))
        want = sum((p[i, j] - t[i, j]) ** 2 for i in range(5) for j in range(6)) / 30
        assert loss(p, t) == pytest.approx(want, rel=1e-12)

    def test_grad_formula_and_finite_difference(self):
        rng = np.random.default_rng(2)
        p, t = rng.uniform(size=(3, 4)), rng.uniform(size=(3, 4))
        g = loss_grad(p, t)
        npt.assert_allclose(g, 2.0 * (p - t) / 12, atol=1e-15)
        eps = 1e-6
        for i in range(3):
            for j in range(4):
                bump = p.copy()
                bump[i, j] += eps
                drop = p.copy()
                drop[i, j] -= eps
                fd = (loss(bump, t) - loss(drop, t)) / (2 * eps)
                assert g[i, j] == pytest.approx(fd, abs=1e-8)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            loss(np.zeros((2, 2)), np.zeros((2, 3)))
        with pytest.raises(ShapeError):
            loss_grad(np.zeros((2, 2)), np.zeros(4))


class TestAdagrad:
    def test_first_step_is_lr_sized(self):
        p = [np.array([1.0])]
        state = [np.zeros(1)]
        adagrad_step(p, [np.array([1.0])], state, 0.01, 1e-8)
        assert p[0][0] == pytest.approx(1.0 - 0.01 / (1.0 + 1e-8), abs=1e-15)
        assert state[0][0] == 1.0

    def test_second_equal_gradient_shrinks_by_sqrt2(self):
        p = [np.array([0.0])]
        state = [np.zeros(1)]
        adagrad_step(p, [np.array([1.0])], state, 0.01, 1e-8)
        first = -p[0][0]
        before = p[0][0]
        adagrad_step(p, [np.array([1.0])], state, 0.01, 1e-8)
        second = before - p[0][0]
        assert second == pytest.approx(0.01 / np.sqrt(2.0), rel=1e-7)
        assert second < first

    def test_step_magnitudes_never_grow(self):
        rng = np.random.default_rng(3)
        p = [np.array([5.0])]
        state = [np.zeros(1)]
        prev = np.inf
        for _ in range(20):
            before = p[0][0]
            adagrad_step(p, [np.array([2.0])], state, 0.1, 1e-8)
            step = abs(p[0][0] - before)
            assert step <= prev + 1e-15
            prev = step

    def test_zero_gradient_is_a_no_op(self):
        p = [np.array([1.0, -2.0])]
        state = [np.array([4.0, 0.0])]
        adagrad_step(p, [np.zeros(2)], state, 0.5, 1e-8)
        npt.assert_array_equal(p[0], [1.0, -2.0])
        npt.assert_array_equal(state[0], [4.0, 0.0])

    def test_alignment_checks(self):
        with pytest.raises(ShapeError):
            adagrad_step([np.zeros(2)], [np.zeros(2)], [], 0.1, 1e-8)
        with pytest.raises(ShapeError):
            adagrad_step([np.zeros(2)], [np.zeros(3)], [np.zeros(2)], 0.1, 1e-8)


class TestTrainConfig:
    def test_default_values(self):
        cfg = TrainConfig()
        assert cfg.batch_size == 32
        assert cfg.learning_rate == 0.01
        assert cfg.adagrad_epsilon == 1e-8
        assert cfg.max_epochs == 200
        assert cfg.patience == 10
        assert cfg.validation_fraction == 0.1

    @pytest.mark.parametrize("kwargs", [
        {"batch_size": 0},
        {"learning_rate": -0.1},
        {"adagrad_epsilon": 0.0},
        {"max_epochs": 0},
        {"patience": 0},
        {"validation_fraction": 1.0},
        {"threads": 0},
    ])
    def test_validation(self, kwargs):
        with pytest.raises(ConfigError):
            TrainConfig(**kwargs)


class TestTrain:
    def test_single_layer_loss_decreases_monotonically(self):
        model = _tiny_model()
        # drop to one linear layer so the objective is convex
        model.layers = [Conv2D(4, 1, activation="linear"), SqueezeChannels()]
        samples = _samples(8, seed=4, target=5.0)
        cfg = TrainConfig(batch_size=8, max_epochs=5, validation_fraction=0.0,
                          seed=1)
        report = train(model, samples, cfg)
        losses = [tr for tr, _ in report.epochs]
        assert len(losses) == 5
        assert all(b < a for a, b in zip(losses, losses[1:]))

    def test_two_runs_are_bit_identical(self):
        cfg = TrainConfig(batch_size=4, max_epochs=3, validation_fraction=0.25,
                          seed=7)
        reports = []
        states = []
        for _ in range(2):
            model = _tiny_model()
            reports.append(train(model, _samples(12, seed=5), cfg))
            states.append(model.get_state())
        assert reports[0].epochs == reports[1].epochs
        assert reports[0].checksum == reports[1].checksum
        assert reports[0].best_epoch == reports[1].best_epoch
        for a, b in zip(states[0], states[1]):
            npt.assert_array_equal(a, b)

    def test_thread_count_does_not_change_results(self):
        samples = _samples(12, seed=5)
        base_cfg = dict(batch_size=4, max_epochs=3, validation_fraction=0.25,
                        seed=7)
        single = _tiny_model()
        rep_one = train(single, samples, TrainConfig(threads=1, **base_cfg))
        pooled = _tiny_model()
        rep_many = train(pooled, samples, TrainConfig(threads=4, **base_cfg))
        assert rep_one.epochs == rep_many.epochs
        assert rep_one.checksum == rep_many.checksum
        for a, b in zip(single.get_state(), pooled.get_state()):
            npt.assert_array_equal(a, b)

    def test_zero_learning_rate_changes_nothing(self):
        model = _tiny_model()
        cfg = TrainConfig(learning_rate=0.0, batch_size=4, max_epochs=3,
                          validation_fraction=0.0, seed=3, patience=1)
        report = train(model, _samples(8, seed=6), cfg)
        fresh = _tiny_model()
        fresh.init_params(3)
        for a, b in zip(model.get_state(), fresh.get_state()):
            npt.assert_array_equal(a, b)
        losses = [tr for tr, _ in report.epochs]
        assert all(v == losses[0] for v in losses)

    def test_one_batch_step_matches_a_hand_replay(self):
        samples = _samples(2, seed=8)
        cfg = TrainConfig(batch_size=2, max_epochs=1, validation_fraction=0.0,
                          learning_rate=0.05, seed=9)
        trained = _tiny_model()
        train(trained, samples, cfg)

        replay = _tiny_model()
        replay.init_params(9)
        order = np.random.default_rng([9, 1]).permutation(2)
        params = [arr for _, _, arr in replay.parameters()]
        grad_sum = [np.zeros_like(p) for p in params]
        for k in order:
            s = samples[k]
            pred, caches = replay.forward_with_caches(s.input)
            _, layer_grads = replay.backward(caches, loss_grad(pred, s.target))
            flat = [g for entry in layer_grads if entry is not None for g in entry]
            for acc, g in zip(grad_sum, flat):
                acc += g
        state = [np.zeros_like(p) for p in params]
        adagrad_step(params, [g * 0.5 for g in grad_sum], state, 0.05, 1e-8)
        for a, b in zip(trained.get_state(), replay.get_state()):
            npt.assert_array_equal(a, b)

    def test_restored_parameters_reproduce_the_best_validation_loss(self):
        model = _tiny_model()
        samples = _samples(16, seed=10)
        cfg = TrainConfig(batch_size=4, max_epochs=12, validation_fraction=0.25,
                          patience=3, seed=11, learning_rate=0.05)
        report = train(model, samples, cfg)
        val_losses = [va for _, va in report.epochs]
        best = min(val_losses)
        assert val_losses[report.best_epoch - 1] == best
        ordered = sorted(samples, key=lambda s: s.t)
        val_set = ordered[-4:]
        reeval = np.mean([loss(model.forward(s.input), s.target) for s in val_set])
        assert reeval == pytest.approx(best, rel=1e-12)

    def test_early_stopping_respects_patience(self):
        model = _tiny_model()
        # the validation tail wants the opposite of the training data, so
        # fitting the head drives the tail loss up and forces a stop
        rng = np.random.default_rng(12)
        samples = []
        for t in range(16):
            x = rng.uniform(0, 4, size=(4, 4, 4))
            tgt = np.full((4, 4), 5.0 if t < 12 else 0.0)
            samples.append(VolumeSample(t, x, tgt))
        cfg = TrainConfig(batch_size=4, max_epochs=60, validation_fraction=0.25,
                          patience=2, seed=13, learning_rate=0.2)
        report = train(model, samples, cfg)
        assert report.stopped_epoch < 60
        assert report.stopped_epoch - report.best_epoch == 2

    def test_divergence_names_the_epoch_and_batch(self):
        model = _tiny_model()
        samples = _samples(4, seed=14)
        bad = [VolumeSample(s.t, s.input, np.full((4, 4), np.inf))
               for s in samples]
        cfg = TrainConfig(batch_size=4, max_epochs=2, validation_fraction=0.0,
                          seed=15)
        with pytest.raises(DivergenceError, match=r"epoch 1, batch 1"):
            train(model, bad, cfg)

    def test_input_validation(self):
        model = _tiny_model()
        with pytest.raises(DataError):
            train(model, [], TrainConfig())
        wrong = [VolumeSample(0, np.zeros((4, 4, 5)), np.zeros((4, 4)))]
        with pytest.raises(ShapeError):
            train(model, wrong, TrainConfig())

    def test_variant_models_train_end_to_end(self):
        cfg_model = {"rows": 4, "cols": 4, "t_depth": 4, "filters": 2,
                     "lc_channels": 2, "dense_hidden": 4,
                     "kernel_depths": (2, 3)}
        model = build_variant("lc_st_fcn", cfg_model)
        samples = _samples(10, seed=16)
        report = train(model, samples, TrainConfig(
            batch_size=5, max_epochs=3, validation_fraction=0.2, seed=17))
        assert len(report.epochs) == 3
        assert report.checksum != 0


class TestReportFormat:
    def test_layout_and_stability(self):
        report = TrainReport(epochs=[(1.5, 2.5), (1.25, 2.0)],
                             stopped_epoch=2, best_epoch=2, checksum=0xDEAD)
        text = format_train_report(report)
        lines = text.splitlines()
        assert lines[0] == "epoch,train_loss,val_loss"
        assert lines[1] == "1,1.5,2.5"
        assert lines[2] == "2,1.25,2.0"
        assert lines[3] == "# stopped_epoch 2"
        assert lines[4] == "# best_epoch 2"
        assert lines[5] == "# checksum 0000dead"
        assert text == format_train_report(report)
