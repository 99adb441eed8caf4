import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pedcross.dataset import EmptyDataset, SynthConfig, generate_synthetic_dataset
from pedcross.nn import Gradients, Model, ShapeMismatch, backward, init_network, mean_loss, predict, stack_samples
from pedcross.pose import CrossingState
from pedcross.train import (
    ConfigError,
    FormatError,
    OptimizerState,
    SchedulerState,
    TrainConfig,
    VersionError,
    epoch_permutation,
    load_model,
    model_to_dict,
    plateau_step,
    save_model,
    sgd_momentum_step,
    train,
)

from conftest import features_of


def scalar_model(theta: float) -> Model:
    # a model whose first weight entry carries theta and everything else is zero
    m = init_network(1, 1, seed=0)
    w = [np.zeros_like(x) for x in m.weights]
    w[0][0, 0] = theta
    return m.replace_params(w, [np.zeros_like(b) for b in m.biases])


def scalar_grads(model: Model, g: float) -> Gradients:
    w = [np.zeros_like(x) for x in model.weights]
    w[0][0, 0] = g
    return Gradients(tuple(w), tuple(np.zeros_like(b) for b in model.biases))


class TestConfig:
    def test_defaults_match_recipe(self):
        c = TrainConfig()
        assert (c.initial_lr, c.momentum, c.batch_size, c.epochs, c.scheduler_decay, c.scheduler_patience) == (
            0.2, 0.5, 128, 50, 0.5, 3,
        )

    @pytest.mark.parametrize(
        "field,value",
        [("epochs", 0), ("initial_lr", 0.0), ("momentum", 1.0), ("batch_size", 0),
         ("scheduler_decay", 1.0), ("scheduler_patience", -1)],
    )
    def test_invalid(self, field, value):
        with pytest.raises(ConfigError) as err:
            TrainConfig(**{field: value})
        assert err.value.field == field

    def test_unknown_option(self):
        with pytest.raises(ConfigError):
            TrainConfig.from_mapping({"adam_beta": 0.9})


class TestSGD:
    def test_plain_sgd(self):
        m = scalar_model(1.0)
        state = OptimizerState.zeros_like(m, lr=0.1, momentum=0.0)
        m2, s2 = sgd_momentum_step(m, scalar_grads(m, 2.0), state)
        assert m2.weights[0][0, 0] == pytest.approx(0.8)
        assert s2.velocity.weights[0][0, 0] == 2.0

    def test_momentum_two_steps(self):
        m = scalar_model(0.0)
        state = OptimizerState.zeros_like(m, lr=0.1, momentum=0.5)
        m1, s1 = sgd_momentum_step(m, scalar_grads(m, 1.0), state)
        m2, s2 = sgd_momentum_step(m1, scalar_grads(m, 1.0), s1)
        assert s1.velocity.weights[0][0, 0] == 1.0 and s2.velocity.weights[0][0, 0] == 1.5
        assert m1.weights[0][0, 0] == pytest.approx(-0.1)
        assert m2.weights[0][0, 0] - m1.weights[0][0, 0] == pytest.approx(-0.15)

    def test_zero_gradient_fixed_point(self):
        m = init_network(5, 4, seed=2)
        state = OptimizerState.zeros_like(m, lr=0.2, momentum=0.5)
        zeros = Gradients(tuple(np.zeros_like(w) for w in m.weights), tuple(np.zeros_like(b) for b in m.biases))
        m2, _ = sgd_momentum_step(m, zeros, state)
        for a, b in zip(m.weights + m.biases, m2.weights + m2.biases):
            assert a.tobytes() == b.tobytes()

    def test_shape_mismatch(self):
        m = init_network(5, 4, seed=2)
        other = init_network(6, 4, seed=2)
        g = Gradients(tuple(np.zeros_like(w) for w in other.weights), tuple(np.zeros_like(b) for b in other.biases))
        with pytest.raises(ShapeMismatch):
            sgd_momentum_step(m, g, OptimizerState.zeros_like(m, 0.1, 0.5))


def run_trace(trace, cfg=TrainConfig()):
    m = scalar_model(0.0)
    opt = OptimizerState.zeros_like(m, cfg.initial_lr, cfg.momentum)
    sched = SchedulerState()
    lrs = []
    for metric in trace:
        sched, opt = plateau_step(sched, metric, opt, cfg)
        lrs.append(opt.current_lr)
    return lrs, sched


class TestPlateau:
    def test_improving(self):
        lrs, _ = run_trace([1.0, 0.9, 0.8])
        assert lrs == [0.2, 0.2, 0.2]

    def test_fires_on_fourth_bad_epoch(self):
        lrs, sched = run_trace([1.0, 1.0, 1.0, 1.0, 1.0])
        assert lrs == [0.2, 0.2, 0.2, 0.2, 0.1]
        assert sched.bad_epoch_count == 0

    def test_two_decays(self):
        lrs, _ = run_trace([1.0] * 9)
        assert lrs[-1] == pytest.approx(0.05)

    def test_threshold_is_relative(self):
        # 1.0 -> 0.99995 is an improvement of 5e-5 < 1e-4 relative, so it counts as bad
        _, sched = run_trace([1.0, 0.99995])
        assert sched.bad_epoch_count == 1 and sched.best_metric == 1.0

    @given(st.lists(st.floats(0.0, 10.0), min_size=1, max_size=60))
    def test_lr_non_increasing_powers_of_decay(self, trace):
        cfg = TrainConfig()
        lrs, _ = run_trace(trace, cfg)
        assert all(b <= a for a, b in zip([cfg.initial_lr] + lrs, lrs))
        for lr in lrs:
            k = math.log(lr / cfg.initial_lr) / math.log(cfg.scheduler_decay)
            assert abs(k - round(k)) < 1e-9

    def test_non_finite_metric(self):
        with pytest.raises(ValueError):
            run_trace([float("nan")])


@pytest.fixture(scope="module")
def small_data():
    return stack_samples(features_of(generate_synthetic_dataset(SynthConfig(seed=3, count_per_class=40))))


class TestTrain:
    def test_history_shape(self, small_data):
        _, hist = train(init_network(16, 8, seed=0), small_data, TrainConfig(epochs=4, batch_size=32))
        assert [r.epoch for r in hist.records] == [1, 2, 3, 4]
        assert hist.records[0].lr == 0.2

    def test_reproducible(self, small_data):
        cfg = TrainConfig(epochs=5, batch_size=32, seed=9)
        m1, h1 = train(init_network(16, 8, seed=1), small_data, cfg)
        m2, h2 = train(init_network(16, 8, seed=1), small_data, cfg)
        assert h1 == h2
        for a, b in zip(m1.weights + m1.biases, m2.weights + m2.biases):
            assert a.tobytes() == b.tobytes()

    def test_empty(self):
        with pytest.raises(EmptyDataset):
            train(init_network(4, 4), [], TrainConfig())

    def test_batches_partition_training_set(self):
        n, bs = 130, 32
        order = epoch_permutation(5, 3, n)
        batches = [order[i:i + bs] for i in range(0, n, bs)]
        assert sorted(np.concatenate(batches).tolist()) == list(range(n))
        assert len(batches[-1]) == n % bs

    def test_full_batch_descent(self):
        samples = generate_synthetic_dataset(SynthConfig(seed=1, noise_std=0.0, count_per_class=30))
        X, y = stack_samples(features_of(samples))
        m = init_network(seed=3)
        before = mean_loss(m, (X, y))
        grads, _ = backward(m, (X, y))
        m2, _ = sgd_momentum_step(m, grads, OptimizerState.zeros_like(m, 1e-3, 0.5))
        assert mean_loss(m2, (X, y)) < before


class TestCheckpoint:
    def test_round_trip_bitwise(self, tmp_path, rng):
        m = init_network(32, 16, seed=8)
        m = m.replace_params([w * rng.lognormal() for w in m.weights], [rng.normal(size=b.shape) for b in m.biases])
        save_model(m, tmp_path / "m.json")
        back = load_model(tmp_path / "m.json")
        assert back.layer_dims == m.layer_dims and back.feature_order == m.feature_order
        for a, b in zip(m.weights + m.biases, back.weights + back.biases):
            assert a.tobytes() == b.tobytes()

    def test_truncated(self, tmp_path):
        save_model(init_network(8, 4, seed=0), tmp_path / "m.json")
        text = (tmp_path / "m.json").read_text()
        (tmp_path / "t.json").write_text(text[: len(text) // 2])
        with pytest.raises(FormatError):
            load_model(tmp_path / "t.json")

    def test_version(self, tmp_path):
        doc = model_to_dict(init_network(4, 4, seed=0))
        doc["version"] = 99
        (tmp_path / "v.json").write_text(json.dumps(doc))
        with pytest.raises(VersionError):
            load_model(tmp_path / "v.json")

    def test_shape_validation(self, tmp_path):
        doc = model_to_dict(init_network(4, 4, seed=0))
        doc["biases"][1] = [0.0] * 5
        (tmp_path / "s.json").write_text(json.dumps(doc))
        with pytest.raises(FormatError):
            load_model(tmp_path / "s.json")

    def test_missing_field(self, tmp_path):
        doc = model_to_dict(init_network(4, 4, seed=0))
        del doc["activation"]
        (tmp_path / "s.json").write_text(json.dumps(doc))
        with pytest.raises(FormatError) as err:
            load_model(tmp_path / "s.json")
        assert err.value.field == "activation"

    def test_default_dims_load_and_predict(self, tmp_path):
        save_model(init_network(256, 128, seed=0), tmp_path / "m.json")
        m = load_model(tmp_path / "m.json")
        assert m.layer_dims == (18, 256, 128, 3)
        assert predict(m, np.zeros(18)) in set(CrossingState)
