"""Mini-batch SGD with momentum, a reduce-on-plateau learning-rate schedule,
and the JSON checkpoint format."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .dataset import EmptyDataset
from .nn import Gradients, Model, ShapeMismatch, backward_arrays, stack_samples

CHECKPOINT_VERSION = 1


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class FormatError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"checkpoint field {field_name!r}: {message}")
        self.field = field_name


class VersionError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    initial_lr: float = 0.2
    momentum: float = 0.5
    batch_size: int = 128
    epochs: int = 50
    scheduler_decay: float = 0.5
    scheduler_patience: int = 3
    improvement_threshold: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        checks = [
            ("initial_lr", self.initial_lr > 0, "must be > 0"),
            ("momentum", 0 <= self.momentum < 1, "must lie in [0, 1)"),
            ("batch_size", self.batch_size >= 1, "must be >= 1"),
            ("epochs", self.epochs >= 1, "must be >= 1"),
            ("scheduler_decay", 0 < self.scheduler_decay < 1, "must lie in (0, 1)"),
            ("scheduler_patience", self.scheduler_patience >= 0, "must be >= 0"),
            ("improvement_threshold", self.improvement_threshold >= 0, "must be >= 0"),
        ]
        for name, ok, msg in checks:
            if not ok:
                raise ConfigError(name, f"{msg}, got {getattr(self, name)!r}")

    @classmethod
    def from_mapping(cls, values: dict) -> TrainConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown training option")
        return cls(**values)


@dataclass
class OptimizerState:
    velocity: Gradients
    current_lr: float
    momentum: float

    @classmethod
    def zeros_like(cls, model: Model, lr: float, momentum: float) -> OptimizerState:
        v = Gradients(tuple(np.zeros_like(w) for w in model.weights), tuple(np.zeros_like(b) for b in model.biases))
        return cls(v, lr, momentum)


@dataclass
class SchedulerState:
    best_metric: float = math.inf
    bad_epoch_count: int = 0


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    mean_loss: float
    train_accuracy: float
    lr: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)

    @property
    def losses(self) -> list[float]:
        return [r.mean_loss for r in self.records]

    def write(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for r in self.records:
                fh.write(json.dumps(asdict(r)) + "\n")


def sgd_momentum_step(model: Model, grads: Gradients, state: OptimizerState) -> tuple[Model, OptimizerState]:
    """v <- momentum * v + g;  theta <- theta - lr * v."""
    new_w, new_b, vel_w, vel_b = [], [], [], []
    for theta_list, g_list, v_list, out_theta, out_v in (
        (model.weights, grads.weights, state.velocity.weights, new_w, vel_w),
        (model.biases, grads.biases, state.velocity.biases, new_b, vel_b),
    ):
        if not (len(theta_list) == len(g_list) == len(v_list)):
            raise ShapeMismatch("gradient/velocity layer count does not match the model")
        for theta, g, v in zip(theta_list, g_list, v_list):
            if theta.shape != g.shape or theta.shape != v.shape:
                raise ShapeMismatch(f"shape {g.shape} / {v.shape} does not match parameter {theta.shape}")
            v_next = state.momentum * v + g
            out_v.append(v_next)
            out_theta.append(theta - state.current_lr * v_next)
    new_state = OptimizerState(Gradients(tuple(vel_w), tuple(vel_b)), state.current_lr, state.momentum)
    return model.replace_params(new_w, new_b), new_state


def plateau_step(
    sched: SchedulerState,
    epoch_metric: float,
    state: OptimizerState,
    cfg: TrainConfig,
) -> tuple[SchedulerState, OptimizerState]:
    """Relative-threshold plateau rule on a metric to be minimized."""
    if not math.isfinite(epoch_metric):
        raise ValueError("epoch metric must be finite")
    lr = state.current_lr
    if epoch_metric < sched.best_metric * (1.0 - cfg.improvement_threshold):
        sched = SchedulerState(epoch_metric, 0)
    else:
        count = sched.bad_epoch_count + 1
        if count > cfg.scheduler_patience:
            lr = lr * cfg.scheduler_decay
            count = 0
        sched = SchedulerState(sched.best_metric, count)
    return sched, OptimizerState(state.velocity, lr, state.momentum)


def epoch_permutation(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def train(model: Model, train_set, cfg: TrainConfig) -> tuple[Model, TrainHistory]:
    """Train for ``cfg.epochs`` epochs; the scheduler monitors the epoch's mean
    training loss. ``train_set`` is a list of (FeatureVector, CrossingState)
    pairs or an (X, y) array tuple."""
    if isinstance(train_set, tuple) and len(train_set) == 2 and isinstance(train_set[0], np.ndarray):
        X, y = np.asarray(train_set[0], dtype=np.float64), np.asarray(train_set[1], dtype=np.int64)
    else:
        X, y = stack_samples(list(train_set))
    n = len(y)
    if n == 0:
        raise EmptyDataset("training set is empty")

    opt = OptimizerState.zeros_like(model, cfg.initial_lr, cfg.momentum)
    sched = SchedulerState()
    history = TrainHistory()
    for epoch in range(1, cfg.epochs + 1):
        order = epoch_permutation(cfg.seed, epoch, n)
        lr_in_effect = opt.current_lr
        loss_sum = 0.0
        correct = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            grads, loss, p = backward_arrays(model, X[idx], y[idx])
            model, opt = sgd_momentum_step(model, grads, opt)
            loss_sum += loss * len(idx)
            correct += int(np.sum(np.argmax(p, axis=1) == y[idx]))
        epoch_loss = loss_sum / n
        history.records.append(EpochRecord(epoch, epoch_loss, correct / n, lr_in_effect))
        sched, opt = plateau_step(sched, epoch_loss, opt, cfg)
    return model, history


# --- checkpoints -------------------------------------------------------------

def model_to_dict(model: Model) -> dict:
    return {
        "version": CHECKPOINT_VERSION,
        "layer_dims": list(model.layer_dims),
        "activation": model.activation,
        "feature_order": model.feature_order,
        "weights": [w.tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
    }


def model_from_dict(doc) -> Model:
    if not isinstance(doc, dict):
        raise FormatError("<root>", "checkpoint must be an object")
    for name in ("version", "layer_dims", "activation", "feature_order", "weights", "biases"):
        if name not in doc:
            raise FormatError(name, "missing")
    if doc["version"] != CHECKPOINT_VERSION:
        raise VersionError(f"unsupported checkpoint version {doc['version']!r}")
    for name in ("weights", "biases", "layer_dims"):
        if not isinstance(doc[name], list):
            raise FormatError(name, "must be an array")
    try:
        weights = tuple(np.array(w, dtype=np.float64) for w in doc["weights"])
        biases = tuple(np.array(b, dtype=np.float64) for b in doc["biases"])
    except (TypeError, ValueError) as exc:
        raise FormatError("weights", str(exc)) from None
    try:
        return Model(tuple(doc["layer_dims"]), weights, biases, doc["activation"], doc["feature_order"])
    except ShapeMismatch as exc:
        raise FormatError("layer_dims", str(exc)) from None
    except (TypeError, ValueError) as exc:
        raise FormatError("weights", str(exc)) from None


def save_model(model: Model, path: str | Path) -> None:
    # json writes floats with repr(), which round-trips float64 exactly
    Path(path).write_text(json.dumps(model_to_dict(model)) + "\n", encoding="utf-8")


def load_model(path: str | Path) -> Model:
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError("<root>", f"not valid JSON ({exc.msg} at char {exc.pos})") from None
    return model_from_dict(doc)
