"""Shallow fully connected classifier: 18 inputs, two relu hidden layers,
softmax over the three crossing states. Gradients are hand-derived; a central
finite-difference oracle lives alongside for checking them."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .pose import FEATURE_DIM, FEATURE_ORDER, CrossingState, FeatureVector

NUM_CLASSES = len(CrossingState)
DEFAULT_HIDDEN = (256, 128)


class NonFiniteInput(ValueError):
    pass


class EmptyBatch(ValueError):
    pass


class ShapeMismatch(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Model:
    layer_dims: tuple[int, ...]
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    activation: str = "relu"
    feature_order: str = FEATURE_ORDER

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        if len(dims) != 4 or dims[0] != FEATURE_DIM or dims[-1] != NUM_CLASSES or min(dims) < 1:
            raise ShapeMismatch(f"layer_dims must be [18, h1, h2, 3], got {list(dims)}")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")
        if len(self.weights) != 3 or len(self.biases) != 3:
            raise ShapeMismatch("expected 3 weight matrices and 3 bias vectors")
        ws, bs = [], []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            w = np.array(w, dtype=np.float64)
            b = np.array(b, dtype=np.float64)
            if w.shape != (dims[i + 1], dims[i]):
                raise ShapeMismatch(f"weights[{i}] has shape {w.shape}, expected {(dims[i + 1], dims[i])}")
            if b.shape != (dims[i + 1],):
                raise ShapeMismatch(f"biases[{i}] has shape {b.shape}, expected {(dims[i + 1],)}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {i} has non-finite parameters")
            w.setflags(write=False)
            b.setflags(write=False)
            ws.append(w)
            bs.append(b)
        object.__setattr__(self, "layer_dims", dims)
        object.__setattr__(self, "weights", tuple(ws))
        object.__setattr__(self, "biases", tuple(bs))

    @property
    def num_parameters(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def replace_params(self, weights, biases) -> Model:
        return Model(self.layer_dims, tuple(weights), tuple(biases), self.activation, self.feature_order)


@dataclass(frozen=True, eq=False)
class Gradients:
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])


def init_network(hidden1: int = DEFAULT_HIDDEN[0], hidden2: int = DEFAULT_HIDDEN[1], seed: int = 0) -> Model:
    """Weights uniform on (-1/sqrt(fan_in), 1/sqrt(fan_in)), zero biases."""
    if hidden1 < 1 or hidden2 < 1:
        raise ValueError("hidden layer widths must be >= 1")
    rng = np.random.default_rng(seed)
    dims = (FEATURE_DIM, hidden1, hidden2, NUM_CLASSES)
    weights = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
    biases = [np.zeros(d) for d in dims[1:]]
    return Model(dims, tuple(weights), tuple(biases))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def as_matrix(x) -> np.ndarray:
    """Accept a FeatureVector, a sequence of them, or a raw array; return (N, 18)."""
    if isinstance(x, FeatureVector):
        X = x.values[None, :]
    elif isinstance(x, (list, tuple)) and x and isinstance(x[0], FeatureVector):
        X = np.stack([v.values for v in x])
    else:
        X = np.asarray(x, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
    if X.ndim != 2 or X.shape[1] != FEATURE_DIM:
        raise ShapeMismatch(f"inputs must have 18 features, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise NonFiniteInput("input contains non-finite values")
    return X


def _forward_cache(model: Model, X: np.ndarray):
    pre, acts = [], [X]
    h = X
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w.T + b
        pre.append(z)
        h = np.maximum(z, 0.0) if i < 2 else z
        acts.append(h)
    return pre, acts, softmax(pre[-1])


def forward_batch(model: Model, X) -> np.ndarray:
    """Class probabilities, shape (N, 3)."""
    return _forward_cache(model, as_matrix(X))[2]


def forward(model: Model, x) -> np.ndarray:
    """Probabilities for a single feature vector, indexed by CrossingState."""
    return forward_batch(model, x)[0]


def predict_batch(model: Model, X) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. ties go to the lowest class index
    return np.argmax(forward_batch(model, X), axis=1)


def predict(model: Model, x) -> CrossingState:
    return CrossingState(int(predict_batch(model, x)[0]))


def cross_entropy_loss(p: np.ndarray, label: CrossingState | int) -> float:
    return float(-np.log(p[int(label)]))


def _labels(y) -> np.ndarray:
    return np.asarray([int(v) for v in y], dtype=np.int64)


def _unzip_batch(batch) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(batch, tuple) and len(batch) == 2 and isinstance(batch[0], np.ndarray):
        X, y = batch
        return as_matrix(X), _labels(y)
    if len(batch) == 0:
        raise EmptyBatch("batch is empty")
    xs, ys = zip(*batch)
    return as_matrix(list(xs)), _labels(ys)


def mean_loss(model: Model, batch) -> float:
    X, y = _unzip_batch(batch)
    if len(y) == 0:
        raise EmptyBatch("batch is empty")
    p = forward_batch(model, X)
    return float(-np.mean(np.log(p[np.arange(len(y)), y])))


def backward_arrays(model: Model, X: np.ndarray, y: np.ndarray) -> tuple[Gradients, float, np.ndarray]:
    """Gradients of the mean cross-entropy over (X, y); also returns the loss
    and the probabilities from the same forward pass."""
    n = len(y)
    if n == 0:
        raise EmptyBatch("batch is empty")
    pre, acts, p = _forward_cache(model, X)
    loss = float(-np.mean(np.log(p[np.arange(n), y])))

    delta = p.copy()
    delta[np.arange(n), y] -= 1.0
    delta /= n
    gw = [None] * 3
    gb = [None] * 3
    for i in (2, 1, 0):
        gw[i] = delta.T @ acts[i]
        gb[i] = delta.sum(axis=0)
        if i > 0:
            # relu'(0) := 0
            delta = (delta @ model.weights[i]) * (pre[i - 1] > 0.0)
    return Gradients(tuple(gw), tuple(gb)), loss, p


def backward(model: Model, batch) -> tuple[Gradients, float]:
    X, y = _unzip_batch(batch)
    grads, loss, _ = backward_arrays(model, X, y)
    return grads, loss


def _relu_masks(model: Model, X: np.ndarray) -> tuple[np.ndarray, ...]:
    pre, _, _ = _forward_cache(model, X)
    return tuple(z > 0.0 for z in pre[:2])


def _min_relu_margin(model: Model, X: np.ndarray) -> float:
    pre, _, _ = _forward_cache(model, X)
    return float(min(np.abs(z).min() for z in pre[:2]))


def finite_diff_gradients(model: Model, batch, eps: float = 1e-5) -> Gradients:
    """Central differences of the mean cross-entropy, one parameter at a time."""
    return _finite_diff(model, batch, eps)[0]


def _finite_diff(model: Model, batch, eps: float):
    if eps <= 0:
        raise ValueError("eps must be positive")
    X, y = _unzip_batch(batch)
    if len(y) == 0:
        raise EmptyBatch("batch is empty")
    base_masks = _relu_masks(model, X)
    params = [np.array(a) for pair in zip(model.weights, model.biases) for a in pair]
    grads = [np.zeros_like(a) for a in params]
    kinked = [np.zeros(a.shape, dtype=bool) for a in params]

    def rebuild(ps):
        return model.replace_params(ps[0::2], ps[1::2])

    for k, arr in enumerate(params):
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + eps
            m_plus = rebuild(params)
            arr[idx] = orig - eps
            m_minus = rebuild(params)
            arr[idx] = orig
            lp = mean_loss(m_plus, (X, y))
            lm = mean_loss(m_minus, (X, y))
            grads[k][idx] = (lp - lm) / (2.0 * eps)
            crossed = any(
                not np.array_equal(a, b)
                for m in (m_plus, m_minus)
                for a, b in zip(_relu_masks(m, X), base_masks)
            )
            kinked[k][idx] = crossed
    g = Gradients(tuple(grads[0::2]), tuple(grads[1::2]))
    return g, kinked


@dataclass(frozen=True)
class GradCheckResult:
    max_rel_error: float
    checked: int
    excluded: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


KINK_MARGIN = 1e-6
REL_ERROR_FLOOR = 1e-8


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = REL_ERROR_FLOOR) -> np.ndarray:
    """|a - b| / max(|a|, |b|, floor); the floor keeps near-zero entries from
    turning round-off into huge ratios."""
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def gradient_check(
    model: Model,
    batch,
    eps: float = 1e-5,
    tolerance: float = 1e-4,
    backward_fn: Callable[[Model, object], tuple[Gradients, float]] = backward,
) -> GradCheckResult:
    """Compare ``backward_fn`` against central differences.

    Parameters whose perturbation flips any relu on/off state are excluded,
    as is the whole batch when some relu input sits within 1e-6 of zero.
    """
    X, y = _unzip_batch(batch)
    analytic, _ = backward_fn(model, (X, y))
    numeric, kinked = _finite_diff(model, (X, y), eps)
    a = analytic.flat()
    n = numeric.flat()
    mask = ~np.concatenate([kk.ravel() for kk in kinked])
    if _min_relu_margin(model, X) < KINK_MARGIN:
        mask[:] = False
    err = relative_error(a[mask], n[mask])
    worst = float(err.max()) if err.size else 0.0
    return GradCheckResult(worst, int(mask.sum()), int((~mask).sum()), tolerance)


def random_gradcheck_case(rng: np.random.Generator, max_hidden: int = 8, max_batch: int = 4):
    """A random small model with a random batch, for oracle comparisons."""
    h1 = int(rng.integers(1, max_hidden + 1))
    h2 = int(rng.integers(1, max_hidden + 1))
    model = init_network(h1, h2, seed=int(rng.integers(0, 2**63 - 1)))
    # random biases so that the zero-bias start is not the only case exercised
    biases = [rng.normal(0.0, 0.1, size=b.shape) for b in model.biases]
    model = model.replace_params(model.weights, biases)
    n = int(rng.integers(1, max_batch + 1))
    X = rng.normal(0.0, 0.5, size=(n, FEATURE_DIM))
    y = rng.integers(0, NUM_CLASSES, size=n)
    return model, (X, y)


def stack_samples(samples: Sequence[tuple[FeatureVector, CrossingState]]) -> tuple[np.ndarray, np.ndarray]:
    if not samples:
        return np.zeros((0, FEATURE_DIM)), np.zeros(0, dtype=np.int64)
    xs, ys = zip(*samples)
    return np.stack([x.values for x in xs]), _labels(ys)
