"""Independent per-class accuracy and the sequential time-to-event (TTE) test.

TTE offsets: frames before the event frame are numbered -k..-1, the event
frame itself is +1 and later frames +2, +3, ...  There is no offset 0.
"""
from __future__ import annotations

import statistics
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dataset import EmptyDataset
from .nn import Model, as_matrix, predict_batch, stack_samples
from .pose import CrossingState, FeatureVector

CE_RUN_LENGTH = 9
LATE_RF = 15
DEFAULT_FPS = 30.0

Predictor = Callable[[np.ndarray], np.ndarray]


class MalformedSequence(ValueError):
    pass


class EmptyInput(ValueError):
    pass


def _predictor(model) -> Predictor:
    if isinstance(model, Model):
        return lambda X: predict_batch(model, X)
    if callable(model):
        return lambda X: np.asarray(model(X), dtype=np.int64)
    raise TypeError(f"expected a Model or a callable predictor, got {type(model).__name__}")


def percent(correct: int, total: int) -> float | None:
    return None if total == 0 else correct / total * 100.0


def format_percent(value: float | None) -> str:
    return "n/a" if value is None else f"{value:.2f}%"


@dataclass(frozen=True)
class ClassRow:
    name: str
    total: int
    correct: int

    @property
    def accuracy(self) -> float | None:
        return percent(self.correct, self.total)


@dataclass(frozen=True)
class EvalReport:
    confusion: np.ndarray  # (true, predicted) counts

    @property
    def per_class(self) -> list[ClassRow]:
        return [
            ClassRow(s.name, int(self.confusion[s].sum()), int(self.confusion[s, s]))
            for s in CrossingState
        ]

    @property
    def overall(self) -> ClassRow:
        return ClassRow("ALL", int(self.confusion.sum()), int(np.trace(self.confusion)))

    def rows(self) -> list[ClassRow]:
        return self.per_class + [self.overall]

    def to_dict(self) -> dict:
        return {
            "per_class": {
                r.name: {"total": r.total, "correct": r.correct, "accuracy": r.accuracy}
                for r in self.per_class
            },
            "overall": {
                "total": self.overall.total,
                "correct": self.overall.correct,
                "accuracy": self.overall.accuracy,
            },
            "confusion": self.confusion.tolist(),
            "confusion_axes": ["true", "predicted"],
            "classes": [s.name for s in CrossingState],
        }

    def table(self) -> str:
        lines = [f"{'Class':<6}{'Total':>8}{'Correct':>9}{'Accuracy':>10}"]
        for r in self.rows():
            lines.append(f"{r.name:<6}{r.total:>8}{r.correct:>9}{format_percent(r.accuracy):>10}")
        return "\n".join(lines)


def report_from_predictions(y_true, y_pred) -> EvalReport:
    y_true = np.asarray([int(v) for v in y_true], dtype=np.int64)
    y_pred = np.asarray([int(v) for v in y_pred], dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ValueError("label and prediction counts differ")
    if len(y_true) == 0:
        raise EmptyDataset("nothing to evaluate")
    k = len(CrossingState)
    confusion = np.zeros((k, k), dtype=np.int64)
    np.add.at(confusion, (y_true, y_pred), 1)
    return EvalReport(confusion)


def evaluate_accuracy(model, test_set) -> EvalReport:
    """``model`` is a Model or any callable mapping an (N, 18) array to class
    indices; ``test_set`` holds (FeatureVector, CrossingState) pairs or is an
    (X, y) array tuple."""
    if isinstance(test_set, tuple) and len(test_set) == 2 and isinstance(test_set[0], np.ndarray):
        X, y = test_set
    else:
        if len(test_set) == 0:
            raise EmptyDataset("test set is empty")
        X, y = stack_samples(list(test_set))
    if len(y) == 0:
        raise EmptyDataset("test set is empty")
    return report_from_predictions(y, _predictor(model)(as_matrix(X)))


# --- time-to-event -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TTESequence:
    frames: tuple[tuple[FeatureVector, CrossingState], ...]
    tte_index: int
    frame_rate: float = DEFAULT_FPS
    sequence_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple((fv, CrossingState(int(s))) for fv, s in self.frames))
        if self.frame_rate <= 0:
            raise MalformedSequence(f"sequence {self.sequence_id!r}: frame_rate must be positive")
        validate_states([s for _, s in self.frames], self.tte_index, self.sequence_id)

    @property
    def states(self) -> list[CrossingState]:
        return [s for _, s in self.frames]

    @property
    def post_state(self) -> CrossingState:
        return self.frames[self.tte_index][1]


def validate_states(states: Sequence, tte_index: int, sequence_id: str = "") -> None:
    changes = [i for i in range(1, len(states)) if states[i] != states[i - 1]]
    if len(changes) != 1:
        raise MalformedSequence(
            f"sequence {sequence_id!r}: expected exactly one state change, found {len(changes)}"
        )
    if changes[0] != tte_index:
        raise MalformedSequence(
            f"sequence {sequence_id!r}: state changes at frame {changes[0]} but tte_index is {tte_index}"
        )


@dataclass(frozen=True)
class TTEResult:
    rf: int | None
    ce: bool
    crt: float | None
    sequence_id: str = ""

    def to_dict(self) -> dict:
        return {"sequence_id": self.sequence_id, "rf": self.rf, "ce": self.ce, "crt": self.crt}


def frame_offset(index: int, tte_index: int) -> int:
    return index - tte_index if index < tte_index else index - tte_index + 1


def crt_from_rf(rf: float, frame_rate: float = DEFAULT_FPS) -> float:
    if frame_rate <= 0:
        raise ValueError("frame_rate must be positive")
    return rf / frame_rate


def tte_from_predictions(
    predictions: Sequence,
    post_state: CrossingState,
    tte_index: int,
    frame_rate: float = DEFAULT_FPS,
    sequence_id: str = "",
) -> TTEResult:
    """RF is the offset of the first frame of the earliest run of at least
    nine consecutive predictions equal to the post-change state."""
    run = 0
    target = int(post_state)
    for i, p in enumerate(predictions):
        run = run + 1 if int(p) == target else 0
        if run == CE_RUN_LENGTH:
            rf = frame_offset(i - CE_RUN_LENGTH + 1, tte_index)
            return TTEResult(rf, True, crt_from_rf(rf, frame_rate), sequence_id)
    return TTEResult(None, False, None, sequence_id)


def tte_evaluate(model, seq: TTESequence) -> TTEResult:
    X = np.stack([fv.values for fv, _ in seq.frames])
    preds = _predictor(model)(X)
    return tte_from_predictions(preds, seq.post_state, seq.tte_index, seq.frame_rate, seq.sequence_id)


@dataclass(frozen=True)
class TTEReport:
    results: list[TTEResult]
    mean_rf: float | None
    median_rf: float | None
    late_count: int
    failed_count: int
    histogram: dict[int, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "sequences": [r.to_dict() for r in self.results],
            "mean_rf": self.mean_rf,
            "median_rf": self.median_rf,
            "late_count": self.late_count,
            "failed_count": self.failed_count,
            "histogram": [[rf, n] for rf, n in sorted(self.histogram.items())],
        }

    def text(self, frame_rate: float = DEFAULT_FPS) -> str:
        def fmt(v):
            return "n/a" if v is None else f"{v:.3f} ({crt_from_rf(v, frame_rate):.4f} s)"

        lines = [
            f"sequences: {len(self.results)}",
            f"mean RF (RF <= {LATE_RF}): {fmt(self.mean_rf)}",
            f"median RF (RF <= {LATE_RF}): {fmt(self.median_rf)}",
            f"late (RF > {LATE_RF}): {self.late_count}",
            f"no confident estimation: {self.failed_count}",
            "RF histogram:",
        ]
        lines += [f"  {rf:>4}  {n}" for rf, n in sorted(self.histogram.items())]
        return "\n".join(lines)


def aggregate_tte(results: Sequence[TTEResult]) -> TTEReport:
    if not results:
        raise EmptyInput("no TTE results to aggregate")
    present = [r.rf for r in results if r.rf is not None]
    included = [rf for rf in present if rf <= LATE_RF]
    return TTEReport(
        results=list(results),
        mean_rf=statistics.fmean(included) if included else None,
        median_rf=statistics.median(included) if included else None,
        late_count=sum(rf > LATE_RF for rf in present),
        failed_count=sum(not r.ce for r in results),
        histogram=dict(sorted(Counter(present).items())),
    )
