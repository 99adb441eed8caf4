"""Ingestion of line-delimited pose records, behavior-tag label mapping,
ordered train/test splitting and a synthetic stick-figure generator."""
from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .pose import (
    NUM_RAW_KEYPOINTS,
    CrossingState,
    DegeneratePose,
    RawPose,
    normalize_pose,
    passes_confidence_filter,
    prune_pose,
)

MOTION_TAGS = frozenset(
    {"walking", "crossing", "moving fast", "moving slow", "slow down", "speed up", "clear path"}
)
STATIC_TAGS = frozenset({"stopped", "standing"})
KNOWN_TAGS = MOTION_TAGS | STATIC_TAGS

REQUIRED_FIELDS = ("id", "video", "frame", "keypoints", "behavior", "direction")


class Direction(str, Enum):
    LAT = "LAT"
    LONG = "LONG"
    NONE = "NONE"

    @classmethod
    def parse(cls, value: str | None) -> Direction:
        if value is None:
            return cls.NONE
        try:
            return cls(value)
        except ValueError:
            raise ValueError(f"unknown direction {value!r}") from None

    def to_json(self) -> str | None:
        return None if self is Direction.NONE else self.value


class UnknownTag(ValueError):
    pass


class AmbiguousLabel(ValueError):
    pass


class ParseError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class SchemaError(ValueError):
    def __init__(self, line: int, field_name: str, message: str | None = None):
        super().__init__(f"line {line}: {message or f'missing field {field_name!r}'}")
        self.line = line
        self.field = field_name


class EmptyDataset(ValueError):
    pass


def map_labels(behavior_tag: str, direction: Direction | str | None) -> CrossingState:
    if not isinstance(direction, Direction):
        direction = Direction.parse(direction)
    if behavior_tag in STATIC_TAGS:
        return CrossingState.NC
    if behavior_tag not in MOTION_TAGS:
        raise UnknownTag(f"unrecognized behavior tag {behavior_tag!r}")
    if direction is Direction.LAT:
        return CrossingState.C
    if direction is Direction.LONG:
        return CrossingState.LONG
    raise AmbiguousLabel(f"motion tag {behavior_tag!r} without a direction annotation")


@dataclass(frozen=True, eq=False)
class AnnotatedSample:
    id: str
    video_id: str
    frame_index: int
    raw: RawPose
    behavior_tag: str
    motion_direction: Direction
    label: CrossingState
    # only populated for time-to-event sequence files
    sequence_id: str | None = None
    tte_index: int | None = None

    def to_record(self) -> dict:
        rec = {
            "id": self.id,
            "video": self.video_id,
            "frame": self.frame_index,
            "keypoints": self.raw.keypoints.tolist(),
            "behavior": self.behavior_tag,
            "direction": self.motion_direction.to_json(),
        }
        if self.sequence_id is not None:
            rec["sequence_id"] = self.sequence_id
            rec["tte_index"] = self.tte_index
        return rec


@dataclass
class ImportResult:
    samples: list[AnnotatedSample]
    drops: Counter = field(default_factory=Counter)


def _parse_record(line_no: int, text: str) -> dict:
    try:
        rec = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(line_no, exc.msg) from None
    if not isinstance(rec, dict):
        raise ParseError(line_no, "record is not an object")
    for name in REQUIRED_FIELDS:
        if name not in rec:
            raise SchemaError(line_no, name)
    kp = rec["keypoints"]
    if not isinstance(kp, list) or len(kp) != NUM_RAW_KEYPOINTS:
        raise SchemaError(line_no, "keypoints", "keypoints must hold exactly 18 [x, y, confidence] triples")
    if not all(isinstance(k, list) and len(k) == 3 for k in kp):
        raise SchemaError(line_no, "keypoints", "each keypoint must be an [x, y, confidence] triple")
    if not isinstance(rec["frame"], int) or rec["frame"] < 0:
        raise SchemaError(line_no, "frame", "frame must be a non-negative integer")
    return rec


def iter_records(path: str | Path) -> Iterable[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for line_no, text in enumerate(fh, start=1):
            if text.strip():
                yield line_no, _parse_record(line_no, text)


def read_samples(path: str | Path, apply_filter: bool = True) -> ImportResult:
    """Read a record file into samples, dropping (and counting) the ones that
    fail the confidence filter, have unusable geometry or cannot be labeled.

    With ``apply_filter=False`` only malformed geometry and labels are
    dropped, which is what sequence files need.
    """
    result = ImportResult(samples=[])
    for line_no, rec in iter_records(path):
        try:
            raw = RawPose(rec["keypoints"])
        except (TypeError, ValueError) as exc:
            raise SchemaError(line_no, "keypoints", str(exc)) from None
        try:
            direction = Direction.parse(rec["direction"])
        except ValueError as exc:
            raise SchemaError(line_no, "direction", str(exc)) from None
        pruned = prune_pose(raw)
        if apply_filter and not passes_confidence_filter(pruned):
            result.drops["confidence"] += 1
            continue
        try:
            normalize_pose(pruned)
        except DegeneratePose:
            result.drops["degenerate"] += 1
            continue
        try:
            label = map_labels(str(rec["behavior"]), direction)
        except UnknownTag:
            result.drops["unknown_tag"] += 1
            continue
        except AmbiguousLabel:
            result.drops["ambiguous"] += 1
            continue
        result.samples.append(
            AnnotatedSample(
                id=str(rec["id"]),
                video_id=str(rec["video"]),
                frame_index=rec["frame"],
                raw=raw,
                behavior_tag=str(rec["behavior"]),
                motion_direction=direction,
                label=label,
                sequence_id=None if rec.get("sequence_id") is None else str(rec["sequence_id"]),
                tte_index=rec.get("tte_index"),
            )
        )
    return result


def import_estimator_output(path: str | Path) -> ImportResult:
    return read_samples(path, apply_filter=True)


def write_samples(samples: Iterable[AnnotatedSample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps(s.to_record()) + "\n")


@dataclass(frozen=True)
class DatasetSplit:
    train: list
    test: list
    ratio: float


def split_dataset(samples: Sequence, ratio: float) -> DatasetSplit:
    """Ordered split: the first ``floor(ratio * N)`` samples train, the rest test."""
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must lie in (0, 1), got {ratio}")
    n = len(samples)
    if n < 2:
        raise EmptyDataset(f"need at least 2 samples to split, got {n}")
    # tolerance keeps e.g. (10544 / 12756) * 12756 from flooring to 10543
    n_train = math.floor(ratio * n + 1e-9)
    samples = list(samples)
    return DatasetSplit(train=samples[:n_train], test=samples[n_train:], ratio=ratio)


# --- synthetic data ---------------------------------------------------------

@dataclass(frozen=True)
class SynthConfig:
    seed: int = 7
    noise_std: float = 0.02
    count_per_class: int = 300

    def __post_init__(self):
        if not self.noise_std >= 0:
            raise ValueError("noise_std must be >= 0")
        if self.count_per_class < 1:
            raise ValueError("count_per_class must be >= 1")


# Templates in normalized units (neck at origin, y down, vertical extent 1),
# rows in pruned order: neck, shoulders R/L, hips R/L, knees R/L, ankles R/L.
# C is seen side-on mid-stride, so shoulders overlap and the ankles spread in
# x; LONG is seen front/back-on with legs out of phase vertically; NC stands.
_TEMPLATES = {
    CrossingState.C: np.array([
        [0.00, 0.00],
        [-0.03, 0.02], [0.03, 0.02],
        [-0.08, 0.45], [-0.04, 0.45],
        [0.12, 0.72], [-0.20, 0.72],
        [0.30, 1.00], [-0.34, 0.97],
    ]),
    CrossingState.NC: np.array([
        [0.00, 0.00],
        [-0.12, 0.02], [0.12, 0.02],
        [-0.08, 0.45], [0.08, 0.45],
        [-0.08, 0.72], [0.08, 0.72],
        [-0.08, 1.00], [0.08, 1.00],
    ]),
    CrossingState.LONG: np.array([
        [0.00, 0.00],
        [-0.12, 0.02], [0.12, 0.02],
        [-0.08, 0.45], [0.08, 0.45],
        [-0.07, 0.55], [0.07, 0.80],
        [-0.06, 0.72], [0.06, 1.00],
    ]),
}

# face and arm joints (COCO indices 0, 3, 4, 6, 7, 14..17) relative to the neck
_EXTRA_JOINTS = {
    0: (0.00, -0.12),
    3: (-0.14, 0.22), 4: (-0.14, 0.40),
    6: (0.14, 0.22), 7: (0.14, 0.40),
    14: (-0.02, -0.14), 15: (0.02, -0.14),
    16: (-0.05, -0.12), 17: (0.05, -0.12),
}

_PRUNED_TO_COCO = (1, 2, 5, 8, 11, 9, 12, 10, 13)


def generate_synthetic_pose(
    state: CrossingState,
    rng: np.random.Generator,
    cfg: SynthConfig,
    index: int = 0,
) -> AnnotatedSample:
    """Draw one stick-figure pose of the given class.

    Noise is added in normalized units; the figure is then placed at a random
    pixel height and image position, which normalization removes again.
    """
    body = _TEMPLATES[state] + rng.normal(0.0, 1.0, size=(9, 2)) * cfg.noise_std
    extras = np.array(list(_EXTRA_JOINTS.values())) + rng.normal(0.0, 1.0, size=(len(_EXTRA_JOINTS), 2)) * cfg.noise_std
    height = rng.uniform(80.0, 300.0)
    origin = np.array([rng.uniform(100.0, 1800.0), rng.uniform(100.0, 700.0)])

    kp = np.ones((18, 3))
    kp[list(_PRUNED_TO_COCO), :2] = origin + height * body
    kp[list(_EXTRA_JOINTS), :2] = origin + height * extras

    if state is CrossingState.NC:
        tag, direction = "standing", Direction.NONE
    elif state is CrossingState.C:
        tag, direction = "walking", Direction.LAT
    else:
        tag, direction = "walking", Direction.LONG
    return AnnotatedSample(
        id=f"synth-{cfg.seed}-{index:06d}",
        video_id=f"synth-{cfg.seed}",
        frame_index=index,
        raw=RawPose(kp),
        behavior_tag=tag,
        motion_direction=direction,
        label=map_labels(tag, direction),
    )


def _rng_for(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


def synthetic_pose_at(state: CrossingState, cfg: SynthConfig, index: int) -> AnnotatedSample:
    """Deterministic in (cfg.seed, index)."""
    return generate_synthetic_pose(state, _rng_for(cfg.seed, index), cfg, index)


def generate_synthetic_dataset(cfg: SynthConfig, offset: int = 0) -> list[AnnotatedSample]:
    """Balanced dataset, classes interleaved C, NC, LONG, C, ... so that an
    ordered split stays balanced. ``offset`` shifts the call indices, which
    gives a disjoint draw from the same seed."""
    out = []
    states = list(CrossingState)
    for i in range(cfg.count_per_class * len(states)):
        idx = offset + i
        out.append(synthetic_pose_at(states[i % len(states)], cfg, idx))
    return out


def generate_synthetic_sequences(
    cfg: SynthConfig,
    n_sequences: int,
    n_before: int = 5,
    n_after: int = 15,
) -> list[AnnotatedSample]:
    """Time-to-event sequences: each switches between two distinct states at
    frame ``n_before``. Records carry ``sequence_id`` and ``tte_index``."""
    out = []
    states = list(CrossingState)
    pairs = [(a, b) for a in states for b in states if a != b]
    # call indices far above any dataset draw
    base = 10_000_000
    for s in range(n_sequences):
        before, after = pairs[s % len(pairs)]
        seq_id = f"seq-{cfg.seed}-{s:04d}"
        for f in range(n_before + n_after):
            idx = base + s * (n_before + n_after) + f
            state = before if f < n_before else after
            smp = synthetic_pose_at(state, cfg, idx)
            out.append(
                AnnotatedSample(
                    id=f"{seq_id}-{f:02d}",
                    video_id=seq_id,
                    frame_index=f,
                    raw=smp.raw,
                    behavior_tag=smp.behavior_tag,
                    motion_direction=smp.motion_direction,
                    label=smp.label,
                    sequence_id=seq_id,
                    tte_index=n_before,
                )
            )
    return out
