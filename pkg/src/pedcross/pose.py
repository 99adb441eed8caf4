"""Pose types and the preprocessing pipeline from raw estimator output to the
18-number classifier input.

Coordinates are image-space pixels with y growing downward, as produced by
COCO-style pose estimators.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

NUM_RAW_KEYPOINTS = 18
NUM_KEYPOINTS = 9
FEATURE_DIM = 2 * NUM_KEYPOINTS

# COCO-18 indices of the retained joints, in feature order.
PRUNE_INDICES = (1, 2, 5, 8, 11, 9, 12, 10, 13)
KEYPOINT_NAMES = (
    "neck",
    "r_shoulder",
    "l_shoulder",
    "r_hip",
    "l_hip",
    "r_knee",
    "l_knee",
    "r_ankle",
    "l_ankle",
)
FEATURE_ORDER = ",".join(KEYPOINT_NAMES)

MIN_MEAN_CONFIDENCE = 0.6
MIN_KEYPOINT_CONFIDENCE = 0.5


class DegeneratePose(ValueError):
    """The pose cannot be normalized (zero vertical extent or non-finite values)."""


class CrossingState(IntEnum):
    C = 0
    NC = 1
    LONG = 2

    @classmethod
    def parse(cls, token: str | int | CrossingState) -> CrossingState:
        if isinstance(token, cls):
            return token
        if isinstance(token, int):
            return cls(token)
        try:
            return cls[token]
        except KeyError:
            raise ValueError(f"unknown crossing state {token!r}") from None


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class RawPose:
    """18 COCO keypoints as an (18, 3) array of (x, y, confidence)."""

    keypoints: np.ndarray

    def __post_init__(self):
        kp = np.array(self.keypoints, dtype=np.float64)
        if kp.shape != (NUM_RAW_KEYPOINTS, 3):
            raise ValueError(f"RawPose needs shape (18, 3), got {kp.shape}")
        if not np.all(np.isfinite(kp)):
            raise ValueError("RawPose contains non-finite values")
        conf = kp[:, 2]
        if np.any(conf < 0.0) or np.any(conf > 1.0):
            raise ValueError("keypoint confidence outside [0, 1]")
        object.__setattr__(self, "keypoints", _readonly(kp))


@dataclass(frozen=True, eq=False)
class PrunedPose:
    """The 9 retained keypoints, shape (9, 3), in ``KEYPOINT_NAMES`` order."""

    keypoints: np.ndarray

    def __post_init__(self):
        kp = np.array(self.keypoints, dtype=np.float64)
        if kp.shape != (NUM_KEYPOINTS, 3):
            raise ValueError(f"PrunedPose needs shape (9, 3), got {kp.shape}")
        object.__setattr__(self, "keypoints", _readonly(kp))

    @property
    def confidences(self) -> np.ndarray:
        return self.keypoints[:, 2]


@dataclass(frozen=True, eq=False)
class NormalizedPose:
    """Neck-centred, height-normalized coordinates, shape (9, 2)."""

    coords: np.ndarray

    def __post_init__(self):
        c = np.array(self.coords, dtype=np.float64)
        if c.shape != (NUM_KEYPOINTS, 2):
            raise ValueError(f"NormalizedPose needs shape (9, 2), got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ValueError("NormalizedPose contains non-finite values")
        object.__setattr__(self, "coords", _readonly(c))


@dataclass(frozen=True, eq=False)
class FeatureVector:
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.shape != (FEATURE_DIM,):
            raise ValueError(f"FeatureVector needs length 18, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("FeatureVector contains non-finite values")
        object.__setattr__(self, "values", _readonly(v))

    def __eq__(self, other):
        if not isinstance(other, FeatureVector):
            return NotImplemented
        return bool(np.array_equal(self.values, other.values))

    def __hash__(self):
        return hash(self.values.tobytes())


def prune_pose(raw: RawPose) -> PrunedPose:
    return PrunedPose(raw.keypoints[list(PRUNE_INDICES)])


def passes_confidence_filter(pruned: PrunedPose) -> bool:
    """True when the 9-point mean confidence is at least 0.6 and no single
    keypoint falls below 0.5."""
    conf = pruned.confidences
    return bool(conf.mean() >= MIN_MEAN_CONFIDENCE and conf.min() >= MIN_KEYPOINT_CONFIDENCE)


def normalize_pose(pruned: PrunedPose) -> NormalizedPose:
    """Translate the neck to the origin and divide x and y by the pose's
    vertical extent ``max(y) - min(y)``."""
    xy = pruned.keypoints[:, :2]
    if not np.all(np.isfinite(xy)):
        raise DegeneratePose("pose has non-finite coordinates")
    n = xy[:, 1].max() - xy[:, 1].min()
    if not n > 0:
        raise DegeneratePose("pose has zero vertical extent")
    return NormalizedPose((xy - xy[0]) / n)


def to_feature_vector(norm: NormalizedPose) -> FeatureVector:
    return FeatureVector(norm.coords.reshape(-1))


def from_feature_vector(fv: FeatureVector) -> NormalizedPose:
    return NormalizedPose(fv.values.reshape(NUM_KEYPOINTS, 2))


def preprocess(raw: RawPose) -> FeatureVector:
    """Full pipeline without the confidence filter."""
    return to_feature_vector(normalize_pose(prune_pose(raw)))
