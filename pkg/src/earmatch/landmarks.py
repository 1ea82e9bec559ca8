"""Pinna landmarks, the relevant-point selection, and pixel distance geometry.

Landmarks live in image pixel coordinates (x to the right, y downward).
A full set has 55 points labelled 0..54; the seven anthropometric
distances are anchored by a fixed subset of those labels.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from pathlib import Path

from .errors import (
    IncompleteLandmarkSetError,
    InvalidLandmarkError,
    SizeMismatchError,
)
from .fileio import atomic_write_text

FULL_SET_SIZE = 55

# Diagonal of the 224x224 frame, rounded. Every pixel distance is divided
# by this constant, so results are unitless and (for in-frame points) in [0, 1].
NORMALIZATION_CONSTANT = 316.0

STANDARD_IMAGE_SIZE = (224, 224)

# The seven distances and the landmark labels that anchor them:
# (distance id, label A, label B).
DISTANCE_PAIRS: tuple[tuple[str, int, int], ...] = (
    ("d1", 20, 39),  # cavum concha height
    ("d2", 20, 48),  # cymba concha height
    ("d3", 37, 43),  # cavum concha width
    ("d4", 25, 48),  # fossa height
    ("d5", 4, 18),   # pinna height
    ("d6", 33, 37),  # pinna width
    ("d7", 38, 40),  # intertragal incisure width
)

DISTANCE_NAMES: dict[str, str] = {
    "d1": "cavum concha height",
    "d2": "cymba concha height",
    "d3": "cavum concha width",
    "d4": "fossa height",
    "d5": "pinna height",
    "d6": "pinna width",
    "d7": "intertragal incisure width",
}

# Union of all labels referenced by DISTANCE_PAIRS. Labels 20, 48 and 37
# are shared between distances, so there are 11 distinct labels.
RELEVANT_LABELS: tuple[int, ...] = tuple(
    sorted({label for _, a, b in DISTANCE_PAIRS for label in (a, b)})
)


class DegenerateDistanceWarning(UserWarning):
    """All measured distances are zero (coincident landmarks)."""


class OutOfFrameWarning(UserWarning):
    """A landmark lies outside the image frame; distances may exceed 1."""


@dataclass(frozen=True)
class Landmark:
    """A labelled point in image pixel coordinates (sub-pixel allowed)."""

    label: int
    x: float
    y: float

    def __post_init__(self):
        object.__setattr__(self, "label", int(self.label))
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        if not (0 <= self.label < FULL_SET_SIZE):
            raise InvalidLandmarkError(f"label {self.label} outside 0..54")
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise InvalidLandmarkError(
                f"landmark {self.label} has non-finite coordinates ({self.x}, {self.y})"
            )

    def in_frame(self, width: int, height: int) -> bool:
        return 0 <= self.x < width and 0 <= self.y < height


class LandmarkSet:
    """An ordered collection of labelled landmarks plus its image frame.

    Holds either a full 55-point set or a subset (e.g. the relevant
    points used for distance measurement). Points are kept sorted by
    label and labels are unique.
    """

    def __init__(self, points, image_size=STANDARD_IMAGE_SIZE):
        pts = sorted(points, key=lambda p: p.label)
        labels = [p.label for p in pts]
        if len(set(labels)) != len(labels):
            dupes = sorted({l for l in labels if labels.count(l) > 1})
            raise InvalidLandmarkError(f"duplicate landmark labels: {dupes}")
        self.points: tuple[Landmark, ...] = tuple(pts)
        self.image_size: tuple[int, int] = (int(image_size[0]), int(image_size[1]))
        self._by_label = {p.label: p for p in self.points}

    def __len__(self) -> int:
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    def __eq__(self, other) -> bool:
        if not isinstance(other, LandmarkSet):
            return NotImplemented
        return self.points == other.points and self.image_size == other.image_size

    def __repr__(self) -> str:
        return f"LandmarkSet({len(self.points)} points, image_size={self.image_size})"

    @property
    def labels(self) -> tuple[int, ...]:
        return tuple(p.label for p in self.points)

    @property
    def is_full(self) -> bool:
        return self.labels == tuple(range(FULL_SET_SIZE))

    def get(self, label: int) -> Landmark:
        try:
            return self._by_label[label]
        except KeyError:
            raise IncompleteLandmarkSetError(
                f"landmark {label} missing from set with labels {self.labels}"
            ) from None

    def has(self, label: int) -> bool:
        return label in self._by_label

    def out_of_frame_labels(self) -> tuple[int, ...]:
        w, h = self.image_size
        return tuple(p.label for p in self.points if not p.in_frame(w, h))

    def require_full(self):
        if not self.is_full:
            missing = sorted(set(range(FULL_SET_SIZE)) - set(self.labels))
            raise IncompleteLandmarkSetError(
                f"expected all 55 landmarks, missing {missing[:8]}"
                f"{'...' if len(missing) > 8 else ''}"
            )

    def to_array(self):
        """(n, 2) float array of (x, y) rows in label order."""
        import numpy as np

        return np.array([[p.x, p.y] for p in self.points], dtype=np.float64)

    @classmethod
    def from_array(cls, coords, image_size=STANDARD_IMAGE_SIZE, labels=None):
        if labels is None:
            labels = range(len(coords))
        pts = [Landmark(int(l), float(x), float(y)) for l, (x, y) in zip(labels, coords)]
        return cls(pts, image_size)


@dataclass(frozen=True)
class PixelDistanceVector:
    """The 7 distances measured in pixels and divided by 316, ordered d1..d7."""

    d: tuple[float, ...]

    normalization_constant = NORMALIZATION_CONSTANT

    def __post_init__(self):
        object.__setattr__(self, "d", tuple(float(v) for v in self.d))
        if len(self.d) != 7:
            raise ValueError(f"expected 7 distances, got {len(self.d)}")
        for (name, _, _), v in zip(DISTANCE_PAIRS, self.d):
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be non-negative and finite, got {v}")

    def as_array(self):
        import numpy as np

        return np.array(self.d, dtype=np.float64)


@dataclass(frozen=True)
class AnthroVector:
    """The 7 pinna distances in centimetres, ordered d1..d7."""

    d: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "d", tuple(float(v) for v in self.d))
        if len(self.d) != 7:
            raise ValueError(f"expected 7 distances, got {len(self.d)}")
        for (name, _, _), v in zip(DISTANCE_PAIRS, self.d):
            if not math.isfinite(v) or v <= 0:
                raise ValueError(f"{name} must be positive and finite, got {v}")

    def as_array(self):
        import numpy as np

        return np.array(self.d, dtype=np.float64)


def euclidean_distance(a: Landmark, b: Landmark) -> float:
    """Pixel distance between two landmarks: sqrt((xB-xA)^2 + (yB-yA)^2)."""
    # Landmark construction already rejects non-finite coordinates; guard
    # anyway so ad-hoc namedtuple-like inputs fail loudly too.
    for p in (a, b):
        if not (math.isfinite(p.x) and math.isfinite(p.y)):
            raise InvalidLandmarkError(f"non-finite landmark coordinates ({p.x}, {p.y})")
    return math.hypot(b.x - a.x, b.y - a.y)


def select_relevant(landmarks: LandmarkSet) -> LandmarkSet:
    """Project a landmark set onto the labels that anchor the 7 distances.

    Idempotent: applying it to an already-selected subset returns an
    equal subset. Coordinates are preserved untouched.
    """
    missing = [l for l in RELEVANT_LABELS if not landmarks.has(l)]
    if missing:
        raise IncompleteLandmarkSetError(f"relevant landmarks missing: {missing}")
    return LandmarkSet(
        [landmarks.get(l) for l in RELEVANT_LABELS], landmarks.image_size
    )


def measure_distances(landmarks: LandmarkSet) -> PixelDistanceVector:
    """Compute the 7 normalized pinna distances from a landmark set.

    The set must contain every label referenced by DISTANCE_PAIRS (a full
    55-point set or the relevant subset) and sit in a 224x224 frame. Each
    distance is the Euclidean pixel length divided by 316. Values are not
    clamped: out-of-frame landmarks can push a component slightly above 1,
    which is reported with a warning rather than an error.
    """
    if landmarks.image_size != STANDARD_IMAGE_SIZE:
        raise SizeMismatchError(
            f"distance measurement requires a 224x224 frame, got {landmarks.image_size}"
        )
    out_of_frame = landmarks.out_of_frame_labels()
    relevant_oof = sorted(set(out_of_frame) & set(RELEVANT_LABELS))
    if relevant_oof:
        warnings.warn(
            f"landmarks {relevant_oof} lie outside the 224x224 frame; "
            "normalized distances may exceed 1",
            OutOfFrameWarning,
            stacklevel=2,
        )
    values = []
    for _, label_a, label_b in DISTANCE_PAIRS:
        d = euclidean_distance(landmarks.get(label_a), landmarks.get(label_b))
        values.append(d / NORMALIZATION_CONSTANT)
    if all(v == 0.0 for v in values):
        warnings.warn(
            "all measured distances are zero (coincident landmarks); "
            "check the annotation",
            DegenerateDistanceWarning,
            stacklevel=2,
        )
    return PixelDistanceVector(tuple(values))


# --- landmark text files ("lm55" format: one "label x y" line per point) ---

def write_lm55(landmarks: LandmarkSet, path) -> None:
    lines = [f"{p.label} {p.x!r} {p.y!r}" for p in landmarks.points]
    atomic_write_text(path, "\n".join(lines) + "\n", encoding="ascii")


def read_lm55(path, image_size=STANDARD_IMAGE_SIZE) -> LandmarkSet:
    points = []
    for lineno, line in enumerate(Path(path).read_text(encoding="ascii").splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) != 3:
            raise InvalidLandmarkError(
                f"{path}:{lineno}: expected 'label x y', got {line!r}"
            )
        try:
            points.append(Landmark(int(fields[0]), float(fields[1]), float(fields[2])))
        except ValueError as exc:
            raise InvalidLandmarkError(f"{path}:{lineno}: {exc}") from exc
    return LandmarkSet(points, image_size)
