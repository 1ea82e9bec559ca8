"""Annotation documents: how hand-placed landmark clicks are persisted.

Three artifacts per annotated image, all under one directory:

* one ``<image_id>_<label>.json`` per landmark with fields
  ``{image_id, label, x, y}`` (reference points use labels REF_A / REF_B),
* an aggregated ``<image_id>.txt`` holding the integer-labelled landmarks
  in the ``label x y`` line format shared with lm55 files,
* an optional ``<image_id>_reference.json`` sidecar carrying the two
  reference points and the physical length between them in centimetres.

Coordinates are written with ``repr`` / JSON shortest-float encoding, so a
write/read cycle reproduces them bit-exactly.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from pathlib import Path

from earmatch.calibration import ReferenceDistance
from earmatch.errors import AnnotationFormatError, InvalidLandmarkError
from earmatch.fileio import atomic_write_text
from earmatch.landmarks import (
    DISTANCE_NAMES,
    DISTANCE_PAIRS,
    RELEVANT_LABELS,
    Landmark,
    LandmarkSet,
    read_lm55,
    write_lm55,
)

REF_LABELS = ("REF_A", "REF_B")

_IMAGE_ID_RE = re.compile(r"[A-Za-z0-9][A-Za-z0-9._-]*")


def label_guide() -> list[dict]:
    """Which distances each required label anchors, for display in a UI."""
    guide = []
    for label in RELEVANT_LABELS:
        anchors = [
            f"{d} {DISTANCE_NAMES[d]}" for d, a, b in DISTANCE_PAIRS if label in (a, b)
        ]
        guide.append({"label": label, "anchors": anchors})
    return guide


def _require_number(value, context: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise AnnotationFormatError(f"{context}: expected a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        raise AnnotationFormatError(f"{context}: must be finite, got {value!r}")
    return value


@dataclass(frozen=True)
class AnnotationDocument:
    """One image's validated annotations, ready to persist or measure."""

    image_id: str
    landmarks: LandmarkSet
    ref_a: tuple[float, float] | None = None
    ref_b: tuple[float, float] | None = None
    reference_length_cm: float | None = None

    def __post_init__(self):
        if not isinstance(self.image_id, str) or not _IMAGE_ID_RE.fullmatch(self.image_id):
            raise AnnotationFormatError(
                f"image_id must be a plain token (letters, digits, . _ -),"
                f" got {self.image_id!r}"
            )
        if not len(self.landmarks):
            raise AnnotationFormatError("an annotation needs at least one landmark")
        for name in ("ref_a", "ref_b"):
            value = getattr(self, name)
            if value is not None:
                x = _require_number(value[0], f"{name}.x")
                y = _require_number(value[1], f"{name}.y")
                object.__setattr__(self, name, (x, y))
        if (self.ref_a is None) != (self.ref_b is None):
            raise AnnotationFormatError("REF_A and REF_B must be placed together")
        if self.reference_length_cm is not None:
            if self.ref_a is None:
                raise AnnotationFormatError(
                    "reference_length_cm given without reference points"
                )
            length = _require_number(self.reference_length_cm, "reference_length_cm")
            if length <= 0.0:
                raise AnnotationFormatError(
                    f"reference_length_cm must be positive, got {length}"
                )
            object.__setattr__(self, "reference_length_cm", length)

    @property
    def has_reference(self) -> bool:
        return self.ref_a is not None and self.reference_length_cm is not None

    def reference(self) -> ReferenceDistance:
        if not self.has_reference:
            raise AnnotationFormatError(
                f"{self.image_id}: needs REF_A, REF_B and reference_length_cm"
            )
        return ReferenceDistance(self.ref_a, self.ref_b, self.reference_length_cm)

    @classmethod
    def from_payload(cls, payload) -> "AnnotationDocument":
        """Validate a UI submission {image_id, points: [...], reference_length_cm?}."""
        if not isinstance(payload, dict):
            raise AnnotationFormatError("submission must be a JSON object")
        image_id = payload.get("image_id")
        if not isinstance(image_id, str):
            raise AnnotationFormatError(f"image_id must be a string, got {image_id!r}")
        points = payload.get("points")
        if not isinstance(points, list) or not points:
            raise AnnotationFormatError("points must be a non-empty list")
        landmarks: list[Landmark] = []
        refs: dict[str, tuple[float, float]] = {}
        seen: set = set()
        for i, point in enumerate(points):
            if not isinstance(point, dict):
                raise AnnotationFormatError(f"points[{i}]: expected an object")
            try:
                label = point["label"]
                x = _require_number(point["x"], f"points[{i}].x")
                y = _require_number(point["y"], f"points[{i}].y")
            except KeyError as exc:
                raise AnnotationFormatError(
                    f"points[{i}]: missing field {exc.args[0]!r}"
                ) from None
            if label in seen:
                raise AnnotationFormatError(f"points[{i}]: duplicate label {label!r}")
            seen.add(label)
            if label in REF_LABELS:
                refs[label] = (x, y)
            elif isinstance(label, int) and not isinstance(label, bool):
                try:
                    landmarks.append(Landmark(label, x, y))
                except InvalidLandmarkError as exc:
                    raise AnnotationFormatError(f"points[{i}]: {exc}") from exc
            else:
                raise AnnotationFormatError(
                    f"points[{i}]: label must be an integer 0..54 or one of"
                    f" {REF_LABELS}, got {label!r}"
                )
        if not landmarks:
            raise AnnotationFormatError("no integer-labelled landmarks in submission")
        length = payload.get("reference_length_cm")
        return cls(
            image_id=image_id,
            landmarks=LandmarkSet(landmarks),
            ref_a=refs.get("REF_A"),
            ref_b=refs.get("REF_B"),
            reference_length_cm=length,
        )

    def to_payload(self) -> dict:
        points = [{"label": p.label, "x": p.x, "y": p.y} for p in self.landmarks]
        for name, value in zip(REF_LABELS, (self.ref_a, self.ref_b)):
            if value is not None:
                points.append({"label": name, "x": value[0], "y": value[1]})
        payload = {"image_id": self.image_id, "points": points}
        if self.reference_length_cm is not None:
            payload["reference_length_cm"] = self.reference_length_cm
        return payload


# --- persistence ---------------------------------------------------------


def _point_json_path(directory: Path, image_id: str, label) -> Path:
    tag = f"{label:02d}" if isinstance(label, int) else str(label)
    return directory / f"{image_id}_{tag}.json"


def _txt_path(directory: Path, image_id: str) -> Path:
    return directory / f"{image_id}.txt"


def _sidecar_path(directory: Path, image_id: str) -> Path:
    return directory / f"{image_id}_reference.json"


def write_annotation(doc: AnnotationDocument, directory: str | Path) -> list[Path]:
    """Persist every artifact for one image; returns the paths written."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    entries = [(p.label, p.x, p.y) for p in doc.landmarks]
    for name, value in zip(REF_LABELS, (doc.ref_a, doc.ref_b)):
        if value is not None:
            entries.append((name, value[0], value[1]))
    for label, x, y in entries:
        path = _point_json_path(directory, doc.image_id, label)
        record = {"image_id": doc.image_id, "label": label, "x": x, "y": y}
        atomic_write_text(path, json.dumps(record) + "\n")
        written.append(path)
    txt = _txt_path(directory, doc.image_id)
    write_lm55(doc.landmarks, txt)
    written.append(txt)
    if doc.ref_a is not None:
        sidecar = _sidecar_path(directory, doc.image_id)
        record = {
            "image_id": doc.image_id,
            "ref_a": list(doc.ref_a),
            "ref_b": list(doc.ref_b),
            "reference_length_cm": doc.reference_length_cm,
        }
        atomic_write_text(sidecar, json.dumps(record) + "\n")
        written.append(sidecar)
    return written


def _load_sidecar(directory: Path, image_id: str):
    sidecar = _sidecar_path(directory, image_id)
    if not sidecar.exists():
        return None, None, None
    try:
        record = json.loads(sidecar.read_text())
        ref_a = tuple(record["ref_a"])
        ref_b = tuple(record["ref_b"])
        length = record.get("reference_length_cm")
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise AnnotationFormatError(f"{sidecar}: malformed reference sidecar: {exc}") from exc
    return ref_a, ref_b, length


def read_annotation(directory: str | Path, image_id: str) -> AnnotationDocument:
    """Load one image's annotations from the aggregated .txt plus sidecar."""
    directory = Path(directory)
    txt = _txt_path(directory, image_id)
    if not txt.exists():
        raise AnnotationFormatError(f"no aggregated annotation for {image_id!r} in {directory}")
    try:
        landmarks = read_lm55(txt)
    except InvalidLandmarkError as exc:
        raise AnnotationFormatError(str(exc)) from exc
    ref_a, ref_b, length = _load_sidecar(directory, image_id)
    return AnnotationDocument(image_id, landmarks, ref_a, ref_b, length)


def aggregate_json(directory: str | Path, image_id: str) -> AnnotationDocument:
    """Rebuild a document from the individual per-landmark .json files."""
    directory = Path(directory)
    sidecar = _sidecar_path(directory, image_id)
    points = []
    for path in sorted(directory.glob(f"{image_id}_*.json")):
        if path == sidecar:
            continue
        try:
            record = json.loads(path.read_text())
            point = {"label": record["label"], "x": record["x"], "y": record["y"]}
            owner = record["image_id"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise AnnotationFormatError(f"{path}: malformed landmark file: {exc}") from exc
        if owner != image_id:
            raise AnnotationFormatError(
                f"{path}: belongs to image {owner!r}, not {image_id!r}"
            )
        points.append(point)
    if not points:
        raise AnnotationFormatError(f"no landmark .json files for {image_id!r} in {directory}")
    _, _, length = _load_sidecar(directory, image_id)
    payload = {"image_id": image_id, "points": points}
    if length is not None:
        payload["reference_length_cm"] = length
    return AnnotationDocument.from_payload(payload)


def convert_json_to_txt(directory: str | Path, image_id: str) -> Path:
    """Aggregate the per-landmark .json files into the .txt form."""
    doc = aggregate_json(directory, image_id)
    txt = _txt_path(Path(directory), image_id)
    write_lm55(doc.landmarks, txt)
    return txt


def list_annotated(directory: str | Path) -> list[str]:
    """image_ids that already have an aggregated annotation, sorted."""
    return sorted(p.stem for p in Path(directory).glob("*.txt"))
