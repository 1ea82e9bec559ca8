"""Pixel-to-centimetre conversion factors and the reference-distance variant.

A conversion factor carries centimetres per normalized pixel unit, where the
normalized unit is a pixel distance on the 224x224 frame divided by 316.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from earmatch.errors import (
    CalibrationDegenerateError,
    CalibrationFormatError,
    SizeMismatchError,
)
from earmatch.fileio import atomic_write_text
from earmatch.landmarks import (
    DISTANCE_NAMES,
    NORMALIZATION_CONSTANT,
    STANDARD_IMAGE_SIZE,
    AnthroVector,
    PixelDistanceVector,
)

SOURCE_COMPUTED = "computed"
SOURCE_REFERENCE_PRESET = "reference-preset (unvalidated)"
SOURCE_REFERENCE_DISTANCE = "reference-distance"
SOURCE_FILE = "file"

# Published per-distance factors and their stated overall average.  The stated
# average does not equal the mean of the seven factors; both are kept verbatim,
# which is why the preset is marked unvalidated.
_REFERENCE_FACTORS = (
    10.129765,
    13.442287,
    11.625544,
    9.539581,
    8.621989,
    11.824525,
    10.532984,
)
_REFERENCE_OVERALL_AVERAGE = 10.313797
_REFERENCE_N_EARS = 116


@dataclass(frozen=True)
class ConversionFactors:
    """Seven cm-per-unit factors (d1..d7) plus their recorded overall average."""

    factors: tuple[float, ...]
    overall_average: float
    n_ears: int = 0
    source: str = SOURCE_COMPUTED

    def __post_init__(self):
        factors = tuple(float(v) for v in self.factors)
        object.__setattr__(self, "factors", factors)
        object.__setattr__(self, "overall_average", float(self.overall_average))
        if len(factors) != 7:
            raise ValueError(f"expected 7 factors, got {len(factors)}")
        for name, value in zip(DISTANCE_NAMES, factors):
            if not math.isfinite(value) or value <= 0.0:
                raise CalibrationDegenerateError(
                    f"factor for {name} must be positive and finite, got {value}"
                )
        if not math.isfinite(self.overall_average) or self.overall_average <= 0.0:
            raise CalibrationDegenerateError(
                f"overall average must be positive and finite, got {self.overall_average}"
            )

    @property
    def is_consistent(self) -> bool:
        """Whether the recorded overall average matches the factor mean."""
        return abs(self.overall_average - math.fsum(self.factors) / 7.0) <= 1e-6

    @classmethod
    def from_factors(cls, factors: Sequence[float], n_ears: int = 0,
                     source: str = SOURCE_COMPUTED) -> "ConversionFactors":
        factors = tuple(float(v) for v in factors)
        return cls(factors, math.fsum(factors) / 7.0, n_ears=n_ears, source=source)

    @classmethod
    def uniform(cls, scale: float, source: str = SOURCE_REFERENCE_DISTANCE) -> "ConversionFactors":
        """One scalar applied to all seven distances."""
        return cls.from_factors((scale,) * 7, n_ears=1, source=source)


@dataclass(frozen=True)
class CalibrationRecord:
    """One ear: ground-truth centimetres next to measured pixel distances."""

    ear_id: str
    cm: AnthroVector
    px: PixelDistanceVector


def _as_point(point) -> tuple[float, float]:
    if hasattr(point, "x") and hasattr(point, "y"):
        return float(point.x), float(point.y)
    x, y = point
    return float(x), float(y)


@dataclass(frozen=True)
class ReferenceDistance:
    """A segment of known physical length drawn or placed on the image."""

    point_a: tuple[float, float]
    point_b: tuple[float, float]
    physical_length_cm: float

    def __post_init__(self):
        object.__setattr__(self, "point_a", _as_point(self.point_a))
        object.__setattr__(self, "point_b", _as_point(self.point_b))
        object.__setattr__(self, "physical_length_cm", float(self.physical_length_cm))
        for value in (*self.point_a, *self.point_b):
            if not math.isfinite(value):
                raise ValueError(f"non-finite reference coordinate {value}")
        if not math.isfinite(self.physical_length_cm) or self.physical_length_cm <= 0.0:
            raise ValueError(
                f"physical length must be positive, got {self.physical_length_cm}"
            )

    @property
    def pixel_length(self) -> float:
        (ax, ay), (bx, by) = self.point_a, self.point_b
        return math.hypot(bx - ax, by - ay)


def per_ear_factors(record: CalibrationRecord) -> tuple[float, ...]:
    """f_j = cm_j / px_j for one calibration record."""
    factors = []
    for name, cm, px in zip(DISTANCE_NAMES, record.cm.d, record.px.d):
        if px <= 0.0:
            raise CalibrationDegenerateError(
                f"ear {record.ear_id!r}: pixel distance {name} is {px}, cannot divide"
            )
        factors.append(cm / px)
    return tuple(factors)


def average_factors(records: Sequence[CalibrationRecord]) -> ConversionFactors:
    """Arithmetic mean of per-ear factors, one mean per distance."""
    records = list(records)
    if not records:
        raise CalibrationDegenerateError("no calibration records to average")
    per_ear = [per_ear_factors(r) for r in records]
    means = tuple(
        math.fsum(f[j] for f in per_ear) / len(per_ear) for j in range(7)
    )
    return ConversionFactors.from_factors(means, n_ears=len(records))


def load_reference_factors() -> ConversionFactors:
    """The published per-distance factors, returned verbatim as a preset."""
    return ConversionFactors(
        _REFERENCE_FACTORS,
        _REFERENCE_OVERALL_AVERAGE,
        n_ears=_REFERENCE_N_EARS,
        source=SOURCE_REFERENCE_PRESET,
    )


def to_centimetres(px: PixelDistanceVector, factors: ConversionFactors) -> AnthroVector:
    """cm_j = px_j * F_j."""
    return AnthroVector(tuple(p * f for p, f in zip(px.d, factors.factors)))


def scale_from_reference(
    ref: ReferenceDistance,
    image_size: tuple[int, int] = STANDARD_IMAGE_SIZE,
) -> float:
    """cm per normalized unit from a segment of known physical length.

    Defined on the standard 224x224 frame, where pixel distances normalize
    by 316 like every other measured distance.
    """
    if tuple(image_size) != STANDARD_IMAGE_SIZE:
        raise SizeMismatchError(
            f"reference scaling requires a 224x224 frame, got {tuple(image_size)}"
        )
    pixel_length = ref.pixel_length
    if pixel_length <= 0.0:
        raise CalibrationDegenerateError("reference points coincide")
    return ref.physical_length_cm / (pixel_length / NORMALIZATION_CONSTANT)


# --- CSV persistence ---------------------------------------------------------

CALIBRATION_HEADER = (
    ["ear_id"]
    + [f"{name}_cm" for name in DISTANCE_NAMES]
    + [f"{name}_px" for name in DISTANCE_NAMES]
)
FACTORS_HEADER = ["distance", "factor_cm_per_unit"]
OVERALL_AVERAGE_ROW = "overall_average"


def write_calibration_csv(records: Sequence[CalibrationRecord], path: str | Path) -> None:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CALIBRATION_HEADER)
    for record in records:
        writer.writerow([record.ear_id, *(repr(v) for v in record.cm.d),
                         *(repr(v) for v in record.px.d)])
    atomic_write_text(path, buffer.getvalue())


def read_calibration_csv(path: str | Path) -> list[CalibrationRecord]:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise CalibrationFormatError(f"{path}: empty calibration file") from None
        if header != CALIBRATION_HEADER:
            raise CalibrationFormatError(f"{path}: unexpected header {header}")
        records = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 15:
                raise CalibrationFormatError(
                    f"{path}:{line_no}: expected 15 fields, got {len(row)}"
                )
            try:
                cm = AnthroVector(tuple(float(v) for v in row[1:8]))
                px = PixelDistanceVector(tuple(float(v) for v in row[8:15]))
            except ValueError as exc:
                raise CalibrationFormatError(f"{path}:{line_no}: {exc}") from exc
            records.append(CalibrationRecord(row[0], cm, px))
    return records


CM_TABLE_HEADER = ["ear_id"] + [f"{name}_cm" for name in DISTANCE_NAMES]


def write_cm_table(table: dict, path: str | Path) -> None:
    """Ground-truth centimetre measurements keyed by ear id."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CM_TABLE_HEADER)
    for ear_id in sorted(table):
        writer.writerow([ear_id, *(repr(v) for v in table[ear_id].d)])
    atomic_write_text(path, buffer.getvalue())


def read_cm_table(path: str | Path) -> dict:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise CalibrationFormatError(f"{path}: empty cm table") from None
        if header != CM_TABLE_HEADER:
            raise CalibrationFormatError(f"{path}: unexpected header {header}")
        table: dict[str, AnthroVector] = {}
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 8:
                raise CalibrationFormatError(
                    f"{path}:{line_no}: expected 8 fields, got {len(row)}"
                )
            if row[0] in table:
                raise CalibrationFormatError(
                    f"{path}:{line_no}: duplicate ear_id {row[0]!r}"
                )
            try:
                table[row[0]] = AnthroVector(tuple(float(v) for v in row[1:8]))
            except ValueError as exc:
                raise CalibrationFormatError(f"{path}:{line_no}: {exc}") from exc
    return table


def write_factors_csv(factors: ConversionFactors, path: str | Path) -> None:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(FACTORS_HEADER)
    for name, value in zip(DISTANCE_NAMES, factors.factors):
        writer.writerow([name, repr(value)])
    writer.writerow([OVERALL_AVERAGE_ROW, repr(factors.overall_average)])
    atomic_write_text(path, buffer.getvalue())


def read_factors_csv(path: str | Path) -> ConversionFactors:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise CalibrationFormatError(f"{path}: empty factors file") from None
        if header != FACTORS_HEADER:
            raise CalibrationFormatError(f"{path}: unexpected header {header}")
        values: dict[str, float] = {}
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise CalibrationFormatError(
                    f"{path}:{line_no}: expected 2 fields, got {len(row)}"
                )
            try:
                values[row[0]] = float(row[1])
            except ValueError as exc:
                raise CalibrationFormatError(f"{path}:{line_no}: {exc}") from exc
    missing = [n for n in (*DISTANCE_NAMES, OVERALL_AVERAGE_ROW) if n not in values]
    if missing:
        raise CalibrationFormatError(f"{path}: missing rows {missing}")
    return ConversionFactors(
        tuple(values[name] for name in DISTANCE_NAMES),
        values[OVERALL_AVERAGE_ROW],
        n_ears=0,
        source=f"{SOURCE_FILE}:{path.name}",
    )
