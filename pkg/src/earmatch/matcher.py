"""Anthropometric best match: nearest ear in cm-space by Euclidean distance."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from earmatch.errors import (
    DatabaseFormatError,
    EmptyDatabaseError,
    HrtfNotFoundError,
    NoHrtfAttachedError,
)
from earmatch.landmarks import DISTANCE_NAMES, AnthroVector

SIDES = ("left", "right")

DATABASE_HEADER = ["subject_id", "side", *DISTANCE_NAMES]
DATABASE_HEADER_WITH_HRTF = DATABASE_HEADER + ["hrtf_ref"]


@dataclass(frozen=True)
class EarRecord:
    subject_id: str
    side: str
    anthro: AnthroVector
    hrtf_ref: str | None = None

    def __post_init__(self):
        if self.side not in SIDES:
            raise ValueError(f"side must be one of {SIDES}, got {self.side!r}")
        if not self.subject_id:
            raise ValueError("subject_id must be non-empty")


class AnthroDatabase:
    """Ordered, immutable collection of ear records; row order is load order."""

    def __init__(self, records: Sequence[EarRecord]):
        records = tuple(records)
        seen: set[tuple[str, str]] = set()
        for record in records:
            key = (record.subject_id, record.side)
            if key in seen:
                raise DatabaseFormatError(f"duplicate record for {key}")
            seen.add(key)
        self.records = records

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


@dataclass(frozen=True)
class MatchResult:
    best: EarRecord
    distance: float
    ranking: tuple[tuple[EarRecord, float], ...]


def _vector_values(v) -> tuple[float, ...]:
    values = tuple(float(x) for x in (v.d if isinstance(v, AnthroVector) else v))
    if len(values) != 7:
        raise ValueError(f"expected 7 components, got {len(values)}")
    if any(not math.isfinite(x) for x in values):
        raise ValueError(f"non-finite component in {values}")
    return values


def vector_distance(a, b, weights: Sequence[float] | None = None) -> float:
    """sqrt(sum of squared componentwise differences), optionally weighted."""
    va, vb = _vector_values(a), _vector_values(b)
    if weights is None:
        return math.hypot(*(x - y for x, y in zip(va, vb)))
    w = _check_weights(weights)
    return math.sqrt(math.fsum(wj * (x - y) ** 2 for wj, x, y in zip(w, va, vb)))


def _check_weights(weights: Sequence[float]) -> tuple[float, ...]:
    w = tuple(float(x) for x in weights)
    if len(w) != 7:
        raise ValueError(f"expected 7 weights, got {len(w)}")
    if any(not math.isfinite(x) or x <= 0.0 for x in w):
        raise ValueError(f"weights must be positive and finite, got {w}")
    return w


def best_match(
    query: AnthroVector,
    db: AnthroDatabase,
    side: str | None = None,
    weights: Sequence[float] | None = None,
) -> MatchResult:
    """Exhaustive scan; ties broken by the lowest database row index."""
    if side is not None and side not in SIDES:
        raise ValueError(f"side filter must be one of {SIDES}, got {side!r}")
    candidates = [
        (index, record)
        for index, record in enumerate(db)
        if side is None or record.side == side
    ]
    if not candidates:
        detail = f" with side {side!r}" if side is not None else ""
        raise EmptyDatabaseError(f"no database records{detail} to match against")
    scored = [
        (vector_distance(query, record.anthro, weights), index, record)
        for index, record in candidates
    ]
    scored.sort(key=lambda item: (item[0], item[1]))
    ranking = tuple((record, distance) for distance, _, record in scored)
    return MatchResult(best=ranking[0][0], distance=ranking[0][1], ranking=ranking)


def resolve_hrtf(result: MatchResult, base_dir: str | Path | None = None) -> str:
    """Return the matched record's HRTF reference, checking local existence."""
    ref = result.best.hrtf_ref
    if not ref:
        raise NoHrtfAttachedError(
            f"record {result.best.subject_id}/{result.best.side} has no HRTF reference"
        )
    if "://" not in ref:  # local path; URIs are passed through unverified
        candidate = Path(base_dir) / ref if base_dir is not None else Path(ref)
        if not candidate.exists():
            raise HrtfNotFoundError(f"HRTF file not found: {candidate}")
    return ref


def match_report(result: MatchResult, top_k: int = 5) -> dict:
    """JSON-ready summary: best record plus the top-k ranking."""
    return {
        "subject_id": result.best.subject_id,
        "side": result.best.side,
        "distance": result.distance,
        "hrtf_ref": result.best.hrtf_ref,
        "ranking": [
            {"subject_id": r.subject_id, "side": r.side, "distance": d}
            for r, d in result.ranking[:top_k]
        ],
    }


def format_match(result: MatchResult) -> str:
    """One-line machine-parseable summary of a match."""
    hrtf = result.best.hrtf_ref or "-"
    return (
        f"subject={result.best.subject_id} side={result.best.side}"
        f" distance={result.distance:.6f} hrtf={hrtf}"
    )


def load_database(path: str | Path) -> AnthroDatabase:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise DatabaseFormatError(f"{path}: empty database file") from None
        if header == DATABASE_HEADER_WITH_HRTF:
            has_hrtf = True
        elif header == DATABASE_HEADER:
            has_hrtf = False
        else:
            raise DatabaseFormatError(f"{path}: unexpected header {header}")
        records = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            expected = 10 if has_hrtf else 9
            if len(row) != expected:
                raise DatabaseFormatError(
                    f"{path}:{line_no}: expected {expected} fields, got {len(row)}"
                )
            try:
                anthro = AnthroVector(tuple(float(v) for v in row[2:9]))
                record = EarRecord(
                    subject_id=row[0],
                    side=row[1],
                    anthro=anthro,
                    hrtf_ref=(row[9] or None) if has_hrtf else None,
                )
            except ValueError as exc:
                raise DatabaseFormatError(f"{path}:{line_no}: {exc}") from exc
            records.append(record)
    try:
        return AnthroDatabase(records)
    except DatabaseFormatError as exc:
        raise DatabaseFormatError(f"{path}: {exc}") from exc


def write_database(db: AnthroDatabase, path: str | Path) -> None:
    """Companion writer for tooling; always emits the hrtf_ref column."""
    import io

    from earmatch.fileio import atomic_write_text

    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(DATABASE_HEADER_WITH_HRTF)
    for record in db:
        writer.writerow(
            [record.subject_id, record.side, *(repr(v) for v in record.anthro.d),
             record.hrtf_ref or ""]
        )
    atomic_write_text(path, buffer.getvalue())
