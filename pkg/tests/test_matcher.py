"""Database loading, Euclidean matching, tie-breaks and HRTF resolution."""

import decimal
import json
import math

import numpy as np
import pytest

from earmatch.errors import (
    DatabaseFormatError,
    EmptyDatabaseError,
    HrtfNotFoundError,
    NoHrtfAttachedError,
)
from earmatch.landmarks import AnthroVector
from earmatch.matcher import (
    AnthroDatabase,
    EarRecord,
    MatchResult,
    best_match,
    format_match,
    load_database,
    match_report,
    resolve_hrtf,
    vector_distance,
    write_database,
)


def vec(values):
    return AnthroVector(tuple(float(v) for v in values))


def random_db(rng, n=116, hrtf=False):
    records = []
    for i in range(n):
        subject = f"pp{i // 2 + 1}"
        side = "left" if i % 2 == 0 else "right"
        ref = f"{subject}_HRIRs_measured.sofa" if hrtf else None
        records.append(EarRecord(subject, side, vec(rng.uniform(0.5, 8.0, 7)), ref))
    return AnthroDatabase(records)


def db_csv_text(rows, hrtf=False):
    header = "subject_id,side,d1,d2,d3,d4,d5,d6,d7"
    if hrtf:
        header += ",hrtf_ref"
    return header + "\n" + "".join(row + "\n" for row in rows)


class TestVectorDistance:
    def test_identical_vectors(self):
        v = vec([1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0])
        assert vector_distance(v, v) == 0.0

    def test_unit_displacement(self):
        a = vec([2.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0])
        b = vec([1.0] * 7)
        assert vector_distance(a, b) == 1.0

    def test_matches_extended_precision_oracle(self):
        rng = np.random.default_rng(70)
        for _ in range(25):
            a, b = rng.uniform(0.5, 8.0, 7), rng.uniform(0.5, 8.0, 7)
            with decimal.localcontext() as ctx:
                ctx.prec = 50
                total = sum(
                    (decimal.Decimal(x) - decimal.Decimal(y)) ** 2
                    for x, y in zip(a.tolist(), b.tolist())
                )
                expected = float(total.sqrt())
            assert vector_distance(vec(a), vec(b)) == pytest.approx(expected, rel=1e-14)

    def test_rejects_wrong_length(self):
        with pytest.raises(ValueError):
            vector_distance([1.0] * 6, [1.0] * 6)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            vector_distance([1.0] * 7, [1.0] * 6 + [float("nan")])

    def test_weighted_distance(self):
        a = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 3.0]
        b = [1.0] * 7
        assert vector_distance(a, b, weights=[1.0] * 6 + [4.0]) == pytest.approx(4.0)

    def test_weight_validation(self):
        with pytest.raises(ValueError):
            vector_distance([1.0] * 7, [1.0] * 7, weights=[1.0] * 6 + [0.0])


class TestBestMatch:
    def test_exact_membership(self):
        rng = np.random.default_rng(71)
        db = random_db(rng, n=30)
        target = db.records[17]
        result = best_match(target.anthro, db)
        assert result.best is target
        assert result.distance == 0.0

    def test_tie_breaks_to_first_row(self):
        shared = vec([2.0] * 7)
        db = AnthroDatabase(
            [EarRecord("a", "left", shared), EarRecord("b", "left", shared)]
        )
        result = best_match(vec([2.5] * 7), db)
        assert result.best.subject_id == "a"

    def test_agrees_with_quadratic_scan_oracle(self):
        rng = np.random.default_rng(72)
        db = random_db(rng, n=116)
        for _ in range(200):
            query = vec(rng.uniform(0.5, 8.0, 7))
            result = best_match(query, db)
            best_index, best_dist = None, math.inf
            for index, record in enumerate(db.records):
                d = math.sqrt(
                    math.fsum((q - v) ** 2 for q, v in zip(query.d, record.anthro.d))
                )
                if d < best_dist:
                    best_index, best_dist = index, d
            assert result.best is db.records[best_index]
            assert result.distance == pytest.approx(best_dist, rel=1e-12)

    def test_ranking_sorted_and_complete(self):
        rng = np.random.default_rng(73)
        db = random_db(rng, n=40)
        result = best_match(vec(rng.uniform(0.5, 8.0, 7)), db)
        distances = [d for _, d in result.ranking]
        assert distances == sorted(distances)
        assert result.distance <= min(distances)
        assert {id(r) for r, _ in result.ranking} == {id(r) for r in db.records}
        assert result.best is result.ranking[0][0]

    def test_translation_covariance(self):
        rng = np.random.default_rng(74)
        db = random_db(rng, n=50)
        query = vec(rng.uniform(1.0, 7.0, 7))
        shift = 1.5
        shifted_db = AnthroDatabase(
            [
                EarRecord(r.subject_id, r.side, vec([x + shift for x in r.anthro.d]))
                for r in db
            ]
        )
        shifted_query = vec([x + shift for x in query.d])
        original = best_match(query, db)
        shifted = best_match(shifted_query, shifted_db)
        assert shifted.best.subject_id == original.best.subject_id
        assert shifted.best.side == original.best.side

    def test_uniform_scaling_invariance(self):
        rng = np.random.default_rng(75)
        db = random_db(rng, n=50)
        query = vec(rng.uniform(1.0, 7.0, 7))
        scale = 2.75
        scaled_db = AnthroDatabase(
            [
                EarRecord(r.subject_id, r.side, vec([x * scale for x in r.anthro.d]))
                for r in db
            ]
        )
        scaled_query = vec([x * scale for x in query.d])
        assert (
            best_match(scaled_query, scaled_db).best.subject_id
            == best_match(query, db).best.subject_id
        )

    def test_determinism(self):
        rng = np.random.default_rng(76)
        db = random_db(rng, n=20)
        query = vec(rng.uniform(0.5, 8.0, 7))
        a, b = best_match(query, db), best_match(query, db)
        assert a.best is b.best
        assert a.distance == b.distance
        assert [r.subject_id for r, _ in a.ranking] == [r.subject_id for r, _ in b.ranking]

    def test_side_filter(self):
        rng = np.random.default_rng(77)
        db = random_db(rng, n=10)
        result = best_match(vec([3.0] * 7), db, side="right")
        assert result.best.side == "right"
        assert all(r.side == "right" for r, _ in result.ranking)

    def test_side_filter_empty(self):
        db = AnthroDatabase([EarRecord("a", "left", vec([1.0] * 7))])
        with pytest.raises(EmptyDatabaseError):
            best_match(vec([1.0] * 7), db, side="right")

    def test_empty_database(self):
        with pytest.raises(EmptyDatabaseError):
            best_match(vec([1.0] * 7), AnthroDatabase([]))

    def test_weights_can_change_winner(self):
        db = AnthroDatabase(
            [
                EarRecord("near_d1", "left", vec([1.1, 2.0, 2.0, 2.0, 2.0, 2.0, 2.0])),
                EarRecord("near_d7", "left", vec([2.0, 2.0, 2.0, 2.0, 2.0, 2.0, 1.1])),
            ]
        )
        query = vec([1.0, 2.0, 2.0, 2.0, 2.0, 2.0, 1.0])
        plain = best_match(query, db)
        weighted = best_match(query, db, weights=[100.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0])
        assert plain.best.subject_id == "near_d1"  # tie broken by row order
        assert weighted.best.subject_id == "near_d1"
        weighted_d7 = best_match(query, db, weights=[1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 100.0])
        assert weighted_d7.best.subject_id == "near_d7"


class TestLoadDatabase:
    def test_58_subjects_116_ears(self, tmp_path):
        rng = np.random.default_rng(78)
        rows = []
        for i in range(58):
            for side in ("left", "right"):
                values = ",".join(f"{v:.4f}" for v in rng.uniform(0.5, 8.0, 7))
                rows.append(f"pp{i + 1},{side},{values}")
        path = tmp_path / "db.csv"
        path.write_text(db_csv_text(rows))
        db = load_database(path)
        assert len(db) == 116

    def test_header_only_loads_empty(self, tmp_path):
        path = tmp_path / "db.csv"
        path.write_text(db_csv_text([]))
        db = load_database(path)
        assert len(db) == 0
        with pytest.raises(EmptyDatabaseError):
            best_match(vec([1.0] * 7), db)

    def test_short_row_names_line(self, tmp_path):
        rows = ["pp1,left,1,1,1,1,1,1,1", "pp1,right,1,1,1,1,1,1"]
        path = tmp_path / "db.csv"
        path.write_text(db_csv_text(rows))
        with pytest.raises(DatabaseFormatError, match=":3"):
            load_database(path)

    def test_duplicate_subject_side(self, tmp_path):
        rows = ["pp1,left,1,1,1,1,1,1,1", "pp1,left,2,2,2,2,2,2,2"]
        path = tmp_path / "db.csv"
        path.write_text(db_csv_text(rows))
        with pytest.raises(DatabaseFormatError, match="duplicate"):
            load_database(path)

    def test_bad_side_value(self, tmp_path):
        path = tmp_path / "db.csv"
        path.write_text(db_csv_text(["pp1,top,1,1,1,1,1,1,1"]))
        with pytest.raises(DatabaseFormatError, match=":2"):
            load_database(path)

    def test_hrtf_column_round_trip(self, tmp_path):
        rows = [
            "pp1,left,1,1,1,1,1,1,1,pp1_HRIRs_measured.sofa",
            "pp1,right,2,2,2,2,2,2,2,",
        ]
        path = tmp_path / "db.csv"
        path.write_text(db_csv_text(rows, hrtf=True))
        db = load_database(path)
        assert db.records[0].hrtf_ref == "pp1_HRIRs_measured.sofa"
        assert db.records[1].hrtf_ref is None

    def test_write_then_load(self, tmp_path):
        rng = np.random.default_rng(79)
        db = random_db(rng, n=8, hrtf=True)
        path = tmp_path / "db.csv"
        write_database(db, path)
        loaded = load_database(path)
        assert len(loaded) == 8
        for got, want in zip(loaded, db):
            assert got.subject_id == want.subject_id
            assert got.anthro.d == want.anthro.d
            assert got.hrtf_ref == want.hrtf_ref


class TestResolveHrtf:
    def make_result(self, ref):
        record = EarRecord("pp2", "left", vec([1.0] * 7), ref)
        return MatchResult(record, 0.0, ((record, 0.0),))

    def test_existing_file_returned_verbatim(self, tmp_path):
        ref = "pp2_HRIRs_measured.sofa"
        (tmp_path / ref).write_bytes(b"opaque")
        assert resolve_hrtf(self.make_result(ref), base_dir=tmp_path) == ref

    def test_missing_reference(self):
        with pytest.raises(NoHrtfAttachedError):
            resolve_hrtf(self.make_result(None))

    def test_dangling_path(self, tmp_path):
        with pytest.raises(HrtfNotFoundError):
            resolve_hrtf(self.make_result("nowhere.sofa"), base_dir=tmp_path)

    def test_uri_passes_through_unverified(self):
        ref = "https://example.org/hrtf/pp2.sofa"
        assert resolve_hrtf(self.make_result(ref)) == ref


class TestReports:
    def test_match_report_truncates_ranking(self):
        rng = np.random.default_rng(80)
        db = random_db(rng, n=12, hrtf=True)
        result = best_match(vec(rng.uniform(0.5, 8.0, 7)), db)
        report = match_report(result, top_k=3)
        assert len(report["ranking"]) == 3
        assert report["subject_id"] == result.best.subject_id
        assert report["hrtf_ref"] == result.best.hrtf_ref
        json.dumps(report)  # must be JSON-serializable

    def test_format_match_line(self):
        record = EarRecord("pp7", "right", vec([1.0] * 7), "pp7.sofa")
        line = format_match(MatchResult(record, 0.25, ((record, 0.25),)))
        fields = dict(part.split("=") for part in line.split())
        assert fields == {
            "subject": "pp7",
            "side": "right",
            "distance": "0.250000",
            "hrtf": "pp7.sofa",
        }
