"""Command line behaviour: config plumbing, exit codes, every subcommand."""

from __future__ import annotations

import csv
import json
import math
import threading
import urllib.error
import urllib.request
from pathlib import Path

import numpy as np
import pytest

from earmatch.annotations import AnnotationDocument, read_annotation, write_annotation
from earmatch.calibration import read_factors_csv
from earmatch.cli.annotate_server import AnnotateServer
from earmatch.cli.config import PipelineConfig, load_config, require_path
from earmatch.cli.main import main
from earmatch.dataset import save_image
from earmatch.errors import ConfigError
from earmatch.landmarks import (
    RELEVANT_LABELS,
    Landmark,
    LandmarkSet,
    measure_distances,
    read_lm55,
    write_lm55,
)
from earmatch.net import load_model


def run(capsys, *argv) -> tuple[int, str, str]:
    """Invoke the CLI in-process; argparse SystemExit maps to its code."""
    try:
        code = main(list(argv))
    except SystemExit as exc:  # argparse --help / usage errors
        code = int(exc.code or 0)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture()
def corpus(tmp_path):
    rng = np.random.default_rng(7)
    images = tmp_path / "images"
    landmarks = tmp_path / "landmarks"
    images.mkdir()
    landmarks.mkdir()
    for i in range(4):
        save_image(images / f"ear{i:02d}.png", rng.random((224, 224, 3), dtype=np.float32))
        pts = [
            Landmark(k, float(rng.uniform(5, 219)), float(rng.uniform(5, 219)))
            for k in range(55)
        ]
        write_lm55(LandmarkSet(pts), landmarks / f"ear{i:02d}.txt")
    return tmp_path


@pytest.fixture()
def database_csv(tmp_path):
    path = tmp_path / "db.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["subject_id", "side", "d1", "d2", "d3", "d4", "d5", "d6", "d7", "hrtf_ref"]
        )
        writer.writerow(["s001", "left", 1, 2, 3, 4, 5, 6, 7, "hrtf/s001_L.sofa"])
        writer.writerow(["s002", "right", 2, 3, 4, 5, 6, 7, 8, "hrtf/s002_R.sofa"])
        writer.writerow(["s003", "right", 9, 9, 9, 9, 9, 9, 9, "hrtf/s003_R.sofa"])
    return path


class TestConfig:
    def test_defaults_match_training_hyperparameters(self):
        config = PipelineConfig()
        tc = config.train_config()
        assert (tc.learning_rate, tc.beta1, tc.beta2) == (0.001, 0.9, 0.999)
        assert (tc.decay, tc.epochs, tc.batch_size) == (0.0, 300, 64)
        assert tc.shuffle is True and tc.seed == 0

    def test_file_parsing_types_and_comments(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text(
            "# comment\n"
            "\n"
            "images_dir = data/images\n"
            "epochs=25\n"
            "learning_rate=0.01\n"
            "shuffle=false\n"
            "augment_train=yes\n"
        )
        config = load_config(path)
        assert config.images_dir == "data/images"
        assert config.epochs == 25 and isinstance(config.epochs, int)
        assert config.learning_rate == 0.01
        assert config.shuffle is False
        assert config.augment_train is True

    def test_unknown_key_lists_known_keys(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("bogus=1\n")
        with pytest.raises(ConfigError, match="unknown config key 'bogus'"):
            load_config(path)
        with pytest.raises(ConfigError, match="images_dir"):
            load_config(path)

    def test_bad_value_reports_line(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("epochs=ten\n")
        with pytest.raises(ConfigError, match=r"run\.cfg:1"):
            load_config(path)

    def test_missing_equals_reports_line(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("epochs 10\n")
        with pytest.raises(ConfigError, match=r"run\.cfg:1"):
            load_config(path)

    def test_missing_file_is_config_error(self, tmp_path):
        with pytest.raises(ConfigError, match="no-such"):
            load_config(tmp_path / "no-such.cfg")

    def test_set_overrides_file(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("epochs=25\n")
        config = load_config(path, ["epochs=3"])
        assert config.epochs == 3

    def test_malformed_override_rejected(self):
        with pytest.raises(ConfigError, match="key=value"):
            load_config(None, ["epochs"])

    def test_bad_bool_rejected(self):
        with pytest.raises(ConfigError, match="true/false"):
            load_config(None, ["shuffle=maybe"])

    def test_require_path_unset(self):
        with pytest.raises(ConfigError, match="images_dir is not set; point it"):
            require_path("", "images_dir", "point it somewhere", directory=True)

    def test_require_path_missing(self, tmp_path):
        with pytest.raises(ConfigError, match="does not exist"):
            require_path(
                str(tmp_path / "gone"), "images_dir", "hint", directory=True
            )

    def test_side_filter_validation(self):
        config = PipelineConfig(side="upside-down")
        with pytest.raises(ConfigError, match="left"):
            config.side_filter()
        assert PipelineConfig(side="").side_filter() is None
        assert PipelineConfig(side="left").side_filter() == "left"

    def test_bad_arch_is_config_error(self, corpus, capsys):
        code, _, err = run(
            capsys, "train",
            "--images", str(corpus / "images"),
            "--landmarks", str(corpus / "landmarks"),
            "--set", "arch=cubist",
            "--epochs", "1",
        )
        assert code == 2
        assert "arch" in err


class TestExitCodes:
    def test_unknown_subcommand_exits_2(self, capsys):
        code, _, _ = run(capsys, "frobnicate")
        assert code == 2

    def test_missing_required_path_exits_2(self, capsys, tmp_path):
        code, _, err = run(capsys, "train", "--images", str(tmp_path / "nope"))
        assert code == 2
        assert err.startswith("config error:")

    def test_stage_failure_exits_1(self, capsys, tmp_path):
        # present but empty corpus directories: a stage error, not a config error
        (tmp_path / "images").mkdir()
        (tmp_path / "landmarks").mkdir()
        code, _, err = run(
            capsys, "train",
            "--images", str(tmp_path / "images"),
            "--landmarks", str(tmp_path / "landmarks"),
        )
        assert code == 1
        assert err.startswith("error:")
        assert "corpus stage" in err


class TestTrain:
    def test_smoke_reduced_arch(self, corpus, capsys):
        model_path = corpus / "tiny.earmodel"
        code, out, _ = run(
            capsys, "train",
            "--images", str(corpus / "images"),
            "--landmarks", str(corpus / "landmarks"),
            "--model", str(model_path),
            "--arch", "reduced",
            "--epochs", "2",
            "--batch-size", "2",
        )
        assert code == 0
        header = out.splitlines()[0]
        assert header.startswith("train: arch=reduced samples=4")
        assert "learning_rate=0.001 beta1=0.9 beta2=0.999 decay=0.0" in header
        assert "batch_size=2" in header and "epochs=2" in header
        assert model_path.exists()
        load_model(model_path)  # round-trips

        history = corpus / "tiny.history.csv"
        with open(history, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["epoch", "loss"]
        assert len(rows) == 3  # header + one row per epoch
        assert [r[0] for r in rows[1:]] == ["1", "2"]
        losses = [float(r[1]) for r in rows[1:]]
        assert all(math.isfinite(v) for v in losses)
        # the printed per-epoch losses agree with the CSV
        assert f"loss={losses[0]:.8f}" in out

    def test_eval_during_train_extends_history(self, corpus, capsys):
        code, _, _ = run(
            capsys, "train",
            "--images", str(corpus / "images"),
            "--landmarks", str(corpus / "landmarks"),
            "--model", str(corpus / "m.earmodel"),
            "--arch", "reduced",
            "--epochs", "1",
            "--batch-size", "2",
            "--eval",
        )
        assert code == 0
        with open(corpus / "m.history.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        # flat corpora have no test split, so metrics stay absent
        assert rows[0] == ["epoch", "loss"]

    def test_eval_metrics_recorded_with_test_split(self, corpus, capsys):
        # move one pair into explicit train/test subdirectories
        for kind in ("images", "landmarks"):
            root = corpus / kind
            (root / "train").mkdir()
            (root / "test").mkdir()
            for path in sorted(root.glob("ear*")):
                split = "test" if path.stem == "ear03" else "train"
                path.rename(root / split / path.name)
        code, _, _ = run(
            capsys, "train",
            "--images", str(corpus / "images"),
            "--landmarks", str(corpus / "landmarks"),
            "--model", str(corpus / "m.earmodel"),
            "--arch", "reduced",
            "--epochs", "2",
            "--batch-size", "2",
            "--eval",
        )
        assert code == 0
        with open(corpus / "m.history.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["epoch", "loss", "val_loss", "mean_radial_error_px", "pck"]
        assert len(rows) == 3
        assert all(len(r) == 5 for r in rows[1:])

    def test_limit_caps_samples(self, corpus, capsys):
        code, out, _ = run(
            capsys, "train",
            "--images", str(corpus / "images"),
            "--landmarks", str(corpus / "landmarks"),
            "--model", str(corpus / "m.earmodel"),
            "--arch", "reduced",
            "--epochs", "1",
            "--batch-size", "2",
            "--limit", "2",
        )
        assert code == 0
        assert "samples=2" in out.splitlines()[0]

    def test_history_flag_redirects_csv(self, corpus, capsys):
        history = corpus / "elsewhere.csv"
        code, out, _ = run(
            capsys, "train",
            "--images", str(corpus / "images"),
            "--landmarks", str(corpus / "landmarks"),
            "--model", str(corpus / "m.earmodel"),
            "--history", str(history),
            "--arch", "reduced",
            "--epochs", "1",
            "--batch-size", "2",
        )
        assert code == 0
        assert history.exists()
        assert str(history) in out


class TestEvaluate:
    def test_parseable_report(self, corpus, capsys):
        run(
            capsys, "train",
            "--images", str(corpus / "images"),
            "--landmarks", str(corpus / "landmarks"),
            "--model", str(corpus / "m.earmodel"),
            "--arch", "reduced", "--epochs", "1", "--batch-size", "2",
        )
        code, out, _ = run(
            capsys, "evaluate",
            "--images", str(corpus / "images"),
            "--landmarks", str(corpus / "landmarks"),
            "--model", str(corpus / "m.earmodel"),
            "--split", "all",
        )
        assert code == 0
        line = out.splitlines()[-1]
        fields = dict(part.split("=", 1) for part in line.split())
        assert set(fields) == {"loss", "mean_radial_error_px", "pck"}
        assert math.isfinite(float(fields["loss"]))
        assert 0.0 <= float(fields["pck"]) <= 1.0

    def test_empty_split_fails(self, corpus, capsys):
        run(
            capsys, "train",
            "--images", str(corpus / "images"),
            "--landmarks", str(corpus / "landmarks"),
            "--model", str(corpus / "m.earmodel"),
            "--arch", "reduced", "--epochs", "1", "--batch-size", "2",
        )
        code, _, err = run(
            capsys, "evaluate",
            "--images", str(corpus / "images"),
            "--landmarks", str(corpus / "landmarks"),
            "--model", str(corpus / "m.earmodel"),
            "--split", "test",  # flat corpus: everything lands in train
        )
        assert code == 1
        assert "test" in err


class TestAugment:
    def test_six_fold_expansion(self, corpus, capsys):
        out_dir = corpus / "aug"
        code, out, _ = run(
            capsys, "augment",
            "--images", str(corpus / "images"),
            "--landmarks", str(corpus / "landmarks"),
            "--out", str(out_dir),
        )
        assert code == 0
        assert "train=24 test=0" in out
        assert len(list((out_dir / "images" / "train").glob("*.png"))) == 24
        assert len(list((out_dir / "landmarks" / "train").glob("*.txt"))) == 24

    def test_empty_corpus_fails(self, tmp_path, capsys):
        (tmp_path / "images").mkdir()
        (tmp_path / "landmarks").mkdir()
        code, _, err = run(
            capsys, "augment",
            "--images", str(tmp_path / "images"),
            "--landmarks", str(tmp_path / "landmarks"),
            "--out", str(tmp_path / "aug"),
        )
        assert code == 1
        assert "augment stage" in err


class TestRender:
    def test_manifest_and_images(self, tmp_path, capsys):
        import struct

        meshes = tmp_path / "meshes"
        meshes.mkdir()
        s = 1.0
        corners = [(x, y, z) for z in (-s, s) for y in (-s, s) for x in (-s, s)]
        faces = [
            (0, 2, 1), (1, 2, 3), (4, 5, 6), (5, 7, 6),
            (0, 1, 4), (1, 5, 4), (2, 6, 3), (3, 6, 7),
            (0, 4, 2), (2, 4, 6), (1, 3, 5), (3, 7, 5),
        ]
        blob = bytearray(b"\0" * 80) + struct.pack("<I", len(faces))
        for face in faces:
            a, b, c = (np.array(corners[i], dtype=np.float64) for i in face)
            n = np.cross(b - a, c - a)
            n /= np.linalg.norm(n)
            blob += struct.pack("<12fH", *n, *a, *b, *c, 0)
        (meshes / "pp01.stl").write_bytes(bytes(blob))

        out_dir = tmp_path / "renders"
        code, out, _ = run(
            capsys, "render", "--meshes", str(meshes), "--out", str(out_dir)
        )
        assert code == 0
        assert "images=2" in out
        manifest = (out_dir / "manifest.csv").read_text().splitlines()
        assert manifest[0] == "subject_id,side,image_path"
        assert manifest[1] == "pp01,right,pp01_R.png"
        assert manifest[2] == "pp01,left,pp01_L.png"
        assert (out_dir / "pp01_R.png").exists()

    def test_broken_mesh_reported_and_exit_1(self, tmp_path, capsys):
        meshes = tmp_path / "meshes"
        meshes.mkdir()
        (meshes / "bad.stl").write_bytes(b"\0" * 84 + b"short")
        code, _, err = run(
            capsys, "render", "--meshes", str(meshes), "--out", str(tmp_path / "out")
        )
        assert code == 1
        assert "bad.stl" in err


class TestCalibrate:
    @staticmethod
    def _write_fixtures(root: Path, scale_cm_per_px: float = 0.02):
        ann = root / "ann"
        ann.mkdir()
        rows = []
        for i, stretch in enumerate((1.0, 1.25), start=1):
            pts = [
                Landmark(k, 20.0 + 7.0 * j * stretch, 30.0 + 5.0 * j * stretch)
                for j, k in enumerate(RELEVANT_LABELS)
            ]
            doc = AnnotationDocument(f"sub{i:02d}", LandmarkSet(pts))
            write_annotation(doc, ann)
            px = measure_distances(doc.landmarks)
            rows.append([f"sub{i:02d}"] + [repr(v * scale_cm_per_px) for v in px.d])
        cm_path = root / "cm.csv"
        with open(cm_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["ear_id", "d1_cm", "d2_cm", "d3_cm", "d4_cm", "d5_cm", "d6_cm", "d7_cm"]
            )
            writer.writerows(rows)
        return ann, cm_path

    def test_recovers_planted_scale(self, tmp_path, capsys):
        ann, cm_path = self._write_fixtures(tmp_path)
        factors_path = tmp_path / "fac.csv"
        code, out, _ = run(
            capsys, "calibrate",
            "--annotations", str(ann),
            "--cm-table", str(cm_path),
            "--factors", str(factors_path),
        )
        assert code == 0
        factors = read_factors_csv(factors_path)
        assert factors.factors == pytest.approx([0.02] * 7, abs=1e-12)
        assert factors.overall_average == pytest.approx(0.02, abs=1e-12)
        assert "n_ears=2" in out

    def test_skips_are_reported(self, tmp_path, capsys):
        ann, cm_path = self._write_fixtures(tmp_path)
        # sub03 annotated but absent from the table; sub04 in the table only
        pts = [Landmark(k, 20.0 + 7.0 * j, 30.0 + 5.0 * j)
               for j, k in enumerate(RELEVANT_LABELS)]
        write_annotation(AnnotationDocument("sub03", LandmarkSet(pts)), ann)
        with open(cm_path, "a", newline="") as fh:
            csv.writer(fh).writerow(["sub04"] + ["1.0"] * 7)
        code, out, _ = run(
            capsys, "calibrate",
            "--annotations", str(ann),
            "--cm-table", str(cm_path),
            "--factors", str(tmp_path / "fac.csv"),
        )
        assert code == 0
        assert "skipped sub03: no centimetre row" in out
        assert "skipped sub04: no annotation" in out
        assert "n_ears=2" in out

    def test_no_usable_ears_exits_1(self, tmp_path, capsys):
        ann = tmp_path / "ann"
        ann.mkdir()
        cm_path = tmp_path / "cm.csv"
        cm_path.write_text("ear_id,d1_cm,d2_cm,d3_cm,d4_cm,d5_cm,d6_cm,d7_cm\n")
        code, _, err = run(
            capsys, "calibrate",
            "--annotations", str(ann),
            "--cm-table", str(cm_path),
            "--factors", str(tmp_path / "fac.csv"),
        )
        assert code == 1
        assert "calibrate stage" in err

    def test_incomplete_annotation_skipped(self, tmp_path, capsys):
        ann, cm_path = self._write_fixtures(tmp_path)
        partial = LandmarkSet([Landmark(4, 10.0, 10.0), Landmark(18, 50.0, 50.0)])
        write_annotation(AnnotationDocument("sub05", partial), ann)
        with open(cm_path, "a", newline="") as fh:
            csv.writer(fh).writerow(["sub05"] + ["1.0"] * 7)
        code, out, _ = run(
            capsys, "calibrate",
            "--annotations", str(ann),
            "--cm-table", str(cm_path),
            "--factors", str(tmp_path / "fac.csv"),
        )
        assert code == 0
        assert "skipped sub05" in out
        assert "n_ears=2" in out


class TestMatch:
    def test_exact_vector_hits_planted_row(self, database_csv, capsys):
        code, out, _ = run(
            capsys, "match",
            "--database", str(database_csv),
            "--vector", "1,2,3,4,5,6,7",
        )
        assert code == 0
        assert "subject=s001" in out
        assert "distance=0.000000" in out
        assert "hrtf/s001_L.sofa" in out

    def test_json_schema_stable_for_vector_mode(self, database_csv, capsys):
        code, out, _ = run(
            capsys, "match",
            "--database", str(database_csv),
            "--vector", "1 2 3 4 5 6 7",
            "--json",
        )
        assert code == 0
        payload = json.loads(out[out.index("{"):])
        assert set(payload) == {
            "px", "cm", "factors", "reference_distance_used", "side_filter", "match",
        }
        assert payload["px"] is None and payload["factors"] is None
        assert payload["cm"] == [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]
        assert payload["match"]["subject_id"] == "s001"
        assert [r["subject_id"] for r in payload["match"]["ranking"]][:2] == [
            "s001", "s002",
        ]

    def test_side_filter_restricts_candidates(self, database_csv, capsys):
        code, out, _ = run(
            capsys, "match",
            "--database", str(database_csv),
            "--vector", "1,2,3,4,5,6,7",
            "--side", "right",
        )
        assert code == 0
        assert "subject=s002" in out

    @pytest.mark.filterwarnings("ignore::earmatch.landmarks.OutOfFrameWarning")
    def test_image_mode_full_pipeline(self, corpus, database_csv, capsys):
        run(
            capsys, "train",
            "--images", str(corpus / "images"),
            "--landmarks", str(corpus / "landmarks"),
            "--model", str(corpus / "m.earmodel"),
            "--arch", "reduced", "--epochs", "1", "--batch-size", "2",
        )
        report_path = corpus / "report.json"
        code, out, _ = run(
            capsys, "match",
            "--database", str(database_csv),
            "--image", str(corpus / "images" / "ear00.png"),
            "--model", str(corpus / "m.earmodel"),
            "--preset-factors",
            "--json",
            "--report", str(report_path),
        )
        assert code == 0
        payload = json.loads(report_path.read_text())
        assert len(payload["px"]) == 7
        assert len(payload["cm"]) == 7
        assert len(payload["factors"]["values"]) == 7
        assert payload["factors"]["overall_average"] == pytest.approx(10.313797)
        assert payload["match"]["subject_id"] in {"s001", "s002", "s003"}
        # stdout JSON matches the written report
        assert json.loads(out[out.index("{"): out.rindex("}") + 1]) == payload

    @pytest.mark.filterwarnings("ignore::earmatch.landmarks.OutOfFrameWarning")
    def test_reference_distance_overrides_factors(self, corpus, database_csv, capsys):
        run(
            capsys, "train",
            "--images", str(corpus / "images"),
            "--landmarks", str(corpus / "landmarks"),
            "--model", str(corpus / "m.earmodel"),
            "--arch", "reduced", "--epochs", "1", "--batch-size", "2",
        )
        code, out, _ = run(
            capsys, "match",
            "--database", str(database_csv),
            "--image", str(corpus / "images" / "ear00.png"),
            "--model", str(corpus / "m.earmodel"),
            "--ref-points", "10,10,110,10",
            "--ref-length-cm", "2.0",
            "--json",
        )
        assert code == 0
        payload = json.loads(out[out.index("{"):])
        assert payload["reference_distance_used"] is True
        # 100 px segment over 2 cm: uniform factor 316 * 2/100
        expected = 316.0 * 2.0 / 100.0
        assert payload["factors"]["values"] == pytest.approx([expected] * 7)

    def test_ref_points_without_length_is_config_error(self, database_csv, capsys):
        code, _, err = run(
            capsys, "match",
            "--database", str(database_csv),
            "--vector", "1,2,3,4,5,6,7",
            "--ref-points", "0,0,1,1",
        )
        assert code == 2
        assert "together" in err

    def test_vector_must_have_seven_numbers(self, database_csv, capsys):
        code, _, err = run(
            capsys, "match", "--database", str(database_csv), "--vector", "1,2,3"
        )
        assert code == 2
        assert "expected 7 numbers" in err

    def test_no_input_is_config_error(self, database_csv, capsys):
        code, _, err = run(capsys, "match", "--database", str(database_csv))
        assert code == 2
        assert "--image or --vector" in err

    def test_corrupt_database_names_stage(self, tmp_path, capsys):
        path = tmp_path / "db.csv"
        path.write_text("subject_id,side,d1\nx,left,1\n")
        code, _, err = run(
            capsys, "match", "--database", str(path), "--vector", "1,2,3,4,5,6,7"
        )
        assert code == 1
        assert "database stage" in err

    @pytest.mark.filterwarnings("ignore::earmatch.landmarks.OutOfFrameWarning")
    def test_no_factor_source_is_config_error(self, corpus, database_csv, capsys):
        run(
            capsys, "train",
            "--images", str(corpus / "images"),
            "--landmarks", str(corpus / "landmarks"),
            "--model", str(corpus / "m.earmodel"),
            "--arch", "reduced", "--epochs", "1", "--batch-size", "2",
        )
        code, _, err = run(
            capsys, "match",
            "--database", str(database_csv),
            "--image", str(corpus / "images" / "ear00.png"),
            "--model", str(corpus / "m.earmodel"),
        )
        assert code == 2
        assert "no conversion factors" in err


@pytest.fixture()
def server(tmp_path):
    rng = np.random.default_rng(3)
    images = tmp_path / "images"
    annotations = tmp_path / "ann"
    images.mkdir()
    annotations.mkdir()
    for name in ("pp11_left.png", "pp12_right.png"):
        save_image(images / name, rng.random((224, 224, 3), dtype=np.float32))
    srv = AnnotateServer(("127.0.0.1", 0), images, annotations)
    thread = threading.Thread(target=srv.serve_forever, daemon=True)
    thread.start()
    try:
        yield srv
    finally:
        srv.shutdown()
        srv.server_close()
        thread.join(timeout=5)


def _get(srv, path):
    with urllib.request.urlopen(f"http://127.0.0.1:{srv.port}{path}") as response:
        return response.status, response.read(), response.headers.get("Content-Type")


def _post(srv, path, body: bytes):
    request = urllib.request.Request(
        f"http://127.0.0.1:{srv.port}{path}",
        data=body,
        headers={"Content-Type": "application/json"},
        method="POST",
    )
    try:
        with urllib.request.urlopen(request) as response:
            return response.status, json.loads(response.read())
    except urllib.error.HTTPError as exc:
        return exc.code, json.loads(exc.read())


class TestAnnotateServer:
    def test_lists_images_sorted(self, server):
        status, body, ctype = _get(server, "/api/images")
        assert status == 200 and ctype == "application/json"
        assert json.loads(body) == {"images": ["pp11_left.png", "pp12_right.png"]}

    def test_serves_image_bytes(self, server):
        status, body, ctype = _get(server, "/api/image/pp11_left.png")
        assert status == 200 and ctype == "image/png"
        assert body[:8] == b"\x89PNG\r\n\x1a\n"

    def test_unknown_image_is_404(self, server):
        with pytest.raises(urllib.error.HTTPError) as info:
            _get(server, "/api/image/ghost.png")
        assert info.value.code == 404
        assert "ghost.png" in json.loads(info.value.read())["error"]

    def test_path_traversal_rejected(self, server):
        with pytest.raises(urllib.error.HTTPError) as info:
            _get(server, "/api/image/..%2f..%2fetc%2fpasswd")
        assert info.value.code == 404

    def test_labels_endpoint_names_required_points(self, server):
        status, body, _ = _get(server, "/api/labels")
        assert status == 200
        payload = json.loads(body)
        assert [entry["label"] for entry in payload["labels"]] == list(RELEVANT_LABELS)
        assert payload["ref_labels"] == ["REF_A", "REF_B"]

    def test_submit_round_trip(self, server):
        points = [
            {"label": int(k), "x": 10.0 + k / 3.0, "y": 200.0 - k / 7.0}
            for k in RELEVANT_LABELS
        ]
        payload = {
            "image_id": "pp11_left",
            "points": points
            + [
                {"label": "REF_A", "x": 5.25, "y": 9.125},
                {"label": "REF_B", "x": 163.5, "y": 9.125},
            ],
            "reference_length_cm": 2.0,
        }
        status, reply = _post(server, "/api/annotations", json.dumps(payload).encode())
        assert status == 201
        assert reply["image_id"] == "pp11_left"
        assert "pp11_left.txt" in reply["written"]
        assert "pp11_left_reference.json" in reply["written"]

        doc = read_annotation(server.annotations_dir, "pp11_left")
        for point in points:
            landmark = doc.landmarks.get(point["label"])
            assert (landmark.x, landmark.y) == (point["x"], point["y"])
        assert doc.reference_length_cm == 2.0
        assert doc.ref_a == (5.25, 9.125)

        status, body, _ = _get(server, "/api/annotations")
        assert json.loads(body) == {"annotated": ["pp11_left"]}
        status, body, _ = _get(server, "/api/annotation/pp11_left")
        assert status == 200
        fetched = json.loads(body)
        assert fetched["image_id"] == "pp11_left"
        assert len(fetched["points"]) == len(points) + 2

    def test_submit_rejects_duplicate_label(self, server):
        payload = {
            "image_id": "pp11_left",
            "points": [
                {"label": 4, "x": 1.0, "y": 2.0},
                {"label": 4, "x": 3.0, "y": 4.0},
            ],
        }
        status, reply = _post(server, "/api/annotations", json.dumps(payload).encode())
        assert status == 400
        assert "duplicate" in reply["error"]

    def test_submit_rejects_bad_json(self, server):
        status, reply = _post(server, "/api/annotations", b"{not json")
        assert status == 400
        assert "JSON" in reply["error"]

    def test_unknown_post_endpoint_is_404(self, server):
        status, reply = _post(server, "/api/other", b"{}")
        assert status == 404

    def test_missing_annotation_is_404(self, server):
        with pytest.raises(urllib.error.HTTPError) as info:
            _get(server, "/api/annotation/pp12_right")
        assert info.value.code == 404

    def test_placeholder_index_served_without_ui(self, server):
        status, body, ctype = _get(server, "/")
        assert status == 200
        assert ctype.startswith("text/html")
        assert b"annotation" in body.lower()

    def test_ui_bundle_served_when_configured(self, tmp_path):
        images = tmp_path / "imgs"
        images.mkdir()
        ui = tmp_path / "ui"
        ui.mkdir()
        (ui / "index.html").write_text("<html><body>bundled UI</body></html>")
        (ui / "app.js").write_text("console.log('hi');\n")
        srv = AnnotateServer(("127.0.0.1", 0), images, tmp_path / "ann", ui_dir=ui)
        thread = threading.Thread(target=srv.serve_forever, daemon=True)
        thread.start()
        try:
            status, body, _ = _get(srv, "/")
            assert status == 200 and b"bundled UI" in body
            status, body, ctype = _get(srv, "/app.js")
            assert status == 200 and "javascript" in ctype
        finally:
            srv.shutdown()
            srv.server_close()
            thread.join(timeout=5)

    def test_port_in_use_raises_earmatch_error(self, server, tmp_path):
        from earmatch.errors import EarmatchError

        with pytest.raises(EarmatchError, match="cannot bind"):
            AnnotateServer(
                ("127.0.0.1", server.port), server.images_dir, tmp_path / "ann2"
            )

    def test_submitted_txt_is_lm55_compatible(self, server, tmp_path):
        points = [{"label": int(k), "x": 1.0 * k, "y": 2.0 * k} for k in RELEVANT_LABELS]
        payload = {"image_id": "pp12_right", "points": points}
        status, _ = _post(server, "/api/annotations", json.dumps(payload).encode())
        assert status == 201
        landmarks = read_lm55(server.annotations_dir / "pp12_right.txt")
        assert landmarks.labels == RELEVANT_LABELS
