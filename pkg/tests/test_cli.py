import json
import sys
import textwrap

import pytest

from conftest import axis_scene
from lanemap.cli import main
from lanemap.metrics import ApConfig, RasterSpec, evaluate
from lanemap.model import (
    LineCategory,
    Point2,
    vector_map_from_json,
    vector_map_to_json,
)

FIXTURE_DOC = {
    "width": 896,
    "height": 896,
    "mpp": 0.15,
    "lines": [
        {
            "id": "fixture",
            "points": [[257, 49], [376, 15]],
            "category": "Curb",
            "line_type": "Solid",
            "start": "natural",
            "end": "natural",
        }
    ],
}

REFERENCE_PREFIX = "<{><points><:><[><[><257><,><49><]><,><[><376><,><15><]><]><,><category><:><Curb>"


def _write(tmp_path, name, doc):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def _scene_file(tmp_path, name="gt.json", size=1792):
    gt = axis_scene(size, size, h_spacing=160, v_spacing=200)
    return _write(tmp_path, name, vector_map_to_json(gt)), gt


class TestSerialize:
    def test_reference_fixture(self, tmp_path):
        inp = _write(tmp_path, "m.json", FIXTURE_DOC)
        out = tmp_path / "tokens.txt"
        assert main(["serialize", inp, "-o", str(out), "--no-resample", "--no-reorder"]) == 0
        text = out.read_text()
        assert text.startswith(REFERENCE_PREFIX)
        assert text == (
            REFERENCE_PREFIX + "<,><line_type><:><Solid><,><start><:><Natural><,><end><:><Natural><}>"
        )

    def test_empty_map(self, tmp_path):
        inp = _write(tmp_path, "m.json", {"width": 896, "height": 896, "mpp": 0.15, "lines": []})
        out = tmp_path / "tokens.txt"
        assert main(["serialize", inp, "-o", str(out)]) == 0
        assert out.read_text() == ""

    def test_out_of_range_coordinate(self, tmp_path, caplog):
        doc = dict(FIXTURE_DOC)
        doc["lines"] = [dict(doc["lines"][0], points=[[0, 0], [1200, 5]])]
        inp = _write(tmp_path, "m.json", doc)
        rc = main(["serialize", inp, "-o", str(tmp_path / "t.txt"), "--no-resample"])
        assert rc != 0
        assert any("coordinate" in r.message for r in caplog.records)

    def test_schema_error_path(self, tmp_path, caplog):
        doc = {"width": 896, "height": 896, "mpp": 0.15, "lines": [{"id": "x"}]}
        inp = _write(tmp_path, "m.json", doc)
        assert main(["serialize", inp, "-o", str(tmp_path / "t.txt")]) != 0
        assert any("lines[0]" in r.message for r in caplog.records)

    def test_resample_reorder_applied(self, tmp_path):
        doc = {
            "width": 896, "height": 896, "mpp": 0.15,
            "lines": [
                {"id": "far", "points": [[800, 800], [800, 600]], "category": "Curb",
                 "line_type": "Solid", "start": "natural", "end": "natural"},
                {"id": "near", "points": [[10, 10], [90, 10]], "category": "LaneLine",
                 "line_type": "Solid", "start": "natural", "end": "natural"},
            ],
        }
        inp = _write(tmp_path, "m.json", doc)
        out = tmp_path / "t.txt"
        assert main(["serialize", inp, "-o", str(out)]) == 0
        text = out.read_text()
        # near line first after reorder; resample adds the 40-px grid point
        assert text.index("<LaneLine>") < text.index("<Curb>")
        assert "<[><10><,><10><]><,><[><50><,><10><]><,><[><90><,><10><]>" in text


class TestStitch:
    def test_oracle_stitch_and_audit(self, tmp_path):
        gt_path, gt = _scene_file(tmp_path)
        out = tmp_path / "global.json"
        rc = main([
            "stitch", "--width", "1792", "--height", "1792",
            "--generator", f"oracle:{gt_path}", "-o", str(out),
        ])
        assert rc == 0
        doc = json.loads(out.read_text())
        merged = vector_map_from_json(doc)
        assert len(merged.lines) == len(gt.lines)
        diag = json.loads((tmp_path / "global.diag.json").read_text())
        assert diag["unmatched_interior_cut_endpoints"] == 0
        assert len(diag["patches"]) == 4
        assert all(p["events"] == [] for p in diag["patches"])

    def test_exec_stub_empty_tokens(self, tmp_path):
        stub = tmp_path / "stub.py"
        stub.write_text(
            textwrap.dedent(
                """
                import sys, json
                for raw in sys.stdin:
                    print(json.dumps({"tokens": "", "class_logits": None}), flush=True)
                """
            )
        )
        out = tmp_path / "global.json"
        rc = main([
            "stitch", "--width", "1792", "--height", "1792",
            "--generator", f"exec:{sys.executable} {stub}", "-o", str(out),
        ])
        assert rc == 0
        doc = json.loads(out.read_text())
        assert doc["lines"] == []
        diag = json.loads((tmp_path / "global.diag.json").read_text())
        assert len(diag["patches"]) == 4

    def test_noisy_drop_all(self, tmp_path):
        gt_path, _ = _scene_file(tmp_path)
        out = tmp_path / "global.json"
        rc = main([
            "stitch", "--width", "1792", "--height", "1792",
            "--generator", f"noisy:{gt_path},0.0,1.0", "-o", str(out),
        ])
        assert rc == 0
        assert json.loads(out.read_text())["lines"] == []

    def test_determinism_same_seed(self, tmp_path):
        gt_path, _ = _scene_file(tmp_path)
        outs = []
        for run in ("a", "b"):
            out = tmp_path / f"global_{run}.json"
            rc = main([
                "stitch", "--width", "1792", "--height", "1792",
                "--generator", f"noisy:{gt_path},2.0,0.1", "--seed", "7", "-o", str(out),
            ])
            assert rc == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]

    def test_bad_generator_spec(self, tmp_path):
        with pytest.raises(SystemExit):
            main(["stitch", "--width", "896", "--height", "896",
                  "--generator", "magic:x", "-o", str(tmp_path / "g.json")])

    def test_generator_failure_exits_nonzero(self, tmp_path):
        stub = tmp_path / "stub.py"
        stub.write_text("import sys; sys.exit(2)\n")
        out = tmp_path / "global.json"
        rc = main([
            "stitch", "--width", "896", "--height", "896",
            "--generator", f"exec:{sys.executable} {stub}", "-o", str(out),
        ])
        assert rc == 1
        diag = json.loads((tmp_path / "global.diag.json").read_text())
        assert diag["patches"][0]["events"][0]["stage"] == "generate"


class TestEval:
    def test_identity_all_ones(self, tmp_path):
        gt_path, gt = _scene_file(tmp_path, size=1792)
        out_dir = tmp_path / "report"
        rc = main(["eval", gt_path, gt_path, "-o", str(out_dir), "--no-figures"])
        assert rc == 0
        report = json.loads((out_dir / "report.json").read_text())
        assert all(v == 1.0 for v in report["ap_c"].values())
        assert report["miou"] == 1.0
        assert (out_dir / "report.csv").exists()
        rows = (out_dir / "report.csv").read_text().splitlines()
        assert rows[0] == "metric,value"
        assert any(r.startswith("ap_c_0.9,") for r in rows)

    def test_figures_written(self, tmp_path):
        doc = {
            "width": 300, "height": 300, "mpp": 0.15,
            "lines": [{"id": "a", "points": [[10, 50], [280, 50]], "category": "Curb",
                       "line_type": "Solid", "start": "natural", "end": "natural"}],
        }
        path = _write(tmp_path, "m.json", doc)
        out_dir = tmp_path / "report"
        rc = main(["eval", path, path, "-o", str(out_dir)])
        assert rc == 0
        assert (out_dir / "pr_curves.png").exists()
        assert (out_dir / "map_overlay.png").exists()

    def test_matches_library_evaluate(self, tmp_path):
        gt_path, gt = _scene_file(tmp_path, size=1792)
        noisy = tmp_path / "pred.json"
        rc = main([
            "stitch", "--width", "1792", "--height", "1792",
            "--generator", f"noisy:{gt_path},2.0,0.0", "--seed", "1", "-o", str(noisy),
        ])
        assert rc == 0
        out_dir = tmp_path / "report"
        rc = main(["eval", str(noisy), gt_path, "-o", str(out_dir), "--no-figures"])
        assert rc == 0
        report = json.loads((out_dir / "report.json").read_text())
        pred = vector_map_from_json(json.loads(noisy.read_text()))
        want = evaluate(pred, gt, ApConfig(), RasterSpec(1792, 1792))
        assert report["ap_c"] == {k: pytest.approx(v) for k, v in want["ap_c"].items()}
        assert report["miou"] == pytest.approx(want["miou"])

    def test_frame_mismatch(self, tmp_path):
        a = _write(tmp_path, "a.json", {"width": 100, "height": 100, "mpp": 0.15, "lines": []})
        b = _write(tmp_path, "b.json", {"width": 200, "height": 200, "mpp": 0.15, "lines": []})
        assert main(["eval", a, b, "-o", str(tmp_path / "r"), "--no-figures"]) != 0

    def test_per_category_detail(self, tmp_path):
        gt_path, _ = _scene_file(tmp_path, size=1792)
        out_dir = tmp_path / "report"
        rc = main(["eval", gt_path, gt_path, "-o", str(out_dir), "--no-figures", "--per-category"])
        assert rc == 0
        report = json.loads((out_dir / "report.json").read_text())
        assert set(report["per_category_ap_c"]) == {"Curb", "LaneLine", "VirtualLine"}


class TestRender:
    def test_empty_map(self, tmp_path):
        inp = _write(tmp_path, "m.json", {"width": 896, "height": 896, "mpp": 0.15, "lines": []})
        out = tmp_path / "m.svg"
        assert main(["render", inp, "-o", str(out)]) == 0
        text = out.read_text()
        assert text.startswith("<?xml")
        assert "<path" not in text
        assert "</svg>" in text

    def test_single_line(self, tmp_path):
        inp = _write(tmp_path, "m.json", FIXTURE_DOC)
        out = tmp_path / "m.svg"
        assert main(["render", inp, "-o", str(out)]) == 0
        text = out.read_text()
        assert text.count("<path") == 1
        assert 'd="M 257 49 L 376 15"' in text
        assert 'stroke-width="6"' in text

    def test_by_instance_palette(self, tmp_path):
        doc = dict(FIXTURE_DOC)
        doc["lines"] = [
            dict(doc["lines"][0], id=f"l{i}", points=[[10 * i + 1, 5], [10 * i + 5, 9]])
            for i in range(3)
        ]
        inp = _write(tmp_path, "m.json", doc)
        out = tmp_path / "m.svg"
        assert main(["render", inp, "-o", str(out), "--by-instance"]) == 0
        text = out.read_text()
        assert text.count("<path") == 3


class TestAugment:
    def test_defaults_single_frame(self, tmp_path):
        inp = _write(tmp_path, "m.json", FIXTURE_DOC)
        out_dir = tmp_path / "aug"
        rc = main(["augment", inp, "-o", str(out_dir)])
        assert rc == 0
        files = sorted(p.name for p in out_dir.glob("patch_*.json"))
        assert len(files) == 4  # 1 frame x rotations {0, 90, 180, 270}
        manifest = (out_dir / "manifest.jsonl").read_text().splitlines()
        assert len(manifest) == 4
        rotations = [json.loads(line)["post_rotation"] for line in manifest]
        assert rotations == [0, 90, 180, 270]

    def test_2048_grid_a_no_rotations(self, tmp_path):
        doc = {"width": 2048, "height": 2048, "mpp": 0.15, "lines": []}
        inp = _write(tmp_path, "m.json", doc)
        out_dir = tmp_path / "aug"
        rc = main([
            "augment", inp, "-o", str(out_dir),
            "--angles", "0", "--grids", "a", "--no-rotations",
        ])
        assert rc == 0
        assert len(list(out_dir.glob("patch_*.json"))) == 4

    def test_out_of_bounds_only(self, tmp_path):
        inp = _write(tmp_path, "m.json", FIXTURE_DOC)  # 896x896 parent
        out_dir = tmp_path / "aug"
        rc = main(["augment", inp, "-o", str(out_dir), "--angles", "15", "--grids", "a"])
        assert rc == 0
        assert (out_dir / "manifest.jsonl").read_text() == ""
        assert list(out_dir.glob("patch_*.json")) == []

    def test_determinism(self, tmp_path):
        doc = vector_map_to_json(axis_scene(2048, 2048, h_spacing=300, v_spacing=300))
        inp = _write(tmp_path, "m.json", doc)
        blobs = []
        for run in ("a", "b"):
            out_dir = tmp_path / f"aug_{run}"
            assert main(["augment", inp, "-o", str(out_dir), "--angles", "0,30"]) == 0
            blob = b"".join(p.read_bytes() for p in sorted(out_dir.glob("*")))
            blobs.append(blob)
        assert blobs[0] == blobs[1]

    def test_patch_content_matches_crop(self, tmp_path):
        gt = axis_scene(2048, 2048, h_spacing=300, v_spacing=300)
        inp = _write(tmp_path, "m.json", vector_map_to_json(gt))
        out_dir = tmp_path / "aug"
        assert main(["augment", inp, "-o", str(out_dir), "--angles", "0", "--grids", "a", "--no-rotations"]) == 0
        first = json.loads((out_dir / "patch_000000.json").read_text())
        from lanemap.augment import crop_patch
        from lanemap.model import PatchFrame

        frame = PatchFrame(
            center=Point2(first["frame"]["cx"], first["frame"]["cy"]),
            angle_deg=first["frame"]["angle"],
        )
        expected = crop_patch(gt, frame).lines
        got = vector_map_from_json(first["map"])
        assert got.lines == expected.lines
        assert (got.width_px, got.height_px) == (expected.width_px, expected.height_px)


class TestGeolink:
    def test_end_to_end(self, tmp_path):
        # tile origin at the global pixel of (0, 0) lat/lon, zoom 20
        origin = {"origin_x": 134217728, "origin_y": 134217728, "zoom": 20}
        origin_path = _write(tmp_path, "origin.json", origin)
        # a straight vertical road at x=100; pose on the road heading up
        doc = {
            "width": 896, "height": 896, "mpp": 0.15,
            "lines": [{"id": "road", "points": [[100, 0], [100, 896]], "category": "LaneLine",
                       "line_type": "Solid", "start": "natural", "end": "natural"}],
        }
        ann_path = _write(tmp_path, "ann.json", doc)
        from lanemap.geolink import pixel_to_latlon

        poses = []
        for k in range(19):
            g = pixel_to_latlon(Point2(134217728 + 100, 134217728 + 800 - 10 * k), 20)
            poses.append({"path": f"f{k}.jpg", "lat": g.lat, "lon": g.lon, "heading": 0.0, "timestamp": float(k)})
        poses_path = tmp_path / "poses.jsonl"
        poses_path.write_text("\n".join(json.dumps(p) for p in poses) + "\n")
        out_dir = tmp_path / "geo"
        rc = main([
            "geolink", "--poses", str(poses_path), "--origin", str(origin_path),
            "--annotations", ann_path, "-o", str(out_dir),
        ])
        assert rc == 0
        gt_files = sorted(out_dir.glob("pv_gt_*.json"))
        assert len(gt_files) == 10  # 19 -> 10 sampled
        first = json.loads(gt_files[0].read_text())
        assert first["pose"]["x"] == pytest.approx(100, abs=1e-6)
        cropped = vector_map_from_json(first["map"])
        assert len(cropped.lines) == 1
        # road runs straight ahead through the pose: pose-local x = width/2
        assert all(abs(p.x - 100.0) < 1e-6 for p in cropped.lines[0].points)
        prompts = json.loads((out_dir / "prompts.json").read_text())
        assert prompts["prompts"]["bev_only"].startswith("<image>")
        assert "<pv frame>" in prompts["prompts"]["pv_only"]

    def test_pose_outside_skipped(self, tmp_path):
        origin = _write(tmp_path, "origin.json", {"origin_x": 134217728, "origin_y": 134217728, "zoom": 20})
        ann = _write(tmp_path, "ann.json", {"width": 896, "height": 896, "mpp": 0.15, "lines": []})
        from lanemap.geolink import pixel_to_latlon

        g = pixel_to_latlon(Point2(134217728 + 5000, 134217728), 20)  # outside 896
        poses_path = tmp_path / "poses.jsonl"
        poses_path.write_text(json.dumps({"path": "f.jpg", "lat": g.lat, "lon": g.lon, "heading": 0.0, "timestamp": 0.0}) + "\n")
        out_dir = tmp_path / "geo"
        rc = main(["geolink", "--poses", str(poses_path), "--origin", origin, "--annotations", ann, "-o", str(out_dir)])
        assert rc == 0
        summary = json.loads((out_dir / "prompts.json").read_text())
        assert summary["sampled"] == 0
        assert summary["skipped_pose_lines"] == [0]


class TestImport:
    def test_labelme_style(self, tmp_path):
        native = {
            "imageWidth": 1024,
            "imageHeight": 1024,
            "shapes": [
                {"label": "curb", "points": [[1, 2], [3, 4]], "attributes": {"line_type": "thick solid"}},
                {"label": "lane_line_white", "points": [[5, 6], [7, 8], [9, 9]], "attributes": {"type": "dashed"}},
                {"label": "virtual line", "points": [[10, 10], [20, 20]]},
                {"label": "degenerate", "points": [[0, 0]]},
            ],
        }
        inp = _write(tmp_path, "native.json", native)
        out = tmp_path / "ann.json"
        rc = main(["import", inp, "-o", str(out)])
        assert rc == 0
        m = vector_map_from_json(json.loads(out.read_text()))
        assert len(m.lines) == 3
        assert m.lines[0].category is LineCategory.Curb
        assert m.lines[0].line_type.value == "ThickSolid"
        assert m.lines[1].line_type.value == "Dashed"
        assert m.lines[2].category is LineCategory.VirtualLine

    def test_not_native(self, tmp_path):
        inp = _write(tmp_path, "x.json", {"foo": 1})
        assert main(["import", inp, "-o", str(tmp_path / "o.json")]) != 0


class TestConfigFile:
    def test_config_supplies_defaults(self, tmp_path):
        inp = _write(tmp_path, "m.json", FIXTURE_DOC)
        cfg = _write(tmp_path, "cfg.json", {"no-resample": True, "no-reorder": True})
        out = tmp_path / "t.txt"
        assert main(["serialize", inp, "-o", str(out), "--config", cfg]) == 0
        assert out.read_text().startswith(REFERENCE_PREFIX)

    def test_unknown_key_rejected(self, tmp_path):
        inp = _write(tmp_path, "m.json", FIXTURE_DOC)
        cfg = _write(tmp_path, "cfg.json", {"bogus": 1})
        with pytest.raises(SystemExit):
            main(["serialize", inp, "-o", str(tmp_path / "t.txt"), "--config", cfg])


class TestMissingFile:
    def test_missing_input(self, tmp_path):
        assert main(["serialize", str(tmp_path / "nope.json"), "-o", str(tmp_path / "t.txt")]) != 0
