"""CLI: subcommands, exit codes, golden report, sweeps."""
import json
import math
import pathlib

import numpy as np
import pytest

from egoeval.cli import main

DATA = pathlib.Path(__file__).parent / "data"


def run(capsys, *argv):
    rc = main(list(argv))
    captured = capsys.readouterr()
    return rc, captured.out, captured.err


class TestEval:
    def test_golden_scene_hand_computed_metrics(self, capsys, tmp_path):
        out = tmp_path / "report.json"
        rc, _, _ = run(capsys, "eval", "--dataset", str(DATA / "golden_scene.json"),
                       "--affinity", "iou", "--out", str(out))
        assert rc == 0
        doc = json.loads(out.read_text())
        agg = doc["aggregates"]
        # brute-force PR on the 3-frame scene: TP .9, FP .8, TP .7, FP .6 / 4 GT
        ap = 0.25 * 1.0 + 0.25 * (2.0 / 3.0)
        assert agg["map"] == pytest.approx(ap, abs=1e-15)
        assert agg["mausc"] == 1.0 and agg["maiou"] == 1.0 and agg["mate"] == 0.0
        assert agg["nds"] == pytest.approx((5 * ap + 1) / 6, abs=1e-15)
        assert agg["nds_usc"] == pytest.approx(((5 * ap + 1) / 6 + 1) / 2, abs=1e-15)
        for key in ("ec_map", "ev_map", "rv_map"):
            assert agg[key] == pytest.approx(ap, abs=1e-15)
        assert (doc["counts"]["tp"], doc["counts"]["fp"], doc["counts"]["fn"]) == (2, 2, 2)

    def test_golden_report_is_byte_identical(self, capsys, tmp_path):
        out = tmp_path / "report.json"
        rc, _, _ = run(capsys, "eval", "--dataset", str(DATA / "golden_scene.json"),
                       "--affinity", "iou", "--out", str(out))
        assert rc == 0
        assert out.read_bytes() == (DATA / "golden_report.json").read_bytes()

    def test_schema_error_exits_2(self, capsys, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text('{"version": "1"}')
        rc, _, err = run(capsys, "eval", "--dataset", str(bad))
        assert rc == 2
        assert json.loads(err)["error"]["type"] == "SchemaError"

    def test_config_error_exits_3(self, capsys):
        rc, _, err = run(capsys, "eval", "--dataset", "x.json", "--affinity", "nope")
        assert rc == 3
        assert json.loads(err)["error"]["type"] == "ConfigError"

    def test_missing_dataset_exits_2(self, capsys):
        rc, _, err = run(capsys, "eval", "--dataset", "/nonexistent/ds.json")
        assert rc == 2

    def test_markdown_format(self, capsys, tmp_path):
        rc, out, _ = run(capsys, "eval", "--dataset", str(DATA / "golden_scene.json"),
                         "--affinity", "iou", "--format", "markdown")
        assert rc == 0
        assert "| metric | value |" in out
        assert "nds_usc" in out

    def test_csv_format(self, capsys):
        rc, out, _ = run(capsys, "eval", "--dataset", str(DATA / "golden_scene.json"),
                         "--affinity", "iou", "--format", "csv")
        assert rc == 0
        assert out.splitlines()[0] == "section,label,metric,value"


class TestPair:
    def test_identical_pair_all_ones(self, capsys):
        rc, out, _ = run(capsys, "pair", "--pred", "12,0,1,2,4.5,2,0.2",
                         "--gt", "12,0,1,2,4.5,2,0.2")
        assert rc == 0
        doc = json.loads(out)
        assert doc["iogt"] == 1.0 and doc["adr"] == 1.0 and doc["usc"] == 1.0
        assert doc["pv_ok"] and doc["bev_ok"] and doc["usc_ok"]
        assert doc["iou"] == 1.0
        assert all(v == 1.0 for v in doc["ec_iou"].values())

    def test_mirrored_offsets_fig1_style(self, capsys):
        rc, blue_out, _ = run(capsys, "pair", "--pred", "19,0,1.25,2.5,6,2.5,0",
                              "--gt", "20,0,1.25,2.5,6,2.5,0")
        blue = json.loads(blue_out)
        rc, red_out, _ = run(capsys, "pair", "--pred", "21,0,1.25,2.5,6,2.5,0",
                             "--gt", "20,0,1.25,2.5,6,2.5,0")
        red = json.loads(red_out)
        assert blue["iou"] == pytest.approx(red["iou"], rel=1e-12)
        assert blue["usc"] > red["usc"]
        assert blue["bev_ok"] and not red["bev_ok"]
        assert blue["ec_iou"]["2.0"] > red["ec_iou"]["2.0"]

    def test_sweep_emits_curve(self, capsys):
        rc, out, _ = run(capsys, "pair", "--pred", "10,0,1,4,4,2,0",
                         "--gt", "10,0,1,4,4,2,0", "--alpha", "0,2",
                         "--sweep=-2:2:1")
        assert rc == 0
        lines = out.strip().splitlines()
        assert lines[0] == "offset,iou,eciou_a0,eciou_a2"
        assert len(lines) == 6
        mid = lines[3].split(",")  # offset 0 row
        assert float(mid[0]) == 0.0
        assert float(mid[1]) == 1.0 and float(mid[2]) == 1.0 and float(mid[3]) == 1.0

    def test_bad_box_exits_3(self, capsys):
        rc, _, err = run(capsys, "pair", "--pred", "1,2,3", "--gt", "1,2,3,1,1,1,0")
        assert rc == 3


class TestImpact:
    def test_default_params_reference_table(self, capsys):
        rc, out, _ = run(capsys, "impact")
        assert rc == 0
        doc = json.loads(out)
        assert doc["stage1"] == pytest.approx(10.95)
        assert doc["stage2"] == pytest.approx(5.475)
        assert doc["stage3"] == pytest.approx(2.67, abs=0.01)

    def test_sweep(self, capsys):
        rc, out, _ = run(capsys, "impact", "--sweep", "0:1:0.05")
        assert rc == 0
        rows = json.loads(out)
        assert len(rows) == 21
        assert rows[0]["av_reduction"] == 0.0
        assert rows[-1]["av_reduction"] == pytest.approx(1.0)
        row_70 = rows[14]
        assert row_70["av_reduction"] == pytest.approx(0.7)
        assert row_70["stage3"] == pytest.approx(1.11, abs=0.01)

    def test_vision_zero(self, capsys):
        rc, out, _ = run(capsys, "impact", "--vision-zero")
        assert rc == 0
        doc = json.loads(out)
        assert doc["residual_collisions"] == pytest.approx(1.44, abs=1e-3)
        assert doc["required_av_reduction"] == pytest.approx(0.868, abs=1e-3)

    def test_markdown_table(self, capsys):
        rc, out, _ = run(capsys, "impact", "--format", "markdown")
        assert rc == 0
        assert out.startswith("| metric | value |")

    def test_invalid_rho_exits_3(self, capsys):
        rc, _, err = run(capsys, "impact", "--rho", "0.5")
        assert rc == 3


class TestCompare:
    def test_deltas(self, capsys, tmp_path):
        a = {"aggregates": {"map": 0.5, "nds": 0.6}}
        b = {"aggregates": {"map": 0.55, "nds": 0.58}}
        pa, pb = tmp_path / "a.json", tmp_path / "b.json"
        pa.write_text(json.dumps(a))
        pb.write_text(json.dumps(b))
        rc, out, _ = run(capsys, "compare", str(pa), str(pb))
        assert rc == 0
        rows = {r["metric"]: r for r in json.loads(out)}
        assert rows["map"]["delta"] == pytest.approx(0.05)
        assert rows["nds"]["delta"] == pytest.approx(-0.02)


class TestSchema:
    def test_prints_reference(self, capsys):
        rc, out, _ = run(capsys, "schema")
        assert rc == 0
        assert "version 1" in out
        assert "class_map" in out
        assert "counter-clockwise" in out


class TestDeterminism:
    def test_reports_byte_identical_across_workers(self, tmp_path, capsys):
        import sys
        sys.path.insert(0, str(pathlib.Path(__file__).parent))
        from synth import synth_dataset
        from egoeval.dataset import save_dataset

        ds = synth_dataset(77, 30)
        ds_path = tmp_path / "ds.json"
        save_dataset(ds, ds_path)
        outputs = []
        for workers in ("1", "2"):
            out = tmp_path / f"report_{workers}.json"
            rc, _, _ = run(capsys, "eval", "--dataset", str(ds_path),
                           "--workers", workers, "--out", str(out))
            assert rc == 0
            outputs.append(out.read_bytes())
        assert outputs[0] == outputs[1]
