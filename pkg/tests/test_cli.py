import csv
import json

import pytest

from airmm.cli import main
from airmm.harness import CSV_HEADER


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """gen -> align -> pretrain-lm at a size small enough for a unit test."""
    d = tmp_path_factory.mktemp("cli")
    data = d / "data"
    assert main(["gen", "--seed", "5", "--areas", "2", "--samples", "40", "--test-samples", "16",
                 "--out", str(data)]) == 0
    assert main(["align", "--data", str(data), "--epochs", "2", "--batch", "8", "--areas", "2",
                 "--pairs", "24", "--held-out", "8"]) == 0
    assert main(["pretrain-lm", "--seed", "5", "--steps", "3", "--batch", "4",
                 "--out", str(data / "backbone.aimb")]) == 0
    return d, data


def test_gen_writes_area_files(pipeline):
    _, data = pipeline
    names = sorted(p.name for p in data.glob("*.aimm"))
    assert names == ["area_00000.test.aimm", "area_00000.train.aimm",
                     "area_00001.test.aimm", "area_00001.train.aimm"]


def test_align_report(pipeline):
    _, data = pipeline
    report = json.loads((data / "encoders.json").read_text())
    assert report["held_out_pairs"] == 16
    assert report["retrieval_top1_b64"] is None
    assert 0 < report["temperature"] <= 1


def test_train_then_eval(pipeline, capsys):
    d, data = pipeline
    out = d / "run"
    assert main(["train", "--config", "full", "--seed", "5", "--data", str(data), "--epochs", "1",
                 "--out", str(out)]) == 0
    census = json.loads((out / "census.json").read_text())
    assert census["ok"] and census["backbone_calls"] > 0
    capsys.readouterr()
    assert main(["eval", "--ckpt", str(out / "model.aimc"), "--data", str(data),
                 "--csv", str(d / "eval.csv")]) == 0
    printed = capsys.readouterr().out.strip().splitlines()
    assert len(printed) == 5
    table = list(csv.reader((d / "eval.csv").open()))
    assert tuple(table[0]) == CSV_HEADER and len(table) == 6
    assert table[1:] == list(csv.reader((out / "metrics.csv").open()))[1:]


def test_stop_and_resume(pipeline):
    d, data = pipeline
    common = ["train", "--config", "wm", "--seed", "5", "--data", str(data), "--epochs", "1"]
    assert main(common + ["--out", str(d / "whole")]) == 0
    assert main(common + ["--out", str(d / "part"), "--stop-at-step", "4"]) == 0
    assert (d / "part" / "state.aims").is_file()
    assert main(common + ["--out", str(d / "part"), "--resume", str(d / "part" / "state.aims")]) == 0
    assert (d / "whole" / "model.aimc").read_bytes() == (d / "part" / "model.aimc").read_bytes()


def test_settings_file_and_bad_settings(pipeline, tmp_path):
    d, data = pipeline
    good = tmp_path / "good.cfg"
    good.write_text("epochs = 1\nbatch_size = 20\n")
    assert main(["train", "--config", "wl", "--data", str(data), "--settings", str(good),
                 "--out", str(tmp_path / "r")]) == 0
    bad = tmp_path / "bad.cfg"
    bad.write_text("epochz = 1\n")
    assert main(["train", "--config", "wl", "--data", str(data), "--settings", str(bad),
                 "--out", str(tmp_path / "r2")]) == 2


def test_unknown_config_exit_2(pipeline, tmp_path):
    _, data = pipeline
    assert main(["train", "--config", "huge", "--data", str(data), "--out", str(tmp_path)]) == 2


def test_usage_error_exit_2():
    assert main(["train"]) == 2
    assert main(["nonsense"]) == 2


def test_corrupt_checkpoint_exit_3(pipeline, tmp_path):
    _, data = pipeline
    bad = tmp_path / "bad.aimc"
    bad.write_bytes(b"AIMC\x07\x00\x00\x00garbage")
    assert main(["eval", "--ckpt", str(bad), "--data", str(data)]) == 3


def test_missing_stage_outputs_exit_4(pipeline, tmp_path):
    d, data = pipeline
    assert main(["train", "--config", "full", "--data", str(data), "--backbone", str(tmp_path / "none.aimb"),
                 "--out", str(tmp_path / "r")]) == 4
    assert main(["train", "--config", "full", "--data", str(tmp_path / "empty"), "--out", str(tmp_path / "r")]) == 4
    assert main(["eval", "--ckpt", str(tmp_path / "none.aimc"), "--data", str(data)]) == 4
    assert main(["align", "--data", str(tmp_path / "empty")]) == 4


def test_ablate_command(pipeline, capsys):
    d, data = pipeline
    capsys.readouterr()
    assert main(["ablate", "--seed", "5", "--data", str(data), "--epochs", "1", "--csv", str(d / "abl.csv")]) == 0
    rows = list(csv.reader((d / "abl.csv").open()))
    assert tuple(rows[0]) == CSV_HEADER and len(rows) == 41
    assert capsys.readouterr().out.count("\n") == 41
