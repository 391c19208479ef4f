import csv
import json
import shutil

import numpy as np
import pytest
import yaml

from dann_amc import config as cfgmod
from dann_amc.cli import main
from dann_amc.report import CellResult, MISSING_NOTE, build_tables, render_all, signed
from dann_amc.train import MetricsReport

TINY = {
    "data": {"per_class": 20, "frame_length": 128},
    "experiment": {"bands": ["10MHz"], "seeds": [0]},
    "train": {"epochs": 2, "early_stop": "source_val"},
    "embed": {"per_group": 6, "perplexity": 10, "iterations": 60},
}


@pytest.fixture(scope="module")
def tiny(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli")
    cfg = base / "tiny.yaml"
    cfg.write_text(yaml.safe_dump(TINY))
    out = base / "run"
    assert main(["run", "--config", str(cfg), "--out", str(out), "--deterministic"]) == 0
    return cfg, out


def _cell(out, direction="rayleigh_to_rician"):
    return out / "cells" / "10MHz" / direction / "seed0"


def test_run_writes_every_artifact(tiny):
    _, out = tiny
    for direction in cfgmod.DIRECTIONS:
        cell = _cell(out, direction)
        for name in ("config.yaml", "manifest.json", "baseline.ckpt.json", "dann.ckpt.json", "history_baseline.json",
                     "history_dann.json", "baseline_report.json", "dann_report.json", "embed_dann.csv",
                     "embed_baseline.svg", "status.json"):
            assert (cell / name).exists(), name
        status = json.loads((cell / "status.json").read_text())
        assert status["status"] == "ok"
    with open(out / "summary.csv", newline="") as fh:
        assert len(list(csv.DictReader(fh))) == 2
    assert sorted(p.name for p in (out / "data").iterdir()) == ["10MHz_rayleigh.csv", "10MHz_rician.csv"]


def test_manifest_and_lambda_trace(tiny):
    _, out = tiny
    manifest = json.loads((_cell(out) / "manifest.json").read_text())
    assert manifest["source_file"] == "data/10MHz_rayleigh.csv" and len(manifest["target_fingerprint"]) == 64
    cell_cfg = yaml.safe_load((_cell(out) / "config.yaml").read_text())
    assert cell_cfg["train"]["early_stop"] == "source_val"
    steps = json.loads((_cell(out) / "history_dann.json").read_text())["steps"]
    lams = [s["lambda"] for s in steps]
    assert lams[0] == 0.0 and all(a <= b for a, b in zip(lams, lams[1:]))


def test_rerun_is_byte_identical(tiny, tmp_path):
    cfg, out = tiny
    again = tmp_path / "again"
    assert main(["run", "--config", str(cfg), "--out", str(again), "--deterministic"]) == 0
    skip = {"status.json", "summary.csv"}   # these carry wall-clock timings
    first = {p.relative_to(out): p.read_bytes() for p in out.rglob("*") if p.is_file() and p.name not in skip
             and "report" not in p.parts}
    second = {p.relative_to(again): p.read_bytes() for p in again.rglob("*") if p.is_file() and p.name not in skip}
    assert first.keys() == second.keys()
    assert [k for k in first if first[k] != second[k]] == []


def test_resume_skips_finished_cells(tiny, tmp_path):
    cfg, out = tiny
    copy = tmp_path / "copy"
    shutil.copytree(out, copy)
    status = _cell(copy) / "status.json"
    before = status.read_bytes()
    shutil.rmtree(_cell(copy, "rician_to_rayleigh"))
    assert main(["run", "--config", str(cfg), "--out", str(copy)]) == 0
    assert status.read_bytes() == before
    assert (_cell(copy, "rician_to_rayleigh") / "status.json").exists()


def test_report_and_embed(tiny):
    _, out = tiny
    assert main(["report", str(out)]) == 0
    names = {p.name for p in (out / "report").iterdir()}
    assert {"table1_dca.txt", "table2_avg_acc.csv", "table3_per_class_10MHz.txt"} <= names
    text = (out / "report" / "table2_avg_acc.txt").read_text()
    assert "10 MHz" in text and MISSING_NOTE not in text
    assert main(["embed", str(_cell(out)), "--iterations", "30"]) == 0
    assert (_cell(out) / "embed_dann.csv").exists()


def test_inspect_prints_manifest(tiny, capsys):
    _, out = tiny
    capsys.readouterr()
    assert main(["inspect", str(_cell(out))]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["status"]["status"] == "ok" and doc["splits"]["target_eval"].endswith("indices")


def test_usage_errors(tmp_path, capsys):
    assert main(["report", str(tmp_path)]) == 2
    assert "no completed run cells" in capsys.readouterr().err
    assert main(["inspect", str(tmp_path)]) == 2
    bad = tmp_path / "bad.yaml"
    bad.write_text("train: {epochz: 3}\n")
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    with pytest.raises(SystemExit):
        main(["run", "--direction", "sideways"])


def test_out_resolution(monkeypatch, tmp_path):
    assert str(cfgmod.resolve_out(None, {})) == "runs"
    assert cfgmod.resolve_out(None, {cfgmod.OUT_ENV: str(tmp_path)}) == tmp_path
    assert cfgmod.resolve_out(str(tmp_path / "x"), {cfgmod.OUT_ENV: "elsewhere"}) == tmp_path / "x"


def test_config_round_trip_and_digest(tmp_path):
    cfg = cfgmod.from_dict(TINY)
    path = tmp_path / "c.yaml"
    path.write_text(cfg.dump())
    again = cfgmod.load(path)
    assert again.digest() == cfg.digest() and again.train_config(3).seed == 3
    assert cfgmod.with_overrides(cfg, seed=7).experiment.seeds == [7]
    with pytest.raises(ValueError):
        cfgmod.from_dict({"data": {"frames": 3}})


def _report(per_class, avg):
    return MetricsReport(per_class, avg, avg, np.zeros((5, 5), dtype=np.int64), [0] * 5)


def test_table_formatting():
    cell = CellResult("10MHz", "rician_to_rayleigh", 0, _report([55.01, 80, 80, 80, 80], 74.65),
                      _report([69.94, 80, 80, 80, 80], 77.71), None)
    cell.dann.dca_before, cell.dann.dca_after = 0.91234, 0.87
    tables = build_tables([cell])
    row = next(r for r in tables.table2 if r[1] == "Rician→Rayleigh")
    assert row == ["10 MHz", "Rician→Rayleigh", "74.65", "77.71", "+3.06", "+4.10"]
    assert tables.table3["10MHz"][5][-1] == "+14.93"
    assert tables.missing   # the other direction has no run
    files = render_all(tables)
    assert MISSING_NOTE in files["table2_avg_acc.txt"]
    assert "0.9123" in files["table1_dca.txt"]
    assert (signed(0.0), signed(-0.001), signed(-3.65)) == ("0.00", "0.00", "-3.65")


def test_per_class_csv_repeats_direction(tiny):
    _, out = tiny
    main(["report", str(out)])
    with open(out / "report" / "table3_per_class_10MHz.csv", newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    assert len(rows) == 10 and all(r[0] for r in rows)
    assert [r[0] for r in rows].count("Rayleigh→Rician") == 5
