import json
import shutil
import subprocess
import sys

import pytest

from hazecast.cli import main


@pytest.fixture(scope="module")
def data_csv(tmp_path_factory):
    out = tmp_path_factory.mktemp("gen")
    assert main(["generate", "--days", "10", "--seed", "4", "--out", str(out)]) == 0
    return out / "data.csv"


QUICK = ["--epochs", "2", "--seed", "3"]


def test_generate_writes_csv(data_csv):
    header = data_csv.read_text().splitlines()[0]
    assert header.endswith("PV Power Generation")


def test_entropy_and_cluster(data_csv, tmp_path):
    assert main(["entropy", "--data", str(data_csv), "--out", str(tmp_path)]) == 0
    rows = (tmp_path / "entropy.csv").read_text().splitlines()
    assert rows[0] == "segment_start,entropy,group"
    assert {r.split(",")[2] for r in rows[1:]} == {"low", "high"}
    assert main(["cluster", "--data", str(data_csv), "--out", str(tmp_path), "--k", "2"]) == 0
    assert (tmp_path / "clusters.csv").read_text().startswith("segment_index,label\n")
    tree = json.loads((tmp_path / "dendrogram.json").read_text())
    for group in tree.values():
        assert len(group["merges"]) == len(group["leaves"]) - 1


def test_train_then_forecast(data_csv, tmp_path):
    model = tmp_path / "model"
    assert main(["train", "--data", str(data_csv), "--out", str(model), *QUICK]) == 0
    assert (model / "manifest.json").exists()
    out = tmp_path / "fc"
    assert main(["forecast", "--data", str(data_csv), "--model", str(model), "--out", str(out)]) == 0
    metrics = json.loads((out / "metrics.json").read_text())
    assert metrics["rmse"] >= metrics["mae"] >= 0


def test_report_files(data_csv, tmp_path):
    assert main(["report", "--data", str(data_csv), "--out", str(tmp_path), "--horizon", "4", *QUICK]) == 0
    for name in ("forecast.csv", "metrics.json", "entropy.csv", "clusters.csv"):
        assert (tmp_path / name).exists()
    steps = {line.split(",")[2] for line in (tmp_path / "forecast.csv").read_text().splitlines()[1:]}
    assert steps == {"1", "2", "3", "4"}


@pytest.mark.parametrize("argv", [
    ["report", "--out", "x"],  # missing --data
    ["report", "--data", "nope.csv", "--out", "x"],
    ["report", "--k", "many", "--out", "x"],
    ["report", "--k-range", "2", "--out", "x"],
    ["nonsense", "--out", "x"],
    ["forecast", "--data", "d.csv", "--out", "x"],  # missing --model
])
def test_validation_errors_exit_1(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == 1


def test_bad_values_exit_1(data_csv, tmp_path):
    assert main(["entropy", "--data", str(data_csv), "--beta", "1", "--out", str(tmp_path)]) == 1
    assert main(["report", "--data", str(data_csv), "--alpha", "2", "--out", str(tmp_path)]) == 1
    assert main(["report", "--data", str(data_csv), "--input-len", "500", "--out", str(tmp_path)]) == 1


def test_runtime_error_exit_2(data_csv, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["train", "--data", str(data_csv), "--out", str(blocker / "sub"), *QUICK]) == 2
    assert main(["forecast", "--data", str(data_csv), "--model", str(tmp_path / "missing"),
                 "--out", str(tmp_path)]) == 2


@pytest.mark.skipif(shutil.which("hazecast") is None, reason="console script not installed")
def test_console_script(tmp_path):
    r = subprocess.run(["hazecast", "generate", "--days", "1", "--out", str(tmp_path)], capture_output=True)
    assert r.returncode == 0
    r = subprocess.run([sys.executable, "-m", "hazecast.cli", "entropy", "--out", str(tmp_path)], capture_output=True)
    assert r.returncode == 1
