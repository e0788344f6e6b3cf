import csv
import json

import numpy as np
import pytest

from kronsub.cli import main, parse_snr
from kronsub.dataio import load_tensor_file

MANIFEST_KEYS = ["command", "finished", "parameters", "seed", "started", "tool_version"]
DIMS = ["--m1", "4", "--m2", "4", "--n1", "2", "--n2", "2"]


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


def _json(path):
    with open(path) as f:
        return json.load(f)


def _csv(path):
    with open(path) as f:
        return list(csv.reader(ln for ln in f if not ln.startswith("#")))


def _manifest_line(path):
    with open(path) as f:
        first = f.readline()
    assert first.startswith("# manifest ")
    return json.loads(first[len("# manifest "):])


def test_parse_snr():
    assert parse_snr("0:5:60").tolist() == list(range(0, 61, 5))
    assert parse_snr("10").tolist() == [10.0]
    assert parse_snr("0:0.1:0.3").tolist() == pytest.approx([0.0, 0.1, 0.2, 0.3])


def test_geometry_golden(workdir):
    assert main(["geometry", "--n1", "3", "--n2", "3", "--m1", "4", "--m2", "4", "--out", "g.json"]) == 0
    doc = _json("g.json")
    assert sorted(doc) == ["manifest", "result"]
    assert sorted(doc["manifest"]) == MANIFEST_KEYS
    assert doc["result"] == {"d_ks": 5, "d_std": 7, "gap": 2, "pair_rank": 14, "region": "R4b"}


def test_capacity_golden(workdir):
    args = ["capacity", "--kappa1", "1", "--kappa2", "1", "--nu1", "0.5", "--nu2", "0.5", "--sigma2", "0.01", "--out", "c.json"]
    assert main(args) == 0
    res = _json("c.json")["result"]
    assert sorted(res) == ["lower", "prelog_lower", "prelog_upper", "upper"]
    assert res["upper"] == pytest.approx(1.6610, abs=1e-4)


def test_bounds_golden(workdir):
    assert main(["bounds", *DIMS, "--classes", "3", "--snr-db", "10:10:30", "--out", "b.json"]) == 0
    res = _json("b.json")["result"]
    assert sorted(res) == [
        "angle_bound", "angle_reason", "c1", "pairs", "pairwise_bound", "snr_db", "t1", "t2", "union_bound",
    ]
    assert res["pairs"] == [[0, 1], [0, 2], [1, 2]]
    assert len(res["union_bound"]) == 3 and len(res["angle_bound"][0]) == 3


def test_bounds_degenerate_pair_gives_nulls(workdir):
    assert main(["synth", *DIMS, "--per-class", "1", "--sigma2", "0", "--ensemble-out", "e.ksd", "--out", "d.kst"]) == 0
    text = open("e.ksd").read().splitlines()
    # make class 1 a copy of class 0
    body = [i for i, ln in enumerate(text) if ln == ""]
    a0, b0 = text[body[0] + 1 : body[1]], text[body[1] + 1 : body[2]]
    text = text[: body[2]] + [""] + a0 + [""] + b0
    open("same.ksd", "w").write("\n".join(text) + "\n")
    assert main(["bounds", *DIMS, "--snr-db", "20", "--ensemble", "same.ksd", "--out", "b.json"]) == 0
    raw = open("b.json").read()
    assert "NaN" not in raw
    res = json.loads(raw)["result"]
    assert res["angle_bound"] == [[None]] and res["c1"] == [None] and res["angle_reason"][0]


def test_simulate_csv_golden(workdir):
    assert main(["simulate", *DIMS, "--snr-db", "0:10:20", "--trials", "300", "--out", "s.csv"]) == 0
    rows = _csv("s.csv")
    assert rows[0] == ["snr_db", "pe", "stderr", "trials"]
    assert [r[0] for r in rows[1:]] == ["0.0", "10.0", "20.0"]
    assert _manifest_line("s.csv")["command"] == "simulate"


def test_simulate_identical_classes(workdir):
    args = ["simulate", *DIMS, "--snr-db", "0:20:40", "--trials", "2000", "--identical-classes", "--format", "json"]
    assert main(args + ["--out", "s.json"]) == 0
    res = _json("s.json")["result"]
    assert sorted(res) == [
        "classes", "errors", "estimator", "pe", "snr_db", "stderr", "trials", "upper95", "upper95_reason",
    ]
    assert np.allclose(res["pe"], 0.5, atol=3 * np.sqrt(0.25 / 4000))


def test_simulate_thread_count_independent(workdir):
    base = ["simulate", *DIMS, "--snr-db", "0:5:10", "--trials", "5000"]
    assert main(base + ["--workers", "1", "--out", "a.csv"]) == 0
    assert main(base + ["--workers", "4", "--out", "b.csv"]) == 0
    assert _csv("a.csv") == _csv("b.csv")


def test_simulate_zero_cells_report_upper_bound(workdir):
    args = ["simulate", "--m1", "8", "--m2", "8", "--n1", "1", "--n2", "1", "--snr-db", "60", "--trials", "100", "--format", "json"]
    assert main(args + ["--out", "s.json"]) == 0
    res = _json("s.json")["result"]
    assert res["pe"] == [0.0] and res["upper95"] == [0.03] and res["upper95_reason"] == [None]


def test_learn_classify_end_to_end(workdir):
    common = ["--m1", "12", "--m2", "12", "--n1", "3", "--n2", "4", "--sigma2", "1e-4", "--seed", "5"]
    assert main(["synth", *common, "--per-class", "10", "--out", "train.kst"]) == 0
    assert main(["synth", *common, "--per-class", "25", "--data-stream", "1", "--out", "test.kst"]) == 0
    assert main(["learn", "--data", "train.kst", "--n1", "3", "--n2", "4", "--out", "m.ksd", "--history", "h.csv"]) == 0
    assert main(["classify", "--model", "m.ksd", "--data", "test.kst", "--out", "c.csv"]) == 0
    hist = _csv("h.csv")
    assert hist[0] == ["iteration", "objective"]
    vals = [float(r[1]) for r in hist[1:]]
    assert all(b <= a * (1 + 1e-9) for a, b in zip(vals, vals[1:]))
    rows = _csv("c.csv")
    assert rows[0] == ["index", "label", "predicted", "nre", "error_0", "error_1"]
    acc = np.mean([r[1] == r[2] for r in rows[1:]])
    assert acc >= 0.95
    assert len(load_tensor_file("test.kst")) == 50


@pytest.mark.parametrize(
    "argv",
    [
        ["geometry", "--n1", "3", "--n2", "3", "--m1", "4"],
        ["geometry", "--n1", "x", "--n2", "3", "--m1", "4", "--m2", "4"],
        ["geometry", "--n1", "3", "--n2", "3", "--m1", "2", "--m2", "4"],
        ["capacity", "--kappa1", "nan", "--kappa2", "1", "--nu1", ".5", "--nu2", ".5", "--sigma2", ".1"],
        ["capacity", "--kappa1", "1", "--kappa2", "1", "--nu1", "2", "--nu2", ".5", "--sigma2", ".1"],
        ["simulate", *DIMS, "--snr-db", "0:-5:10", "--trials", "10"],
        ["simulate", *DIMS, "--snr-db", "0:5:10", "--trials", "0"],
        ["simulate", *DIMS, "--snr-db", "0:5:10", "--trials", "10", "--rule", "bayes"],
        ["frobnicate"],
    ],
)
def test_usage_errors(workdir, argv, capsys):
    assert main(argv) == 2
    assert "error" in capsys.readouterr().err


def test_usage_error_names_flag(workdir, capsys):
    main(["simulate", *DIMS, "--snr-db", "0:5:10", "--trials", "ten"])
    assert "--trials" in capsys.readouterr().err


def test_runtime_errors(workdir, capsys):
    assert main(["learn", "--data", "missing.kst", "--n1", "2", "--n2", "2", "--out", "m.ksd"]) == 1
    assert "missing.kst" in capsys.readouterr().err
    open("bad.kst", "w").write("kst 1 2 2 2 2\n0 1\n\n1 2\n")
    assert main(["learn", "--data", "bad.kst", "--n1", "1", "--n2", "1", "--out", "m.ksd"]) == 1
    assert "line" in capsys.readouterr().err
    open("nomanifest.csv", "w").write("a,b\n1,2\n")
    assert main(["rerun", "nomanifest.csv"]) == 1


def test_rerun_reproduces_bytes(workdir):
    assert main(["synth", *DIMS, "--per-class", "3", "--sigma2", "0.01", "--out", "d.kst", "--ensemble-out", "e.ksd"]) == 0
    assert main(["simulate", *DIMS, "--snr-db", "0:10:20", "--trials", "200", "--format", "json", "--out", "s.json"]) == 0
    for f in ("d.kst", "e.ksd", "s.json"):
        assert main(["rerun", f, "--out", "re_" + f]) == 0
        assert open(f, "rb").read() == open("re_" + f, "rb").read()
