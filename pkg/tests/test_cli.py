import csv
import json
import math
from pathlib import Path

import numpy as np
import pytest

from sdlkit.cli import main
from sdlkit.diagnostics import conditioning
from sdlkit.io import load_labels, load_matrix_csv
from sdlkit.loss import SdlProblem
from sdlkit.datasets import bundled


def read_table(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def snapshot(folder: Path) -> dict:
    return {p.name: p.read_bytes() for p in sorted(folder.iterdir())}


def test_train_bcd_tiny_monotone_trace(tmp_path):
    assert main(["train", "--bundled", "tiny", "--solver", "bcd-filt", "--iters", "50", "--out", str(tmp_path)]) == 0
    rows = read_table(tmp_path / "report.csv")
    assert [int(r["iter"]) for r in rows] == list(range(1, 51))
    losses = [float(r["loss"]) for r in rows]
    assert all(b <= a for a, b in zip(losses, losses[1:]))
    assert all(float(r["elapsed_s"]) == 0.0 for r in rows)
    manifest = json.loads((tmp_path / "model.json").read_text())
    assert manifest["format"] == "sdlkit-model/1" and manifest["solver"] == "bcd-filt"
    W = load_matrix_csv(tmp_path / manifest["files"]["W"])
    assert W.shape == (20, 2)
    assert "gamma" not in manifest["files"]
    metrics = json.loads((tmp_path / "metrics.json").read_text())
    assert 0 <= metrics["train"]["accuracy"] <= 1


def test_train_is_byte_deterministic(tmp_path):
    args = ["train", "--bundled", "tiny", "--solver", "bcd-feat", "--iters", "10", "--seed", "5"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    assert snapshot(tmp_path / "a") == snapshot(tmp_path / "b")
    assert main(["train", "--bundled", "tiny", "--solver", "bcd-feat", "--iters", "10", "--seed", "6",
                 "--out", str(tmp_path / "c")]) == 0
    assert snapshot(tmp_path / "a")["W.csv"] != snapshot(tmp_path / "c")["W.csv"]


def test_conv_filt_loss_gap_halving(tmp_path):
    d = bundled("well_conditioned")
    xi, nu = d.suggested["xi"], d.suggested["nu"]
    rep = conditioning(SdlProblem(d.X, d.y, 1, 2, xi=xi, nu=nu), 1.0)
    assert rep.condition_ok
    rho = rep.rho(rep.tau_mid)
    k = math.ceil(math.log(2) / math.log(1 / rho))
    assert main(["train", "--bundled", "well_conditioned", "--solver", "conv-filt", "--xi", str(xi), "--nu", str(nu),
                 "--iters", "300", "--out", str(tmp_path)]) == 0
    losses = np.array([float(r["loss"]) for r in read_table(tmp_path / "report.csv")])
    gap = losses - losses[-1]
    floor = 1e-10 * abs(losses[-1])
    checked = 0
    for t in range(3, len(gap) - k):
        if gap[t] > floor:
            assert gap[t + k] <= 0.5 * gap[t]
            checked += 1
    assert checked >= 3
    assert json.loads((tmp_path / "metrics.json").read_text())["tau"] == rep.tau_mid


def test_predict_roundtrip(tmp_path):
    assert main(["train", "--bundled", "tiny", "--iters", "20", "--out", str(tmp_path / "m")]) == 0
    assert main(["simulate", "--bundled", "tiny", "--out", str(tmp_path / "d")]) == 0
    assert main(["predict", "--model", str(tmp_path / "m" / "model.json"), "--data", str(tmp_path / "d" / "data.csv"),
                 "--labels", str(tmp_path / "d" / "labels.csv"), "--out", str(tmp_path / "p")]) == 0
    rows = read_table(tmp_path / "p" / "predictions.csv")
    assert len(rows) == 60
    for r in rows:
        probs = [float(r["p0"]), float(r["p1"])]
        assert abs(sum(probs) - 1) < 1e-12 and int(r["label"]) == int(np.argmax(probs))
    train = json.loads((tmp_path / "m" / "metrics.json").read_text())["train"]
    test = json.loads((tmp_path / "p" / "metrics.json").read_text())["test"]
    assert train["accuracy"] == test["accuracy"]


def test_simulate_writes_loadable_files(tmp_path):
    cfg = tmp_path / "sim.yaml"
    cfg.write_text("seed: 3\nsimulate:\n  variant: weak_filter\n  p: 6\n  n: 40\n  r: 2\n  q: 2\n  kappa: 2\n")
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "s")]) == 0
    X = load_matrix_csv(tmp_path / "s" / "data.csv")
    Xa = load_matrix_csv(tmp_path / "s" / "aux.csv")
    y = load_labels(tmp_path / "s" / "labels.csv")
    assert X.shape == (6, 40) and Xa.shape == (2, 40) and y.shape == (40,) and y.max() <= 2
    meta = json.loads((tmp_path / "s" / "simulate.json").read_text())
    for f in meta["truth_files"].values():
        load_matrix_csv(tmp_path / "s" / f)
    # the written files train end to end, with aux covariates
    assert main(["train", "--data", str(tmp_path / "s" / "data.csv"), "--aux", str(tmp_path / "s" / "aux.csv"),
                 "--labels", str(tmp_path / "s" / "labels.csv"), "--iters", "5", "--out", str(tmp_path / "t")]) == 0
    manifest = json.loads((tmp_path / "t" / "model.json").read_text())
    assert manifest["kappa"] == int(y.max()) and load_matrix_csv(tmp_path / "t" / "gamma.csv").shape == (2, 2)


def test_strong_simulation(tmp_path):
    cfg = tmp_path / "sim.yaml"
    cfg.write_text("simulate:\n  variant: strong_filter\n  p: 5\n  n: 30\n  q: 1\n")
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    assert load_matrix_csv(tmp_path / "truth_h.csv").shape == (2, 1)


def test_check_conditioning_prints_report(tmp_path, capsys):
    assert main(["check-conditioning", "--bundled", "well_conditioned", "--solver", "conv-filt",
                 "--xi", "450", "--nu", "300"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["condition_ok"] is True and rep["ratio"] < 3
    assert rep["tau_interval"][0] < rep["tau_mid"] < rep["tau_interval"][1]
    # a failing condition is still exit 0
    assert main(["check-conditioning", "--bundled", "tiny", "--xi", "100", "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "conditioning.json").read_text())
    assert rep["condition_ok"] is False and rep["tau_interval"] is None


def test_config_and_flag_precedence(tmp_path):
    cfg = tmp_path / "run.yaml"
    cfg.write_text("seed: 2\nout: from_config\ndata:\n  bundled: tiny\nmodel:\n  solver: bcd-filt\n  iters: 7\n"
                   "  xi: 3.0\n  constraints:\n    dict: {kind: nonneg_ball, radius: 5}\n    code: {kind: nonneg}\n")
    assert main(["train", "--config", str(cfg), "--iters", "4"]) == 0
    out = tmp_path / "from_config"
    manifest = json.loads((out / "model.json").read_text())
    assert manifest["xi"] == 3.0 and manifest["seed"] == 2
    assert manifest["constraints"]["dict"]["kind"] == "nonneg_ball"
    assert len(read_table(out / "report.csv")) == 4
    assert load_matrix_csv(out / "W.csv").min() >= 0 and load_matrix_csv(out / "H.csv").min() >= 0


def test_bench_pareto_and_curves(tmp_path):
    cfg = tmp_path / "p.yaml"
    cfg.write_text("data: {bundled: tiny}\nmodel: {solver: bcd-filt, iters: 5, nu: 0.1}\n"
                   "pareto: {methods: [lr, nmf-lr, bcd-filt], xi: [0.5, 2.0], seeds: 2}\n"
                   "curves: {solvers: [bcd-filt, conv-filt], xi: [1.0]}\n")
    assert main(["bench-pareto", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    rows = read_table(tmp_path / "o" / "pareto.csv")
    assert len(rows) == 6
    assert list(rows[0]) == ["method", "xi", "recon_rel", "recon_rel_sd", "accuracy", "accuracy_sd", "f_score",
                             "f_score_sd", "seed"]
    assert all(float(r["recon_rel"]) == 1.0 for r in rows if r["method"] == "lr")
    assert main(["bench-curves", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    crow = read_table(tmp_path / "o" / "curves.csv")
    assert len(crow) == 10 and {r["solver"] for r in crow} == {"bcd-filt", "conv-filt"}


def test_consistency_noiseless_and_deterministic(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("consistency: {n: [100, 200], seeds: 2, sigma: 1.0e-12}\n")
    for sub in ("a", "b"):
        assert main(["consistency", "--config", str(cfg), "--out", str(tmp_path / sub)]) == 0
    assert snapshot(tmp_path / "a") == snapshot(tmp_path / "b")
    rows = read_table(tmp_path / "a" / "consistency.csv")
    assert all(float(r["recon_mean"]) <= 1e-4 for r in rows)
    meta = json.loads((tmp_path / "a" / "consistency.json").read_text())
    assert "slope" in meta and meta["n"] == [100, 200]


@pytest.mark.parametrize("argv", [
    ["train", "--data", "/nonexistent/data.csv", "--labels", "/nonexistent/y.csv"],
    ["train", "--bundled", "tiny", "--nu", "-1"],
    ["train", "--bundled", "tiny", "--rank", "0"],
    ["train", "--bundled", "tiny", "--seed", "-3"],
    ["train", "--bundled", "tiny", "--solver", "bcd-filt", "--mode", "feature"],
    ["predict", "--bundled", "tiny"],
    ["train"],
])
def test_bad_input_exits_2(argv, tmp_path):
    assert main(argv + ["--out", str(tmp_path)]) == 2


def test_bad_config_exits_2(tmp_path):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("model: [1, 2\n")
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    cfg.write_text("- just\n- a list\n")
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path)]) == 2


def test_unknown_flag_value_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["train", "--solver", "sgd"])
    assert exc.value.code == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numeric_failure_exits_3(tmp_path):
    assert main(["train", "--bundled", "tiny", "--solver", "conv-filt", "--tau", "1e6", "--iters", "200",
                 "--out", str(tmp_path)]) == 3
