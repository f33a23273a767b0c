import csv
import io
import json
import subprocess
import sys

import pytest

from catgrad.cli import main

FAST = ["--epochs", "1", "--steps-per-epoch", "5", "--L", "3", "--batch", "16"]


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def test_verify_healthy(capsys):
    code, out, _ = run(["verify", "--instances", "40"], capsys)
    assert code == 0
    assert out.splitlines()[-1].startswith("OK: 16/16")
    assert all(line.startswith(("PASS", "OK")) for line in out.splitlines())


def test_verify_json(capsys):
    code, out, _ = run(["verify", "--instances", "20", "--json"], capsys)
    report = json.loads(out)
    assert code == 0 and report["passed"] is True
    assert len(report["checks"]) == 16
    assert {"check", "passed", "max_residual", "tolerance", "instances"} <= set(report["checks"][0])


def test_verify_negative_control_names_instance(capsys):
    code, out, _ = run(["verify", "--corrupt-reinmax"], capsys)
    assert code == 1
    line = next(l for l in out.splitlines() if "reinmax_expectation_equals_second_order" in l)
    assert line.startswith("FAIL") and "replay: seed=0 instance=" in line and " n=" in line
    assert out.splitlines()[-1].startswith("FAILED")
    # the ordinary checks that do not involve ReinMax still pass
    assert "PASS st_expectation_equals_first_order" in out


def test_train_contract(tmp_path, capsys):
    path = tmp_path / "run.csv"
    code, out, _ = run(["train", "--estimator", "reinmax", "--p", "2", "--L", "16", "--batch", "256",
                        "--epochs", "40", "--steps-per-epoch", "100", "--lr", "0.001", "--seed", "0",
                        "--out", str(path)], capsys)
    assert code == 0 and out == ""
    lines = path.read_text().splitlines()
    body = [l for l in lines[1:] if not l.startswith("#")]
    assert len(body) == 4000
    assert [l.split("=")[0] for l in lines if l.startswith("#")] == ["# final_loss",
                                                                     "# mean_loss_last_epoch"]
    final = float(lines[-1].split("=")[1])
    assert abs(final - 0.2025) / 0.2025 < 0.05


def test_train_invalid_p(capsys):
    code, _, err = run(["train", "--p", "0.5"], capsys)
    assert code == 1
    assert "p: requires p > 1" in err


@pytest.mark.parametrize("argv", [["train", "--bogus"], ["frobnicate"], [], ["train", "--L", "x"]])
def test_usage_errors_exit_2(argv, capsys):
    with pytest.raises(SystemExit) as info:
        main(argv)
    assert info.value.code == 2
    assert "usage:" in capsys.readouterr().err


def test_train_json_and_timing(capsys):
    code, out, _ = run(["train", *FAST, "--format", "json"], capsys)
    data = json.loads(out)
    assert code == 0 and len(data["rows"]) == 5
    assert set(data["rows"][0]) == {"epoch", "step", "loss", "cosine_vs_exact", "bias_mode"}
    code, out, _ = run(["train", *FAST, "--timing"], capsys)
    assert out.splitlines()[0].endswith(",wall_time_ms")


def test_config_file_and_override(tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text('estimator = "st"\nsteps-per-epoch = 4\nepochs = 2\nL = 2\nbatch_size = 8\n')
    # batch_size is not a flag name: rejected, naming the key
    code, _, err = run(["train", "--config", str(cfg)], capsys)
    assert code == 1 and "batch_size: unknown key" in err
    cfg.write_text('estimator = "st"\nsteps-per-epoch = 4\nepochs = 2\nL = 2\nbatch = 8\n')
    code, out, _ = run(["train", "--config", str(cfg)], capsys)
    assert code == 0
    assert len([l for l in out.splitlines()[1:] if not l.startswith("#")]) == 8
    code, out2, _ = run(["train", "--config", str(cfg), "--epochs", "1"], capsys)
    assert len([l for l in out2.splitlines()[1:] if not l.startswith("#")]) == 4
    # the flag-only equivalent gives the same bytes
    code, out3, _ = run(["train", "--estimator", "st", "--steps-per-epoch", "4", "--epochs", "2",
                         "--L", "2", "--batch", "8"], capsys)
    assert out3 == out


def test_config_file_errors(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("epochs = [\n")
    code, _, err = run(["train", "--config", str(bad)], capsys)
    assert code == 1 and "config:" in err
    code, _, err = run(["train", "--config", str(tmp_path / "missing.toml")], capsys)
    assert code == 1 and "cannot read" in err


def test_unwritable_output(tmp_path, capsys):
    code, _, err = run(["train", *FAST, "--out", str(tmp_path / "no" / "such" / "dir.csv")], capsys)
    assert code == 1 and "dir.csv" in err


def test_sweep_and_temp_sweep(capsys):
    code, out, _ = run(["sweep", *FAST, "--batch-sizes", "4,8", "--Ls", "2,3"], capsys)
    rows = list(csv.reader(io.StringIO(out)))
    assert code == 0 and len(rows) == 5
    code, out, _ = run(["temp-sweep", *FAST, "--estimators", "st,stgs", "--taus", "0.5,1,2"], capsys)
    rows = list(csv.reader(io.StringIO(out)))
    assert code == 0 and len(rows) == 7
    assert [r[1] for r in rows[1:4]] == ["0.5", "1.0", "2.0"]


def test_bias_eval_and_bench(capsys):
    code, out, _ = run(["bias-eval", *FAST, "--bias-eval-every", "5", "--seeds", "0,1"], capsys)
    rows = list(csv.reader(io.StringIO(out)))
    assert code == 0 and len(rows) == 1 + 2 * 2
    code, out, _ = run(["bench", *FAST, "--steps", "2", "--estimators", "st,gr_mc",
                        "--mc-samples-list", "3,6", "--format", "json"], capsys)
    data = json.loads(out)
    assert code == 0 and [(r["estimator"], r["mc_samples"]) for r in data] == [
        ("st", None), ("gr_mc", 3), ("gr_mc", 6)]


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "catgrad", "train", "--p", "1"],
                          capture_output=True, text=True)
    assert proc.returncode == 1 and "p:" in proc.stderr
    proc = subprocess.run([sys.executable, "-m", "catgrad", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "verify" in proc.stdout
