"""
Tests for the command-line front door
"""
import json

import pytest

from cli.config import build_config, load_config_file, parse_deltas
from cli.runner import main
from logic.errors import ConfigError, ConvergenceError


def run_ok(args, out):
    assert main(args + ["--out", str(out)]) == 0


def read_report(path):
    return json.loads(path.read_text(encoding="utf-8"))


def error_record(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_solve_writes_artifacts(tmp_path):
    run_ok(["solve", "random:3"], tmp_path)
    run_dir = tmp_path / "solve-random-3"
    assert (run_dir / "solution.csv").read_text(encoding="utf-8").startswith("s,v_star\n")
    q_header = (run_dir / "solution_q.csv").read_text(encoding="utf-8").splitlines()[0]
    assert q_header == "s,a,q_star,advantage,policy_flag"
    report = read_report(run_dir / "report.json")
    assert report["command"] == "solve"
    assert report["seed"] == 0
    assert report["result"]["residual"] <= 1e-10


@pytest.mark.parametrize("command,extra", [
    ("solve", []),
    ("fit", ["--per-pair", "25", "--seed", "11"]),
    ("audit", []),
    ("synthesize", ["--delta", "0"]),
    ("sweep", ["--deltas", "0,-0.01,1000", "--workers", "2"]),
    ("finetune", ["--budget", "3"]),
    ("reproduce", []),
])
def test_reruns_are_byte_identical(tmp_path, command, extra):
    first, second = tmp_path / "first", tmp_path / "second"
    run_ok([command, "random:5"] + extra, first)
    run_ok([command, "random:5"] + extra, second)
    files = sorted(p.name for p in (first / f"{command}-random-5").iterdir())
    assert "report.json" in files
    for name in files:
        a = (first / f"{command}-random-5" / name).read_bytes()
        b = (second / f"{command}-random-5" / name).read_bytes()
        assert a == b, name


def test_sweep_csv_rows(tmp_path):
    run_ok(["sweep", "random:1", "--deltas", "0,1000"], tmp_path)
    lines = (tmp_path / "sweep-random-1" / "sweep.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "delta,undefined_count,max_jump,continuous,agreement_fraction"
    assert len(lines) == 3
    assert lines[2].startswith("1000.0,18,")


def test_synthesize_zero_delta_is_optimal(tmp_path):
    run_ok(["synthesize", "random:1", "--delta", "0"], tmp_path)
    result = read_report(tmp_path / "synthesize-random-1" / "report.json")["result"]
    assert result["undefined_count"] == 0
    assert result["agreement_fraction"] == 1.0
    assert result["delta_error_max"] <= 1e-6


def test_fit_reports_mean_and_mode(tmp_path):
    run_ok(["fit", "random:2", "--per-pair", "20"], tmp_path)
    run_dir = tmp_path / "fit-random-2"
    result = read_report(run_dir / "report.json")["result"]
    assert result["records"] == 6 * 3 * 20
    assert set(result) >= {"mean", "mode", "j_optimal"}
    assert (run_dir / "fit.csv").read_text(encoding="utf-8").startswith("s,a,f_mean,f_mode\n")
    assert (run_dir / "dataset.csv").exists()


def test_constrained_fit_needs_dataset(tmp_path, capsys):
    assert main(["fit", "random:2", "--penalty-weight", "1", "--out", str(tmp_path)]) == 2
    assert error_record(capsys)["error"] == "usage"


def test_reproduce_perfect_model_floor(tmp_path):
    run_ok(["reproduce", "random:4"], tmp_path)
    result = read_report(tmp_path / "reproduce-random-4" / "report.json")["result"]
    assert result["floor"] == 0.0
    assert 0.0 <= result["disagreement_fraction"] <= 1.0


def test_unknown_scenario_exit_code(tmp_path, capsys):
    assert main(["solve", "battery9", "--out", str(tmp_path)]) == 3
    record = error_record(capsys)
    assert record["error"] == "unknown_scenario"
    assert record["exit_code"] == 3
    assert "battery9" in record["message"]


def test_bad_flags_are_usage_errors(tmp_path, capsys):
    assert main(["solve", "random:1", "--states", "0", "--out", str(tmp_path)]) == 2
    assert error_record(capsys)["exit_code"] == 2
    assert main(["explode", "random:1"]) == 2
    assert main(["solve", "random:1", "--tol", "abc"]) == 2


def test_unwritable_output(tmp_path, capsys):
    blocker = tmp_path / "blocker"
    blocker.write_text("", encoding="utf-8")
    assert main(["solve", "random:1", "--out", str(blocker)]) == 4
    assert error_record(capsys)["error"] == "output"


def test_non_convergence_exit_code(tmp_path, capsys, monkeypatch):
    def stalled(*args, **kwargs):
        raise ConvergenceError("value iteration did not converge", residual=1e-3, iterations=7)

    monkeypatch.setattr("cli.commands.solve_mdp", stalled)
    assert main(["solve", "random:1", "--out", str(tmp_path)]) == 5
    record = error_record(capsys)
    assert record["residual"] == 1e-3
    assert record["iterations"] == 7


def test_output_root_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("DOM_LAB_OUT", str(tmp_path / "env-root"))
    assert main(["solve", "random:1"]) == 0
    assert (tmp_path / "env-root" / "solve-random-1" / "report.json").exists()


def test_flags_override_config_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# seeds\nseed = 5\nper-pair=7\n\ndeltas=0.1,0.2\n", encoding="utf-8")
    config = build_config("fit", "random:1", {"seed": 9, "per_pair": None}, str(path))
    assert config.seed == 9
    assert config.per_pair == 7
    assert config.deltas == (0.1, 0.2)


def test_config_file_errors(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("colour=blue\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config_file(path)
    path.write_text("seed\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config_file(path)
    with pytest.raises(ConfigError):
        load_config_file(tmp_path / "missing.cfg")


def test_parse_deltas_range():
    deltas = parse_deltas("0.095:0.125:0.005")
    assert len(deltas) == 7
    assert deltas[0] == 0.095 and deltas[-1] == 0.125
    assert parse_deltas("0.1, 0.11,0.15") == (0.1, 0.11, 0.15)


def test_header_records_config():
    config = build_config("sweep", "random:2", {"seed": 3})
    header = config.header()
    assert header["seed"] == 3
    assert header["config"]["deltas"] == [0.10, 0.11, 0.15]
    assert "out" not in header["config"]
    assert config.output_dir.name == "sweep-random-2"
