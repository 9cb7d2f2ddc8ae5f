import json
import subprocess
import sys

import pytest

from mirrormdp import cli, io
from mirrormdp.mdp_core import Policy, optimal_gain_rvi
from mirrormdp.model_estimation import required_samples_constraint


def write_single_state(tmp_path, reward=0.7):
    path = tmp_path / "one.json"
    path.write_text(
        json.dumps({"num_states": 1, "actions": [["stay"]], "transitions": [[1.0]], "rewards": [reward]})
    )
    return f"json:{path}"


def solve_args(tmp_path, tag, *extra):
    return [
        "solve",
        "--env", "riverswim",
        "--iters", "3000",
        "--tmix", "163",
        "--seed", "1",
        "--trace-csv", str(tmp_path / f"{tag}.csv"),
        "--summary-json", str(tmp_path / f"{tag}.json"),
        "--policy-json", str(tmp_path / f"{tag}_policy.json"),
        *extra,
    ]


def test_solve_writes_outputs(tmp_path, capsys):
    assert cli.main(solve_args(tmp_path, "a")) == cli.EXIT_OK
    lines = (tmp_path / "a.csv").read_text().splitlines()
    assert lines[0] == "iter,productive,chosen_pair,vbar,max_constraint,elapsed_ms"
    assert len(lines) == 3001
    summary = json.loads((tmp_path / "a.json").read_text())
    assert summary["iterations_executed"] == 3000
    assert summary["iterations_theoretical"] > 10**12
    assert summary["productive_steps"] + summary["nonproductive_steps"] == 3000
    assert summary["pre_samples_per_pair"] == 1000
    assert summary["gap"] == pytest.approx(summary["optimal_value"] - summary["policy_value"])
    assert summary["comm"] is None
    policy = json.loads((tmp_path / "a_policy.json").read_text())
    assert len(policy["by_state"]) == 6
    assert "v*=" in capsys.readouterr().out


def test_outputs_are_byte_identical(tmp_path):
    cli.main(solve_args(tmp_path, "a"))
    cli.main(solve_args(tmp_path, "b"))
    for suffix in (".csv", ".json", "_policy.json"):
        assert (tmp_path / f"a{suffix}").read_bytes() == (tmp_path / f"b{suffix}").read_bytes()


@pytest.mark.parametrize("transport", ["threads", "inline"])
def test_parallel_trace_matches_sequential(tmp_path, transport):
    cli.main(solve_args(tmp_path, "seq"))
    cli.main(solve_args(tmp_path, "par", "--mode", "parallel", "--workers", "12", "--transport", transport))
    assert (tmp_path / "seq.csv").read_bytes() == (tmp_path / "par.csv").read_bytes()
    assert (tmp_path / "seq_policy.json").read_bytes() == (tmp_path / "par_policy.json").read_bytes()
    comm = json.loads((tmp_path / "par.json").read_text())["comm"]
    assert comm["iterations"] == 3000 and comm["bits_per_sample"] == 3


def test_timing_column(tmp_path):
    cli.main(solve_args(tmp_path, "t", "--timing"))
    row = (tmp_path / "t.csv").read_text().splitlines()[5].split(",")
    assert row[-1] != "" and float(row[-1]) >= 0


def test_access_control_pre_samples(tmp_path):
    args = ["solve", "--env", "access-control", "--pre-samples", "500", "--iters", "3000", "--tmix", "51",
            "--summary-json", str(tmp_path / "ac.json")]
    assert cli.main(args) == cli.EXIT_OK
    summary = json.loads((tmp_path / "ac.json").read_text())
    assert summary["pre_samples_per_pair"] == 500 and summary["num_states"] == 44


def test_auto_pre_samples(tmp_path):
    args = solve_args(tmp_path, "auto", "--pre-samples", "auto", "--iters", "2000")
    assert cli.main(args) == cli.EXIT_OK
    n = json.loads((tmp_path / "auto.json").read_text())["pre_samples_per_pair"]
    assert n == required_samples_constraint(6, 12, 0.05, 0.05 / 16, 4 * 163)


def test_auto_tmix(tmp_path):
    args = ["solve", "--iters", "2000", "--tmix-policies", "20", "--summary-json", str(tmp_path / "s.json")]
    assert cli.main(args) == cli.EXIT_OK
    assert json.loads((tmp_path / "s.json").read_text())["t_mix_bound"] > 1


def test_config_file_and_overrides(tmp_path, monkeypatch):
    cfg = tmp_path / "run.toml"
    cfg.write_text('env = "riverswim"\nepsilon = 0.1\niterations = 2500\ntmix = 163\nseed = 9\n')
    args = build(["--config", str(cfg), "solve", "--iters", "1500"])
    run = cli.build_run_config(args)
    assert run.epsilon == 0.1 and run.iterations == 1500 and run.tmix == 163.0 and run.seed == 9


def test_seed_from_environment(monkeypatch):
    monkeypatch.setenv(cli.SEED_ENV, "17")
    assert cli.build_run_config(build(["solve"])).seed == 17
    assert cli.build_run_config(build(["solve", "--seed", "3"])).seed == 3


def build(argv):
    return cli.build_parser().parse_args(argv)


@pytest.mark.parametrize(
    "argv",
    [
        ["solve", "--epsilon", "-1"],
        ["solve", "--env", "nowhere"],
        ["solve", "--pre-samples", "many"],
        ["solve", "--tmix", "0"],
        ["solve", "--mode", "parallel", "--workers", "0"],
        ["solve", "--env", "json:/does/not/exist.json"],
    ],
)
def test_config_errors(argv, capsys):
    assert cli.main(argv) == cli.EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_unknown_config_key(tmp_path):
    cfg = tmp_path / "bad.toml"
    cfg.write_text("colour = 3\n")
    assert cli.main(["--config", str(cfg), "solve"]) == cli.EXIT_CONFIG


def test_solver_error_exit_code(capsys):
    assert cli.main(["solve", "--iters", "1", "--tmix", "163"]) == cli.EXIT_SOLVER
    assert "no productive step" in capsys.readouterr().err


def test_optimal(tmp_path, capsys, riverswim):
    assert cli.main(["optimal", "--env", write_single_state(tmp_path)]) == 0
    assert float(capsys.readouterr().out.split()[0]) == pytest.approx(0.7)
    cli.main(["optimal", "--env", "riverswim"])
    out = capsys.readouterr().out.splitlines()
    assert float(out[0]) == pytest.approx(optimal_gain_rvi(riverswim).gain, abs=1e-9)
    assert out[1:] == [f"state {i}: right" for i in range(6)]


def test_eval(tmp_path, capsys, riverswim):
    path = tmp_path / "left.json"
    io.write_json(path, io.policy_to_json(Policy.deterministic(riverswim, ["left"] * 6), riverswim))
    assert cli.main(["eval", "--env", "riverswim", "--policy", str(path)]) == 0
    assert float(capsys.readouterr().out) == pytest.approx(0.005, abs=1e-10)

    path.write_text(json.dumps({"by_state": [[0.5, 0.5]] * 6}))
    cli.main(["eval", "--policy", str(path)])
    assert 0.0 <= float(capsys.readouterr().out) <= 1.0

    best = optimal_gain_rvi(riverswim)
    io.write_json(path, io.policy_to_json(best.policy, riverswim))
    cli.main(["eval", "--policy", str(path)])
    assert float(capsys.readouterr().out) == pytest.approx(best.gain, abs=1e-8)


def test_eval_bad_policy(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"probs": [0.5] * 3}))
    assert cli.main(["eval", "--policy", str(path)]) == cli.EXIT_CONFIG


def test_mixing_time(tmp_path, capsys):
    assert cli.main(["mixing-time", "--env", write_single_state(tmp_path)]) == 0
    assert capsys.readouterr().out.strip() == "1"
    cli.main(["mixing-time", "--policies", "30", "--seed", "2"])
    assert int(capsys.readouterr().out) > 1


def test_module_entry_point():
    out = subprocess.run(
        [sys.executable, "-m", "mirrormdp", "optimal", "--env", "riverswim"], capture_output=True, text=True, check=True
    )
    assert out.stdout.startswith("0.857")
