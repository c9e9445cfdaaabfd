import json
import os
import subprocess
import sys

import numpy as np
import pytest

from mmot.cli import main
from mmot.marginals import OptionQuote, generate, ModelParams, write_quotes
from mmot.grid import make_uniform


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def last_json(text):
    return json.loads(text.strip().splitlines()[-1])


@pytest.fixture(scope="module")
def files(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["gen", "--n-steps", "3", "--m", "40", "--paths", "4000", "--out", str(d / "m3.json")]) == 0
    assert main(["gen", "--n-steps", "4", "--horizon", "1.3333333333333333", "--m", "40", "--paths", "4000",
                 "--out", str(d / "m4.json")]) == 0
    assert main(["solve", "--marginals", str(d / "m3.json"), "--out", str(d / "s3.json")]) == 0
    return d


def test_gen_writes_loadable_marginals(files, capsys):
    code, out, _ = run(capsys, "gen", "--n-steps", "2", "--m", "30", "--paths", "2000", "--out", files / "g.json")
    assert code == 0
    summary = last_json(out)
    assert summary["n_steps"] == 2 and summary["m"] == 30
    assert np.allclose(summary["means"], 1.0, atol=1e-9)


def test_solve_then_warm_restart(files, capsys):
    code, out, _ = run(capsys, "solve", "--marginals", files / "m3.json", "--warm", files / "s3.json",
                       "--out", files / "w.json")
    assert code == 0
    rep = last_json(out)
    assert rep["converged"] and rep["iters"] <= 2


def test_append_matches_cold_solve(files, capsys):
    code, out, _ = run(capsys, "append", "--prev", files / "s3.json", "--new", files / "m4.json",
                       "--out", files / "a.json")
    assert code == 0
    app = last_json(out)
    assert app["converged"]
    code, out, _ = run(capsys, "solve", "--marginals", files / "m4.json", "--out", files / "c.json")
    cold = last_json(out)
    assert app["dual_value"] == pytest.approx(cold["dual_value"], abs=1e-6)


def test_price_widening_arithmetic(capsys):
    code, out, _ = run(capsys, "price", "--bounds", "4.23,4.57", "--gamma", "0.05", "--delta", "0.10")
    assert code == 0
    b = last_json(out)
    assert b["widened"] == pytest.approx([4.13, 4.67], abs=1e-12)
    assert b["mid"] == pytest.approx(4.40, abs=1e-12)


def test_price_from_marginals_brackets(files, capsys):
    code, out, _ = run(capsys, "price", "--marginals", files / "m3.json", "--payoff", "forward_start:1.0")
    assert code == 0
    b = last_json(out)
    assert b["lower"] <= b["upper"]


def test_hedge_writes_errors(files, capsys):
    code, out, _ = run(capsys, "hedge", "--marginals", files / "m3.json", "--paths", "500",
                       "--out", files / "err.csv")
    assert code == 0
    assert (files / "err.csv").exists()
    assert "delta_lipschitz" in last_json(out)


def test_calibrate_round_trip(tmp_path, capsys):
    g = make_uniform(0.4, 2.0, 60)
    seq = generate(ModelParams(paths=4000, horizon=1.0), [0.0, 0.5, 1.0], g)
    quotes = [OptionQuote(K, float(seq.times[t]), float(seq[t].call_prices([K])[0]), 0.002)
              for t in (1, 2) for K in (0.8, 0.9, 1.0, 1.1, 1.2)]
    write_quotes(tmp_path / "q.csv", quotes)
    code, out, _ = run(capsys, "calibrate", "--quotes", tmp_path / "q.csv", "--forward", "1.0", "--m", "60",
                       "--out", tmp_path / "cal.json")
    assert code == 0
    res = last_json(out)
    assert len(res["deltas"]) == 2
    assert res["max_repricing_error"] < 0.01


def test_study_outputs(tmp_path, capsys):
    code, out, _ = run(capsys, "study", "convergence", "--param", "n_steps=2", "--param", "m=30",
                       "--out", tmp_path / "c.csv", "--gnuplot", tmp_path / "c.gp")
    assert code == 0
    assert (tmp_path / "c.csv").read_text().startswith("iter,")
    assert "c.csv" in (tmp_path / "c.gp").read_text()


def test_study_unknown_param_is_input_error(capsys):
    code, _, err = run(capsys, "study", "convergence", "--param", "bogus=1")
    assert code == 2
    assert json.loads(err)["code"] == 2


def test_oracle_tiny(tmp_path, capsys):
    from mmot.fixtures import tiny_sequence

    seq = tiny_sequence(np.random.default_rng(3), 2, 4)
    seq.save(tmp_path / "t.json")
    code, out, _ = run(capsys, "oracle", "--marginals", tmp_path / "t.json")
    assert code == 0
    r = last_json(out)
    assert r["min"] <= r["max"] + 1e-12


@pytest.mark.parametrize("content", ["{not json", '{"grid": [1, 2]}', "[]"])
def test_malformed_file_exit_2(tmp_path, capsys, content):
    p = tmp_path / "bad.json"
    p.write_text(content)
    code, out, err = run(capsys, "solve", "--marginals", p, "--out", tmp_path / "o.json")
    assert code == 2 and out == ""
    lines = err.strip().splitlines()
    assert len(lines) == 1
    obj = json.loads(lines[0])
    assert set(obj) == {"error", "code", "message"} and obj["code"] == 2


def test_missing_file_exit_2(tmp_path, capsys):
    code, _, err = run(capsys, "solve", "--marginals", tmp_path / "nope.json", "--out", tmp_path / "o.json")
    assert code == 2 and json.loads(err)["code"] == 2


def test_numerical_failure_exit_3(files, capsys):
    code, _, err = run(capsys, "solve", "--marginals", files / "m3.json", "--max-iters", "2",
                       "--out", files / "x.json")
    assert code == 3
    assert json.loads(err)["code"] == 3


def _cli(args, env_extra=None):
    env = dict(os.environ, **(env_extra or {}))
    return subprocess.run([sys.executable, "-m", "mmot.cli", *map(str, args)], capture_output=True, text=True,
                          env=env, check=True)


def test_output_identical_across_runs_and_threads(files):
    args = ["solve", "--marginals", files / "m3.json", "--out", files / "d.json"]
    a = _cli(args, {"MMOT_THREADS": "1"})
    sol_a = (files / "d.json").read_bytes()
    b = _cli(args, {"MMOT_THREADS": "4"})
    sol_b = (files / "d.json").read_bytes()
    strip = lambda s: {k: v for k, v in json.loads(s).items() if k != "wall_time"}
    assert strip(a.stdout) == strip(b.stdout)
    pa, pb = json.loads(sol_a), json.loads(sol_b)
    for d in (pa, pb):
        for k in ("wall_time", "frozen_time", "refine_time"):
            d["report"].pop(k)
    assert pa == pb
