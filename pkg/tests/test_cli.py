import hashlib
import json

import numpy as np
import pytest
import yaml

from inspectgame.cli import main
from inspectgame.experiments import read_csv, solution_header

SMALL = {
    "model": {"T": 0.25},
    "grid": {"K": 40},
    "sim": {"N": [10, 20, 40, 80], "R": 40, "seed": 11, "dump": 1},
    "epsnash": {"N": [10, 80], "eta": [0.5, 0.1], "rate_R": 40},
}


def config(tmp_path, data=SMALL, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return str(path)


def run(cmd, cfg, out, *extra):
    return main([cmd, "--config", cfg, "--out", str(out), *extra])


def test_solve_single_level(tmp_path):
    cfg = config(tmp_path, {"model": {"levels": [1.0], "T": 0.5}, "grid": {"K": 20}})
    assert run("solve", cfg, tmp_path / "o") == 0
    header, data = read_csv(tmp_path / "o" / "mfg_solution.csv")
    assert header == ["t", "X_1", "V_1", "alpha"]
    assert np.all(data[:, 1] == 1.0)


def test_solution_columns(tmp_path):
    assert run("solve", config(tmp_path), tmp_path / "o") == 0
    header, data = read_csv(tmp_path / "o" / "mfg_solution.csv")
    assert header == solution_header(3) and header[-6:] == [
        "q_1_2", "q_1_3", "q_2_1", "q_2_3", "q_3_1", "q_3_2"]
    assert data.shape == (41, 1 + 3 + 3 + 1 + 6)
    np.testing.assert_allclose(data[:, 1:4].sum(axis=1), 1.0, atol=1e-12)


def test_solve_twice_byte_identical(tmp_path):
    cfg = config(tmp_path)
    assert run("solve", cfg, tmp_path / "a") == 0
    assert run("solve", cfg, tmp_path / "b") == 0
    a = (tmp_path / "a" / "mfg_solution.csv").read_bytes()
    assert a == (tmp_path / "b" / "mfg_solution.csv").read_bytes()


def test_csv_round_trips_full_precision(tmp_path):
    from inspectgame.experiments import solve
    from inspectgame.config import load_config

    cfg = config(tmp_path)
    assert run("solve", cfg, tmp_path / "o") == 0
    sol = solve(load_config(cfg))
    _, data = read_csv(tmp_path / "o" / "mfg_solution.csv")
    assert np.array_equal(data[:, 0], sol.grid.nodes)
    assert np.array_equal(data[:, 1:4], sol.X) and np.array_equal(data[:, 4:7], sol.V)
    assert np.array_equal(data[:, 7], sol.alpha)


def test_nonconvergence_exit_code_and_no_partial_output(tmp_path, capsys):
    data = dict(SMALL, model={"T": 1.0}, solver={"max_iter": 1})
    out = tmp_path / "o"
    assert run("solve", config(tmp_path, data), out) == 2
    assert not out.exists()
    assert [p.name for p in tmp_path.iterdir()] == ["cfg.yaml"]
    assert "error" in capsys.readouterr().err


def test_invalid_config_exit_code(tmp_path, capsys):
    cfg = config(tmp_path, {"model": {"levels": [2, 1]}})
    assert run("solve", cfg, tmp_path / "o") == 3
    assert "levels" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()
    assert main(["solve", "--config", str(tmp_path / "missing.yaml")]) == 3
    assert run("solve", config(tmp_path), tmp_path / "p", "--threads", "0") == 3


def test_refuses_foreign_nonempty_output(tmp_path):
    out = tmp_path / "o"
    out.mkdir()
    (out / "keep.txt").write_text("precious")
    assert run("solve", config(tmp_path), out) == 3
    assert (out / "keep.txt").read_text() == "precious"


def test_rerun_replaces_earlier_run(tmp_path):
    cfg = config(tmp_path)
    assert run("mollify-compare", cfg, tmp_path / "o") == 0
    assert run("solve", cfg, tmp_path / "o") == 0
    assert not (tmp_path / "o" / "mollify.csv").exists()


def check_manifest(out):
    man = json.loads((out / "manifest.json").read_text())
    listed = {f["path"]: f for f in man["files"]}
    present = {str(p.relative_to(out)) for p in out.rglob("*") if p.is_file()}
    assert present - {"manifest.json"} == set(listed)
    for path, entry in listed.items():
        blob = (out / path).read_bytes()
        assert hashlib.sha256(blob).hexdigest() == entry["sha256"] and len(blob) == entry["bytes"]
    for key in ("config_hash", "version", "started", "finished", "command", "seed"):
        assert key in man
    return man


@pytest.mark.parametrize("cmd,files", [
    ("solve", ["mfg_solution.csv"]),
    ("simulate", ["simulate.csv", "trajectories/population_N10_rep0.csv",
                  "trajectories/population_N10_rep0.json"]),
    ("epsnash", ["epsnash_report.json", "trajectories/tagged_N80_rep0.csv"]),
    ("rate-study", ["rate_study.csv", "rate_study.json"]),
    ("mollify-compare", ["mollify.csv", "mollify.json"]),
])
def test_subcommand_outputs_and_manifest(tmp_path, cmd, files):
    out = tmp_path / "o"
    assert run(cmd, config(tmp_path), out, "--dump-trajectories") == 0
    man = check_manifest(out)
    assert man["command"] == cmd and man["seed"] == 11
    for f in files + ["mfg_solution.csv", "config.yaml"]:
        assert (out / f).is_file(), f
    assert not any(p.name.startswith(".o.partial") for p in tmp_path.iterdir())


def test_rate_study_outputs(tmp_path):
    out = tmp_path / "o"
    assert run("rate-study", config(tmp_path), out) == 0
    header, data = read_csv(out / "rate_study.csv")
    assert header == ["N", "eps", "ci", "gap", "gap_ci"]
    assert data[:, 0].tolist() == [10, 20, 40, 80]
    summary = json.loads((out / "rate_study.json").read_text())
    assert summary["gap_fit"]["slope"] is not None
    assert summary["eta"] == 0.1


def test_mollify_csv(tmp_path):
    out = tmp_path / "o"
    assert run("mollify-compare", config(tmp_path), out) == 0
    header, data = read_csv(out / "mollify.csv")
    assert header == ["eta", "sup_gap", "payoff_gap"]
    assert np.all(data[:, 1] <= data[:, 0] / 2)


def test_seed_flag_overrides(tmp_path):
    cfg = config(tmp_path)
    assert run("simulate", cfg, tmp_path / "a", "--seed", "5") == 0
    assert run("simulate", cfg, tmp_path / "b") == 0
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert man["seed"] == 5
    assert (tmp_path / "a" / "simulate.csv").read_bytes() != (tmp_path / "b" / "simulate.csv").read_bytes()
    assert main(["solve", "--seed", "-1", "--out", str(tmp_path / "c")]) == 3


def test_trajectory_dump_regenerates_from_metadata(tmp_path):
    from inspectgame.config import load_config
    from inspectgame.experiments import solve
    from inspectgame.population import PopulationState, simulate_population

    data = dict(SMALL, model={"T": 1.0}, sim=dict(SMALL["sim"], N=[40]))
    cfg = config(tmp_path, data)
    out = tmp_path / "o"
    assert run("simulate", cfg, out, "--dump-trajectories") == 0
    meta = json.loads((out / "trajectories" / "population_N40_rep0.json").read_text())
    text = (out / "trajectories" / "population_N40_rep0.csv").read_text()
    assert meta["N"] == 40 and meta["replication"] == 0 and len(text.splitlines()) > 1
    sol = solve(load_config(cfg))
    traj = simulate_population(meta["N"], sol.policy(), PopulationState(meta["initial_counts"]),
                               sol.params, meta["seed"], rep=meta["replication"])
    assert traj.csv_text() == text


def test_rate_study_defaults_end_to_end(tmp_path):
    out = tmp_path / "o"
    assert main(["rate-study", "--out", str(out), "--threads", "4"]) == 0
    header, data = read_csv(out / "rate_study.csv")
    assert data.shape == (5, 5) and data[:, 0].tolist() == [50, 100, 200, 400, 800]
    fit = json.loads((out / "rate_study.json").read_text())["gap_fit"]
    assert -1.4 <= fit["slope"] <= -0.6
