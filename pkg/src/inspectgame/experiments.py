"""Experiment runners: solve, simulate, epsnash, rate study, mollifier sweep.

Each runner writes into a staging directory next to the requested output
directory and moves it into place only when everything succeeded, so a
failed run leaves no partial outputs behind.  Floats are written with 17
significant digits so every CSV reads back bit-for-bit.
"""

from __future__ import annotations

import dataclasses
import datetime as _dt
import hashlib
import json
import os
import shutil
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, dump_config
from .epsnash import estimate_eps, mollify_compare, rate_study
from .model import best_response_payoff
from .population import (
    PayoffEstimate,
    PopulationState,
    inspector_payoffs,
    population_payoffs,
    round_counts,
    run_replications,
    simulate_population,
    simulate_tagged,
    tagged_initial_state,
)
from .solver import MfgSolution, TimeGrid, solve_mfg_fixed_point


def fmt(v) -> str:
    return f"{float(v):.17g}"


def csv_text(header, rows) -> str:
    lines = [",".join(header)]
    lines += [",".join(v if isinstance(v, str) else fmt(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def read_csv(path) -> tuple[list[str], np.ndarray]:
    """Header and float array of a CSV written by this module."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header, data


def json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def solution_header(d: int) -> list[str]:
    cols = ["t"] + [f"X_{i + 1}" for i in range(d)] + [f"V_{i + 1}" for i in range(d)] + ["alpha"]
    cols += [f"q_{i + 1}_{j + 1}" for i in range(d) for j in range(d) if i != j]
    return cols


def solution_csv(sol: MfgSolution) -> str:
    d = sol.params.d
    off = ~np.eye(d, dtype=bool)
    q = sol.qstar[:, off]
    table = np.column_stack([sol.grid.nodes, sol.X, sol.V, sol.alpha, q])
    return csv_text(solution_header(d), table)


class OutputTree:
    """Stage files in a temporary directory and publish them atomically."""

    def __init__(self, out_dir):
        self.out = Path(out_dir)
        if self.out.exists() and any(self.out.iterdir()) and not (self.out / "manifest.json").exists():
            raise ValueError(f"output directory {self.out} is not empty and holds no earlier run")
        self.out.parent.mkdir(parents=True, exist_ok=True)
        self.stage = Path(tempfile.mkdtemp(prefix=f".{self.out.name}.partial-", dir=self.out.parent))
        self.files: list[str] = []

    def write(self, name: str, text: str) -> None:
        path = self.stage / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        self.files.append(name)

    def discard(self) -> None:
        shutil.rmtree(self.stage, ignore_errors=True)

    def publish(self, manifest: dict) -> Path:
        entries = []
        for name in sorted(self.files):
            blob = (self.stage / name).read_bytes()
            entries.append({"path": name, "sha256": hashlib.sha256(blob).hexdigest(),
                            "bytes": len(blob)})
        manifest = dict(manifest, files=entries)
        (self.stage / "manifest.json").write_text(json_text(manifest))
        if self.out.exists():
            shutil.rmtree(self.out)
        os.replace(self.stage, self.out)
        return self.out


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _run(command: str, cfg: ExperimentConfig, out_dir, body) -> Path:
    started = _now()
    tree = OutputTree(out_dir if out_dir is not None else cfg.output.dir)
    try:
        tree.write("config.yaml", dump_config(cfg))
        body(tree)
    except BaseException:
        tree.discard()
        raise
    return tree.publish({
        "command": command,
        "config_hash": cfg.config_hash(),
        "version": __version__,
        "seed": cfg.sim.seed,
        "started": started,
        "finished": _now(),
    })


def solve(cfg: ExperimentConfig, eta: float | None = None) -> MfgSolution:
    m, s = cfg.model, cfg.solver
    return solve_mfg_fixed_point(m.params(), TimeGrid(cfg.grid.K, m.T), m.initial, tol=s.tol,
                                 max_iter=s.max_iter, damping=s.damping, eta=eta)


def solve_summary(sol: MfgSolution, cfg: ExperimentConfig) -> dict:
    return {
        "config_hash": cfg.config_hash(),
        "converged": sol.converged,
        "iterations": sol.iterations,
        "residual": sol.residual,
        "tol": sol.tol,
        "contraction_estimate": sol.contraction_estimate,
        "eta": sol.eta,
    }


def _write_solution(tree: OutputTree, sol: MfgSolution, cfg: ExperimentConfig) -> None:
    tree.write("mfg_solution.csv", solution_csv(sol))
    tree.write("solve_summary.json", json_text(solve_summary(sol, cfg)))


def _dump(tree: OutputTree, traj, name: str, cfg: ExperimentConfig) -> None:
    tree.write(f"trajectories/{name}.csv", traj.csv_text())
    tree.write(f"trajectories/{name}.json", json_text(traj.metadata(cfg.config_hash())))


# -- runners ---------------------------------------------------------------


def run_solve(cfg: ExperimentConfig, out_dir=None, threads: int = 1,
              dump_trajectories: bool = False) -> Path:
    def body(tree):
        _write_solution(tree, solve(cfg), cfg)

    return _run("solve", cfg, out_dir, body)


def run_simulate(cfg: ExperimentConfig, out_dir=None, threads: int = 1,
                 dump_trajectories: bool = False) -> Path:
    def body(tree):
        sol = solve(cfg)
        _write_solution(tree, sol, cfg)
        p, pol, seed, R = sol.params, sol.policy(), cfg.sim.seed, cfg.sim.R
        d = p.d
        u_lim = best_response_payoff(sol.X, p)
        insp_limit = float(np.sum(0.5 * (u_lim[1:] + u_lim[:-1])) * sol.grid.dt)
        rows = []
        for N in cfg.sim.N:
            counts = round_counts(sol.X[0], N)
            pop_limit = float(counts / N @ sol.V[0])

            def fn(batch):
                return {"pop": population_payoffs(batch, p, pol),
                        "insp": inspector_payoffs(batch, p),
                        "xT": batch.counts()[:, -1] / batch.N}

            out = run_replications(N, pol, counts, p, seed, R, fn, threads=threads)
            pe = PayoffEstimate.from_samples(out["pop"])
            ie = PayoffEstimate.from_samples(out["insp"])
            rows.append([N, R, pe.mean, pe.half_width, pop_limit, ie.mean, ie.half_width,
                         insp_limit, *out["xT"].mean(axis=0)])
            if dump_trajectories:
                for r in range(min(cfg.sim.dump, R)):
                    traj = simulate_population(N, pol, PopulationState(counts), p, seed, rep=r)
                    _dump(tree, traj, f"population_N{N}_rep{r}", cfg)
        header = ["N", "R", "population_payoff", "population_ci", "population_limit",
                  "inspector_payoff", "inspector_ci", "inspector_limit"]
        header += [f"XN_T_{i + 1}" for i in range(d)]
        tree.write("simulate.csv", csv_text(header, rows))

    return _run("simulate", cfg, out_dir, body)


def run_epsnash(cfg: ExperimentConfig, out_dir=None, threads: int = 1,
                dump_trajectories: bool = False) -> Path:
    def body(tree):
        sol = solve(cfg)
        _write_solution(tree, sol, cfg)
        family = cfg.epsnash.family()
        reports = [estimate_eps(N, sol, family, cfg.sim.seed, cfg.sim.R, threads=threads)
                   for N in cfg.epsnash.N]
        small, large = reports[0], reports[-1]
        summary = {
            "config_hash": cfg.config_hash(),
            "reports": [r.to_dict() for r in reports],
            "trend": {
                "N_small": small.N,
                "N_large": large.N,
                "eps_separated": large.eps_upper < small.eps_lower,
                "inspector_gap_separated": (
                    large.inspector_gap.mean + large.inspector_gap.half_width
                    < small.inspector_gap.mean - small.inspector_gap.half_width),
            },
        }
        tree.write("epsnash_report.json", json_text(summary))
        if dump_trajectories:
            p, pol = sol.params, sol.policy()
            m0 = (p.d - 1) // 2
            for N in cfg.epsnash.N:
                init = tagged_initial_state(sol.X[0], N, m0)
                for r in range(min(cfg.sim.dump, cfg.sim.R)):
                    traj = simulate_tagged(N, pol, pol, init, p, cfg.sim.seed, rep=r)
                    _dump(tree, traj, f"tagged_N{N}_rep{r}", cfg)

    return _run("epsnash", cfg, out_dir, body)


def run_rate_study(cfg: ExperimentConfig, out_dir=None, threads: int = 1,
                   dump_trajectories: bool = False) -> Path:
    def body(tree):
        sol = solve(cfg, eta=cfg.epsnash.rate_eta)
        _write_solution(tree, sol, cfg)
        rep = rate_study(sol, cfg.sim.N, cfg.epsnash.family(), cfg.sim.seed,
                         cfg.epsnash.rate_R, eps_R=cfg.sim.R, threads=threads)
        rows = [[r.N, r.eps, r.eps_ci, r.gap, r.gap_ci] for r in rep.rows]
        tree.write("rate_study.csv", csv_text(["N", "eps", "ci", "gap", "gap_ci"], rows))
        tree.write("rate_study.json", json_text(dict(rep.to_dict(), config_hash=cfg.config_hash(),
                                                     R=cfg.epsnash.rate_R, eps_R=cfg.sim.R)))

    return _run("rate-study", cfg, out_dir, body)


def run_mollify_compare(cfg: ExperimentConfig, out_dir=None, threads: int = 1,
                        dump_trajectories: bool = False) -> Path:
    def body(tree):
        sol = solve(cfg)
        _write_solution(tree, sol, cfg)
        table = mollify_compare(sol, cfg.epsnash.eta)
        rows = [[r.eta, r.sup_gap, r.payoff_gap] for r in table.rows]
        tree.write("mollify.csv", csv_text(["eta", "sup_gap", "payoff_gap"], rows))
        tree.write("mollify.json", json_text({
            "config_hash": cfg.config_hash(),
            "rows": [dataclasses.asdict(r) for r in table.rows],
            "sup_gap_monotone": table.sup_monotone,
            "payoff_gap_monotone": table.payoff_monotone,
        }))

    return _run("mollify-compare", cfg, out_dir, body)


RUNNERS = {
    "solve": run_solve,
    "simulate": run_simulate,
    "epsnash": run_epsnash,
    "rate-study": run_rate_study,
    "mollify-compare": run_mollify_compare,
}
