"""epsilon-Nash gaps of mean-field strategies in the N-inspectee game.

Each deviation is scored by paired replications: the tagged inspectee
switches by the deviation in one run and by the common strategy in the
other, with the same replication streams.  The untagged inspectees take
the same uniforms in both runs, so the difference isolates the tag.
"""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .model import check_rate_matrix
from .population import (
    GapEstimate,
    PayoffEstimate,
    centered_quadratic,
    inspector_gaps,
    propagator_gap,
    run_replications,
    tagged_initial_state,
    tagged_payoffs,
)
from .solver import MfgSolution, SolverError, limit_payoff
from .strategies import ConstantStrategy, Strategy, constant, max_down, max_up, stay

BUNDLED = ("STAY", "MAX_UP", "MAX_DOWN", "CONSTANT(0.5)", "MOLLIFIED(0.1)")
_CALL = re.compile(r"^(CONSTANT|MOLLIFIED)\(\s*([-+0-9.eE]+)\s*\)$")


class NotConvergedError(SolverError):
    pass


@dataclass
class DeviationFamily:
    """Named deviation sources plus user constant matrices ``(name, q)``."""

    names: tuple[str, ...] = BUNDLED
    matrices: tuple = ()

    def __post_init__(self):
        self.names = tuple(self.names)
        self.matrices = tuple((str(n), np.asarray(q, dtype=float)) for n, q in self.matrices)
        for name in self.names:
            if name not in ("STAY", "MAX_UP", "MAX_DOWN", "q*") and not _CALL.match(name):
                raise ValueError(f"unknown deviation {name!r}")

    def build(self, sol: MfgSolution) -> list[Strategy]:
        p = sol.params
        out = []
        for name in self.names:
            if name == "STAY":
                out.append(stay(p.d))
            elif name == "MAX_UP":
                out.append(max_up(p))
            elif name == "MAX_DOWN":
                out.append(max_down(p))
            elif name == "q*":
                out.append(sol.policy())
            else:
                kind, arg = _CALL.match(name).groups()
                if kind == "CONSTANT":
                    out.append(constant(p, float(arg)))
                else:
                    out.append(sol.mollified_policy(float(arg)))
        for name, q in self.matrices:
            strat = ConstantStrategy(q, name=name)
            check_rate_matrix(strat.q, p.Q)
            out.append(strat)
        return out


@dataclass(frozen=True)
class DeviationResult:
    name: str
    deviating: PayoffEstimate
    conforming: PayoffEstimate
    difference: PayoffEstimate

    def to_dict(self) -> dict:
        return {
            "deviation": self.name,
            "deviating": _est(self.deviating),
            "conforming": _est(self.conforming),
            "difference": _est(self.difference),
        }


def _est(e: PayoffEstimate) -> dict:
    return {"mean": e.mean, "half_width": e.half_width, "replications": e.replications}


@dataclass
class EpsNashReport:
    """``eps`` is the max over deviations of the positive part of the mean gain.

    ``eps_lower``/``eps_upper`` apply the same max to the ends of each 95%
    interval.  ``inspector_gap`` is the path-averaged distance between the
    limiting and the plug-in inspector payoff.
    """

    N: int
    strategy: str
    results: list[DeviationResult]
    eps: float
    eps_lower: float
    eps_upper: float
    inspector_gap: PayoffEstimate
    seed: int
    replications: int

    @property
    def eps_half_width(self) -> float:
        return 0.5 * (self.eps_upper - self.eps_lower)

    @property
    def distinguishable(self) -> bool:
        """Some deviation gains with its whole interval above zero."""
        return self.eps_lower > 0.0

    @property
    def profile_eps(self) -> float:
        """Larger of the inspectee ``eps`` and the inspector gap."""
        return max(self.eps, self.inspector_gap.mean)

    def to_dict(self) -> dict:
        return {
            "N": self.N,
            "strategy": self.strategy,
            "seed": self.seed,
            "replications": self.replications,
            "eps": self.eps,
            "eps_lower": self.eps_lower,
            "eps_upper": self.eps_upper,
            "inspector_gap": _est(self.inspector_gap),
            "profile_eps": self.profile_eps,
            "deviations": [r.to_dict() for r in self.results],
        }


def _require_converged(sol: MfgSolution) -> None:
    if not sol.converged:
        raise NotConvergedError(
            f"solution is not converged (residual {sol.residual:.3g} > tol {sol.tol:.3g})")


def estimate_eps(N: int, sol: MfgSolution, family: DeviationFamily, seed: int, R: int,
                 strategy: Strategy | None = None, tagged_level: int | None = None,
                 threads: int = 1) -> EpsNashReport:
    """Paired Monte Carlo estimate of the inspectee epsilon over ``family``."""
    _require_converged(sol)
    if R < 2:
        raise ValueError("need at least two replications")
    p = sol.params
    base = strategy or sol.policy()
    m0 = (p.d - 1) // 2 if tagged_level is None else tagged_level
    init = tagged_initial_state(sol.X[0], N, m0)
    counts = init.pop.counts
    nodes = sol.grid.nodes

    def conforming(batch):
        return {"J": tagged_payoffs(batch, p, base),
                "gap": inspector_gaps(batch, p, sol.X, nodes)}

    conf = run_replications(N, base, counts, p, seed, R, conforming, tag0=m0,
                            deviation=base, threads=threads)
    conf_est = PayoffEstimate.from_samples(conf["J"])
    results = []
    for dev in family.build(sol):
        out = run_replications(N, base, counts, p, seed, R,
                               lambda b, dev=dev: {"J": tagged_payoffs(b, p, dev)},
                               tag0=m0, deviation=dev, threads=threads)
        results.append(DeviationResult(dev.name, PayoffEstimate.from_samples(out["J"]), conf_est,
                                       PayoffEstimate.from_samples(out["J"] - conf["J"])))
    diffs = [r.difference for r in results]
    eps = max([0.0] + [max(e.mean, 0.0) for e in diffs])
    lo = max([0.0] + [max(e.mean - e.half_width, 0.0) for e in diffs])
    hi = max([0.0] + [max(e.mean + e.half_width, 0.0) for e in diffs])
    return EpsNashReport(N, base.name, results, eps, lo, hi,
                         PayoffEstimate.from_samples(conf["gap"]), seed, R)


# -- rate study ------------------------------------------------------------


@dataclass(frozen=True)
class LogLogFit:
    slope: float | None
    intercept: float | None
    slope_ci: tuple[float, float] | None
    used: tuple[int, ...]
    excluded: tuple[int, ...]

    @property
    def refused(self) -> bool:
        return self.slope is None

    def to_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept,
                "slope_ci": None if self.slope_ci is None else list(self.slope_ci),
                "used_N": list(self.used), "excluded_N": list(self.excluded)}


def loglog_fit(N, values, half_widths, label: str = "values", min_points: int = 3,
               atol: float = 1e-12) -> LogLogFit:
    """Least-squares fit of ``log value`` on ``log N`` with a 95% t interval.

    Points whose interval reaches zero (within rounding ``atol``) are
    excluded with a warning; with fewer than ``min_points`` left the fit
    is refused.
    """
    N = np.asarray(N, dtype=float)
    v = np.asarray(values, dtype=float)
    hw = np.asarray(half_widths, dtype=float)
    keep = v - hw > atol
    excluded = tuple(int(n) for n in N[~keep])
    if excluded:
        warnings.warn(f"{label}: indistinguishable from 0 at N={list(excluded)}; excluded from fit",
                      stacklevel=2)
    used = tuple(int(n) for n in N[keep])
    if keep.sum() < min_points:
        warnings.warn(f"{label}: only {int(keep.sum())} usable points; fit refused", stacklevel=2)
        return LogLogFit(None, None, None, used, excluded)
    res = stats.linregress(np.log(N[keep]), np.log(v[keep]))
    half = stats.t.ppf(0.975, keep.sum() - 2) * res.stderr
    return LogLogFit(float(res.slope), float(res.intercept),
                     (float(res.slope - half), float(res.slope + half)), used, excluded)


@dataclass(frozen=True)
class RateRow:
    N: int
    eps: float
    eps_ci: float
    gap: float
    gap_ci: float


@dataclass
class RateStudyReport:
    eta: float | None
    rows: list[RateRow]
    gap_fit: LogLogFit
    eps_fit: LogLogFit
    reports: list[EpsNashReport] = field(default_factory=list)
    gaps: list[GapEstimate] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"eta": self.eta, "primary": "propagator_gap",
                "gap_fit": self.gap_fit.to_dict(), "eps_fit": self.eps_fit.to_dict(),
                "rows": [vars(r) for r in self.rows]}


def default_test_function(sol: MfgSolution):
    """Weighted squared distance to the limiting terminal state."""
    lv = sol.params.level_array
    w = lv / lv[-1] if lv[-1] > 0 else np.zeros_like(lv)
    return centered_quadratic(sol.X[-1], w)


def rate_study(sol: MfgSolution, N_list, family: DeviationFamily, seed: int, R: int,
               f=None, eps_R: int | None = None, threads: int = 1,
               with_eps: bool = True) -> RateStudyReport:
    """Propagator gap (primary) and eps (secondary) against ``N`` with log-log fits.

    ``sol`` should be solved with a mollifier width so that its policy is
    smooth; ``f`` defaults to ``default_test_function(sol)``.
    """
    _require_converged(sol)
    N_list = [int(n) for n in N_list]
    if len(N_list) < 4 or any(b <= a for a, b in zip(N_list, N_list[1:])):
        raise ValueError("need a strictly increasing N list of length >= 4")
    if N_list[-1] < 8 * N_list[0]:
        raise ValueError("N list must span at least a factor of 8")
    f = f or default_test_function(sol)
    base = sol.policy()
    rows, reports, gaps = [], [], []
    for N in N_list:
        g = propagator_gap(N, f, base, sol, seed, R, threads=threads)
        gaps.append(g)
        if with_eps:
            rep = estimate_eps(N, sol, family, seed, eps_R or R, threads=threads)
            reports.append(rep)
            eps, eps_ci = rep.eps, rep.eps_half_width
        else:
            eps, eps_ci = float("nan"), float("nan")
        rows.append(RateRow(N, eps, eps_ci, g.gap, g.half_width))
    gap_fit = loglog_fit(N_list, [r.gap for r in rows], [r.gap_ci for r in rows],
                         label="propagator gap")
    if with_eps:
        # eps is a max of clipped means; use the interval ends for the exclusion rule
        lo = np.array([rep.eps_lower for rep in reports])
        eps_v = np.array([r.eps for r in rows])
        eps_fit = loglog_fit(N_list, eps_v, eps_v - lo, label="eps")
    else:
        eps_fit = LogLogFit(None, None, None, (), tuple(N_list))
    return RateStudyReport(sol.eta, rows, gap_fit, eps_fit, reports, gaps)


# -- mollifier comparison --------------------------------------------------


@dataclass(frozen=True)
class MollifyRow:
    eta: float
    sup_gap: float
    payoff_gap: float


@dataclass
class MollifyTable:
    rows: list[MollifyRow]
    sup_monotone: bool
    payoff_monotone: bool


def mollify_compare(sol: MfgSolution, etas, tagged_level: int | None = None) -> MollifyTable:
    """Distance of mollified rates and of their limiting payoff from the unsmoothed ones."""
    _require_converged(sol)
    p = sol.params
    m0 = (p.d - 1) // 2 if tagged_level is None else tagged_level
    q = sol.policy()
    ref = limit_payoff(sol, q, m0)
    off = ~np.eye(p.d, dtype=bool)
    rows = []
    for eta in etas:
        qe = sol.mollified_policy(float(eta))
        sup = float(np.max(np.abs(qe.q - q.q)[:, off])) if p.d > 1 else 0.0
        rows.append(MollifyRow(float(eta), sup, abs(limit_payoff(sol, qe, m0) - ref)))
    ordered = sorted(rows, key=lambda r: -r.eta)
    sup_ok = all(b.sup_gap <= a.sup_gap for a, b in zip(ordered, ordered[1:]))
    pay_ok = all(b.payoff_gap <= a.payoff_gap for a, b in zip(ordered, ordered[1:]))
    return MollifyTable(rows, sup_ok, pay_ok)
