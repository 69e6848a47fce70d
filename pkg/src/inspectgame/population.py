"""Exact simulation of the finite-N inspectee chain by thinning.

Candidate events arrive at the dominating rate ``N (d - 1) Q``.  Each
candidate draws one uniform that is laid out over the slots ``i -> j``
with widths ``n_i q_ij(t, X^N)``; whatever is left of the dominating rate
is a rejection.  With a tagged inspectee the first ``(d - 1) Q`` of the
layout belongs to the tag and the remaining inspectees follow.

Replications are simulated side by side with numpy, but every replication
owns its own Philox stream keyed by ``(master seed, replication index)``
and consumes it one candidate at a time, so a replication's path does not
depend on which batch or thread it ran in.
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .model import (
    ModelParams,
    best_response_payoff,
    crime_reward,
    inspector_best_response,
    inspector_payoff,
)
from .strategies import Strategy

BLOCK = 256
BATCH = 256
Z95 = 1.959963984540054


class PolicyError(ValueError):
    """A strategy produced rates outside ``[0, Q]``."""


def replication_rng(seed: int, rep: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(rep,))))


@dataclass(frozen=True)
class PopulationState:
    counts: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        if any(c < 0 for c in self.counts) or self.N < 1:
            raise ValueError("counts must be non-negative with a positive total")

    @property
    def N(self) -> int:
        return sum(self.counts)

    @property
    def measure(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=float) / self.N


@dataclass(frozen=True)
class TaggedState:
    pop: PopulationState
    tagged_level: int

    def __post_init__(self):
        if self.pop.counts[self.tagged_level] < 1:
            raise ValueError("the tagged inspectee must be counted at its own level")


def round_counts(x, N: int) -> np.ndarray:
    """Largest-remainder rounding of ``N x`` to integer counts summing to ``N``."""
    raw = np.asarray(x, dtype=float) * N
    counts = np.floor(raw).astype(np.int64)
    short = N - counts.sum()
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:short]] += 1
    return counts


def tagged_initial_state(x0, N: int, tagged_level: int) -> TaggedState:
    counts = round_counts(x0, N)
    if counts[tagged_level] == 0:
        counts[np.argmax(counts)] -= 1
        counts[tagged_level] += 1
    return TaggedState(PopulationState(counts), tagged_level)


@dataclass
class PathBatch:
    """Jump record of a batch of replications.

    ``times[r, s]`` is the time of the ``s``-th jump of replication ``r``;
    ``frm``/``to`` are its levels and ``tag_jump`` flags jumps of the tagged
    inspectee.  Rows with fewer jumps are padded with ``time = T`` and
    ``frm = to = -1``, which leave every path functional unchanged.
    """

    N: int
    T: float
    counts0: np.ndarray
    tag0: int | None
    times: np.ndarray
    frm: np.ndarray
    to: np.ndarray
    tag_jump: np.ndarray

    @property
    def R(self) -> int:
        return self.times.shape[0]

    def counts(self) -> np.ndarray:
        """Counts of every state, ``(R, S + 1, d)``; state ``k`` holds on ``[b_k, b_{k+1})``."""
        levels = np.arange(self.counts0.size)
        delta = ((self.to[..., None] == levels).astype(np.int64)
                 - (self.frm[..., None] == levels).astype(np.int64))
        steps = self.counts0 + np.cumsum(delta, axis=1)
        first = np.broadcast_to(self.counts0, (self.R, 1, self.counts0.size))
        return np.concatenate([first, steps], axis=1)

    def measures(self) -> np.ndarray:
        return self.counts() / self.N

    def boundaries(self) -> np.ndarray:
        R = self.R
        return np.concatenate([np.zeros((R, 1)), self.times, np.full((R, 1), self.T)], axis=1)

    def durations(self) -> np.ndarray:
        return np.diff(self.boundaries(), axis=1)

    def tag_levels(self) -> np.ndarray:
        R, S = self.times.shape
        idx = np.where(self.tag_jump, np.arange(S), -1)
        idx = np.maximum.accumulate(idx, axis=1)
        moved = np.take_along_axis(self.to, np.maximum(idx, 0), axis=1)
        levels = np.where(idx >= 0, moved, self.tag0)
        return np.concatenate([np.full((R, 1), self.tag0), levels], axis=1)

    def state_at(self, t) -> np.ndarray:
        """Counts at the times ``t`` for every replication, ``(R, len(t), d)``."""
        counts = self.counts()
        t = np.atleast_1d(np.asarray(t, dtype=float))
        k = np.stack([np.searchsorted(self.times[r], t, side="right") for r in range(self.R)])
        return np.take_along_axis(counts, k[..., None], axis=1)


def _refill(gens, buf, active):
    for r in np.flatnonzero(active):
        buf[r] = gens[r].random((BLOCK, 2))


def _checked(q: np.ndarray, Q: float) -> np.ndarray:
    d = q.shape[-1]
    off = q[..., ~np.eye(d, dtype=bool)]
    if np.any(off < -1e-12) or np.any(off > Q + 1e-12):
        raise PolicyError("strategy produced switching rates outside [0, Q]")
    q = np.clip(q, 0.0, Q)
    q[..., np.arange(d), np.arange(d)] = 0.0
    return q


def _select(widths: np.ndarray, target: np.ndarray):
    """Index of the slot containing ``target``; ``widths.shape[1]`` on rejection."""
    cum = np.cumsum(widths, axis=1)
    return (cum <= target[:, None]).sum(axis=1)


def simulate_batch(N: int, base: Strategy, counts0, p: ModelParams, seed: int, reps,
                   tag0: int | None = None, deviation: Strategy | None = None,
                   T: float | None = None) -> PathBatch:
    """Simulate the replications ``reps`` of the population (optionally tagged) chain."""
    T = p.T if T is None else T
    counts0 = np.asarray(counts0, dtype=np.int64)
    if counts0.sum() != N:
        raise ValueError("initial counts must sum to N")
    d, Q = p.d, p.Q
    tagged = tag0 is not None
    if tagged and deviation is None:
        deviation = base
    reps = np.atleast_1d(np.asarray(reps, dtype=np.int64))
    R = reps.size
    lam = N * (d - 1) * Q
    counts = np.tile(counts0, (R, 1))
    tag = np.full(R, tag0 if tagged else -1, dtype=np.int64)
    t = np.zeros(R)
    active = np.ones(R, dtype=bool)
    rows = np.arange(R)
    rec_t, rec_f, rec_to, rec_tag = [], [], [], []
    if lam > 0:
        gens = [replication_rng(seed, int(r)) for r in reps]
        buf = np.empty((R, BLOCK, 2))
        cap = (d - 1) * Q
        step = 0
        while active.any():
            j = step % BLOCK
            if j == 0:
                _refill(gens, buf, active)
            u = buf[:, j]
            t_new = t - np.log1p(-u[:, 0]) / lam
            active &= t_new <= T
            x = counts / N
            qb = _checked(np.array(base.rates(t_new, x), dtype=float), Q)
            target = u[:, 1] * lam
            frm = np.full(R, -1, dtype=np.int64)
            to = np.full(R, -1, dtype=np.int64)
            is_tag = np.zeros(R, dtype=bool)
            if tagged:
                qd = _checked(np.array(deviation.rates(t_new, x), dtype=float), Q)
                row = qd[rows, tag]
                in_tag = target < cap
                jt = _select(row, target)
                hit_tag = active & in_tag & (jt < d)
                others = counts.copy()
                others[rows, tag] -= 1
                flat = (others[:, :, None] * qb).reshape(R, d * d)
                k = _select(flat, target - cap)
                hit_pop = active & ~in_tag & (k < d * d)
                frm[hit_tag] = tag[hit_tag]
                to[hit_tag] = jt[hit_tag]
                is_tag = hit_tag
            else:
                flat = (counts[:, :, None] * qb).reshape(R, d * d)
                k = _select(flat, target)
                hit_pop = active & (k < d * d)
            frm[hit_pop] = k[hit_pop] // d
            to[hit_pop] = k[hit_pop] % d
            moved = frm >= 0
            counts[rows[moved], frm[moved]] -= 1
            counts[rows[moved], to[moved]] += 1
            tag[is_tag] = to[is_tag]
            t = np.where(active, t_new, t)
            rec_t.append(np.where(active, t_new, T))
            rec_f.append(frm)
            rec_to.append(to)
            rec_tag.append(is_tag)
            step += 1
    if not rec_t:
        empty = np.zeros((R, 0), dtype=np.int64)
        return PathBatch(N, T, counts0, tag0, np.zeros((R, 0)), empty, empty, empty.astype(bool))
    return _accepted_only(N, T, counts0, tag0, np.stack(rec_t, axis=1),
                          *(np.stack(v, axis=1) for v in (rec_f, rec_to, rec_tag)))


def _accepted_only(N, T, counts0, tag0, times, frm, to, tag_jump) -> PathBatch:
    """Drop rejected candidates; rows are right-padded with no-op steps at ``T``."""
    accepted = frm >= 0
    order = np.argsort(~accepted, axis=1, kind="stable")
    width = int(accepted.sum(axis=1).max())
    order = order[:, :width]
    keep = np.take_along_axis(accepted, order, axis=1)
    return PathBatch(
        N, T, counts0, tag0,
        np.where(keep, np.take_along_axis(times, order, axis=1), T),
        np.where(keep, np.take_along_axis(frm, order, axis=1), -1),
        np.where(keep, np.take_along_axis(to, order, axis=1), -1),
        keep & np.take_along_axis(tag_jump, order, axis=1),
    )


# -- functionals of a batch ------------------------------------------------


def _time_sum(a: np.ndarray) -> np.ndarray:
    """Sum over the event axis, sequentially so that zero padding is exact."""
    return np.cumsum(a, axis=1)[:, -1]


def _pick(a: np.ndarray, idx: np.ndarray) -> np.ndarray:
    return np.take_along_axis(a, idx[..., None], axis=-1)[..., 0]


def tagged_payoffs(batch: PathBatch, p: ModelParams, deviation: Strategy) -> np.ndarray:
    """Payoff of the tagged inspectee in each replication; exact on the event partition."""
    x = batch.measures()
    levels = batch.tag_levels()
    b = batch.boundaries()
    crime = _time_sum(_pick(crime_reward(x, p), levels) * np.diff(b, axis=1))
    cost = _time_sum(deviation.switching_cost(levels, b[:, :-1], b[:, 1:], x))
    terminal = _pick(p.terminal_values(x[:, -1]), levels[:, -1])
    return crime - cost + terminal


def population_payoffs(batch: PathBatch, p: ModelParams, base: Strategy) -> np.ndarray:
    """Population-average inspectee payoff in each replication."""
    x = batch.measures()
    b = batch.boundaries()
    dur = np.diff(b, axis=1)
    crime = _time_sum(np.sum(x * crime_reward(x, p), axis=-1) * dur)
    cost = 0.0
    for i in range(p.d):
        lv = np.full(x.shape[:-1], i)
        cost = cost + _time_sum(x[..., i] * base.switching_cost(lv, b[:, :-1], b[:, 1:], x))
    terminal = np.sum(x[:, -1] * p.terminal_values(x[:, -1]), axis=-1)
    return crime - cost + terminal


def inspector_payoffs(batch: PathBatch, p: ModelParams) -> np.ndarray:
    """Time integral of the plug-in inspector payoff ``U(a*(X^N), X^N)``."""
    x = batch.measures()
    return _time_sum(best_response_payoff(x, p) * batch.durations())


def inspector_gaps(batch: PathBatch, p: ModelParams, X: np.ndarray, nodes: np.ndarray) -> np.ndarray:
    """Time average over the grid of ``|U(a*(X), X) - U(a*(X^N), X^N)|``."""
    xN = batch.state_at(nodes) / batch.N
    u_lim = inspector_payoff(inspector_best_response(X, p), X, p)
    u_fin = best_response_payoff(xN, p)
    g = np.abs(u_fin - u_lim)
    dt = np.diff(nodes)
    return np.sum(0.5 * (g[:, 1:] + g[:, :-1]) * dt, axis=1) / (nodes[-1] - nodes[0])


def run_replications(N: int, base: Strategy, counts0, p: ModelParams, seed: int, R: int,
                     functional, tag0: int | None = None, deviation: Strategy | None = None,
                     threads: int = 1, batch_size: int = BATCH, first_rep: int = 0) -> dict:
    """Run replications ``first_rep .. first_rep + R - 1`` in batches.

    ``functional(batch) -> dict[str, (R_batch,) array]``; the per-replication
    values are concatenated in replication order, whatever ``threads`` is.
    """
    starts = list(range(0, R, batch_size))

    def work(s):
        reps = np.arange(first_rep + s, first_rep + min(s + batch_size, R))
        batch = simulate_batch(N, base, counts0, p, seed, reps, tag0=tag0, deviation=deviation)
        return functional(batch)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, starts))
    else:
        parts = [work(s) for s in starts]
    return {key: np.concatenate([part[key] for part in parts]) for key in parts[0]}


# -- single trajectories ---------------------------------------------------


@dataclass
class PopulationTrajectory:
    N: int
    T: float
    initial: PopulationState
    tagged_level: int | None
    times: np.ndarray
    frm: np.ndarray
    to: np.ndarray
    tagged: np.ndarray
    seed: int
    rep: int

    @classmethod
    def from_batch(cls, batch: PathBatch, seed: int, rep: int, r: int = 0):
        keep = batch.frm[r] >= 0
        return cls(batch.N, batch.T, PopulationState(batch.counts0), batch.tag0,
                   batch.times[r, keep], batch.frm[r, keep], batch.to[r, keep],
                   batch.tag_jump[r, keep], seed, rep)

    def as_batch(self) -> PathBatch:
        return PathBatch(self.N, self.T, np.asarray(self.initial.counts), self.tagged_level,
                         self.times[None], self.frm[None], self.to[None], self.tagged[None])

    def replay(self) -> np.ndarray:
        """Counts after each event, starting with the initial state."""
        return self.as_batch().counts()[0]

    def csv_text(self) -> str:
        """``time,from,to,tagged`` rows; levels are 1-based, ``tagged`` is 0/1."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time", "from", "to", "tagged"])
        for t, a, b, g in zip(self.times, self.frm, self.to, self.tagged):
            w.writerow([f"{t:.17g}", int(a) + 1, int(b) + 1, int(g)])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.csv_text())

    def metadata(self, config_hash: str | None = None) -> dict:
        return {
            "N": self.N,
            "T": self.T,
            "seed": self.seed,
            "replication": self.rep,
            "initial_counts": list(self.initial.counts),
            "tagged_level": None if self.tagged_level is None else self.tagged_level + 1,
            "config_hash": config_hash,
        }

    def write_metadata(self, path, config_hash: str | None = None) -> None:
        with open(path, "w") as fh:
            json.dump(self.metadata(config_hash), fh, indent=2, sort_keys=True)
            fh.write("\n")


def simulate_population(N: int, policy: Strategy, x0N: PopulationState, p: ModelParams,
                        seed: int, rep: int = 0, T: float | None = None) -> PopulationTrajectory:
    if x0N.N != N:
        raise ValueError("initial state does not hold N inspectees")
    batch = simulate_batch(N, policy, x0N.counts, p, seed, [rep], T=T)
    return PopulationTrajectory.from_batch(batch, seed, rep)


def simulate_tagged(N: int, base: Strategy, deviation: Strategy, initial: TaggedState,
                    p: ModelParams, seed: int, rep: int = 0,
                    T: float | None = None) -> PopulationTrajectory:
    if initial.pop.N != N:
        raise ValueError("initial state does not hold N inspectees")
    batch = simulate_batch(N, base, initial.pop.counts, p, seed, [rep],
                           tag0=initial.tagged_level, deviation=deviation, T=T)
    return PopulationTrajectory.from_batch(batch, seed, rep)


def finite_payoff(trajectory: PopulationTrajectory, p: ModelParams, role: str,
                  strategy: Strategy | None = None) -> float:
    """Realised payoff along one trajectory.

    ``role`` is ``"tagged"`` (the tagged inspectee, ``strategy`` is its
    deviation), ``"population"`` (average inspectee, ``strategy`` is the
    common one) or ``"inspector"``.
    """
    batch = trajectory.as_batch()
    if role == "tagged":
        if trajectory.tagged_level is None:
            raise ValueError("trajectory has no tagged inspectee")
        return float(tagged_payoffs(batch, p, strategy)[0])
    if role == "population":
        return float(population_payoffs(batch, p, strategy)[0])
    if role == "inspector":
        return float(inspector_payoffs(batch, p)[0])
    raise ValueError(f"unknown payoff role {role!r}")


# -- Monte Carlo estimates -------------------------------------------------


@dataclass(frozen=True)
class PayoffEstimate:
    mean: float
    half_width: float
    replications: int

    @classmethod
    def from_samples(cls, samples) -> "PayoffEstimate":
        samples = np.asarray(samples, dtype=float)
        R = samples.size
        if R < 2:
            raise ValueError("need at least two replications for a confidence interval")
        spread = samples.std(ddof=1) if np.ptp(samples) > 0 else 0.0
        hw = Z95 * spread / np.sqrt(R)
        return cls(float(samples.mean()), float(hw), R)


def estimate_payoff(N: int, base: Strategy, initial, p: ModelParams, seed: int, R: int,
                    role: str = "population", deviation: Strategy | None = None,
                    threads: int = 1) -> PayoffEstimate:
    """Mean payoff over ``R`` replications with a 95% normal interval.

    ``initial`` is a PopulationState, or a TaggedState for ``role="tagged"``.
    """
    if R < 2:
        raise ValueError("need at least two replications")
    if role == "tagged":
        counts, tag0 = initial.pop.counts, initial.tagged_level
        dev = deviation or base
        fn = lambda b: {"v": tagged_payoffs(b, p, dev)}  # noqa: E731
    else:
        counts, tag0, dev = initial.counts, None, None
        if role == "population":
            fn = lambda b: {"v": population_payoffs(b, p, base)}  # noqa: E731
        elif role == "inspector":
            fn = lambda b: {"v": inspector_payoffs(b, p)}  # noqa: E731
        else:
            raise ValueError(f"unknown payoff role {role!r}")
    out = run_replications(N, base, counts, p, seed, R, fn, tag0=tag0, deviation=dev,
                           threads=threads)
    return PayoffEstimate.from_samples(out["v"])


@dataclass(frozen=True)
class GapEstimate:
    gap: float
    half_width: float
    mc_mean: float
    limit_value: float
    replications: int


def centered_quadratic(center, level_weights=None):
    """Smooth test function ``(1 + w(l)) ||x - center||^2``."""
    center = np.asarray(center, dtype=float)
    w = None if level_weights is None else np.asarray(level_weights, dtype=float)

    def f(x, levels):
        sq = np.sum((np.asarray(x) - center) ** 2, axis=-1)
        return sq if w is None else (1.0 + w[np.asarray(levels)]) * sq

    return f


def propagator_gap(N: int, f, deviation: Strategy, sol, seed: int, R: int,
                   base: Strategy | None = None, tagged_level: int | None = None,
                   threads: int = 1) -> GapEstimate:
    """``|E f(X^N(T), M^N(T)) - sum_i law_i(T) f(X(T), l_i)|`` with its MC half-width.

    ``f(x, levels)`` is vectorised: ``x`` is ``(..., d)``, ``levels`` integer
    level indices of matching shape.
    """
    from .solver import solve_tagged_law_forward

    p = sol.params
    base = base or sol.policy()
    m0 = (p.d - 1) // 2 if tagged_level is None else tagged_level
    init = tagged_initial_state(sol.X[0], N, m0)

    def fn(batch):
        x = batch.counts()[:, -1] / batch.N
        return {"f": np.asarray(f(x, batch.tag_levels()[:, -1]), dtype=float)}

    out = run_replications(N, base, init.pop.counts, p, seed, R, fn, tag0=m0,
                           deviation=deviation, threads=threads)
    est = PayoffEstimate.from_samples(out["f"])
    law = solve_tagged_law_forward(sol, deviation, m0)[-1]
    xT = np.broadcast_to(sol.X[-1], (p.d, p.d))
    limit = float(law @ np.asarray(f(xT, np.arange(p.d)), dtype=float))
    return GapEstimate(abs(est.mean - limit), est.half_width, est.mean, limit, R)
