"""Forward-backward solver for the mean-field inspection game.

The backward HJB system for the inspectee value ``V`` and the forward
kinetic equation for the crime distribution ``X`` are both integrated
with fixed-step classical RK4 on a uniform grid.  Paths are stored at the
``K + 1`` grid nodes and interpolated linearly in between.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .model import (
    ModelParams,
    as_simplex,
    crime_reward,
    inspector_best_response,
    optimal_rate_matrix,
)
from .strategies import GridStrategy, Strategy

log = logging.getLogger(__name__)

RENORM_ATOL = 1e-12
SIMPLEX_FAIL_ATOL = 1e-6


class SolverError(RuntimeError):
    pass


class IntegrationError(SolverError):
    pass


class ConvergenceError(SolverError):
    """Fixed-point iteration ran out of iterations."""

    def __init__(self, message, history):
        super().__init__(message)
        self.history = list(history)


@dataclass(frozen=True)
class TimeGrid:
    K: int
    T: float

    def __post_init__(self):
        if self.K < 2 or not self.T > 0:
            raise ValueError("time grid needs K >= 2 and T > 0")

    @property
    def dt(self) -> float:
        return self.T / self.K

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.K + 1) * self.dt


def path_at(path: np.ndarray, grid: TimeGrid, t: float) -> np.ndarray:
    """Linear interpolation of a node-indexed path at time ``t``."""
    s = min(max(t / grid.dt, 0.0), grid.K)
    k = min(int(s), grid.K - 1)
    w = s - k
    return (1.0 - w) * path[k] + w * path[k + 1]


def path_distance(X: np.ndarray, Y: np.ndarray) -> float:
    """``sup_t ||X(t) - Y(t)||`` with the Euclidean norm at each node."""
    return float(np.max(np.linalg.norm(np.asarray(X) - np.asarray(Y), axis=-1)))


@dataclass
class MfgSolution:
    params: ModelParams
    grid: TimeGrid
    X: np.ndarray
    V: np.ndarray
    alpha: np.ndarray
    qstar: np.ndarray
    residual: float
    iterations: int
    contraction_estimate: float
    tol: float
    eta: float | None = None
    history: list = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.residual <= self.tol

    def policy(self) -> GridStrategy:
        name = "q*" if self.eta is None else f"q*_eta({self.eta:g})"
        return GridStrategy(self.grid.nodes, self.qstar, name=name)

    def mollified_policy(self, eta: float) -> GridStrategy:
        q = optimal_rate_matrix(self.V, self.params, eta=eta)
        return GridStrategy(self.grid.nodes, q, name=f"MOLLIFIED({eta:g})")


def _switching_total(v: np.ndarray, Q: float) -> np.ndarray:
    z = v[None, :] - v[:, None]
    psi = np.where(z < 0, 0.0, np.where(z <= 2 * Q, 0.25 * z * z, Q * z - Q * Q))
    return psi.sum(axis=1)


def solve_hjb_backward(X, p: ModelParams, grid: TimeGrid) -> np.ndarray:
    """Integrate ``dV/dt = -H(V, X(t))`` backward from ``V(T) = J_T(., X(T))``."""
    X = np.asarray(X, dtype=float)
    h, Q = grid.dt, p.Q
    # the crime term of H depends on X only; evaluate it once per node and midpoint
    r_node = crime_reward(X, p)
    r_mid = crime_reward(0.5 * (X[1:] + X[:-1]), p)
    V = np.empty((grid.K + 1, p.d))
    V[-1] = p.terminal_values(X[-1])
    for k in range(grid.K - 1, -1, -1):
        v = V[k + 1]
        # s = T - t runs forward; dV/ds = H
        k1 = r_node[k + 1] + _switching_total(v, Q)
        k2 = r_mid[k] + _switching_total(v + 0.5 * h * k1, Q)
        k3 = r_mid[k] + _switching_total(v + 0.5 * h * k2, Q)
        k4 = r_node[k] + _switching_total(v + h * k3, Q)
        V[k] = v + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(V[k])):
            raise SolverError(f"non-finite value function at node {k} (t={k * h:.6g})")
    return V


def _project(y: np.ndarray, k: int) -> np.ndarray:
    drift = max(abs(y.sum() - 1.0), -min(y.min(), 0.0))
    if drift > SIMPLEX_FAIL_ATOL:
        raise IntegrationError(f"simplex violation {drift:.3g} at node {k}")
    if drift > RENORM_ATOL:
        y = np.clip(y, 0.0, None)
        y = y / y.sum()
    return y


def _forward_rk4(rate_at, y0: np.ndarray, grid: TimeGrid) -> np.ndarray:
    """RK4 for ``dy/dt = y @ rate_at(t, y)`` with simplex checks at each node."""
    h = grid.dt
    Y = np.empty((grid.K + 1, y0.size))
    Y[0] = y0
    for k in range(grid.K):
        t = k * h
        y = Y[k]
        k1 = y @ rate_at(t, y)
        y2 = y + 0.5 * h * k1
        k2 = y2 @ rate_at(t + 0.5 * h, y2)
        y3 = y + 0.5 * h * k2
        k3 = y3 @ rate_at(t + 0.5 * h, y3)
        y4 = y + h * k3
        k4 = y4 @ rate_at(t + h, y4)
        Y[k + 1] = _project(y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4), k + 1)
    return Y


def _forward_rk4_nodes(q_nodes: np.ndarray, y0: np.ndarray, grid: TimeGrid) -> np.ndarray:
    """``_forward_rk4`` for x-independent rates given at the grid nodes."""
    h = grid.dt
    q_mid = 0.5 * (q_nodes[1:] + q_nodes[:-1])
    Y = np.empty((grid.K + 1, y0.size))
    Y[0] = y0
    for k in range(grid.K):
        y = Y[k]
        k1 = y @ q_nodes[k]
        k2 = (y + 0.5 * h * k1) @ q_mid[k]
        k3 = (y + 0.5 * h * k2) @ q_mid[k]
        k4 = (y + h * k3) @ q_nodes[k + 1]
        Y[k + 1] = _project(y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4), k + 1)
    return Y


def solve_kinetic_forward(policy: Strategy, x0, grid: TimeGrid) -> np.ndarray:
    """Integrate ``dX_i/dt = sum_j X_j q_ji(t, X(t))`` from ``x0``."""
    x0 = as_simplex(x0)
    if isinstance(policy, GridStrategy) and np.array_equal(policy.times, grid.nodes):
        return _forward_rk4_nodes(policy.q, x0, grid)
    return _forward_rk4(lambda t, y: policy.rates(t, y), x0, grid)


def _gamma(X, p: ModelParams, grid: TimeGrid, eta: float | None):
    V = solve_hjb_backward(X, p, grid)
    qstar = optimal_rate_matrix(V, p, eta=eta)
    Xn = solve_kinetic_forward(GridStrategy(grid.nodes, qstar), X[0], grid)
    return Xn, V, qstar


def gamma_map(X, p: ModelParams, grid: TimeGrid, eta: float | None = None) -> np.ndarray:
    """One pass distribution path -> HJB -> optimal rates -> kinetic path."""
    return _gamma(np.asarray(X, dtype=float), p, grid, eta)[0]


def _stalled(history, window: int = 5) -> bool:
    """No new minimum of the residual within the last ``window`` iterations."""
    if len(history) <= window:
        return False
    return min(history[-window:]) >= min(history[:-window])


def solve_mfg_fixed_point(
    p: ModelParams,
    grid: TimeGrid,
    x0,
    tol: float = 1e-9,
    max_iter: int = 500,
    damping: float = 0.0,
    initial=None,
    eta: float | None = None,
) -> MfgSolution:
    """Damped Picard iteration ``X <- (1 - theta) Gamma(X) + theta X``.

    Starts from the constant path at ``x0`` unless ``initial`` is given.
    Whenever the residual makes no progress for five iterations the
    iteration restarts from the initial guess with stronger damping
    (0.5 first, then halfway to 1 each time).
    Raises ConvergenceError with the residual history after ``max_iter``
    total Gamma evaluations.
    """
    if not tol > 0 or max_iter < 1 or not 0.0 <= damping < 1.0:
        raise ValueError("need tol > 0, max_iter >= 1 and damping in [0, 1)")
    x0 = as_simplex(x0)
    if initial is None:
        start = np.tile(x0, (grid.K + 1, 1))
    else:
        start = np.array(initial, dtype=float)
        if start.shape != (grid.K + 1, p.d):
            raise ValueError("initial guess has the wrong shape")
        start[0] = x0
    theta = damping
    X = start.copy()
    history: list[float] = []
    run: list[float] = []
    steps: list[float] = []
    for it in range(1, max_iter + 1):
        Xg, V, qstar = _gamma(X, p, grid, eta)
        res = path_distance(Xg, X)
        history.append(res)
        run.append(res)
        if res <= tol:
            contraction = steps[-1] / steps[-2] if len(steps) >= 2 and steps[-2] > 0 else 0.0
            alpha = inspector_best_response(X, p)
            return MfgSolution(p, grid, X, V, np.atleast_1d(alpha), qstar, res, it,
                               contraction, tol, eta, history)
        if _stalled(run):
            theta = 0.5 if theta == 0.0 else 0.5 * (1.0 + theta)
            log.warning("fixed point stalled at iteration %d; restarting with damping %g",
                        it, theta)
            X = start.copy()
            run.clear()
            steps.clear()
            continue
        Xn = (1.0 - theta) * Xg + theta * X
        steps.append(path_distance(Xn, X))
        X = Xn
    raise ConvergenceError(
        f"no fixed point within {max_iter} iterations (residual {history[-1]:.3g})", history)


def solve_tagged_law_forward(sol: MfgSolution, deviation: Strategy, m0: int,
                             grid: TimeGrid | None = None) -> np.ndarray:
    """Law of a single inspectee using ``deviation`` along the frozen path ``sol.X``."""
    grid = grid or sol.grid
    X = sol.X if grid == sol.grid else _resample(sol, grid)
    y0 = np.zeros(sol.params.d)
    y0[m0] = 1.0
    return _forward_rk4(lambda t, y: deviation.rates(t, path_at(X, grid, t)), y0, grid)


def _resample(sol: MfgSolution, grid: TimeGrid) -> np.ndarray:
    return np.array([path_at(sol.X, sol.grid, t) for t in grid.nodes])


def limit_payoff(sol: MfgSolution, strategy: Strategy, m0: int,
                 p: ModelParams | None = None) -> float:
    """Expected limiting payoff of one inspectee starting at level ``m0``."""
    p = p or sol.params
    grid = sol.grid
    law = solve_tagged_law_forward(sol, strategy, m0)
    t = grid.nodes
    q = strategy.rates(t, sol.X)
    d = p.d
    sq = q * q
    sq[..., np.arange(d), np.arange(d)] = 0.0
    running = crime_reward(sol.X, p) - sq.sum(axis=-1)
    integrand = np.sum(law * running, axis=-1)
    total = np.sum(0.5 * (integrand[1:] + integrand[:-1])) * grid.dt
    return float(total + law[-1] @ p.terminal_values(sol.X[-1]))
