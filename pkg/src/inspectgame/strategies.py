"""Switching-strategy sources.

A strategy maps ``(t, x)`` to a ``(d, d)`` rate matrix.  All ``rates``
methods are vectorised: ``t`` may be a scalar or a ``(R,)`` array and
``x`` a ``(d,)`` or ``(R, d)`` array; the result broadcasts to
``(..., d, d)``.

``switching_cost(level, t0, t1, x)`` returns the integral of
``sum_{j != level} q_{level, j}(s, x)^2`` over ``[t0, t1]`` with ``x`` held
fixed, which is what a piecewise-constant population path needs.
"""

from __future__ import annotations

import numpy as np

from .model import ModelParams, check_rate_matrix, set_diagonal


def _off_diag_sq_row_sums(q: np.ndarray) -> np.ndarray:
    d = q.shape[-1]
    sq = q * q
    sq[..., np.arange(d), np.arange(d)] = 0.0
    return sq.sum(axis=-1)


class Strategy:
    d: int
    name: str = "strategy"

    def rates(self, t, x) -> np.ndarray:
        raise NotImplementedError

    def switching_cost(self, level, t0, t1, x):
        # 3-point Gauss-Legendre, exact when rates are affine in t on [t0, t1].
        t0 = np.asarray(t0, dtype=float)
        t1 = np.asarray(t1, dtype=float)
        level = np.asarray(level)
        half = 0.5 * (t1 - t0)
        mid = 0.5 * (t1 + t0)
        nodes = (-np.sqrt(0.6), 0.0, np.sqrt(0.6))
        weights = (5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0)
        total = 0.0
        for node, w in zip(nodes, weights):
            c = _off_diag_sq_row_sums(np.array(self.rates(mid + half * node, x)))
            lv = np.broadcast_to(level, c.shape[:-1])
            total = total + w * np.take_along_axis(c, lv[..., None], axis=-1)[..., 0]
        return half * total


class ConstantStrategy(Strategy):
    """Time- and state-independent rates."""

    def __init__(self, q, name: str = "constant"):
        q = set_diagonal(np.array(q, dtype=float))
        self.q = q
        self.d = q.shape[-1]
        self.name = name
        self._cost = _off_diag_sq_row_sums(q.copy())

    def rates(self, t, x):
        shape = np.broadcast(np.asarray(t), np.asarray(x)[..., 0]).shape
        return np.broadcast_to(self.q, shape + self.q.shape)

    def switching_cost(self, level, t0, t1, x):
        return self._cost[np.asarray(level)] * (np.asarray(t1) - np.asarray(t0))


class GridStrategy(Strategy):
    """Rates given at uniform time nodes, linear in between, ignoring ``x``."""

    def __init__(self, times, q, name: str = "grid"):
        self.times = np.asarray(times, dtype=float)
        self.q = np.asarray(q, dtype=float)
        self.d = self.q.shape[-1]
        self.name = name
        self.dt = self.times[1] - self.times[0]
        self._slope = np.diff(self.q, axis=0) / self.dt
        # exact integral of the squared affine off-diagonal rates over each cell
        a, b, w = self.q[:-1], self._slope, self.dt
        cell = _off_diag_sq_cell(a, b, w)
        self._cum = np.concatenate([np.zeros((1, self.d)), np.cumsum(cell, axis=0)])

    def _locate(self, t):
        t = np.clip(np.asarray(t, dtype=float), self.times[0], self.times[-1])
        k = np.minimum(((t - self.times[0]) / self.dt).astype(np.int64), len(self.times) - 2)
        return k, t - self.times[k]

    def rates(self, t, x=None):
        k, w = self._locate(t)
        return self.q[k] + self._slope[k] * np.asarray(w)[..., None, None]

    def cumulative_cost(self, level, t):
        level, t = np.broadcast_arrays(np.asarray(level), np.asarray(t, dtype=float))
        k, w = self._locate(t)
        a = self.q[k, level]
        b = self._slope[k, level]
        w = w[..., None]
        integ = a * a * w + a * b * w * w + b * b * w ** 3 / 3.0
        own = np.take_along_axis(integ, level[..., None], axis=-1)[..., 0]
        return self._cum[k, level] + integ.sum(axis=-1) - own

    def switching_cost(self, level, t0, t1, x=None):
        return self.cumulative_cost(level, t1) - self.cumulative_cost(level, t0)


def _off_diag_sq_cell(a, b, w, level=None):
    """``int_0^w sum_{j != i} (a_ij + b_ij u)^2 du``; per row, or at row ``level``."""
    w = np.asarray(w, dtype=float)
    integ = a * a * w + a * b * w * w + b * b * w ** 3 / 3.0
    d = a.shape[-1]
    integ = np.array(integ)
    integ[..., np.arange(d), np.arange(d)] = 0.0
    rows = integ.sum(axis=-1)
    if level is None:
        return rows
    return np.take_along_axis(rows, np.asarray(level)[..., None], axis=-1)[..., 0]


class FunctionStrategy(Strategy):
    """Wrap a vectorised callable ``f(t, x) -> (..., d, d)``."""

    def __init__(self, func, d: int, name: str = "function"):
        self.func = func
        self.d = d
        self.name = name

    def rates(self, t, x):
        return np.asarray(self.func(t, x), dtype=float)


def stay(d: int) -> ConstantStrategy:
    return ConstantStrategy(np.zeros((d, d)), name="STAY")


def max_up(p: ModelParams) -> ConstantStrategy:
    q = np.zeros((p.d, p.d))
    q[:-1, -1] = p.Q
    return ConstantStrategy(q, name="MAX_UP")


def max_down(p: ModelParams) -> ConstantStrategy:
    q = np.zeros((p.d, p.d))
    q[1:, 0] = p.Q
    return ConstantStrategy(q, name="MAX_DOWN")


def constant(p: ModelParams, c: float) -> ConstantStrategy:
    q = np.full((p.d, p.d), float(c))
    strat = ConstantStrategy(q, name=f"CONSTANT({c:g})")
    check_rate_matrix(strat.q, p.Q)
    return strat
