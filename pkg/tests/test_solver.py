import numpy as np
import pytest

from inspectgame.model import ModelParams, TerminalSpec, crime_reward
from inspectgame.solver import (
    ConvergenceError,
    IntegrationError,
    TimeGrid,
    gamma_map,
    limit_payoff,
    path_distance,
    solve_hjb_backward,
    solve_kinetic_forward,
    solve_mfg_fixed_point,
    solve_tagged_law_forward,
)
from inspectgame.strategies import (
    ConstantStrategy,
    FunctionStrategy,
    GridStrategy,
    constant,
    max_down,
    max_up,
    stay,
)

X0 = (0.5, 0.3, 0.2)


def d2_flip():
    return ConstantStrategy([[0.0, 1.0], [1.0, 0.0]])


# -- kinetic ---------------------------------------------------------------


def test_kinetic_closed_form():
    grid = TimeGrid(200, 1.0)
    X = solve_kinetic_forward(d2_flip(), [1.0, 0.0], grid)
    t = grid.nodes
    np.testing.assert_allclose(X[:, 0], (1 + np.exp(-2 * t)) / 2, atol=1e-8, rtol=0)


def test_kinetic_stationary_and_frozen():
    grid = TimeGrid(50, 2.0)
    X = solve_kinetic_forward(d2_flip(), [0.5, 0.5], grid)
    np.testing.assert_allclose(X, 0.5, atol=1e-15)
    Y = solve_kinetic_forward(stay(3), X0, grid)
    assert np.all(Y == np.asarray(X0))


def test_kinetic_generic_path_matches_node_path(sol):
    # x-dependent wrapper forces the generic integrator
    pol = sol.policy()
    wrapped = FunctionStrategy(lambda t, x: pol.rates(t), 3)
    a = solve_kinetic_forward(pol, X0, sol.grid)
    b = solve_kinetic_forward(wrapped, X0, sol.grid)
    np.testing.assert_allclose(a, b, atol=1e-14)


def test_kinetic_rk4_order():
    # state-dependent rates so the RK4 stages really matter
    f = FunctionStrategy(lambda t, x: _sd_rates(t, x), 3)
    ref = solve_kinetic_forward(f, X0, TimeGrid(1600, 2.0))[-1]
    errs = [np.abs(solve_kinetic_forward(f, X0, TimeGrid(K, 2.0))[-1] - ref).max() for K in (20, 40, 80)]
    assert errs[0] / errs[1] >= 8 and errs[1] / errs[2] >= 8


def _sd_rates(t, x):
    x = np.asarray(x)
    q = np.zeros(x.shape[:-1] + (3, 3))
    q[..., 0, 1] = 0.5 + 0.5 * x[..., 2]
    q[..., 1, 2] = 0.3 + 0.2 * np.sin(3 * np.asarray(t))
    q[..., 2, 0] = 0.8 * x[..., 0]
    for i in range(3):
        q[..., i, i] = -q[..., i, :].sum(axis=-1)
    return q


def test_kinetic_simplex_violation_raises():
    bad = FunctionStrategy(lambda t, x: np.array([[0.0, 0.5], [0.0, 0.0]]), 2)
    with pytest.raises(IntegrationError):
        solve_kinetic_forward(bad, [1.0, 0.0], TimeGrid(10, 1.0))


def test_kinetic_lipschitz_in_policy():
    # forward solves under two constant policies: ratio to T * sup distance stable under refinement
    base = constant(ModelParams(), 0.3)
    other = constant(ModelParams(), 0.35)
    dist = np.abs(base.q - other.q).max()
    ratios = []
    for K in (100, 400):
        g = TimeGrid(K, 1.0)
        gap = path_distance(solve_kinetic_forward(base, X0, g), solve_kinetic_forward(other, X0, g))
        ratios.append(gap / (g.T * dist))
    assert ratios[0] == pytest.approx(ratios[1], rel=1e-6)


# -- HJB -------------------------------------------------------------------


def test_hjb_small_Q_closed_form():
    p = ModelParams(Q=1e-12)
    grid = TimeGrid(200, 1.0)
    X = np.tile(X0, (grid.K + 1, 1))
    V = solve_hjb_backward(X, p, grid)
    expect = (grid.T - grid.nodes)[:, None] * crime_reward(np.asarray(X0), p)[None, :]
    np.testing.assert_allclose(V, expect, atol=1e-6, rtol=0)


def test_hjb_single_state():
    p = ModelParams(levels=(1.5,), terminal=TerminalSpec("linear", a=0.4, b=0.1))
    grid = TimeGrid(20, 2.0)
    X = np.ones((21, 1))
    V = solve_hjb_backward(X, p, grid)
    r = crime_reward(np.array([1.0]), p)[0]
    np.testing.assert_allclose(V[:, 0], (grid.T - grid.nodes) * r + 0.4 * 1.5 + 0.1 * 1.5, atol=1e-12)


def test_hjb_terminal_exact():
    p = ModelParams(terminal=TerminalSpec("linear", a=0.3, b=-0.2))
    grid = TimeGrid(40, 1.0)
    X = np.tile(X0, (41, 1))
    V = solve_hjb_backward(X, p, grid)
    assert np.array_equal(V[-1], p.terminal_values(X[-1]))


def _hjb_at_zero(K, T=1.0):
    p = ModelParams(T=T)
    grid = TimeGrid(K, T)
    X = np.tile(X0, (K + 1, 1))
    return solve_hjb_backward(X, p, grid)[0]


def test_hjb_rk4_order():
    ref = _hjb_at_zero(3200)
    errs = [np.abs(_hjb_at_zero(K) - ref).max() for K in (10, 20, 40)]
    assert errs[0] / errs[1] >= 8 and errs[1] / errs[2] >= 8


def test_hjb_nonfinite_names_node():
    p = ModelParams()
    grid = TimeGrid(10, 1.0)
    X = np.tile(X0, (11, 1))
    X[4] = [np.nan, 0.5, 0.5]
    with pytest.raises(Exception, match="node"):
        solve_hjb_backward(X, p, grid)


def test_value_lipschitz_in_path(sol):
    p, grid = sol.params, sol.grid
    rng = np.random.default_rng(3)
    direction = rng.normal(size=(grid.K + 1, 3))
    direction -= direction.mean(axis=1, keepdims=True)
    direction /= np.linalg.norm(direction, axis=1).max()
    V0 = solve_hjb_backward(sol.X, p, grid)
    ratios = []
    for delta in (1e-2, 1e-3):
        V1 = solve_hjb_backward(sol.X + delta * direction, p, grid)
        ratios.append(path_distance(V1, V0) / delta)
    assert 0.5 <= ratios[0] / ratios[1] <= 2.0


# -- Gamma and fixed point -------------------------------------------------


def test_gamma_single_state():
    p = ModelParams(levels=(1.0,))
    grid = TimeGrid(10, 1.0)
    X = np.ones((11, 1))
    assert np.array_equal(gamma_map(X, p, grid), X)
    s = solve_mfg_fixed_point(p, grid, [1.0])
    assert s.iterations == 1 and np.all(s.X == 1.0)


def test_gamma_contraction_short_horizon(rng):
    p = ModelParams(T=0.25)
    grid = TimeGrid(100, 0.25)
    for _ in range(5):
        X, Y = (_random_path(rng, grid) for _ in range(2))
        ratio = path_distance(gamma_map(X, p, grid), gamma_map(Y, p, grid)) / path_distance(X, Y)
        assert ratio < 1


def _random_path(rng, grid):
    a, b = rng.dirichlet(np.ones(3), size=2)
    w = grid.nodes[:, None] / grid.T
    X = (1 - w) * a + w * b
    X[0] = X0
    return X


def test_fixed_point_self_consistent(sol_short):
    s = sol_short
    assert s.converged and s.residual <= 1e-9
    again = gamma_map(s.X, s.params, s.grid)
    assert path_distance(again, s.X) <= 1e-9


def test_fixed_point_tighter_tol():
    p = ModelParams(T=0.25)
    grid = TimeGrid(200, 0.25)
    s = solve_mfg_fixed_point(p, grid, X0, tol=1e-10)
    assert path_distance(gamma_map(s.X, p, grid), s.X) <= 1e-9


def test_fixed_point_unique_short_horizon(rng):
    p = ModelParams(T=0.25)
    grid = TimeGrid(200, 0.25)
    a = solve_mfg_fixed_point(p, grid, X0, tol=1e-9)
    b = solve_mfg_fixed_point(p, grid, X0, tol=1e-9, initial=_random_path(rng, grid))
    assert path_distance(a.X, b.X) <= 1e-8


def test_solution_invariants(sol):
    from inspectgame.model import inspector_best_response, optimal_rate_matrix

    assert np.all(np.abs(sol.X.sum(axis=1) - 1) <= 1e-12) and sol.X.min() >= 0
    assert np.array_equal(sol.V[-1], sol.params.terminal_values(sol.X[-1]))
    np.testing.assert_array_equal(sol.alpha, inspector_best_response(sol.X, sol.params))
    np.testing.assert_array_equal(sol.qstar, optimal_rate_matrix(sol.V, sol.params))


def test_nonconvergence_carries_history():
    p = ModelParams()
    with pytest.raises(ConvergenceError) as exc:
        solve_mfg_fixed_point(p, TimeGrid(50, 1.0), X0, max_iter=3)
    assert len(exc.value.history) == 3


def test_long_horizon_falls_back_to_damping(caplog):
    p = ModelParams(T=3.0)
    s = solve_mfg_fixed_point(p, TimeGrid(150, 3.0), X0)
    assert s.converged
    assert any("damping" in r.message for r in caplog.records)


def test_bad_arguments():
    p = ModelParams()
    g = TimeGrid(10, 1.0)
    for kw in ({"tol": 0}, {"max_iter": 0}, {"damping": 1.0}):
        with pytest.raises(ValueError):
            solve_mfg_fixed_point(p, g, X0, **kw)
    with pytest.raises(ValueError):
        TimeGrid(1, 1.0)


# -- tagged law and limit payoff -------------------------------------------


def test_tagged_law_examples(sol):
    law = solve_tagged_law_forward(sol, stay(3), 1)
    assert np.all(law == np.array([0.0, 1.0, 0.0]))
    law = solve_tagged_law_forward(sol, sol.policy(), 0)
    assert np.all(np.abs(law.sum(axis=1) - 1) <= 1e-9)


def test_tagged_law_d2_closed_form():
    p = ModelParams(levels=(0.0, 1.0))
    grid = TimeGrid(200, 1.0)
    s = solve_mfg_fixed_point(p, grid, [0.5, 0.5])
    law = solve_tagged_law_forward(s, d2_flip(), 0)
    np.testing.assert_allclose(law[:, 0], (1 + np.exp(-2 * grid.nodes)) / 2, atol=1e-8)


def test_limit_payoff_matches_value(sol):
    for m0 in range(3):
        assert limit_payoff(sol, sol.policy(), m0) == pytest.approx(sol.V[0, m0], abs=2e-4)


def test_limit_payoff_single_state():
    p = ModelParams(levels=(1.0,), terminal=TerminalSpec("linear", a=1.0))
    s = solve_mfg_fixed_point(p, TimeGrid(50, 1.0), [1.0])
    assert limit_payoff(s, s.policy(), 0) == pytest.approx(s.V[0, 0], abs=1e-6)


def test_limit_payoff_consistency_refines():
    gaps = []
    for K in (50, 100):
        p = ModelParams()
        s = solve_mfg_fixed_point(p, TimeGrid(K, 1.0), X0)
        gaps.append(abs(limit_payoff(s, s.policy(), 1) - s.V[0, 1]))
    assert gaps[1] <= gaps[0] / 3


def test_dominance_of_optimal_rates(sol, params):
    ref = [sol.V[0, m] for m in range(3)]
    devs = [stay(3), max_up(params), max_down(params), constant(params, 0.5),
            sol.mollified_policy(0.1), sol.mollified_policy(0.5)]
    for dev in devs:
        for m0 in range(3):
            assert limit_payoff(sol, dev, m0) <= ref[m0] + 2e-4


def test_grid_strategy_cost_is_exact():
    from scipy.integrate import quad

    rng = np.random.default_rng(0)
    t = np.linspace(0, 1, 11)
    q = rng.uniform(0, 1, (11, 3, 3))
    g = GridStrategy(t, q)
    for level in range(3):
        for a, b in ((0.0, 1.0), (0.13, 0.77), (0.5, 0.5)):
            exact = quad(lambda s: sum(g.rates(s)[level, j] ** 2 for j in range(3) if j != level),
                         a, b, points=t[1:-1], limit=200)[0]
            assert g.switching_cost(level, a, b) == pytest.approx(exact, abs=1e-12)
