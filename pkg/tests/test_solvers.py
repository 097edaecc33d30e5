import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from hetfl.audit import random_instances
from hetfl.core import Agent, Instance, Objective, Placement, UsageError, max_utility, objective_value
from hetfl.solvers import (
    DiscreteScenario,
    Method,
    ResourceError,
    grid_solve,
    solve,
    solve_1d,
    solve_2d,
    solve_discrete,
    solve_many,
)

X_STAR = (13 - math.sqrt(41)) / 8
OBJECTIVES = list(Objective)


def lp_oracle(inst: Instance, obj: Objective) -> float:
    """Max-min over the square via one LP per cell (min-type objectives only)."""
    ell = inst.ell
    bps = sorted({0.0, ell, *inst.locations.tolist()})
    best = -math.inf
    for (a, b), (c, d) in itertools.product(zip(bps, bps[1:]), repeat=2):
        rows, rhs = [], []
        for ag in inst.agents:
            w = 1 / max_utility(ag, ell) if obj is Objective.HAPPINESS else 1.0
            coef, const = [0.0, 0.0], 0.0
            for j, (lo, hi) in enumerate([(a, b), (c, d)]):
                t = ag.prefs[j]
                side = 1.0 if (lo + hi) / 2 >= ag.location else -1.0
                if t == 0:
                    const += ell
                elif t == 1:
                    coef[j] -= side
                    const += ell + side * ag.location
                else:
                    coef[j] += side
                    const -= side * ag.location
            # s <= w (coef . y + const)
            rows.append([-w * coef[0], -w * coef[1], 1.0])
            rhs.append(w * const)
        res = linprog([0, 0, -1], A_ub=rows, b_ub=rhs, bounds=[(a, b), (c, d), (None, None)],
                      method="highs")
        if res.status == 0:
            best = max(best, -res.fun)
    return best


def test_solve_1d_examples():
    r = solve_1d(Instance.build(1, [(0, (1,)), (1, (1,))]))
    assert r.placement[0] == pytest.approx(0.5) and r.value == pytest.approx(0.5)
    five = Instance.build(1, [(x, (-1,)) for x in (0, 0.4, 0.6, 0.8, 1)])
    r = solve_1d(five)
    assert r.placement[0] == pytest.approx(0.2) and r.value == pytest.approx(0.2)
    assert r.method is Method.EXACT_1D


def test_solve_1d_all_indifferent():
    r = solve_1d(Instance.build(1, [(0.3, (0,)), (0.9, (0,))]), "util")
    assert r.placement[0] == 0 and r.value == pytest.approx(2.0)


def test_solve_1d_ignores_indifferent_agents():
    inst = Instance.build(1, [(0.0, (-1,)), (0.4, (0,))])
    assert solve_1d(inst).placement[0] == 1.0


def test_solver_shape_errors():
    with pytest.raises(UsageError):
        solve_1d(Instance.build(1, [(0.3, (1, 1))]))
    with pytest.raises(UsageError):
        solve_2d(Instance.build(1, [(0.3, (1,))]))
    with pytest.raises(UsageError):
        solve(Instance.build(1, [(0.3, (1, 1, 1))]))


def test_solve_2d_examples():
    fig1 = Instance.build(1, [(0, (-1, 1)), (X_STAR, (0, 1))])
    r = solve_2d(fig1)
    assert r.placement[0] == pytest.approx(1.0, abs=1e-12)
    assert r.placement[1] == pytest.approx(X_STAR / 2, abs=1e-12)
    assert r.value == pytest.approx(2 - X_STAR / 2, abs=1e-12)
    five = Instance.build(1, [(x, (-1, -1)) for x in (0, 0.4, 0.6, 0.8, 1)])
    r = solve_2d(five)
    assert tuple(r.placement) == (0.0, 1.0) and r.value == pytest.approx(1.0)


def test_solve_2d_hand_derived_values():
    # three agents at 0, 1/2, 1: equalising 1 + y2 ... gives (2/3, 1/3) and 5/3
    fig2 = Instance.build(1, [(0, (0, 1)), (0.5, (1, 1)), (1, (1, 0))])
    r = solve_2d(fig2)
    assert tuple(r.placement) == pytest.approx((2 / 3, 1 / 3), abs=1e-12)
    assert r.value == pytest.approx(5 / 3, abs=1e-12)
    # after the (1,1) misreport the optimum moves to (1/2, 0) with value 3/2
    fig2p = Instance.build(1, [(0, (1, 1)), (0.5, (1, 1)), (1, (1, 0))])
    r = solve_2d(fig2p)
    assert tuple(r.placement) == pytest.approx((0.5, 0.0), abs=1e-12)
    assert r.value == pytest.approx(1.5, abs=1e-12)
    # optimal set of this one is the segment y1 + y2 = 1; lexmin picks (0, 1)
    fig4p = Instance.build(1, [(0, (-1, -1)), (0.5, (-1, 0)), (1, (-1, -1))])
    r = solve_2d(fig4p)
    assert tuple(r.placement) == pytest.approx((0.0, 1.0)) and r.value == pytest.approx(1.0)


def test_grid_examples():
    r = grid_solve(Instance.build(1, [(0.5, (1, 1))]), resolution=0.25)
    assert tuple(r.placement) == (0.5, 0.5) and r.value == 2
    fig1 = Instance.build(1, [(0, (-1, 1)), (X_STAR, (0, 1))])
    assert grid_solve(fig1, resolution=1e-3).value == pytest.approx(2 - X_STAR / 2, abs=2e-3)


def test_grid_budget():
    inst = Instance.build(1, [(0.5, (1, 1, 1))])
    with pytest.raises(ResourceError, match="budget"):
        grid_solve(inst, resolution=1e-3, budget=10_000)
    with pytest.raises(UsageError):
        grid_solve(inst, resolution=1.0)


@pytest.mark.parametrize("obj", OBJECTIVES)
def test_sandwich_against_grid(obj):
    r = 2e-3
    for _, inst in random_instances(seed=11, count=40, n_max=5):
        exact = solve_2d(inst, obj).value
        grid = grid_solve(inst, obj, r).value
        assert grid - 1e-9 <= exact <= grid + 2 * r + 1e-9, inst


@pytest.mark.parametrize("obj", [Objective.EGALITARIAN, Objective.HAPPINESS])
def test_matches_lp_oracle(obj):
    for _, inst in random_instances(seed=5, count=30, n_max=4):
        assert solve_2d(inst, obj).value == pytest.approx(lp_oracle(inst, obj), abs=1e-7)


def test_utilitarian_is_separable():
    for _, inst in random_instances(seed=3, count=30, n_max=6):
        per_axis = 0.0
        for j in range(2):
            axis = Instance(inst.ell, 1, tuple(Agent(a.location, (a.prefs[j],)) for a in inst.agents))
            cands = [0.0, 1.0, *axis.locations.tolist()]
            per_axis += max(objective_value(axis, Placement((y,)), "util") for y in cands)
        assert solve_2d(inst, "util").value == pytest.approx(per_axis, abs=1e-9)


@pytest.mark.parametrize("obj", OBJECTIVES)
def test_solve_1d_against_fine_grid(obj):
    for _, inst in random_instances(seed=21, count=40, n_max=6, k=1):
        if all(a.prefs[0] == 0 for a in inst.agents):
            continue
        active = Instance(inst.ell, 1, tuple(a for a in inst.agents if a.prefs[0] != 0))
        exact = solve_1d(inst, obj)
        grid = grid_solve(active, obj, 1e-4)
        assert objective_value(active, exact.placement, obj) == pytest.approx(grid.value, abs=2e-4)


def test_solve_many_matches_scalar():
    insts = [inst for _, inst in random_instances(seed=8, count=60, n_max=5)]
    insts += [inst for _, inst in random_instances(seed=9, count=10, n_max=3, k=1)]
    for obj in OBJECTIVES:
        batch = solve_many(insts, obj, batch=16)
        for inst, res in zip(insts, batch):
            single = solve(inst, obj)
            assert res.value == pytest.approx(single.value, abs=1e-12)
            assert tuple(res.placement) == pytest.approx(tuple(single.placement), abs=1e-12)


def test_solve_many_grid_for_k3():
    insts = [inst for _, inst in random_instances(seed=2, count=5, n_max=3, k=3)]
    res = solve_many(insts, "egal", resolution=0.1)
    assert all(r.method is Method.GRID for r in res)
    with pytest.raises(UsageError):
        solve_many(insts, "egal")


def test_value_matches_objective_at_placement():
    for _, inst in random_instances(seed=4, count=30):
        for obj in OBJECTIVES:
            r = solve_2d(inst, obj)
            assert r.value == pytest.approx(objective_value(inst, r.placement, obj), abs=1e-9)


code = st.sampled_from([-1, 0, 1])
agent2 = st.builds(lambda x, a, b: Agent(x, (a, b)), st.floats(0, 1), code, code)


@settings(max_examples=40, deadline=None)
@given(st.lists(agent2, min_size=1, max_size=5), st.sampled_from(OBJECTIVES))
def test_reflection_equivariance(agents, obj):
    inst = Instance(1.0, 2, tuple(agents))
    # near-ties within the solver's 1e-9 tie tolerance may resolve to either side
    assert solve_2d(inst, obj).value == pytest.approx(solve_2d(inst.reflected(), obj).value, abs=1e-8)


@settings(max_examples=40, deadline=None)
@given(st.lists(agent2, min_size=2, max_size=5), st.data())
def test_removing_agent_never_hurts_egalitarian(agents, data):
    inst = Instance(1.0, 2, tuple(agents))
    i = data.draw(st.integers(0, inst.n - 1))
    assert solve_2d(inst.without_agent(i)).value >= solve_2d(inst).value - 1e-9


@settings(max_examples=40, deadline=None)
@given(st.lists(agent2, min_size=1, max_size=5))
def test_tie_break_is_lexicographic_minimum(agents):
    inst = Instance(1.0, 2, tuple(agents))
    r = solve_2d(inst)
    grid = np.linspace(0, 1, 21)
    for y1, y2 in itertools.product(grid, grid):
        # an optimal point further left would contradict the lexicographic choice
        if y1 < r.placement[0] - 1e-6:
            assert objective_value(inst, Placement((y1, y2)), "egal") < r.value - 1e-12


def test_discrete_examples():
    r = solve_discrete(DiscreteScenario([(0, 0), (1, 0)], [(0, 0)], [1]))
    assert r.index == 0 and r.placement.positions == (0.0, 0.0)
    r = solve_discrete(DiscreteScenario([(0, 0), (1, 0)], [(0, 0), (1, 0)], [-1, -1]))
    assert r.index == 0 and r.value == 0


def test_discrete_empty_sites():
    with pytest.raises(Exception):
        DiscreteScenario([], [(0, 0)], [1])


def test_discrete_against_enumeration():
    rng = np.random.default_rng(0)
    for _ in range(50):
        sites = rng.random((3, 2))
        pts = rng.random((3, 2))
        prefs = rng.integers(-1, 2, size=3)
        sc = DiscreteScenario(sites.tolist(), pts.tolist(), prefs.tolist())
        scale = sc.utility_scale
        for obj in OBJECTIVES:
            values = []
            for s in sites:
                pays = []
                for p, t in zip(pts, prefs):
                    d = math.dist(p, s)
                    pays.append({1: scale - d, -1: d, 0: scale}[int(t)])
                values.append(pays)
            if obj is Objective.UTILITARIAN:
                scores = [sum(v) for v in values]
            elif obj is Objective.EGALITARIAN:
                scores = [min(v) for v in values]
            else:
                best = [max(values[s][i] for s in range(3)) for i in range(3)]
                scores = [min(v[i] / best[i] if best[i] > 0 else 1.0 for i in range(3)) for v in values]
            top = max(scores)
            expected = next(i for i, s in enumerate(scores) if s >= top - 1e-9)
            got = solve_discrete(sc, obj)
            assert got.index == expected and got.value == pytest.approx(scores[expected], abs=1e-9)
