"""Optimal facility placement.

``solve_1d`` and ``solve_2d`` are exact for one and two facilities. Both
enumerate a finite candidate set that provably contains the
lexicographically smallest optimal placement:

* one facility: every utility is piecewise linear with a kink at the agent's
  location, so maxima of a min (or sum) of them sit at segment ends, kinks or
  pairwise crossings inside a linear piece;
* two facilities: breakpoints on both axes cut the square into cells in which
  every utility is affine, so each cell is a small LP whose vertices are cell
  corners, points where two agents tie on a cell edge, and points where three
  agents tie inside the cell.

``grid_solve`` is the brute-force lattice oracle used to check them.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import (
    EPS,
    Agent,
    Instance,
    InputDomainError,
    Objective,
    Placement,
    UsageError,
    facility_utility_array,
    max_utility,
    max_utility_array,
    objective_value,
)

MAX_EXACT_2D_AGENTS = 30
DEFAULT_GRID_BUDGET = 50_000_000


class ResourceError(RuntimeError):
    """A computation would exceed its configured evaluation budget."""


class Method(enum.Enum):
    EXACT_1D = "exact-1d"
    EXACT_2D_CELLS = "exact-2d-cells"
    GRID = "grid"
    DISCRETE = "discrete"


@dataclass(frozen=True)
class SolveResult:
    placement: Placement
    value: float
    method: Method
    index: Optional[int] = None  # chosen site for DISCRETE


@dataclass(frozen=True)
class DiscreteScenario:
    """One facility, a finite list of candidate sites, agents anywhere in R^d."""

    sites: tuple[tuple[float, ...], ...]
    agent_points: tuple[tuple[float, ...], ...]
    prefs: tuple[int, ...]
    utility_scale: Optional[float] = None

    def __post_init__(self):
        sites = tuple(tuple(float(c) for c in s) for s in self.sites)
        points = tuple(tuple(float(c) for c in p) for p in self.agent_points)
        object.__setattr__(self, "sites", sites)
        object.__setattr__(self, "agent_points", points)
        object.__setattr__(self, "prefs", tuple(int(t) for t in self.prefs))
        if not sites:
            raise InputDomainError("a discrete scenario needs at least one site")
        if len(points) != len(self.prefs):
            raise InputDomainError("one preference code per agent is required")
        dims = {len(v) for v in sites + points}
        if len(dims) != 1 or 0 in dims:
            raise InputDomainError("all coordinates must share one dimension d >= 1")
        if any(t not in (-1, 0, 1) for t in self.prefs):
            raise InputDomainError("preference codes must be in {-1, 0, 1}")
        if self.utility_scale is None:
            everything = np.array(sites + points)
            diffs = everything[:, None, :] - everything[None, :, :]
            scale = float(np.sqrt((diffs ** 2).sum(-1)).max())
            object.__setattr__(self, "utility_scale", scale)


def _lexmin_index(values: Sequence[float], coords: Sequence[Sequence[float]]) -> int:
    best = max(values)
    chosen = None
    for idx, (v, c) in enumerate(zip(values, coords)):
        if v < best - EPS:
            continue
        if chosen is None or _lex_less(c, coords[chosen]):
            chosen = idx
    return chosen


def _lex_less(a, b) -> bool:
    for u, v in zip(a, b):
        if u < v - EPS:
            return True
        if u > v + EPS:
            return False
    return False


# ---------------------------------------------------------------- one facility

def _piece(agent_x: float, t: int, ell: float, lo: float, hi: float):
    """Slope and intercept of one facility utility on [lo, hi]."""
    if t == 0:
        return 0.0, ell
    side = 1.0 if (lo + hi) / 2 >= agent_x else -1.0
    # |x - y| = side * (y - x) on this piece
    if t == 1:
        return -side, ell + side * agent_x
    return side, -side * agent_x


def solve_1d(instance: Instance, obj: Objective = Objective.EGALITARIAN) -> SolveResult:
    """Exact optimum for a single facility, ignoring indifferent agents."""
    obj = Objective.parse(obj)
    if instance.k != 1:
        raise UsageError(f"solve_1d needs k = 1, got k = {instance.k}")
    ell = instance.ell
    active = [a for a in instance.agents if a.prefs[0] != 0]
    if not active:
        y = Placement((0.0,))
        return SolveResult(y, objective_value(instance, y, obj), Method.EXACT_1D)

    weights = [1.0 / max_utility(a, ell) if obj is Objective.HAPPINESS else 1.0
               for a in active]
    breaks = sorted({0.0, ell, *(a.location for a in active)})
    dedup = [breaks[0]]
    for b in breaks[1:]:
        if b - dedup[-1] > EPS:
            dedup.append(b)
    dedup[-1] = ell

    candidates = list(dedup)
    if obj is not Objective.UTILITARIAN:
        for lo, hi in zip(dedup, dedup[1:]):
            pieces = [_piece(a.location, a.prefs[0], ell, lo, hi) for a in active]
            pieces = [(w * s, w * c) for w, (s, c) in zip(weights, pieces)]
            for (s1, c1), (s2, c2) in itertools.combinations(pieces, 2):
                if s1 != s2:
                    y = (c2 - c1) / (s1 - s2)
                    if lo < y < hi:
                        candidates.append(y)
    candidates.sort()

    def score(y):
        us = [w * _u1(a, y, ell) for w, a in zip(weights, active)]
        return math.fsum(us) if obj is Objective.UTILITARIAN else min(us)

    values = [score(y) for y in candidates]
    idx = _lexmin_index(values, [(y,) for y in candidates])
    y = Placement((candidates[idx],))
    return SolveResult(y, objective_value(instance, y, obj), Method.EXACT_1D)


def _u1(agent: Agent, y: float, ell: float) -> float:
    t = agent.prefs[0]
    if t == 0:
        return ell
    d = abs(agent.location - y)
    return d if t == -1 else ell - d


# --------------------------------------------------------------- two facilities

def _weights(x, prefs, ell, obj):
    if obj is Objective.HAPPINESS:
        return 1.0 / max_utility_array(x, prefs, ell)
    return np.ones_like(x)


def _score(x, prefs, w, ell, y1, y2, obj):
    """Objective at candidates y1, y2 of shape (B, K); returns (B, K)."""
    u = facility_utility_array(x[:, None, :], prefs[:, None, :, 0], y1[:, :, None], ell)
    u = u + facility_utility_array(x[:, None, :], prefs[:, None, :, 1], y2[:, :, None], ell)
    u = u * w[:, None, :]
    return u.sum(-1) if obj is Objective.UTILITARIAN else u.min(-1)


def _candidate_blocks(x, prefs, w, ell):
    """Yield (y1, y2) candidate blocks of shape (B, K) for min-type objectives."""
    B, n = x.shape
    bp = np.sort(np.concatenate([np.zeros((B, 1)), np.full((B, 1), ell), x], axis=1), axis=1)
    m = bp.shape[1]
    tol = EPS * max(1.0, ell)

    # cell corners
    yield np.repeat(bp, m, axis=1), np.tile(bp, (1, m))
    if n < 2:
        return

    lo, hi = bp[:, :-1], bp[:, 1:]
    side = np.sign((lo + hi)[:, :, None] / 2 - x[:, None, :])
    side[side == 0] = 1.0
    slope, icpt = [], []
    for j in range(2):
        t = prefs[:, None, :, j].astype(float)
        c0 = np.where(t == -1, 0.0, ell)
        slope.append(w[:, None, :] * (-t * side))
        icpt.append(w[:, None, :] * (c0 + t * side * x[:, None, :]))

    I, J = np.triu_indices(n, 1)
    # ties of two agents along a breakpoint line of one axis
    for fixed in range(2):
        free = 1 - fixed
        f = w[:, None, :] * facility_utility_array(
            x[:, None, :], prefs[:, None, :, fixed], bp[:, :, None], ell)      # (B, m, n)
        S, C = slope[free], icpt[free]                                      # (B, m-1, n)
        num = (f[:, :, None, J] + C[:, None, :, J]) - (f[:, :, None, I] + C[:, None, :, I])
        den = np.broadcast_to((S[:, :, I] - S[:, :, J])[:, None], num.shape)
        with np.errstate(divide="ignore", invalid="ignore"):
            y = np.where(np.abs(den) > 1e-12, num / den, np.nan)
        inside = (y >= lo[:, None, :, None] - tol) & (y <= hi[:, None, :, None] + tol)
        y = np.where(inside, np.clip(y, 0.0, ell), np.nan).reshape(B, -1)
        line = np.broadcast_to(bp[:, :, None, None], num.shape).reshape(B, -1)
        yield (line, y) if fixed == 0 else (y, line)

    if n < 3:
        return
    T = np.array(list(itertools.combinations(range(n), 3)))
    Ti, Tj, Tk = T[:, 0], T[:, 1], T[:, 2]
    S1, S2, C1, C2 = slope[0], slope[1], icpt[0], icpt[1]
    b11 = S1[:, :, Ti] - S1[:, :, Tj]            # (B, m-1, T)
    b21 = S1[:, :, Ti] - S1[:, :, Tk]
    b12 = S2[:, :, Ti] - S2[:, :, Tj]
    b22 = S2[:, :, Ti] - S2[:, :, Tk]
    for p in range(m - 1):
        # cell row p on axis 1, every cell q on axis 2
        g = C1[:, p, None, :] + C2                 # (B, m-1, n): gamma per q
        r1 = g[:, :, Tj] - g[:, :, Ti]
        r2 = g[:, :, Tk] - g[:, :, Ti]
        a11, a21 = b11[:, p, None, :], b21[:, p, None, :]
        det = a11 * b22 - b12 * a21
        with np.errstate(divide="ignore", invalid="ignore"):
            ok = np.abs(det) > 1e-12
            y1 = np.where(ok, (r1 * b22 - b12 * r2) / det, np.nan)
            y2 = np.where(ok, (a11 * r2 - r1 * a21) / det, np.nan)
        inside = ((y1 >= lo[:, p, None, None] - tol) & (y1 <= hi[:, p, None, None] + tol)
                  & (y2 >= lo[:, :, None] - tol) & (y2 <= hi[:, :, None] + tol))
        y1 = np.where(inside, np.clip(y1, 0.0, ell), np.nan)
        y2 = np.where(inside, np.clip(y2, 0.0, ell), np.nan)
        yield y1.reshape(B, -1), y2.reshape(B, -1)


def solve_2d_arrays(ell: float, x, prefs, obj: Objective = Objective.EGALITARIAN):
    """Exact two-facility optimum for a batch of same-size instances.

    ``x`` has shape (B, n) and ``prefs`` shape (B, n, 2). Returns placements
    of shape (B, 2) (lexicographic-min among optimal) and their values.
    """
    obj = Objective.parse(obj)
    x = np.asarray(x, dtype=float)
    prefs = np.asarray(prefs)
    if x.ndim != 2 or prefs.shape != x.shape + (2,):
        raise UsageError("solve_2d_arrays needs x of shape (B, n) and prefs of shape (B, n, 2)")
    w = _weights(x, prefs, ell, obj)
    B = x.shape[0]

    if obj is Objective.UTILITARIAN:
        bp = np.sort(np.concatenate([np.zeros((B, 1)), np.full((B, 1), ell), x], axis=1), axis=1)
        m = bp.shape[1]
        blocks = [(np.repeat(bp, m, axis=1), np.tile(bp, (1, m)))]
    else:
        blocks = _candidate_blocks(x, prefs, w, ell)

    Y1, Y2, V = [], [], []
    for y1, y2 in blocks:
        valid = ~(np.isnan(y1) | np.isnan(y2))
        v = _score(x, prefs, w, ell, np.nan_to_num(y1), np.nan_to_num(y2), obj)
        V.append(np.where(valid, v, -np.inf))
        Y1.append(np.where(valid, y1, np.inf))
        Y2.append(np.where(valid, y2, np.inf))
    V, Y1, Y2 = (np.concatenate(a, axis=1) for a in (V, Y1, Y2))

    best = V.max(axis=1, keepdims=True)
    ok = V >= best - EPS
    y1min = np.where(ok, Y1, np.inf).min(axis=1, keepdims=True)
    ok &= Y1 <= y1min + EPS
    pick = np.argmin(np.where(ok, Y2, np.inf), axis=1)
    rows = np.arange(B)
    placements = np.stack([Y1[rows, pick], Y2[rows, pick]], axis=1)
    values = _score(x, prefs, w, ell, placements[:, :1], placements[:, 1:], obj)[:, 0]
    return placements, values


def solve_2d(instance: Instance, obj: Objective = Objective.EGALITARIAN) -> SolveResult:
    """Exact optimum for two facilities (lexicographic-min tie-break)."""
    obj = Objective.parse(obj)
    if instance.k != 2:
        raise UsageError(f"solve_2d needs k = 2, got k = {instance.k}")
    placements, _ = solve_2d_arrays(
        instance.ell, instance.locations[None, :], instance.pref_matrix[None], obj)
    y = Placement(tuple(placements[0]))
    value = objective_value(instance, y, obj)
    if obj is Objective.UTILITARIAN:
        # the sum is separable, so per-axis maxima over breakpoints must agree
        bps = np.unique(np.concatenate([[0.0, instance.ell], instance.locations]))
        per_axis = sum(
            facility_utility_array(instance.locations[None, :], instance.pref_matrix[None, :, j],
                                   bps[:, None], instance.ell).sum(1).max()
            for j in range(2))
        assert abs(per_axis - value) <= 1e-7 * max(1.0, abs(value)), (per_axis, value)
    return SolveResult(y, value, Method.EXACT_2D_CELLS)


# ------------------------------------------------------------------ grid oracle

def _lattice(ell: float, resolution: float) -> np.ndarray:
    if not resolution > 0:
        raise UsageError("grid resolution must be positive")
    steps = int(math.ceil(ell / resolution - 1e-9))
    if steps < 2:
        raise UsageError("grid resolution must split ell into at least 2 steps")
    return np.linspace(0.0, ell, steps + 1)


def grid_solve_arrays(ell: float, x, prefs, obj: Objective, resolution: float,
                      budget: int = DEFAULT_GRID_BUDGET):
    """Lattice maximiser for a batch of same-size instances of any k."""
    obj = Objective.parse(obj)
    x = np.asarray(x, dtype=float)
    prefs = np.asarray(prefs)
    B, n, k = prefs.shape
    lattice = _lattice(ell, resolution)
    S = lattice.size
    if k * S ** k > budget:
        raise ResourceError(
            f"grid with {S} points per axis and k={k} needs {k * S ** k} evaluations; "
            f"budget is {budget}")
    w = _weights(x, prefs, ell, obj)
    per_instance = n * S ** k
    chunk = max(1, int(4_000_000 // per_instance))
    out_y = np.empty((B, k))
    out_v = np.empty(B)
    for start in range(0, B, chunk):
        sl = slice(start, start + chunk)
        xb, tb, wb = x[sl], prefs[sl], w[sl]
        b = xb.shape[0]
        total = np.zeros((b, n) + (S,) * k)
        for j in range(k):
            g = facility_utility_array(xb[:, :, None], tb[:, :, j, None], lattice, ell)
            shape = [b, n] + [1] * k
            shape[2 + j] = S
            total = total + g.reshape(shape)
        total *= wb.reshape((b, n) + (1,) * k)
        vals = total.sum(1) if obj is Objective.UTILITARIAN else total.min(1)
        vals = vals.reshape(b, -1)
        best = vals.max(1, keepdims=True)
        flat = np.argmax(vals >= best - EPS, axis=1)   # first hit = lexicographic min
        idx = np.stack(np.unravel_index(flat, (S,) * k), axis=1)
        out_y[sl] = lattice[idx]
        out_v[sl] = vals[np.arange(b), flat]
    return out_y, out_v


def grid_solve(instance: Instance, obj: Objective = Objective.EGALITARIAN,
               resolution: float = 1e-2, budget: int = DEFAULT_GRID_BUDGET) -> SolveResult:
    """Brute-force lattice optimum; within k * resolution of the true optimum
    for Egalitarian and Happiness."""
    obj = Objective.parse(obj)
    ys, _ = grid_solve_arrays(instance.ell, instance.locations[None, :],
                              instance.pref_matrix[None], obj, resolution, budget)
    y = Placement(tuple(ys[0]))
    return SolveResult(y, objective_value(instance, y, obj), Method.GRID)


# ----------------------------------------------------------- discrete site list

def solve_discrete(scenario: DiscreteScenario, obj: Objective = Objective.EGALITARIAN
                   ) -> SolveResult:
    """Best site from a finite list; ties go to the earliest site."""
    obj = Objective.parse(obj)
    sites = np.array(scenario.sites)
    scale = scenario.utility_scale
    if not scenario.prefs:
        return SolveResult(Placement(scenario.sites[0]), 0.0, Method.DISCRETE, 0)
    pts = np.array(scenario.agent_points)
    t = np.array(scenario.prefs)
    dist = np.sqrt(((pts[:, None, :] - sites[None, :, :]) ** 2).sum(-1))   # (n, S)
    pay = np.where(t[:, None] == 1, scale - dist, np.where(t[:, None] == -1, dist, scale))
    if obj is Objective.UTILITARIAN:
        vals = pay.sum(0)
    elif obj is Objective.HAPPINESS:
        best = pay.max(1, keepdims=True)
        vals = np.where(best > 0, pay / np.where(best > 0, best, 1.0), 1.0).min(0)
    else:
        vals = pay.min(0)
    idx = int(np.argmax(vals >= vals.max() - EPS))
    return SolveResult(Placement(scenario.sites[idx]), float(vals[idx]), Method.DISCRETE, idx)


# -------------------------------------------------------------------- dispatch

def solve(instance: Instance, obj: Objective = Objective.EGALITARIAN,
          resolution: Optional[float] = None) -> SolveResult:
    """Exact solve for k <= 2, grid oracle otherwise (or when a resolution is given)."""
    if resolution is not None:
        return grid_solve(instance, obj, resolution)
    if instance.k == 1:
        return solve_1d(instance, obj)
    if instance.k == 2:
        if instance.n > MAX_EXACT_2D_AGENTS:
            raise UsageError(
                f"exact 2D solving is limited to {MAX_EXACT_2D_AGENTS} agents; "
                "use the grid oracle (--resolution)")
        return solve_2d(instance, obj)
    raise UsageError(f"no exact solver for k = {instance.k}; pass a grid resolution")


def solve_many(instances: Sequence[Instance], obj: Objective = Objective.EGALITARIAN,
               resolution: Optional[float] = None, batch: int = 256,
               budget: int = DEFAULT_GRID_BUDGET) -> list[SolveResult]:
    """Solve many instances, batching same-shaped ones through the array solvers.

    Exact methods for k <= 2; instances with k >= 3 need ``resolution`` and
    go through the grid oracle.
    """
    obj = Objective.parse(obj)
    results: list[Optional[SolveResult]] = [None] * len(instances)
    groups: dict[tuple, list[int]] = {}
    for idx, inst in enumerate(instances):
        if inst.k == 1:
            results[idx] = solve_1d(inst, obj)
        else:
            groups.setdefault((inst.k, inst.n, inst.ell), []).append(idx)
    for (k, n, ell), members in groups.items():
        if k >= 3 and resolution is None:
            raise UsageError(f"no exact solver for k = {k}; pass a grid resolution")
        for start in range(0, len(members), batch):
            chunk = members[start:start + batch]
            x = np.stack([instances[i].locations for i in chunk])
            t = np.stack([instances[i].pref_matrix for i in chunk])
            if k == 2:
                ys, vs = solve_2d_arrays(ell, x, t, obj)
                method = Method.EXACT_2D_CELLS
            else:
                ys, vs = grid_solve_arrays(ell, x, t, obj, resolution, budget)
                method = Method.GRID
            for i, y, v in zip(chunk, ys, vs):
                results[i] = SolveResult(Placement(tuple(y)), float(v), method)
    return results
