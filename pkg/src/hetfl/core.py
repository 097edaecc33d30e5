"""Domain model for heterogeneous k-facility games on the segment [0, ell].

Every agent has a location on the segment and one preference code per
facility: -1 (wants it far), 0 (indifferent) or 1 (wants it close). The
utility an agent draws from one facility is linear in the distance and
capped at ``ell``::

    t = -1  ->  |x - y|
    t =  0  ->  ell
    t =  1  ->  ell - |x - y|

All values are immutable; all functions are pure.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence, Union

import numpy as np

EPS = 1e-9
"""Tolerance used for ties and invariant checks."""

PREF_CODES = (-1, 0, 1)


class InputDomainError(ValueError):
    """A coordinate, index or preference code is outside its domain."""


class UsageError(ValueError):
    """An operation was called on an input shape it does not support."""


class Objective(enum.Enum):
    EGALITARIAN = "egal"
    UTILITARIAN = "util"
    HAPPINESS = "happy"

    @classmethod
    def parse(cls, value: Union[str, "Objective"]) -> "Objective":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        for member in cls:
            if key in (member.value, member.name.lower()):
                return member
        raise UsageError(f"unknown objective {value!r}")


@dataclass(frozen=True)
class Agent:
    location: float
    prefs: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "location", float(self.location))
        object.__setattr__(self, "prefs", tuple(int(t) for t in self.prefs))
        if not math.isfinite(self.location):
            raise InputDomainError(f"agent location {self.location!r} is not finite")
        for t in self.prefs:
            if t not in PREF_CODES:
                raise InputDomainError(f"preference code {t} not in {{-1, 0, 1}}")

    @property
    def k(self) -> int:
        return len(self.prefs)


@dataclass(frozen=True)
class Instance:
    """A game: segment length, facility count and the declared profile."""

    ell: float
    k: int
    agents: tuple[Agent, ...]

    def __post_init__(self):
        object.__setattr__(self, "ell", float(self.ell))
        object.__setattr__(self, "agents", tuple(self.agents))
        if not (self.ell > 0 and math.isfinite(self.ell)):
            raise InputDomainError(f"ell must be positive, got {self.ell}")
        if int(self.k) != self.k or self.k < 1:
            raise InputDomainError(f"facility count must be >= 1, got {self.k}")
        object.__setattr__(self, "k", int(self.k))
        if not self.agents:
            raise InputDomainError("an instance needs at least one agent")
        for i, agent in enumerate(self.agents):
            if not isinstance(agent, Agent):
                raise InputDomainError(f"agent {i} is not an Agent")
            if len(agent.prefs) != self.k:
                raise InputDomainError(
                    f"agent {i} has {len(agent.prefs)} preferences, expected {self.k}"
                )
            if not 0.0 <= agent.location <= self.ell:
                raise InputDomainError(
                    f"agent {i} location {agent.location} exceeds ell={self.ell}"
                    if agent.location > self.ell
                    else f"agent {i} location {agent.location} is negative"
                )

    @classmethod
    def build(cls, ell: float, agents: Iterable[tuple[float, Sequence[int]]]) -> "Instance":
        """Shorthand: ``Instance.build(1, [(0, (-1, 1)), (0.8, (0, 1))])``."""
        agents = tuple(Agent(x, tuple(t)) for x, t in agents)
        if not agents:
            raise InputDomainError("an instance needs at least one agent")
        return cls(ell, agents[0].k, agents)

    @property
    def n(self) -> int:
        return len(self.agents)

    @cached_property
    def locations(self) -> np.ndarray:
        return np.array([a.location for a in self.agents], dtype=float)

    @cached_property
    def pref_matrix(self) -> np.ndarray:
        return np.array([a.prefs for a in self.agents], dtype=np.int8)

    def replace_agent(self, i: int, agent: Agent) -> "Instance":
        agents = list(self.agents)
        agents[i] = agent
        return Instance(self.ell, self.k, tuple(agents))

    def without_agent(self, i: int) -> "Instance":
        return Instance(self.ell, self.k, self.agents[:i] + self.agents[i + 1:])

    def reflected(self) -> "Instance":
        return Instance(
            self.ell, self.k, tuple(Agent(self.ell - a.location, a.prefs) for a in self.agents)
        )

    def scaled(self, c: float) -> "Instance":
        return Instance(
            self.ell * c, self.k, tuple(Agent(a.location * c, a.prefs) for a in self.agents)
        )


@dataclass(frozen=True)
class Placement:
    positions: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "positions", tuple(float(p) for p in self.positions))

    @property
    def k(self) -> int:
        return len(self.positions)

    def __iter__(self):
        return iter(self.positions)

    def __getitem__(self, j: int) -> float:
        return self.positions[j]


@dataclass(frozen=True)
class Lottery:
    """Finite-support distribution over placements."""

    support: tuple[tuple[Placement, float], ...]

    def __post_init__(self):
        support = tuple((p if isinstance(p, Placement) else Placement(p), float(q))
                        for p, q in self.support)
        object.__setattr__(self, "support", support)
        if not support:
            raise InputDomainError("a lottery needs a non-empty support")
        if any(q <= 0 for _, q in support):
            raise InputDomainError("lottery probabilities must be strictly positive")
        if abs(math.fsum(q for _, q in support) - 1.0) > 1e-12:
            raise InputDomainError("lottery probabilities must sum to 1")
        placements = [p for p, _ in support]
        if len(set(placements)) != len(placements):
            raise InputDomainError("lottery support placements must be distinct")
        if len({p.k for p in placements}) != 1:
            raise InputDomainError("lottery placements must share one dimension")

    @classmethod
    def point(cls, placement: Placement) -> "Lottery":
        return cls(((placement, 1.0),))

    @property
    def k(self) -> int:
        return self.support[0][0].k

    def expected_positions(self) -> tuple[float, ...]:
        return tuple(
            math.fsum(q * p[j] for p, q in self.support) for j in range(self.k)
        )


Outcome = Union[Placement, Lottery]


def as_lottery(outcome: Outcome) -> Lottery:
    return outcome if isinstance(outcome, Lottery) else Lottery.point(outcome)


def facility_utility(agent: Agent, j: int, y_j: float, ell: float) -> float:
    if not 0 <= j < len(agent.prefs):
        raise InputDomainError(f"facility index {j} out of range for k={len(agent.prefs)}")
    if not 0.0 <= y_j <= ell:
        raise InputDomainError(f"facility position {y_j} outside [0, {ell}]")
    if not 0.0 <= agent.location <= ell:
        raise InputDomainError(f"agent location {agent.location} outside [0, {ell}]")
    t = agent.prefs[j]
    if t == 0:
        return ell
    d = abs(agent.location - y_j)
    return d if t == -1 else ell - d


def total_utility(agent: Agent, y: Placement, ell: float) -> float:
    if y.k != agent.k:
        raise InputDomainError(f"placement has {y.k} positions, agent has {agent.k} preferences")
    return sum(facility_utility(agent, j, y[j], ell) for j in range(agent.k))


def max_utility(agent: Agent, ell: float) -> float:
    """Best total utility the agent could get from any placement."""
    x = agent.location
    far = max(x, ell - x)
    return sum(far if t == -1 else ell for t in agent.prefs)


def expected_utility(agent: Agent, lottery: Outcome, ell: float) -> float:
    lottery = as_lottery(lottery)
    return math.fsum(q * total_utility(agent, p, ell) for p, q in lottery.support)


def agent_utilities(instance: Instance, outcome: Outcome) -> list[float]:
    """Per-agent (expected) utility under a placement or lottery."""
    if isinstance(outcome, Lottery):
        return [expected_utility(a, outcome, instance.ell) for a in instance.agents]
    return [total_utility(a, outcome, instance.ell) for a in instance.agents]


def objective_value(instance: Instance, y: Outcome, obj: Objective) -> float:
    """Objective of a placement, or of a lottery evaluated on expected utilities.

    For lotteries the per-agent expected utility is formed first; Egalitarian
    and Happiness then take the minimum of those expectations.
    """
    obj = Objective.parse(obj)
    if y.k != instance.k:
        raise InputDomainError(f"outcome has dimension {y.k}, instance has k={instance.k}")
    utils = agent_utilities(instance, y)
    if obj is Objective.EGALITARIAN:
        return min(utils)
    if obj is Objective.UTILITARIAN:
        return math.fsum(utils)
    return min(u / max_utility(a, instance.ell) for a, u in zip(instance.agents, utils))


def objective_upper_bound(instance: Instance, obj: Objective) -> float:
    """A placement-free upper bound on the optimum, from each agent's own best."""
    obj = Objective.parse(obj)
    if obj is Objective.HAPPINESS:
        return 1.0
    best = [max_utility(a, instance.ell) for a in instance.agents]
    return math.fsum(best) if obj is Objective.UTILITARIAN else min(best)


# Vectorised helpers shared by the solvers and audits.

def facility_utility_array(x, t, y, ell):
    """Broadcast version of :func:`facility_utility` (no range checks)."""
    d = np.abs(np.asarray(x, dtype=float) - np.asarray(y, dtype=float))
    t = np.asarray(t)
    return np.where(t == 1, ell - d, np.where(t == -1, d, ell))


def max_utility_array(x, prefs, ell):
    """``max_utility`` for arrays: x of shape (..., n), prefs of shape (..., n, k)."""
    x = np.asarray(x, dtype=float)
    far = np.maximum(x, ell - x)[..., None]
    return np.where(np.asarray(prefs) == -1, far, ell).sum(axis=-1)
