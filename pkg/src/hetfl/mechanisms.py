"""Facility location mechanisms and the 5-bit message protocol.

Each ``run_*`` function returns a :class:`MechanismOutput` holding either a
deterministic :class:`Placement` or an explicit finite :class:`Lottery`
(never sampled here). :func:`run_mechanism` dispatches by id.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

from scipy.optimize import brentq

from .core import (
    Agent,
    Instance,
    InputDomainError,
    Lottery,
    Objective,
    Placement,
    UsageError,
)
from .solvers import solve_1d, solve_2d

UNBOUNDED = -1
"""``bits_per_agent`` value for rules that read exact reports."""


class ProtocolError(ValueError):
    """A message violates the wire format."""


class MechanismId(enum.Enum):
    OPT1 = "opt1"
    FIXED = "fixed"
    FIXED_PLUS = "fixed+"
    RANDOM = "random"
    RANDOM_PLUS = "random+"
    FIXED_01 = "fixed01"
    FIXED_0M1 = "fixed0-1"
    OPT2 = "opt2"
    NAIVE_OPT2 = "naive-opt2"

    @classmethod
    def parse(cls, value: Union[str, "MechanismId"]) -> "MechanismId":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        for member in cls:
            if key in (member.value, member.name.lower()):
                return member
        raise UsageError(f"unknown mechanism {value!r}")


BITS_PER_AGENT = {
    MechanismId.OPT1: UNBOUNDED,
    MechanismId.FIXED: 0,
    MechanismId.FIXED_PLUS: 5,
    MechanismId.RANDOM: 0,
    MechanismId.RANDOM_PLUS: 5,
    MechanismId.FIXED_01: 0,
    MechanismId.FIXED_0M1: 0,
    MechanismId.OPT2: UNBOUNDED,
    MechanismId.NAIVE_OPT2: UNBOUNDED,
}

RANDOMIZED = frozenset({MechanismId.RANDOM, MechanismId.RANDOM_PLUS})

# preference codes each mechanism accepts; None means all of {-1, 0, 1}
PREFERENCE_DOMAIN: dict[MechanismId, Optional[tuple[int, ...]]] = {
    MechanismId.FIXED_01: (0, 1),
    MechanismId.FIXED_0M1: (-1, 0),
    MechanismId.OPT2: (0, 1),
}

# facility counts each mechanism supports; None means any k >= 1
SUPPORTED_K: dict[MechanismId, Optional[tuple[int, ...]]] = {
    MechanismId.OPT1: (1,),
    MechanismId.FIXED: (2,),
    MechanismId.FIXED_PLUS: (2,),
    MechanismId.RANDOM: None,
    MechanismId.RANDOM_PLUS: (2,),
    MechanismId.FIXED_01: None,
    MechanismId.FIXED_0M1: None,
    MechanismId.OPT2: (2,),
    MechanismId.NAIVE_OPT2: (2,),
}


# ------------------------------------------------------------------ constants

@dataclass(frozen=True)
class Constants:
    z_f: float
    z_d: float
    z_r: float
    x_star: float
    det_bound: float


def _root(f, lo, hi):
    return brentq(f, lo, hi, xtol=1e-15, maxiter=200)


def compute_constants() -> Constants:
    """Solve the defining equations numerically and check the closed forms."""
    z_f = _root(lambda z: 2 * z * z - 4 * z + 1, 0.0, 0.5)
    z_d = _root(lambda z: 8 * z / 7 - (1 - 2 * z), 0.0, 0.5)
    z_r = _root(lambda z: (1 - 2 * z) / (1.75 - z) - (0.5 + z), 0.0, 0.5)
    x_star = _root(lambda x: -4 * x ** 3 + 29 * x ** 2 - 60 * x + 32, 2 / 3, 1.0)
    closed = Constants(
        z_f=1 - math.sqrt(2) / 2,
        z_d=7 / 22,
        z_r=(13 - math.sqrt(161)) / 8,
        x_star=(13 - math.sqrt(41)) / 8,
        det_bound=1 / (2 - (13 - math.sqrt(41)) / 8),
    )
    solved = Constants(z_f, z_d, z_r, x_star, 1 / (2 - x_star))
    for name in ("z_f", "z_d", "z_r", "x_star", "det_bound"):
        a, b = getattr(solved, name), getattr(closed, name)
        if abs(a - b) > 1e-12:
            raise ArithmeticError(f"constant {name}: root {a!r} differs from closed form {b!r}")
    return closed


CONSTANTS = compute_constants()
Z_F, Z_D, Z_R, X_STAR = CONSTANTS.z_f, CONSTANTS.z_d, CONSTANTS.z_r, CONSTANTS.x_star


# ------------------------------------------------------------- message layer

_PREF_BITS = {0: (0, 0), 1: (0, 1), -1: (1, 1)}
_BITS_PREF = {v: k for k, v in _PREF_BITS.items()}


@dataclass(frozen=True)
class Message:
    bits: tuple[int, int, int, int, int]

    def __post_init__(self):
        bits = tuple(int(b) for b in self.bits)
        object.__setattr__(self, "bits", bits)
        if len(bits) != 5 or any(b not in (0, 1) for b in bits):
            raise ProtocolError(f"a message is five bits, got {self.bits!r}")
        for j in range(2):
            if bits[1 + 2 * j: 3 + 2 * j] == (1, 0):
                raise ProtocolError(f"facility {j + 1} pair (1,0) is invalid on the wire")

    @property
    def above_half(self) -> bool:
        return self.bits[0] == 1

    def pref(self, j: int) -> int:
        return _BITS_PREF[self.bits[1 + 2 * j: 3 + 2 * j]]

    def to_byte(self) -> int:
        value = 0
        for b in self.bits:
            value = (value << 1) | b
        return value << 3

    @classmethod
    def from_byte(cls, value: int) -> "Message":
        if not 0 <= value <= 0xFF:
            raise ProtocolError(f"byte out of range: {value}")
        if value & 0b111:
            raise ProtocolError(f"padding bits set in {value:02x}")
        return cls(tuple((value >> s) & 1 for s in range(7, 2, -1)))

    def hex(self) -> str:
        return f"{self.to_byte():02x}"


def dump_transcript(messages: Sequence[Message]) -> str:
    return "".join(m.hex() + "\n" for m in messages)


def load_transcript(text: str) -> list[Message]:
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            value = int(line, 16)
        except ValueError:
            raise ProtocolError(f"line {lineno}: not a hex byte: {line!r}") from None
        if len(line) > 2:
            raise ProtocolError(f"line {lineno}: expected one byte, got {line!r}")
        try:
            out.append(Message.from_byte(value))
        except ProtocolError as exc:
            raise ProtocolError(f"line {lineno}: {exc}") from None
    return out


def encode_message(agent: Agent, ell: float) -> Message:
    if agent.k != 2:
        raise UsageError(f"the 5-bit message needs k = 2, got k = {agent.k}")
    l = 0 if agent.location <= ell / 2 else 1
    return Message((l, *_PREF_BITS[agent.prefs[0]], *_PREF_BITS[agent.prefs[1]]))


@dataclass(frozen=True)
class EventFlags:
    L1: bool
    L2: bool
    H1: bool
    H2: bool

    def low(self, j: int) -> bool:
        return (self.L1, self.L2)[j]

    def high(self, j: int) -> bool:
        return (self.H1, self.H2)[j]


def compute_events(messages: Sequence[Message]) -> EventFlags:
    """Evaluate L_j / H_j from the transcript alone."""
    if not messages:
        raise ProtocolError("events need at least one message")
    low, high = [True, True], [True, True]
    for m in messages:
        if not isinstance(m, Message):
            m = Message(m)
        for j in range(2):
            t = m.pref(j)
            near_side_ok = t in (0, 1)
            far_side_ok = t in (0, -1)
            if m.above_half:
                low[j] &= far_side_ok
                high[j] &= near_side_ok
            else:
                low[j] &= near_side_ok
                high[j] &= far_side_ok
    return EventFlags(low[0], low[1], high[0], high[1])


def events_from_agents(instance: Instance) -> EventFlags:
    """Same predicates evaluated directly on locations and preferences."""
    half = instance.ell / 2
    flags = []
    for want_low in (True, False):
        for j in range(2):
            ok = True
            for a in instance.agents:
                below = a.location <= half
                t = a.prefs[j]
                if below == want_low:
                    ok &= t in (0, 1)
                else:
                    ok &= t in (0, -1)
            flags.append(ok)
    return EventFlags(*flags)


def step_of(events: EventFlags) -> int:
    """Which of the five dispatch steps fires."""
    if events.L1 and events.L2:
        return 1
    if events.L1 and events.H2:
        return 2
    if events.H1 and events.H2:
        return 3
    if events.H1 and events.L2:
        return 4
    return 5


# ---------------------------------------------------------------- mechanisms

@dataclass(frozen=True)
class MechanismOutput:
    id: MechanismId
    result: Union[Placement, Lottery]
    transcript: tuple[Message, ...] = ()
    bits_per_agent: int = 0
    step: Optional[int] = None

    @property
    def is_lottery(self) -> bool:
        return isinstance(self.result, Lottery)

    def lottery(self) -> Lottery:
        return self.result if isinstance(self.result, Lottery) else Lottery.point(self.result)


def _output(mid, result, transcript=(), step=None) -> MechanismOutput:
    return MechanismOutput(mid, result, tuple(transcript), BITS_PER_AGENT[mid], step)


def run_fixed(ell: float) -> MechanismOutput:
    return _output(MechanismId.FIXED, Placement((Z_F * ell, (1 - Z_F) * ell)))


def _step_positions(step: int, z: float, ell: float):
    lo, hi = z * ell, (1 - z) * ell
    return {1: (lo, lo), 2: (lo, hi), 3: (hi, hi), 4: (hi, lo), 5: (lo, hi)}[step]


def _require_k(instance: Instance, mid: MechanismId):
    allowed = SUPPORTED_K[mid]
    if allowed is not None and instance.k not in allowed:
        raise UsageError(f"{mid.value} needs k in {allowed}, got k = {instance.k}")


def run_fixed_plus(instance: Instance, z_d: float = Z_D) -> MechanismOutput:
    _require_k(instance, MechanismId.FIXED_PLUS)
    messages = [encode_message(a, instance.ell) for a in instance.agents]
    step = step_of(compute_events(messages))
    y = Placement(_step_positions(step, z_d, instance.ell))
    return _output(MechanismId.FIXED_PLUS, y, messages, step)


def run_random(ell: float, k: int) -> MechanismOutput:
    if k < 1:
        raise InputDomainError(f"facility count must be >= 1, got {k}")
    lottery = Lottery(((Placement((0.0,) * k), 0.5), (Placement((float(ell),) * k), 0.5)))
    return _output(MechanismId.RANDOM, lottery)


def run_random_plus(instance: Instance, z_r: float = Z_R) -> MechanismOutput:
    _require_k(instance, MechanismId.RANDOM_PLUS)
    ell = instance.ell
    messages = [encode_message(a, ell) for a in instance.agents]
    step = step_of(compute_events(messages))
    if step < 5:
        lottery = Lottery.point(Placement(_step_positions(step, z_r, ell)))
    else:
        lo, hi = z_r * ell, (1 - z_r) * ell
        lottery = Lottery(((Placement((lo, lo)), 0.5), (Placement((hi, hi)), 0.5)))
    return _output(MechanismId.RANDOM_PLUS, lottery, messages, step)


def run_fixed_01(ell: float, k: int) -> MechanismOutput:
    if k < 1:
        raise InputDomainError(f"facility count must be >= 1, got {k}")
    return _output(MechanismId.FIXED_01, Placement((ell / 2,) * k))


def run_fixed_0m1(ell: float, k: int) -> MechanismOutput:
    if k < 1:
        raise InputDomainError(f"facility count must be >= 1, got {k}")
    near = (k + 1) // 2
    return _output(MechanismId.FIXED_0M1, Placement((0.0,) * near + (float(ell),) * (k - near)))


def run_opt2(instance: Instance) -> MechanismOutput:
    _require_k(instance, MechanismId.OPT2)
    check_domain(MechanismId.OPT2, instance)
    ys = []
    for j in range(2):
        close = [a.location for a in instance.agents if a.prefs[j] == 1]
        ys.append((min(close) + max(close)) / 2 if close else 0.0)
    return _output(MechanismId.OPT2, Placement(tuple(ys)))


def run_opt1(instance: Instance, obj: Objective = Objective.EGALITARIAN) -> MechanismOutput:
    _require_k(instance, MechanismId.OPT1)
    return _output(MechanismId.OPT1, solve_1d(instance, obj).placement)


def run_naive_opt2(instance: Instance, obj: Objective = Objective.EGALITARIAN) -> MechanismOutput:
    _require_k(instance, MechanismId.NAIVE_OPT2)
    return _output(MechanismId.NAIVE_OPT2, solve_2d(instance, obj).placement)


def check_domain(mid: MechanismId, instance: Instance) -> None:
    """Raise if the instance's shape or preference codes are outside the rule's domain."""
    mid = MechanismId.parse(mid)
    _require_k(instance, mid)
    allowed = PREFERENCE_DOMAIN.get(mid)
    if allowed is None:
        return
    for i, a in enumerate(instance.agents):
        bad = [t for t in a.prefs if t not in allowed]
        if bad:
            raise UsageError(
                f"{mid.value} accepts preferences in {set(allowed)}; agent {i} declares {bad[0]}")


@dataclass(frozen=True)
class MechanismParams:
    """Tunable parameters; defaults reproduce the published rules."""

    obj: Objective = Objective.EGALITARIAN
    z_d: float = Z_D
    z_r: float = Z_R

    def __post_init__(self):
        object.__setattr__(self, "obj", Objective.parse(self.obj))
        for name in ("z_d", "z_r"):
            if not 0.0 <= getattr(self, name) <= 0.5:
                raise InputDomainError(f"{name} must lie in [0, 1/2]")


def run_mechanism(mid: Union[str, MechanismId], instance: Instance,
                  params: MechanismParams = MechanismParams()) -> MechanismOutput:
    mid = MechanismId.parse(mid)
    check_domain(mid, instance)
    ell, k = instance.ell, instance.k
    if mid is MechanismId.OPT1:
        return run_opt1(instance, params.obj)
    if mid is MechanismId.FIXED:
        return run_fixed(ell)
    if mid is MechanismId.FIXED_PLUS:
        return run_fixed_plus(instance, params.z_d)
    if mid is MechanismId.RANDOM:
        return run_random(ell, k)
    if mid is MechanismId.RANDOM_PLUS:
        return run_random_plus(instance, params.z_r)
    if mid is MechanismId.FIXED_01:
        return run_fixed_01(ell, k)
    if mid is MechanismId.FIXED_0M1:
        return run_fixed_0m1(ell, k)
    if mid is MechanismId.OPT2:
        return run_opt2(instance)
    return run_naive_opt2(instance, params.obj)


def report_signature(mid: MechanismId, agent: Agent, ell: float):
    """The part of one agent's report the mechanism can observe.

    Two reports with the same signature yield the same output whatever the
    other agents declare; the audit uses this to skip redundant reruns.
    """
    if BITS_PER_AGENT[mid] == 0:
        return ()
    if BITS_PER_AGENT[mid] == 5:
        return (agent.location > ell / 2, agent.prefs)
    return (agent.location, agent.prefs)


# Published approximation guarantees (used for flagging measured ratios).
# FIXED_0M1's value depends on k and is filled in by ``claimed_ratio``.
CLAIMED_RATIOS: dict[MechanismId, float] = {
    MechanismId.OPT1: 1.0,
    MechanismId.FIXED: Z_F,
    MechanismId.FIXED_PLUS: 4 / 11,
    MechanismId.RANDOM: 0.5,
    MechanismId.RANDOM_PLUS: 0.5 + Z_R,
    MechanismId.FIXED_01: 0.5,
    MechanismId.OPT2: 0.75,
}

# guarantees that also cover the Utilitarian and Happiness objectives
ALL_OBJECTIVE_CLAIMS = frozenset({
    MechanismId.OPT1, MechanismId.FIXED, MechanismId.FIXED_01,
    MechanismId.FIXED_0M1, MechanismId.RANDOM,
})


def claimed_ratio(mid: MechanismId, obj: Objective, k: int = 2) -> Optional[float]:
    mid, obj = MechanismId.parse(mid), Objective.parse(obj)
    if obj is not Objective.EGALITARIAN and mid not in ALL_OBJECTIVE_CLAIMS:
        return None
    if mid is MechanismId.FIXED_0M1:
        return (k // 2) / k
    return CLAIMED_RATIOS.get(mid)
