"""Named witness instances (all on the unit segment unless scaled)."""

from __future__ import annotations

from typing import Iterator, Optional

from .core import Instance, UsageError
from .mechanisms import X_STAR, Z_D, Z_F, Z_R

DEFAULT_EPS = 1e-3


def _two(*agents) -> Instance:
    return Instance.build(1.0, agents)


def catalog(eps: float = DEFAULT_EPS, x: float = X_STAR,
            y: Optional[tuple[float, float]] = None) -> dict[str, Instance]:
    """All named witnesses, keyed by id, in a fixed order.

    ``eps`` perturbs the entries that sit just off a boundary, ``x`` places
    the second agent of the FIG1 pair and ``y`` is the placement probed by
    the CCLB witnesses (default: the Fixed placement).
    """
    if not 0 < eps < 0.5:
        raise UsageError("eps must lie in (0, 1/2)")
    if not 0 < x <= 1:
        raise UsageError("x must lie in (0, 1]")
    y1, y2 = y if y is not None else (Z_F, 1 - Z_F)
    return {
        "FIG1_I": _two((0.0, (-1, 1)), (x, (0, 1))),
        "FIG1_IP": _two((0.0, (-1, 1)), (x, (-1, 1))),
        "FIG2_I": _two((0.0, (0, 1)), (0.5, (1, 1)), (1.0, (1, 0))),
        "FIG2_IP": _two((0.0, (1, 1)), (0.5, (1, 1)), (1.0, (1, 0))),
        "FIG3_I": _two((0.0, (-1, 1)), (1 - eps, (1, 1))),
        "FIG3_IP": _two((0.0, (-1, 1)), (1 - eps, (-1, 1))),
        "FIG4_I": _two((0.0, (0, -1)), (0.5, (-1, 0)), (1.0, (-1, -1))),
        "FIG4_IP": _two((0.0, (-1, -1)), (0.5, (-1, 0)), (1.0, (-1, -1))),
        "RAND_I1": _two((0.0, (1, 1))),
        "RAND_I2": _two((0.0, (-1, -1))),
        "CCLB_W1": _two((y1, (-1, -1))),
        "CCLB_W2": _two((0.0, (-1, 1))),
        "CCLB_W3": _two((y2, (-1, -1))),
        "CCLB_W4": _two((1.0, (1, -1))),
        "FPLUS_W1": _two((0.0, (-1, 1)), (0.5 + eps, (0, 1))),
        "FPLUS_W2": _two((Z_D, (-1, -1)), (0.5 - eps, (1, 0))),
        "RPLUS_W": _two((Z_R, (-1, -1)), (0.5 - eps, (1, 0))),
    }


CATALOG_IDS = tuple(catalog())

DESCRIPTIONS = {
    "FIG1_I": "two agents; the agent at x gains x/2 by declaring (-1,1) to the joint optimum",
    "FIG1_IP": "FIG1_I after the misreport",
    "FIG2_I": "{0,1} preferences; the agent at 0 gains ell/3 by declaring (1,1)",
    "FIG2_IP": "FIG2_I after the misreport",
    "FIG3_I": "{-1,1} preferences; the agent at ell-eps gains by declaring (-1,1)",
    "FIG3_IP": "FIG3_I after the misreport",
    "FIG4_I": "{-1,0} preferences; the agent at 0 gains ell/2 by declaring (-1,-1)",
    "FIG4_IP": "FIG4_I after the misreport",
    "RAND_I1": "single (1,1) agent at 0: bounds any input-free lottery by (2-w)/2",
    "RAND_I2": "single (-1,-1) agent at 0: bounds any input-free lottery by w/2",
    "CCLB_W1": "single (-1,-1) agent on y1",
    "CCLB_W2": "single (-1,1) agent at 0",
    "CCLB_W3": "single (-1,-1) agent on y2",
    "CCLB_W4": "single (1,-1) agent at ell",
    "FPLUS_W1": "fixed+ step 5 with a (-1,1) agent at 0; ratio 8 z_d / (7 - 2 eps)",
    "FPLUS_W2": "fixed+ step 5 with a (-1,-1) agent at z_d; ratio (1-2z_d)/(2-2z_d)",
    "RPLUS_W": "random+ step 5 with a (-1,-1) agent at z_r; ratio tends to 1/2 + z_r",
}


def lookup(name: str, eps: float = DEFAULT_EPS, x: float = X_STAR) -> Instance:
    key = name.strip().upper()
    entries = catalog(eps, x)
    if key not in entries:
        raise UsageError(f"unknown catalog id {name!r}; known: {', '.join(CATALOG_IDS)}")
    return entries[key]


def opt2_witness(x_i: float) -> Instance:
    """Three agents where OPT2 reaches (3 - x_i) / (4 - 2 x_i)."""
    return _two((0.0, (1, 1)), (x_i, (1, 1)), (1.0, (0, 1)))


def single_agent_family(steps: int = 20) -> Iterator[tuple[str, Instance]]:
    """Every single-agent instance on a location grid, (-1,1) at 0 first.

    These are the per-case witnesses for input-free two-facility rules: a
    lone agent sees no competition, so the ratio is simply its utility over
    its best utility.
    """
    prefs = [(-1, 1)] + [(a, b) for a in (-1, 0, 1) for b in (-1, 0, 1) if (a, b) != (-1, 1)]
    for t in prefs:
        for s in range(steps + 1):
            x = s / steps
            yield f"single-x{x:g}-t{t[0]}{t[1]}", _two((x, t))
