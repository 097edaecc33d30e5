"""Command-line front end.

Instance files are line oriented::

    # comments and blank lines are ignored
    ell 1.0
    k 2
    agent 0.0 -1 1
    agent 0.82461 0 1

A file may hold several instances; each starts with its own ``ell`` line.
"""

from __future__ import annotations

import argparse
import csv
import io
import re
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from .audit import (
    DeviationMode,
    DeviationSpace,
    audit_approx,
    audit_sp,
    random_instances,
    verify_constants,
    PREF_CLASSES,
)
from .catalog import CATALOG_IDS, DEFAULT_EPS, DESCRIPTIONS, catalog, lookup
from .core import (
    InputDomainError,
    Instance,
    Agent,
    Objective,
    Placement,
    UsageError,
    agent_utilities,
    objective_value,
)
from .mechanisms import (
    CONSTANTS,
    UNBOUNDED,
    MechanismId,
    MechanismParams,
    ProtocolError,
    compute_events,
    dump_transcript,
    load_transcript,
    run_mechanism,
    step_of,
    Z_D,
)
from .solvers import MAX_EXACT_2D_AGENTS, ResourceError, solve

EXIT_OK, EXIT_FINDING, EXIT_USAGE = 0, 1, 2

_NUMBER = re.compile(r"[+-]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?")
_INTEGER = re.compile(r"[+-]?\d+")


class ParseError(UsageError):
    pass


# ------------------------------------------------------------- instance files

def _number(token: str, lineno: int, what: str) -> float:
    if not _NUMBER.fullmatch(token):
        raise ParseError(f"line {lineno}: {what} must be a decimal number, got {token!r}")
    return float(token)


def parse_instances(text: str) -> list[Instance]:
    """Parse one or more instances; errors carry 1-based line numbers."""
    instances: list[Instance] = []
    ell = k = None
    agents: list[Agent] = []
    ell_line = 0

    def close():
        if ell is None:
            return
        if k is None:
            raise ParseError(f"line {ell_line}: instance has no 'k' line")
        if not agents:
            raise ParseError(f"line {ell_line}: instance has no agents")
        instances.append(Instance(ell, k, tuple(agents)))

    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, *rest = line.split()
        if head == "ell":
            close()
            if len(rest) != 1:
                raise ParseError(f"line {lineno}: expected 'ell <decimal>'")
            ell = _number(rest[0], lineno, "ell")
            if not ell > 0:
                raise InputDomainError(f"line {lineno}: ell must be positive, got {rest[0]}")
            k, agents, ell_line = None, [], lineno
        elif head == "k":
            if ell is None or agents or k is not None:
                raise ParseError(f"line {lineno}: 'k' must directly follow 'ell'")
            if len(rest) != 1 or not _INTEGER.fullmatch(rest[0]):
                raise ParseError(f"line {lineno}: expected 'k <integer>'")
            k = int(rest[0])
            if k < 1:
                raise InputDomainError(f"line {lineno}: k must be >= 1, got {k}")
        elif head == "agent":
            if k is None:
                raise ParseError(f"line {lineno}: 'agent' before 'ell' and 'k'")
            if len(rest) != k + 1:
                raise ParseError(
                    f"line {lineno}: expected a location and {k} preference codes, "
                    f"got {len(rest)} values")
            x = _number(rest[0], lineno, "location")
            if x > ell:
                raise InputDomainError(f"line {lineno}: location exceeds ell ({rest[0]} > {ell!r})")
            if x < 0:
                raise InputDomainError(f"line {lineno}: location is negative ({rest[0]})")
            prefs = []
            for tok in rest[1:]:
                if tok not in ("-1", "0", "1", "+1"):
                    raise InputDomainError(
                        f"line {lineno}: bad preference code {tok!r} (use -1, 0 or 1)")
                prefs.append(int(tok))
            agents.append(Agent(x, tuple(prefs)))
        else:
            raise ParseError(f"line {lineno}: unknown keyword {head!r}")
    close()
    if not instances:
        raise ParseError("no instance found (expected an 'ell' line)")
    return instances


def parse_instance(text: str) -> Instance:
    instances = parse_instances(text)
    if len(instances) != 1:
        raise ParseError(f"expected exactly one instance, found {len(instances)}")
    return instances[0]


def render_instance(instance: Instance, label: Optional[str] = None) -> str:
    lines = [f"# {label}"] if label else []
    lines.append(f"ell {instance.ell!r}")
    lines.append(f"k {instance.k}")
    for a in instance.agents:
        lines.append("agent " + " ".join([repr(a.location)] + [str(t) for t in a.prefs]))
    return "\n".join(lines) + "\n"


# ----------------------------------------------------------------- generator

@dataclass(frozen=True)
class GenSpec:
    n_max: int
    count: int
    k: int = 2
    pref_class: str = "all"
    ell: float = 1.0
    n_min: int = 1


def parse_gen_spec(spec: str) -> GenSpec:
    """``n=4,count=100[,k=2,class=all,ell=1,nmin=1]``; n is the largest agent count."""
    fields = {}
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise ParseError(f"generator spec entry {part!r} is not key=value")
        key, value = (s.strip() for s in part.split("=", 1))
        fields[key] = value
    known = {"n", "count", "k", "class", "ell", "nmin"}
    unknown = set(fields) - known
    if unknown:
        raise ParseError(f"unknown generator keys: {', '.join(sorted(unknown))}")
    if "n" not in fields or "count" not in fields:
        raise ParseError("generator spec needs n=<max agents> and count=<instances>")
    try:
        gen = GenSpec(
            n_max=int(fields["n"]), count=int(fields["count"]), k=int(fields.get("k", 2)),
            pref_class=fields.get("class", "all"), ell=float(fields.get("ell", 1.0)),
            n_min=int(fields.get("nmin", 1)))
    except ValueError as exc:
        raise ParseError(f"bad generator spec {spec!r}: {exc}") from None
    if gen.pref_class not in PREF_CLASSES:
        raise ParseError(f"unknown preference class {gen.pref_class!r}; use {sorted(PREF_CLASSES)}")
    if gen.count < 1 or gen.n_max < gen.n_min or gen.n_min < 1 or gen.k < 1 or not gen.ell > 0:
        raise ParseError("generator spec needs count >= 1, 1 <= nmin <= n, k >= 1, ell > 0")
    return gen


# ------------------------------------------------------------------- helpers

def _fmt(v: float) -> str:
    return f"{v:.6f}"


def _fmt_vec(vs) -> str:
    return "(" + ", ".join(_fmt(v) for v in vs) + ")"


def _fmt_outcome(result) -> str:
    if isinstance(result, Placement):
        return _fmt_vec(result)
    return " + ".join(f"{_fmt(q)}*{_fmt_vec(p)}" for p, q in result.support)


def _load_source(args) -> list[tuple[str, Instance]]:
    if args.instance:
        try:
            text = Path(args.instance).read_text(encoding="utf-8")
        except OSError as exc:
            raise UsageError(f"cannot read {args.instance}: {exc.strerror}") from None
        insts = parse_instances(text)
        stem = Path(args.instance).stem
        if len(insts) == 1:
            return [(stem, insts[0])]
        return [(f"{stem}:{i}", inst) for i, inst in enumerate(insts)]
    if args.catalog:
        name = args.catalog.strip().upper()
        return [(name, lookup(name, eps=args.eps))]
    if args.gen:
        g = parse_gen_spec(args.gen)
        return list(random_instances(args.seed, g.count, g.n_max, g.k, g.pref_class, g.ell, g.n_min))
    raise UsageError("give one instance source: --instance, --catalog or --gen")


def _params(args) -> MechanismParams:
    return MechanismParams(obj=Objective.parse(args.objective), z_d=args.zd)


class _Output:
    """Text goes to stdout; ``--out`` receives the CSV (or text) artifact."""

    def __init__(self, path: Optional[str]):
        self.path = path
        self.buffer = io.StringIO(newline="")

    def csv_writer(self, seed):
        self.buffer.write(f"# seed={seed}\n")
        return csv.writer(self.buffer, lineterminator="\n")

    def close(self):
        if self.path:
            Path(self.path).write_text(self.buffer.getvalue(), encoding="utf-8", newline="")


# --------------------------------------------------------------- subcommands

def cmd_constants(args) -> int:
    constants, checks = verify_constants()
    rows = [
        ("z_f", CONSTANTS.z_f, "1 - sqrt(2)/2"),
        ("z_d", CONSTANTS.z_d, "7/22"),
        ("z_r", CONSTANTS.z_r, "(13 - sqrt(161))/8"),
        ("1/2 + z_r", 0.5 + CONSTANTS.z_r, ""),
        ("x_star", CONSTANTS.x_star, "(13 - sqrt(41))/8"),
        ("det_bound", CONSTANTS.det_bound, "1/(2 - x_star)"),
    ]
    print(f"{'name':<10} {'value':>18}  closed form")
    for name, value, form in rows:
        print(f"{name:<10} {value:>18.12f}  {form}")
    print()
    for c in checks:
        status = "ok" if c.ok else "FAIL"
        extra = f"  {c.detail}" if c.detail else ""
        print(f"check {c.name:<14} root {c.value:.12f}  {status}{extra}")
    return EXIT_OK if all(c.ok for c in checks) else EXIT_FINDING


def cmd_catalog(args) -> int:
    if args.catalog:
        name = args.catalog.strip().upper()
        print(render_instance(lookup(name, eps=args.eps), name), end="")
        return EXIT_OK
    entries = catalog(eps=args.eps)
    for name in CATALOG_IDS:
        inst = entries[name]
        agents = ", ".join(f"{_fmt(a.location)}:{a.prefs}" for a in inst.agents)
        print(f"{name:<9} {DESCRIPTIONS[name]}")
        print(f"{'':<9} agents {agents}")
    return EXIT_OK


def cmd_gen(args) -> int:
    if not args.gen:
        raise UsageError("gen needs --gen SPEC")
    g = parse_gen_spec(args.gen)
    out = io.StringIO()
    out.write(f"# seed={args.seed} spec={args.gen}\n")
    for name, inst in random_instances(args.seed, g.count, g.n_max, g.k, g.pref_class, g.ell, g.n_min):
        out.write("\n" + render_instance(inst, name))
    _emit_text(out.getvalue(), args.out)
    return EXIT_OK


def _emit_text(text: str, path: Optional[str]):
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_solve(args) -> int:
    obj = Objective.parse(args.objective)
    out = _Output(args.out)
    writer = out.csv_writer(args.seed)
    writer.writerow(["instance_id", "objective", "method", "value", "placement"])
    for name, inst in _load_source(args):
        if inst.k == 2 and inst.n > MAX_EXACT_2D_AGENTS and args.resolution is None:
            raise UsageError(
                f"{name}: {inst.n} agents exceeds the exact two-facility limit of "
                f"{MAX_EXACT_2D_AGENTS}; pass --resolution to use the grid oracle")
        res = solve(inst, obj, args.resolution)
        print(f"{name}: y = {_fmt_vec(res.placement)}  value = {_fmt(res.value)}  [{res.method.value}]")
        writer.writerow([name, obj.value, res.method.value, repr(res.value),
                         " ".join(repr(p) for p in res.placement)])
    out.close()
    return EXIT_OK


def cmd_mech(args) -> int:
    mid = MechanismId.parse(args.mechanism)
    params = _params(args)
    if args.load_transcript:
        if mid not in (MechanismId.FIXED_PLUS, MechanismId.RANDOM_PLUS):
            raise UsageError("--load-transcript applies to fixed+ and random+ only")
        text = Path(args.load_transcript).read_text(encoding="utf-8")
        messages = load_transcript(text)
        events = compute_events(messages)
        step = step_of(events)
        # rebuild a stand-in profile with the same transcript; the rule sees nothing else
        ell = args.ell
        agents = tuple(Agent(ell if m.above_half else 0.0, (m.pref(0), m.pref(1))) for m in messages)
        out = run_mechanism(mid, Instance(ell, 2, agents), params)
        print(f"transcript: {len(messages)} messages, events L1={events.L1} L2={events.L2} "
              f"H1={events.H1} H2={events.H2}, step {step}")
        print(f"{mid.value}: {_fmt_outcome(out.result)}")
        return EXIT_OK
    rng = np.random.Generator(np.random.PCG64(args.seed))
    for name, inst in _load_source(args):
        out = run_mechanism(mid, inst, params)
        bits = "unbounded" if out.bits_per_agent == UNBOUNDED else str(out.bits_per_agent)
        step = f" step {out.step}" if out.step is not None else ""
        print(f"{name}: {mid.value}{step} -> {_fmt_outcome(out.result)}  [bits/agent {bits}]")
        utils = agent_utilities(inst, out.result)
        print("  utilities " + " ".join(_fmt(u) for u in utils))
        print(f"  {Objective.parse(args.objective).value} value "
              f"{_fmt(objective_value(inst, out.result, args.objective))}")
        if out.is_lottery and args.samples:
            support = out.result.support
            probs = np.array([q for _, q in support])
            draws = rng.choice(len(support), size=args.samples, p=probs)
            print(f"  samples (seed={args.seed}): " + " ".join(_fmt_vec(support[d][0]) for d in draws))
        if args.dump_transcript:
            if not out.transcript:
                raise UsageError(f"{mid.value} sends no messages; nothing to dump")
            Path(args.dump_transcript).write_text(dump_transcript(out.transcript), encoding="utf-8")
        elif out.transcript:
            print("  transcript " + " ".join(m.hex() for m in out.transcript))
    return EXIT_OK


def cmd_audit_sp(args) -> int:
    mid = MechanismId.parse(args.mechanism)
    space = DeviationSpace(DeviationMode.parse(args.mode), args.grid)
    params = _params(args)
    out = _Output(args.out)
    writer = out.csv_writer(args.seed)
    writer.writerow(["mechanism", "instance_id", "agent", "mode", "reported_x", "reported_t",
                     "truthful_u", "deviated_u", "gain"])
    sources = _load_source(args)
    total = 0
    for name, inst in sources:
        records = audit_sp(mid, inst, space, params)
        total += len(records)
        for r in records:
            t = " ".join(str(v) for v in r.reported_t)
            writer.writerow([mid.value, name, r.agent, space.mode.value, repr(r.reported_x), t,
                             repr(r.truthful_u), repr(r.deviated_u), repr(r.gain)])
            if not args.out:
                print(f"{name}: agent {r.agent} reports x={_fmt(r.reported_x)} t=({t}) "
                      f"utility {_fmt(r.truthful_u)} -> {_fmt(r.deviated_u)} gain {_fmt(r.gain)}")
    out.close()
    print(f"{mid.value} mode={space.mode.value} D={space.location_grid}: "
          f"{len(sources)} instance(s), {total} violation(s) (seed={args.seed})")
    return EXIT_FINDING if total else EXIT_OK


def cmd_audit_approx(args) -> int:
    mid = MechanismId.parse(args.mechanism)
    obj = Objective.parse(args.objective)
    sources = _load_source(args)
    report = audit_approx(mid, obj, sources, budget=args.samples, params=_params(args),
                          resolution=args.resolution, seed=args.seed, keep_records=True)
    out = _Output(args.out)
    writer = out.csv_writer(args.seed)
    writer.writerow(["mechanism", "objective", "instance_id", "mech_value", "opt_value",
                     "ratio", "y1", "y2"])
    for r in report.records:
        y = list(r.opt_placement) + [""] * (2 - len(r.opt_placement))
        writer.writerow([mid.value, obj.value, r.instance_id, repr(r.mech_value),
                         repr(r.opt_value), repr(r.ratio)] + [repr(v) if v != "" else "" for v in y[:2]])
    out.close()
    print(f"{mid.value} {obj.value}: examined {report.examined}, skipped {report.skipped} "
          f"(seed={args.seed}, optimum via {', '.join(sorted(report.methods))})")
    print(f"worst ratio {_fmt(report.worst_ratio)} on {report.witness_id}: "
          f"mechanism {_fmt(report.witness_mech_value)} / optimum {_fmt(report.witness_opt_value)}")
    if report.certified_worst_ratio is not None and report.certified_worst_ratio != report.worst_ratio:
        print(f"certified lower bound on the worst ratio {_fmt(report.certified_worst_ratio)}")
    if report.claimed_ratio is not None:
        print(f"published guarantee {_fmt(report.claimed_ratio)}")
    for note in report.notes:
        print(f"note: {note}")
    return EXIT_FINDING if report.below_claim else EXIT_OK


# ------------------------------------------------------------------- parser

def _add_source(p: argparse.ArgumentParser):
    src = p.add_mutually_exclusive_group()
    src.add_argument("--instance", metavar="PATH", help="instance file")
    src.add_argument("--catalog", metavar="ID", help="named witness instance")
    src.add_argument("--gen", metavar="SPEC",
                     help="random instances, e.g. n=4,count=100[,k=2,class=all|01|0m1|pm]")


def _add_common(p: argparse.ArgumentParser, *, mechanism=False, out=True):
    if mechanism:
        p.add_argument("--mechanism", required=True, choices=[m.value for m in MechanismId])
    p.add_argument("--objective", default="egal", choices=[o.value for o in Objective])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=float, default=DEFAULT_EPS, help="catalog epsilon")
    p.add_argument("--zd", type=float, default=Z_D, help="fixed+ parameter (default 7/22)")
    if out:
        p.add_argument("--out", metavar="PATH")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hetfl", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="optimal placement")
    _add_source(p)
    _add_common(p)
    p.add_argument("--resolution", type=float, help="use the grid oracle with this step")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("mech", help="run a mechanism")
    _add_source(p)
    _add_common(p, mechanism=True, out=False)
    p.add_argument("--samples", type=int, default=0, help="draws from a lottery outcome")
    p.add_argument("--dump-transcript", metavar="PATH")
    p.add_argument("--load-transcript", metavar="PATH")
    p.add_argument("--ell", type=float, default=1.0, help="segment length for --load-transcript")
    p.set_defaults(func=cmd_mech)

    p = sub.add_parser("audit-sp", help="search for profitable misreports")
    _add_source(p)
    _add_common(p, mechanism=True)
    p.add_argument("--mode", default="both", choices=[m.value for m in DeviationMode])
    p.add_argument("--grid", type=int, default=50, metavar="D", help="location grid 0, ell/D, ..., ell")
    p.set_defaults(func=cmd_audit_sp)

    p = sub.add_parser("audit-approx", help="worst approximation ratio over instances")
    _add_source(p)
    _add_common(p, mechanism=True)
    p.add_argument("--samples", type=int, help="maximum number of instances")
    p.add_argument("--resolution", type=float, help="grid step for the optimum when k >= 3")
    p.set_defaults(func=cmd_audit_approx)

    p = sub.add_parser("catalog", help="list or print witness instances")
    p.add_argument("--catalog", metavar="ID")
    p.add_argument("--eps", type=float, default=DEFAULT_EPS)
    p.set_defaults(func=cmd_catalog)

    p = sub.add_parser("constants", help="derived constants and their checks")
    p.set_defaults(func=cmd_constants)

    p = sub.add_parser("gen", help="write seeded random instances")
    p.add_argument("--gen", metavar="SPEC", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", metavar="PATH")
    p.set_defaults(func=cmd_gen)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, InputDomainError, ProtocolError, ResourceError) as exc:
        print(f"hetfl {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"hetfl {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
