"""Command-line interface and the text formats for networks and evidence.

Network files:

    # comment
    net <name>
    var <name> <value> <value> ...
    parents <var> [<parent> ...]
    cpt <var>
    <pval> ... <pval> | <p> <p> ...
    end

CPT rows must appear in mixed-radix order of the declared parents (last
parent varies fastest); a root variable has one row starting with `|`.
Evidence files hold `name = value` lines. Queries use atoms `name=value`
combined with `!`, `&`, `|` and parentheses (`!` binds tightest, then `&`).
"""

from __future__ import annotations

import argparse
import itertools
import json
import sys
from dataclasses import dataclass, field
from typing import Optional, Sequence

from . import engine as _engine
from ._pyengine import (
    SNAP_EXPANSIONS,
    SNAP_P_W_OBS,
    SNAP_P_WG_OBS,
    SNAP_PQ_ADJ,
    SNAP_PQ_NAIVE,
    SNAP_WORLDS,
)
from .circuits import AdderSpec, build_adder, run_benchmark, write_benchmark_csv
from .errors import BNSearchError, ParseError, ZeroEvidence
from .estimate import MassMode, posterior_bounds, run_anytime
from .model import (
    And,
    Atom,
    Network,
    NetworkSpec,
    Not,
    Observation,
    Or,
    QueryFormula,
    build_network,
)
from .search import SearchParams, StoppingRule, Strategy, top_m_search

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_ZERO_EVIDENCE = 3


# -- network file parsing -------------------------------------------------


@dataclass
class NetworkFileAST:
    """Parsed sections of a network file, before semantic validation."""

    name: str = "net"
    variables: list[tuple[str, list[str]]] = field(default_factory=list)
    parents: dict[str, list[str]] = field(default_factory=dict)
    cpts: dict[str, list[list[float]]] = field(default_factory=dict)

    def to_spec(self) -> NetworkSpec:
        spec = NetworkSpec(name=self.name)
        for name, values in self.variables:
            spec.add(name, values)
        spec.parents = dict(self.parents)
        spec.cpts = {k: [list(r) for r in rows] for k, rows in self.cpts.items()}
        return spec


def _tokens(line: str) -> list[str]:
    return line.split()


def parse_network(text: str) -> NetworkFileAST:
    """Parse the `net / var / parents / cpt ... end` format into an AST.

    Enforces section order, row order, and row arity; deeper semantic checks
    (row sums, cycles) belong to build_network.
    """
    ast = NetworkFileAST()
    lines = text.splitlines()
    stage = "net"  # net -> var -> parents -> cpt -> end
    domains: dict[str, list[str]] = {}
    current_cpt: Optional[str] = None
    expected_rows: list[tuple[str, ...]] = []
    row_cursor = 0
    saw_end = False

    def fail(msg: str, ln: int):
        raise ParseError(msg, ln)

    def advance(new_stage: str, ln: int):
        nonlocal stage
        order = ["net", "var", "parents", "cpt", "end"]
        if order.index(new_stage) < order.index(stage):
            fail(f"{new_stage!r} section after {stage!r} section", ln)
        stage = new_stage

    def close_cpt(ln: int):
        if current_cpt is not None and row_cursor != len(expected_rows):
            fail(
                f"table for {current_cpt!r} has {row_cursor} of "
                f"{len(expected_rows)} row(s)",
                ln,
            )

    for ln, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if saw_end:
            fail("content after end", ln)
        toks = _tokens(line)
        head = toks[0]
        if head == "net":
            if stage != "net" or len(toks) != 2:
                fail("expected a single `net <name>` line first", ln)
            ast.name = toks[1]
            advance("var", ln)
        elif head == "var":
            advance("var", ln)
            if len(toks) < 3:
                fail("var needs a name and at least one value", ln)
            name, values = toks[1], toks[2:]
            if name in domains:
                fail(f"variable {name!r} declared twice", ln)
            ast.variables.append((name, values))
            domains[name] = values
        elif head == "parents":
            advance("parents", ln)
            if len(toks) < 2:
                fail("parents needs a variable name", ln)
            name = toks[1]
            if name not in domains:
                fail(f"parents for undeclared variable {name!r}", ln)
            if name in ast.parents:
                fail(f"parents for {name!r} given twice", ln)
            for p in toks[2:]:
                if p not in domains:
                    fail(f"unknown parent {p!r}", ln)
            ast.parents[name] = toks[2:]
        elif head == "cpt":
            close_cpt(ln)
            advance("cpt", ln)
            if len(toks) != 2:
                fail("cpt needs exactly one variable name", ln)
            name = toks[1]
            if name not in domains:
                fail(f"table for undeclared variable {name!r}", ln)
            if name in ast.cpts:
                fail(f"table for {name!r} given twice", ln)
            current_cpt = name
            ast.cpts[name] = []
            parent_domains = [domains[p] for p in ast.parents.get(name, [])]
            expected_rows = list(itertools.product(*parent_domains))
            row_cursor = 0
        elif head == "end":
            if len(toks) != 1:
                fail("end takes no arguments", ln)
            close_cpt(ln)
            advance("end", ln)
            saw_end = True
        else:
            if stage != "cpt" or current_cpt is None:
                fail(f"unexpected line {line!r}", ln)
            if "|" not in line:
                fail("table row needs a `|`", ln)
            left, _, right = line.partition("|")
            pvals = tuple(left.split())
            probs_s = right.split()
            if row_cursor >= len(expected_rows):
                fail(f"too many rows for {current_cpt!r}", ln)
            if pvals != expected_rows[row_cursor]:
                want = " ".join(expected_rows[row_cursor]) or "(none)"
                fail(
                    f"row {row_cursor} of {current_cpt!r} should list parent "
                    f"values: {want}",
                    ln,
                )
            m = len(domains[current_cpt])
            if len(probs_s) != m:
                fail(
                    f"row for {current_cpt!r} has {len(probs_s)} probabilities, "
                    f"domain has {m}",
                    ln,
                )
            try:
                probs = [float(x) for x in probs_s]
            except ValueError:
                fail("probabilities must be numbers", ln)
            ast.cpts[current_cpt].append(probs)
            row_cursor += 1
    if not saw_end:
        raise ParseError("missing end", len(lines))
    return ast


def emit_network(net: Network) -> str:
    """Canonical text form; parse(emit(net)) rebuilds an identical network."""
    out = [f"net {net.name}"]
    for v in net.variables:
        out.append(f"var {v.name} {' '.join(v.domain)}")
    for v in net.variables:
        ps = net.parents(v.index)
        if ps:
            out.append(
                f"parents {v.name} {' '.join(net.variables[p].name for p in ps)}"
            )
    for v in net.variables:
        cpt = net.cpts[v.index]
        out.append(f"cpt {v.name}")
        parent_domains = [net.variables[p].domain for p in cpt.parent_indices]
        for row_idx, pvals in enumerate(itertools.product(*parent_domains)):
            probs = " ".join(repr(float(x)) for x in cpt.table[row_idx])
            prefix = " ".join(pvals)
            out.append(f"{prefix} | {probs}" if prefix else f"| {probs}")
    out.append("end")
    return "\n".join(out) + "\n"


def parse_evidence(text: str, net: Network) -> Observation:
    """`name = value` lines into an Observation."""
    mapping: dict[str, str] = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError("expected `name = value`", ln)
        name, _, value = line.partition("=")
        name, value = name.strip(), value.strip()
        if not name or not value:
            raise ParseError("expected `name = value`", ln)
        if name in mapping:
            raise ParseError(f"variable {name!r} observed twice", ln)
        mapping[name] = value
    return Observation.from_names(net, mapping)


# -- query expressions -----------------------------------------------------

_QUERY_OPS = set("!&|()")


def _lex_query(text: str) -> list[str]:
    toks = []
    i = 0
    while i < len(text):
        c = text[i]
        if c.isspace():
            i += 1
        elif c in _QUERY_OPS:
            toks.append(c)
            i += 1
        else:
            j = i
            while j < len(text) and not text[j].isspace() and text[j] not in _QUERY_OPS:
                j += 1
            toks.append(text[i:j])
            i = j
    return toks


def parse_query(text: str, net: Network) -> QueryFormula:
    """Recursive-descent parse: `!` over `&` over `|`, atoms `name=value`."""
    toks = _lex_query(text)
    pos = 0

    def peek() -> Optional[str]:
        return toks[pos] if pos < len(toks) else None

    def take() -> str:
        nonlocal pos
        tok = toks[pos]
        pos += 1
        return tok

    def parse_or() -> QueryFormula:
        parts = [parse_and()]
        while peek() == "|":
            take()
            parts.append(parse_and())
        return parts[0] if len(parts) == 1 else Or(tuple(parts))

    def parse_and() -> QueryFormula:
        parts = [parse_unary()]
        while peek() == "&":
            take()
            parts.append(parse_unary())
        return parts[0] if len(parts) == 1 else And(tuple(parts))

    def parse_unary() -> QueryFormula:
        tok = peek()
        if tok is None:
            raise ParseError("query ended unexpectedly")
        if tok == "!":
            take()
            return Not(parse_unary())
        if tok == "(":
            take()
            inner = parse_or()
            if peek() != ")":
                raise ParseError("missing )")
            take()
            return inner
        tok = take()
        if tok in _QUERY_OPS:
            raise ParseError(f"unexpected {tok!r}")
        if "=" not in tok:
            raise ParseError(f"atom {tok!r} must look like name=value")
        name, _, value = tok.partition("=")
        if not name or not value:
            raise ParseError(f"atom {tok!r} must look like name=value")
        v = net.variable(name)
        return Atom(v.index, v.value_index(value))

    if not toks:
        raise ParseError("empty query")
    out = parse_or()
    if pos != len(toks):
        raise ParseError(f"trailing tokens: {' '.join(toks[pos:])}")
    return out


# -- command implementations ------------------------------------------------


def _common_params(args) -> SearchParams:
    return SearchParams(
        strategy=(
            Strategy.ITERATIVE_DEEPENING
            if args.strategy == "iddfs"
            else Strategy.BEST_FIRST
        ),
        conflicts_enabled=args.conflicts == "on",
        epsilon_normal=args.epsilon_normal,
        stop=StoppingRule(
            max_error=args.max_error,
            max_worlds=args.max_worlds,
            max_expansions=args.max_expansions,
        ),
        engine=args.engine,
        snapshot_every=1 if args.trace else 64,
    )


def _load_network(path: str) -> Network:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    return build_network(parse_network(text).to_spec())


def _write_trace(path: str, every: int, anytime) -> None:
    col = SNAP_PQ_ADJ if anytime.mode == MassMode.CONFLICT_ADJUSTED else SNAP_PQ_NAIVE
    rows = anytime.result.snapshots
    with open(path, "w", encoding="utf-8") as fh:
        for i, row in enumerate(rows):
            if i % every and i != len(rows) - 1:
                continue
            pq = float(row[col])
            denom = float(row[SNAP_P_W_OBS]) + pq
            if denom > 0.0:
                lower, upper, _, max_error = posterior_bounds(
                    float(row[SNAP_P_WG_OBS]), float(row[SNAP_P_W_OBS]), pq
                )
            else:
                lower = upper = 0.0
                max_error = 0.5
            fh.write(
                f"step,{int(row[SNAP_EXPANSIONS])},{int(row[SNAP_WORLDS])},"
                f"{pq!r},{lower!r},{upper!r},{max_error!r}\n"
            )


def _cmd_query(args) -> int:
    net = _load_network(args.network)
    obs = None
    if args.evidence:
        with open(args.evidence, "r", encoding="utf-8") as fh:
            obs = parse_evidence(fh.read(), net)
    query = parse_query(args.query, net)
    params = _common_params(args)
    anytime = run_anytime(net, obs, query, params)
    if args.trace:
        _write_trace(args.trace, args.trace_every, anytime)
    rep = anytime.final
    if args.machine:
        payload = {
            "query": args.query,
            "lower": rep.post_lower,
            "upper": rep.post_upper,
            "midpoint": rep.midpoint,
            "maxError": rep.max_error,
            "pWgObs": rep.p_w_g_obs,
            "pWobs": rep.p_w_obs,
            "pQ": rep.p_q,
            "worlds": rep.worlds,
            "expansions": rep.expansions,
            "stop": anytime.result.stop_reason,
            "engine": anytime.result.engine,
        }
        if rep.prior_lower is not None:
            payload["priorLower"] = rep.prior_lower
            payload["priorUpper"] = rep.prior_upper
        print(json.dumps(payload, sort_keys=True))
    else:
        kind = "posterior" if anytime.conditioned else "prior"
        print(f"query: {args.query}")
        print(
            f"{kind} in [{rep.post_lower:.6g}, {rep.post_upper:.6g}]"
            f"  midpoint {rep.midpoint:.6g}  maxError {rep.max_error:.3g}"
        )
        print(
            f"worlds {rep.worlds}  expansions {rep.expansions}"
            f"  pQ {rep.p_q:.6g}  stop {anytime.result.stop_reason}"
        )
    return EXIT_OK


def _fault_summary(net: Network, values: Sequence[int], epsilon: float) -> list[str]:
    """Assignments that deviate from a defined normal value, for display."""
    out = []
    for i, v in enumerate(values):
        cpt = net.cpts[i]
        row = cpt.row_index([values[p] for p in cpt.parent_indices])
        normal = cpt.normal_values(epsilon)[row]
        if normal >= 0 and v != normal:
            var = net.variables[i]
            out.append(f"{var.name}={var.domain[v]}")
    return out


def _cmd_diagnose(args) -> int:
    net = _load_network(args.network)
    with open(args.evidence, "r", encoding="utf-8") as fh:
        obs = parse_evidence(fh.read(), net)
    params = _common_params(args)
    result = top_m_search(net, obs, args.top, params)
    worlds = sorted(result.worlds, key=lambda w: (-w.g, w.generation))[: args.top]
    pq = result.pq(params.conflicts_enabled)
    denom = result.p_w_obs + pq
    if denom <= 0.0:
        raise ZeroEvidence("no world is consistent with the evidence")
    records = []
    for rank, w in enumerate(worlds, start=1):
        faults = _fault_summary(net, w.values, args.epsilon_normal)
        lower = w.g / denom
        upper = (w.g + pq) / denom
        records.append(
            {
                "rank": rank,
                "probability": w.g,
                "posteriorLower": lower,
                "posteriorUpper": min(1.0, upper),
                "faults": faults,
            }
        )
    if args.machine:
        print(
            json.dumps(
                {
                    "worlds": records,
                    "expansions": result.expansions,
                    "pQ": pq,
                    "stop": result.stop_reason,
                },
                sort_keys=True,
            )
        )
    else:
        print(f"top {len(records)} world(s); expansions {result.expansions}, pQ {pq:.3g}")
        for r in records:
            faults = ", ".join(r["faults"]) if r["faults"] else "(none)"
            print(
                f"  #{r['rank']}  p={r['probability']:.6g}  "
                f"posterior [{r['posteriorLower']:.4g}, {r['posteriorUpper']:.4g}]  "
                f"faults: {faults}"
            )
    return EXIT_OK


def _cmd_gen_adder(args) -> int:
    adder = build_adder(AdderSpec(args.bits, input_policy=args.input_policy))
    error_bits = []
    if args.error_bit:
        for part in str(args.error_bit).split(","):
            part = part.strip()
            if part:
                error_bits.append(int(part))
    obs = adder.observe_outputs(error_bits)
    net_path, _, ev_path = args.out.partition(",")
    if not net_path or not ev_path:
        raise ParseError("--out needs `<network path>,<evidence path>`")
    with open(net_path, "w", encoding="utf-8") as fh:
        fh.write(emit_network(adder.network))
    with open(ev_path, "w", encoding="utf-8") as fh:
        for name, value in sorted(obs.names(adder.network).items()):
            fh.write(f"{name} = {value}\n")
    print(f"wrote {net_path} ({adder.network.n} variables) and {ev_path} ({len(obs)} observations)")
    return EXIT_OK


def _parse_grid(spec: str) -> list[tuple[int, int, bool, int]]:
    grid = []
    for cell in spec.split(";"):
        cell = cell.strip()
        if not cell:
            continue
        parts = [p.strip() for p in cell.split(",")]
        if len(parts) != 4:
            raise ParseError(f"grid cell {cell!r} needs nBits,k,on|off,m")
        n_bits, k, conflicts, m = parts
        if conflicts not in ("on", "off"):
            raise ParseError(f"grid cell {cell!r}: conflicts must be on or off")
        grid.append((int(n_bits), int(k), conflicts == "on", int(m)))
    if not grid:
        raise ParseError("empty benchmark grid")
    return grid


def _cmd_bench(args) -> int:
    grid = _parse_grid(args.grid)
    strategy = (
        Strategy.ITERATIVE_DEEPENING if args.strategy == "iddfs" else Strategy.BEST_FIRST
    )
    rows = run_benchmark(grid, strategy=strategy, engine=args.engine)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            write_benchmark_csv(rows, fh)
    else:
        write_benchmark_csv(rows, sys.stdout)
    failures = [r for r in rows if r.error]
    for r in failures:
        print(f"cell {r.n_bits},{r.k} failed: {r.error}", file=sys.stderr)
    return EXIT_OK


def _cmd_bench_engines(args) -> int:
    """Same grid on each engine, for comparing the compiled core to pure Python."""
    grid = _parse_grid(args.grid)
    engines = ["pure"]
    if _engine.compiled_available():
        engines.insert(0, "compiled")
    strategy = (
        Strategy.ITERATIVE_DEEPENING if args.strategy == "iddfs" else Strategy.BEST_FIRST
    )
    print("engine,nBits,k,conflicts,m,expansions,worlds,wallMs")
    for eng in engines:
        for row in run_benchmark(grid, strategy=strategy, engine=eng):
            if row.error:
                print(f"{eng},{row.n_bits},{row.k},,,,,{row.error}", file=sys.stderr)
                continue
            print(
                f"{eng},{row.n_bits},{row.k},{'on' if row.conflicts else 'off'},"
                f"{row.m},{row.expansions},{row.worlds},{row.wall_ms:.3f}"
            )
    return EXIT_OK


def _cmd_engines(_args) -> int:
    info = _engine.engine_info()
    for key in sorted(info):
        print(f"{key}: {info[key]}")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


class _UsageError(Exception):
    pass


def _add_search_flags(p: argparse.ArgumentParser):
    p.add_argument("--max-error", type=float, default=None)
    p.add_argument("--max-worlds", type=int, default=None)
    p.add_argument("--max-expansions", type=int, default=None)
    p.add_argument("--strategy", choices=["bestfirst", "iddfs"], default="bestfirst")
    p.add_argument("--conflicts", choices=["on", "off"], default="on")
    p.add_argument("--epsilon-normal", type=float, default=1e-3)
    p.add_argument("--engine", choices=["auto", "pure", "compiled"], default="auto")
    p.add_argument("--machine", action="store_true")
    p.add_argument("--trace", default=None, metavar="PATH")
    p.add_argument("--trace-every", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bnsearch", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    q = sub.add_parser("query", help="bound a query probability")
    q.add_argument("--network", required=True)
    q.add_argument("--evidence", default=None)
    q.add_argument("--query", required=True)
    _add_search_flags(q)
    q.set_defaults(fn=_cmd_query)

    d = sub.add_parser("diagnose", help="most probable worlds given evidence")
    d.add_argument("--network", required=True)
    d.add_argument("--evidence", required=True)
    d.add_argument("--top", type=int, default=5)
    _add_search_flags(d)
    d.set_defaults(fn=_cmd_diagnose)

    g = sub.add_parser("gen-adder", help="write an adder network and evidence")
    g.add_argument("--bits", type=int, required=True)
    g.add_argument("--error-bit", default=None, help="bit (or comma list) whose sum line reads wrong")
    g.add_argument("--input-policy", choices=["pointmass", "uniform"], default="pointmass")
    g.add_argument("--out", required=True, metavar="NET,EV")
    g.set_defaults(fn=_cmd_gen_adder)

    b = sub.add_parser("bench", help="sweep diagnosis runs over a grid")
    b.add_argument("--grid", required=True, help="semicolon-separated nBits,k,on|off,m cells")
    b.add_argument("--strategy", choices=["bestfirst", "iddfs"], default="iddfs")
    b.add_argument("--engine", choices=["auto", "pure", "compiled"], default="auto")
    b.add_argument("--out", default=None)
    b.set_defaults(fn=_cmd_bench)

    be = sub.add_parser("bench-engines", help="compare compiled and pure engines")
    be.add_argument("--grid", required=True)
    be.add_argument("--strategy", choices=["bestfirst", "iddfs"], default="iddfs")
    be.set_defaults(fn=_cmd_bench_engines)

    e = sub.add_parser("engines", help="show which engine will run")
    e.set_defaults(fn=_cmd_engines)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.fn(args)
    except ZeroEvidence as exc:
        print(f"zero evidence: {exc}", file=sys.stderr)
        return EXIT_ZERO_EVIDENCE
    except (BNSearchError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
