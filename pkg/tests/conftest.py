"""Shared corpus generator, the session-wide evidence sweep, and the
acceptance summary table printed after a run.

The random-network corpus is deterministic (fixed seed) so every failure is
reproducible by instance index.
"""

import math
import random
import re
import time
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import pytest

from bnsearch._pyengine import (
    SNAP_PQ_ADJ,
    SNAP_PQ_NAIVE,
    SNAP_P_W_OBS,
    SNAP_P_WG_OBS,
)
from bnsearch.estimate import run_anytime
from bnsearch.model import (
    And,
    Atom,
    NetworkSpec,
    Not,
    Observation,
    Or,
    build_network,
)
from bnsearch.search import SearchParams, Strategy
from bnsearch.worlds import enumerate_exact

VALUE_NAMES = ("a", "b", "c")

# float slack when comparing a float oracle against float bounds; this is
# representation noise, not a tolerance on the bound itself
ORACLE_SLACK = 1e-12


def random_network(rng: random.Random, n_vars=None, name="rand"):
    n = n_vars if n_vars is not None else rng.randint(3, 10)
    spec = NetworkSpec(name=f"{name}{n}")
    doms = []
    for i in range(n):
        dom = rng.randint(2, 3)
        doms.append(dom)
        k = rng.randint(0, min(i, 3))
        parents = rng.sample(range(i), k)
        n_rows = 1
        for p in parents:
            n_rows *= doms[p]
        rows = [_random_row(rng, dom) for _ in range(n_rows)]
        spec.add(
            f"v{i}",
            VALUE_NAMES[:dom],
            parents=[f"v{p}" for p in parents],
            rows=rows,
        )
    return build_network(spec)


def _random_row(rng: random.Random, dom: int):
    style = rng.random()
    if style < 0.2:
        # hard 0/1 row: exercises zero-probability pruning
        row = [0.0] * dom
        row[rng.randrange(dom)] = 1.0
        return row
    if style < 0.45:
        # near-certain row: the regime the conflict machinery feeds on
        peak = 1.0 - 10 ** rng.uniform(-6, -3.2)
        rest = 1.0 - peak
        row = [rest / (dom - 1)] * dom
        row[rng.randrange(dom)] = peak
        total = sum(row)
        return [x / total for x in row]
    weights = [rng.random() + 1e-3 for _ in range(dom)]
    if dom == 3 and rng.random() < 0.2:
        weights[rng.randrange(dom)] = 0.0
    total = sum(weights)
    return [w / total for w in weights]


def forward_sample(rng: random.Random, net):
    values = []
    for i in range(net.n):
        row = net.cpts[i].row([values[p] for p in net.cpts[i].parent_indices])
        values.append(rng.choices(range(len(row)), weights=row)[0])
    return values


def random_observation(rng: random.Random, net, min_vars=1):
    # observing a forward-sampled world keeps P(obs) > 0
    world = forward_sample(rng, net)
    picked = [i for i in range(net.n) if rng.random() < 0.35]
    while len(picked) < min_vars:
        extra = rng.randrange(net.n)
        if extra not in picked:
            picked.append(extra)
    return Observation((i, world[i]) for i in sorted(picked))


def random_query(rng: random.Random, net, depth=2):
    if depth > 0 and rng.random() < 0.55:
        op = And if rng.random() < 0.5 else Or
        width = rng.randint(2, 3)
        return op(tuple(random_query(rng, net, depth - 1) for _ in range(width)))
    v = rng.randrange(net.n)
    a = Atom(v, rng.randrange(net.domain_size(v)))
    return Not(a) if rng.random() < 0.3 else a


def corpus(seed=20260815, count=200):
    rng = random.Random(seed)
    out = []
    for idx in range(count):
        net = random_network(rng, name=f"c{idx}_")
        conditioned = rng.random() < 0.75
        obs = random_observation(rng, net) if conditioned else None
        query = random_query(rng, net)
        out.append((net, obs, query))
    return out


@pytest.fixture(scope="session")
def corpus_instances():
    return corpus()


# -- hand-built diagnosis gadgets ---------------------------------------------
#
# Small networks where the conflict machinery provably has work to do: a
# shared line read by near-deterministic sensors, and a relay chain whose
# head is only mildly reliable. Both are used by the unit tests and by the
# exhaustive admissibility check.

STATUS = ("ok", "low", "high")
SROWS = [[0.9996, 0.0002, 0.0002]]


def gated_reading(match=0.9995):
    """CPT rows for a reading with parents (status, line), last parent fastest.

    ok follows the line; low pins the reading off; high pins it on."""
    leak = 1.0 - match
    return [
        [match, leak],
        [leak, match],
        [leak, match],
        [leak, match],
        [match, leak],
        [match, leak],
    ]


def sensor_pair():
    """Two near-certain sensors reading one soft line, observed disagreeing."""
    spec = NetworkSpec(name="sensor-pair")
    spec.add("line", ("on", "off"), rows=[[0.7, 0.3]])
    spec.add("s1", STATUS, rows=SROWS)
    spec.add("r1", ("on", "off"), parents=("s1", "line"), rows=gated_reading())
    spec.add("s2", STATUS, rows=SROWS)
    spec.add("r2", ("on", "off"), parents=("s2", "line"), rows=gated_reading())
    net = build_network(spec)
    return net, Observation.from_names(net, {"r1": "on", "r2": "off"})


def relay_chain():
    """Four relays in series; the far end reads dead while a mid probe is live."""
    spec = NetworkSpec(name="relay-chain")
    spec.add("src", ("on", "off"), rows=[[0.997, 0.003]])
    prev = "src"
    for i in range(1, 5):
        spec.add(f"c{i}", STATUS, rows=SROWS)
        spec.add(
            f"d{i}", ("on", "off"), parents=(f"c{i}", prev), rows=gated_reading()
        )
        prev = f"d{i}"
    spec.add("probe", ("on", "off"), parents=("d2",), rows=[[0.998, 0.002], [0.002, 0.998]])
    spec.add("tail", ("on", "off"), parents=("d4",), rows=[[0.999, 0.001], [0.001, 0.999]])
    net = build_network(spec)
    return net, Observation.from_names(net, {"tail": "off", "probe": "on"})


@dataclass
class SweepEvidence:
    """Aggregates from running every corpus instance in all four configurations
    (two strategies x conflicts on/off) to exhaustion with per-step snapshots."""

    runs: int = 0
    rows: int = 0
    wall_s: float = 0.0
    c1_worst: float = 0.0
    naive_violations: int = 0
    adjusted_violations: int = 0
    adjusted_examples: list = field(default_factory=list)
    c3_worst_rel: float = 0.0
    c3_expressions_differ: int = 0
    c11_worst_increase: float = 0.0
    c11_violations: int = 0
    registered_instances: list = field(default_factory=list)


def _bracket_violations(S, pq_col, true_value, conditioned):
    g = S[:, SNAP_P_WG_OBS]
    q = S[:, pq_col]
    if conditioned:
        denom = S[:, SNAP_P_W_OBS] + q
        live = denom > 0.0
        lower = np.where(live, g / np.where(live, denom, 1.0), 0.0)
        upper = np.minimum(1.0, np.where(live, (g + q) / np.where(live, denom, 1.0), 1.0))
    else:
        live = np.ones(len(S), dtype=bool)
        lower = g
        upper = np.minimum(1.0, g + q)
    bad = live & (
        (true_value < lower - ORACLE_SLACK) | (true_value > upper + ORACLE_SLACK)
    )
    return bad, lower, upper


@pytest.fixture(scope="session")
def corpus_sweep(corpus_instances):
    ev = SweepEvidence()
    t0 = time.monotonic()
    for idx, (net, obs, query) in enumerate(corpus_instances):
        exact = enumerate_exact(net, query, obs)
        true_value = exact.p_query if obs is None else exact.posterior
        conditioned = obs is not None
        registered = False
        for strategy in (Strategy.BEST_FIRST, Strategy.ITERATIVE_DEEPENING):
            for conflicts in (False, True):
                res = run_anytime(
                    net,
                    obs,
                    query,
                    SearchParams(
                        strategy=strategy,
                        conflicts_enabled=conflicts,
                        snapshot_every=1,
                        keep_worlds=0,
                    ),
                )
                if res.result.conflicts_registered > 0:
                    registered = True
                ev.runs += 1
                S = res.result.snapshots
                ev.rows += len(S)
                ev.c1_worst = max(ev.c1_worst, abs(res.final.midpoint - true_value))

                bad_n, _, _ = _bracket_violations(S, SNAP_PQ_NAIVE, true_value, conditioned)
                ev.naive_violations += int(bad_n.sum())
                bad_a, lo, hi = _bracket_violations(S, SNAP_PQ_ADJ, true_value, conditioned)
                n_bad = int(bad_a.sum())
                ev.adjusted_violations += n_bad
                if n_bad and len(ev.adjusted_examples) < 3:
                    row = int(np.nonzero(bad_a)[0][0])
                    ev.adjusted_examples.append(
                        (idx, strategy.value, conflicts, row,
                         float(lo[row]), float(hi[row]), true_value)
                    )

                for rep in res.reports():
                    w = Fraction(rep.p_w_obs)
                    q = Fraction(rep.p_q)
                    g = Fraction(rep.p_w_g_obs)
                    denom = w + q
                    if denom <= 0:
                        continue
                    half_width = q / (2 * denom)
                    from_interval = ((g + q) / denom - g / denom) / 2
                    if half_width != from_interval:
                        ev.c3_expressions_differ += 1
                    if half_width > 0:
                        rel = abs(Fraction(rep.max_error) - half_width) / half_width
                        ev.c3_worst_rel = max(ev.c3_worst_rel, float(rel))
                    elif rep.max_error != 0.0:
                        ev.c3_worst_rel = math.inf

                if not conflicts:
                    pq = S[:, SNAP_PQ_NAIVE]
                    if len(pq) > 1:
                        inc = float(np.max(pq[1:] - pq[:-1]))
                        ev.c11_worst_increase = max(ev.c11_worst_increase, inc)
                        # compensated summation may wobble by an ulp; anything
                        # beyond that is a real accounting leak
                        bad = pq[1:] > pq[:-1] * (1.0 + 1e-12) + 1e-15
                        ev.c11_violations += int(bad.sum())
        if registered:
            ev.registered_instances.append(idx)
    ev.wall_s = time.monotonic() - t0
    return ev


# -- acceptance summary ------------------------------------------------------

_CRITERIA = {
    1: "exhaustive runs match exact enumeration within 1e-9",
    2: "oracle stays inside reported bounds at every step",
    3: "maxError equals both closed forms at every snapshot",
    4: "100-bit single-error diagnosis: five worlds at 0.2",
    5: "registered conflicts exclude no consistent world",
    6: "prefix bound dominates every consistent completion",
    7: "n=64 expansion trends with and without conflicts",
    8: "expansion scaling follows the k + 5(n-k) model",
    9: "1000-bit all-ok prior matches 0.99999^5000",
    10: "two-error diagnosis returns the 5x5 candidate grid",
    11: "naive unexplored mass never increases",
}

_outcomes: dict = {}


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_c(\d+)", report.nodeid)
    if not m:
        return
    crit = int(m.group(1))
    entry = _outcomes.setdefault(crit, {"failed": False, "xfailed": [], "passed": 0})
    if report.when == "call" and hasattr(report, "wasxfail"):
        # strict-xfail tests report their expected failure at call time
        entry["xfailed"].append(report.nodeid.rsplit("::", 1)[-1])
        return
    if report.when in ("setup", "call") and report.failed:
        entry["failed"] = True
    elif report.when == "call" and report.passed:
        entry["passed"] += 1


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for crit in sorted(_CRITERIA):
        if crit not in _outcomes:
            continue
        entry = _outcomes[crit]
        if entry["failed"]:
            verdict = "FAIL"
        elif entry["passed"] == 0 and entry["xfailed"]:
            verdict = "EXPECTED FAIL"
        elif entry["xfailed"]:
            verdict = "PARTIAL"
        else:
            verdict = "PASS"
        line = f"C{crit:<3} {verdict:<14} {_CRITERIA[crit]}"
        if entry["xfailed"] and verdict != "EXPECTED FAIL":
            line += f"  [documented expected failure: {', '.join(entry['xfailed'])}]"
        tr.write_line(line)
