"""Cascaded n-bit adder circuits with per-gate health variables.

Each bit has five gates (two XOR, two AND, one OR); every gate gets a status
variable (ok / stuck at 1 / stuck at 0) and an output line variable. Bit k's
carry-in is an identity variable fed by bit k-1's carry-out, so observing the
sum lines leaves a diagnosis problem over the gate statuses. These networks
drive the benchmark harness and most of the heavier tests.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .errors import BadReference
from .model import Network, NetworkSpec, Observation, build_network
from .search import SearchParams, Strategy, top_m_search

LINE_VALUES = ("on", "off")
STATUS_VALUES = ("ok", "stuck1", "stuck0")
STATUS_PRIOR = (0.99999, 0.000005, 0.000005)

POINT_MASS = "pointmass"
UNIFORM = "uniform"


def _xor(a: int, b: int) -> int:
    return 1 if a != b else 0


def _and(a: int, b: int) -> int:
    return 1 if a == 1 and b == 1 else 0


def _or(a: int, b: int) -> int:
    return 1 if a == 1 or b == 1 else 0


_GATE_FN = {"xor": _xor, "and": _and, "or": _or}


@dataclass(frozen=True)
class GateModel:
    """Boolean function plus the health semantics of one gate type."""

    kind: str

    def rows(self) -> list[list[float]]:
        """CPT rows for parents (status, in1, in2), last parent fastest.

        Lines use domain (on, off): index 0 means the line carries 1.
        """
        fn = _GATE_FN[self.kind]
        out = []
        for status in range(3):
            for a_idx in (0, 1):
                for b_idx in (0, 1):
                    if status == 0:
                        bit = fn(1 - a_idx, 1 - b_idx)
                    elif status == 1:
                        bit = 1
                    else:
                        bit = 0
                    out.append([1.0, 0.0] if bit else [0.0, 1.0])
        return out


XOR_GATE = GateModel("xor")
AND_GATE = GateModel("and")
OR_GATE = GateModel("or")

_IDENTITY_ROWS = [[1.0, 0.0], [0.0, 1.0]]
_STATUS_ROWS = [list(STATUS_PRIOR)]


@dataclass(frozen=True)
class AdderSpec:
    """Shape and input policy for one cascaded adder instance."""

    n_bits: int
    input_policy: str = POINT_MASS
    a_bits: tuple[int, ...] = ()
    b_bits: tuple[int, ...] = ()
    carry_in: int = 0

    def __post_init__(self):
        if self.n_bits < 1:
            raise BadReference("an adder needs at least one bit")
        if self.input_policy not in (POINT_MASS, UNIFORM):
            raise BadReference(f"unknown input policy {self.input_policy!r}")
        if self.a_bits and len(self.a_bits) != self.n_bits:
            raise BadReference("a_bits length must equal n_bits")
        if self.b_bits and len(self.b_bits) != self.n_bits:
            raise BadReference("b_bits length must equal n_bits")

    def a(self, k: int) -> int:
        return self.a_bits[k - 1] if self.a_bits else 0

    def b(self, k: int) -> int:
        return self.b_bits[k - 1] if self.b_bits else 0


def _line_prior(bit: int) -> list[list[float]]:
    return [[1.0, 0.0]] if bit else [[0.0, 1.0]]


@dataclass(frozen=True)
class Adder:
    """A built adder network plus the spec that produced it."""

    spec: AdderSpec
    network: Network

    @property
    def n_bits(self) -> int:
        return self.spec.n_bits

    def var(self, base: str, bit: int) -> str:
        return f"{base}_{bit}"

    def observe_outputs(self, wrong_bits: Iterable[int] = ()) -> Observation:
        """Observe every sum line at its all-ok zero-input value, flipped on
        the given bits."""
        wrong = set(wrong_bits)
        for k in wrong:
            if not (1 <= k <= self.n_bits):
                raise BadReference(f"bit {k} out of range 1..{self.n_bits}")
        mapping = {}
        for k in range(1, self.n_bits + 1):
            expected = _expected_sum_bit(self.spec, k)
            bit = (1 - expected) if k in wrong else expected
            mapping[self.var("out-x2", k)] = "on" if bit else "off"
        return Observation.from_names(self.network, mapping)


def _expected_sum_bit(spec: AdderSpec, k: int) -> int:
    """Sum line of bit k for an all-ok adder under point-mass inputs."""
    carry = spec.carry_in
    for j in range(1, k):
        a, b = spec.a(j), spec.b(j)
        carry = _or(_and(a, b), _and(_xor(a, b), carry))
    a, b = spec.a(k), spec.b(k)
    return _xor(_xor(a, b), carry)


def build_adder(spec: AdderSpec) -> Adder:
    """Assemble the network; declaration order is already topological."""
    ns = NetworkSpec(name=f"adder{spec.n_bits}")
    uniform = spec.input_policy == UNIFORM
    for k in range(1, spec.n_bits + 1):
        i1, i2, i3 = f"i1_{k}", f"i2_{k}", f"i3_{k}"
        x1ok, x1 = f"x1ok_{k}", f"out-x1_{k}"
        x2ok, x2 = f"x2ok_{k}", f"out-x2_{k}"
        a1ok, a1 = f"a1ok_{k}", f"out-a1_{k}"
        a2ok, a2 = f"a2ok_{k}", f"out-a2_{k}"
        o1ok, o1 = f"o1ok_{k}", f"out-o1_{k}"
        ns.add(i1, LINE_VALUES, rows=[[0.5, 0.5]] if uniform else _line_prior(spec.a(k)))
        ns.add(i2, LINE_VALUES, rows=[[0.5, 0.5]] if uniform else _line_prior(spec.b(k)))
        if k == 1:
            ns.add(
                i3,
                LINE_VALUES,
                rows=[[0.5, 0.5]] if uniform else _line_prior(spec.carry_in),
            )
        else:
            ns.add(i3, LINE_VALUES, parents=[f"out-o1_{k - 1}"], rows=_IDENTITY_ROWS)
        ns.add(x1ok, STATUS_VALUES, rows=_STATUS_ROWS)
        ns.add(x1, LINE_VALUES, parents=[x1ok, i1, i2], rows=XOR_GATE.rows())
        ns.add(x2ok, STATUS_VALUES, rows=_STATUS_ROWS)
        ns.add(x2, LINE_VALUES, parents=[x2ok, x1, i3], rows=XOR_GATE.rows())
        ns.add(a1ok, STATUS_VALUES, rows=_STATUS_ROWS)
        ns.add(a1, LINE_VALUES, parents=[a1ok, i1, i2], rows=AND_GATE.rows())
        ns.add(a2ok, STATUS_VALUES, rows=_STATUS_ROWS)
        ns.add(a2, LINE_VALUES, parents=[a2ok, x1, i3], rows=AND_GATE.rows())
        ns.add(o1ok, STATUS_VALUES, rows=_STATUS_ROWS)
        ns.add(o1, LINE_VALUES, parents=[o1ok, a1, a2], rows=OR_GATE.rows())
    return Adder(spec, build_network(ns))


def single_error_scenario(adder: Adder, error_bit: int) -> Observation:
    """All sum lines at their expected value except bit `error_bit`."""
    return adder.observe_outputs([error_bit])


@dataclass
class BenchmarkRow:
    n_bits: int
    k: int
    conflicts: bool
    m: int
    expansions: int = 0
    worlds: int = 0
    max_error: float = float("nan")
    wall_ms: float = float("nan")
    error: Optional[str] = None
    engine: str = ""
    strategy: str = ""


CSV_HEADER = "nBits,k,conflicts,m,expansions,worlds,maxError,wallMs"


def run_benchmark(
    grid: Iterable[tuple[int, int, bool, int]],
    *,
    strategy: Strategy = Strategy.ITERATIVE_DEEPENING,
    engine: str = "auto",
    wrong_bits: Optional[dict[int, Sequence[int]]] = None,
) -> list[BenchmarkRow]:
    """Diagnose single-error scenarios over a (nBits, k, conflicts, m) grid.

    Each cell builds the adder, observes the expected outputs with bit k
    flipped, and finds the top m worlds. A failing cell records its error and
    the sweep continues.
    """
    rows: list[BenchmarkRow] = []
    adders: dict[int, Adder] = {}
    for n_bits, k, conflicts, m in grid:
        row = BenchmarkRow(n_bits=n_bits, k=k, conflicts=bool(conflicts), m=m)
        rows.append(row)
        try:
            adder = adders.get(n_bits)
            if adder is None:
                adder = build_adder(AdderSpec(n_bits))
                adders[n_bits] = adder
            wrong = wrong_bits.get(k, [k]) if wrong_bits else [k]
            obs = adder.observe_outputs(wrong)
            params = SearchParams(
                strategy=strategy,
                conflicts_enabled=bool(conflicts),
                engine=engine,
                snapshot_every=1 << 30,  # benchmark cells only need the end state
            )
            t0 = time.monotonic()
            result = top_m_search(adder.network, obs, m, params)
            row.wall_ms = (time.monotonic() - t0) * 1000.0
            row.expansions = result.expansions
            row.worlds = result.worlds_found
            pq = result.pq(bool(conflicts))
            denom = result.p_w_obs + pq
            row.max_error = pq / (2.0 * denom) if denom > 0.0 else float("nan")
            row.engine = result.engine
            row.strategy = result.strategy
        except Exception as exc:  # noqa: BLE001 - the sweep must survive a cell
            row.error = f"{type(exc).__name__}: {exc}"
    return rows


def write_benchmark_csv(rows: Iterable[BenchmarkRow], fp) -> None:
    fp.write(CSV_HEADER + "\n")
    for r in rows:
        if r.error is not None:
            fp.write(f"{r.n_bits},{r.k},{'on' if r.conflicts else 'off'},{r.m},,,,\n")
            continue
        fp.write(
            f"{r.n_bits},{r.k},{'on' if r.conflicts else 'off'},{r.m},"
            f"{r.expansions},{r.worlds},{r.max_error!r},{r.wall_ms:.3f}\n"
        )
