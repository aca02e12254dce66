"""Discrete Bayesian network model.

Variables are kept in topological order; each one carries a dense conditional
probability table whose rows enumerate parent-value tuples in mixed-radix
order (the last declared parent varies fastest).
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

from .errors import (
    BadReference,
    CyclicNetwork,
    IncompleteCPT,
    UnnormalizedRow,
)

ROW_SUM_TOLERANCE = 1e-9
DEFAULT_EPSILON_NORMAL = 1e-3


@dataclass(frozen=True)
class Variable:
    index: int
    name: str
    domain: tuple[str, ...]

    def value_index(self, value: str) -> int:
        try:
            return self.domain.index(value)
        except ValueError:
            raise BadReference(
                f"variable {self.name!r} has no value {value!r} (domain: {', '.join(self.domain)})"
            ) from None


class CPT:
    """Conditional distribution of one variable given its parents.

    `table` has one row per parent-value tuple and one column per value of the
    owner. Row order is mixed-radix over the declared parent order, last
    parent fastest; a root variable has a single row.
    """

    __slots__ = ("owner", "parent_indices", "table", "_strides", "_normal_cache")

    def __init__(self, owner: int, parent_indices: tuple[int, ...], table: np.ndarray):
        self.owner = owner
        self.parent_indices = parent_indices
        self.table = table
        strides = [1] * len(parent_indices)
        self._strides = strides  # filled in by build_network once domain sizes are known
        self._normal_cache: dict[float, np.ndarray] = {}

    @property
    def n_rows(self) -> int:
        return self.table.shape[0]

    def row_index(self, parent_values: Sequence[int]) -> int:
        idx = 0
        for v, s in zip(parent_values, self._strides):
            idx += v * s
        return idx

    def row(self, parent_values: Sequence[int]) -> np.ndarray:
        return self.table[self.row_index(parent_values)]

    def decode_row(self, row_index: int) -> tuple[int, ...]:
        """Parent-value tuple addressed by a row index (inverse of row_index)."""
        out = []
        for s in self._strides:
            out.append(row_index // s)
            row_index %= s
        return tuple(out)

    def max_entry(self) -> float:
        return float(self.table.max())

    def max_fault_entry(self, epsilon: float) -> float:
        """Largest entry that does not certify a normal value (< 1 - epsilon)."""
        below = self.table[self.table < 1.0 - epsilon]
        return float(below.max()) if below.size else 0.0

    def normal_values(self, epsilon: float) -> np.ndarray:
        """Per-row index of the value with probability >= 1 - epsilon, or -1."""
        cached = self._normal_cache.get(epsilon)
        if cached is None:
            best = self.table.argmax(axis=1)
            ok = self.table[np.arange(self.n_rows), best] >= 1.0 - epsilon
            cached = np.where(ok, best, -1).astype(np.int32)
            self._normal_cache[epsilon] = cached
        return cached


class Network:
    """Immutable container for variables and their tables."""

    def __init__(self, name: str, variables: tuple[Variable, ...], cpts: tuple[CPT, ...]):
        self.name = name
        self.variables = variables
        self.cpts = cpts
        self._by_name = {v.name: v.index for v in variables}

    @property
    def n(self) -> int:
        return len(self.variables)

    def index_of(self, name: str) -> int:
        try:
            return self._by_name[name]
        except KeyError:
            raise BadReference(f"no variable named {name!r}") from None

    def variable(self, ref: Union[int, str]) -> Variable:
        if isinstance(ref, str):
            return self.variables[self.index_of(ref)]
        return self.variables[ref]

    def domain_size(self, index: int) -> int:
        return len(self.variables[index].domain)

    def parents(self, index: int) -> tuple[int, ...]:
        return self.cpts[index].parent_indices

    def __repr__(self):
        return f"Network({self.name!r}, {self.n} variables)"


@dataclass
class VariableSpec:
    name: str
    values: list[str]


@dataclass
class NetworkSpec:
    """Raw, order-preserving description of a network before validation."""

    name: str = "net"
    variables: list[VariableSpec] = field(default_factory=list)
    parents: dict[str, list[str]] = field(default_factory=dict)
    cpts: dict[str, list[list[float]]] = field(default_factory=dict)

    def add(self, name: str, values: Iterable[str], parents: Iterable[str] = (), rows=None):
        self.variables.append(VariableSpec(name, list(values)))
        parents = list(parents)
        if parents:
            self.parents[name] = parents
        if rows is not None:
            self.cpts[name] = [list(r) for r in rows]
        return self


def build_network(spec: NetworkSpec, *, renormalize: bool = False) -> Network:
    """Validate a spec and produce a topologically ordered Network.

    Declaration order is preserved among variables whose dependencies allow
    it (stable topological sort). Raises CyclicNetwork, IncompleteCPT,
    UnnormalizedRow, or BadReference.
    """
    names = [v.name for v in spec.variables]
    if len(set(names)) != len(names):
        dup = sorted({n for n in names if names.count(n) > 1})
        raise BadReference(f"duplicate variable name(s): {', '.join(dup)}")
    decl = {n: i for i, n in enumerate(names)}
    domains = {}
    for v in spec.variables:
        if not v.values:
            raise BadReference(f"variable {v.name!r} has an empty domain")
        if len(set(v.values)) != len(v.values):
            raise BadReference(f"variable {v.name!r} repeats a domain value")
        domains[v.name] = tuple(v.values)

    for child, ps in spec.parents.items():
        if child not in decl:
            raise BadReference(f"parents declared for unknown variable {child!r}")
        for p in ps:
            if p not in decl:
                raise BadReference(f"variable {child!r} references unknown parent {p!r}")
        if len(set(ps)) != len(ps):
            raise BadReference(f"variable {child!r} lists a parent twice")
    for name in spec.cpts:
        if name not in decl:
            raise BadReference(f"table declared for unknown variable {name!r}")

    # stable Kahn: among ready variables, earliest declaration goes first
    children: dict[str, list[str]] = {n: [] for n in names}
    missing = {n: len(spec.parents.get(n, ())) for n in names}
    for child, ps in spec.parents.items():
        for p in ps:
            children[p].append(child)
    ready = [decl[n] for n in names if missing[n] == 0]
    heapq.heapify(ready)
    order: list[str] = []
    while ready:
        n = names[heapq.heappop(ready)]
        order.append(n)
        for c in children[n]:
            missing[c] -= 1
            if missing[c] == 0:
                heapq.heappush(ready, decl[c])
    if len(order) != len(names):
        stuck = sorted(n for n in names if missing[n] > 0)
        raise CyclicNetwork(f"cycle through: {', '.join(stuck)}")

    new_index = {n: i for i, n in enumerate(order)}
    variables = tuple(Variable(i, n, domains[n]) for i, n in enumerate(order))
    cpts = []
    for i, n in enumerate(order):
        parent_names = spec.parents.get(n, [])
        parent_indices = tuple(new_index[p] for p in parent_names)
        m = len(domains[n])
        expected_rows = 1
        for p in parent_names:
            expected_rows *= len(domains[p])
        rows = spec.cpts.get(n)
        if rows is None:
            raise IncompleteCPT(f"variable {n!r} has no table")
        if len(rows) != expected_rows:
            raise IncompleteCPT(
                f"variable {n!r}: expected {expected_rows} row(s), got {len(rows)}"
            )
        for j, r in enumerate(rows):
            if len(r) != m:
                raise IncompleteCPT(
                    f"variable {n!r} row {j}: expected {m} entries, got {len(r)}"
                )
        table = np.asarray(rows, dtype=np.float64)
        if np.any(table < 0.0) or np.any(table > 1.0 + ROW_SUM_TOLERANCE):
            raise UnnormalizedRow(f"variable {n!r}: entry outside [0, 1]")
        sums = table.sum(axis=1)
        bad = np.abs(sums - 1.0) > ROW_SUM_TOLERANCE
        if np.any(bad):
            if renormalize:
                if np.any(sums <= 0.0):
                    raise UnnormalizedRow(f"variable {n!r}: row sums to 0")
                table = table / sums[:, None]
            else:
                j = int(np.argmax(bad))
                raise UnnormalizedRow(
                    f"variable {n!r} row {j}: sums to {sums[j]:.12g}"
                )
        cpt = CPT(i, parent_indices, table)
        # mixed-radix strides, last parent fastest
        strides = [1] * len(parent_names)
        acc = 1
        for k in range(len(parent_names) - 1, -1, -1):
            strides[k] = acc
            acc *= len(domains[parent_names[k]])
        cpt._strides = strides
        cpts.append(cpt)
    return Network(spec.name, variables, tuple(cpts))


def normal_value(
    net: Network,
    var: Union[int, str],
    parent_values: Union[Mapping[str, str], Sequence[str]],
    epsilon: float = DEFAULT_EPSILON_NORMAL,
) -> str | None:
    """Value a variable is expected to take given its parents, if any.

    A value qualifies when its conditional probability is at least
    1 - epsilon; returns its name, or None when no value clears the bar.
    Parent values may be given as a mapping {parent name: value name} or as a
    sequence aligned with the declared parent order.
    """
    vi = net.index_of(var) if isinstance(var, str) else var
    cpt = net.cpts[vi]
    if isinstance(parent_values, Mapping):
        vals = []
        for p in cpt.parent_indices:
            pv = net.variables[p]
            if pv.name not in parent_values:
                raise BadReference(f"missing value for parent {pv.name!r}")
            vals.append(pv.value_index(parent_values[pv.name]))
    else:
        if len(parent_values) != len(cpt.parent_indices):
            raise BadReference(
                f"expected {len(cpt.parent_indices)} parent value(s), got {len(parent_values)}"
            )
        vals = [
            net.variables[p].value_index(v)
            for p, v in zip(cpt.parent_indices, parent_values)
        ]
    row = cpt.row(vals)
    best = int(row.argmax())
    if row[best] >= 1.0 - epsilon:
        return net.variables[vi].domain[best]
    return None


class Observation:
    """Assignment of values to a subset of variables."""

    __slots__ = ("assignments",)

    def __init__(self, assignments: Iterable[tuple[int, int]]):
        items = sorted(assignments)
        seen = set()
        for var, _ in items:
            if var in seen:
                raise BadReference(f"variable index {var} observed twice")
            seen.add(var)
        self.assignments: tuple[tuple[int, int], ...] = tuple(items)

    @classmethod
    def from_names(cls, net: Network, mapping: Mapping[str, str]) -> "Observation":
        out = []
        for name, value in mapping.items():
            v = net.variable(name)
            out.append((v.index, v.value_index(value)))
        return cls(out)

    def as_dict(self) -> dict[int, int]:
        return dict(self.assignments)

    def vector(self, n: int) -> np.ndarray:
        vec = np.full(n, -1, dtype=np.int32)
        for var, val in self.assignments:
            if var >= n:
                raise BadReference(f"observed variable index {var} out of range")
            vec[var] = val
        return vec

    def names(self, net: Network) -> dict[str, str]:
        return {
            net.variables[var].name: net.variables[var].domain[val]
            for var, val in self.assignments
        }

    def __len__(self):
        return len(self.assignments)

    def __eq__(self, other):
        return isinstance(other, Observation) and self.assignments == other.assignments

    def __repr__(self):
        return f"Observation({list(self.assignments)!r})"


EMPTY_OBSERVATION = Observation(())


class QueryFormula:
    """Three-valued boolean formula over variable-value tests.

    evaluate() returns True or False only when every completion of the given
    prefix agrees; otherwise None.
    """

    def evaluate(self, values: Sequence[int]) -> bool | None:
        raise NotImplementedError

    def atom_vars(self) -> set[int]:
        raise NotImplementedError

    def __and__(self, other: "QueryFormula") -> "QueryFormula":
        return And((self, other))

    def __or__(self, other: "QueryFormula") -> "QueryFormula":
        return Or((self, other))

    def __invert__(self) -> "QueryFormula":
        return Not(self)


@dataclass(frozen=True)
class Atom(QueryFormula):
    var: int
    value: int

    def evaluate(self, values):
        if self.var >= len(values):
            return None
        return values[self.var] == self.value

    def atom_vars(self):
        return {self.var}


@dataclass(frozen=True)
class Not(QueryFormula):
    operand: QueryFormula

    def evaluate(self, values):
        v = self.operand.evaluate(values)
        return None if v is None else not v

    def atom_vars(self):
        return self.operand.atom_vars()


@dataclass(frozen=True)
class And(QueryFormula):
    operands: tuple[QueryFormula, ...]

    def evaluate(self, values):
        saw_unknown = False
        for op in self.operands:
            v = op.evaluate(values)
            if v is False:
                return False
            if v is None:
                saw_unknown = True
        return None if saw_unknown else True

    def atom_vars(self):
        out = set()
        for op in self.operands:
            out |= op.atom_vars()
        return out


@dataclass(frozen=True)
class Or(QueryFormula):
    operands: tuple[QueryFormula, ...]

    def evaluate(self, values):
        saw_unknown = False
        for op in self.operands:
            v = op.evaluate(values)
            if v is True:
                return True
            if v is None:
                saw_unknown = True
        return None if saw_unknown else False

    def atom_vars(self):
        out = set()
        for op in self.operands:
            out |= op.atom_vars()
        return out


def atom(net: Network, name: str, value: str) -> Atom:
    v = net.variable(name)
    return Atom(v.index, v.value_index(value))


# postfix opcodes for the compiled evaluator
OP_ATOM, OP_NOT, OP_AND, OP_OR = 0, 1, 2, 3


def compile_formula(formula: QueryFormula | None) -> np.ndarray:
    """Flatten a formula into postfix (op, a, b) triples for the engines."""
    prog: list[tuple[int, int, int]] = []

    def emit(f: QueryFormula):
        if isinstance(f, Atom):
            prog.append((OP_ATOM, f.var, f.value))
        elif isinstance(f, Not):
            emit(f.operand)
            prog.append((OP_NOT, 0, 0))
        elif isinstance(f, (And, Or)):
            if not f.operands:
                raise BadReference("empty connective")
            emit(f.operands[0])
            code = OP_AND if isinstance(f, And) else OP_OR
            for op in f.operands[1:]:
                emit(op)
                prog.append((code, 0, 0))
        else:
            raise BadReference(f"unknown formula node {type(f).__name__}")

    if formula is not None:
        emit(formula)
    return np.asarray(prog, dtype=np.int32).reshape(-1, 3)


def validate_formula(net: Network, formula: QueryFormula) -> None:
    def walk(f: QueryFormula):
        if isinstance(f, Atom):
            if not (0 <= f.var < net.n):
                raise BadReference(f"formula tests unknown variable index {f.var}")
            if not (0 <= f.value < net.domain_size(f.var)):
                raise BadReference(
                    f"formula tests value index {f.value} outside the domain of "
                    f"{net.variables[f.var].name!r}"
                )
        elif isinstance(f, Not):
            walk(f.operand)
        elif isinstance(f, (And, Or)):
            for op in f.operands:
                walk(op)
        else:
            raise BadReference(f"unknown formula node {type(f).__name__}")
    walk(formula)


@dataclass(frozen=True)
class PruneResult:
    network: Network
    old_to_new: dict[int, int]
    new_to_old: tuple[int, ...]
    query: QueryFormula | None
    observation: Observation


def _remap_formula(f: QueryFormula, old_to_new: dict[int, int]) -> QueryFormula:
    if isinstance(f, Atom):
        return Atom(old_to_new[f.var], f.value)
    if isinstance(f, Not):
        return Not(_remap_formula(f.operand, old_to_new))
    if isinstance(f, And):
        return And(tuple(_remap_formula(op, old_to_new) for op in f.operands))
    if isinstance(f, Or):
        return Or(tuple(_remap_formula(op, old_to_new) for op in f.operands))
    raise BadReference(f"unknown formula node {type(f).__name__}")


def prune_for_query(
    net: Network,
    query: QueryFormula | None,
    obs: Observation | None = None,
) -> PruneResult:
    """Drop variables that cannot affect the posterior of the query.

    Removes (to a fixpoint) variables that are not ancestors of the query or
    observation, and variables separated from the query by the observation in
    the moralized ancestor graph. Observed variables are always retained; one
    whose parents are all removed keeps a point-mass table on its observed
    value, which leaves the posterior unchanged.
    """
    obs = obs if obs is not None else EMPTY_OBSERVATION
    if query is not None:
        validate_formula(net, query)
    obs_map = obs.as_dict()
    q_vars = sorted(query.atom_vars()) if query is not None else []
    if not q_vars and not obs_map:
        ident = {i: i for i in range(net.n)}
        return PruneResult(net, ident, tuple(range(net.n)), query, obs)

    parents = {i: set(net.parents(i)) for i in range(net.n)}
    keep = set(range(net.n))

    def ancestors_of(seeds: Iterable[int]) -> set[int]:
        out = set()
        stack = [s for s in seeds if s in keep]
        while stack:
            v = stack.pop()
            if v in out:
                continue
            out.add(v)
            stack.extend(p for p in parents[v] if p in keep and p not in out)
        return out

    while True:
        anc = ancestors_of(set(q_vars) | set(obs_map))
        if q_vars:
            # moral graph on the ancestor set, observed variables blocked
            adj: dict[int, set[int]] = {v: set() for v in anc}
            for v in anc:
                ps = [p for p in parents[v] if p in anc]
                for p in ps:
                    adj[v].add(p)
                    adj[p].add(v)
                for i in range(len(ps)):
                    for j in range(i + 1, len(ps)):
                        adj[ps[i]].add(ps[j])
                        adj[ps[j]].add(ps[i])
            reached = set()
            stack = [v for v in q_vars if v in anc and v not in obs_map]
            reached.update(stack)
            while stack:
                v = stack.pop()
                for w in adj[v]:
                    if w in obs_map or w in reached:
                        continue
                    reached.add(w)
                    stack.append(w)
            new_keep = (reached & anc) | (set(obs_map) & anc) | (set(q_vars) & anc)
        else:
            new_keep = anc
        if new_keep == keep:
            break
        keep = new_keep
        parents = {v: parents[v] & keep for v in keep}

    # parent closure: a kept variable keeps its whole parent row, unless it
    # is observed and every parent can go (its row then contributes a
    # constant factor and a point-mass replacement is sound). The separation
    # pass above can otherwise strand an observed variable with only part of
    # its parents, which has no valid table.
    changed = True
    while changed:
        changed = False
        for v in sorted(keep):
            ps = set(net.parents(v))
            if ps <= keep:
                continue
            if v in obs_map and not (ps & keep):
                continue
            keep |= ps
            changed = True

    new_to_old = tuple(sorted(keep))
    old_to_new = {old: new for new, old in enumerate(new_to_old)}
    variables = tuple(
        Variable(new, net.variables[old].name, net.variables[old].domain)
        for new, old in enumerate(new_to_old)
    )
    cpts = []
    for new, old in enumerate(new_to_old):
        cpt = net.cpts[old]
        kept_parents = [p for p in cpt.parent_indices if p in keep]
        if len(kept_parents) == len(cpt.parent_indices):
            nc = CPT(new, tuple(old_to_new[p] for p in cpt.parent_indices), cpt.table)
            nc._strides = list(cpt._strides)
        else:
            # only observed variables can legally lose parents, and then all of them
            if old not in obs_map or kept_parents:
                raise AssertionError(
                    f"pruning broke the parent set of {net.variables[old].name!r}"
                )
            m = len(net.variables[old].domain)
            point = np.zeros((1, m), dtype=np.float64)
            point[0, obs_map[old]] = 1.0
            nc = CPT(new, (), point)
            nc._strides = []
        cpts.append(nc)
    pruned = Network(net.name, variables, tuple(cpts))
    new_query = _remap_formula(query, old_to_new) if query is not None else None
    new_obs = Observation(
        (old_to_new[var], val) for var, val in obs.assignments if var in keep
    )
    return PruneResult(pruned, old_to_new, new_to_old, new_query, new_obs)
