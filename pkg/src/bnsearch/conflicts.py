"""Conflict discovery and the admissible completion heuristic.

The heuristic bounds the mass of any completion of a depth-j prefix by the
product of per-variable maximum table entries over the unassigned suffix. A
conflict (a set of variables that cannot all take their expected values given
the observation) tightens that product: within the conflict's variables the
product cannot beat the conflict's own mass bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .errors import BadReference, NotAFailure
from .model import DEFAULT_EPSILON_NORMAL, Network, Observation
from .worlds import PartialDescription

_FAIL = object()


@dataclass(frozen=True)
class Conflict:
    """Variables that cannot all take expected values under the source observation."""

    vars: frozenset[int]
    max_prob_log: float
    source_obs: tuple[tuple[int, int], ...] = ()

    @property
    def min_var(self) -> int:
        return min(self.vars)


class HeuristicTable:
    """Suffix bounds h(j) on the mass of any completion from depth j.

    suffix_max_log[j] is the plain product bound (max entry of every table
    from variable j on); h_log[j] folds in the registered conflicts. Both are
    log-space. The table is mutated in place by register_conflict so engines
    holding views of h_log observe updates; `version` increments on every
    effective registration.
    """

    def __init__(self, net: Network, epsilon: float = DEFAULT_EPSILON_NORMAL):
        self.net = net
        self.epsilon = epsilon
        n = net.n
        self.max_entry_log = np.log(
            np.array([cpt.max_entry() for cpt in net.cpts], dtype=np.float64)
        )
        suffix = np.zeros(n + 1, dtype=np.float64)
        for j in range(n - 1, -1, -1):
            suffix[j] = suffix[j + 1] + self.max_entry_log[j]
        self.suffix_max_log = suffix
        self.h_log = suffix.copy()
        self.conflicts: list[Conflict] = []
        self.covered = np.zeros(n, dtype=bool)
        self.version_buf = np.zeros(1, dtype=np.int64)
        self._sets: set[frozenset[int]] = set()

    @property
    def version(self) -> int:
        return int(self.version_buf[0])

    def h(self, depth: int) -> float:
        """Log-space bound for completions of a depth-`depth` prefix."""
        return float(self.h_log[depth])

    def _ratio(self, c: Conflict) -> float:
        plain = sum(self.max_entry_log[v] for v in c.vars)
        return c.max_prob_log - plain

    def _recompute(self):
        order = sorted(
            range(len(self.conflicts)),
            key=lambda i: (self._ratio(self.conflicts[i]), i),
        )
        h = self.suffix_max_log.copy()
        n = self.net.n
        for j in range(n + 1):
            used: set[int] = set()
            for i in order:
                c = self.conflicts[i]
                if c.min_var >= j and not (c.vars & used):
                    h[j] += self._ratio(c)
                    used |= c.vars
        self.h_log[:] = h


def init_heuristic(net: Network, epsilon: float = DEFAULT_EPSILON_NORMAL) -> HeuristicTable:
    return HeuristicTable(net, epsilon)


def conflict_max_prob(
    net: Network, vars: frozenset[int] | Sequence[int], epsilon: float = DEFAULT_EPSILON_NORMAL
) -> float:
    """Log bound on the joint mass contributed by a conflict's variables.

    At least one of them must take a non-expected value, so the product over
    the set is at most max over X of maxFaultEntry(X) * prod of the others'
    max entries.
    """
    vs = sorted(set(int(v) for v in vars))
    if not vs:
        raise BadReference("a conflict needs at least one variable")
    for v in vs:
        if not (0 <= v < net.n):
            raise BadReference(f"conflict variable index {v} out of range")
    total_max = sum(math.log(net.cpts[v].max_entry()) for v in vs)
    best = -math.inf
    for v in vs:
        fault = net.cpts[v].max_fault_entry(epsilon)
        if fault <= 0.0:
            continue
        cand = total_max - math.log(net.cpts[v].max_entry()) + math.log(fault)
        best = max(best, cand)
    return best


def register_conflict(table: HeuristicTable, conflict: Conflict) -> HeuristicTable:
    """Fold a conflict into the heuristic; duplicates by variable set are ignored."""
    if conflict.vars in table._sets:
        return table
    table._sets.add(conflict.vars)
    table.conflicts.append(conflict)
    for v in conflict.vars:
        table.covered[v] = True
    table._recompute()
    table.version_buf[0] += 1
    return table


def extract_counter(
    net: Network,
    var: Union[int, str],
    value: Union[int, str],
    delta: Union[PartialDescription, Sequence[int]],
    epsilon: float = DEFAULT_EPSILON_NORMAL,
) -> frozenset[int] | None:
    """Variables explaining why `delta` falsifies the expectation var=value.

    Recursively follows, for every table row that makes the expected value
    near-certain, the first parent assignment (in declared parent order) that
    `delta` falsifies. Returns the union as a counter set, or None when the
    construction fails (some near-certain row is fully satisfied by `delta`,
    i.e. the prefix already contains the responsible fault). Raises
    NotAFailure when `delta` does not actually falsify the expectation.
    """
    if isinstance(delta, PartialDescription):
        vals: Sequence[int] = delta.values
    else:
        vals = [int(v) for v in delta]
    depth = len(vals)
    vi = net.index_of(var) if isinstance(var, str) else int(var)
    if not (0 <= vi < net.n):
        raise BadReference(f"variable index {vi} out of range")
    v_obj = net.variables[vi]
    o = v_obj.value_index(value) if isinstance(value, str) else int(value)
    if not (0 <= o < len(v_obj.domain)):
        raise BadReference(f"value index {o} outside the domain of {v_obj.name!r}")
    if vi >= depth:
        raise NotAFailure(f"{v_obj.name!r} is not assigned by the description")
    if vals[vi] == o:
        raise NotAFailure(f"description already satisfies {v_obj.name}={v_obj.domain[o]}")

    threshold = 1.0 - epsilon

    def children_of(i: int, val: int):
        """Falsified conjuncts (one per near-certain row), or _FAIL."""
        cpt = net.cpts[i]
        rows = np.nonzero(cpt.table[:, val] >= threshold)[0]
        out: list[tuple[int, int]] = []
        seen: set[tuple[int, int]] = set()
        for r in rows:
            tup = cpt.decode_row(int(r))
            pick = None
            for pvar, pval in zip(cpt.parent_indices, tup):
                if vals[pvar] != pval:
                    pick = (pvar, pval)
                    break
            if pick is None:
                return _FAIL
            if pick not in seen:
                seen.add(pick)
                out.append(pick)
        return out

    # explicit stack: parents have strictly smaller indices, so this is a DAG
    # walk; recursion depth could otherwise reach network depth
    memo: dict[tuple[int, int], object] = {}
    root = (vi, o)
    stack: list[list] = [[root, None, 0, None]]
    while stack:
        frame = stack[-1]
        key = frame[0]
        if frame[1] is None:
            if key in memo:
                stack.pop()
                continue
            kids = children_of(*key)
            if kids is _FAIL:
                memo[key] = _FAIL
                stack.pop()
                continue
            frame[1] = kids
            frame[3] = {key[0]}
            continue
        kids = frame[1]
        i = frame[2]
        if i == len(kids):
            memo[key] = frozenset(frame[3])
            stack.pop()
            continue
        child = kids[i]
        if child in memo:
            got = memo[child]
            if got is _FAIL:
                memo[key] = _FAIL
                stack.pop()
                continue
            frame[3] |= got
            frame[2] += 1
            continue
        stack.append([child, None, 0, None])
    result = memo[root]
    return None if result is _FAIL else result  # type: ignore[return-value]


class ConflictDirector:
    """Registers conflicts from the observation failures a search runs into.

    Engines call failed() when they prune a prefix that contradicts an
    observed variable and every fault in the prefix already lies inside a
    registered conflict. Extraction outcomes are cached per (variable,
    expected value, fault pattern) so repeated identical failures cost one
    lookup.
    """

    def __init__(self, net: Network, table: HeuristicTable, obs: Observation):
        self.net = net
        self.table = table
        self.obs = obs
        self._obs_map = obs.as_dict()
        self._seen: set[tuple] = set()
        self.registered = 0

    def failed(self, values: Sequence[int], var: int, faults: Sequence[int]) -> bool:
        """Handle one gated failure; returns True when a new conflict landed."""
        o = self._obs_map.get(int(var))
        if o is None:
            return False
        key = (int(var), o, tuple(sorted(int(f) for f in faults)))
        if key in self._seen:
            return False
        self._seen.add(key)
        counter = extract_counter(self.net, var, o, values, self.table.epsilon)
        if counter is None:
            return False
        before = len(self.table.conflicts)
        conflict = Conflict(
            vars=counter,
            max_prob_log=conflict_max_prob(self.net, counter, self.table.epsilon),
            source_obs=self.obs.assignments,
        )
        register_conflict(self.table, conflict)
        if len(self.table.conflicts) > before:
            self.registered += 1
            return True
        return False
