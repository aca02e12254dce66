"""Partial descriptions of worlds, their probabilities, and exact enumeration.

A partial description assigns the first j variables of a network; its mass g
is the product of the matching table entries, which equals the total
probability of every world extending it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import BadReference, DepthExceeded, TooLarge, ZeroEvidence
from .model import Network, Observation, QueryFormula

DEFAULT_ENUMERATION_CAP = 2 ** 24


@dataclass(frozen=True)
class PartialDescription:
    """Prefix assignment (value indices for variables 0..depth-1) with log mass."""

    values: tuple[int, ...] = ()
    log_g: float = 0.0

    @property
    def depth(self) -> int:
        return len(self.values)

    @property
    def g(self) -> float:
        return math.exp(self.log_g)

    def value_names(self, net: Network) -> tuple[str, ...]:
        return tuple(
            net.variables[i].domain[v] for i, v in enumerate(self.values)
        )


EMPTY = PartialDescription()


class World(PartialDescription):
    """A partial description that assigns every variable."""


def as_world(net: Network, pd: PartialDescription) -> World:
    if pd.depth != net.n:
        raise DepthExceeded(
            f"description assigns {pd.depth} of {net.n} variables"
        )
    return World(pd.values, pd.log_g)


def extend(net: Network, pd: PartialDescription, value: Union[str, int]) -> PartialDescription:
    """Assign the next unassigned variable; mass shrinks by its table entry.

    Accepts a value name or index. Extending with a zero-probability value
    yields log_g = -inf; callers running a search drop such children instead
    of queueing them.
    """
    j = pd.depth
    if j >= net.n:
        raise DepthExceeded(f"all {net.n} variables already assigned")
    var = net.variables[j]
    vi = var.value_index(value) if isinstance(value, str) else value
    if not (0 <= vi < len(var.domain)):
        raise BadReference(
            f"value index {vi} outside the domain of {var.name!r}"
        )
    cpt = net.cpts[j]
    parent_vals = [pd.values[p] for p in cpt.parent_indices]
    p = float(cpt.row(parent_vals)[vi])
    log_p = math.log(p) if p > 0.0 else -math.inf
    return PartialDescription(pd.values + (vi,), pd.log_g + log_p)


def evaluate(formula: QueryFormula, pd: PartialDescription) -> bool | None:
    """Truth of the formula over every completion of the prefix, else None."""
    return formula.evaluate(pd.values)


class _NeumaierSum:
    """Compensated accumulator; cheap and accurate enough for world masses."""

    __slots__ = ("s", "c")

    def __init__(self):
        self.s = 0.0
        self.c = 0.0

    def add(self, x: float):
        t = self.s + x
        if abs(self.s) >= abs(x):
            self.c += (self.s - t) + x
        else:
            self.c += (x - t) + self.s
        self.s = t

    @property
    def value(self) -> float:
        return self.s + self.c


@dataclass(frozen=True)
class ExactResult:
    p_query: float | None
    p_obs: float
    p_query_and_obs: float | None
    posterior: float | None
    worlds_enumerated: int
    total_mass: float


def _static_world_bound(net: Network) -> int:
    """Upper bound on positive-probability worlds: per-variable max row support."""
    bound = 1
    for cpt in net.cpts:
        support = int((cpt.table > 0.0).sum(axis=1).max())
        bound *= max(support, 1)
    return bound


def enumerate_exact(
    net: Network,
    query: QueryFormula | None = None,
    obs: Observation | None = None,
    *,
    cap: int = DEFAULT_ENUMERATION_CAP,
) -> ExactResult:
    """Walk every positive-probability world and sum masses directly.

    Independent of the queue search: a plain depth-first sweep in value
    order with compensated sums. Raises TooLarge when the positive-support
    bound exceeds the cap, ZeroEvidence when the observation has mass 0.
    """
    if _static_world_bound(net) > cap:
        raise TooLarge(
            f"more than {cap} positive-probability worlds; raise the cap to force this"
        )
    n = net.n
    obs_vec = obs.vector(n) if obs is not None else np.full(n, -1, dtype=np.int32)
    has_obs = obs is not None and len(obs) > 0

    total = _NeumaierSum()
    s_obs = _NeumaierSum()
    s_q = _NeumaierSum()
    s_q_obs = _NeumaierSum()
    count = 0

    if n == 0:
        raise BadReference("empty network")

    # per-variable positive-support lists for the current row, maintained as
    # an explicit DFS over levels
    values = [0] * n
    gstack = [1.0] * (n + 1)
    options: list[list[tuple[int, float]]] = [[] for _ in range(n)]
    pos = [0] * n

    def load(level: int):
        cpt = net.cpts[level]
        row = cpt.row([values[p] for p in cpt.parent_indices])
        options[level] = [(i, float(p)) for i, p in enumerate(row) if p > 0.0]
        pos[level] = 0

    level = 0
    load(0)
    while level >= 0:
        if pos[level] >= len(options[level]):
            level -= 1
            continue
        vi, p = options[level][pos[level]]
        pos[level] += 1
        values[level] = vi
        gstack[level + 1] = gstack[level] * p
        if level + 1 == n:
            count += 1
            if count > cap:
                raise TooLarge(f"enumeration exceeded {cap} worlds")
            g = gstack[n]
            total.add(g)
            matches = True
            if has_obs:
                for var, val in obs.assignments:
                    if values[var] != val:
                        matches = False
                        break
            if matches:
                s_obs.add(g)
            if query is not None:
                truth = query.evaluate(values)
                if truth:
                    s_q.add(g)
                    if matches:
                        s_q_obs.add(g)
        else:
            level += 1
            load(level)

    p_obs = s_obs.value
    p_q = s_q.value if query is not None else None
    p_q_obs = s_q_obs.value if query is not None else None
    posterior = None
    if query is not None and has_obs:
        if p_obs <= 0.0:
            raise ZeroEvidence("observation has probability 0")
        posterior = p_q_obs / p_obs
    elif query is not None:
        posterior = p_q
    elif has_obs and p_obs <= 0.0:
        raise ZeroEvidence("observation has probability 0")
    return ExactResult(
        p_query=p_q,
        p_obs=p_obs,
        p_query_and_obs=p_q_obs,
        posterior=posterior,
        worlds_enumerated=count,
        total_mass=total.value,
    )
