"""Queue search over partial descriptions, most probable first.

Two strategies: best-first (pop the largest bound anywhere) and iterative
deepening (depth-first sweeps under a falling bound threshold). Both account
for the unexplored queue mass exactly, which is what the anytime bounds in
`estimate` are built from.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

from . import engine as _engine
from ._pyengine import (
    EXPANDED,
    PRUNED_DECIDED,
    PRUNED_INCONSISTENT,
    QUEUE_EMPTY,
    WORLD,
    BestFirstRun,
    DeepeningRun,
    RunConfig,
    RunInputs,
    RunResult,
    WorldRecord,
)
from ._tables import EngineTables, prepared_query
from .conflicts import ConflictDirector, HeuristicTable, init_heuristic
from .errors import BadReference
from .model import (
    DEFAULT_EPSILON_NORMAL,
    EMPTY_OBSERVATION,
    Network,
    Observation,
    QueryFormula,
    validate_formula,
)

SearchResult = RunResult


class Strategy(str, Enum):
    BEST_FIRST = "bestfirst"
    ITERATIVE_DEEPENING = "iddfs"


@dataclass(frozen=True)
class StoppingRule:
    """First condition reached ends the run; None means unbounded."""

    max_error: Optional[float] = None
    max_worlds: Optional[int] = None
    max_expansions: Optional[int] = None
    wall_clock: Optional[float] = None


@dataclass(frozen=True)
class SearchParams:
    strategy: Strategy = Strategy.BEST_FIRST
    conflicts_enabled: bool = True
    epsilon_normal: float = DEFAULT_EPSILON_NORMAL
    stop: StoppingRule = field(default_factory=StoppingRule)
    # None: start at the bound of the empty description
    iddfs_log_threshold: Optional[float] = None
    iddfs_multiplier: float = 1e-2
    snapshot_every: int = 1
    keep_worlds: Optional[int] = None
    engine: str = "auto"
    debug_no_revisit: bool = False
    debug_mass_drift: bool = False


def _build_inputs(
    net: Network,
    obs: Observation | None,
    query: QueryFormula | None,
    params: SearchParams,
    heuristic: HeuristicTable | None,
):
    obs = obs if obs is not None else EMPTY_OBSERVATION
    if query is not None:
        validate_formula(net, query)
    if heuristic is None:
        heuristic = init_heuristic(net, params.epsilon_normal)
    elif heuristic.net is not net:
        raise BadReference("heuristic table was built for a different network")
    tables = EngineTables(net, params.epsilon_normal)
    qprog, min_atom = prepared_query(net, query)
    director = (
        ConflictDirector(net, heuristic, obs)
        if params.conflicts_enabled and len(obs) > 0
        else None
    )
    return RunInputs(
        tables=tables,
        obs_vec=obs.vector(net.n),
        query=query,
        qprog=qprog,
        min_atom_var=min_atom,
        heuristic=heuristic,
        director=director,
    )


def _config(params: SearchParams, certify_worlds: bool = False) -> RunConfig:
    return RunConfig(
        conflicts_enabled=params.conflicts_enabled,
        use_adjusted_for_stop=params.conflicts_enabled,
        max_error=params.stop.max_error,
        max_worlds=params.stop.max_worlds,
        certify_worlds=certify_worlds,
        max_expansions=params.stop.max_expansions,
        wall_clock=params.stop.wall_clock,
        snapshot_every=params.snapshot_every,
        keep_worlds=params.keep_worlds,
        iddfs_log_threshold=params.iddfs_log_threshold,
        iddfs_multiplier=params.iddfs_multiplier,
        debug_no_revisit=params.debug_no_revisit,
        debug_mass_drift=params.debug_mass_drift,
    )


def new_search(
    net: Network,
    obs: Observation | None = None,
    query: QueryFormula | None = None,
    params: SearchParams | None = None,
    heuristic: HeuristicTable | None = None,
    certify_worlds: bool = False,
):
    """Step-driven search state on the pure engine (step() yields reports)."""
    params = params or SearchParams()
    inputs = _build_inputs(net, obs, query, params, heuristic)
    cfg = _config(params, certify_worlds)
    cls = (
        DeepeningRun
        if params.strategy == Strategy.ITERATIVE_DEEPENING
        else BestFirstRun
    )
    return cls(inputs, cfg)


def step(state) -> str:
    """Advance a step-driven search by one transition and report it."""
    rep = state.step()
    return rep if rep is not None else QUEUE_EMPTY


def _run(
    net: Network,
    obs: Observation | None,
    query: QueryFormula | None,
    params: SearchParams,
    heuristic: HeuristicTable | None,
    strategy: Strategy,
    certify_worlds: bool = False,
) -> SearchResult:
    params = replace(params, strategy=strategy)
    chosen = _engine.resolve(params.engine)
    inputs = _build_inputs(net, obs, query, params, heuristic)
    cfg = _config(params, certify_worlds)
    if chosen == "compiled":
        result = _engine.compiled.run(inputs, cfg, strategy.value)
        result.heuristic = inputs.heuristic
        return result
    cls = DeepeningRun if strategy == Strategy.ITERATIVE_DEEPENING else BestFirstRun
    return cls(inputs, cfg).run()


def best_first(
    net: Network,
    obs: Observation | None = None,
    query: QueryFormula | None = None,
    params: SearchParams | None = None,
    heuristic: HeuristicTable | None = None,
) -> SearchResult:
    """Run best-first to a stopping rule or queue exhaustion."""
    params = params or SearchParams()
    return _run(net, obs, query, params, heuristic, Strategy.BEST_FIRST)


def iterative_deepening(
    net: Network,
    obs: Observation | None = None,
    query: QueryFormula | None = None,
    params: SearchParams | None = None,
    heuristic: HeuristicTable | None = None,
) -> SearchResult:
    """Run threshold-deepening sweeps to a stopping rule or exhaustion."""
    params = params or SearchParams()
    return _run(net, obs, query, params, heuristic, Strategy.ITERATIVE_DEEPENING)


def top_m_search(
    net: Network,
    obs: Observation | None = None,
    m: int = 1,
    params: SearchParams | None = None,
) -> SearchResult:
    """Full run result for a top-m hunt (worlds retained, stop certified).

    Under best-first the m-th completed world certifies the answer; under
    iterative deepening the run continues to the end of the round in which
    it completed, which certifies that no unseen world can outrank the found
    ones.
    """
    if m <= 0:
        raise BadReference("m must be positive")
    params = params or SearchParams()
    stop = replace(params.stop, max_worlds=m)
    params = replace(params, stop=stop, keep_worlds=None)
    certify = params.strategy == Strategy.ITERATIVE_DEEPENING
    return _run(net, obs, None, params, None, params.strategy, certify)


def top_m_worlds(
    net: Network,
    obs: Observation | None = None,
    m: int = 1,
    params: SearchParams | None = None,
) -> list[WorldRecord]:
    """The m most probable worlds consistent with the observation.

    Ties broken by completion order.
    """
    result = top_m_search(net, obs, m, params)
    worlds = sorted(result.worlds, key=lambda w: (-w.g, w.generation))
    return worlds[:m]
