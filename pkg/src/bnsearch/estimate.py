"""Anytime probability bounds from explored mass and remaining queue mass.

At any point the unexplored queue mass pQ brackets everything still unknown:
the target mass lies within [found, found + pQ], and posteriors within the
corresponding ratio interval. The half-width pQ / 2(pWobs + pQ) is the
guaranteed worst-case error of the reported midpoint and is independent of
which query the found mass is split against.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from enum import Enum
from typing import Iterator, Optional

import numpy as np

from ._pyengine import (
    SNAP_EXPANSIONS,
    SNAP_P_W_OBS,
    SNAP_P_WG_OBS,
    SNAP_PQ_ADJ,
    SNAP_PQ_NAIVE,
    SNAP_WALL_MS,
    SNAP_WORLDS,
)
from .errors import InvalidMass, ZeroEvidence
from .model import Network, Observation, QueryFormula, prune_for_query
from .search import SearchParams, SearchResult, Strategy, best_first, iterative_deepening


class MassMode(str, Enum):
    NAIVE = "naive"
    CONFLICT_ADJUSTED = "conflict-adjusted"


@dataclass(frozen=True)
class BoundsReport:
    """One anytime snapshot: masses, interval, and certified error."""

    p_w_g_obs: float
    p_w_obs: float
    p_q: float
    prior_lower: Optional[float]
    prior_upper: Optional[float]
    post_lower: float
    post_upper: float
    midpoint: float
    max_error: float
    worlds: int
    expansions: int
    timestamp: float


def _check_mass(name: str, value: float) -> float:
    if value < 0.0 or value != value:
        raise InvalidMass(f"{name} must be non-negative, got {value!r}")
    return float(value)


def prior_bounds(p_w_g: float, p_q: float) -> tuple[float, float]:
    """Bracket an unconditioned probability: found mass up to found + queue."""
    g = _check_mass("p_w_g", p_w_g)
    q = _check_mass("p_q", p_q)
    return g, min(1.0, g + q)


def posterior_bounds(
    p_w_g_obs: float, p_w_obs: float, p_q: float
) -> tuple[float, float, float, float]:
    """(lower, upper, midpoint, max_error) for a conditioned probability.

    The worst case puts all unexplored mass either on the query side or
    against it. The upper bound is clamped to 1 for reporting; max_error is
    the unclamped half-width pQ / 2(pWobs + pQ).
    """
    g = _check_mass("p_w_g_obs", p_w_g_obs)
    w = _check_mass("p_w_obs", p_w_obs)
    q = _check_mass("p_q", p_q)
    denom = w + q
    if denom <= 0.0:
        raise ZeroEvidence("no mass consistent with the observation")
    lower = g / denom
    upper_raw = (g + q) / denom
    max_error = q / (2.0 * denom)
    upper = min(1.0, upper_raw)
    midpoint = (lower + upper) / 2.0
    return lower, upper, midpoint, max_error


def queue_mass(source, mode: MassMode = MassMode.CONFLICT_ADJUSTED) -> float:
    """Unexplored mass of a run or live search state under the given pricing."""
    adjusted = mode == MassMode.CONFLICT_ADJUSTED
    if isinstance(source, SearchResult):
        return source.pq(adjusted)
    # live pure-engine state
    return source._pq_adj_val() if adjusted else source._pq_naive_val()


def report_from_sums(
    p_w_g_obs: float,
    p_w_obs: float,
    p_q: float,
    *,
    conditioned: bool,
    worlds: int = 0,
    expansions: int = 0,
    timestamp: Optional[float] = None,
) -> BoundsReport:
    lower, upper, midpoint, max_error = posterior_bounds(p_w_g_obs, p_w_obs, p_q)
    if conditioned:
        prior_lower = prior_upper = None
    else:
        prior_lower, prior_upper = prior_bounds(p_w_g_obs, p_q)
    return BoundsReport(
        p_w_g_obs=p_w_g_obs,
        p_w_obs=p_w_obs,
        p_q=p_q,
        prior_lower=prior_lower,
        prior_upper=prior_upper,
        post_lower=lower,
        post_upper=upper,
        midpoint=midpoint,
        max_error=max_error,
        worlds=worlds,
        expansions=expansions,
        timestamp=timestamp if timestamp is not None else time.monotonic(),
    )


@dataclass
class AnytimeResult:
    final: BoundsReport
    result: SearchResult
    mode: MassMode
    conditioned: bool
    network: Network
    kept_variables: tuple[int, ...]

    def reports(self) -> Iterator[BoundsReport]:
        """Materialize one BoundsReport per recorded snapshot row."""
        col = SNAP_PQ_ADJ if self.mode == MassMode.CONFLICT_ADJUSTED else SNAP_PQ_NAIVE
        for row in self.result.snapshots:
            yield report_from_sums(
                float(row[SNAP_P_WG_OBS]),
                float(row[SNAP_P_W_OBS]),
                float(row[col]),
                conditioned=self.conditioned,
                worlds=int(row[SNAP_WORLDS]),
                expansions=int(row[SNAP_EXPANSIONS]),
                timestamp=float(row[SNAP_WALL_MS]) / 1000.0,
            )


def run_anytime(
    net: Network,
    obs: Observation | None = None,
    query: QueryFormula | None = None,
    params: SearchParams | None = None,
) -> AnytimeResult:
    """Prune the network for the query, search, and report certified bounds.

    Stops at the params' stopping rule (a max_error target makes this the
    usual anytime loop) or exhaustion. Raises ZeroEvidence when the search
    exhausts every world without finding observation-consistent mass.
    """
    params = params or SearchParams()
    pruned = prune_for_query(net, query, obs)
    runner = (
        iterative_deepening
        if params.strategy == Strategy.ITERATIVE_DEEPENING
        else best_first
    )
    result = runner(pruned.network, pruned.observation, pruned.query, params)
    conditioned = len(pruned.observation) > 0
    mode = MassMode.CONFLICT_ADJUSTED if params.conflicts_enabled else MassMode.NAIVE
    final = report_from_sums(
        result.p_w_g_obs,
        result.p_w_obs,
        result.pq(mode == MassMode.CONFLICT_ADJUSTED),
        conditioned=conditioned,
        worlds=result.worlds_found,
        expansions=result.expansions,
    )
    return AnytimeResult(
        final=final,
        result=result,
        mode=mode,
        conditioned=conditioned,
        network=pruned.network,
        kept_variables=pruned.new_to_old,
    )
