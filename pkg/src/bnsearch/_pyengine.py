"""Pure-Python search engine: best-first and iterative-deepening runs.

This is the reference implementation; the compiled engine in _fast.pyx
mirrors its transition semantics exactly (same pop order, same accounting,
same conflict hooks). Keep the two in sync.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from heapq import heappop, heappush
from typing import Optional

import numpy as np

from .worlds import _NeumaierSum

# step report kinds
EXPANDED = "expanded-internal"
WORLD = "completed-world"
PRUNED_INCONSISTENT = "pruned-inconsistent"
PRUNED_DECIDED = "pruned-decided"
QUEUE_EMPTY = "queue-empty"

# snapshot row layout (shared with the compiled engine and estimate)
SNAP_STEP = 0
SNAP_EXPANSIONS = 1
SNAP_WORLDS = 2
SNAP_P_WG_OBS = 3
SNAP_P_W_OBS = 4
SNAP_PQ_NAIVE = 5
SNAP_PQ_ADJ = 6
SNAP_CONFLICTS = 7
SNAP_WALL_MS = 8
SNAP_WIDTH = 9

MASS_REFRESH_PERIOD = 4096  # from-scratch queue-mass rebuild cadence
MASS_DRIFT_TOLERANCE = 1e-10


@dataclass
class RunConfig:
    conflicts_enabled: bool = True
    use_adjusted_for_stop: bool = True
    max_error: Optional[float] = None
    max_worlds: Optional[int] = None
    certify_worlds: bool = False  # deepening: honor max_worlds only at a round boundary
    max_expansions: Optional[int] = None
    wall_clock: Optional[float] = None
    snapshot_every: int = 1
    keep_worlds: Optional[int] = None
    iddfs_log_threshold: Optional[float] = None
    iddfs_multiplier: float = 1e-2
    debug_no_revisit: bool = False
    debug_mass_drift: bool = False


@dataclass
class RunInputs:
    tables: object  # EngineTables
    obs_vec: np.ndarray
    query: object  # QueryFormula | None
    qprog: np.ndarray
    min_atom_var: int
    heuristic: object  # HeuristicTable
    director: object  # ConflictDirector | None


@dataclass(frozen=True)
class WorldRecord:
    values: tuple[int, ...]
    log_g: float
    g: float
    query_true: Optional[bool]
    generation: int


@dataclass
class RunResult:
    engine: str
    strategy: str
    stop_reason: str
    exhausted: bool
    steps: int
    expansions: int
    worlds_found: int
    pruned_inconsistent: int
    pruned_decided: int
    reinserted: int
    rounds: int
    conflicts_registered: int
    p_w_g_obs: float
    p_w_obs: float
    pq_naive: float
    pq_adj: float
    worlds: list[WorldRecord]
    snapshots: np.ndarray
    wall_s: float
    heuristic: object = None

    def pq(self, adjusted: bool) -> float:
        return self.pq_adj if adjusted else self.pq_naive


class _Node:
    __slots__ = ("parent", "val", "depth", "log_g", "lin_g", "fault_up", "gen")

    def __init__(self, parent, val, depth, log_g, lin_g, fault_up, gen):
        self.parent = parent
        self.val = val
        self.depth = depth
        self.log_g = log_g
        self.lin_g = lin_g
        self.fault_up = fault_up
        self.gen = gen


def _prefix_values(node: _Node) -> list[int]:
    out = [0] * node.depth
    cur = node
    while cur.depth > 0:
        out[cur.depth - 1] = cur.val
        cur = cur.parent
    return out


def _fault_vars(node: _Node) -> list[int]:
    out = []
    cur = node.fault_up
    while cur is not None:
        out.append(cur.depth - 1)
        cur = cur.parent.fault_up
    return out


class _RunBase:
    """State and accounting shared by the two strategies."""

    strategy = "?"

    def __init__(self, inputs: RunInputs, cfg: RunConfig):
        self.inputs = inputs
        self.cfg = cfg
        t = inputs.tables
        self.n = t.n
        # plain lists beat numpy scalars in this loop
        self.dom = t.dom.tolist()
        self.par_off = t.par_off.tolist()
        self.par_flat = t.par_flat.tolist()
        self.stride_flat = t.stride_flat.tolist()
        self.ent_off = t.ent_off.tolist()
        self.row_off = t.row_off.tolist()
        self.prob = t.prob.tolist()
        self.log_prob = t.log_prob.tolist()
        self.normal = t.normal.tolist()
        self.obs = inputs.obs_vec.tolist()
        self.max_obs = max(
            (i for i, v in enumerate(self.obs) if v >= 0), default=-1
        )
        self.min_atom = inputs.min_atom_var
        self._h_version = -1
        self.h_log: list[float] = []
        self._sync_h()
        # heuristic version the queued adj contributions were priced at
        self._priced_version = self._h_version

        self.p_w_g_obs = _NeumaierSum()
        self.p_w_obs = _NeumaierSum()
        self.pq_naive = _NeumaierSum()
        self.pq_adj = _NeumaierSum()
        self.steps = 0
        self.expansions = 0
        self.worlds_found = 0
        self.pruned_inconsistent = 0
        self.pruned_decided = 0
        self.reinserted = 0
        self.rounds = 1
        self.conflicts_registered = 0
        self.worlds: list[WorldRecord] = []
        self.snapshot_rows: list[list[float]] = []
        self.stop_reason: Optional[str] = None
        self.exhausted = False
        self.gen = 0
        self._t0 = time.monotonic()
        self._last_snap_step = -1
        self._seen: Optional[set] = set() if cfg.debug_no_revisit else None

    # -- heuristic table mirror ------------------------------------------

    def _sync_h(self):
        table = self.inputs.heuristic
        if self._h_version != table.version:
            self.h_log = table.h_log.tolist()
            self._h_version = table.version

    # -- mass helpers ----------------------------------------------------

    def _pq_naive_val(self) -> float:
        if self.exhausted:
            return 0.0
        return max(self.pq_naive.value, 0.0)

    def _pq_adj_val(self) -> float:
        if self.exhausted:
            return 0.0
        return max(self.pq_adj.value, 0.0)

    def _pq_for_stop(self) -> float:
        return self._pq_adj_val() if self.cfg.use_adjusted_for_stop else self._pq_naive_val()

    def _queue_entries(self):
        raise NotImplementedError

    def _refresh_masses(self):
        """Rebuild both queue masses from the live entries.

        Also re-prices every entry's adjusted contribution at the current
        heuristic, which is what makes conflict registration pay off for
        entries queued before it.
        """
        # after a registration the adjusted mass legitimately shrinks, so the
        # drift check only applies to it when the heuristic did not move
        version_changed = self._priced_version != self.inputs.heuristic.version
        self._sync_h()
        old_naive = self.pq_naive.value
        old_adj = self.pq_adj.value
        naive = _NeumaierSum()
        adj = _NeumaierSum()
        h_log = self.h_log
        for e in self._queue_entries():
            node = e[_ENTRY_NODE]
            naive.add(node.lin_g)
            contrib = node.lin_g * math.exp(h_log[node.depth])
            e[_ENTRY_ADJ] = contrib
            adj.add(contrib)
        if self.cfg.debug_mass_drift:
            pairs = [(old_naive, naive.value)]
            if not version_changed:
                pairs.append((old_adj, adj.value))
            for before, after in pairs:
                scale = max(abs(before), abs(after), 1e-300)
                if abs(before - after) / scale > MASS_DRIFT_TOLERANCE and abs(before - after) > 1e-15:
                    raise AssertionError(
                        f"queue mass drifted: {before!r} -> {after!r}"
                    )
        self.pq_naive = naive
        self.pq_adj = adj
        self._priced_version = self._h_version

    # -- shared node processing ------------------------------------------

    def _parent_row_base(self, node: _Node) -> int:
        var = node.depth
        a = self.par_off[var]
        b = self.par_off[var + 1]
        if a == b:
            return 0
        if b - a == 1:
            p = self.par_flat[a]
            s = self.stride_flat[a]
            cur = node
            while cur.depth - 1 != p:
                cur = cur.parent
            return cur.val * s
        want = {}
        for k in range(a, b):
            want[self.par_flat[k]] = self.stride_flat[k]
        base = 0
        remaining = b - a
        cur = node
        while remaining:
            s = want.get(cur.depth - 1)
            if s is not None:
                base += cur.val * s
                remaining -= 1
            cur = cur.parent
        return base

    def _query_truth(self, node: _Node):
        return self.inputs.query.evaluate(_prefix_values(node))

    def _record_world(self, node: _Node):
        g = node.lin_g
        self.p_w_obs.add(g)
        truth = None
        if self.inputs.query is not None:
            truth = self.inputs.query.evaluate(_prefix_values(node))
            if truth:
                self.p_w_g_obs.add(g)
        self.worlds_found += 1
        keep = self.cfg.keep_worlds
        if keep is None or len(self.worlds) < keep:
            self.worlds.append(
                WorldRecord(
                    values=tuple(_prefix_values(node)),
                    log_g=node.log_g,
                    g=g,
                    query_true=truth,
                    generation=node.gen,
                )
            )

    def _handle_inconsistent(self, node: _Node):
        self.pruned_inconsistent += 1
        director = self.inputs.director
        if not self.cfg.conflicts_enabled or director is None:
            return
        faults = _fault_vars(node)
        covered = self.inputs.heuristic.covered
        for f in faults:
            if not covered[f]:
                return
        if director.failed(_prefix_values(node), node.depth - 1, faults):
            self.conflicts_registered += 1
            self._sync_h()
            self._refresh_masses()

    def _check_revisit(self, node: _Node):
        if self._seen is None:
            return
        key = tuple(_prefix_values(node))
        if key in self._seen:
            raise AssertionError(f"prefix processed twice: {key}")
        self._seen.add(key)

    # -- snapshots and stopping ------------------------------------------

    def _snapshot(self, force: bool = False):
        if not force and self._last_snap_step == self.steps:
            return
        self._last_snap_step = self.steps
        self.snapshot_rows.append(
            [
                float(self.steps),
                float(self.expansions),
                float(self.worlds_found),
                self.p_w_g_obs.value,
                self.p_w_obs.value,
                self._pq_naive_val(),
                self._pq_adj_val(),
                float(self.conflicts_registered),
                (time.monotonic() - self._t0) * 1000.0,
            ]
        )

    def _check_stop(self) -> Optional[str]:
        cfg = self.cfg
        if cfg.max_error is not None:
            pq = self._pq_for_stop()
            denom = max(self.p_w_obs.value, 0.0) + pq
            if denom > 0.0 and pq / (2.0 * denom) <= cfg.max_error:
                return "max_error"
        if (
            cfg.max_worlds is not None
            and not cfg.certify_worlds
            and self.worlds_found >= cfg.max_worlds
        ):
            return "max_worlds"
        if cfg.max_expansions is not None and self.expansions >= cfg.max_expansions:
            return "max_expansions"
        if cfg.wall_clock is not None and time.monotonic() - self._t0 >= cfg.wall_clock:
            return "wall_clock"
        return None

    def step(self) -> Optional[str]:
        raise NotImplementedError

    def run(self) -> RunResult:
        self._snapshot(force=True)
        while True:
            reason = self._check_stop()
            if reason is not None:
                self.stop_reason = reason
                break
            rep = self.step()
            if rep is None:
                break  # step() set stop_reason itself
            if rep == QUEUE_EMPTY:
                self.exhausted = True
                self.stop_reason = "exhausted"
                self._snapshot(force=True)
                break
            if self.steps % self.cfg.snapshot_every == 0:
                self._snapshot()
            if self.steps % MASS_REFRESH_PERIOD == 0:
                self._refresh_masses()
        self._snapshot()
        return self._result()

    def _result(self) -> RunResult:
        return RunResult(
            engine="pure",
            strategy=self.strategy,
            stop_reason=self.stop_reason or "unknown",
            exhausted=self.exhausted,
            steps=self.steps,
            expansions=self.expansions,
            worlds_found=self.worlds_found,
            pruned_inconsistent=self.pruned_inconsistent,
            pruned_decided=self.pruned_decided,
            reinserted=self.reinserted,
            rounds=self.rounds,
            conflicts_registered=self.conflicts_registered,
            p_w_g_obs=max(self.p_w_g_obs.value, 0.0),
            p_w_obs=max(self.p_w_obs.value, 0.0),
            pq_naive=self._pq_naive_val(),
            pq_adj=self._pq_adj_val(),
            worlds=list(self.worlds),
            snapshots=np.array(self.snapshot_rows, dtype=np.float64).reshape(
                -1, SNAP_WIDTH
            ),
            wall_s=time.monotonic() - self._t0,
            heuristic=self.inputs.heuristic,
        )


# heap/stack entry field positions
_ENTRY_NODE = 3
_ENTRY_VERSION = 4
_ENTRY_ADJ = 5


class BestFirstRun(_RunBase):
    """Pops the prefix with the largest mass-times-heuristic first."""

    strategy = "bestfirst"

    def __init__(self, inputs: RunInputs, cfg: RunConfig):
        super().__init__(inputs, cfg)
        self.heap: list[list] = []
        root = _Node(None, -1, 0, 0.0, 1.0, None, 0)
        self.gen = 1
        f = self.h_log[0]
        adj = 1.0 * math.exp(self.h_log[0])
        self.pq_naive.add(1.0)
        self.pq_adj.add(adj)
        heappush(self.heap, [-f, 0, 0, root, self._h_version, adj])

    def _queue_entries(self):
        return self.heap

    def step(self) -> Optional[str]:
        while True:
            if not self.heap:
                return QUEUE_EMPTY
            entry = heappop(self.heap)
            node = entry[_ENTRY_NODE]
            if entry[_ENTRY_VERSION] != self._h_version:
                # stale key: re-price, and requeue unless still on top
                nf = node.log_g + self.h_log[node.depth]
                if self.heap and nf < -self.heap[0][0]:
                    new_adj = node.lin_g * math.exp(self.h_log[node.depth])
                    self.pq_adj.add(-entry[_ENTRY_ADJ])
                    self.pq_adj.add(new_adj)
                    heappush(
                        self.heap,
                        [-nf, -node.depth, node.gen, node, self._h_version, new_adj],
                    )
                    self.reinserted += 1
                    continue
            break
        self.pq_naive.add(-node.lin_g)
        self.pq_adj.add(-entry[_ENTRY_ADJ])
        self.steps += 1
        self._check_revisit(node)
        depth = node.depth
        if depth > 0:
            var = depth - 1
            ov = self.obs[var]
            if ov >= 0 and node.val != ov:
                self._handle_inconsistent(node)
                return PRUNED_INCONSISTENT
        if depth == self.n:
            self._record_world(node)
            return WORLD
        if (
            self.inputs.query is not None
            and depth > self.max_obs
            and depth > self.min_atom
        ):
            truth = self._query_truth(node)
            if truth is not None:
                self.p_w_obs.add(node.lin_g)
                if truth:
                    self.p_w_g_obs.add(node.lin_g)
                self.pruned_decided += 1
                return PRUNED_DECIDED
        self._expand(node)
        return EXPANDED

    def _expand(self, node: _Node):
        var = node.depth
        row = self._parent_row_base(node)
        row_base = self.ent_off[var] + row * self.dom[var]
        normal = self.normal[self.row_off[var] + row]
        child_depth = var + 1
        h = self.h_log[child_depth]
        eh = math.exp(h)
        for v in range(self.dom[var]):
            p = self.prob[row_base + v]
            if p <= 0.0:
                continue
            lg = node.log_g + self.log_prob[row_base + v]
            child = _Node(
                node,
                v,
                child_depth,
                lg,
                node.lin_g * p,
                None,
                self.gen,
            )
            # rows without a defined normal value cannot be faulted
            child.fault_up = child if 0 <= normal != v else node.fault_up
            self.gen += 1
            adj = child.lin_g * eh
            self.pq_naive.add(child.lin_g)
            self.pq_adj.add(adj)
            heappush(
                self.heap,
                [-(lg + h), -child_depth, child.gen, child, self._h_version, adj],
            )
        self.expansions += 1


class DeepeningRun(_RunBase):
    """Depth-first sweeps under a falling mass threshold, resuming the frontier.

    Children whose bound falls below the round threshold wait in `suppressed`;
    when the stack drains, the threshold drops and the suppressed entries are
    replayed in best-first order. Nothing is ever expanded twice.
    """

    strategy = "iddfs"

    def __init__(self, inputs: RunInputs, cfg: RunConfig):
        super().__init__(inputs, cfg)
        if cfg.iddfs_log_threshold is not None:
            self.log_threshold = cfg.iddfs_log_threshold
        else:
            self.log_threshold = self.h_log[0]
        if not (0.0 < cfg.iddfs_multiplier < 1.0):
            raise ValueError("iddfs multiplier must be in (0, 1)")
        self.log_multiplier = math.log(cfg.iddfs_multiplier)
        self.stack: list[list] = []
        self.suppressed: list[list] = []
        root = _Node(None, -1, 0, 0.0, 1.0, None, 0)
        self.gen = 1
        adj = 1.0 * math.exp(self.h_log[0])
        self.pq_naive.add(1.0)
        self.pq_adj.add(adj)
        # entry layout matches the heap's so shared helpers can index it
        self.stack.append([0.0, 0, 0, root, self._h_version, adj])

    def _queue_entries(self):
        yield from self.stack
        yield from self.suppressed

    def step(self) -> Optional[str]:
        while True:
            if not self.stack:
                cfg = self.cfg
                if (
                    cfg.certify_worlds
                    and cfg.max_worlds is not None
                    and self.worlds_found >= cfg.max_worlds
                ):
                    self.stop_reason = "max_worlds"
                    return None
                if not self.suppressed:
                    return QUEUE_EMPTY
                self.rounds += 1
                self.log_threshold += self.log_multiplier
                h_log = self.h_log
                self.suppressed.sort(
                    key=lambda e: (
                        e[_ENTRY_NODE].log_g + h_log[e[_ENTRY_NODE].depth],
                        -e[_ENTRY_NODE].gen,
                    )
                )
                self.stack = self.suppressed
                self.suppressed = []
                continue
            entry = self.stack.pop()
            node = entry[_ENTRY_NODE]
            f = node.log_g + self.h_log[node.depth]
            if f < self.log_threshold:
                self.suppressed.append(entry)
                continue
            break
        self.pq_naive.add(-node.lin_g)
        self.pq_adj.add(-entry[_ENTRY_ADJ])
        self.steps += 1
        self._check_revisit(node)
        depth = node.depth
        if depth > 0:
            var = depth - 1
            ov = self.obs[var]
            if ov >= 0 and node.val != ov:
                self._handle_inconsistent(node)
                return PRUNED_INCONSISTENT
        if depth == self.n:
            self._record_world(node)
            return WORLD
        if (
            self.inputs.query is not None
            and depth > self.max_obs
            and depth > self.min_atom
        ):
            truth = self._query_truth(node)
            if truth is not None:
                self.p_w_obs.add(node.lin_g)
                if truth:
                    self.p_w_g_obs.add(node.lin_g)
                self.pruned_decided += 1
                return PRUNED_DECIDED
        self._expand(node)
        return EXPANDED

    def _expand(self, node: _Node):
        var = node.depth
        row = self._parent_row_base(node)
        row_base = self.ent_off[var] + row * self.dom[var]
        normal = self.normal[self.row_off[var] + row]
        child_depth = var + 1
        h = self.h_log[child_depth]
        eh = math.exp(h)
        # reversed push so the lowest value index pops first
        for v in range(self.dom[var] - 1, -1, -1):
            p = self.prob[row_base + v]
            if p <= 0.0:
                continue
            lg = node.log_g + self.log_prob[row_base + v]
            child = _Node(node, v, child_depth, lg, node.lin_g * p, None, self.gen)
            child.fault_up = child if 0 <= normal != v else node.fault_up
            self.gen += 1
            adj = child.lin_g * eh
            self.pq_naive.add(child.lin_g)
            self.pq_adj.add(adj)
            entry = [0.0, 0, child.gen, child, self._h_version, adj]
            if lg + h >= self.log_threshold:
                self.stack.append(entry)
            else:
                self.suppressed.append(entry)
        self.expansions += 1
