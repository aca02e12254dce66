# cython: language_level=3, boundscheck=False, wraparound=False
# cython: cdivision=True, initializedcheck=False, nonecheck=False
"""Compiled search engine. Mirrors _pyengine transition-for-transition.

Parity contract with the pure engine: identical pop order, identical
counters, and bitwise-identical accumulator arithmetic. To that end the
heap replicates CPython heapq's sift routines (so the internal array order,
which the mass refresh iterates in, matches), all sums use the same
compensated formula in the same operation order, and multiplies and adds
stay in separate statements (with contraction disabled at compile time) so
the C arithmetic matches Python's.
"""

import numpy as np
from time import monotonic as _monotonic

cimport numpy as cnp
from libc.math cimport exp as c_exp, log as c_log
from libc.stdlib cimport free, malloc, realloc

from ._pyengine import (
    MASS_DRIFT_TOLERANCE,
    MASS_REFRESH_PERIOD,
    SNAP_WIDTH,
    RunResult,
    WorldRecord,
)

# step_once() outcome codes
cdef enum:
    REP_INTERNAL_STOP = 0   # stop_reason already set
    REP_QUEUE_EMPTY = 1
    REP_PROGRESS = 2

cdef enum:
    TRI_FALSE = 0
    TRI_TRUE = 1
    TRI_UNKNOWN = 2


cdef inline void _neum_add(double* s, double* c, double x) nogil:
    cdef double t = s[0] + x
    if (s[0] if s[0] >= 0.0 else -s[0]) >= (x if x >= 0.0 else -x):
        c[0] += (s[0] - t) + x
    else:
        c[0] += (x - t) + s[0]
    s[0] = t


cdef inline bint _entry_less(
    double fa, long long da, long long ga,
    double fb, long long db, long long gb,
) nogil:
    # lexicographic (neg_f, neg_depth, gen); gen unique so total
    if fa != fb:
        return fa < fb
    if da != db:
        return da < db
    return ga < gb


cdef class _Run:
    """Shared state for both strategies, node pool included."""

    cdef object inputs, cfg, director, heuristic, query
    cdef object worlds, stop_reason, seen
    cdef str strategy

    # network tables (views into EngineTables arrays)
    cdef cnp.int32_t[::1] dom, par_flat, normal, obs, qprog_flat
    cdef cnp.int64_t[::1] par_off, stride_flat, ent_off, row_off
    cdef double[::1] prob, log_prob
    # heuristic buffers (live views) and a synced private copy
    cdef double[::1] h_live
    cdef cnp.uint8_t[::1] covered
    cdef cnp.int64_t[::1] ver_live
    cdef double* h_cache
    cdef long long h_version
    cdef long long priced_version

    cdef int n, max_obs, min_atom, qn
    cdef bint has_query

    # config scalars
    cdef bint conflicts_enabled, use_adjusted, certify, debug_revisit, debug_drift
    cdef bint has_max_error, has_max_worlds, has_max_expansions, has_wall, has_keep
    cdef double max_error, wall_clock
    cdef long long max_worlds, max_expansions, keep_worlds, snapshot_every
    cdef long long refresh_period
    cdef int snap_width

    # node pool
    cdef long long* np_parent
    cdef int* np_val
    cdef int* np_depth
    cdef double* np_logg
    cdef double* np_ling
    cdef long long* np_fault
    cdef long long* np_gen
    cdef long long pool_len, pool_cap

    # compensated accumulators
    cdef double pwg_s, pwg_c, pwo_s, pwo_c, pqn_s, pqn_c, pqa_s, pqa_c

    # counters
    cdef long long steps, expansions, worlds_found, pruned_inconsistent
    cdef long long pruned_decided, reinserted, rounds, conflicts_registered
    cdef long long gen_counter, last_snap_step
    cdef bint exhausted
    cdef double t0

    # snapshot rows, SNAP_WIDTH doubles each
    cdef double* snap_buf
    cdef long long snap_len, snap_cap

    # scratch
    cdef int* prefix_buf
    cdef cnp.int8_t* eval_stack

    def __cinit__(self):
        self.np_parent = NULL
        self.np_val = NULL
        self.np_depth = NULL
        self.np_logg = NULL
        self.np_ling = NULL
        self.np_fault = NULL
        self.np_gen = NULL
        self.h_cache = NULL
        self.snap_buf = NULL
        self.prefix_buf = NULL
        self.eval_stack = NULL

    def __dealloc__(self):
        free(self.np_parent)
        free(self.np_val)
        free(self.np_depth)
        free(self.np_logg)
        free(self.np_ling)
        free(self.np_fault)
        free(self.np_gen)
        free(self.h_cache)
        free(self.snap_buf)
        free(self.prefix_buf)
        free(self.eval_stack)

    def __init__(self, inputs, cfg, str strategy):
        self.inputs = inputs
        self.cfg = cfg
        self.strategy = strategy
        t = inputs.tables
        self.n = t.n
        self.dom = t.dom
        self.par_off = t.par_off
        self.par_flat = t.par_flat
        self.stride_flat = t.stride_flat
        self.ent_off = t.ent_off
        self.row_off = t.row_off
        self.prob = t.prob
        self.log_prob = t.log_prob
        self.normal = t.normal
        self.obs = inputs.obs_vec

        cdef int i
        self.max_obs = -1
        for i in range(self.n):
            if self.obs[i] >= 0:
                self.max_obs = i
        self.min_atom = inputs.min_atom_var
        self.query = inputs.query
        self.has_query = inputs.query is not None
        qprog = np.ascontiguousarray(inputs.qprog, dtype=np.int32).reshape(-1)
        self.qprog_flat = qprog
        self.qn = qprog.shape[0] // 3

        self.heuristic = inputs.heuristic
        self.h_live = inputs.heuristic.h_log
        self.covered = inputs.heuristic.covered.view(np.uint8)
        self.ver_live = inputs.heuristic.version_buf
        self.h_cache = <double*> malloc((self.n + 1) * sizeof(double))
        if self.h_cache is NULL:
            raise MemoryError()
        self.h_version = -1
        self._sync_h()
        # heuristic version the queued adj contributions were priced at
        self.priced_version = self.h_version

        self.director = inputs.director

        self.conflicts_enabled = cfg.conflicts_enabled
        self.use_adjusted = cfg.use_adjusted_for_stop
        self.certify = cfg.certify_worlds
        self.debug_revisit = cfg.debug_no_revisit
        self.debug_drift = cfg.debug_mass_drift
        self.has_max_error = cfg.max_error is not None
        self.max_error = cfg.max_error if self.has_max_error else 0.0
        self.has_max_worlds = cfg.max_worlds is not None
        self.max_worlds = cfg.max_worlds if self.has_max_worlds else 0
        self.has_max_expansions = cfg.max_expansions is not None
        self.max_expansions = cfg.max_expansions if self.has_max_expansions else 0
        self.has_wall = cfg.wall_clock is not None
        self.wall_clock = cfg.wall_clock if self.has_wall else 0.0
        self.has_keep = cfg.keep_worlds is not None
        self.keep_worlds = cfg.keep_worlds if self.has_keep else 0
        if cfg.snapshot_every <= 0:
            raise ValueError("snapshot_every must be positive")
        self.snapshot_every = cfg.snapshot_every
        self.refresh_period = MASS_REFRESH_PERIOD
        self.snap_width = SNAP_WIDTH

        self.pool_cap = 1024
        self.pool_len = 0
        self.np_parent = <long long*> malloc(self.pool_cap * sizeof(long long))
        self.np_val = <int*> malloc(self.pool_cap * sizeof(int))
        self.np_depth = <int*> malloc(self.pool_cap * sizeof(int))
        self.np_logg = <double*> malloc(self.pool_cap * sizeof(double))
        self.np_ling = <double*> malloc(self.pool_cap * sizeof(double))
        self.np_fault = <long long*> malloc(self.pool_cap * sizeof(long long))
        self.np_gen = <long long*> malloc(self.pool_cap * sizeof(long long))
        if (self.np_parent is NULL or self.np_val is NULL or self.np_depth is NULL
                or self.np_logg is NULL or self.np_ling is NULL
                or self.np_fault is NULL or self.np_gen is NULL):
            raise MemoryError()

        self.prefix_buf = <int*> malloc((self.n + 1) * sizeof(int))
        self.eval_stack = <cnp.int8_t*> malloc((self.qn + 1) * sizeof(cnp.int8_t))
        if self.prefix_buf is NULL or self.eval_stack is NULL:
            raise MemoryError()

        self.snap_cap = 64
        self.snap_len = 0
        self.snap_buf = <double*> malloc(self.snap_cap * self.snap_width * sizeof(double))
        if self.snap_buf is NULL:
            raise MemoryError()

        self.pwg_s = 0.0
        self.pwg_c = 0.0
        self.pwo_s = 0.0
        self.pwo_c = 0.0
        self.pqn_s = 0.0
        self.pqn_c = 0.0
        self.pqa_s = 0.0
        self.pqa_c = 0.0
        self.steps = 0
        self.expansions = 0
        self.worlds_found = 0
        self.pruned_inconsistent = 0
        self.pruned_decided = 0
        self.reinserted = 0
        self.rounds = 1
        self.conflicts_registered = 0
        self.exhausted = False
        self.gen_counter = 0
        self.last_snap_step = -1
        self.worlds = []
        self.stop_reason = None
        self.seen = set() if cfg.debug_no_revisit else None
        self.t0 = _monotonic()

    # -- pool --------------------------------------------------------------

    cdef long long _new_node(
        self, long long parent, int val, int depth,
        double log_g, double lin_g, long long fault, long long gen,
    ) except -1:
        cdef long long cap
        if self.pool_len == self.pool_cap:
            # TODO: recycle drained slots instead of growing forever
            cap = self.pool_cap * 2
            self.np_parent = <long long*> realloc(self.np_parent, cap * sizeof(long long))
            self.np_val = <int*> realloc(self.np_val, cap * sizeof(int))
            self.np_depth = <int*> realloc(self.np_depth, cap * sizeof(int))
            self.np_logg = <double*> realloc(self.np_logg, cap * sizeof(double))
            self.np_ling = <double*> realloc(self.np_ling, cap * sizeof(double))
            self.np_fault = <long long*> realloc(self.np_fault, cap * sizeof(long long))
            self.np_gen = <long long*> realloc(self.np_gen, cap * sizeof(long long))
            if (self.np_parent is NULL or self.np_val is NULL or self.np_depth is NULL
                    or self.np_logg is NULL or self.np_ling is NULL
                    or self.np_fault is NULL or self.np_gen is NULL):
                raise MemoryError()
            self.pool_cap = cap
        cdef long long idx = self.pool_len
        self.np_parent[idx] = parent
        self.np_val[idx] = val
        self.np_depth[idx] = depth
        self.np_logg[idx] = log_g
        self.np_ling[idx] = lin_g
        self.np_fault[idx] = fault
        self.np_gen[idx] = gen
        self.pool_len += 1
        return idx

    # -- heuristic sync ------------------------------------------------------

    cdef void _sync_h(self):
        cdef long long ver = self.ver_live[0]
        cdef int j
        if self.h_version != ver:
            for j in range(self.n + 1):
                self.h_cache[j] = self.h_live[j]
            self.h_version = ver

    # -- masses --------------------------------------------------------------

    cdef inline double _pq_naive_val(self) nogil:
        cdef double v
        if self.exhausted:
            return 0.0
        v = self.pqn_s + self.pqn_c
        return v if v > 0.0 else 0.0

    cdef inline double _pq_adj_val(self) nogil:
        cdef double v
        if self.exhausted:
            return 0.0
        v = self.pqa_s + self.pqa_c
        return v if v > 0.0 else 0.0

    cdef void _refresh_masses(self) except *:
        # after a registration the adjusted mass legitimately shrinks, so the
        # drift check only applies to it when the heuristic did not move
        cdef bint version_changed = self.priced_version != self.ver_live[0]
        self._sync_h()
        cdef double old_naive = self.pqn_s + self.pqn_c
        cdef double old_adj = self.pqa_s + self.pqa_c
        cdef double ns = 0.0, nc = 0.0, as_ = 0.0, ac = 0.0
        self._reprice_entries(&ns, &nc, &as_, &ac)
        cdef double before, after, scale, diff
        if self.debug_drift:
            pairs = [(old_naive, ns + nc)]
            if not version_changed:
                pairs.append((old_adj, as_ + ac))
            for before, after in pairs:
                scale = max(abs(before), abs(after), 1e-300)
                diff = abs(before - after)
                if diff / scale > MASS_DRIFT_TOLERANCE and diff > 1e-15:
                    raise AssertionError(
                        f"queue mass drifted: {before!r} -> {after!r}"
                    )
        self.pqn_s = ns
        self.pqn_c = nc
        self.pqa_s = as_
        self.pqa_c = ac
        self.priced_version = self.h_version

    cdef void _reprice_entries(self, double* ns, double* nc, double* as_, double* ac) except *:
        raise NotImplementedError()

    # -- shared node processing ------------------------------------------------

    cdef long long _parent_row_base(self, long long node) nogil:
        cdef int var = self.np_depth[node]
        cdef long long a = self.par_off[var]
        cdef long long b = self.par_off[var + 1]
        cdef long long cur, base, k
        cdef long long remaining
        cdef int p, dv
        cdef long long s
        if a == b:
            return 0
        if b - a == 1:
            p = self.par_flat[a]
            s = self.stride_flat[a]
            cur = node
            while self.np_depth[cur] - 1 != p:
                cur = self.np_parent[cur]
            return self.np_val[cur] * s
        base = 0
        remaining = b - a
        cur = node
        while remaining:
            dv = self.np_depth[cur] - 1
            for k in range(a, b):
                if self.par_flat[k] == dv:
                    base += self.np_val[cur] * self.stride_flat[k]
                    remaining -= 1
                    break
            cur = self.np_parent[cur]
        return base

    cdef void _fill_prefix(self, long long node) nogil:
        cdef long long cur = node
        while self.np_depth[cur] > 0:
            self.prefix_buf[self.np_depth[cur] - 1] = self.np_val[cur]
            cur = self.np_parent[cur]

    cdef int _eval_query(self, int depth) nogil:
        """Three-valued postfix evaluation over prefix_buf[:depth]."""
        cdef int sp = 0
        cdef int r, op, a, b, x, y
        if self.qn == 0:
            return TRI_UNKNOWN
        for r in range(self.qn):
            op = self.qprog_flat[3 * r]
            a = self.qprog_flat[3 * r + 1]
            b = self.qprog_flat[3 * r + 2]
            if op == 0:  # atom
                if a >= depth:
                    self.eval_stack[sp] = TRI_UNKNOWN
                else:
                    self.eval_stack[sp] = TRI_TRUE if self.prefix_buf[a] == b else TRI_FALSE
                sp += 1
            elif op == 1:  # not
                x = self.eval_stack[sp - 1]
                if x != TRI_UNKNOWN:
                    self.eval_stack[sp - 1] = TRI_TRUE if x == TRI_FALSE else TRI_FALSE
            elif op == 2:  # and
                y = self.eval_stack[sp - 1]
                x = self.eval_stack[sp - 2]
                sp -= 1
                if x == TRI_FALSE or y == TRI_FALSE:
                    self.eval_stack[sp - 1] = TRI_FALSE
                elif x == TRI_UNKNOWN or y == TRI_UNKNOWN:
                    self.eval_stack[sp - 1] = TRI_UNKNOWN
                else:
                    self.eval_stack[sp - 1] = TRI_TRUE
            else:  # or
                y = self.eval_stack[sp - 1]
                x = self.eval_stack[sp - 2]
                sp -= 1
                if x == TRI_TRUE or y == TRI_TRUE:
                    self.eval_stack[sp - 1] = TRI_TRUE
                elif x == TRI_UNKNOWN or y == TRI_UNKNOWN:
                    self.eval_stack[sp - 1] = TRI_UNKNOWN
                else:
                    self.eval_stack[sp - 1] = TRI_FALSE
        return self.eval_stack[0]

    cdef object _prefix_list(self, long long node):
        cdef int d = self.np_depth[node]
        cdef int i
        self._fill_prefix(node)
        out = [0] * d
        for i in range(d):
            out[i] = self.prefix_buf[i]
        return out

    cdef void _record_world(self, long long node) except *:
        cdef double g = self.np_ling[node]
        _neum_add(&self.pwo_s, &self.pwo_c, g)
        truth = None
        cdef int code
        if self.has_query:
            self._fill_prefix(node)
            code = self._eval_query(self.np_depth[node])
            truth = True if code == TRI_TRUE else (False if code == TRI_FALSE else None)
            if code == TRI_TRUE:
                _neum_add(&self.pwg_s, &self.pwg_c, g)
        self.worlds_found += 1
        if not self.has_keep or len(self.worlds) < self.keep_worlds:
            self.worlds.append(
                WorldRecord(
                    values=tuple(self._prefix_list(node)),
                    log_g=self.np_logg[node],
                    g=g,
                    query_true=truth,
                    generation=self.np_gen[node],
                )
            )

    cdef void _handle_inconsistent(self, long long node) except *:
        self.pruned_inconsistent += 1
        if not self.conflicts_enabled or self.director is None:
            return
        # all faulted prefix variables must already sit inside known conflicts
        cdef long long cur = self.np_fault[node]
        cdef int f
        while cur != -1:
            f = self.np_depth[cur] - 1
            if not self.covered[f]:
                return
            cur = self.np_fault[self.np_parent[cur]]
        faults = []
        cur = self.np_fault[node]
        while cur != -1:
            faults.append(self.np_depth[cur] - 1)
            cur = self.np_fault[self.np_parent[cur]]
        if self.director.failed(
            self._prefix_list(node), self.np_depth[node] - 1, faults
        ):
            self.conflicts_registered += 1
            self._sync_h()
            self._refresh_masses()

    cdef void _check_revisit(self, long long node) except *:
        if self.seen is None:
            return
        key = tuple(self._prefix_list(node))
        if key in self.seen:
            raise AssertionError(f"prefix processed twice: {key}")
        self.seen.add(key)

    # -- snapshots and stopping -------------------------------------------------

    cdef void _snapshot(self, bint force) except *:
        if not force and self.last_snap_step == self.steps:
            return
        self.last_snap_step = self.steps
        cdef long long cap
        if self.snap_len == self.snap_cap:
            cap = self.snap_cap * 2
            self.snap_buf = <double*> realloc(
                self.snap_buf, cap * self.snap_width * sizeof(double)
            )
            if self.snap_buf is NULL:
                raise MemoryError()
            self.snap_cap = cap
        cdef double* row = self.snap_buf + self.snap_len * self.snap_width
        row[0] = <double> self.steps
        row[1] = <double> self.expansions
        row[2] = <double> self.worlds_found
        row[3] = self.pwg_s + self.pwg_c
        row[4] = self.pwo_s + self.pwo_c
        row[5] = self._pq_naive_val()
        row[6] = self._pq_adj_val()
        row[7] = <double> self.conflicts_registered
        row[8] = (_monotonic() - self.t0) * 1000.0
        self.snap_len += 1

    cdef object _check_stop(self):
        cdef double pq, denom, pwo
        if self.has_max_error:
            pq = self._pq_adj_val() if self.use_adjusted else self._pq_naive_val()
            pwo = self.pwo_s + self.pwo_c
            if pwo < 0.0:
                pwo = 0.0
            denom = pwo + pq
            if denom > 0.0 and pq / (2.0 * denom) <= self.max_error:
                return "max_error"
        if self.has_max_worlds and not self.certify and self.worlds_found >= self.max_worlds:
            return "max_worlds"
        if self.has_max_expansions and self.expansions >= self.max_expansions:
            return "max_expansions"
        if self.has_wall and _monotonic() - self.t0 >= self.wall_clock:
            return "wall_clock"
        return None

    cdef int step_once(self) except -1:
        raise NotImplementedError()

    def run(self):
        cdef int rep
        self._snapshot(True)
        while True:
            reason = self._check_stop()
            if reason is not None:
                self.stop_reason = reason
                break
            rep = self.step_once()
            if rep == REP_INTERNAL_STOP:
                break
            if rep == REP_QUEUE_EMPTY:
                self.exhausted = True
                self.stop_reason = "exhausted"
                self._snapshot(True)
                break
            if self.steps % self.snapshot_every == 0:
                self._snapshot(False)
            if self.steps % self.refresh_period == 0:
                self._refresh_masses()
        self._snapshot(False)
        return self._result()

    cdef object _result(self):
        snaps = np.empty((self.snap_len, SNAP_WIDTH), dtype=np.float64)
        cdef double[:, ::1] sview = snaps
        cdef long long i
        cdef int j
        for i in range(self.snap_len):
            for j in range(self.snap_width):
                sview[i, j] = self.snap_buf[i * self.snap_width + j]
        cdef double pwg = self.pwg_s + self.pwg_c
        cdef double pwo = self.pwo_s + self.pwo_c
        return RunResult(
            engine="compiled",
            strategy=self.strategy,
            stop_reason=self.stop_reason if self.stop_reason is not None else "unknown",
            exhausted=self.exhausted,
            steps=self.steps,
            expansions=self.expansions,
            worlds_found=self.worlds_found,
            pruned_inconsistent=self.pruned_inconsistent,
            pruned_decided=self.pruned_decided,
            reinserted=self.reinserted,
            rounds=self.rounds,
            conflicts_registered=self.conflicts_registered,
            p_w_g_obs=pwg if pwg > 0.0 else 0.0,
            p_w_obs=pwo if pwo > 0.0 else 0.0,
            pq_naive=self._pq_naive_val(),
            pq_adj=self._pq_adj_val(),
            worlds=list(self.worlds),
            snapshots=snaps,
            wall_s=_monotonic() - self.t0,
            heuristic=self.heuristic,
        )


cdef class _BestFirst(_Run):
    """Heap-ordered run; array layout replicates CPython heapq exactly."""

    cdef double* hp_negf
    cdef long long* hp_negd
    cdef long long* hp_gen
    cdef long long* hp_node
    cdef long long* hp_ver
    cdef double* hp_adj
    cdef long long heap_len, heap_cap

    def __cinit__(self):
        self.hp_negf = NULL
        self.hp_negd = NULL
        self.hp_gen = NULL
        self.hp_node = NULL
        self.hp_ver = NULL
        self.hp_adj = NULL

    def __dealloc__(self):
        free(self.hp_negf)
        free(self.hp_negd)
        free(self.hp_gen)
        free(self.hp_node)
        free(self.hp_ver)
        free(self.hp_adj)

    def __init__(self, inputs, cfg):
        _Run.__init__(self, inputs, cfg, "bestfirst")
        self.heap_cap = 1024
        self.heap_len = 0
        self.hp_negf = <double*> malloc(self.heap_cap * sizeof(double))
        self.hp_negd = <long long*> malloc(self.heap_cap * sizeof(long long))
        self.hp_gen = <long long*> malloc(self.heap_cap * sizeof(long long))
        self.hp_node = <long long*> malloc(self.heap_cap * sizeof(long long))
        self.hp_ver = <long long*> malloc(self.heap_cap * sizeof(long long))
        self.hp_adj = <double*> malloc(self.heap_cap * sizeof(double))
        if (self.hp_negf is NULL or self.hp_negd is NULL or self.hp_gen is NULL
                or self.hp_node is NULL or self.hp_ver is NULL or self.hp_adj is NULL):
            raise MemoryError()
        cdef long long root = self._new_node(-1, -1, 0, 0.0, 1.0, -1, 0)
        self.gen_counter = 1
        cdef double f = self.h_cache[0]
        cdef double adj = 1.0 * c_exp(self.h_cache[0])
        _neum_add(&self.pqn_s, &self.pqn_c, 1.0)
        _neum_add(&self.pqa_s, &self.pqa_c, adj)
        self._heap_push(-f, 0, 0, root, self.h_version, adj)

    # CPython heapq replication: push appends then bubbles up; pop moves the
    # last slot to the root and runs the transplant siftup.

    cdef inline void _slot_copy(self, long long dst, long long src) nogil:
        self.hp_negf[dst] = self.hp_negf[src]
        self.hp_negd[dst] = self.hp_negd[src]
        self.hp_gen[dst] = self.hp_gen[src]
        self.hp_node[dst] = self.hp_node[src]
        self.hp_ver[dst] = self.hp_ver[src]
        self.hp_adj[dst] = self.hp_adj[src]

    cdef inline void _slot_set(
        self, long long pos, double negf, long long negd, long long gen,
        long long node, long long ver, double adj,
    ) nogil:
        self.hp_negf[pos] = negf
        self.hp_negd[pos] = negd
        self.hp_gen[pos] = gen
        self.hp_node[pos] = node
        self.hp_ver[pos] = ver
        self.hp_adj[pos] = adj

    cdef void _heap_push(
        self, double negf, long long negd, long long gen,
        long long node, long long ver, double adj,
    ) except *:
        cdef long long cap
        if self.heap_len == self.heap_cap:
            cap = self.heap_cap * 2
            self.hp_negf = <double*> realloc(self.hp_negf, cap * sizeof(double))
            self.hp_negd = <long long*> realloc(self.hp_negd, cap * sizeof(long long))
            self.hp_gen = <long long*> realloc(self.hp_gen, cap * sizeof(long long))
            self.hp_node = <long long*> realloc(self.hp_node, cap * sizeof(long long))
            self.hp_ver = <long long*> realloc(self.hp_ver, cap * sizeof(long long))
            self.hp_adj = <double*> realloc(self.hp_adj, cap * sizeof(double))
            if (self.hp_negf is NULL or self.hp_negd is NULL or self.hp_gen is NULL
                    or self.hp_node is NULL or self.hp_ver is NULL
                    or self.hp_adj is NULL):
                raise MemoryError()
            self.heap_cap = cap
        cdef long long pos = self.heap_len
        self.heap_len += 1
        # siftdown(heap, 0, pos): bubble the new item toward the root
        cdef double negf_n = negf
        cdef long long negd_n = negd, gen_n = gen
        cdef long long parentpos
        while pos > 0:
            parentpos = (pos - 1) >> 1
            if _entry_less(
                negf_n, negd_n, gen_n,
                self.hp_negf[parentpos], self.hp_negd[parentpos], self.hp_gen[parentpos],
            ):
                self._slot_copy(pos, parentpos)
                pos = parentpos
                continue
            break
        self._slot_set(pos, negf, negd, gen, node, ver, adj)

    cdef void _heap_pop_root(self) nogil:
        """Remove the root; caller must have read its fields already."""
        cdef long long last = self.heap_len - 1
        self.heap_len = last
        if last == 0:
            return
        # move the former last element into the hole at 0 and transplant down
        cdef double negf = self.hp_negf[last]
        cdef long long negd = self.hp_negd[last]
        cdef long long gen = self.hp_gen[last]
        cdef long long node = self.hp_node[last]
        cdef long long ver = self.hp_ver[last]
        cdef double adj = self.hp_adj[last]
        cdef long long pos = 0, childpos = 1, rightpos, startpos = 0, parentpos
        cdef long long endpos = self.heap_len
        while childpos < endpos:
            rightpos = childpos + 1
            if rightpos < endpos and not _entry_less(
                self.hp_negf[childpos], self.hp_negd[childpos], self.hp_gen[childpos],
                self.hp_negf[rightpos], self.hp_negd[rightpos], self.hp_gen[rightpos],
            ):
                childpos = rightpos
            self._slot_copy(pos, childpos)
            pos = childpos
            childpos = 2 * pos + 1
        while pos > startpos:
            parentpos = (pos - 1) >> 1
            if _entry_less(
                negf, negd, gen,
                self.hp_negf[parentpos], self.hp_negd[parentpos], self.hp_gen[parentpos],
            ):
                self._slot_copy(pos, parentpos)
                pos = parentpos
                continue
            break
        self._slot_set(pos, negf, negd, gen, node, ver, adj)

    cdef void _reprice_entries(self, double* ns, double* nc, double* as_, double* ac) except *:
        cdef long long i, node
        cdef double contrib
        for i in range(self.heap_len):
            node = self.hp_node[i]
            _neum_add(ns, nc, self.np_ling[node])
            contrib = self.np_ling[node] * c_exp(self.h_cache[self.np_depth[node]])
            self.hp_adj[i] = contrib
            _neum_add(as_, ac, contrib)

    cdef int step_once(self) except -1:
        cdef long long node, ver, egen
        cdef double adj, nf, new_adj
        cdef int depth, var, ov, truth
        while True:
            if self.heap_len == 0:
                return REP_QUEUE_EMPTY
            node = self.hp_node[0]
            ver = self.hp_ver[0]
            egen = self.hp_gen[0]
            adj = self.hp_adj[0]
            self._heap_pop_root()
            if ver != self.h_version:
                # stale key: re-price, and requeue unless still on top
                nf = self.np_logg[node] + self.h_cache[self.np_depth[node]]
                if self.heap_len and nf < -self.hp_negf[0]:
                    new_adj = self.np_ling[node] * c_exp(self.h_cache[self.np_depth[node]])
                    _neum_add(&self.pqa_s, &self.pqa_c, -adj)
                    _neum_add(&self.pqa_s, &self.pqa_c, new_adj)
                    self._heap_push(
                        -nf, -self.np_depth[node], self.np_gen[node],
                        node, self.h_version, new_adj,
                    )
                    self.reinserted += 1
                    continue
            break
        _neum_add(&self.pqn_s, &self.pqn_c, -self.np_ling[node])
        _neum_add(&self.pqa_s, &self.pqa_c, -adj)
        self.steps += 1
        if self.debug_revisit:
            self._check_revisit(node)
        depth = self.np_depth[node]
        if depth > 0:
            var = depth - 1
            ov = self.obs[var]
            if ov >= 0 and self.np_val[node] != ov:
                self._handle_inconsistent(node)
                return REP_PROGRESS
        if depth == self.n:
            self._record_world(node)
            return REP_PROGRESS
        if self.has_query and depth > self.max_obs and depth > self.min_atom:
            self._fill_prefix(node)
            truth = self._eval_query(depth)
            if truth != TRI_UNKNOWN:
                _neum_add(&self.pwo_s, &self.pwo_c, self.np_ling[node])
                if truth == TRI_TRUE:
                    _neum_add(&self.pwg_s, &self.pwg_c, self.np_ling[node])
                self.pruned_decided += 1
                return REP_PROGRESS
        self._expand(node)
        return REP_PROGRESS

    cdef void _expand(self, long long node) except *:
        cdef int var = self.np_depth[node]
        cdef long long row = self._parent_row_base(node)
        cdef long long row_base = self.ent_off[var] + row * self.dom[var]
        cdef int normal = self.normal[self.row_off[var] + row]
        cdef int child_depth = var + 1
        cdef double h = self.h_cache[child_depth]
        cdef double eh = c_exp(h)
        cdef int v
        cdef double p, lg, child_lin, adj
        cdef long long child, fault
        for v in range(self.dom[var]):
            p = self.prob[row_base + v]
            if p <= 0.0:
                continue
            lg = self.np_logg[node] + self.log_prob[row_base + v]
            child_lin = self.np_ling[node] * p
            fault = self.np_fault[node]
            child = self._new_node(
                node, v, child_depth, lg, child_lin, fault, self.gen_counter
            )
            # rows without a defined normal value cannot be faulted
            if normal >= 0 and v != normal:
                self.np_fault[child] = child
            self.gen_counter += 1
            adj = child_lin * eh
            _neum_add(&self.pqn_s, &self.pqn_c, child_lin)
            _neum_add(&self.pqa_s, &self.pqa_c, adj)
            self._heap_push(
                -(lg + h), -child_depth, self.np_gen[child], child, self.h_version, adj
            )
        self.expansions += 1


cdef class _Deepening(_Run):
    """Threshold-deepening run; frontier suppressed below the round bound."""

    cdef long long* st_node
    cdef long long* st_ver
    cdef double* st_adj
    cdef long long st_len, st_cap
    cdef long long* su_node
    cdef long long* su_ver
    cdef double* su_adj
    cdef long long su_len, su_cap
    cdef double log_threshold, log_multiplier

    def __cinit__(self):
        self.st_node = NULL
        self.st_ver = NULL
        self.st_adj = NULL
        self.su_node = NULL
        self.su_ver = NULL
        self.su_adj = NULL

    def __dealloc__(self):
        free(self.st_node)
        free(self.st_ver)
        free(self.st_adj)
        free(self.su_node)
        free(self.su_ver)
        free(self.su_adj)

    def __init__(self, inputs, cfg):
        _Run.__init__(self, inputs, cfg, "iddfs")
        if cfg.iddfs_log_threshold is not None:
            self.log_threshold = cfg.iddfs_log_threshold
        else:
            self.log_threshold = self.h_cache[0]
        if not (0.0 < cfg.iddfs_multiplier < 1.0):
            raise ValueError("iddfs multiplier must be in (0, 1)")
        self.log_multiplier = c_log(cfg.iddfs_multiplier)
        self.st_cap = 1024
        self.st_len = 0
        self.st_node = <long long*> malloc(self.st_cap * sizeof(long long))
        self.st_ver = <long long*> malloc(self.st_cap * sizeof(long long))
        self.st_adj = <double*> malloc(self.st_cap * sizeof(double))
        self.su_cap = 1024
        self.su_len = 0
        self.su_node = <long long*> malloc(self.su_cap * sizeof(long long))
        self.su_ver = <long long*> malloc(self.su_cap * sizeof(long long))
        self.su_adj = <double*> malloc(self.su_cap * sizeof(double))
        if (self.st_node is NULL or self.st_ver is NULL or self.st_adj is NULL
                or self.su_node is NULL or self.su_ver is NULL or self.su_adj is NULL):
            raise MemoryError()
        cdef long long root = self._new_node(-1, -1, 0, 0.0, 1.0, -1, 0)
        self.gen_counter = 1
        cdef double adj = 1.0 * c_exp(self.h_cache[0])
        _neum_add(&self.pqn_s, &self.pqn_c, 1.0)
        _neum_add(&self.pqa_s, &self.pqa_c, adj)
        self._stack_push(root, self.h_version, adj)

    cdef void _stack_push(self, long long node, long long ver, double adj) except *:
        cdef long long cap
        if self.st_len == self.st_cap:
            cap = self.st_cap * 2
            self.st_node = <long long*> realloc(self.st_node, cap * sizeof(long long))
            self.st_ver = <long long*> realloc(self.st_ver, cap * sizeof(long long))
            self.st_adj = <double*> realloc(self.st_adj, cap * sizeof(double))
            if self.st_node is NULL or self.st_ver is NULL or self.st_adj is NULL:
                raise MemoryError()
            self.st_cap = cap
        self.st_node[self.st_len] = node
        self.st_ver[self.st_len] = ver
        self.st_adj[self.st_len] = adj
        self.st_len += 1

    cdef void _suppressed_push(self, long long node, long long ver, double adj) except *:
        cdef long long cap
        if self.su_len == self.su_cap:
            cap = self.su_cap * 2
            self.su_node = <long long*> realloc(self.su_node, cap * sizeof(long long))
            self.su_ver = <long long*> realloc(self.su_ver, cap * sizeof(long long))
            self.su_adj = <double*> realloc(self.su_adj, cap * sizeof(double))
            if self.su_node is NULL or self.su_ver is NULL or self.su_adj is NULL:
                raise MemoryError()
            self.su_cap = cap
        self.su_node[self.su_len] = node
        self.su_ver[self.su_len] = ver
        self.su_adj[self.su_len] = adj
        self.su_len += 1

    cdef void _reprice_entries(self, double* ns, double* nc, double* as_, double* ac) except *:
        cdef long long i, node
        cdef double contrib
        for i in range(self.st_len):
            node = self.st_node[i]
            _neum_add(ns, nc, self.np_ling[node])
            contrib = self.np_ling[node] * c_exp(self.h_cache[self.np_depth[node]])
            self.st_adj[i] = contrib
            _neum_add(as_, ac, contrib)
        for i in range(self.su_len):
            node = self.su_node[i]
            _neum_add(ns, nc, self.np_ling[node])
            contrib = self.np_ling[node] * c_exp(self.h_cache[self.np_depth[node]])
            self.su_adj[i] = contrib
            _neum_add(as_, ac, contrib)

    cdef void _resume_round(self) except *:
        """Sort the suppressed frontier best-first and make it the new stack.

        Popping from the stack end then yields decreasing bound, ties to the
        earliest-generated entry.
        """
        self.rounds += 1
        self.log_threshold += self.log_multiplier
        cdef long long count = self.su_len
        fs = np.empty(count, dtype=np.float64)
        neggen = np.empty(count, dtype=np.int64)
        cdef double[::1] fv = fs
        cdef cnp.int64_t[::1] gv = neggen
        cdef long long i, node
        for i in range(count):
            node = self.su_node[i]
            fv[i] = self.np_logg[node] + self.h_cache[self.np_depth[node]]
            gv[i] = -self.np_gen[node]
        order = np.lexsort((neggen, fs))
        cdef cnp.int64_t[::1] ov = order
        # permute the suppressed entries into the stack buffers
        if self.st_cap < count:
            while self.st_cap < count:
                self.st_cap *= 2
            self.st_node = <long long*> realloc(self.st_node, self.st_cap * sizeof(long long))
            self.st_ver = <long long*> realloc(self.st_ver, self.st_cap * sizeof(long long))
            self.st_adj = <double*> realloc(self.st_adj, self.st_cap * sizeof(double))
            if self.st_node is NULL or self.st_ver is NULL or self.st_adj is NULL:
                raise MemoryError()
        for i in range(count):
            self.st_node[i] = self.su_node[ov[i]]
            self.st_ver[i] = self.su_ver[ov[i]]
            self.st_adj[i] = self.su_adj[ov[i]]
        self.st_len = count
        self.su_len = 0

    cdef int step_once(self) except -1:
        cdef long long node, ver
        cdef double adj, f
        cdef int depth, var, ov, truth
        while True:
            if self.st_len == 0:
                if (
                    self.certify
                    and self.has_max_worlds
                    and self.worlds_found >= self.max_worlds
                ):
                    self.stop_reason = "max_worlds"
                    return REP_INTERNAL_STOP
                if self.su_len == 0:
                    return REP_QUEUE_EMPTY
                self._resume_round()
                continue
            self.st_len -= 1
            node = self.st_node[self.st_len]
            ver = self.st_ver[self.st_len]
            adj = self.st_adj[self.st_len]
            f = self.np_logg[node] + self.h_cache[self.np_depth[node]]
            if f < self.log_threshold:
                self._suppressed_push(node, ver, adj)
                continue
            break
        _neum_add(&self.pqn_s, &self.pqn_c, -self.np_ling[node])
        _neum_add(&self.pqa_s, &self.pqa_c, -adj)
        self.steps += 1
        if self.debug_revisit:
            self._check_revisit(node)
        depth = self.np_depth[node]
        if depth > 0:
            var = depth - 1
            ov = self.obs[var]
            if ov >= 0 and self.np_val[node] != ov:
                self._handle_inconsistent(node)
                return REP_PROGRESS
        if depth == self.n:
            self._record_world(node)
            return REP_PROGRESS
        if self.has_query and depth > self.max_obs and depth > self.min_atom:
            self._fill_prefix(node)
            truth = self._eval_query(depth)
            if truth != TRI_UNKNOWN:
                _neum_add(&self.pwo_s, &self.pwo_c, self.np_ling[node])
                if truth == TRI_TRUE:
                    _neum_add(&self.pwg_s, &self.pwg_c, self.np_ling[node])
                self.pruned_decided += 1
                return REP_PROGRESS
        self._expand(node)
        return REP_PROGRESS

    cdef void _expand(self, long long node) except *:
        cdef int var = self.np_depth[node]
        cdef long long row = self._parent_row_base(node)
        cdef long long row_base = self.ent_off[var] + row * self.dom[var]
        cdef int normal = self.normal[self.row_off[var] + row]
        cdef int child_depth = var + 1
        cdef double h = self.h_cache[child_depth]
        cdef double eh = c_exp(h)
        cdef int v
        cdef double p, lg, child_lin, adj
        cdef long long child, fault
        # reversed push so the lowest value index pops first
        for v in range(self.dom[var] - 1, -1, -1):
            p = self.prob[row_base + v]
            if p <= 0.0:
                continue
            lg = self.np_logg[node] + self.log_prob[row_base + v]
            child_lin = self.np_ling[node] * p
            fault = self.np_fault[node]
            child = self._new_node(
                node, v, child_depth, lg, child_lin, fault, self.gen_counter
            )
            if normal >= 0 and v != normal:
                self.np_fault[child] = child
            self.gen_counter += 1
            adj = child_lin * eh
            _neum_add(&self.pqn_s, &self.pqn_c, child_lin)
            _neum_add(&self.pqa_s, &self.pqa_c, adj)
            if lg + h >= self.log_threshold:
                self._stack_push(child, self.h_version, adj)
            else:
                self._suppressed_push(child, self.h_version, adj)
        self.expansions += 1


def run(inputs, cfg, str strategy):
    """Full search run on the compiled engine; same result type as the pure one."""
    if strategy == "iddfs":
        return _Deepening(inputs, cfg).run()
    if strategy == "bestfirst":
        return _BestFirst(inputs, cfg).run()
    raise ValueError(f"unknown strategy {strategy!r}")
