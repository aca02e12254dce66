"""Flat array form of a network, shared by the pure and compiled engines.

Both engines must perform bit-identical arithmetic, so probabilities and
their logs are materialized once here and only read afterwards.
"""

from __future__ import annotations

import numpy as np

from .model import Network, compile_formula


class EngineTables:
    """Dense arrays describing one network at one normality threshold."""

    def __init__(self, net: Network, epsilon: float):
        self.net = net
        self.epsilon = epsilon
        n = net.n
        self.n = n
        self.dom = np.array([net.domain_size(i) for i in range(n)], dtype=np.int32)

        par_off = np.zeros(n + 1, dtype=np.int64)
        par_flat: list[int] = []
        stride_flat: list[int] = []
        for i in range(n):
            cpt = net.cpts[i]
            par_off[i + 1] = par_off[i] + len(cpt.parent_indices)
            par_flat.extend(cpt.parent_indices)
            stride_flat.extend(cpt._strides)
        self.par_off = par_off
        self.par_flat = np.array(par_flat, dtype=np.int32)
        self.stride_flat = np.array(stride_flat, dtype=np.int64)

        ent_off = np.zeros(n + 1, dtype=np.int64)
        row_off = np.zeros(n + 1, dtype=np.int64)
        for i in range(n):
            cpt = net.cpts[i]
            ent_off[i + 1] = ent_off[i] + cpt.table.size
            row_off[i + 1] = row_off[i] + cpt.n_rows
        self.ent_off = ent_off
        self.row_off = row_off
        prob = np.empty(int(ent_off[n]), dtype=np.float64)
        normal = np.empty(int(row_off[n]), dtype=np.int32)
        for i in range(n):
            cpt = net.cpts[i]
            prob[int(ent_off[i]): int(ent_off[i + 1])] = cpt.table.reshape(-1)
            normal[int(row_off[i]): int(row_off[i + 1])] = cpt.normal_values(epsilon)
        self.prob = prob
        with np.errstate(divide="ignore"):
            self.log_prob = np.log(prob)
        self.normal = normal

        # earliest variable a row lookup can depend on, for short ancestor walks
        min_parent = np.empty(n, dtype=np.int32)
        for i in range(n):
            ps = net.cpts[i].parent_indices
            min_parent[i] = min(ps) if ps else i
        self.min_parent = min_parent

    def row_of(self, var: int, values) -> int:
        """Row index for `var` given a full prefix of value indices."""
        base = 0
        for k in range(int(self.par_off[var]), int(self.par_off[var + 1])):
            base += int(values[self.par_flat[k]]) * int(self.stride_flat[k])
        return base


def prepared_query(net: Network, query) -> tuple[np.ndarray, int]:
    """Compiled postfix program and the smallest variable it mentions."""
    prog = compile_formula(query)
    if prog.shape[0] == 0:
        return prog, net.n
    atom_rows = prog[prog[:, 0] == 0]
    min_atom = int(atom_rows[:, 1].min()) if atom_rows.size else net.n
    return prog, min_atom
