"""Array-backed unit-capacity residual graph.

One storage serves both the circulation graph (all flows zero) and its
residual graph: an edge with ``flow == 0`` is the forward residual edge at
``+cost``; with ``flow == 1`` it is the reversed edge at ``-cost``. Arrays
grow by doubling and dead entries are compacted away in bulk so the
numeric kernels can walk plain contiguous arrays.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

SOURCE = 0
ENTRY, INCLUSION, TRANSITION, EXIT = 0, 1, 2, 3
NODE_S, NODE_U, NODE_V = 0, 1, 2


class InvariantError(RuntimeError):
    """Raised when a flow or residual-graph invariant is breached."""


class Cycle(NamedTuple):
    edges: np.ndarray  # edge ids, in traversal order
    forward: np.ndarray  # True where the edge is traversed src -> dst
    nodes: np.ndarray  # tail node of each traversed edge
    cost: float


def _grow(a: np.ndarray, n: int, fill) -> np.ndarray:
    out = np.full(n, fill, dtype=a.dtype)
    out[: a.size] = a
    return out


class ResidualGraph:
    def __init__(self, node_cap: int = 64, edge_cap: int = 256):
        node_cap = max(node_cap, 2)
        edge_cap = max(edge_cap, 2)
        self.head = np.full(node_cap, -1, dtype=np.int64)
        self.node_alive = np.zeros(node_cap, dtype=np.bool_)
        self.node_kind = np.zeros(node_cap, dtype=np.int8)
        self.node_owner = np.full(node_cap, -1, dtype=np.int64)
        self.pi = np.zeros(node_cap)
        self.src = np.zeros(edge_cap, dtype=np.int64)
        self.dst = np.zeros(edge_cap, dtype=np.int64)
        self.cost = np.zeros(edge_cap)
        self.flow = np.zeros(edge_cap, dtype=np.int8)
        self.alive = np.zeros(edge_cap, dtype=np.bool_)
        self.kind = np.zeros(edge_cap, dtype=np.int8)
        self.nxt = np.full(2 * edge_cap, -1, dtype=np.int64)
        self.n_nodes = 1
        self.n_edges = 0
        self.n_dead_nodes = 0
        self.n_dead_edges = 0
        self.node_alive[SOURCE] = True
        self.node_kind[SOURCE] = NODE_S

    # -- construction -------------------------------------------------------
    def add_node(self, kind: int, owner: int = -1) -> int:
        if self.n_nodes == self.head.size:
            cap = 2 * self.head.size
            self.head = _grow(self.head, cap, -1)
            self.node_alive = _grow(self.node_alive, cap, False)
            self.node_kind = _grow(self.node_kind, cap, 0)
            self.node_owner = _grow(self.node_owner, cap, -1)
            self.pi = _grow(self.pi, cap, 0.0)
        v = self.n_nodes
        self.n_nodes += 1
        self.node_alive[v] = True
        self.node_kind[v] = kind
        self.node_owner[v] = owner
        self.head[v] = -1
        self.pi[v] = 0.0
        return v

    def add_edge(self, a: int, b: int, cost: float, kind: int) -> int:
        if self.n_edges == self.src.size:
            cap = 2 * self.src.size
            self.src = _grow(self.src, cap, 0)
            self.dst = _grow(self.dst, cap, 0)
            self.cost = _grow(self.cost, cap, 0.0)
            self.flow = _grow(self.flow, cap, 0)
            self.alive = _grow(self.alive, cap, False)
            self.kind = _grow(self.kind, cap, 0)
            self.nxt = _grow(self.nxt, 2 * cap, -1)
        e = self.n_edges
        self.n_edges += 1
        self.src[e] = a
        self.dst[e] = b
        self.cost[e] = cost
        self.flow[e] = 0
        self.alive[e] = True
        self.kind[e] = kind
        self.nxt[2 * e] = self.head[a]
        self.head[a] = 2 * e
        self.nxt[2 * e + 1] = self.head[b]
        self.head[b] = 2 * e + 1
        return e

    def incident(self, v: int):
        """Yield ``(edge, at_src)`` for live edges touching ``v``."""
        slot = int(self.head[v])
        nxt, alive = self.nxt, self.alive
        while slot >= 0:
            e = slot >> 1
            if alive[e]:
                yield e, (slot & 1) == 0
            slot = int(nxt[slot])

    def remove_node(self, v: int):
        if v == SOURCE:
            raise InvariantError("cannot remove the source node")
        for e, _ in list(self.incident(v)):
            self.alive[e] = False
            self.n_dead_edges += 1
        self.node_alive[v] = False
        self.n_dead_nodes += 1

    # -- views ---------------------------------------------------------------
    def arrays(self):
        n, m = self.n_nodes, self.n_edges
        return (self.head[:n], self.nxt[: 2 * m], self.src[:m], self.dst[:m],
                self.cost[:m], self.flow[:m], self.alive[:m])

    @property
    def num_nodes(self) -> int:
        return self.n_nodes - self.n_dead_nodes

    @property
    def num_edges(self) -> int:
        return self.n_edges - self.n_dead_edges

    def total_cost(self) -> float:
        m = self.n_edges
        live = self.alive[:m] & (self.flow[:m] == 1)
        return float(self.cost[:m][live].sum())

    def residual(self, e: int):
        """``(tail, head, cost)`` of the current residual edge for ``e``."""
        if self.flow[e] == 0:
            return int(self.src[e]), int(self.dst[e]), float(self.cost[e])
        return int(self.dst[e]), int(self.src[e]), -float(self.cost[e])

    def make_cycle(self, edges) -> Cycle:
        edges = np.asarray(edges, dtype=np.int64)
        fwd = self.flow[edges] == 0
        tails = np.where(fwd, self.src[edges], self.dst[edges])
        cost = float(np.where(fwd, self.cost[edges], -self.cost[edges]).sum())
        return Cycle(edges, fwd, tails, cost)

    def node_imbalance(self) -> np.ndarray:
        """Inflow minus outflow per node (zero everywhere for a circulation)."""
        m = self.n_edges
        f = (self.alive[:m] & (self.flow[:m] == 1)).astype(np.int64)
        bal = np.zeros(self.n_nodes, dtype=np.int64)
        np.add.at(bal, self.dst[:m], f)
        np.subtract.at(bal, self.src[:m], f)
        return bal

    # -- maintenance ---------------------------------------------------------
    def compact(self):
        """Drop dead nodes and edges; return ``(node_map, edge_map)``.

        The maps send old ids to new ids, or -1 for removed entries.
        """
        n, m = self.n_nodes, self.n_edges
        keep_n = self.node_alive[:n].copy()
        keep_e = self.alive[:m].copy()
        node_map = np.full(n, -1, dtype=np.int64)
        node_map[keep_n] = np.arange(int(keep_n.sum()))
        edge_map = np.full(m, -1, dtype=np.int64)
        edge_map[keep_e] = np.arange(int(keep_e.sum()))

        nn = int(keep_n.sum())
        mm = int(keep_e.sum())
        ncap = max(64, 2 * nn)
        ecap = max(256, 2 * mm)
        pi = np.zeros(ncap)
        pi[:nn] = self.pi[:n][keep_n]
        kind_n = np.zeros(ncap, dtype=np.int8)
        kind_n[:nn] = self.node_kind[:n][keep_n]
        owner = np.full(ncap, -1, dtype=np.int64)
        owner[:nn] = self.node_owner[:n][keep_n]
        alive_n = np.zeros(ncap, dtype=np.bool_)
        alive_n[:nn] = True

        src = np.zeros(ecap, dtype=np.int64)
        dst = np.zeros(ecap, dtype=np.int64)
        src[:mm] = node_map[self.src[:m][keep_e]]
        dst[:mm] = node_map[self.dst[:m][keep_e]]
        cost = np.zeros(ecap)
        cost[:mm] = self.cost[:m][keep_e]
        flow = np.zeros(ecap, dtype=np.int8)
        flow[:mm] = self.flow[:m][keep_e]
        kind = np.zeros(ecap, dtype=np.int8)
        kind[:mm] = self.kind[:m][keep_e]
        alive = np.zeros(ecap, dtype=np.bool_)
        alive[:mm] = True

        # rebuild forward-star lists, newest edge first as add_edge would
        slots = np.arange(2 * mm, dtype=np.int64)
        owner_node = np.empty(2 * mm, dtype=np.int64)
        owner_node[0::2] = src[:mm]
        owner_node[1::2] = dst[:mm]
        order = np.lexsort((-slots, owner_node))
        s_sorted = slots[order]
        n_sorted = owner_node[order]
        nxt = np.full(2 * ecap, -1, dtype=np.int64)
        same = np.zeros(s_sorted.size, dtype=bool)
        same[:-1] = n_sorted[1:] == n_sorted[:-1]
        nxt[s_sorted[:-1][same[:-1]]] = s_sorted[1:][same[:-1]]
        head = np.full(ncap, -1, dtype=np.int64)
        first = np.ones(s_sorted.size, dtype=bool)
        first[1:] = n_sorted[1:] != n_sorted[:-1]
        head[n_sorted[first]] = s_sorted[first]

        self.head, self.node_alive, self.node_kind, self.node_owner, self.pi = head, alive_n, kind_n, owner, pi
        self.src, self.dst, self.cost, self.flow, self.alive, self.kind, self.nxt = src, dst, cost, flow, alive, kind, nxt
        self.n_nodes, self.n_edges = nn, mm
        self.n_dead_nodes = self.n_dead_edges = 0
        return node_map, edge_map


CirculationGraph = ResidualGraph
