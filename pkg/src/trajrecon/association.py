"""Fragment association as a min-cost circulation.

Each fragment ``i`` contributes an entry node ``u_i`` and a leave node
``v_i``. Edges: source -> u (entry), u -> v (inclusion, negative when the
fragment is probably real), v_i -> u_j (transition) and v -> source (exit).
Every unit of flow through the source traces one trajectory.

Two solvers share one graph store:

* :func:`ncc_batch` cancels Bellman-Ford negative cycles until none remain.
* :class:`AssociationState` inserts fragments one at a time in order of
  their last timestamp. New edges only ever enter ``u_k``, so any negative
  cycle created by an insertion runs ``s ~> w -> u_k -> v_k -> s``. The
  cheapest one is found with Dijkstra over reduced costs, which is valid
  because node potentials are maintained between insertions.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np

from . import _kernels
from .core import Fragment
from .costs import CostModelParams, fit_motion, node_costs, transition_cost, transition_costs_from
from .graph import (ENTRY, EXIT, INCLUSION, NODE_U, NODE_V, SOURCE, TRANSITION, CirculationGraph, Cycle,
                    InvariantError, ResidualGraph)

log = logging.getLogger(__name__)

EPS = 1e-9
_RELAX_TOL = 1e-12


class WatermarkError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SuperFragment:
    """An already-associated chain handled as a single unit.

    Links into the chain are scored against its first fragment and links
    out of it against its last fragment. ``inclusion_cost`` is the chain's
    internal cost (inclusions plus internal transitions).
    """

    id: str
    fragments: tuple
    inclusion_cost: float

    @property
    def first(self) -> Fragment:
        return self.fragments[0]

    @property
    def last(self) -> Fragment:
        return self.fragments[-1]

    @property
    def t_start(self) -> float:
        return self.first.t_start

    @property
    def t_end(self) -> float:
        return self.last.t_end

    @property
    def direction(self) -> int:
        return self.first.direction

    @property
    def member_ids(self) -> list[str]:
        return [f.id for f in self.fragments]


Unit = Union[Fragment, SuperFragment]


def _unit_parts(unit: Unit, c_incl: float):
    if isinstance(unit, SuperFragment):
        return unit.member_ids, unit.first, unit.last, unit.inclusion_cost
    return [unit.id], unit, unit, c_incl


def chain_cost(fragments: Sequence[Fragment], params: CostModelParams, with_terminals: bool = False) -> float:
    """Cost of routing one unit of flow through ``fragments`` in order.

    Raises ``ValueError`` if a consecutive pair has no feasible edge.
    """
    c_en, c_ex, c_incl = node_costs(params)
    total = c_incl * len(fragments)
    for a, b in zip(fragments[:-1], fragments[1:]):
        c = transition_cost(a, b, params)
        if c is None:
            raise ValueError(f"no feasible transition {a.id!r} -> {b.id!r}")
        total += c
    if with_terminals and fragments:
        total += c_en + c_ex
    return total


# ---------------------------------------------------------------------------
# batch solver


def _transition_edges(units: Sequence[Unit], params: CostModelParams):
    """All feasible ``(i, j, cost)`` transitions between units."""
    if not units:
        return []
    lasts = [_unit_parts(u, 0.0)[2] for u in units]
    firsts = [_unit_parts(u, 0.0)[1] for u in units]
    t_end = np.array([f.t_end for f in lasts])
    dirs = np.array([f.direction for f in lasts])
    ests = np.array([tuple(fit_motion(f, params.nominal_speed)) for f in lasts])
    order = np.argsort(t_end, kind="stable")
    t_sorted = t_end[order]
    out = []
    for j, fj in enumerate(firsts):
        lo = np.searchsorted(t_sorted, fj.t_start - params.max_gap, side="left")
        hi = np.searchsorted(t_sorted, fj.t_start, side="left")
        idx = order[lo:hi]
        idx = idx[(dirs[idx] == fj.direction) & (idx != j)]
        if idx.size:
            costs = transition_costs_from(ests[idx], t_end[idx], fj, params)
            for i, c in zip(idx.tolist(), costs.tolist()):
                if not math.isnan(c):
                    out.append((i, j, c))
        if params.max_overlap > 0:
            hi2 = np.searchsorted(t_sorted, fj.t_start + params.max_overlap, side="right")
            for i in order[hi:hi2].tolist():
                if i == j or dirs[i] != fj.direction:
                    continue
                c = transition_cost(lasts[i], fj, params)
                if c is not None and lasts[i].t_end < _unit_parts(units[j], 0.0)[2].t_end:
                    out.append((i, j, c))
    out.sort(key=lambda r: (r[1], r[0]))
    return out


def construct_graph(fragments: Iterable[Unit], params: CostModelParams | None = None) -> CirculationGraph:
    """Build the circulation graph with zero flow.

    ``g.node_owner`` maps u/v nodes back to the input position, and
    ``g.members[k]`` lists the fragment ids carried by unit ``k``.
    """
    params = params or CostModelParams()
    units = list(fragments)
    c_en, c_ex, c_incl = node_costs(params)
    n = len(units)
    g = ResidualGraph(node_cap=2 * n + 1, edge_cap=4 * n + 4)
    g.members = []
    g.anchors = {}
    u_nodes, v_nodes = [], []
    for k, unit in enumerate(units):
        members, _, _, incl = _unit_parts(unit, c_incl)
        g.members.append(members)
        u = g.add_node(NODE_U, k)
        v = g.add_node(NODE_V, k)
        u_nodes.append(u)
        v_nodes.append(v)
        g.add_edge(SOURCE, u, c_en, ENTRY)
        g.add_edge(u, v, incl, INCLUSION)
        g.add_edge(v, SOURCE, c_ex, EXIT)
    for i, j, c in _transition_edges(units, params):
        g.add_edge(v_nodes[i], u_nodes[j], c, TRANSITION)
    return g


def find_negative_cycle(g: ResidualGraph) -> Cycle | None:
    """Bellman-Ford search for a residual cycle of cost below ``-EPS``."""
    if g.n_edges == 0:
        return None
    _, _, src, dst, cost, flow, alive = g.arrays()
    edges = _kernels.bellman_ford_negative_cycle(g.n_nodes, src, dst, cost, flow, alive, _RELAX_TOL)
    if edges.size == 0:
        return None
    cyc = g.make_cycle(edges)
    if cyc.cost >= -EPS:
        return None
    return cyc


def push_flow(g: ResidualGraph, cycle: Cycle) -> ResidualGraph:
    """Reverse every edge of ``cycle`` in the residual graph."""
    e = cycle.edges
    if e.size == 0:
        return g
    if not np.all(g.alive[e]):
        raise InvariantError("cycle uses a removed edge")
    if not np.array_equal(g.flow[e] == 0, cycle.forward):
        raise InvariantError("cycle edge has no residual capacity")
    tails = np.where(cycle.forward, g.src[e], g.dst[e])
    heads = np.where(cycle.forward, g.dst[e], g.src[e])
    if not np.array_equal(np.roll(heads, 1), tails):
        raise InvariantError("cycle is not a closed walk")
    g.flow[e] ^= 1
    return g


def _out_flow_edge(g: ResidualGraph, node: int, kinds) -> int:
    for e, at_src in g.incident(node):
        if at_src and g.flow[e] == 1 and g.kind[e] in kinds:
            return e
    return -1


def flow_to_trajectories(g: ResidualGraph) -> list[list[str]]:
    """Trace each unit of circulation from the source into a chain."""
    anchors = getattr(g, "anchors", {})
    members = g.members
    m = g.n_edges
    starts = []
    live = np.flatnonzero(g.alive[:m] & (g.flow[:m] == 1) & (g.kind[:m] == ENTRY))
    for e in live.tolist():
        starts.append(int(g.dst[e]))
    for owner, (node, _, _) in anchors.items():
        starts.append(node)
    starts.sort(key=lambda u: g.node_owner[u])
    chains = []
    limit = g.n_nodes
    for u in starts:
        owner = int(g.node_owner[u])
        chain = list(anchors[owner][1]) if owner in anchors else []
        steps = 0
        while True:
            steps += 1
            if steps > limit:
                raise InvariantError("malformed flow: trace does not return to the source")
            e = _out_flow_edge(g, u, (INCLUSION,))
            if e < 0:
                raise InvariantError("malformed flow: entered fragment is not included")
            chain.extend(members[int(g.node_owner[u])])
            v = int(g.dst[e])
            e = _out_flow_edge(g, v, (TRANSITION, EXIT))
            if e < 0:
                raise InvariantError("malformed flow: trace does not return to the source")
            if g.kind[e] == EXIT:
                break
            u = int(g.dst[e])
        chains.append(chain)
    return chains


@dataclass
class BatchResult:
    chains: list
    cost: float
    graph: ResidualGraph
    n_cycles: int


def solve_batch(fragments: Iterable[Unit], params: CostModelParams | None = None) -> BatchResult:
    g = construct_graph(fragments, params)
    n = 0
    while True:
        cyc = find_negative_cycle(g)
        if cyc is None:
            break
        push_flow(g, cyc)
        n += 1
    return BatchResult(flow_to_trajectories(g), g.total_cost(), g, n)


def ncc_batch(fragments: Iterable[Unit], params: CostModelParams | None = None) -> list[list[str]]:
    """Globally optimal chains by negative cycle canceling."""
    return solve_batch(fragments, params).chains


# ---------------------------------------------------------------------------
# online solver


class _Columns:
    """Growable per-unit numeric columns."""

    def __init__(self, cap: int = 256):
        self.n = 0
        self.cols = {
            "u": np.zeros(cap, np.int64), "v": np.zeros(cap, np.int64),
            "e_en": np.zeros(cap, np.int64), "e_in": np.zeros(cap, np.int64), "e_ex": np.zeros(cap, np.int64),
            "t_end": np.zeros(cap), "t_start": np.zeros(cap), "dir": np.zeros(cap, np.int8),
            "alive": np.zeros(cap, np.bool_), "est": np.zeros((cap, 4)),
        }

    def append(self) -> int:
        if self.n == self.cols["u"].shape[0]:
            for k, a in self.cols.items():
                b = np.zeros((2 * a.shape[0],) + a.shape[1:], a.dtype)
                b[: a.shape[0]] = a
                self.cols[k] = b
        self.n += 1
        return self.n - 1

    def __getitem__(self, k):
        return self.cols[k]


class AssociationState:
    """Incremental min-cost circulation with bounded memory.

    Insert fragments (or super-fragments) in nondecreasing last-timestamp
    order with :meth:`add`. :meth:`evict` finalizes chains that ended more
    than ``horizon`` seconds before the watermark, and collapses old chain
    prefixes so that only units ending inside the horizon stay resident.
    """

    def __init__(self, params: CostModelParams | None = None, horizon: float = 60.0):
        self.params = params or CostModelParams()
        if not horizon > 0:
            raise ValueError("horizon must be positive")
        self.horizon = float(horizon)
        self.c_en, self.c_ex, self.c_incl = node_costs(self.params)
        self.graph = ResidualGraph()
        self.graph.members = []
        self.graph.anchors = {}  # owner -> (u node, prefix ids, prefix cost)
        self.cols = _Columns()
        self.first: list[Fragment] = []
        self.last: list[Fragment] = []
        self.unit_ids: list[str] = []
        self.watermark = -math.inf
        self.finalized: list[list[str]] = []
        self.excluded: list[str] = []
        self.frozen_cost = 0.0
        self.resident = 0
        self.peak_resident = 0
        self.n_added = 0
        self.n_canceled = 0
        self._evict_ptr = 0
        self._active_lo = 0

    # -- queries -------------------------------------------------------------
    @property
    def fragment_map(self) -> dict:
        c = self.cols
        return {self.unit_ids[k]: (int(c["u"][k]), int(c["v"][k]))
                for k in range(c.n) if c["alive"][k]}

    def total_cost(self) -> float:
        anchored = sum(a[2] for a in self.graph.anchors.values())
        return self.graph.total_cost() + anchored + self.frozen_cost

    def active_chains(self) -> list[list[str]]:
        return flow_to_trajectories(self.graph)

    def chains(self) -> list[list[str]]:
        """Finalized plus currently active chains."""
        return self.finalized + self.active_chains()

    # -- insertion -----------------------------------------------------------
    def _candidates(self, first: Fragment, k: int):
        c, p = self.cols, self.params
        n = k
        t_end = c["t_end"][:n]
        lo = int(np.searchsorted(t_end, first.t_start - p.max_gap, side="left"))
        lo = max(lo, self._active_lo)
        hi = int(np.searchsorted(t_end, first.t_start, side="left"))
        idx = np.arange(lo, hi)
        idx = idx[c["alive"][lo:hi] & (c["dir"][lo:hi] == first.direction)]
        cand, costs = [], []
        if idx.size:
            cc = transition_costs_from(c["est"][idx], t_end[idx], first, p)
            ok = ~np.isnan(cc)
            cand.append(idx[ok])
            costs.append(cc[ok])
        if p.max_overlap > 0:
            hi2 = int(np.searchsorted(t_end, first.t_start + p.max_overlap, side="right"))
            t_new = c["t_end"][k]
            extra_i, extra_c = [], []
            for i in range(max(hi, self._active_lo), hi2):
                if not c["alive"][i] or c["dir"][i] != first.direction or not t_end[i] < t_new:
                    continue
                cost = transition_cost(self.last[i], first, p)
                if cost is not None:
                    extra_i.append(i)
                    extra_c.append(cost)
            if extra_i:
                cand.append(np.array(extra_i, dtype=np.int64))
                costs.append(np.array(extra_c))
        if not cand:
            return np.zeros(0, np.int64), np.zeros(0)
        return np.concatenate(cand), np.concatenate(costs)

    def add(self, unit: Unit) -> Cycle | None:
        """Insert one unit; return the canceled cycle, if any."""
        members, first, last, c_incl = _unit_parts(unit, self.c_incl)
        t_end = last.t_end
        if t_end < self.watermark:
            raise WatermarkError(f"watermark violation: {unit.id!r} ends at {t_end} < {self.watermark}")
        g, c = self.graph, self.cols
        k = c.append()
        c["t_end"][k] = t_end
        c["t_start"][k] = first.t_start
        c["dir"][k] = first.direction
        c["est"][k] = tuple(fit_motion(last, self.params.nominal_speed))
        self.first.append(first)
        self.last.append(last)
        self.unit_ids.append(unit.id)
        g.members.append(members)

        cand, costs = self._candidates(first, k)
        best, best_i = self.c_en, -1
        pred = None
        if cand.size:
            vnodes = c["v"][cand]
            n = g.n_nodes
            is_target = np.zeros(n, dtype=np.bool_)
            is_target[vnodes] = True
            head, nxt, src, dst, cost, flow, alive = g.arrays()
            pi = g.pi[:n]
            dist, pred, done, last_key = _kernels.dijkstra_reduced(
                head, nxt, src, dst, cost, flow, alive, pi, SOURCE, is_target, int(vnodes.size))
            reach = done[vnodes]
            # true shortest distance = reduced distance + pi(v) - pi(s), pi(s) == 0
            tot = np.where(reach, dist[vnodes] + pi[vnodes], np.inf) + costs
            j = int(np.argmin(tot))
            if tot[j] < best:
                best, best_i = float(tot[j]), j
            pi[done] += dist[done]
            pi[~done] += last_key
            if not reach.all():
                # Nodes unreachable from s can be lifted together; keep them
                # from undercutting the new entry node's potential.
                lift = float(np.max(best - (pi[vnodes[~reach]] + costs[~reach])))
                if lift > 0:
                    pi[~done] += lift
        pot_in = best

        uk = g.add_node(NODE_U, k)
        vk = g.add_node(NODE_V, k)
        c["u"][k], c["v"][k] = uk, vk
        e_en = g.add_edge(SOURCE, uk, self.c_en, ENTRY)
        e_in = g.add_edge(uk, vk, c_incl, INCLUSION)
        e_tr = [g.add_edge(int(c["v"][i]), uk, float(cc), TRANSITION) for i, cc in zip(cand.tolist(), costs.tolist())]
        e_ex = g.add_edge(vk, SOURCE, self.c_ex, EXIT)
        c["e_en"][k], c["e_in"][k], c["e_ex"][k] = e_en, e_in, e_ex
        c["alive"][k] = True
        g.pi[uk] = pot_in
        g.pi[vk] = pot_in + c_incl

        self.watermark = t_end
        self.n_added += 1
        self.resident += 1
        self.peak_resident = max(self.peak_resident, self.resident)

        cyc = None
        if best + c_incl + self.c_ex < -EPS:
            if best_i < 0:
                path = [e_en]
            else:
                path = []
                w = int(c["v"][cand[best_i]])
                while w != SOURCE:
                    e = int(pred[w])
                    path.append(e)
                    w = int(g.src[e] if g.flow[e] == 0 else g.dst[e])
                path.reverse()
                path.append(e_tr[best_i])
            path += [e_in, e_ex]
            cyc = g.make_cycle(path)
            push_flow(g, cyc)
            self.n_canceled += 1
        self._maybe_compact()
        return cyc

    # -- eviction ------------------------------------------------------------
    def _successor(self, k: int) -> int:
        g = self.graph
        e = _out_flow_edge(g, int(self.cols["v"][k]), (TRANSITION, EXIT))
        if e < 0:
            raise InvariantError("malformed flow at an included fragment")
        if g.kind[e] == EXIT:
            return -1
        return int(g.node_owner[g.dst[e]])

    def _drop(self, k: int):
        g, c = self.graph, self.cols
        g.remove_node(int(c["u"][k]))
        g.remove_node(int(c["v"][k]))
        g.anchors.pop(k, None)
        c["alive"][k] = False
        self.resident -= 1

    def _included(self, k: int) -> bool:
        return bool(self.graph.flow[self.cols["e_in"][k]] == 1)

    def _head_cost(self, k: int) -> tuple[list[str], float]:
        g = self.graph
        if k in g.anchors:
            _, prefix, cost = g.anchors[k]
            return list(prefix), cost
        return [], self.c_en

    def _emit_chain(self, k: int) -> list[str]:
        g, c = self.graph, self.cols
        chain, cost = self._head_cost(k)
        while k >= 0:
            chain.extend(g.members[k])
            cost += float(g.cost[c["e_in"][k]])
            nxt = self._successor(k)
            if nxt >= 0:
                e = _out_flow_edge(g, int(c["v"][k]), (TRANSITION,))
                cost += float(g.cost[e])
            else:
                cost += self.c_ex
            self._drop(k)
            k = nxt
        self.frozen_cost += cost
        self.finalized.append(chain)
        return chain

    def evict(self) -> list[list[str]]:
        """Finalize chains that ended before ``watermark - horizon``."""
        if math.isinf(self.horizon):
            return []
        cut = self.watermark - self.horizon
        return self._evict_before(cut)

    def flush(self) -> list[list[str]]:
        """Finalize every remaining chain (end of stream)."""
        return self._evict_before(math.inf)

    def _evict_before(self, cut: float) -> list[list[str]]:
        g, c = self.graph, self.cols
        out = []
        while self._evict_ptr < c.n and c["t_end"][self._evict_ptr] < cut:
            k = self._evict_ptr
            self._evict_ptr += 1
            if not c["alive"][k]:
                continue
            if not self._included(k):
                self.excluded.extend(g.members[k])
                self._drop(k)
                continue
            # every earlier unit is gone, so k heads its chain
            tail = k
            while True:
                nxt = self._successor(tail)
                if nxt < 0:
                    break
                tail = nxt
            if c["t_end"][tail] < cut:
                out.append(self._emit_chain(k))
                continue
            # Collapse k into its successor as a fixed prefix.
            j = self._successor(k)
            prefix, cost = self._head_cost(k)
            prefix.extend(g.members[k])
            e = _out_flow_edge(g, int(c["v"][k]), (TRANSITION,))
            cost += float(g.cost[c["e_in"][k]]) + float(g.cost[e])
            self._drop(k)
            g.anchors[j] = (int(c["u"][j]), prefix, cost)
        self._active_lo = self._evict_ptr
        self._maybe_compact()
        return out

    def _maybe_compact(self):
        g = self.graph
        if g.n_dead_edges <= max(4096, g.num_edges):
            return
        node_map, edge_map = g.compact()
        c = self.cols
        live = np.flatnonzero(c["alive"][: c.n])
        for col, m in (("u", node_map), ("v", node_map), ("e_en", edge_map), ("e_in", edge_map), ("e_ex", edge_map)):
            c[col][live] = m[c[col][live]]
        g.anchors = {k: (int(node_map[u]), p, cost) for k, (u, p, cost) in g.anchors.items()}


def online_add(state: AssociationState, fragment: Unit) -> AssociationState:
    state.add(fragment)
    return state


def evict(state: AssociationState):
    """Return ``(state, finalized chains)``."""
    return state, state.evict()


def ncc_online(fragments: Iterable[Unit], params: CostModelParams | None = None,
               horizon: float = math.inf) -> AssociationState:
    """Feed ``fragments`` (sorted here by last timestamp) through the online solver."""
    state = AssociationState(params, horizon=horizon)
    units = sorted(fragments, key=lambda f: _unit_parts(f, 0.0)[2].t_end)
    for f in units:
        state.add(f)
        state.evict()
    return state
