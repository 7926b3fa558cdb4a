"""Finite mode-graph abstraction and the functions it transfers to the concrete system.

The abstraction projects ``(q, x)`` onto ``q``.  An edge ``q --v--> q'`` is kept when
some ``x`` in the state domain and admissible ``u`` lead into the rule's guard, and
its cost is the smallest stage cost over those pairs.  Shortest paths on this graph
give a value function whose constant cuts bound the concrete cost-to-go from below.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .geometry import QpStatus, solve_qp
from .model import HybridSystem
from .qfunction import Cut, CutOrigin, CutStore, build_prefix_qp


@dataclass
class AbstractSystem:
    nodes: list[str]
    edges: list[tuple[str, str, str]]
    edge_cost_lb: dict[tuple[str, str], float]
    uncertified: set[tuple[str, str]] = field(default_factory=set)

    def successors(self, q: str):
        for src, v, dst in self.edges:
            if src == q:
                yield v, dst

    def to_json(self) -> dict:
        return {
            "nodes": list(self.nodes),
            "edges": [
                {"from": q, "v": v, "to": r, "cost": self.edge_cost_lb[(q, v)]}
                for q, v, r in self.edges
            ],
            "uncertified": sorted(f"{q}/{v}" for q, v in self.uncertified),
        }


@dataclass
class GraphValue:
    values: dict[str, float]

    def __getitem__(self, q):
        return self.values[q]

    def to_json(self) -> dict:
        return {q: (v if np.isfinite(v) else None) for q, v in self.values.items()}


@dataclass
class FiniteSystem:
    states: list
    inputs: list
    trans: set[tuple]

    def post(self, x, u) -> set:
        return {y for (a, b, y) in self.trans if a == x and b == u}


def build_abstraction(sys: HybridSystem) -> AbstractSystem:
    edges, costs, uncertified = [], {}, set()
    for rule in sys.transitions:
        # min c(x, u) with x free in the domain, one step under this rule, zero terminal value
        qp, _ = build_prefix_qp(sys, rule.from_mode, np.zeros(sys.n_x), [rule.input], None, pin_x0=False)
        sol = solve_qp(qp)
        if sol.status is QpStatus.INFEASIBLE:
            continue
        key = (rule.from_mode, rule.input)
        edges.append((rule.from_mode, rule.input, rule.to_mode))
        if sol.status is QpStatus.ITER_LIMIT:
            costs[key] = 0.0
            uncertified.add(key)
        else:
            costs[key] = max(0.0, sol.objective)
    return AbstractSystem(list(sys.modes), edges, costs, uncertified)


def _dijkstra(nodes, edges, weight, targets) -> dict[str, float]:
    dist = {q: np.inf for q in nodes}
    incoming: dict[str, list[tuple[str, float]]] = {q: [] for q in nodes}
    for q, v, r in edges:
        w = weight(q, v)
        if w < 0:
            raise ValueError(f"negative edge cost on ({q!r}, {v!r})")
        incoming[r].append((q, w))
    heap = []
    for t in targets:
        dist[t] = 0.0
        heap.append((0.0, t))
    heapq.heapify(heap)
    while heap:
        d, r = heapq.heappop(heap)
        if d > dist[r]:
            continue
        for q, w in incoming[r]:
            if d + w < dist[q]:
                dist[q] = d + w
                heapq.heappush(heap, (d + w, q))
    return dist


def graph_value_iteration(abs_sys: AbstractSystem, targets: Iterable[str]) -> GraphValue:
    """Least solution of ``V(q) = min_v c2(q, v) + V(q')`` with ``V = 0`` on targets."""
    targets = set(targets)
    if not targets <= set(abs_sys.nodes):
        raise ValueError("targets must be abstraction nodes")
    return GraphValue(_dijkstra(abs_sys.nodes, abs_sys.edges, lambda q, v: abs_sys.edge_cost_lb[(q, v)], targets))


def graph_lyapunov(abs_sys: AbstractSystem, target_modes: Iterable[str]) -> GraphValue:
    """Number of edges to the nearest target mode (unit costs)."""
    return GraphValue(_dijkstra(abs_sys.nodes, abs_sys.edges, lambda q, v: 1.0, set(target_modes)))


def transfer_value(gv: GraphValue, n_x: int) -> CutStore:
    """Constant cut ``V2(q)`` per mode; unreachable modes are flagged ``+inf``."""
    store = CutStore(gv.values, n_x, infinite_modes=[q for q, v in gv.values.items() if not np.isfinite(v)])
    for q, v in gv.values.items():
        if np.isfinite(v):
            store.add_cut(q, Cut(np.zeros(n_x), v, CutOrigin.ABSTRACTION))
    return store


def mpc2_value_functions(lyap: GraphValue, T: int, n_x: int) -> list[CutStore]:
    """Indicator stores ``V_0..V_T``: mode ``q`` is finite (value 0) in ``V_i`` iff ``i >= L(q)``."""
    finite = [v for v in lyap.values.values() if np.isfinite(v)]
    if finite and T < max(finite):
        raise ValueError(f"deadline {T} is below the largest finite distance {max(finite):g}")
    stores = []
    for i in range(T + 1):
        blocked = [q for q, v in lyap.values.items() if not (np.isfinite(v) and i >= v)]
        store = CutStore(lyap.values, n_x, infinite_modes=blocked)
        for q in lyap.values:
            if q not in blocked:
                store.add_cut(q, Cut(np.zeros(n_x), 0.0, CutOrigin.ABSTRACTION))
        stores.append(store)
    return stores


def extended_relation(s1: FiniteSystem, s2: FiniteSystem, relation) -> set[tuple]:
    """All ``(x1, x2, u1, u2)`` such that every ``u2``-successor of ``x2`` is matched by a ``u1``-successor of ``x1``."""
    rel = set(relation)
    out = set()
    for (x1, x2) in rel:
        for u1, u2 in itertools.product(s1.inputs, s2.inputs):
            post1 = s1.post(x1, u1)
            if all(any((y1, y2) in rel for y1 in post1) for y2 in s2.post(x2, u2)):
                out.add((x1, x2, u1, u2))
    return out


def check_alternating_simulation(s1: FiniteSystem, s2: FiniteSystem, relation) -> bool:
    rel = set(relation)
    ext = extended_relation(s1, s2, rel)
    return all(
        any((x1, x2, u1, u2) in ext for u2 in s2.inputs)
        for (x1, x2) in rel
        for u1 in s1.inputs
    )
