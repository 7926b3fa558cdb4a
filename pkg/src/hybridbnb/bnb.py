"""Depth-first branch and bound over discrete input words.

Nodes are prefixes ``v_1..v_l``.  A node is expanded when its lower bound does
not exceed the incumbent (up to ``PRUNE_TOL``) and ``l < max_len``; every child
is offered to the upper-bound function and pushed.  One iteration is one pop.
"""

from __future__ import annotations

import enum
import heapq
import itertools
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .model import HybridSystem, Trajectory, simulate
from .mpc import UpperBoundResult, upper_bound_beta
from .qfunction import CutStore, EvalStatus, backward_pass, exact_node_cost, node_lower_bound

PRUNE_TOL = 1e-7
IMPROVE_TOL = 1e-9
DEFAULT_ORACLE_BUDGET = 2_000_000


class SolveStatus(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    ABORTED = "Aborted"


@dataclass
class SearchNode:
    vs: tuple[str, ...]
    lower_bound: float
    depth: int
    order_key: tuple[int, ...] = ()
    store_version: int = -1
    us: tuple = field(default=(), repr=False)

    def priority(self):
        # larger depth first, then smaller bound, then declared input order
        return (-self.depth, self.lower_bound, self.order_key)


@dataclass
class Incumbent:
    vs: tuple[str, ...] = ()
    us: tuple[np.ndarray, ...] = ()
    bound: float = math.inf
    trajectory: Trajectory | None = None

    @property
    def finite(self) -> bool:
        return math.isfinite(self.bound)

    def to_json(self) -> dict:
        return {
            "vs": list(self.vs),
            "us": [u.tolist() for u in self.us],
            "bound": self.bound if self.finite else None,
        }


@dataclass
class SolveReport:
    iterations: int = 0
    expansions: int = 0
    qp_solves: int = 0
    incumbent_history: list[tuple[int, float]] = field(default_factory=list)
    final: Incumbent = field(default_factory=Incumbent)
    status: SolveStatus = SolveStatus.INFEASIBLE
    prunes: int = 0
    cuts_added: int = 0
    elapsed: float = 0.0

    def to_json(self, **extra) -> dict:
        out = {
            "status": self.status.value,
            "iterations": self.iterations,
            "expansions": self.expansions,
            "qp_solves": self.qp_solves,
            "prunes": self.prunes,
            "cuts_added": self.cuts_added,
            "incumbent_history": [[i, b] for i, b in self.incumbent_history],
            "final": self.final.to_json(),
        }
        out.update(extra)
        return out


def pop_heuristic(open_set: list[SearchNode]) -> SearchNode:
    """Remove and return the deepest node, ties broken by smallest bound then input order."""
    if not open_set:
        raise ValueError("cannot pop from an empty node set")
    i = min(range(len(open_set)), key=lambda j: open_set[j].priority())
    return open_set.pop(i)


class _Frontier:
    """Heap with the same order as :func:`pop_heuristic`."""

    def __init__(self):
        self._heap = []
        self._tie = itertools.count()

    def push(self, node: SearchNode):
        heapq.heappush(self._heap, (node.priority(), next(self._tie), node))

    def pop(self) -> SearchNode:
        return heapq.heappop(self._heap)[-1]

    def __len__(self):
        return len(self._heap)


Beta = Callable[[Sequence[str], object], UpperBoundResult]


def default_beta(sys: HybridSystem, q0: str, x0, horizon: int = 0, mpc=None) -> Beta:
    def beta(vs, node_eval=None):
        return upper_bound_beta(sys, q0, x0, vs, horizon, mpc, prefix_eval=node_eval)

    return beta


def solve(
    sys: HybridSystem,
    store: CutStore,
    q0: str,
    x0,
    max_len: int,
    beta: Beta | None = None,
    learn: bool = False,
    max_iterations: int | None = None,
    on_prune: Callable[[SearchNode], None] | None = None,
    reuse_prefix_inputs: bool = False,
) -> tuple[Incumbent, SolveReport]:
    """Branch and bound for the minimum-cost input word reaching the target.

    ``store`` is mutated when ``learn`` is set.  ``on_prune`` is called with every
    popped node whose bound test fails.
    """
    t0 = time.perf_counter()
    x0 = np.asarray(x0, dtype=float)
    if beta is None:
        beta = default_beta(sys, q0, x0)
    report = SolveReport()
    inc = Incumbent()

    def evaluate(vs):
        ev = node_lower_bound(sys, store, q0, x0, vs)
        report.qp_solves += ev.qp_solves
        return ev

    def offer(res: UpperBoundResult):
        nonlocal inc
        report.qp_solves += res.qp_solves
        if res.finite and res.bound < inc.bound - IMPROVE_TOL:
            inc = Incumbent(res.vs, res.us, res.bound, res.trajectory)
            report.incumbent_history.append((report.iterations, res.bound))
            if learn and res.trajectory is not None:
                _, added = backward_pass(sys, store, res.trajectory)
                report.cuts_added += added

    # the empty word is itself a candidate when x0 already lies in the target
    if max_len >= 0 and q0 in sys.target_modes:
        offer(beta((), None))

    root_eval = evaluate(())
    frontier = _Frontier()
    frontier.push(SearchNode((), root_eval.lower_bound, 0, (), store.version))
    while len(frontier):
        if max_iterations is not None and report.iterations >= max_iterations:
            report.status = SolveStatus.ABORTED
            break
        node = frontier.pop()
        report.iterations += 1
        lb = node.lower_bound
        if learn and node.store_version != store.version and math.isfinite(lb):
            lb = max(lb, evaluate(node.vs).lower_bound)
        if not (lb <= inc.bound + PRUNE_TOL and node.depth < max_len):
            if node.depth < max_len:
                report.prunes += 1
                if on_prune is not None:
                    on_prune(node)
            continue
        report.expansions += 1
        q_end = sys.mode_path(q0, node.vs)[-1].to_mode if node.vs else q0
        for rule in sys.rules_from(q_end):
            child_vs = node.vs + (rule.input,)
            ev = evaluate(child_vs)
            hint = ev if (reuse_prefix_inputs and ev.feasible) else None
            if ev.status is not EvalStatus.INFEASIBLE:
                offer(beta(child_vs, hint))
            frontier.push(
                SearchNode(
                    child_vs,
                    ev.lower_bound,
                    node.depth + 1,
                    node.order_key + (sys.input_rank(rule.input),),
                    store.version,
                )
            )
    else:
        report.status = SolveStatus.OPTIMAL if inc.finite else SolveStatus.INFEASIBLE
    report.final = inc
    report.elapsed = time.perf_counter() - t0
    return inc, report


def enumeration_oracle(
    sys: HybridSystem, q0: str, x0, max_len: int, budget: int = DEFAULT_ORACLE_BUDGET
) -> tuple[Incumbent, int, SolveStatus]:
    """Exhaustive minimum of the exact cost over every valid word of length <= ``max_len``.

    Words not ending in a target mode have infinite cost without a QP.  Returns
    the best incumbent, the number of words examined and the status.
    """
    x0 = np.asarray(x0, dtype=float)
    best = Incumbent()
    count = 0
    stack = [((), q0)]
    while stack:
        vs, q = stack.pop()
        count += 1
        if count > budget:
            return best, count, SolveStatus.ABORTED
        if q in sys.target_modes:
            ev = exact_node_cost(sys, q0, x0, vs)
            if ev.feasible and ev.lower_bound < best.bound - IMPROVE_TOL:
                traj = simulate(sys, q0, x0, vs, ev.us, 1e-6)
                cost = traj.cost if traj is not None else ev.lower_bound
                best = Incumbent(vs, ev.us, cost, traj)
        if len(vs) < max_len:
            for rule in reversed(sys.rules_from(q)):
                stack.append((vs + (rule.input,), rule.to_mode))
    status = SolveStatus.OPTIMAL if best.finite else SolveStatus.INFEASIBLE
    return best, count, status


def node_budget(sys: HybridSystem, max_len: int) -> int:
    d = sys.max_out_degree()
    return sum(d**k for k in range(max_len + 1))
