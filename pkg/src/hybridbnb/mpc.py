"""Receding-horizon control and the upper-bound function used by branch and bound."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import FEASIBILITY_TOL
from .model import HybridSystem, Trajectory, post, simulate
from .qfunction import (
    CutStore,
    NodeEvaluation,
    exact_node_cost,
    node_lower_bound,
    zero_terminal_cost,
)

# set by the test suite; re-simulates every finite upper bound
CHECK_CERTIFICATES = os.environ.get("HYBRIDBNB_CHECK_CERTIFICATES") == "1"
CERT_TOL = 1e-8


class CertificateError(AssertionError):
    pass


@dataclass
class MpcConfig:
    """Horizon, deadline and terminal stores.

    ``schedule="stationary"`` uses ``terminal_stores[min(k, last)]`` with the full
    horizon at every step.  ``schedule="deadline"`` uses the store
    ``V[max(0, T - k - H)]`` with horizon ``min(H, T - k)``.
    """

    horizon: int
    deadline: int
    terminal_stores: list[CutStore]
    schedule: str = "stationary"

    def __post_init__(self):
        if self.horizon < 0:
            raise ValueError("horizon must be nonnegative")
        if not self.terminal_stores:
            raise ValueError("at least one terminal store is required")
        if self.schedule not in ("stationary", "deadline"):
            raise ValueError(f"unknown schedule {self.schedule!r}")

    def at_step(self, k: int) -> tuple[CutStore, int]:
        if self.schedule == "deadline":
            idx = max(0, self.deadline - k - self.horizon)
            return self.terminal_stores[min(idx, len(self.terminal_stores) - 1)], min(self.horizon, self.deadline - k)
        return self.terminal_stores[min(k, len(self.terminal_stores) - 1)], self.horizon

    def shifted(self, k: int) -> "MpcConfig":
        """The configuration seen by a controller started at step ``k``."""
        if self.schedule == "deadline":
            return MpcConfig(self.horizon, self.deadline - k, self.terminal_stores, self.schedule)
        return MpcConfig(self.horizon, self.deadline - k, self.terminal_stores[min(k, len(self.terminal_stores) - 1):])


@dataclass
class MpcStep:
    v: str
    u: np.ndarray
    value: float


@dataclass
class MpcResult:
    trajectory: Trajectory | None
    values: list[float] = field(default_factory=list)
    reason: str = ""
    qp_solves: int = 0


@dataclass
class UpperBoundResult:
    vs: tuple[str, ...] = ()
    us: tuple[np.ndarray, ...] = ()
    bound: float = math.inf
    trajectory: Trajectory | None = None
    qp_solves: int = 0

    @property
    def finite(self) -> bool:
        return math.isfinite(self.bound)


def discrete_paths(sys: HybridSystem, q: str, length: int):
    """Syntactically valid input words of exactly ``length`` from ``q``, in declared order."""
    if length == 0:
        yield ()
        return
    for rule in sys.rules_from(q):
        for tail in discrete_paths(sys, rule.to_mode, length - 1):
            yield (rule.input, *tail)


def best_horizon_plan(sys, store: CutStore, q, x, horizon: int) -> tuple[NodeEvaluation | None, tuple, int]:
    """Minimum over all discrete words of length ``horizon`` of the stored Q-value."""
    best, best_vs, solves = None, (), 0
    for vs in discrete_paths(sys, q, horizon):
        ev = node_lower_bound(sys, store, q, x, vs)
        solves += ev.qp_solves
        if not ev.feasible or not math.isfinite(ev.lower_bound):
            continue
        if best is None or ev.lower_bound < best.lower_bound - 1e-12:
            best, best_vs = ev, vs
    return best, best_vs, solves


def stage_cost_floor(sys: HybridSystem) -> float:
    """Smallest possible stage cost outside target modes (the decrease margin)."""
    from .qfunction import build_prefix_qp
    from .geometry import solve_qp, QpStatus

    floor = math.inf
    for rule in sys.transitions:
        if rule.from_mode in sys.target_modes:
            continue
        qp, _ = build_prefix_qp(sys, rule.from_mode, np.zeros(sys.n_x), [rule.input], None, pin_x0=False)
        sol = solve_qp(qp)
        if sol.status is QpStatus.OPTIMAL:
            floor = min(floor, sol.objective)
    return floor


def receding_horizon(sys: HybridSystem, cfg: MpcConfig, q0: str, x0, max_steps: int | None = None) -> MpcResult:
    """Closed loop: optimize over the horizon, apply the first input, repeat until the target."""
    if cfg.horizon < 1:
        raise ValueError("receding horizon control needs a horizon of at least one step")
    budget = cfg.deadline if max_steps is None else max_steps
    q, x = q0, np.asarray(x0, dtype=float)
    modes, states, vs, us, values = [q], [x], [], [], []
    cost, solves = 0.0, 0
    k = 0
    while not sys.is_target(q, x, FEASIBILITY_TOL):
        if k >= budget:
            return MpcResult(None, values, f"step budget {budget} exhausted", solves)
        store, horizon = cfg.at_step(k)
        if horizon < 1:
            return MpcResult(None, values, "deadline reached", solves)
        ev, plan, n = best_horizon_plan(sys, store, q, x, horizon)
        solves += n
        if ev is None:
            return MpcResult(None, values, f"no feasible plan at step {k}", solves)
        values.append(ev.lower_bound)
        v, u = plan[0], ev.us[0]
        step = post(sys, q, x, v, u, FEASIBILITY_TOL)
        if step is None:
            return MpcResult(None, values, f"applied input left the guard at step {k}", solves)
        cost += sys.stage_costs[q](x, u)
        q, x = step
        modes.append(q)
        states.append(x)
        vs.append(v)
        us.append(u)
        k += 1
    return MpcResult(Trajectory(modes, states, tuple(vs), tuple(us), cost), values, "target reached", solves)


def _certify(sys, q0, x0, res: UpperBoundResult) -> None:
    traj = simulate(sys, q0, x0, res.vs, res.us, FEASIBILITY_TOL)
    if traj is None:
        raise CertificateError(f"upper bound for {res.vs} does not re-simulate")
    q, x = traj.final
    if not sys.is_target(q, x, FEASIBILITY_TOL):
        raise CertificateError(f"upper bound for {res.vs} does not end in the target")
    if abs(traj.cost - res.bound) > CERT_TOL * max(1.0, abs(res.bound)):
        raise CertificateError(f"cost drift {abs(traj.cost - res.bound):.3g} for {res.vs}")


def upper_bound_beta(
    sys: HybridSystem,
    q0: str,
    x0,
    vs_prefix: Sequence[str],
    horizon: int = 0,
    mpc: MpcConfig | None = None,
    prefix_eval: NodeEvaluation | None = None,
) -> UpperBoundResult:
    """Feasible completion of a discrete prefix, or ``((), (), inf)``.

    With ``horizon == 0`` a bound exists only when the prefix itself ends in a
    target mode; it is then the exact optimal cost of the prefix.  Otherwise the
    cheapest continuous inputs of the prefix are followed by the receding-horizon
    controller until the target.  ``prefix_eval`` may carry the inputs of an
    already solved prefix QP whose terminal term is constant.
    """
    vs_prefix = tuple(vs_prefix)
    rules = sys.mode_path(q0, vs_prefix)
    q_end = rules[-1].to_mode if rules else q0
    if horizon == 0:
        if q_end not in sys.target_modes:
            return UpperBoundResult()
        ev = exact_node_cost(sys, q0, x0, vs_prefix)
        if not ev.feasible:
            return UpperBoundResult(qp_solves=ev.qp_solves)
        return _finish(sys, q0, x0, vs_prefix, ev.us, ev.qp_solves)

    if mpc is None:
        raise ValueError("a positive horizon needs an MpcConfig")
    solves = 0
    ev = prefix_eval
    if ev is None or not ev.feasible:
        ev = zero_terminal_cost(sys, q0, x0, vs_prefix)
        solves += ev.qp_solves
    if not ev.feasible:
        return UpperBoundResult(qp_solves=solves)
    k = len(vs_prefix)
    q_k, x_k = q_end, ev.xs[-1]
    store, h = mpc.at_step(k)
    if not sys.is_target(q_k, x_k, FEASIBILITY_TOL):
        if h < 1:
            return UpperBoundResult(qp_solves=solves)
        plan, _, n = best_horizon_plan(sys, store, q_k, x_k, h)
        solves += n
        if plan is None:
            return UpperBoundResult(qp_solves=solves)
    run = receding_horizon(sys, mpc.shifted(k), q_k, x_k)
    solves += run.qp_solves
    if run.trajectory is None:
        return UpperBoundResult(qp_solves=solves)
    tail = run.trajectory
    return _finish(sys, q0, x0, vs_prefix + tail.discrete_inputs, tuple(ev.us) + tail.continuous_inputs, solves)


def _finish(sys, q0, x0, vs, us, solves) -> UpperBoundResult:
    traj = simulate(sys, q0, x0, vs, us, FEASIBILITY_TOL)
    if traj is None or not sys.is_target(*traj.final, FEASIBILITY_TOL):
        return UpperBoundResult(qp_solves=solves)
    res = UpperBoundResult(tuple(vs), tuple(us), traj.cost, traj, solves)
    if CHECK_CERTIFICATES:
        _certify(sys, q0, x0, res)
    return res
