"""Cut-based value functions, node bounds over discrete prefixes, and dual-cut learning.

A :class:`CutStore` represents ``V(q, x) = max_j (a_j . x + b_j)`` per mode.  An
empty cut list means ``-inf``; modes flagged unreachable mean ``+inf``.

Node evaluations solve one QP over ``(x0~, u_1, x_1, ..., u_l, x_l, theta)``::

    min  sum_i c(q_{i-1}, x_{i-1}, u_i) + theta
    s.t. x0 - x0~ = 0                      (copy constraint)
         x_i = A_i x_{i-1} + B_i u_i + c_i
         x_i in guard_i,  u_i in input_set_i,  x0~ in state domain
         theta >= a . x_l + b              (each cut at the final mode)

The copy constraint is written ``x0 - x0~ = 0`` so that its multiplier is the
gradient of the optimal value with respect to ``x0``.
"""

from __future__ import annotations

import enum
import json
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .geometry import QpStatus, QuadProgram, solve_qp
from .model import ConfigurationError, HybridSystem, Trajectory

N_PROBES = 32


class CutOrigin(str, enum.Enum):
    ABSTRACTION = "Abstraction"
    LEARNED = "Learned"
    MANUAL = "Manual"


class StoreKind(str, enum.Enum):
    MINUS_INFINITY = "MinusInfinity"
    CUTS = "Cuts"


class EvalStatus(str, enum.Enum):
    FEASIBLE = "Feasible"
    INFEASIBLE = "Infeasible"
    UNKNOWN = "Unknown"


@dataclass(frozen=True, eq=False)
class Cut:
    slope: np.ndarray
    intercept: float
    origin: CutOrigin = CutOrigin.MANUAL

    def __post_init__(self):
        slope = np.asarray(self.slope, dtype=float).reshape(-1)
        if not (np.all(np.isfinite(slope)) and np.isfinite(self.intercept)):
            raise ValueError("cut entries must be finite")
        object.__setattr__(self, "slope", slope)
        object.__setattr__(self, "intercept", float(self.intercept))
        object.__setattr__(self, "origin", CutOrigin(self.origin))

    def __call__(self, x) -> float:
        return float(self.slope @ np.asarray(x, dtype=float) + self.intercept)

    def key(self) -> tuple:
        return (*np.round(self.slope, 12).tolist(), round(self.intercept, 12))


class CutStore:
    """Per-mode cut lists realizing a Bellman-like value function."""

    def __init__(self, modes: Iterable[str], n_x: int, kind: StoreKind = StoreKind.CUTS,
                 infinite_modes: Iterable[str] = ()):
        self.kind = StoreKind(kind)
        self.n_x = n_x
        self.cuts: dict[str, list[Cut]] = {q: [] for q in modes}
        self.infinite_modes: set[str] = set(infinite_modes)
        self.probes: dict[str, deque] = {q: deque(maxlen=N_PROBES) for q in self.cuts}
        self.version = 0
        if self.kind is StoreKind.MINUS_INFINITY and self.infinite_modes:
            raise ValueError("a MinusInfinity store carries no flags")

    @classmethod
    def minus_infinity(cls, sys: HybridSystem) -> "CutStore":
        return cls(sys.modes, sys.n_x, StoreKind.MINUS_INFINITY)

    @classmethod
    def empty(cls, sys: HybridSystem) -> "CutStore":
        return cls(sys.modes, sys.n_x)

    def copy(self) -> "CutStore":
        other = CutStore(self.cuts, self.n_x, self.kind, self.infinite_modes)
        other.cuts = {q: list(c) for q, c in self.cuts.items()}
        other.probes = {q: deque(p, maxlen=N_PROBES) for q, p in self.probes.items()}
        other.version = self.version
        return other

    def n_cuts(self) -> int:
        return sum(len(c) for c in self.cuts.values())

    def _check_mode(self, q):
        if q not in self.cuts:
            raise ConfigurationError(f"unknown mode {q!r}")

    def value(self, q: str, x) -> float:
        self._check_mode(q)
        if self.kind is StoreKind.MINUS_INFINITY:
            return -np.inf
        if q in self.infinite_modes:
            return np.inf
        cuts = self.cuts[q]
        if not cuts:
            return -np.inf
        x = np.asarray(x, dtype=float)
        return max(c(x) for c in cuts)

    def add_cut(self, q: str, cut: Cut, probe_dedup: bool = False) -> bool:
        """Replace ``V(q, .)`` by ``max(V(q, .), cut)``; returns False if the cut was discarded.

        With ``probe_dedup`` the cut is dropped when it does not exceed the
        current value at any of the recorded probe points of ``q``.
        """
        if self.kind is StoreKind.MINUS_INFINITY:
            raise TypeError("cannot add cuts to a MinusInfinity store")
        self._check_mode(q)
        if cut.slope.size != self.n_x:
            raise ValueError("cut slope has the wrong dimension")
        if any(c.key() == cut.key() for c in self.cuts[q]):
            return False
        if probe_dedup and self.probes[q] and self.cuts[q]:
            if all(cut(p) <= self.value(q, p) + 1e-9 for p in self.probes[q]):
                return False
        self.cuts[q].append(cut)
        self.version += 1
        return True

    def mark_infinite(self, q: str) -> None:
        self._check_mode(q)
        self.infinite_modes.add(q)
        self.version += 1

    def add_probe(self, q: str, x) -> None:
        self.probes[q].append(np.asarray(x, dtype=float).copy())

    def merge(self, other: "CutStore") -> "CutStore":
        """Pointwise maximum of two stores over the same modes (a new store)."""
        if set(other.cuts) != set(self.cuts):
            raise ConfigurationError("stores cover different modes")
        if self.kind is StoreKind.MINUS_INFINITY:
            return other.copy()
        if other.kind is StoreKind.MINUS_INFINITY:
            return self.copy()
        out = CutStore(self.cuts, self.n_x, StoreKind.CUTS, self.infinite_modes | other.infinite_modes)
        for q in self.cuts:
            for cut in self.cuts[q] + other.cuts[q]:
                out.add_cut(q, cut)
            out.cuts[q].sort(key=Cut.key)
        return out

    # -- serialization ---------------------------------------------------

    def to_json(self) -> dict:
        return {
            "kind": self.kind.value,
            "n_x": self.n_x,
            "infinite_modes": sorted(self.infinite_modes),
            "modes": [
                {
                    "mode": q,
                    "cuts": [{"a": c.slope.tolist(), "b": c.intercept, "origin": c.origin.value} for c in cuts],
                }
                for q, cuts in self.cuts.items()
            ],
        }

    @classmethod
    def from_json(cls, data: dict) -> "CutStore":
        modes = [m["mode"] for m in data["modes"]]
        store = cls(modes, int(data["n_x"]), StoreKind(data.get("kind", "Cuts")),
                    data.get("infinite_modes", ()))
        for entry in data["modes"]:
            for c in entry["cuts"]:
                store.cuts[entry["mode"]].append(Cut(c["a"], c["b"], c.get("origin", "Manual")))
        return store

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))

    @classmethod
    def load(cls, path) -> "CutStore":
        return cls.from_json(json.loads(Path(path).read_text()))


def value(store: CutStore, q: str, x) -> float:
    return store.value(q, x)


def add_cut(store: CutStore, q: str, cut: Cut) -> CutStore:
    store.add_cut(q, cut)
    return store


# -- node evaluation ---------------------------------------------------------


@dataclass
class NodeEvaluation:
    lower_bound: float
    status: EvalStatus
    us: tuple[np.ndarray, ...] = ()
    xs: tuple[np.ndarray, ...] = ()
    copy_dual: np.ndarray | None = None
    stage_cost: float = np.nan
    qp_solves: int = 0

    @property
    def feasible(self) -> bool:
        return self.status is EvalStatus.FEASIBLE


@dataclass
class _Layout:
    """Column offsets of the stacked variable vector."""

    n_x: int
    n_u: int
    length: int
    theta: bool

    def x(self, i: int) -> slice:
        start = 0 if i == 0 else self.n_x + (i - 1) * (self.n_x + self.n_u) + self.n_u
        return slice(start, start + self.n_x)

    def u(self, i: int) -> slice:
        start = self.n_x + (i - 1) * (self.n_x + self.n_u)
        return slice(start, start + self.n_u)

    @property
    def n_vars(self) -> int:
        return self.n_x + self.length * (self.n_x + self.n_u) + (1 if self.theta else 0)

    @property
    def theta_index(self) -> int:
        return self.n_vars - 1


def build_prefix_qp(
    sys: HybridSystem,
    q0: str,
    x0,
    vs: Sequence[str],
    terminal_cuts: Sequence[Cut] | None = None,
    terminal_set=None,
    pin_x0: bool = True,
    tilt=None,
) -> tuple[QuadProgram, _Layout]:
    """QP of a fixed discrete prefix; ``terminal_cuts=None`` means no epigraph variable."""
    rules = sys.mode_path(q0, vs)
    n_x, n_u, l = sys.n_x, sys.n_u, len(rules)
    lay = _Layout(n_x, n_u, l, terminal_cuts is not None)
    n = lay.n_vars
    P = np.zeros((n, n))
    qlin = np.zeros(n)
    const = 0.0
    eq_rows, eq_rhs, in_rows, in_rhs = [], [], [], []

    def row(width):
        return np.zeros((width, n))

    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if pin_x0:
        R = row(n_x)
        R[:, lay.x(0)] = -np.eye(n_x)
        eq_rows.append(R)
        eq_rhs.append(-x0)
    D = sys.state_domain
    if D.n_rows:
        R = row(D.n_rows)
        R[:, lay.x(0)] = D.normals
        in_rows.append(R)
        in_rhs.append(D.offsets)
    q = q0
    for i, rule in enumerate(rules, start=1):
        cost = sys.stage_costs[q]
        xs, us = lay.x(i - 1), lay.u(i)
        P[xs, xs] += 2 * cost.quad_x
        P[us, us] += 2 * cost.quad_u
        qlin[xs] += cost.lin_x
        qlin[us] += cost.lin_u
        const += cost.constant
        R = row(n_x)
        R[:, lay.x(i)] = np.eye(n_x)
        R[:, xs] = -rule.dyn_A
        R[:, us] = -rule.dyn_B
        eq_rows.append(R)
        eq_rhs.append(rule.dyn_c)
        g = rule.guard_next
        if g.n_rows:
            R = row(g.n_rows)
            R[:, lay.x(i)] = g.normals
            in_rows.append(R)
            in_rhs.append(g.offsets)
        U = rule.input_set
        if U.n_rows:
            R = row(U.n_rows)
            R[:, us] = U.normals
            in_rows.append(R)
            in_rhs.append(U.offsets)
        q = rule.to_mode
    if terminal_set is not None and terminal_set.n_rows:
        R = row(terminal_set.n_rows)
        R[:, lay.x(l)] = terminal_set.normals
        in_rows.append(R)
        in_rhs.append(terminal_set.offsets)
    if terminal_cuts is not None:
        qlin[lay.theta_index] = 1.0
        for cut in terminal_cuts:
            R = row(1)
            R[0, lay.x(l)] = cut.slope
            R[0, lay.theta_index] = -1.0
            in_rows.append(R)
            in_rhs.append([-cut.intercept])
    if tilt is not None:
        qlin[lay.x(0)] -= np.asarray(tilt, dtype=float)
    qp = QuadProgram(
        P, qlin, const,
        np.vstack(eq_rows) if eq_rows else None,
        np.concatenate(eq_rhs) if eq_rhs else None,
        np.vstack(in_rows) if in_rows else None,
        np.concatenate([np.atleast_1d(r) for r in in_rhs]) if in_rhs else None,
    )
    return qp, lay


def _unpack(sol, lay: _Layout, qp: QuadProgram, n_copy: int):
    z = sol.primal
    xs = tuple(z[lay.x(i)].copy() for i in range(lay.length + 1))
    us = tuple(z[lay.u(i)].copy() for i in range(1, lay.length + 1))
    obj_stage = qp.objective(z) - (z[lay.theta_index] if lay.theta else 0.0)
    copy_dual = sol.dual_eq[:n_copy].copy() if n_copy else None
    return xs, us, copy_dual, obj_stage


def _evaluate(sys, q0, x0, vs, terminal_cuts, terminal_set, infeasible_end=False,
              minus_inf=False) -> NodeEvaluation:
    if infeasible_end:
        return NodeEvaluation(np.inf, EvalStatus.INFEASIBLE)
    qp, lay = build_prefix_qp(sys, q0, x0, vs, terminal_cuts, terminal_set)
    sol = solve_qp(qp)
    if sol.status is QpStatus.INFEASIBLE:
        return NodeEvaluation(np.inf, EvalStatus.INFEASIBLE, qp_solves=1)
    if sol.status is QpStatus.ITER_LIMIT:
        return NodeEvaluation(-np.inf, EvalStatus.UNKNOWN, qp_solves=1)
    xs, us, copy_dual, stage = _unpack(sol, lay, qp, sys.n_x)
    lb = -np.inf if minus_inf else sol.objective
    return NodeEvaluation(lb, EvalStatus.FEASIBLE, us, xs, copy_dual, stage, qp_solves=1)


def node_lower_bound(sys: HybridSystem, store: CutStore, q0: str, x0, vs: Sequence[str]) -> NodeEvaluation:
    """Minimum over continuous inputs of the prefix cost plus the stored terminal value."""
    rules = sys.mode_path(q0, vs)
    q_end = rules[-1].to_mode if rules else q0
    if store.kind is StoreKind.MINUS_INFINITY:
        return _evaluate(sys, q0, x0, vs, None, None, minus_inf=True)
    if q_end in store.infinite_modes:
        return _evaluate(sys, q0, x0, vs, None, None, infeasible_end=True)
    cuts = store.cuts[q_end]
    if not cuts:
        return _evaluate(sys, q0, x0, vs, None, None, minus_inf=True)
    return _evaluate(sys, q0, x0, vs, cuts, None)


def zero_terminal_cost(sys: HybridSystem, q0: str, x0, vs: Sequence[str]) -> NodeEvaluation:
    """Prefix cost with a zero terminal value (feasibility plus cheapest inputs)."""
    return _evaluate(sys, q0, x0, vs, None, None)


def exact_node_cost(sys: HybridSystem, q0: str, x0, vs: Sequence[str]) -> NodeEvaluation:
    """True optimal cost of the prefix when it must end in a target mode inside the target set."""
    rules = sys.mode_path(q0, vs)
    q_end = rules[-1].to_mode if rules else q0
    if q_end not in sys.target_modes:
        return NodeEvaluation(np.inf, EvalStatus.INFEASIBLE)
    return _evaluate(sys, q0, x0, vs, None, sys.target_set)


# -- learning -------------------------------------------------------------------


class NoImprovement(Exception):
    """No valid cut could be generated at the requested point."""


def _one_step(sys, store, q, x_hat, v, tilt=None):
    rule = sys.rule(q, v)
    q_next = rule.to_mode
    if q_next in store.infinite_modes:
        return None
    cuts = store.cuts[q_next]
    if not cuts:
        raise NoImprovement(f"successor mode {q_next!r} has no cuts")
    qp, lay = build_prefix_qp(sys, q, x_hat, [v], cuts, pin_x0=tilt is None, tilt=tilt)
    return solve_qp(qp), lay, qp


def generate_cut(sys: HybridSystem, store: CutStore, q: str, x_hat, feasible_inputs: Sequence[str] | None = None) -> Cut:
    """Affine minorant of the one-step Bellman update of ``store`` at mode ``q``, tight at ``x_hat``.

    The slope is the copy-constraint multiplier of the best branch at ``x_hat``.
    The intercept is the minimum over all outgoing branches of the
    Lagrangian-relaxed problem with the state left free, so by weak duality the
    cut stays below the Bellman update everywhere in the state domain.
    """
    if store.kind is StoreKind.MINUS_INFINITY:
        raise TypeError("cuts need a store in Cuts mode")
    x_hat = np.asarray(x_hat, dtype=float)
    branches = [r.input for r in sys.rules_from(q)]
    probe = list(feasible_inputs) if feasible_inputs is not None else branches
    best = None
    for v in probe:
        out = _one_step(sys, store, q, x_hat, v)
        if out is None:
            continue
        sol, lay, qp = out
        if sol.status is QpStatus.ITER_LIMIT:
            raise NoImprovement(f"branch {v!r} did not converge at the probe point")
        if sol.status is QpStatus.OPTIMAL and (best is None or sol.objective < best[0] - 1e-12):
            best = (sol.objective, sol.dual_eq[: sys.n_x].copy())
    if best is None:
        raise NoImprovement("every branch is infeasible at the probe point")
    slope = best[1]
    intercept = np.inf
    for v in branches:
        out = _one_step(sys, store, q, x_hat, v, tilt=slope)
        if out is None:
            continue
        sol = out[0]
        if sol.status is QpStatus.INFEASIBLE:
            continue
        if sol.status is not QpStatus.OPTIMAL:
            raise NoImprovement(f"relaxed branch {v!r} did not converge")
        intercept = min(intercept, sol.objective)
    if not np.isfinite(intercept):
        raise NoImprovement("no branch is feasible anywhere in the domain")
    return Cut(slope, intercept, CutOrigin.LEARNED)


def backward_pass(sys: HybridSystem, store: CutStore, traj: Trajectory) -> tuple[CutStore, int]:
    """Add cuts at the visited states of ``traj`` from its end toward its start.

    Target modes are skipped: the terminal value there must stay at zero for
    the store to remain a lower bound of the problem's true cost.
    """
    added = 0
    for j in range(len(traj) - 1, -1, -1):
        q, x = traj.modes[j], traj.states[j]
        if q in sys.target_modes:
            continue
        try:
            cut = generate_cut(sys, store, q, x)
        except NoImprovement:
            continue
        if cut(x) > store.value(q, x) + 1e-9 and store.add_cut(q, cut, probe_dedup=True):
            added += 1
        store.add_probe(q, x)
    return store, added
