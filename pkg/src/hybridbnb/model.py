"""Deterministic discrete-time hybrid systems with affine dynamics.

A transition ``(q, x) --(v, u)--> (q', x')`` exists when there is a rule for
``(q, v)``, ``u`` lies in the rule's input set and ``x' = A x + B u + c`` lies
in the rule's guard.  Guards constrain the successor state.  Stage costs are
attached to the mode the transition leaves::

    c(q, x, u) = x' Qx x + u' Qu u + lx' x + lu' u + constant
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import linprog

from .geometry import Polyhedron

PSD_TOL = 1e-8


class ConfigurationError(ValueError):
    """Raised on unknown labels or inconsistent dimensions."""


class SystemValidationError(ConfigurationError):
    def __init__(self, diagnostics: list[str]):
        self.diagnostics = list(diagnostics)
        super().__init__("invalid hybrid system:\n  " + "\n  ".join(self.diagnostics))


@dataclass(frozen=True, eq=False)
class QuadraticStageCost:
    quad_x: np.ndarray
    quad_u: np.ndarray
    lin_x: np.ndarray
    lin_u: np.ndarray
    constant: float = 0.0

    def __call__(self, x, u) -> float:
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        return float(
            x @ self.quad_x @ x + u @ self.quad_u @ u + self.lin_x @ x + self.lin_u @ u + self.constant
        )

    @classmethod
    def input_energy(cls, n_x: int, n_u: int, constant: float = 0.0) -> "QuadraticStageCost":
        return cls(np.zeros((n_x, n_x)), np.eye(n_u), np.zeros(n_x), np.zeros(n_u), constant)

    def to_json(self) -> dict:
        return {
            "quad_x": self.quad_x.tolist(),
            "quad_u": self.quad_u.tolist(),
            "lin_x": self.lin_x.tolist(),
            "lin_u": self.lin_u.tolist(),
            "constant": self.constant,
        }


@dataclass(frozen=True, eq=False)
class TransitionRule:
    from_mode: str
    input: str
    to_mode: str
    dyn_A: np.ndarray
    dyn_B: np.ndarray
    dyn_c: np.ndarray
    guard_next: Polyhedron
    input_set: Polyhedron

    def successor(self, x, u) -> np.ndarray:
        return self.dyn_A @ np.asarray(x, dtype=float) + self.dyn_B @ np.asarray(u, dtype=float) + self.dyn_c

    def to_json(self) -> dict:
        return {
            "from": self.from_mode,
            "v": self.input,
            "to": self.to_mode,
            "A": self.dyn_A.tolist(),
            "B": self.dyn_B.tolist(),
            "c": self.dyn_c.tolist(),
            "guard": self.guard_next.to_json(),
            "input_set": self.input_set.to_json(),
        }


@dataclass(eq=False)
class HybridSystem:
    modes: list[str]
    discrete_inputs: list[str]
    state_dim: int
    input_dim: int
    transitions: list[TransitionRule]
    stage_costs: dict[str, QuadraticStageCost]
    state_domain: Polyhedron
    target_modes: frozenset[str]
    target_set: Polyhedron
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.target_modes = frozenset(self.target_modes)
        self._input_rank = {v: i for i, v in enumerate(self.discrete_inputs)}
        self._rules: dict[tuple[str, str], TransitionRule] = {}
        self._out: dict[str, list[TransitionRule]] = {q: [] for q in self.modes}
        for rule in self.transitions:
            self._rules.setdefault((rule.from_mode, rule.input), rule)
            if rule.from_mode in self._out:
                self._out[rule.from_mode].append(rule)
        for rules in self._out.values():
            rules.sort(key=lambda r: self._input_rank.get(r.input, len(self._input_rank)))

    @property
    def n_x(self) -> int:
        return self.state_dim

    @property
    def n_u(self) -> int:
        return self.input_dim

    def rule(self, q: str, v: str) -> TransitionRule | None:
        if q not in self._out:
            raise ConfigurationError(f"unknown mode {q!r}")
        if v not in self._input_rank:
            raise ConfigurationError(f"unknown discrete input {v!r}")
        return self._rules.get((q, v))

    def rules_from(self, q: str) -> list[TransitionRule]:
        """Outgoing rules of ``q`` in the declared order of the discrete inputs."""
        if q not in self._out:
            raise ConfigurationError(f"unknown mode {q!r}")
        return self._out[q]

    def input_rank(self, v: str) -> int:
        return self._input_rank[v]

    def max_out_degree(self) -> int:
        return max((len(r) for r in self._out.values()), default=0)

    def is_target(self, q: str, x, tol: float = 1e-9) -> bool:
        return q in self.target_modes and self.target_set.contains(x, tol)

    def mode_path(self, q0: str, vs: Sequence[str]) -> list[TransitionRule]:
        """Rules followed by ``vs`` from ``q0``; ConfigurationError if a step has no rule."""
        path = []
        q = q0
        for i, v in enumerate(vs):
            rule = self.rule(q, v)
            if rule is None:
                raise ConfigurationError(f"no rule for ({q!r}, {v!r}) at step {i + 1}")
            path.append(rule)
            q = rule.to_mode
        return path

    # -- serialization ---------------------------------------------------

    def to_json(self) -> dict:
        return {
            "modes": list(self.modes),
            "inputs": list(self.discrete_inputs),
            "state_dim": self.state_dim,
            "input_dim": self.input_dim,
            "state_domain": self.state_domain.to_json(),
            "transitions": [r.to_json() for r in self.transitions],
            "costs": {q: c.to_json() for q, c in self.stage_costs.items()},
            "target": {"modes": sorted(self.target_modes), "set": self.target_set.to_json()},
            "metadata": self.metadata,
        }


@dataclass
class Trajectory:
    modes: list[str]
    states: list[np.ndarray]
    discrete_inputs: tuple[str, ...]
    continuous_inputs: tuple[np.ndarray, ...]
    cost: float

    def __len__(self):
        return len(self.discrete_inputs)

    @property
    def final(self) -> tuple[str, np.ndarray]:
        return self.modes[-1], self.states[-1]

    def csv_rows(self) -> list[list]:
        """Rows ``step, q, x1..xn, v, u1..um``; the last row has empty input fields."""
        rows = []
        n_u = self.continuous_inputs[0].size if self.continuous_inputs else 0
        for k, (q, x) in enumerate(zip(self.modes, self.states)):
            if k < len(self.discrete_inputs):
                v, u = self.discrete_inputs[k], list(self.continuous_inputs[k])
            else:
                v, u = "", [""] * n_u
            rows.append([k, q, *list(x), v, *u])
        return rows


def post(sys: HybridSystem, q: str, x, v: str, u, tol: float = 1e-9):
    """Successor ``(q', x')`` of ``(q, x)`` under ``(v, u)``, or None if there is none."""
    x = np.asarray(x, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    if x.size != sys.n_x or u.size != sys.n_u:
        raise ConfigurationError("state or input has the wrong dimension")
    rule = sys.rule(q, v)
    if rule is None or not rule.input_set.contains(u, tol):
        return None
    x_next = rule.successor(x, u)
    if not rule.guard_next.contains(x_next, tol):
        return None
    return rule.to_mode, x_next


def simulate(sys: HybridSystem, q0: str, x0, vs: Sequence[str], us: Sequence, tol: float = 1e-9) -> Trajectory | None:
    if len(vs) != len(us):
        raise ConfigurationError("discrete and continuous input tuples differ in length")
    q = q0
    x = np.asarray(x0, dtype=float).reshape(-1)
    modes, states, cost = [q], [x], 0.0
    us = tuple(np.asarray(u, dtype=float).reshape(-1) for u in us)
    for v, u in zip(vs, us):
        step = post(sys, q, x, v, u, tol)
        if step is None:
            return None
        cost += sys.stage_costs[q](x, u)
        q, x = step
        modes.append(q)
        states.append(x)
    return Trajectory(modes, states, tuple(vs), us, cost)


# -- validation ------------------------------------------------------------


def _contained(inner: Polyhedron, outer: Polyhedron, tol: float = 1e-7) -> bool:
    """inner ⊆ outer, checked row by row with support-function LPs."""
    Hi, hi = inner.normals, inner.offsets
    Ho, ho = outer.normals, outer.offsets
    rows_i = {tuple(np.round(np.append(r, b), 12)) for r, b in zip(Hi, hi)}
    for a, b in zip(Ho, ho):
        if tuple(np.round(np.append(a, b), 12)) in rows_i:
            continue
        res = linprog(-a, A_ub=Hi, b_ub=hi, bounds=[(None, None)] * inner.dim, method="highs")
        if res.status == 2:  # inner is empty
            return True
        if res.status != 0 or -res.fun > b + tol:
            return False
    return True


def _psd(M: np.ndarray) -> bool:
    return M.size == 0 or (np.allclose(M, M.T, atol=1e-10) and np.linalg.eigvalsh(M).min() >= -PSD_TOL)


def validate_rules(
    modes, inputs, n_x, n_u, rules, costs, domain, target_modes, target_set
) -> list[str]:
    diags: list[str] = []
    mode_set, input_set = set(modes), set(inputs)
    if len(mode_set) != len(modes):
        diags.append("duplicate mode labels")
    if len(input_set) != len(inputs):
        diags.append("duplicate discrete input labels")
    if domain.dim != n_x:
        diags.append(f"state domain has dimension {domain.dim}, expected {n_x}")
    seen: set[tuple[str, str]] = set()
    for i, r in enumerate(rules):
        where = f"transitions[{i}] ({r.from_mode!r}, {r.input!r})"
        if r.from_mode not in mode_set:
            diags.append(f"{where}: unknown source mode {r.from_mode!r}")
        if r.to_mode not in mode_set:
            diags.append(f"{where}: unknown target mode {r.to_mode!r}")
        if r.input not in input_set:
            diags.append(f"{where}: unknown discrete input {r.input!r}")
        key = (r.from_mode, r.input)
        if key in seen:
            diags.append(f"{where}: nondeterministic pair, more than one rule for this (mode, input)")
        seen.add(key)
        if r.dyn_A.shape != (n_x, n_x) or r.dyn_B.shape != (n_x, n_u) or r.dyn_c.shape != (n_x,):
            diags.append(f"{where}: dynamics have inconsistent dimensions")
            continue
        if r.guard_next.dim != n_x:
            diags.append(f"{where}: guard has dimension {r.guard_next.dim}, expected {n_x}")
        elif domain.dim == n_x and not _contained(r.guard_next, domain):
            diags.append(f"{where}: guard is not contained in the state domain")
        if r.input_set.dim != n_u:
            diags.append(f"{where}: input set has dimension {r.input_set.dim}, expected {n_u}")
    for q in modes:
        if q not in costs:
            diags.append(f"costs: missing stage cost for mode {q!r}")
    for q, c in costs.items():
        if q not in mode_set:
            diags.append(f"costs: unknown mode {q!r}")
        if c.quad_x.shape != (n_x, n_x) or c.quad_u.shape != (n_u, n_u):
            diags.append(f"costs[{q!r}]: quadratic blocks have inconsistent dimensions")
        elif not (_psd(c.quad_x) and _psd(c.quad_u)):
            diags.append(f"costs[{q!r}]: quadratic block is not symmetric positive semidefinite")
        if c.lin_x.shape != (n_x,) or c.lin_u.shape != (n_u,):
            diags.append(f"costs[{q!r}]: linear terms have inconsistent dimensions")
    for q in target_modes:
        if q not in mode_set:
            diags.append(f"target: unknown mode {q!r}")
    if target_set.dim != n_x:
        diags.append(f"target set has dimension {target_set.dim}, expected {n_x}")
    return diags


def validate(sys: HybridSystem) -> list[str]:
    """Diagnostics for determinism and referential integrity; empty when valid."""
    return validate_rules(
        sys.modes, sys.discrete_inputs, sys.n_x, sys.n_u, sys.transitions, sys.stage_costs,
        sys.state_domain, sys.target_modes, sys.target_set,
    )


# -- JSON ------------------------------------------------------------------


def _matrix(data, shape, where, diags):
    try:
        M = np.asarray(data, dtype=float)
        if M.size == 0 and shape[0] * shape[1] == 0:
            return np.zeros(shape)
        return M.reshape(shape)
    except (TypeError, ValueError):
        diags.append(f"{where}: expected a {shape[0]}x{shape[1]} numeric array")
        return np.zeros(shape)


def _vector(data, n, where, diags):
    try:
        return np.asarray(data, dtype=float).reshape(n)
    except (TypeError, ValueError):
        diags.append(f"{where}: expected a numeric vector of length {n}")
        return np.zeros(n)


def _poly(data, n, where, diags):
    try:
        p = Polyhedron.from_json(data, n)
    except (KeyError, TypeError, ValueError) as exc:
        diags.append(f"{where}: bad polyhedron ({exc})")
        return Polyhedron.universe(n)
    if p.dim != n:
        diags.append(f"{where}: polyhedron has dimension {p.dim}, expected {n}")
    return p


def system_from_json(data: dict) -> HybridSystem:
    """Build and validate a system; raises SystemValidationError with all diagnostics."""
    diags: list[str] = []
    for key in ("modes", "inputs", "transitions", "costs", "target", "state_domain"):
        if key not in data:
            diags.append(f"missing top-level key {key!r}")
    if diags:
        raise SystemValidationError(diags)
    modes = [str(q) for q in data["modes"]]
    inputs = [str(v) for v in data["inputs"]]
    n_x = int(data.get("state_dim", len(data["state_domain"]["H"][0]) if data["state_domain"]["H"] else 0))
    first = data["transitions"][0] if data["transitions"] else None
    n_u = int(data.get("input_dim", len(first["B"][0]) if first else 0))
    domain = _poly(data["state_domain"], n_x, "state_domain", diags)
    rules = []
    for i, t in enumerate(data["transitions"]):
        where = f"transitions[{i}]"
        try:
            rules.append(
                TransitionRule(
                    str(t["from"]), str(t["v"]), str(t["to"]),
                    _matrix(t["A"], (n_x, n_x), where + ".A", diags),
                    _matrix(t["B"], (n_x, n_u), where + ".B", diags),
                    _vector(t.get("c", [0.0] * n_x), n_x, where + ".c", diags),
                    _poly(t["guard"], n_x, where + ".guard", diags),
                    _poly(t["input_set"], n_u, where + ".input_set", diags),
                )
            )
        except KeyError as exc:
            diags.append(f"{where}: missing field {exc}")
    costs = {}
    for q, c in data["costs"].items():
        where = f"costs[{q!r}]"
        costs[str(q)] = QuadraticStageCost(
            _matrix(c.get("quad_x", np.zeros((n_x, n_x))), (n_x, n_x), where + ".quad_x", diags),
            _matrix(c.get("quad_u", np.zeros((n_u, n_u))), (n_u, n_u), where + ".quad_u", diags),
            _vector(c.get("lin_x", np.zeros(n_x)), n_x, where + ".lin_x", diags),
            _vector(c.get("lin_u", np.zeros(n_u)), n_u, where + ".lin_u", diags),
            float(c.get("constant", 0.0)),
        )
    target_modes = [str(q) for q in data["target"].get("modes", [])]
    target_set = _poly(data["target"].get("set", domain.to_json()), n_x, "target.set", diags)
    if not diags:
        diags = validate_rules(modes, inputs, n_x, n_u, rules, costs, domain, target_modes, target_set)
    if diags:
        raise SystemValidationError(diags)
    return HybridSystem(
        modes, inputs, n_x, n_u, rules, costs, domain, frozenset(target_modes), target_set,
        dict(data.get("metadata", {})),
    )


def load_system(path) -> HybridSystem:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SystemValidationError([f"line {exc.lineno}, column {exc.colno}: {exc.msg}"]) from exc
    return system_from_json(data)


def save_system(sys: HybridSystem, path) -> None:
    Path(path).write_text(json.dumps(sys.to_json(), indent=1))
