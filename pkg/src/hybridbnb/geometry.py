"""Polyhedra in halfspace form and the convex QP kernel.

Every QP in the package goes through :func:`solve_qp`, which solves

    minimize    1/2 x' P x + q' x + r
    subject to  E x = e
                G x <= g

with OSQP (operator splitting, rho adaptation, infeasibility certificates
and active-set polishing).  If OSQP stops without a clean verdict the same
problem is handed to Clarabel before giving up with ``IterLimit``.

Multipliers follow the Lagrangian ``f(x) + dual_eq'(E x - e) + dual_ineq'(G x - g)``
so ``dual_ineq >= 0`` and stationarity reads ``P x + q + E' dual_eq + G' dual_ineq = 0``.
"""

from __future__ import annotations

import contextlib
import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

import clarabel
import osqp

PRIMAL_DUAL_TOL = 1e-7
FEASIBILITY_TOL = 1e-6
DEFAULT_MAX_ITER = 20000

# process-wide default used when solve_qp gets no explicit tolerance
_default_tol = PRIMAL_DUAL_TOL


@contextlib.contextmanager
def qp_tolerance(tol: float):
    """Temporarily change the default tolerance of :func:`solve_qp`."""
    global _default_tol
    if not tol > 0:
        raise ValueError("tol must be positive")
    old, _default_tol = _default_tol, float(tol)
    try:
        yield
    finally:
        _default_tol = old


class QpStatus(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    ITER_LIMIT = "IterLimit"


@dataclass(frozen=True, eq=False)
class Polyhedron:
    """The set ``{x : normals @ x <= offsets}``."""

    normals: np.ndarray
    offsets: np.ndarray

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.normals, dtype=float))
        h = np.asarray(self.offsets, dtype=float).reshape(-1)
        if H.size == 0:
            H = H.reshape(0, H.shape[-1] if H.ndim == 2 else 0)
        if H.shape[0] != h.shape[0]:
            raise ValueError(
                f"normals have {H.shape[0]} rows but offsets have {h.shape[0]} entries"
            )
        if not (np.all(np.isfinite(H)) and np.all(np.isfinite(h))):
            raise ValueError("polyhedron data must be finite")
        object.__setattr__(self, "normals", H)
        object.__setattr__(self, "offsets", h)

    @classmethod
    def box(cls, lower, upper) -> "Polyhedron":
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        n = lower.size
        eye = np.eye(n)
        return cls(np.vstack([eye, -eye]), np.concatenate([upper, -lower]))

    @classmethod
    def universe(cls, dim: int) -> "Polyhedron":
        return cls(np.zeros((0, dim)), np.zeros(0))

    @property
    def dim(self) -> int:
        return self.normals.shape[1]

    @property
    def n_rows(self) -> int:
        return self.normals.shape[0]

    def intersect(self, other: "Polyhedron") -> "Polyhedron":
        if other.dim != self.dim:
            raise ValueError(f"dimension mismatch: {self.dim} vs {other.dim}")
        return Polyhedron(
            np.vstack([self.normals, other.normals]),
            np.concatenate([self.offsets, other.offsets]),
        )

    def contains(self, x, tol: float = 1e-9) -> bool:
        return contains(self, x, tol)

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray] | None:
        """Axis-aligned bounds read off the rows that are +-unit vectors, if complete."""
        lo = np.full(self.dim, -np.inf)
        hi = np.full(self.dim, np.inf)
        for row, off in zip(self.normals, self.offsets):
            nz = np.flatnonzero(row)
            if nz.size != 1:
                continue
            i = nz[0]
            if row[i] > 0:
                hi[i] = min(hi[i], off / row[i])
            else:
                lo[i] = max(lo[i], off / row[i])
        if np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)):
            return lo, hi
        return None

    def to_json(self) -> dict:
        return {"H": self.normals.tolist(), "h": self.offsets.tolist()}

    @classmethod
    def from_json(cls, data: dict, dim: int | None = None) -> "Polyhedron":
        H = np.asarray(data["H"], dtype=float)
        if H.size == 0 and dim is not None:
            H = H.reshape(0, dim)
        return cls(H, np.asarray(data["h"], dtype=float))

    def __repr__(self):
        return f"Polyhedron(dim={self.dim}, rows={self.n_rows})"


@dataclass(eq=False)
class QuadProgram:
    quad_cost: np.ndarray
    lin_cost: np.ndarray
    const_cost: float = 0.0
    eq_normals: np.ndarray | None = None
    eq_offsets: np.ndarray | None = None
    ineq_normals: np.ndarray | None = None
    ineq_offsets: np.ndarray | None = None

    def __post_init__(self):
        self.lin_cost = np.asarray(self.lin_cost, dtype=float).reshape(-1)
        n = self.lin_cost.size
        P = self.quad_cost
        if sp.issparse(P):
            P = P.toarray()
        self.quad_cost = np.asarray(P, dtype=float).reshape(n, n)
        self.eq_normals, self.eq_offsets = _block(self.eq_normals, self.eq_offsets, n)
        self.ineq_normals, self.ineq_offsets = _block(self.ineq_normals, self.ineq_offsets, n)

    @property
    def n(self) -> int:
        return self.lin_cost.size

    def check(self, sym_tol: float = 1e-10, psd_tol: float = 1e-8) -> None:
        P = self.quad_cost
        if np.max(np.abs(P - P.T), initial=0.0) > sym_tol:
            raise ValueError("quad_cost is not symmetric")
        if self.n and np.linalg.eigvalsh(P).min() < -psd_tol:
            raise ValueError("quad_cost is not positive semidefinite")

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.quad_cost @ x + self.lin_cost @ x + self.const_cost)


def _block(M, v, n):
    if M is None:
        return np.zeros((0, n)), np.zeros(0)
    M = np.asarray(M.toarray() if sp.issparse(M) else M, dtype=float).reshape(-1, n)
    v = np.asarray(v, dtype=float).reshape(-1)
    if M.shape[0] != v.size:
        raise ValueError("constraint block rows and offsets disagree")
    return M, v


@dataclass
class QpSolution:
    status: QpStatus
    primal: np.ndarray
    dual_eq: np.ndarray
    dual_ineq: np.ndarray
    objective: float
    iterations: int = 0
    backend: str = "osqp"
    certificate: np.ndarray | None = field(default=None, repr=False)

    @property
    def optimal(self) -> bool:
        return self.status is QpStatus.OPTIMAL

    def dual_objective(self, qp: QuadProgram) -> float:
        """Wolfe dual value at the returned multipliers."""
        x = self.primal
        return float(
            -0.5 * x @ qp.quad_cost @ x
            - qp.eq_offsets @ self.dual_eq
            - qp.ineq_offsets @ self.dual_ineq
            + qp.const_cost
        )


def kkt_residuals(qp: QuadProgram, sol: QpSolution) -> dict[str, float]:
    """Infinity-norm residuals of stationarity, feasibility and complementarity."""
    x = sol.primal
    stat = qp.quad_cost @ x + qp.lin_cost + qp.eq_normals.T @ sol.dual_eq + qp.ineq_normals.T @ sol.dual_ineq
    slack = qp.ineq_normals @ x - qp.ineq_offsets
    eq = qp.eq_normals @ x - qp.eq_offsets
    return {
        "stationarity": float(np.max(np.abs(stat), initial=0.0)),
        "primal": float(max(np.max(np.abs(eq), initial=0.0), np.max(slack, initial=0.0))),
        "complementarity": float(np.max(np.abs(sol.dual_ineq * slack), initial=0.0)),
        "dual_sign": float(max(0.0, -np.min(sol.dual_ineq, initial=0.0))),
    }


def _csc(M: np.ndarray) -> sp.csc_matrix:
    cols, rows = np.nonzero(M.T)
    counts = np.bincount(cols, minlength=M.shape[1])
    indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int32)
    return sp.csc_matrix((M[rows, cols], rows.astype(np.int32), indptr), shape=M.shape)


_EXT = osqp.ext_builtin
_OSQP_INF = float(_EXT.OSQP_INFTY)


def _osqp_settings(tol: float, max_iter: int):
    st = _EXT.OSQPSettings()
    _EXT.osqp_set_default_settings(st)
    st.verbose = False
    st.eps_abs = tol
    st.eps_rel = tol
    st.eps_prim_inf = FEASIBILITY_TOL
    st.eps_dual_inf = FEASIBILITY_TOL
    st.max_iter = max_iter
    st.check_termination = 25
    st.polishing = True
    st.polish_refine_iter = 10
    return st


def _osqp_solve(qp: QuadProgram, tol: float, max_iter: int) -> QpSolution | None:
    n = qp.n
    me = qp.eq_normals.shape[0]
    A = np.vstack([qp.eq_normals, qp.ineq_normals])
    lower = np.concatenate([qp.eq_offsets, np.full(qp.ineq_offsets.size, -_OSQP_INF)])
    upper = np.concatenate([qp.eq_offsets, np.minimum(qp.ineq_offsets, _OSQP_INF)])
    if A.shape[0] == 0:
        # OSQP needs at least one row
        A = np.zeros((1, n))
        lower, upper = np.array([-_OSQP_INF]), np.array([_OSQP_INF])
    solver = _EXT.OSQPSolver(
        _EXT.CSC(_csc(np.triu(qp.quad_cost))),
        np.ascontiguousarray(qp.lin_cost),
        _EXT.CSC(_csc(A)),
        lower,
        upper,
        A.shape[0],
        n,
        _osqp_settings(tol, max_iter),
    )
    solver.solve()
    info = solver.info
    status = info.status_val
    S = osqp.SolverStatus
    if status == S.OSQP_SOLVED:
        y = np.array(solver.solution.y, dtype=float)
        if A.shape[0] != me + qp.ineq_offsets.size:
            y = np.zeros(0)
        sol = QpSolution(
            QpStatus.OPTIMAL,
            np.array(solver.solution.x, dtype=float),
            y[:me],
            np.maximum(y[me:], 0.0),
            float(info.obj_val) + qp.const_cost,
            info.iter,
        )
        res_ = kkt_residuals(qp, sol)
        scale = 1.0 + max(np.max(np.abs(qp.lin_cost), initial=0.0), np.max(np.abs(qp.ineq_offsets), initial=0.0))
        if res_["primal"] <= 10 * tol * scale and res_["stationarity"] <= 10 * tol * scale:
            return sol
        return None
    if status == S.OSQP_PRIMAL_INFEASIBLE:
        return QpSolution(
            QpStatus.INFEASIBLE,
            np.full(n, np.nan),
            np.zeros(me),
            np.zeros(qp.ineq_offsets.size),
            np.inf,
            info.iter,
            certificate=np.array(solver.solution.prim_inf_cert, dtype=float),
        )
    return None


_CLARABEL_STATUS = {
    "Solved": QpStatus.OPTIMAL,
    "PrimalInfeasible": QpStatus.INFEASIBLE,
}


def _clarabel_solve(qp: QuadProgram, tol: float, max_iter: int) -> QpSolution:
    n = qp.n
    me = qp.eq_normals.shape[0]
    mi = qp.ineq_normals.shape[0]
    A = sp.csc_matrix(np.vstack([qp.eq_normals, qp.ineq_normals]).reshape(me + mi, n))
    b = np.concatenate([qp.eq_offsets, qp.ineq_offsets])
    cones = []
    if me:
        cones.append(clarabel.ZeroConeT(me))
    if mi:
        cones.append(clarabel.NonnegativeConeT(mi))
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_iter = min(max_iter, 500)
    settings.tol_gap_abs = tol
    settings.tol_gap_rel = tol
    settings.tol_feas = tol
    settings.tol_infeas_abs = FEASIBILITY_TOL
    settings.tol_infeas_rel = FEASIBILITY_TOL
    solver = clarabel.DefaultSolver(
        sp.triu(sp.csc_matrix(qp.quad_cost), format="csc"), qp.lin_cost, A, b, cones, settings
    )
    res = solver.solve()
    status = _CLARABEL_STATUS.get(str(res.status), QpStatus.ITER_LIMIT)
    x = np.asarray(res.x, dtype=float)
    z = np.asarray(res.z, dtype=float)
    if status is QpStatus.OPTIMAL:
        return QpSolution(status, x, z[:me], np.maximum(z[me:], 0.0),
                          qp.objective(x), res.iterations, backend="clarabel")
    return QpSolution(status, np.full(n, np.nan), np.zeros(me), np.zeros(mi),
                      np.inf if status is QpStatus.INFEASIBLE else np.nan,
                      res.iterations, backend="clarabel",
                      certificate=z if status is QpStatus.INFEASIBLE else None)


def solve_qp(qp: QuadProgram, tol: float | None = None, max_iter: int = DEFAULT_MAX_ITER) -> QpSolution:
    """Solve a convex QP; see the module docstring for sign conventions.

    Returns a solution with status ``Optimal``, ``Infeasible`` or ``IterLimit``.
    Dual infeasibility (unbounded below) is reported as ``IterLimit`` since no
    caller in this package builds unbounded programs on purpose.
    """
    if tol is None:
        tol = _default_tol
    if tol <= 0:
        raise ValueError("tol must be positive")
    sol = _osqp_solve(qp, tol, max_iter)
    if sol is not None:
        return sol
    return _clarabel_solve(qp, tol, max_iter)


def is_empty(p: Polyhedron, tol: float = FEASIBILITY_TOL) -> bool:
    """Phase-1 test: minimize s subject to H x <= h + s, s >= 0."""
    n = p.dim
    if p.n_rows == 0:
        return False
    G = np.hstack([p.normals, -np.ones((p.n_rows, 1))])
    G = np.vstack([G, np.concatenate([np.zeros(n), [-1.0]])])
    g = np.concatenate([p.offsets, [0.0]])
    lin = np.zeros(n + 1)
    lin[-1] = 1.0
    # scale rows so s measures violation in unit-normal distance
    norms = np.linalg.norm(p.normals, axis=1)
    norms[norms == 0] = 1.0
    G[:-1, :n] /= norms[:, None]
    g[:-1] /= norms
    sol = solve_qp(QuadProgram(np.zeros((n + 1, n + 1)), lin, ineq_normals=G, ineq_offsets=g))
    if sol.status is QpStatus.ITER_LIMIT:
        raise RuntimeError("phase-1 LP did not converge")
    if sol.status is QpStatus.INFEASIBLE:
        # cannot happen for a phase-1 program; treat defensively as empty
        return True
    return sol.objective > tol


def contains(p: Polyhedron, x, tol: float = 1e-9) -> bool:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != p.dim:
        raise ValueError(f"point has dimension {x.size}, polyhedron has {p.dim}")
    return bool(np.all(p.normals @ x <= p.offsets + tol))
