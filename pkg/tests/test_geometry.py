import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridbnb.geometry import (
    Polyhedron,
    QpStatus,
    QuadProgram,
    contains,
    is_empty,
    kkt_residuals,
    qp_tolerance,
    solve_qp,
)
from qp_cases import dense_kkt_solve, random_kkt_qp


def test_scalar_lower_bound():
    # min u^2 s.t. u >= 1
    sol = solve_qp(QuadProgram([[2.0]], [0.0], ineq_normals=[[-1.0]], ineq_offsets=[-1.0]))
    assert sol.status is QpStatus.OPTIMAL
    np.testing.assert_allclose(sol.primal, [1.0], atol=1e-6)
    assert sol.objective == pytest.approx(1.0, abs=1e-6)
    np.testing.assert_allclose(sol.dual_ineq, [2.0], atol=1e-5)


def test_empty_interval_is_infeasible():
    sol = solve_qp(QuadProgram([[2.0]], [0.0], ineq_normals=[[1.0], [-1.0]], ineq_offsets=[-1.0, -1.0]))
    assert sol.status is QpStatus.INFEASIBLE
    assert sol.certificate is not None
    # the certificate is a nonnegative combination of rows with zero normal and negative offset
    y = np.maximum(sol.certificate, 0)
    assert y.sum() > 0
    G = np.array([[1.0], [-1.0]])
    assert np.abs(G.T @ y).max() <= 1e-6 * y.sum()
    assert np.array([-1.0, -1.0]) @ y < 0


def test_projection_onto_halfplane():
    # (x1-2)^2 + (x2-2)^2 with x1 + x2 <= 2
    qp = QuadProgram(2 * np.eye(2), [-4.0, -4.0], 8.0, ineq_normals=[[1.0, 1.0]], ineq_offsets=[2.0])
    sol = solve_qp(qp)
    np.testing.assert_allclose(sol.primal, [1.0, 1.0], atol=1e-6)
    assert sol.objective == pytest.approx(2.0, abs=1e-6)
    np.testing.assert_allclose(sol.dual_ineq, [2.0], atol=1e-5)


def test_equality_dual_sign():
    # min x^2 s.t. x = 3: stationarity 2x + lambda = 0
    sol = solve_qp(QuadProgram([[2.0]], [0.0], eq_normals=[[1.0]], eq_offsets=[3.0]))
    assert sol.dual_eq[0] == pytest.approx(-6.0, abs=1e-5)


def test_unconstrained():
    sol = solve_qp(QuadProgram(np.diag([2.0, 4.0]), [-2.0, 4.0], 1.0))
    np.testing.assert_allclose(sol.primal, [1.0, -1.0], atol=1e-6)
    assert sol.objective == pytest.approx(1.0 - 1.0 - 2.0, abs=1e-6)


def test_linear_program():
    # min -x1 - x2 over the unit box
    box = Polyhedron.box([0, 0], [1, 1])
    sol = solve_qp(QuadProgram(np.zeros((2, 2)), [-1.0, -1.0], ineq_normals=box.normals, ineq_offsets=box.offsets))
    assert sol.objective == pytest.approx(-2.0, abs=1e-6)


def test_tolerance_context():
    qp = QuadProgram([[2.0]], [0.0], ineq_normals=[[-1.0]], ineq_offsets=[-1.0])
    with qp_tolerance(1e-4):
        assert solve_qp(qp).status is QpStatus.OPTIMAL
    with pytest.raises(ValueError):
        with qp_tolerance(0.0):
            pass
    with pytest.raises(ValueError):
        solve_qp(qp, tol=-1.0)


def test_check_rejects_indefinite():
    with pytest.raises(ValueError, match="positive semidefinite"):
        QuadProgram(np.diag([1.0, -1.0]), [0.0, 0.0]).check()
    with pytest.raises(ValueError, match="symmetric"):
        QuadProgram(np.array([[1.0, 1.0], [0.0, 1.0]]), [0.0, 0.0]).check()


@pytest.mark.parametrize(
    "H, h, expected",
    [
        ([[1.0], [-1.0]], [1.0, -2.0], True),
        ([[1.0]], [1.0], False),
        (np.vstack([np.eye(2), -np.eye(2)]), [1.85, 1.85, 10.0, 10.0], False),
        ([[1.0, 0.0], [-1.0, 0.0]], [0.0, 0.0], False),
    ],
)
def test_is_empty(H, h, expected):
    assert is_empty(Polyhedron(H, h)) is expected


@pytest.mark.parametrize(
    "point, expected",
    [((-0.5, 0.5), True), ((1.5, -2.5), False), ((-1.0, 1.0), True), ((-1.0 - 1e-6, 0.5), False)],
)
def test_contains_unit_square(point, expected):
    assert contains(Polyhedron.box([-1, 0], [0, 1]), point) is expected


def test_polyhedron_validation_and_json():
    with pytest.raises(ValueError):
        Polyhedron([[1.0, 0.0]], [1.0, 2.0])
    with pytest.raises(ValueError):
        Polyhedron([[np.inf]], [1.0])
    p = Polyhedron.box([-1, -2], [3, 4]).intersect(Polyhedron([[1.0, 1.0]], [5.0]))
    q = Polyhedron.from_json(p.to_json())
    np.testing.assert_array_equal(p.normals, q.normals)
    lo, hi = p.bounding_box()
    np.testing.assert_array_equal(lo, [-1, -2])
    np.testing.assert_array_equal(hi, [3, 4])
    assert Polyhedron.universe(2).bounding_box() is None
    assert Polyhedron.universe(3).contains(np.ones(3))


@settings(max_examples=40, deadline=None)
@given(
    lo=st.lists(st.floats(-5, 5), min_size=2, max_size=2),
    width=st.lists(st.floats(0.01, 4), min_size=2, max_size=2),
    corner=st.lists(st.booleans(), min_size=2, max_size=2),
)
def test_box_contains_its_vertices(lo, width, corner):
    lo = np.array(lo)
    hi = lo + np.array(width)
    v = np.where(corner, hi, lo)
    assert Polyhedron.box(lo, hi).contains(v, 1e-9)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(1, 6), m_eq=st.integers(0, 2), m_in=st.integers(0, 12))
def test_random_qp_matches_dense_kkt(seed, n, m_eq, m_in):
    rng = np.random.default_rng(seed)
    m_eq = min(m_eq, n - 1) if n > 1 else 0
    qp, x_star, obj, active = random_kkt_qp(rng, n, m_eq, m_in)
    sol = solve_qp(qp)
    assert sol.status is QpStatus.OPTIMAL
    x_dense = dense_kkt_solve(qp, active)
    ref = qp.objective(x_dense)
    assert abs(sol.objective - ref) <= 1e-6 * max(1.0, abs(ref))
    res = kkt_residuals(qp, sol)
    scale = 1 + np.abs(qp.lin_cost).max(initial=0) + np.abs(qp.ineq_offsets).max(initial=0)
    assert res["primal"] <= 1e-6 * scale
    assert res["stationarity"] <= 1e-6 * scale
    # weak duality
    assert sol.dual_objective(qp) <= sol.objective + 1e-6 * max(1.0, abs(sol.objective))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), alpha=st.floats(0.05, 20.0))
def test_row_scaling(seed, alpha):
    rng = np.random.default_rng(seed)
    # at most two active rows in three variables keeps the multipliers unique
    qp, _, _, _ = random_kkt_qp(rng, 3, 0, 2)
    base = solve_qp(qp)
    G = qp.ineq_normals.copy()
    g = qp.ineq_offsets.copy()
    G[0] *= alpha
    g[0] *= alpha
    scaled = solve_qp(QuadProgram(qp.quad_cost, qp.lin_cost, qp.const_cost, ineq_normals=G, ineq_offsets=g))
    np.testing.assert_allclose(scaled.primal, base.primal, atol=1e-5)
    assert scaled.dual_ineq[0] == pytest.approx(base.dual_ineq[0] / alpha, abs=1e-5)
