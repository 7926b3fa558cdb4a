"""Acceptance criteria, one test per criterion.

Each test prints a single ``PASS criterion N: ...`` or ``FAIL criterion N: ...``
line before asserting.
"""

import math

import numpy as np
import pytest

from hybridbnb import bench
from hybridbnb.bnb import SolveStatus, enumeration_oracle, solve
from hybridbnb.geometry import QpStatus, QuadProgram, solve_qp
from hybridbnb.model import simulate
from hybridbnb.mpc import MpcConfig, discrete_paths, receding_horizon, stage_cost_floor
from hybridbnb.qfunction import CutOrigin, CutStore, exact_node_cost, node_lower_bound
from hybridbnb.abstraction import check_alternating_simulation, mpc2_value_functions
from qp_cases import dense_kkt_solve, random_kkt_qp
from test_abstraction import _chain, _gridded_toy
from test_mpc import mpc1_toy, mpc2_toy

X0S = {"I1": bench.INSTANCE_1["x0"], "I2": bench.INSTANCE_2["x0"]}


@pytest.fixture
def verdict(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
        assert ok, detail

    return emit


def _store(sys_, kind, q2):
    return CutStore.minus_infinity(sys_) if kind == "q1" else q2.copy()


def _same_cost(a, b):
    if not (math.isfinite(a) and math.isfinite(b)):
        return a == b
    return abs(a - b) <= 1e-5 * max(1.0, abs(b))


def test_criterion_1_oracle_equivalence(di2, di2_q2, verdict):
    # the instance lengths are checked too, since both starts need more than 7 steps
    configs = [(name, L) for name in X0S for L in (5, 6, 7)] + [("I1", 9), ("I2", 11)]
    bad, finite = [], 0
    for name, L in configs:
        oracle, _, _ = enumeration_oracle(di2, "q_free", X0S[name], L)
        finite += oracle.finite
        for kind in ("q1", "q2", "learn"):
            inc, rep = solve(di2, _store(di2, kind, di2_q2), "q_free", X0S[name], L, learn=kind == "learn")
            if rep.status is SolveStatus.ABORTED or not _same_cost(inc.bound, oracle.bound):
                bad.append(f"{name}/L={L}/{kind}: {inc.bound} vs {oracle.bound}")
    verdict(1, not bad, f"{len(configs) * 3} solves match the oracle ({finite} configurations feasible)"
            if not bad else "; ".join(bad))


def test_criterion_2_pruning_ratio(di2, di2_q2, verdict):
    counts = {}
    for name, L in (("I1", 9), ("I2", 11)):
        for kind in ("q1", "q2"):
            _, rep = solve(di2, _store(di2, kind, di2_q2), "q_free", X0S[name], L)
            counts[name, kind] = rep.iterations
    r1 = counts["I1", "q1"] / counts["I1", "q2"]
    r2 = counts["I2", "q1"] / counts["I2", "q2"]
    detail = (
        f"I1 iterations Q1={counts['I1', 'q1']} Q2={counts['I1', 'q2']} ratio {r1:.2f} (need >= 50); "
        f"I2 iterations Q1={counts['I2', 'q1']} Q2={counts['I2', 'q2']} ratio {r2:.2f} (need >= 500)"
    )
    verdict(2, r1 >= 50 and r2 >= 500, detail)


def test_criterion_3_learning_monotonicity(tmp_path, verdict):
    files, base = {}, {}
    for name, L in (("I1", 9), ("I2", 11)):
        inst = bench.BenchmarkInstance(x0=X0S[name], max_len=L, learn=True)
        art = bench.run_solve(inst)
        files[name] = tmp_path / f"{name}.json"
        art.cuts.save(files[name])
        base[name] = bench.run_solve(bench.BenchmarkInstance(x0=X0S[name], max_len=L)).report["iterations"]

    def iters(name, cut_files):
        L = 9 if name == "I1" else 11
        inst = bench.BenchmarkInstance(x0=X0S[name], max_len=L, store_kind="file", cut_files=tuple(map(str, cut_files)))
        return bench.run_solve(inst).report["iterations"]

    rerun = iters("I1", [files["I1"]])
    ok = rerun <= base["I1"]
    parts = [f"I1 Q2={base['I1']} rerun with I1 cuts={rerun}"]
    for name in X0S:
        single = {src: iters(name, [files[src]]) for src in X0S}
        merged = iters(name, [files["I1"], files["I2"]])
        ok &= all(merged <= 1.05 * s for s in single.values())
        parts.append(f"{name} merged={merged} single={single['I1']}/{single['I2']}")
    verdict(3, ok, "; ".join(parts))


def _learned_store(di2, di2_q2):
    store = di2_q2.copy()
    for name, L in (("I1", 9), ("I2", 11)):
        solve(di2, store, "q_free", X0S[name], L, learn=True)
    return store


def _random_word(rng, sys_, q, length):
    vs = []
    for _ in range(length):
        rules = sys_.rules_from(q)
        r = rules[rng.integers(len(rules))]
        vs.append(r.input)
        q = r.to_mode
    return tuple(vs)


def test_criterion_4_bellman_like(di2, di2_q2, verdict):
    rng = np.random.default_rng(2024)
    store = _learned_store(di2, di2_q2)
    learned = sum(c.origin is CutOrigin.LEARNED for q in di2.modes for c in store.cuts[q])

    mono_bad = 0
    for _ in range(200):
        x0 = rng.uniform([-9.5, -6.5], [1.5, 1.5])
        word = _random_word(rng, di2, "q_free", int(rng.integers(1, 8)))
        k = int(rng.integers(0, len(word)))
        short = node_lower_bound(di2, store, "q_free", x0, word[:k]).lower_bound
        long = node_lower_bound(di2, store, "q_free", x0, word).lower_bound
        mono_bad += not (short <= long + 1e-6)

    # samples near states the learning runs visited, so brute force is often finite
    anchors = []
    for name, L in (("I1", 9), ("I2", 11)):
        inc, _ = solve(di2, di2_q2.copy(), "q_free", X0S[name], L)
        anchors += [(q, x) for q, x in zip(inc.trajectory.modes, inc.trajectory.states) if q != "q_t"]
    words = {q: [w for k in range(6) for w in discrete_paths(di2, q, k)] for q in ("q_free", "q_vis")}
    valid_bad, finite = 0, 0
    for _ in range(100):
        q, x = anchors[rng.integers(len(anchors))]
        x = np.clip(x + rng.normal(scale=0.3, size=2), -10.0, 1.85)
        brute = min(
            (exact_node_cost(di2, q, x, w).lower_bound for w in words[q] if w and w[-1] == "toTarget"),
            default=math.inf,
        )
        finite += math.isfinite(brute)
        valid_bad += not (store.value(q, x) <= brute + 1e-5)
    verdict(
        4, mono_bad == 0 and valid_bad == 0,
        f"monotonicity violations {mono_bad}/200; cut validity violations {valid_bad}/100 "
        f"({finite} finite depth-5 values, {learned} learned cuts)",
    )


def test_criterion_5_optimal_prefix_never_pruned(di2, di2_q2, verdict):
    oracle, _, _ = enumeration_oracle(di2, "q_free", X0S["I1"], 9)
    pruned = []
    for kind in ("q1", "q2", "learn"):
        solve(di2, _store(di2, kind, di2_q2), "q_free", X0S["I1"], 9, learn=kind == "learn",
              on_prune=lambda n: pruned.append(n.vs))
    hits = [vs for vs in pruned if oracle.vs[: len(vs)] == vs]
    verdict(5, not hits, f"{len(pruned)} prunes, {len(hits)} on the optimal prefix {'/'.join(oracle.vs)}")


def test_criterion_6_mpc_termination(verdict):
    sys1, store1 = mpc1_toy()
    delta = stage_cost_floor(sys1)
    ok, parts = True, []
    for x0 in (5.5, -4.2, 2.0, 0.4):
        res = receding_horizon(sys1, MpcConfig(1, 100, [store1]), "a", [x0])
        steps = len(res.trajectory) if res.trajectory else math.inf
        bound = math.ceil(res.values[0] / delta - 1e-9)
        dec = all(c <= p - delta + 1e-6 for p, c in zip(res.values, res.values[1:]))
        ok &= steps <= bound and dec
        parts.append(f"mpc1 x0={x0}: {steps} <= {bound}")
    sys2, lyap = mpc2_toy()
    T = 2
    for x0 in (-4.0, 0.0, 3.5):
        res = receding_horizon(sys2, MpcConfig(1, T, mpc2_value_functions(lyap, T, 1), "deadline"), "a", [x0])
        steps = len(res.trajectory) if res.trajectory else math.inf
        ok &= steps <= T
        parts.append(f"mpc2 x0={x0}: {steps} <= {T}")
    verdict(6, ok, "; ".join(parts))


def test_criterion_7_qp_kernel(verdict):
    rng = np.random.default_rng(7)
    obj_bad = dual_bad = scale_bad = 0
    for i in range(1000):
        n = int(rng.integers(1, 7))
        qp, x_star, f_star, active = random_kkt_qp(rng, n, int(rng.integers(0, n)), int(rng.integers(0, 6)))
        sol = solve_qp(qp)
        ref = qp.objective(dense_kkt_solve(qp, active))
        if sol.status is not QpStatus.OPTIMAL or abs(sol.objective - ref) > 1e-6 * max(1.0, abs(ref)):
            obj_bad += 1
            continue
        dual_bad += sol.dual_objective(qp) > sol.objective + 1e-6 * max(1.0, abs(sol.objective))
        if qp.ineq_normals.shape[0]:
            alpha = float(rng.uniform(0.05, 20.0))
            G, g = qp.ineq_normals.copy(), qp.ineq_offsets.copy()
            G[0] *= alpha
            g[0] *= alpha
            scaled = solve_qp(QuadProgram(qp.quad_cost, qp.lin_cost, qp.const_cost,
                                          qp.eq_normals, qp.eq_offsets, G, g))
            scale_bad += abs(scaled.objective - sol.objective) > 1e-6 * max(1.0, abs(sol.objective))
    verdict(7, obj_bad == dual_bad == scale_bad == 0,
            f"1000 cases: objective mismatches {obj_bad}, weak-duality violations {dual_bad}, "
            f"row-scaling mismatches {scale_bad}")


def test_criterion_8_alternating_simulation(verdict):
    chain = _chain()
    concrete, graph = _gridded_toy()
    results = {
        "identity": check_alternating_simulation(chain, chain, {(x, x) for x in chain.states}),
        "missing pair": check_alternating_simulation(chain, chain, {("a", "a"), ("b", "b")}),
        "projection": check_alternating_simulation(concrete, graph, {((q, x), q) for q, x in concrete.states}),
    }
    expected = {"identity": True, "missing pair": False, "projection": True}
    verdict(8, results == expected, ", ".join(f"{k}={v}" for k, v in results.items()))


def test_criterion_9_incumbent_trace(verdict):
    runs, bad = 0, []
    for name, L in (("I1", 9), ("I2", 11)):
        for kind, learn in (("q1", False), ("q2", False), ("q2", True)):
            inst = bench.BenchmarkInstance(x0=X0S[name], max_len=L, store_kind=kind, learn=learn)
            sys_ = bench.resolve_system(None)
            art = bench.run_solve(inst, sys=sys_)
            runs += 1
            hist = [b for _, b in art.report["incumbent_history"]]
            if any(b > a for a, b in zip(hist, hist[1:])):
                bad.append(f"{name}/{kind}/{learn}: history increases")
            for traj in art.trajectories:
                again = simulate(sys_, "q_free", X0S[name], traj.discrete_inputs, traj.continuous_inputs, 1e-6)
                if again is None or not sys_.is_target(*again.final, 1e-6) or abs(again.cost - traj.cost) > 1e-8:
                    bad.append(f"{name}/{kind}/{learn}: incumbent fails to re-simulate")
    verdict(9, not bad, f"{runs} runs, histories nonincreasing, incumbents certified" if not bad else "; ".join(bad))
