"""Double-integrator routing benchmark, run orchestration and output files.

The bundled system routes a double integrator through square ``A`` or ``B``
before it may enter the target square.  Everything a run produces is plain
JSON or CSV so results can be compared and plotted elsewhere.
"""

from __future__ import annotations

import csv
import datetime as _dt
import json
import math
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .abstraction import (
    build_abstraction,
    graph_lyapunov,
    graph_value_iteration,
    mpc2_value_functions,
    transfer_value,
)
from .bnb import DEFAULT_ORACLE_BUDGET, Incumbent, SolveReport, SolveStatus, default_beta, enumeration_oracle, solve
from .geometry import Polyhedron, qp_tolerance
from .model import (
    ConfigurationError,
    HybridSystem,
    QuadraticStageCost,
    TransitionRule,
    Trajectory,
    load_system,
    validate,
)
from .mpc import MpcConfig
from .qfunction import CutStore

DOMAIN = ((-10.0, -10.0), (1.85, 1.85))
INPUT_BOX = ((-2.0,), (2.0,))
DYN_A = [[1.0, 1.0], [0.0, 1.0]]
DYN_B = [[0.5], [1.0]]
# unit squares; every guard is intersected with the domain, which clips A at x2 = 1.85
TARGET_BOX = ((-0.5, -0.5), (0.5, 0.5))
SQUARE_A = ((-6.0, 1.0), (-5.0, 2.0))
SQUARE_B = ((-7.0, 0.0), (-6.0, 1.0))

BUNDLED_SYSTEM = "di2route.json"

STATUS_EXIT = {SolveStatus.OPTIMAL: 0, SolveStatus.INFEASIBLE: 2, SolveStatus.ABORTED: 3}
EXIT_CONFIG = 4


def di2route(
    target: tuple = TARGET_BOX,
    square_a: tuple = SQUARE_A,
    square_b: tuple = SQUARE_B,
) -> HybridSystem:
    """Build the routing benchmark.

    Modes ``q_free`` (no square visited yet), ``q_vis`` (``A`` or ``B`` visited)
    and the absorbing target mode ``q_t``.  Each region argument is a box given
    as ``(lower_corner, upper_corner)``.
    """
    A, B, c = np.array(DYN_A), np.array(DYN_B), np.zeros(2)
    dom = Polyhedron.box(*DOMAIN)
    U = Polyhedron.box(*INPUT_BOX)
    box = lambda b: Polyhedron.box(*b).intersect(dom)
    Xt, PA, PB = box(target), box(square_a), box(square_b)

    def rule(q, v, r, guard):
        return TransitionRule(q, v, r, A, B, c, guard, U)

    rules = [
        rule("q_free", "toFree", "q_free", dom),
        rule("q_free", "toA", "q_vis", PA),
        rule("q_free", "toB", "q_vis", PB),
        rule("q_vis", "toFree", "q_vis", dom),
        rule("q_vis", "toTarget", "q_t", Xt),
        # staying in q_t keeps the state in the target square
        rule("q_t", "toFree", "q_t", Xt),
    ]
    costs = {
        "q_free": QuadraticStageCost.input_energy(2, 1, 1.0),
        "q_vis": QuadraticStageCost.input_energy(2, 1, 1.0),
        "q_t": QuadraticStageCost.input_energy(2, 1, 0.0),
    }
    defaults = target == TARGET_BOX and square_a == SQUARE_A and square_b == SQUARE_B
    meta = {
        "name": "DI-2ROUTE",
        "initial_mode": "q_free",
        "regions": {"target": target, "A": square_a, "B": square_b},
        "regions_are_defaults": bool(defaults),
    }
    return HybridSystem(
        ["q_free", "q_vis", "q_t"],
        ["toFree", "toA", "toB", "toTarget"],
        2, 1, rules, costs, dom, frozenset({"q_t"}), Xt, meta,
    )


def bundled_system_path() -> Path:
    return Path(str(resources.files("hybridbnb") / "data" / BUNDLED_SYSTEM))


def resolve_system(path: str | Path | None) -> HybridSystem:
    """Load ``path`` or the bundled benchmark when ``path`` is None."""
    p = bundled_system_path() if path is None else Path(path)
    if not p.exists():
        raise ConfigurationError(f"system file {str(p)!r} does not exist")
    return load_system(p)


@dataclass
class BenchmarkInstance:
    """One branch-and-bound run.

    ``store_kind`` is ``"q1"`` (no lower bound), ``"q2"`` (abstraction values)
    or ``"file"`` (abstraction values plus the cuts in ``cut_files``).
    """

    system_file: str | None = None
    q0: str | None = None
    x0: tuple[float, ...] = (1.5, -2.5)
    max_len: int = 9
    store_kind: str = "q2"
    cut_files: tuple[str, ...] = ()
    horizon: int = 0
    learn: bool = False
    seed: int = 0
    tol: float = 1e-7
    max_iterations: int | None = None

    def __post_init__(self):
        self.x0 = tuple(float(v) for v in self.x0)
        self.cut_files = tuple(str(p) for p in self.cut_files)
        if self.max_len < 1:
            raise ConfigurationError("max_len must be at least 1")
        if self.store_kind not in ("q1", "q2", "file"):
            raise ConfigurationError(f"unknown store kind {self.store_kind!r}")
        if self.store_kind == "file" and not self.cut_files:
            raise ConfigurationError("store kind 'file' needs at least one cut file")
        if self.horizon < 0:
            raise ConfigurationError("horizon must be nonnegative")
        if not self.tol > 0:
            raise ConfigurationError("tol must be positive")
        if self.learn and self.store_kind == "q1":
            raise ConfigurationError("learning needs a cut store; use --store q2 or file")

    def to_json(self) -> dict:
        out = asdict(self)
        out["x0"] = list(self.x0)
        out["cut_files"] = list(self.cut_files)
        return out


INSTANCE_1 = dict(x0=(1.5, -2.5), max_len=9)
INSTANCE_2 = dict(x0=(1.0, -6.0), max_len=11)


@dataclass
class RunArtifacts:
    report: dict
    trajectories: list[Trajectory] = field(default_factory=list)
    cuts: CutStore | None = None
    status: SolveStatus = SolveStatus.INFEASIBLE

    @property
    def exit_code(self) -> int:
        return STATUS_EXIT[self.status]


def _check_instance(sys: HybridSystem, inst: BenchmarkInstance) -> tuple[str, np.ndarray]:
    q0 = inst.q0 or sys.metadata.get("initial_mode") or sys.modes[0]
    if q0 not in sys.modes:
        raise ConfigurationError(f"unknown initial mode {q0!r}")
    x0 = np.asarray(inst.x0, dtype=float)
    if x0.size != sys.n_x:
        raise ConfigurationError(f"x0 has {x0.size} entries, the system has {sys.n_x} states")
    if not sys.state_domain.contains(x0, 1e-9):
        raise ConfigurationError(f"x0 = {list(inst.x0)} is outside the state domain")
    return q0, x0


def q2_store(sys: HybridSystem) -> CutStore:
    abs_sys = build_abstraction(sys)
    return transfer_value(graph_value_iteration(abs_sys, sys.target_modes), sys.n_x)


def build_store(sys: HybridSystem, kind: str, cut_files: Sequence[str] = ()) -> CutStore:
    if kind == "q1":
        return CutStore.minus_infinity(sys)
    store = q2_store(sys)
    for path in cut_files:
        loaded = CutStore.load(path)
        if loaded.n_x != sys.n_x or not set(loaded.cuts) <= set(sys.modes):
            raise ConfigurationError(f"cut file {path!r} does not match the system")
        store = store.merge(loaded)
    return store


def mpc_config(sys: HybridSystem, horizon: int, max_len: int) -> MpcConfig:
    """Receding-horizon completion bounded by ``max_len`` steps in total."""
    lyap = graph_lyapunov(build_abstraction(sys), sys.target_modes)
    try:
        stores = mpc2_value_functions(lyap, max_len, sys.n_x)
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from exc
    return MpcConfig(horizon, max_len, stores, schedule="deadline")


def _timestamp() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def run_solve(inst: BenchmarkInstance, store: CutStore | None = None, sys: HybridSystem | None = None) -> RunArtifacts:
    """Branch and bound on one instance.

    ``store`` overrides the store described by the instance; it is mutated when
    ``inst.learn`` is set.
    """
    sys = sys or resolve_system(inst.system_file)
    q0, x0 = _check_instance(sys, inst)
    with qp_tolerance(inst.tol):
        if store is None:
            store = build_store(sys, inst.store_kind, inst.cut_files)
        mpc = mpc_config(sys, inst.horizon, inst.max_len) if inst.horizon > 0 else None
        beta = default_beta(sys, q0, x0, inst.horizon, mpc)
        trajectories: list[Trajectory] = []

        def keep(res):
            if res.trajectory is not None:
                trajectories.append(res.trajectory)
            return res

        inc, rep = solve(
            sys, store, q0, x0, inst.max_len,
            beta=lambda vs, ev=None: keep(beta(vs, ev)),
            learn=inst.learn,
            max_iterations=inst.max_iterations,
        )
    # the wrapper saw every finite candidate; keep the ones that became incumbents
    improving, best = [], math.inf
    for traj in trajectories:
        if traj.cost < best - 1e-9:
            improving.append(traj)
            best = traj.cost
    report = solve_report_json(sys, inst, rep)
    return RunArtifacts(report, improving, store if inst.learn else None, rep.status)


def solve_report_json(sys: HybridSystem, inst: BenchmarkInstance, rep: SolveReport) -> dict:
    return rep.to_json(
        kind="solve",
        instance=inst.to_json(),
        system=sys.metadata.get("name", "custom"),
        final_trajectory=_traj_json(rep.final),
        timestamp={"utc": _timestamp(), "elapsed_s": rep.elapsed},
    )


def _traj_json(inc: Incumbent) -> dict | None:
    if inc.trajectory is None:
        return None
    t = inc.trajectory
    return {"modes": list(t.modes), "states": [x.tolist() for x in t.states], "cost": t.cost}


def run_oracle(inst: BenchmarkInstance, budget: int = DEFAULT_ORACLE_BUDGET) -> RunArtifacts:
    sys = resolve_system(inst.system_file)
    q0, x0 = _check_instance(sys, inst)
    with qp_tolerance(inst.tol):
        best, count, status = enumeration_oracle(sys, q0, x0, inst.max_len, budget)
    report = {
        "kind": "oracle",
        "status": status.value,
        "words_examined": count,
        "budget": budget,
        "final": best.to_json(),
        "final_trajectory": _traj_json(best),
        "instance": inst.to_json(),
        "timestamp": {"utc": _timestamp()},
    }
    if status is SolveStatus.ABORTED:
        report["message"] = f"oracle budget of {budget} words exceeded before the enumeration finished"
    trajs = [best.trajectory] if best.trajectory is not None else []
    return RunArtifacts(report, trajs, None, status)


def run_abstract(system_file: str | None = None) -> dict:
    sys = resolve_system(system_file)
    abs_sys = build_abstraction(sys)
    v2 = graph_value_iteration(abs_sys, sys.target_modes)
    lyap = graph_lyapunov(abs_sys, sys.target_modes)
    return {
        "kind": "abstract",
        "system": sys.metadata.get("name", "custom"),
        "abstraction": abs_sys.to_json(),
        "V2": v2.to_json(),
        "lyapunov": lyap.to_json(),
    }


def write_report(report: dict, path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")


def write_trajectory_csv(traj: Trajectory, path: str | Path, n_x: int, n_u: int) -> None:
    header = ["step", "q", *[f"x{i + 1}" for i in range(n_x)], "v", *[f"u{i + 1}" for i in range(n_u)]]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in traj.csv_rows():
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def read_trajectory_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_artifacts(
    art: RunArtifacts,
    sys: HybridSystem,
    report_path: str | Path | None = None,
    traj_dir: str | Path | None = None,
    cuts_out: str | Path | None = None,
) -> list[Path]:
    written = []
    if report_path is not None:
        write_report(art.report, report_path)
        written.append(Path(report_path))
    if traj_dir is not None:
        d = Path(traj_dir)
        d.mkdir(parents=True, exist_ok=True)
        for i, traj in enumerate(art.trajectories):
            p = d / f"incumbent_{i:03d}.csv"
            write_trajectory_csv(traj, p, sys.n_x, sys.n_u)
            written.append(p)
    if cuts_out is not None:
        if art.cuts is None:
            raise ConfigurationError("no cut store to export; enable learning")
        art.cuts.save(cuts_out)
        written.append(Path(cuts_out))
    return written


def write_bundled_system(path: str | Path | None = None) -> Path:
    """Regenerate the bundled system file from :func:`di2route`."""
    p = bundled_system_path() if path is None else Path(path)
    sys = di2route()
    diags = validate(sys)
    if diags:
        raise ConfigurationError("; ".join(diags))
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(json.dumps(sys.to_json(), indent=1) + "\n")
    return p
