"""Command-line front end.

Exit codes: 0 optimal, 2 infeasible, 3 aborted, 4 configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys as _sys

from . import bench
from .model import ConfigurationError, SystemValidationError


def _point(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.replace(" ", "").split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _instance_args(p: argparse.ArgumentParser, learn_default: bool = False) -> None:
    p.add_argument("--system", help="system JSON file (default: bundled DI-2ROUTE)")
    p.add_argument("--q0", help="initial mode (default: the system's initial_mode)")
    p.add_argument("--x0", type=_point, default=(1.5, -2.5), help="initial state, e.g. 1.5,-2.5")
    p.add_argument("--max-len", type=int, default=9, help="maximum number of discrete inputs")
    p.add_argument("--store", choices=("q1", "q2", "file"), default="q2")
    p.add_argument("--cuts-in", nargs="+", default=[], metavar="PATH", help="cut files merged into the q2 store")
    p.add_argument("--horizon", type=int, default=0, help="receding-horizon length used for upper bounds")
    if not learn_default:
        p.add_argument("--learn", action="store_true", help="add dual cuts along every new incumbent")
    p.add_argument("--max-iterations", type=int, default=None)
    p.add_argument("--report", help="write the report JSON here")
    p.add_argument("--traj-dir", help="write one CSV per incumbent here")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-7, help="QP primal/dual tolerance")


def _instance(ns, learn: bool | None = None) -> bench.BenchmarkInstance:
    store = ns.store
    if ns.cuts_in and store == "q2":
        store = "file"
    return bench.BenchmarkInstance(
        system_file=ns.system,
        q0=ns.q0,
        x0=ns.x0,
        max_len=ns.max_len,
        store_kind=store,
        cut_files=tuple(ns.cuts_in),
        horizon=ns.horizon,
        learn=ns.learn if learn is None else learn,
        seed=ns.seed,
        tol=ns.tol,
        max_iterations=ns.max_iterations,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hybridbnb", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="branch and bound on one instance")
    _instance_args(p)
    p.add_argument("--cuts-out", help="export the cut store after a learning run")

    p = sub.add_parser("oracle", help="exhaustive enumeration of every input word")
    _instance_args(p)
    p.add_argument("--budget", type=int, default=bench.DEFAULT_ORACLE_BUDGET, help="maximum number of words")

    p = sub.add_parser("abstract", help="dump the mode-graph abstraction and its value functions")
    p.add_argument("--system")
    p.add_argument("--report")

    p = sub.add_parser("learn-export", help="solve with learning and export the learned cuts")
    _instance_args(p, learn_default=True)
    p.add_argument("--cuts-out", required=True)
    return parser


def _summary(report: dict) -> str:
    final = report.get("final", {})
    bound = final.get("bound")
    parts = [f"status={report['status']}", f"cost={bound if bound is not None else 'inf'}"]
    for key in ("iterations", "words_examined", "cuts_added"):
        if key in report:
            parts.append(f"{key}={report[key]}")
    if final.get("vs"):
        parts.append("word=" + ",".join(final["vs"]))
    return " ".join(parts)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        if ns.command == "abstract":
            out = bench.run_abstract(ns.system)
            if ns.report:
                bench.write_report(out, ns.report)
            else:
                print(json.dumps(out, indent=1, sort_keys=True))
            return 0
        sys_ = bench.resolve_system(ns.system)
        if ns.command == "oracle":
            art = bench.run_oracle(_instance(ns, learn=False), ns.budget)
            if "message" in art.report:
                print(art.report["message"], file=_sys.stderr)
        else:
            inst = _instance(ns, learn=True if ns.command == "learn-export" else None)
            art = bench.run_solve(inst, sys=sys_)
        bench.write_artifacts(art, sys_, ns.report, ns.traj_dir, getattr(ns, "cuts_out", None))
        print(_summary(art.report))
        return art.exit_code
    except SystemValidationError as exc:
        for d in exc.diagnostics:
            print(f"error: {d}", file=_sys.stderr)
        return bench.EXIT_CONFIG
    except (ConfigurationError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return bench.EXIT_CONFIG


if __name__ == "__main__":
    raise SystemExit(main())
