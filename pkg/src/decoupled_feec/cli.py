"""Command line interface: ``decoupled-feec solve ...``."""
from __future__ import annotations

import argparse
import logging
import sys

from .harness import PROBLEMS, make_case, run_audits, run_convergence
from .mesh import box_mesh
from .system import SolverConfig, SolverError

EXIT_OK = 0
EXIT_SOLVER = 2
EXIT_INVARIANT = 3

log = logging.getLogger("decoupled_feec")


def _levels(text):
    try:
        levels = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"levels must be comma-separated integers, got {text!r}")
    if not levels or any(n < 1 for n in levels) or levels != sorted(set(levels)):
        raise argparse.ArgumentTypeError("levels must be increasing positive integers")
    return levels


def build_parser():
    parser = argparse.ArgumentParser(prog="decoupled-feec",
                                     description="Decoupled finite element solver for fourth-order exterior problems.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-level progress")
    sub = parser.add_subparsers(dest="command", required=True)
    s = sub.add_parser("solve", help="run a convergence study on uniform box meshes")
    s.add_argument("--problem", choices=PROBLEMS, default="biharmonic")
    s.add_argument("--dim", type=int, choices=(2, 3), default=3)
    s.add_argument("--k", type=int, choices=(1, 2), default=1)
    s.add_argument("--levels", type=_levels, default=[4, 8, 16])
    s.add_argument("--deep", action="store_true", help="append one more level of twice the finest n")
    s.add_argument("--solver", choices=("auto", "direct", "iterative"), default="auto")
    s.add_argument("--rtol", type=float, default=1e-10)
    s.add_argument("--no-eliminate", action="store_true",
                   help="solve the multiplier saddle systems without eliminating the multipliers")
    s.add_argument("--out", help="write the report as CSV")
    s.add_argument("--mesh-dump", help="write the finest mesh to this path")
    s.add_argument("--audit", action="store_true", help="run structural audits before solving")
    return parser


def cmd_solve(args) -> int:
    levels = list(args.levels)
    if args.deep:
        levels.append(2 * levels[-1])
    try:
        cfg = SolverConfig(solver=args.solver, rtol=args.rtol, eliminate=not args.no_eliminate)
        make_case(args.problem, args.dim)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    if args.audit:
        failed = [a for a in run_audits(args.dim, ks=(args.k,)) if not a.ok]
        for a in failed:
            print(f"audit failed: {a.name} {a.detail}", file=sys.stderr)
        if failed:
            return EXIT_INVARIANT
        print("audits: all passed")
    progress = lambda lv: log.info("n=%d done in %.1fs", lv.n, lv.seconds)
    try:
        report = run_convergence(args.problem, args.dim, args.k, levels, cfg, progress=progress)
    except (SolverError, MemoryError, ArithmeticError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    print(report.to_markdown())
    if args.out:
        report.to_csv(args.out)
    if args.mesh_dump:
        box_mesh(args.dim, levels[-1]).dump(args.mesh_dump)
    worst = max(lv.mult_ratio for lv in report.levels)
    if worst > cfg.tol_mult:
        print(f"invariant violated: multiplier ratio {worst:.3e} exceeds {cfg.tol_mult:.1e}", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.command == "solve":
        return cmd_solve(args)
    return EXIT_SOLVER  # pragma: no cover


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
