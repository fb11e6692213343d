"""Command-line entry point.

Subcommands: ``run``, ``check-gradient``, ``compare`` and ``emit-config``.
Exit codes: 0 success, 1 verification or convergence failure, 2 usage or
configuration error.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from ncgshape import mesh as meshmod
from ncgshape.config import RunConfig, config_from_dict, emit_config, parse_config
from ncgshape.errors import ConfigError, MeshError, ShapeOptError
from ncgshape.optimizers import VARIANTS, OptHistory, run
from ncgshape.shape_calculus import check_gradient, random_smooth_field

log = logging.getLogger("ncgshape")

HISTORY_COLUMNS = ("iter", "cost", "grad_norm", "rel_grad_norm", "step", "beta", "restart")
SUMMARY_KEYS = (
    "problem",
    "variant",
    "termination_reason",
    "converged",
    "iterations",
    "initial_cost",
    "final_cost",
    "final_grad_norm",
    "final_rel_grad_norm",
    "initial_area",
    "final_area",
    "relative_volume_change",
    "min_cell_quality",
    "wall_time",
)
FD_COLUMNS = (
    "field",
    "dJ",
    "fd_t",
    "fd_t_half",
    "rel_err_t",
    "rel_err_t_half",
    "richardson_ratio",
    "extrapolated_rel_err",
    "pass",
)
COMPARE_COLUMNS = (
    "variant",
    "iterations",
    "converged",
    "final_cost",
    "final_rel_grad_norm",
    "wall_time",
    "termination_reason",
)


def fmt(x) -> str:
    """Shortest round-trip decimal representation."""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_history(hist: OptHistory, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HISTORY_COLUMNS)
        for r in hist.records:
            writer.writerow(
                [fmt(r.k), fmt(r.cost), fmt(r.grad_norm), fmt(r.rel_grad_norm),
                 fmt(r.step), fmt(r.beta), fmt(bool(r.restart))]
            )


def summarize(cfg: RunConfig, hist: OptHistory) -> dict:
    a0 = hist.initial_mesh.area()
    a1 = hist.final_mesh.area()
    initial_cost = hist.records[0].cost if hist.records else float("nan")
    final = hist.records[-1] if hist.records else None
    return {
        "problem": cfg["problem"],
        "variant": hist.variant,
        "termination_reason": hist.reason,
        "converged": hist.converged,
        "iterations": hist.iterations,
        "initial_cost": initial_cost,
        "final_cost": final.cost if final else None,
        "final_grad_norm": final.grad_norm if final else None,
        "final_rel_grad_norm": final.rel_grad_norm if final else None,
        "initial_area": a0,
        "final_area": a1,
        "relative_volume_change": (a1 - a0) / a0,
        "min_cell_quality": meshmod.min_cell_quality(hist.final_mesh),
        "wall_time": hist.wall_time,
    }


def _run_one(cfg: RunConfig, variant: str, out: Path) -> tuple[OptHistory, dict]:
    mesh = cfg.build_mesh()
    problem = cfg.build_problem(mesh)
    hist = run(problem, mesh, cfg.opt_config(variant))
    out.mkdir(parents=True, exist_ok=True)
    write_history(hist, out / "history.csv")
    meshmod.write_vtk(hist.initial_mesh, out / "mesh_initial.vtk", title="initial mesh")
    disp = hist.final_mesh.coords - hist.initial_mesh.coords
    meshmod.write_vtk(
        hist.final_mesh,
        out / "mesh_final.vtk",
        title=f"final mesh ({hist.variant})",
        point_vectors={"displacement": disp},
    )
    meshmod.write_mesh(hist.final_mesh, out / "mesh_final.txt")
    summary = summarize(cfg, hist)
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return hist, summary


def cmd_run(cfg: RunConfig, out: Path) -> int:
    hist, summary = _run_one(cfg, cfg["variant"], out)
    print(
        f"{hist.variant}: {hist.reason} after {hist.iterations} iterations, "
        f"J={summary['final_cost']!r}, rel. gradient norm={summary['final_rel_grad_norm']!r}"
    )
    if not hist.converged:
        print(f"error: {hist.reason}", file=sys.stderr)
        return 1
    return 0


def cmd_check_gradient(cfg: RunConfig, out: Path, *, derivative_scale: float = 1.0) -> int:
    """Compare ``dJ[V]`` with difference quotients for seeded random fields.

    ``derivative_scale`` deliberately corrupts the derivative (test hook).
    """
    mesh = cfg.build_mesh()
    problem = cfg.build_problem(mesh)
    rng = cfg.rng()
    fields = [random_smooth_field(mesh, rng) for _ in range(cfg["n_fields"])]
    results = check_gradient(problem, mesh, fields, cfg["fd_t"], derivative_scale)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "fd_report.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(FD_COLUMNS)
        for i, r in enumerate(results):
            writer.writerow(
                [fmt(i), fmt(r.derivative), fmt(r.fd_t), fmt(r.fd_half), fmt(r.rel_error),
                 fmt(r.rel_error_half), fmt(r.richardson_ratio),
                 fmt(r.extrapolated_rel_error), fmt(r.passes())]
            )
    failed = [i for i, r in enumerate(results) if not r.passes()]
    worst = max(range(len(results)), key=lambda i: results[i].rel_error)
    w = results[worst]
    print(
        f"{len(results) - len(failed)}/{len(results)} fields pass; worst field {worst}: "
        f"rel. error {w.rel_error:.3e}, Richardson ratio {w.richardson_ratio:.3f}, "
        f"extrapolated rel. error {w.extrapolated_rel_error:.3e}"
    )
    if failed:
        print(f"error: gradient check failed for fields {failed}", file=sys.stderr)
        return 1
    return 0


def _compare_job(args):
    values, variant, out = args
    cfg = RunConfig(values)
    try:
        hist, summary = _run_one(cfg, variant, Path(out))
        return variant, summary
    except ShapeOptError as exc:
        return variant, {"iterations": -1, "converged": False, "final_cost": float("nan"),
                         "final_rel_grad_norm": float("nan"), "wall_time": 0.0,
                         "termination_reason": f"error: {exc}"}


def cmd_compare(cfg: RunConfig, out: Path, *, parallel: bool = False) -> int:
    """Run every method on the same problem; write ``compare.csv``."""
    jobs = [(cfg.values, v, str(out / v)) for v in VARIANTS]
    if parallel:
        with concurrent.futures.ProcessPoolExecutor() as pool:
            rows = list(pool.map(_compare_job, jobs))
    else:
        rows = [_compare_job(j) for j in jobs]
    order = {v: i for i, v in enumerate(VARIANTS)}
    rows.sort(key=lambda r: (not r[1]["converged"], r[1]["iterations"], order[r[0]]))
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "compare.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(COMPARE_COLUMNS)
        for variant, s in rows:
            writer.writerow(
                [variant, fmt(s["iterations"]), fmt(bool(s["converged"])), fmt(s["final_cost"]),
                 fmt(s["final_rel_grad_norm"]), fmt(s["wall_time"]), s["termination_reason"]]
            )
            print(f"{variant:6s} {s['iterations']:5d}  {s['termination_reason']}")
    return 0 if all(s["converged"] for _, s in rows) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ncgshape", description="Shape optimization with nonlinear CG methods."
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in [
        ("run", "optimize one problem with one method"),
        ("check-gradient", "verify the shape derivative against finite differences"),
        ("compare", "run all seven methods on the same problem"),
        ("emit-config", "print the fully resolved configuration"),
    ]:
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", type=Path, help="JSON configuration file")
        p.add_argument("--out", type=Path, help="output directory")
        p.add_argument("--seed", type=int, help="seed for random test fields")
        if name == "compare":
            p.add_argument("--parallel", action="store_true")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        cfg = parse_config(args.config) if args.config else config_from_dict({})
        if args.seed is not None:
            cfg = cfg.replace(seed=args.seed)
        if args.out is not None:
            cfg = cfg.replace(output=str(args.out))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out = Path(cfg["output"])
    if args.command == "emit-config":
        sys.stdout.write(emit_config(cfg))
        return 0
    try:
        if args.command == "run":
            return cmd_run(cfg, out)
        if args.command == "check-gradient":
            return cmd_check_gradient(cfg, out)
        return cmd_compare(cfg, out, parallel=args.parallel)
    except (MeshError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ShapeOptError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
