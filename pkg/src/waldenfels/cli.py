"""Command-line interface.

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 a check failed.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import (ConfigError, build_problem, config_hash, drift_callable,
                     load_config, oracle_settings, target_region)
from .elliptic import escape_probability, mean_exit_time
from .errors import ConfigurationError, ShapeMismatchError, SolverError, UnsupportedKernelError, \
    WaldenfelsError
from .io import RunManifest, read_field_csv, read_json, write_field_csv, write_json
from .montecarlo import (PathConfig, SDEModel, density_histogram, estimate_escape_probability,
                         estimate_exit_time)
from .operator import assemble, verify_m_matrix
from .parabolic import TimeGrid, build_fpe_operator, discrete_delta, solve_fpe
from .verify import battery, summarize

log = logging.getLogger("waldenfels")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CHECK = 0, 2, 3, 4


class CheckFailed(Exception):
    pass


def _centre(cfg):
    lo, hi = build_problem_bbox(cfg)
    return [(l + u) / 2 for l, u in zip(lo, hi)]


def build_problem_bbox(cfg):
    d = cfg["domain"]
    if d["type"] == "interval":
        return [float(d["a"])], [float(d["b"])]
    if d["type"] == "box":
        return [float(v) for v in d["lo"]], [float(v) for v in d["hi"]]
    return ([c - d["radius"] for c in d["center"]], [c + d["radius"] for c in d["center"]])


def _snap(grid, x):
    """Nearest grid node to ``x``."""
    x = np.asarray(x, float)
    ij = np.rint((x - np.asarray(grid.origin)) / grid.h)
    return np.asarray(grid.origin) + ij * grid.h


def _probes(cfg, grid):
    pts = cfg["outputs"]["probes"] or [cfg["oracle"]["x0"] or _centre(cfg)]
    return [_snap(grid, p) for p in pts]


def _probe_values(u, probes):
    return [{"x": p.tolist(), "value": u.at(p)} for p in probes]


def _path_config(cfg, args, horizon=None):
    o = oracle_settings(cfg)
    seed = o.seed if args.seed is None else args.seed
    return PathConfig(o.dt, o.horizon if horizon is None else horizon, o.paths, seed,
                      o.diffusion, args.threads, o.batch_size)


def _model(cfg, spec):
    return SDEModel.from_problem(spec, drift_callable(cfg))


def _comparison(pde, est, h):
    diff = abs(pde - est.estimate)
    bound = 3 * est.stderr + 3 * h
    return {"pde": pde, "mc": est.estimate, "mc_stderr": est.stderr, "abs_diff": diff,
            "bound": bound, "bound_rule": "3 stderr + 3 h", "agree": bool(diff <= bound)}


def _operator_summary(op):
    rep = verify_m_matrix(op)
    return {"n_interior": op.n, "m_matrix": rep.status, "m_matrix_violation": rep.violation,
            **{k: v for k, v in op.info.to_dict().items() if k != "notes"}}


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_exit_time(cfg, args, out, manifest):
    spec = build_problem(cfg)
    tau = mean_exit_time(spec)
    grid = spec.grid
    manifest.add_output(write_field_csv(out / "tau.csv", tau, name="tau"))
    probes = _probes(cfg, grid)
    summary = {"config_hash": manifest.config_hash, "probes": _probe_values(tau, probes),
               "max": float(tau.values.max()), "solver": _solver_info(tau),
               "h": grid.h}
    failed = False
    if args.oracle:
        est = estimate_exit_time(_model(cfg, spec), probes[0], _path_config(cfg, args))
        manifest.add_output(write_json(out / "mc_exit.json", {"x0": probes[0], **est.to_dict()},
                                       kind="mc_exit"))
        summary["comparison"] = _comparison(tau.at(probes[0]), est, grid.h)
        failed = not summary["comparison"]["agree"]
    manifest.add_output(write_json(out / "tau_summary.json", summary, kind="tau_summary"))
    manifest.summary = summary
    if failed:
        raise CheckFailed("PDE and Monte Carlo exit times disagree")


def _solver_info(u):
    return {k: u.info.get(k) for k in ("method", "residual", "residual_bound", "is_m_matrix")
            if k in u.info}


def cmd_escape(cfg, args, out, manifest):
    spec = build_problem(cfg)
    U = target_region(cfg)
    p = escape_probability(spec, U)
    grid = spec.grid
    manifest.add_output(write_field_csv(out / "p.csv", p, name="p"))
    probes = _probes(cfg, grid)
    inner = p.values[spec.domain.interior]
    summary = {"config_hash": manifest.config_hash, "target": cfg["escape"]["target"],
               "probes": _probe_values(p, probes), "min_interior": float(inner.min()),
               "max_interior": float(inner.max()), "solver": _solver_info(p), "h": grid.h}
    failed = False
    if args.oracle:
        est = estimate_escape_probability(_model(cfg, spec), probes[0], U, _path_config(cfg, args))
        manifest.add_output(write_json(out / "mc_escape.json", {"x0": probes[0], **est.to_dict()},
                                       kind="mc_escape"))
        summary["comparison"] = _comparison(p.at(probes[0]), est, grid.h)
        failed = not summary["comparison"]["agree"]
    manifest.add_output(write_json(out / "p_summary.json", summary, kind="p_summary"))
    manifest.summary = summary
    if failed:
        raise CheckFailed("PDE and Monte Carlo escape probabilities disagree")


def _fpe_inputs(cfg):
    if "fpe" not in cfg:
        raise ConfigError("an fpe run needs an 'fpe' section with T and dt", path=("fpe",))
    fp = cfg["fpe"]
    spec = build_problem(cfg)
    x0 = _snap(spec.grid, fp["x0"] or _centre(cfg))
    tg = TimeGrid(fp["T"], fp["dt"])
    snaps = sorted(set(fp["snapshots"]) | {tg.T})
    return spec, x0, tg, snaps


def _run_fpe(cfg, every_step=False):
    spec, x0, tg, snaps = _fpe_inputs(cfg)
    op = build_fpe_operator(spec)
    # the parabolic checks test the step relation, so they need consecutive steps
    traj = solve_fpe(spec, discrete_delta(spec.grid, x0), tg, op=op,
                     snapshots=None if every_step else snaps)
    return spec, op, traj, x0, tg


def cmd_fpe(cfg, args, out, manifest):
    spec, op, traj, x0, tg = _run_fpe(cfg)
    for t, u in traj:
        if t == 0.0:
            continue
        manifest.add_output(write_field_csv(out / f"density_t{t:.6g}.csv", u, name="p"))
    summary = {"config_hash": manifest.config_hash, "x0": x0, "T": tg.T, "dt": tg.dt,
               "snapshot_times": list(traj.times)[1:], "mass": traj.info["mass"],
               "min": traj.info["min"], "leaked_mass": traj.info["leaked_mass"],
               "mass_nonincreasing": traj.info["mass_nonincreasing"],
               "nonnegative": bool(min(traj.info["min"]) >= 0), "operator": _operator_summary(op)}
    if args.oracle:
        if spec.grid.dim != 1:
            raise UnsupportedKernelError("the density histogram comparison is 1D only")
        cfg_o = oracle_settings(cfg)
        pc = _path_config(cfg, args, horizon=tg.T)
        hist = density_histogram(_model(cfg, spec), x0, tg.T, pc, bins=cfg_o.bins)
        edges = hist.edges[0]
        x = spec.grid.coordinates()[:, 0]
        pde = traj.final.values
        binned = np.array([pde[(x >= a) & (x < b)].mean() if np.any((x >= a) & (x < b)) else 0.0
                           for a, b in zip(edges[:-1], edges[1:])])
        width = np.diff(edges)
        sampling = np.sqrt(np.maximum(hist.density * width, 0) / pc.n_paths) / width
        dev = np.abs(binned - hist.density)
        manifest.add_output(write_json(out / "mc_density.json", {
            "edges": edges, "density": hist.density, "pde_binned": binned,
            "max_abs_diff": float(dev.max()), "max_sampling_error": float(sampling.max()),
            "n_paths": pc.n_paths, "seed": pc.seed}, kind="mc_density"))
    manifest.add_output(write_json(out / "fpe_summary.json", summary, kind="fpe_summary"))
    manifest.summary = {k: v for k, v in summary.items() if k not in ("mass", "min")}
    manifest.summary["mass_series"] = summary["mass"]
    if not (summary["mass_nonincreasing"] and summary["nonnegative"]):
        raise CheckFailed("density lost positivity or gained mass")


def cmd_verify(cfg, args, out, manifest):
    spec = build_problem(cfg)
    op = assemble(spec)
    tau = p = traj = fpe_op = None
    inp = Path(args.input) if args.input else None
    if inp is not None:
        read_json(inp / "manifest.json", kind="manifest")
    zero_c = not np.any(spec.coeffs.c[spec.domain.interior])
    if zero_c:
        if inp is not None and (inp / "tau.csv").exists():
            read_json(inp / "tau_summary.json", kind="tau_summary")
            tau = _reload(inp / "tau.csv", op)
        elif inp is None:
            tau = mean_exit_time(spec)
        if "escape" in cfg:
            if inp is not None and (inp / "p.csv").exists():
                read_json(inp / "p_summary.json", kind="p_summary")
                p = _reload(inp / "p.csv", op, escape=target_region(cfg))
            elif inp is None:
                p = escape_probability(spec, target_region(cfg))
    if "fpe" in cfg and inp is None:
        _, fpe_op, traj, _, _ = _run_fpe(cfg, every_step=True)
    reports = battery(spec, op, tau=tau, p=p, traj=traj, fpe_op=fpe_op)
    docs = [{"schema_version": 1, "config_hash": manifest.config_hash, **r.to_dict()}
            for r in reports]
    path = out / "verify_report.json"
    path.write_text(json.dumps(docs, indent=2) + "\n")
    manifest.add_output(path)
    manifest.summary = summarize(reports)
    if manifest.summary["fail"]:
        raise CheckFailed(f"failed checks: {', '.join(manifest.summary['failed'])}")


def _reload(path, op, escape=None):
    from .elliptic import far_field_indicator

    u = read_field_csv(path, op.domain.grid)
    gf = np.zeros(len(op.g_far)) if escape is None else far_field_indicator(op.domain, escape)
    u.info["g_far"] = [float(v) for v in gf]
    return u


def cmd_dump_operator(cfg, args, out, manifest):
    spec = build_problem(cfg)
    op = assemble(spec)
    path = out / "operator.txt"
    dom = op.domain
    with open(path, "w") as fh:
        fh.write(f"# blocks: M interior x interior ({op.n} x {op.n}), "
                 f"B interior x exterior ({op.n} x {dom.exterior.size}), "
                 f"F interior x far channel ({op.n} x {op.F.shape[1]})\n")
        fh.write("# block row col value\n")
        for block, r, c, v in op.triplets():
            fh.write(f"{block} {r} {c} {v:.17g}\n")
    manifest.add_output(path)
    nodes = out / "operator_nodes.csv"
    x = dom.grid.coordinates()
    with open(nodes, "w") as fh:
        fh.write("role,index,flat," + ",".join(f"x{j + 1}" for j in range(dom.grid.dim)) + "\n")
        for role, idx in (("interior", dom.interior), ("exterior", dom.exterior)):
            for k, flat in enumerate(idx):
                fh.write(f"{role},{k},{int(flat)}," + ",".join(f"{v:.17g}" for v in x[flat]) + "\n")
    manifest.add_output(nodes)
    manifest.summary = _operator_summary(op)


COMMANDS = {"exit-time": cmd_exit_time, "escape": cmd_escape, "fpe": cmd_fpe,
            "verify": cmd_verify, "dump-operator": cmd_dump_operator}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="waldenfels",
                                     description="Nonlocal Waldenfels operators on a grid.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=name != "verify",
                       help="JSON configuration (comments allowed)")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override oracle.seed")
        p.add_argument("--oracle", action="store_true", help="also run the Monte Carlo oracle")
        p.add_argument("--dry-run", action="store_true",
                       help="print the resolved parameters and exit without writing")
        p.add_argument("--threads", type=int, default=1, help="Monte Carlo worker threads")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "verify":
            p.add_argument("--input", default=None,
                           help="results directory of a previous run; its resolved config is "
                                "used when --config is omitted")
    return parser


def _dry_run(cfg, args):
    spec = build_problem(cfg)
    dom = spec.domain
    resolved = {"command": args.command, "config_hash": config_hash(cfg), "config": cfg,
                "grid": {"dim": spec.grid.dim, "h": spec.grid.h, "shape": list(spec.grid.shape),
                         "n_interior": int(dom.n_interior), "n_exterior": int(dom.exterior.size),
                         "far_field_radius": dom.far_field_radius},
                "oracle": {"enabled": args.oracle,
                           "seed": cfg["oracle"]["seed"] if args.seed is None else args.seed,
                           "threads": args.threads}}
    print(json.dumps(resolved, indent=2, default=float))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.config is None:
            if not getattr(args, "input", None):
                raise ConfigError("verify needs --config or --input")
            args.config = str(Path(args.input) / "config.resolved.json")
        cfg = load_config(args.config)
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        if args.dry_run:
            _dry_run(cfg, args)
            return EXIT_OK
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        manifest = RunManifest(args.command, config_hash(cfg),
                               cfg["oracle"]["seed"] if args.seed is None else args.seed)
        # plain resolved config, so that it can be fed back in and hashes identically
        (out / "config.resolved.json").write_text(json.dumps(cfg, indent=2) + "\n")
        manifest.add_output(out / "config.resolved.json")
        t0 = time.perf_counter()
        status = EXIT_OK
        try:
            COMMANDS[args.command](cfg, args, out, manifest)
        except CheckFailed as exc:
            print(f"check failed: {exc}", file=sys.stderr)
            status = EXIT_CHECK
        manifest.summary["wall_seconds"] = time.perf_counter() - t0
        manifest.acceptance = {"status": "fail" if status else "pass"}
        manifest.write(out)
        return status
    except (ConfigurationError, UnsupportedKernelError, ShapeMismatchError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"cannot write outputs: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except WaldenfelsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FloatingPointError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
