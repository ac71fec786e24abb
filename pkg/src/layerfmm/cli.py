"""Command-line driver.

Subcommands::

    layerfmm solve SCENE.toml
    layerfmm converge SCENE.toml --n 256,512,1024
    layerfmm scale SCENE.toml --n 4000,8000,16000
    layerfmm greens SCENE.toml --src x,y --dst x,y

Common flags: ``--out DIR`` (default ``out``), ``--threads T`` and
``--deterministic`` (single thread, fixed seeds; reports then differ only
in their ``timings`` fields).
"""

import argparse
import csv
import json
import logging
import os
import sys
import time

import numpy as np

from .config import ConfigError, parse_config

log = logging.getLogger("layerfmm")

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2

SEED = 20240607


def _empty_report(command, args):
    return {
        "command": command,
        "status": "error",
        "phase": None,
        "error": None,
        "deterministic": bool(args.deterministic),
        "threads": args.threads,
        "config": None,
        "mesh": None,
        "fmm": None,
        "solve": None,
        "errors": None,
        "results": None,
        "timings": {},
    }


def _write_json(path, doc):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_field_csv(path, grid):
    """Write a field grid with header ``x,y,re_us,im_us,mask``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "re_us", "im_us", "mask"])
        for (x, y), u, m in zip(grid["points"], grid["u"], grid["mask"]):
            w.writerow([repr(float(x)), repr(float(y)), repr(float(u.real)), repr(float(u.imag)), int(m)])


def _write_table(path, rows):
    if not rows:
        return
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


def _mesh_info(mesh, stack):
    return {
        "n_panels": int(mesh.size),
        "per_layer": [int(mesh.layer_count(l)) for l in range(stack.n_layers)],
        "min_length": float(mesh.lengths.min()),
        "max_length": float(mesh.lengths.max()),
    }


def parse_n_list(text):
    """Parse ``"256,512"`` into a list of positive integers."""
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError as err:
        raise ConfigError([f"--n: not a list of integers: {text!r}"]) from err
    if not vals:
        raise ConfigError(["--n: empty list"])
    if any(v < 16 for v in vals):
        raise ConfigError(["--n: every N must be at least 16"])
    return vals


def run_solve(cfg, out_dir, report):
    """Solve one scene, write ``report.json`` and ``field.csv``; return the exit code."""
    from .solver import solve_scene

    report["phase"] = "solve"
    res = solve_scene(cfg)
    stack = cfg.layer_stack()
    report["mesh"] = _mesh_info(res.mesh, stack)
    report["fmm"] = dict(res.operator.stats)
    solve = res.report.to_dict()
    report["timings"] = solve.pop("timings")
    report["solve"] = solve
    report["errors"] = res.errors or {}
    if res.grid is not None:
        report["phase"] = "output"
        write_field_csv(os.path.join(out_dir, "field.csv"), res.grid)
    report["phase"] = None
    report["status"] = "ok" if res.report.converged else "not_converged"
    return EXIT_OK if res.report.converged else EXIT_FAILED


def run_convergence(cfg, n_list, out_dir=None):
    """Manufactured-solution refinement study.

    Returns
    -------
    list of dict
        One row per N with errors, iteration counts (with and without the
        preconditioner), per-iteration time and successive error ratios.
    """
    from .solver import solve_scene

    if not n_list:
        raise ConfigError(["--n: empty list"])
    if cfg.incidence.kind != "point":
        raise ConfigError(["incidence.kind: convergence runs need a point source ('point')"])
    rows = []
    for n in n_list:
        with_pc = solve_scene(cfg, n_total=n, precondition=True, grid=False)
        without = solve_scene(cfg, n_total=n, precondition=False, grid=False)
        t = with_pc.report.timings
        it = max(with_pc.report.iterations, 1)
        row = {
            "n_target": n,
            "n_panels": int(with_pc.mesh.size),
            "linf": with_pc.errors["linf"],
            "l2": with_pc.errors["l2"],
            "iterations_preconditioned": with_pc.report.iterations,
            "iterations_plain": without.report.iterations,
            "time_per_iteration": (t["matvec_total"] + t["preconditioner_apply_total"]) / it,
            "converged": bool(with_pc.report.converged and without.report.converged),
            "ratio_linf": None,
            "ratio_l2": None,
        }
        if rows:
            row["ratio_linf"] = rows[-1]["linf"] / row["linf"]
            row["ratio_l2"] = rows[-1]["l2"] / row["l2"]
        rows.append(row)
        log.info("N=%d linf=%.3e l2=%.3e", row["n_panels"], row["linf"], row["l2"])
    if out_dir:
        _write_table(os.path.join(out_dir, "convergence.csv"), rows)
    return rows


def _timed_iteration(op, pre, rng, repeats):
    v = rng.standard_normal(op.N) + 1j * rng.standard_normal(op.N)
    w = op.matvec(v)
    if pre is not None:
        pre(w)
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        w = op.matvec(v)
        if pre is not None:
            w = pre(w)
        best = min(best, time.perf_counter() - t0)
    return best


def run_scaling(cfg, n_list, out_dir=None, repeats=7, seed=SEED):
    """Time one matvec plus preconditioner application per N and fit a log-log slope.

    Returns
    -------
    rows : list of dict
    slope : float or None
        Least-squares slope of ``log(time)`` against ``log(N)``; ``None``
        for a single N.
    """
    from .fmm.operator import FMMOperator, FMMParams
    from .geometry import mesh_scene
    from .sommerfeld import RuleBook
    from .solver import build_preconditioner

    if not n_list:
        raise ConfigError(["--n: empty list"])
    stack = cfg.layer_stack()
    book = RuleBook(stack, tol=cfg.quad_tol)
    rng = np.random.default_rng(seed)
    rows = []
    for n in n_list:
        mesh = mesh_scene(cfg.curves(), cfg.panel_counts(n), stack)
        t0 = time.perf_counter()
        params = FMMParams(p=cfg.fmm.p, leaf_size=cfg.fmm.leaf_size, theta=cfg.fmm.theta, tol=cfg.quad_tol)
        op = FMMOperator(mesh, stack, params, book)
        pre = build_preconditioner(op) if cfg.gmres.precondition else None
        setup = time.perf_counter() - t0
        t_it = _timed_iteration(op, pre, rng, repeats)
        rows.append({
            "n_target": n,
            "n_panels": int(mesh.size),
            "setup_time": setup,
            "time_per_iteration": t_it,
            "near_nnz": op.stats["near_nnz"],
        })
        log.info("N=%d iteration time %.4fs", mesh.size, t_it)
    slope = None
    if len(rows) >= 2:
        x = np.log([r["n_panels"] for r in rows])
        y = np.log([r["time_per_iteration"] for r in rows])
        slope = float(np.polyfit(x, y, 1)[0])
    if out_dir:
        _write_table(os.path.join(out_dir, "scaling.csv"), rows)
    return rows, slope


def _point(text, name):
    try:
        x, y = (float(v) for v in text.split(","))
    except ValueError as err:
        raise ConfigError([f"--{name}: expected x,y"]) from err
    return np.array([x, y])


def run_greens(cfg, src, dst):
    """Layered Green's function ``G(dst, src)`` with its free and reaction parts."""
    from .sommerfeld import layered_green, reaction_green

    stack = cfg.layer_stack()
    ls, ld = stack.layer_of(src[1]), stack.layer_of(dst[1])
    g = layered_green(stack, ld, ls, dst, src)
    gr = reaction_green(stack, ld, ls, dst, src)
    return {
        "src": [float(v) for v in src],
        "dst": [float(v) for v in dst],
        "src_layer": int(ls),
        "dst_layer": int(ld),
        "re_g": g.real,
        "im_g": g.imag,
        "re_reaction": gr.real,
        "im_reaction": gr.imag,
    }


def build_parser():
    ap = argparse.ArgumentParser(prog="layerfmm", description="Layered-media Helmholtz scattering solver")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", help="scene file (TOML)")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--threads", type=int, default=None, help="BLAS thread count")
    common.add_argument("--deterministic", action="store_true", help="single thread, fixed seeds")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="solve a scene")
    p = sub.add_parser("converge", parents=[common], help="manufactured-solution refinement study")
    p.add_argument("--n", required=True, help="comma-separated panel targets")
    p = sub.add_parser("scale", parents=[common], help="per-iteration timing study")
    p.add_argument("--n", required=True, help="comma-separated panel targets")
    p.add_argument("--repeats", type=int, default=7)
    p = sub.add_parser("greens", parents=[common], help="evaluate the layered Green's function")
    p.add_argument("--src", required=True, help="source point x,y")
    p.add_argument("--dst", required=True, help="field point x,y")
    return ap


def _limit_threads(n):
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    threads = 1 if args.deterministic else args.threads
    if threads is not None and threads < 1:
        print("--threads must be positive", file=sys.stderr)
        return EXIT_CONFIG
    limiter = _limit_threads(threads) if threads else None
    try:
        return _dispatch(args)
    finally:
        if limiter is not None:
            limiter.unregister()


def _dispatch(args):
    report = _empty_report(args.command, args)
    os.makedirs(args.out, exist_ok=True)
    report_path = os.path.join(args.out, "report.json")
    report["phase"] = "config"
    try:
        cfg = parse_config(args.config)
    except OSError as err:
        report["error"] = f"cannot read {args.config}: {err}"
        _write_json(report_path, report)
        print(report["error"], file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as err:
        report["error"] = str(err)
        _write_json(report_path, report)
        print(report["error"], file=sys.stderr)
        return EXIT_CONFIG
    report["config"] = cfg.to_dict()
    t0 = time.perf_counter()
    try:
        if args.command == "solve":
            code = run_solve(cfg, args.out, report)
        elif args.command == "converge":
            report["phase"] = "converge"
            rows = run_convergence(cfg, parse_n_list(args.n), args.out)
            report["results"] = {"rows": rows}
            report["status"] = "ok" if all(r["converged"] for r in rows) else "not_converged"
            report["phase"] = None
            code = EXIT_OK if report["status"] == "ok" else EXIT_FAILED
            for r in rows:
                print(
                    f"N={r['n_panels']:6d}  Linf={r['linf']:.3e}  L2={r['l2']:.3e}  "
                    f"it={r['iterations_plain']}/{r['iterations_preconditioned']}  "
                    f"ratio={r['ratio_linf'] or float('nan'):.2f}/{r['ratio_l2'] or float('nan'):.2f}"
                )
        elif args.command == "scale":
            report["phase"] = "scale"
            rows, slope = run_scaling(cfg, parse_n_list(args.n), args.out, repeats=args.repeats)
            report["results"] = {"rows": rows, "slope": slope, "slope_defined": slope is not None}
            report["status"] = "ok"
            report["phase"] = None
            code = EXIT_OK
            for r in rows:
                print(f"N={r['n_panels']:6d}  t_iter={r['time_per_iteration']:.4f}s")
            print("slope: undefined (single N)" if slope is None else f"slope: {slope:.3f}")
        else:
            report["phase"] = "greens"
            src, dst = _point(args.src, "src"), _point(args.dst, "dst")
            report["results"] = run_greens(cfg, src, dst)
            report["status"] = "ok"
            report["phase"] = None
            code = EXIT_OK
            print(json.dumps(report["results"], indent=2))
    except ConfigError as err:
        report["error"] = str(err)
        code = EXIT_CONFIG
    except Exception as err:  # report the failing phase, then exit non-zero
        log.exception("failure in phase %s", report["phase"])
        report["error"] = f"{type(err).__name__}: {err}"
        report["status"] = "error"
        code = EXIT_FAILED
    report["timings"]["total"] = time.perf_counter() - t0
    _write_json(report_path, report)
    return code


if __name__ == "__main__":
    sys.exit(main())
