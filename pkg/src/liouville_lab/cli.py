"""Command-line front end: ``liouville-lab {verify,solve,continue,extract,pohozaev} --config PATH``.

Exit codes: 0 success, 1 solver non-convergence or failed check, 2 invalid
configuration, 3 I/O failure. Data go to files under the output directory;
progress goes to standard error.
"""
from __future__ import annotations

import argparse
import csv
import glob
import json
import logging
import math
import os
import sys
import time

import numpy as np
from threadpoolctl import threadpool_limits

from . import checks
from .blowup import FieldData, extract
from .config import LabConfig
from .errors import ConfigError, FoldDetected, LabError, NonConvergence
from .pohozaev import pohozaev_report, write_family_csv
from .solver import LiouvilleProblem, continuation_run, newton_solve
from .tables import write_json

log = logging.getLogger("liouville_lab")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3


def _mesh_stats(mesh) -> dict:
    return {"n_nodes": int(mesh.n_nodes), "n_interior": int(mesh.interior.size), "domain": mesh.domain}


def _problem(cfg: LabConfig, threads: int):
    geo, mesh = cfg.build_mesh()
    return geo, LiouvilleProblem(mesh, cfg.singularity_config(), cfg.potential.build(), threads=threads)


def _write_solution(out, k, sol) -> None:
    sol.to_csv(os.path.join(out, f"solution_{k:04d}.csv"))
    write_json(os.path.join(out, f"solution_{k:04d}.json"), sol.summary())


def _read_solution(path):
    """``(nodes, u, f or None, lambda)`` from a solution CSV and its optional JSON sidecar."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:4] != ["idx", "x1", "x2", "u"]:
        raise OSError(f"{path}: expected header idx,x1,x2,u[,f]")
    data = np.array([[float(v) for v in r] for r in rows[1:]])
    f = data[:, 4] if data.shape[1] > 4 else None
    lam = 1.0
    side = os.path.splitext(path)[0] + ".json"
    if os.path.exists(side):
        with open(side) as fh:
            lam = float(json.load(fh).get("lambda", 1.0))
    return data[:, 1:3], data[:, 3], f, lam


def _match(mesh, nodes, path):
    if nodes.shape != mesh.nodes.shape or np.max(np.abs(nodes - mesh.nodes)) > 1e-12:
        raise OSError(f"{path}: nodes do not match the configured mesh")


# -- verbs ------------------------------------------------------------------
def cmd_verify(cfg: LabConfig, out: str, threads: int, seed: int):
    m = cfg.mesh
    results = checks.run_all(m.n_r, m.n_t, m.grade_exponent, seed, threads)
    for r in results:
        log.info("%-24s %s value=%.3e tol=%.1e", r.name, "PASS" if r.passed else "FAIL", r.value, r.tolerance)
    ok = all(r.passed for r in results)
    report = {"command": "verify", "config": cfg.to_dict(), "suites": [r.to_dict() for r in results], "passed": ok}
    return report, EXIT_OK if ok else EXIT_FAIL


def cmd_solve(cfg: LabConfig, out: str, threads: int, seed: int):
    _, prob = _problem(cfg, threads)
    s = cfg.solver
    report = {"command": "solve", "config": cfg.to_dict(), "mesh": _mesh_stats(prob.mesh)}
    try:
        sol = newton_solve(prob, s.lam, tol=s.tol, max_iter=s.max_iter, min_step=s.damping_min)
    except (FoldDetected, NonConvergence) as exc:
        sol = exc.best
        report["error"] = str(exc)
    _write_solution(out, 0, sol)
    report["solutions"] = [sol.summary()]
    return report, EXIT_OK if sol.converged else EXIT_FAIL


def cmd_continue(cfg: LabConfig, out: str, threads: int, seed: int):
    _, prob = _problem(cfg, threads)
    c, s = cfg.continuation, cfg.solver
    kw = {"lambda_steps": c.targets} if c.mode == "lambda" else {"mass_targets": c.targets}
    report = {"command": "continue", "config": cfg.to_dict(), "mesh": _mesh_stats(prob.mesh)}
    code = EXIT_OK
    try:
        fam = continuation_run(prob, max_peak=c.max_peak, max_mass=c.mass_ceiling, tol=s.tol,
                               max_iter=s.max_iter, **kw)
    except NonConvergence as exc:
        fam = exc.best
        report["error"] = str(exc)
        code = EXIT_FAIL
    if fam.stop_reason in ("fold", "non-convergence"):
        code = EXIT_FAIL
    for k, sol in enumerate(fam.members):
        _write_solution(out, k, sol)
    report["stop_reason"] = fam.stop_reason
    report["solutions"] = fam.rows()
    return report, code


def cmd_extract(cfg: LabConfig, out: str, threads: int, seed: int, solution: str):
    _, mesh = cfg.build_mesh()
    nodes, u, _, lam = _read_solution(solution)
    _match(mesh, nodes, solution)
    sing = cfg.singularity_config()
    from .quadrature import build_weight

    fd = FieldData(mesh, u, sing, build_weight(mesh, sing), lam, cfg.potential.build()(mesh.nodes))
    e = cfg.extraction
    rep = extract(fd, e.epsilon, max_candidates=e.max_candidates, margin=e.peak_threshold_offset)
    rep.to_json(os.path.join(out, "extraction.json"))
    report = {"command": "extract", "config": cfg.to_dict(), "mesh": _mesh_stats(mesh),
              "n_candidates": len(rep.candidates), "exterior_sup": rep.exterior_sup}
    return report, EXIT_OK


def cmd_pohozaev(cfg: LabConfig, out: str, threads: int, seed: int, family: str):
    if cfg.mesh.domain != "half":
        raise ConfigError("pohozaev needs mesh.domain = 'half' (the half-disk chart)")
    files = sorted(glob.glob(os.path.join(family, "solution_*.csv")))
    if not files:
        raise OSError(f"no solution_*.csv files in {family}")
    geo, prob = _problem(cfg, threads)
    eps = cfg.extraction.epsilon
    reports = []
    for path in files:
        nodes, u, f, lam = _read_solution(path)
        _match(prob.mesh, nodes, path)
        sol = prob.field(u[prob.idx], lam, 0.0, 0)
        q = [] if f is not None else cfg.pohozaev.q_values
        reports.append(pohozaev_report(prob, geo, sol, eps, q, rhs=f))
    write_family_csv(reports, os.path.join(out, "pohozaev.csv"))
    report = {"command": "pohozaev", "config": cfg.to_dict(), "mesh": _mesh_stats(prob.mesh),
              "reports": [r.to_dict() for r in reports]}
    return report, EXIT_OK


VERBS = {
    "verify": cmd_verify,
    "solve": cmd_solve,
    "continue": cmd_continue,
    "extract": cmd_extract,
    "pohozaev": cmd_pohozaev,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="liouville-lab", description=__doc__.splitlines()[0])
    p.add_argument("verb", choices=sorted(VERBS))
    p.add_argument("--config", required=True, help="JSON configuration file")
    p.add_argument("--out", help="output directory (overrides output.dir)")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--seed", type=int, default=0, help="seed for sampling-based checks")
    p.add_argument("--solution", help="solution CSV (extract)")
    p.add_argument("--family", help="directory of solution_####.csv files (pohozaev)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s", stream=sys.stderr)
    t0 = time.perf_counter()
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        cfg = LabConfig.load(args.config)
        out = args.out or cfg.output.dir
        os.makedirs(out, exist_ok=True)
        extra = {}
        if args.verb == "extract":
            if not args.solution:
                raise ConfigError("extract needs --solution")
            extra["solution"] = args.solution
        if args.verb == "pohozaev":
            if not args.family:
                raise ConfigError("pohozaev needs --family")
            extra["family"] = args.family
        with threadpool_limits(limits=1):
            report, code = VERBS[args.verb](cfg, out, args.threads, args.seed, **extra)
        report["exit_code"] = code
        write_json(os.path.join(out, "summary.json"), _clean(report))
    except ConfigError as exc:
        log.error("configuration rejected: %s", exc)
        return EXIT_CONFIG
    except OSError as exc:
        log.error("I/O failure: %s", exc)
        return EXIT_IO
    except LabError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_FAIL
    log.info("%s finished in %.2f s (exit %d)", args.verb, time.perf_counter() - t0, code)
    return code


def _clean(obj):
    # JSON has no inf/nan; encode them as strings so the files stay valid
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


if __name__ == "__main__":
    sys.exit(main())
