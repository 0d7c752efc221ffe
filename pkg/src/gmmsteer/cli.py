"""Command-line front end: ``gmmsteer run`` and ``gmmsteer validate``."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import platform
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np

from . import _accel
from .config import load_config, validate_config
from .core import gmm_sample
from .errors import ConfigError, GmmSteerError, PipelineError
from .metrics import empirical_moments, sliced_w2, theorem1_bounds
from .pipeline import build_ml_policy, build_sl_policy
from .policy import MixturePolicy
from .sim import cost_standard_error, estimate_cost, simulate

logger = logging.getLogger("gmmsteer")

EXIT_CONFIG = 2
EXIT_SOLVER = 3


def fmt(x):
    return "%.17g" % x


def to_json(obj, indent=2, _level=0):
    """JSON text with every float written as %.17g; NaN and inf become null."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {to_json(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, np.ndarray):
        return to_json(obj.tolist(), indent, _level)
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(to_json(v, indent, _level + 1) for v in obj) + "]"
        items = [pad + to_json(v, indent, _level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt(obj) if math.isfinite(obj) else "null"
    if obj is None:
        return "null"
    return json.dumps(str(obj))


def _versions():
    out = {"python": platform.python_version()}
    for dist in ("artifact", "numpy", "scipy", "cvxpy", "clarabel", "numba"):
        try:
            out[dist] = metadata.version(dist)
        except metadata.PackageNotFoundError:
            out[dist] = None
    return out


def _write_trajectories(path, result, grid):
    P, N, n = result.paths.shape
    m = result.controls.shape[2]
    t = grid.nodes
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["particle", "node", "t"] + [f"x{i}" for i in range(n)] + [f"u{i}" for i in range(m)] + ["cum_cost"])
        for p in range(P):
            cum = 0.0
            for k in range(N):
                u = result.controls[p, k] if k < N - 1 else np.full(m, np.nan)
                row = [p, k, fmt(t[k])] + [fmt(v) for v in result.paths[p, k]] + [fmt(v) for v in u] + [fmt(cum)]
                w.writerow(row)
                if k < N - 1:
                    cum += grid.dt * float(u @ u)


def _write_bridges(path, bridges, lambdas):
    n = bridges[0].ltv.state_dim
    m = bridges[0].ltv.control_dim
    iu = np.triu_indices(n)
    head = ["i", "j", "node", "t"] + [f"mu{a}" for a in range(n)]
    head += [f"sigma{a}{b}" for a, b in zip(*iu)]
    head += [f"K{a}{b}" for a in range(m) for b in range(n)] + ["lambda"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(head)
        for br, lam in zip(bridges, lambdas):
            grid = br.ltv.grid
            for k in range(grid.node_count):
                K = br.gains[k] if k < grid.node_count - 1 else np.full((m, n), np.nan)
                row = [br.pair[0], br.pair[1], k, fmt(grid.nodes[k])]
                row += [fmt(v) for v in br.ltv.reference_state[k]]
                row += [fmt(v) for v in br.covariances[k][iu]]
                row += [fmt(v) for v in K.ravel()] + [fmt(lam)]
                w.writerow(row)


def _error_payload(exc):
    payload = {"error": type(exc).__name__, "message": str(exc)}
    pair = getattr(exc, "pair", None)
    if pair is not None:
        payload["pair"] = list(pair)
    if isinstance(exc, ConfigError):
        payload["diagnostics"] = exc.diagnostics
    if isinstance(exc, PipelineError) and isinstance(exc.partial, dict):
        payload["solved_pairs"] = sorted([list(p) for p in exc.partial if isinstance(p, tuple)])
    return payload


def _fail(exc, out_dir, code):
    text = to_json(_error_payload(exc))
    print(text, file=sys.stderr)
    if out_dir is not None:
        try:
            Path(out_dir).mkdir(parents=True, exist_ok=True)
            (Path(out_dir) / "error.json").write_text(text + "\n")
        except OSError:
            pass
    return code


def run(args):
    if args.validate_only:
        return validate(args)
    try:
        scen = load_config(args.config)
    except ConfigError as exc:
        return _fail(exc, args.out, EXIT_CONFIG)
    particles = args.particles if args.particles is not None else scen.particles
    seed = args.seed if args.seed is not None else scen.seed
    if particles < 1:
        return _fail(ConfigError(["--particles: must be at least 1"]), args.out, EXIT_CONFIG)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    options = scen.options
    if args.dump_conic:
        conic_dir = out / "conic"
        conic_dir.mkdir(exist_ok=True)
        options = dataclasses.replace(options, dump_conic_dir=str(conic_dir))
    if args.threads:
        _accel.set_threads(args.threads)

    started = time.time()
    try:
        if args.policy == "ml":
            policy = build_ml_policy(scen.model, scen.gmm0, scen.gmmT, scen.grid, options)
        else:
            policy = build_sl_policy(scen.model, scen.gmm0, scen.gmmT, scen.grid, options, scen.relinearize_iters)
        result = simulate(scen.model, policy, scen.gmm0, scen.grid, particles, seed, scen.substeps)
        j_ctrl = estimate_cost(result)
    except GmmSteerError as exc:
        return _fail(exc, out, EXIT_SOLVER)

    terminal = result.terminal_samples
    target = gmm_sample(scen.gmmT, particles, scen.w2_seed)
    w2 = sliced_w2(terminal, target, scen.w2_projections, scen.w2_seed)
    if len(terminal) >= 2:
        t_mean, t_cov = empirical_moments(terminal)
    else:
        t_mean, t_cov = terminal.mean(axis=0), np.full((terminal.shape[1],) * 2, np.nan)
    if isinstance(policy, MixturePolicy):
        bridges = policy.bridges
        lambdas = policy.prior
        transport_objective = policy.plan.objective
        pair_costs = policy.costs
    else:
        bridges = (policy.bridge,)
        lambdas = np.ones(1)
        transport_objective = policy.bridge.cost
        pair_costs = np.array([[policy.bridge.cost]])

    metrics = {
        "policy": args.policy,
        "particles": particles,
        "seed": seed,
        "j_ctrl": j_ctrl,
        "j_ctrl_standard_error": cost_standard_error(result) if len(terminal) >= 2 else None,
        "sliced_w2": w2,
        "terminal_mean": t_mean,
        "terminal_cov": t_cov,
        "theorem1_bounds": {
            "initial": list(theorem1_bounds(scen.gmm0)),
            "terminal": list(theorem1_bounds(scen.gmmT)),
        },
        "transport_objective": transport_objective,
        "per_pair_costs": pair_costs,
        "bridges": [list(b.pair) for b in bridges],
        "diverged_particles": result.diverged_count,
    }
    (out / "metrics.json").write_text(to_json(metrics) + "\n")
    _write_trajectories(out / "trajectories.csv", result, scen.grid)
    _write_bridges(out / "bridges.csv", bridges, lambdas)
    manifest = {
        "scenario": scen.name,
        "command": {
            "policy": args.policy, "particles": particles, "seed": seed,
            "dump_conic": bool(args.dump_conic), "threads": args.threads,
        },
        "config": scen.resolved,
        "seeds": {"simulation": seed, "w2": scen.w2_seed, "target_samples": scen.w2_seed},
        "backend": _accel.BACKEND,
        "versions": _versions(),
        "started_unix": started,
        "elapsed_seconds": time.time() - started,
    }
    (out / "run_manifest.json").write_text(to_json(manifest) + "\n")
    logger.info("J_ctrl %.6e, sliced W2 %.6e, %d diverged", j_ctrl, w2, result.diverged_count)
    return 0


def validate(args):
    diagnostics = validate_config(args.config)
    print(to_json({"config": str(args.config), "valid": not diagnostics, "diagnostics": diagnostics}))
    return 0 if not diagnostics else EXIT_CONFIG


def build_parser():
    parser = argparse.ArgumentParser(prog="gmmsteer", description="Gaussian-mixture density steering by multiple linearizations.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="build a policy, simulate it, write artifacts")
    p_run.add_argument("--config", required=True, help="scenario file")
    p_run.add_argument("--out", default="out", help="artifact directory (default: out)")
    p_run.add_argument("--policy", choices=("ml", "sl"), default="ml")
    p_run.add_argument("--particles", type=int, help="override [simulation] particles")
    p_run.add_argument("--seed", type=int, help="override [simulation] seed")
    p_run.add_argument("--validate-only", action="store_true", help="check the config and stop")
    p_run.add_argument("--dump-conic", action="store_true", help="write each SDP in plain text under OUT/conic")
    p_run.add_argument("--threads", type=int, default=0, help="numba worker threads (results do not depend on it)")
    p_run.set_defaults(func=run)

    p_val = sub.add_parser("validate", help="check a scenario file without solving")
    p_val.add_argument("--config", required=True)
    p_val.set_defaults(func=validate)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if args.verbose < 2:
        logging.getLogger("cvxpy").setLevel(logging.WARNING)
    try:
        return args.func(args)
    except ConfigError as exc:
        return _fail(exc, getattr(args, "out", None), EXIT_CONFIG)


if __name__ == "__main__":
    sys.exit(main())
