"""Scenario files: INI-style sections parsed with :mod:`configparser`.

Layout::

    [dynamics]      model, mu, noise_gv_si (or noise), eps_diag, dim
    [horizon]       T_days (or T), nodes
    [initial.1]     weight, position_au + velocity_kms (or mean), cov_diag (or cov)
    [initial.2]     ...
    [terminal.1]    ...
    [solver]        sdp_tol, sdp_scheme, sqp_max_iter, defect_tol,
                    relinearize_iters, cost_composition, euler_reference
    [simulation]    particles, seed, substeps
    [metrics]       w2_projections, w2_seed

Vectors are comma separated; full matrices separate rows with ``;``.
Weights accept fractions such as ``1/3``.  Velocities in km/s and the
noise intensity in m/s^(3/2) are converted to AU/day units here and
nowhere else.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .core import GmmDistribution, TimeGrid, check_covariance
from .dynamics import MODELS, kms_to_au_per_day, make_model, noise_si_to_scaled
from .errors import ConfigError
from .mean_ocp import SqpOptions
from .pipeline import SolverOptions

DEFAULTS = {
    "solver": {
        "sdp_tol": 1e-8,
        "sdp_scheme": "em",
        "sqp_max_iter": 200,
        "defect_tol": 1e-8,
        "relinearize_iters": 0,
        "cost_composition": "total",
        "euler_reference": True,
    },
    "simulation": {"particles": 200, "seed": 0, "substeps": 1},
    "metrics": {"w2_projections": 256, "w2_seed": 0},
}


@dataclass
class Scenario:
    name: str
    model: object
    gmm0: GmmDistribution
    gmmT: GmmDistribution
    grid: TimeGrid
    options: SolverOptions
    relinearize_iters: int
    particles: int
    seed: int
    substeps: int
    w2_projections: int
    w2_seed: int
    resolved: dict = field(default_factory=dict)


class _Reader:
    """Collects every problem instead of stopping at the first."""

    def __init__(self, parser):
        self.p = parser
        self.errors = []

    def fail(self, where, message):
        self.errors.append(f"{where}: {message}")

    def raw(self, section, key, default=None, required=False):
        if self.p.has_option(section, key):
            return self.p.get(section, key).strip()
        if required:
            self.fail(f"{section}.{key}", "missing")
        return default

    def number(self, section, key, default=None, required=False, kind=float):
        text = self.raw(section, key, None, required)
        if text is None:
            return default
        try:
            if kind is int:
                return int(text)
            return float(Fraction(text)) if "/" in text else float(text)
        except ValueError:
            self.fail(f"{section}.{key}", f"not a valid {kind.__name__}: {text!r}")
            return default

    def flag(self, section, key, default):
        text = self.raw(section, key)
        if text is None:
            return default
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        self.fail(f"{section}.{key}", f"not a boolean: {text!r}")
        return default

    def vector(self, section, key, length=None):
        text = self.raw(section, key)
        if text is None:
            return None
        try:
            v = np.array([float(t) for t in text.replace(";", ",").split(",") if t.strip()])
        except ValueError:
            self.fail(f"{section}.{key}", f"not a list of numbers: {text!r}")
            return None
        if length is not None and v.size != length:
            self.fail(f"{section}.{key}", f"expected {length} values, got {v.size}")
            return None
        return v

    def matrix(self, section, key, n):
        text = self.raw(section, key)
        if text is None:
            return None
        try:
            rows = [[float(t) for t in r.split(",") if t.strip()] for r in text.split(";") if r.strip()]
            M = np.array(rows, dtype=np.float64)
        except ValueError:
            self.fail(f"{section}.{key}", f"not a matrix: {text!r}")
            return None
        if M.shape != (n, n):
            self.fail(f"{section}.{key}", f"expected a {n}x{n} matrix, got shape {M.shape}")
            return None
        return M


def _components(r, prefix, n, orbital, resolved):
    names = sorted(
        (s for s in r.p.sections() if s.split(".")[0] == prefix),
        key=lambda s: (len(s), s),
    )
    if not names:
        r.fail(prefix, "no components (expected sections like [%s.1])" % prefix)
        return None
    weights, means, covs = [], [], []
    for sec in names:
        w = r.number(sec, "weight", required=True)
        if w is not None and not 0.0 < w <= 1.0:
            r.fail(f"{sec}.weight", f"must lie in (0, 1], got {w!r}")
        mean = r.vector(sec, "mean", n)
        if mean is None and r.p.has_option(sec, "position_au"):
            half = n // 2
            pos = r.vector(sec, "position_au", half)
            vel = r.vector(sec, "velocity_kms", half)
            if pos is not None and vel is not None:
                mean = np.concatenate([pos, kms_to_au_per_day(vel)])
        elif mean is None and not r.p.has_option(sec, "mean"):
            r.fail(sec, "needs 'mean' or 'position_au' + 'velocity_kms'")
        if mean is not None and orbital:
            radius = float(np.hypot(mean[0], mean[1]))
            speed = float(np.hypot(mean[2], mean[3])) / kms_to_au_per_day(1.0)
            if not 0.05 <= radius <= 100.0:
                r.fail(f"{sec}.position_au", f"heliocentric radius {radius:.4g} AU is implausible")
            if speed > 200.0:
                r.fail(f"{sec}.velocity_kms", f"speed {speed:.4g} km/s is implausible")
        if r.p.has_option(sec, "cov"):
            cov = r.matrix(sec, "cov", n)
            ckey = "cov"
        else:
            d = r.vector(sec, "cov_diag", n)
            cov = None if d is None else np.diag(d)
            ckey = "cov_diag"
            if d is None and not r.p.has_option(sec, "cov_diag"):
                r.fail(sec, "needs 'cov_diag' or 'cov'")
        if cov is not None:
            try:
                check_covariance(cov, f"{sec}.{ckey}")
            except ValueError as exc:
                r.fail(f"{sec}.{ckey}", str(exc).split(": ", 1)[-1] if ":" in str(exc) else str(exc))
                cov = None
        weights.append(w)
        means.append(mean)
        covs.append(cov)
        resolved[sec] = {"weight": w, "mean": mean, "covariance": cov}
    if all(w is not None for w in weights):
        total = sum(weights)
        if abs(total - 1.0) > 1e-8:
            r.fail(f"{prefix}.*.weight", f"weights sum to {total:.12g}, expected 1")
            return None
    if any(v is None for v in weights + means + covs):
        return None
    w = np.array(weights)
    w[-1] = 1.0 - w[:-1].sum()
    return GmmDistribution.from_arrays(w, means, covs)


def _parse(parser, source):
    r = _Reader(parser)
    resolved = {"source": str(source)}
    name = r.raw("scenario", "name", Path(str(source)).stem)

    # dynamics
    model_name = r.raw("dynamics", "model", required=True)
    model = None
    n = None
    params = {}
    eps = None
    if model_name is not None and model_name not in MODELS:
        r.fail("dynamics.model", f"unknown model {model_name!r}; known: {sorted(MODELS)}")
    elif model_name is not None:
        orbital = model_name == "two_body_2d"
        if orbital:
            params["mu"] = r.number("dynamics", "mu", 2.9591e-4)
            if r.p.has_option("dynamics", "noise_gv_si"):
                gv = r.number("dynamics", "noise_gv_si")
                params["noise"] = noise_si_to_scaled(gv) if gv is not None else 0.0
            else:
                params["noise"] = r.number("dynamics", "noise", 0.0)
            if params["mu"] is not None and params["mu"] <= 0:
                r.fail("dynamics.mu", "must be positive")
        else:
            params["noise"] = r.number("dynamics", "noise", 0.0)
            if model_name == "double_integrator":
                params["dim"] = r.number("dynamics", "dim", 1, kind=int)
        if params.get("noise") is not None and params["noise"] < 0:
            r.fail("dynamics.noise", "must be nonnegative")
        if not r.errors:
            model = make_model(model_name, **params)
            n = model.state_dim
        eps_diag = r.vector("dynamics", "eps_diag", n)
        if eps_diag is not None:
            if np.any(eps_diag < 0):
                r.fail("dynamics.eps_diag", "entries must be nonnegative")
            else:
                eps = np.diag(eps_diag)
    resolved["dynamics"] = {"model": model_name, **params, "eps_diag": None if eps is None else np.diag(eps)}

    # horizon
    T = r.number("horizon", "T_days") if r.p.has_option("horizon", "T_days") else r.number("horizon", "T", required=True)
    nodes = r.number("horizon", "nodes", 101, kind=int)
    grid = None
    if T is not None and T <= 0:
        r.fail("horizon.T_days", "must be positive")
    elif nodes is not None and nodes < 3:
        r.fail("horizon.nodes", "need at least 3 nodes")
    elif T is not None and nodes is not None:
        grid = TimeGrid(T, nodes)
    resolved["horizon"] = {"T": T, "nodes": nodes}

    gmm0 = gmmT = None
    if n is not None:
        orbital = model_name == "two_body_2d"
        gmm0 = _components(r, "initial", n, orbital, resolved)
        gmmT = _components(r, "terminal", n, orbital, resolved)

    sv = DEFAULTS["solver"]
    sdp_tol = r.number("solver", "sdp_tol", sv["sdp_tol"])
    scheme = r.raw("solver", "sdp_scheme", sv["sdp_scheme"])
    if scheme not in ("em", "euler"):
        r.fail("solver.sdp_scheme", f"must be 'em' or 'euler', got {scheme!r}")
    max_iter = r.number("solver", "sqp_max_iter", sv["sqp_max_iter"], kind=int)
    defect_tol = r.number("solver", "defect_tol", sv["defect_tol"])
    relin = r.number("solver", "relinearize_iters", sv["relinearize_iters"], kind=int)
    composition = r.raw("solver", "cost_composition", sv["cost_composition"])
    if composition not in ("total", "sdp_only"):
        r.fail("solver.cost_composition", f"must be 'total' or 'sdp_only', got {composition!r}")
    euler_ref = r.flag("solver", "euler_reference", sv["euler_reference"])
    for key, val in (("sdp_tol", sdp_tol), ("defect_tol", defect_tol)):
        if val is not None and not val > 0:
            r.fail(f"solver.{key}", "must be positive")
    if relin is not None and relin < 0:
        r.fail("solver.relinearize_iters", "must be nonnegative")
    resolved["solver"] = {
        "sdp_tol": sdp_tol, "sdp_scheme": scheme, "sqp_max_iter": max_iter, "defect_tol": defect_tol,
        "step_tol": SqpOptions.step_tol, "relinearize_iters": relin, "cost_composition": composition,
        "euler_reference": euler_ref,
    }

    sm = DEFAULTS["simulation"]
    particles = r.number("simulation", "particles", sm["particles"], kind=int)
    seed = r.number("simulation", "seed", sm["seed"], kind=int)
    substeps = r.number("simulation", "substeps", sm["substeps"], kind=int)
    if particles is not None and particles < 1:
        r.fail("simulation.particles", "must be at least 1")
    if substeps is not None and substeps < 1:
        r.fail("simulation.substeps", "must be at least 1")
    if seed is not None and seed < 0:
        r.fail("simulation.seed", "must be nonnegative")
    resolved["simulation"] = {"particles": particles, "seed": seed, "substeps": substeps}

    mt = DEFAULTS["metrics"]
    proj = r.number("metrics", "w2_projections", mt["w2_projections"], kind=int)
    w2_seed = r.number("metrics", "w2_seed", mt["w2_seed"], kind=int)
    if proj is not None and proj < 1:
        r.fail("metrics.w2_projections", "must be at least 1")
    resolved["metrics"] = {"w2_projections": proj, "w2_seed": w2_seed}

    for sec in r.p.sections():
        if sec.split(".")[0] not in ("scenario", "dynamics", "horizon", "initial", "terminal", "solver", "simulation", "metrics"):
            r.fail(sec, "unknown section")

    if r.errors:
        return None, r.errors
    options = SolverOptions(
        sqp=SqpOptions(max_iter=max_iter, defect_tol=defect_tol),
        sdp_tol=sdp_tol,
        sdp_scheme=scheme,
        noise_regularization=eps,
        cost_composition=composition,
        euler_reference=euler_ref,
    )
    scen = Scenario(
        name=name, model=model, gmm0=gmm0, gmmT=gmmT, grid=grid, options=options,
        relinearize_iters=relin, particles=particles, seed=seed, substeps=substeps,
        w2_projections=proj, w2_seed=w2_seed, resolved=resolved,
    )
    return scen, []


def _read(path):
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError([f"{path}: cannot read ({exc.strerror})"]) from None
    except configparser.Error as exc:
        raise ConfigError([f"{path}: {exc.message if hasattr(exc, 'message') else exc}"]) from None
    return parser


def validate_config(path):
    """Schema and invariant diagnostics for a scenario file; empty when valid."""
    try:
        parser = _read(path)
    except ConfigError as exc:
        return exc.diagnostics
    _, errors = _parse(parser, path)
    return errors


def load_config(path) -> Scenario:
    scen, errors = _parse(_read(path), path)
    if errors:
        raise ConfigError(errors)
    return scen


def shipped_scenario(name):
    """Path of a scenario file bundled with the package."""
    path = Path(__file__).parent / "scenarios" / name
    if not path.exists():
        raise FileNotFoundError(path)
    return path
