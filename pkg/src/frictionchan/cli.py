"""Command-line front end.

``frictionchan <scenario> --config <path> [--out DIR] [--seed N] [--workers N] [--validate-only]``

The config is an INI file with one section per concern (``[grid]``, ``[mu]``,
``[feedback]``, ``[channel]``, ``[hamiltonian]``, ``[state]``, ``[time]``,
``[run]`` and scenario sections such as ``[stability]`` or ``[dcsl]``).
Exit codes: 0 success, 2 configuration error, 3 numerical precondition error.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np

from . import __version__
from .errors import ConfigError, PreconditionError, ValidityError
from .io import make_metadata, write_char_csv, write_csv, write_json

__all__ = ["SCENARIOS", "Config", "ValidationReport", "load_config", "validate", "run", "main"]

log = logging.getLogger("frictionchan")

SCENARIOS = (
    "simulate",
    "trajectories",
    "moments",
    "stability",
    "equilibrium",
    "diffusion-compare",
    "dcsl-map",
    "dcsl-identity",
    "bystander",
    "charfunc-iterate",
)

EXIT_OK, EXIT_CONFIG, EXIT_PRECONDITION = 0, 2, 3


# ----------------------------------------------------------------------------
# typed config access


class Config:
    """Typed, key-tracking view of a ConfigParser; missing keys raise ConfigError."""

    def __init__(self, parser: configparser.ConfigParser):
        self._p = parser

    def as_dict(self) -> dict:
        return {s: dict(self._p[s]) for s in self._p.sections()}

    def has(self, section: str, key: str) -> bool:
        return self._p.has_option(section, key)

    def has_section(self, section: str) -> bool:
        return self._p.has_section(section)

    def _raw(self, section, key, default):
        if self._p.has_option(section, key):
            return self._p.get(section, key)
        if default is _REQUIRED:
            raise ConfigError(f"missing required key [{section}] {key}", key=f"{section}.{key}")
        return default

    def get(self, section, key, default=None):
        return self._raw(section, key, default)

    def float(self, section, key, default=None) -> float:
        v = self._raw(section, key, _REQUIRED if default is None else default)
        try:
            return float(v)
        except (TypeError, ValueError):
            raise ConfigError(f"[{section}] {key} = {v!r} is not a number", key=f"{section}.{key}")

    def int(self, section, key, default=None) -> int:
        v = self._raw(section, key, _REQUIRED if default is None else default)
        try:
            return int(v)
        except (TypeError, ValueError):
            raise ConfigError(f"[{section}] {key} = {v!r} is not an integer", key=f"{section}.{key}")

    def floats(self, section, key, default=None) -> List[float]:
        v = self._raw(section, key, _REQUIRED if default is None else default)
        if isinstance(v, (list, tuple)):
            return [float(x) for x in v]
        try:
            return [float(x) for x in str(v).replace(",", " ").split()]
        except ValueError:
            raise ConfigError(f"[{section}] {key} = {v!r} is not a number list", key=f"{section}.{key}")


_REQUIRED = object()


def load_config(path) -> Config:
    p = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path) as fh:
            p.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}", key="--config")
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}", key="--config")
    return Config(p)


def config_from_string(text: str) -> Config:
    p = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    p.read_string(text)
    return Config(p)


# ----------------------------------------------------------------------------
# builders (cheap; all preconditions checked here)


def _grid(cfg: Config):
    from .core import make_grid

    n = cfg.int("grid", "n", 128)
    p_max = cfg.float("grid", "p_max", 12.0)
    hbar = cfg.float("grid", "hbar", 1.0)
    if n < 8 or not p_max > 0 or not hbar > 0:
        raise ConfigError("[grid] needs n >= 8, p_max > 0 and hbar > 0", key="grid")
    return make_grid(n, p_max, hbar)


def _mu(cfg: Config, hbar: float, section: str = "mu"):
    from .distributions import gaussian_mixture_mu, gaussian_mu, read_mu_csv

    if not cfg.has_section(section):
        raise ConfigError(f"missing section [{section}]", key=section)
    kind = cfg.get(section, "kind", "gaussian")
    if kind == "gaussian":
        return gaussian_mu(cfg.float(section, "sigma"), cfg.float(section, "bias", 0.0), hbar=hbar)
    if kind == "mixture":
        w = cfg.floats(section, "weights")
        m = cfg.floats(section, "means")
        s = cfg.floats(section, "sigmas")
        if not len(w) == len(m) == len(s) or not w:
            raise ConfigError(f"[{section}] weights, means and sigmas differ in length", key=f"{section}.weights")
        return gaussian_mixture_mu(w, m, s, hbar=hbar)
    if kind == "csv":
        return read_mu_csv(cfg.get(section, "path", _REQUIRED), hbar=hbar)
    raise ConfigError(f"[{section}] kind = {kind!r} is not gaussian, mixture or csv", key=f"{section}.kind")


def _feedback(cfg: Config):
    from .distributions import FeedbackLaw

    kind = cfg.get("feedback", "kind", "linear")
    if kind not in ("linear", "constant", "quadratic"):
        raise ConfigError(f"[feedback] kind = {kind!r} unsupported", key="feedback.kind")
    return FeedbackLaw(kind, cfg.float("feedback", "alpha"))


def _spec(cfg: Config, hbar: float):
    from .channel import ChannelSpec

    rate = cfg.float("channel", "rate", 1.0)
    if rate < 0:
        raise ConfigError("[channel] rate must be >= 0", key="channel.rate")
    return ChannelSpec(_mu(cfg, hbar), _feedback(cfg), rate)


def _hamiltonian(cfg: Config):
    from .core import HamiltonianSpec

    pot = cfg.get("hamiltonian", "potential", "free")
    mass = cfg.float("hamiltonian", "mass", 1.0)
    if pot == "free":
        return HamiltonianSpec.free(mass)
    if pot == "harmonic":
        return HamiltonianSpec.harmonic(cfg.float("hamiltonian", "omega"), mass)
    raise ConfigError(f"[hamiltonian] potential = {pot!r} is not free or harmonic", key="hamiltonian.potential")


def _state(cfg: Config, grid):
    from .core import gaussian_state

    return gaussian_state(
        grid,
        cfg.float("state", "x0", 0.0),
        cfg.float("state", "p0", 0.0),
        cfg.float("state", "width", 1.0),
    )


def _time(cfg: Config):
    t = cfg.float("time", "t_final")
    dt = cfg.float("time", "dt", 0.01)
    every = cfg.int("time", "sample_every", 1)
    if not t > 0 or not dt > 0 or every < 1:
        raise ConfigError("[time] needs t_final > 0, dt > 0, sample_every >= 1", key="time")
    return t, dt, every


def _alpha_warnings(spec, report):
    if spec.feedback.is_linear:
        a = spec.feedback.alpha
        if a > 2:
            report.warnings.append(f"[feedback] alpha = {a:g} > 2: heating regime")
        elif a < 0:
            report.warnings.append(f"[feedback] alpha = {a:g} < 0: anti-friction, no stationary state")


def _dcsl_params(cfg: Config):
    from .dcsl import DcslParams

    return DcslParams(
        cfg.float("dcsl", "gamma"),
        cfg.float("dcsl", "r_csl"),
        cfg.float("dcsl", "k"),
        m=cfg.float("dcsl", "m", 1.0),
        m0=cfg.float("dcsl", "m0", 1.0),
        hbar=cfg.float("dcsl", "hbar", 1.0),
    )


@dataclass
class ValidationReport:
    errors: List[str] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)
    exit_code: int = EXIT_OK

    @property
    def ok(self) -> bool:
        return not self.errors

    def fail(self, msg: str, code: int):
        self.errors.append(msg)
        self.exit_code = max(self.exit_code, code)


@dataclass
class Plan:
    """Pre-validated objects for one scenario."""

    scenario: str
    objects: dict
    report: ValidationReport


def _plan_dynamics(cfg, scenario, report):
    from .dynamics import check_step

    grid = _grid(cfg)
    spec = _spec(cfg, grid.hbar)
    H = _hamiltonian(cfg)
    t, dt, every = _time(cfg)
    _alpha_warnings(spec, report)
    obj = {"grid": grid, "spec": spec, "H": H, "t_final": t, "dt": dt, "sample_every": every}
    if scenario in ("simulate", "diffusion-compare"):
        check_step(H, spec, dt, grid)
        obj["state"] = _state(cfg, grid)
    elif scenario == "trajectories":
        obj["state"] = _state(cfg, grid)
        obj["n_traj"] = cfg.int("trajectories", "n_traj", 200)
        obj["n_samples"] = cfg.int("trajectories", "n_samples", 20)
        if obj["n_traj"] < 1:
            raise ConfigError("[trajectories] n_traj must be >= 1", key="trajectories.n_traj")
    elif scenario == "moments":
        from .moments import moments_of

        obj["m0"] = moments_of(_state(cfg, grid))
        obj["n_samples"] = cfg.int("moments", "n_samples", 200)
    if scenario == "diffusion-compare" and not spec.feedback.is_linear:
        raise PreconditionError("diffusion-compare runs the linear-feedback diffusion limit")
    return obj


def _plan(cfg: Config, scenario: str, report: ValidationReport) -> dict:
    if scenario in ("simulate", "trajectories", "moments", "diffusion-compare"):
        return _plan_dynamics(cfg, scenario, report)
    if scenario == "stability":
        s = "stability"
        obj = {
            "omega": cfg.float(s, "omega", 1.0),
            "Gamma_range": (cfg.float(s, "gamma_min", 1e-2), cfg.float(s, "gamma_max", 1e1)),
            "alpha_range": (cfg.float(s, "alpha_min", -0.5), cfg.float(s, "alpha_max", 2.5)),
            "resolution": (cfg.int(s, "n_gamma", 100), cfg.int(s, "n_alpha", 100)),
        }
        if not obj["omega"] > 0 or obj["Gamma_range"][0] <= 0:
            raise ConfigError("[stability] needs omega > 0 and gamma_min > 0", key="stability")
        return obj
    if scenario == "equilibrium":
        hbar = cfg.float("grid", "hbar", 1.0)
        spec = _spec(cfg, hbar)
        H = _hamiltonian(cfg)
        if H.potential != "harmonic":
            raise ConfigError("equilibrium needs [hamiltonian] potential = harmonic", key="hamiltonian.potential")
        if not spec.feedback.is_linear:
            raise ConfigError("equilibrium needs linear feedback", key="feedback.kind")
        a = spec.feedback.alpha
        if not (0 < a < 2) or not spec.rate > 0:
            raise PreconditionError(f"equilibrium needs alpha in (0, 2) and rate > 0, got alpha = {a:g}")
        return {"spec": spec, "H": H}
    if scenario == "dcsl-map":
        return _plan_dcsl_map(cfg)
    if scenario == "dcsl-identity":
        from .core import make_grid

        params = _dcsl_params(cfg)
        if cfg.has_section("grid"):
            grid = _grid(cfg)
        else:
            n = 256
            dp = 0.25 * params.hbar / ((1 + params.k) * params.r_csl)
            grid = make_grid(n, n * dp / 2, params.hbar)
        if params.k == 0:
            raise PreconditionError("[dcsl] k = 0 is frictionless; K(y) is undefined")
        from .dcsl import _check_resolution

        _check_resolution(params, grid)
        return {"params": params, "grid": grid}
    if scenario == "bystander":
        from .channel import ChannelSpec
        from .core import gaussian_state
        from .distributions import FeedbackLaw, gaussian_mu

        grid = _grid(cfg)
        s = "bystander"
        specs = []
        for i in (1, 2):
            a = cfg.float(s, f"alpha{i}")
            sig = cfg.float(s, f"sigma{i}")
            specs.append(ChannelSpec(gaussian_mu(sig, hbar=grid.hbar), FeedbackLaw.linear(a), 1.0))
        rho1 = gaussian_state(grid, cfg.float(s, "x1", 1.0), cfg.float(s, "p1", 0.0), cfg.float(s, "width1", 1.0))
        x2 = cfg.float(s, "x2", 0.0)
        if not grid.contains_position(x2, margin=8 * grid.dx):
            raise PreconditionError(f"[bystander] x2 = {x2:g} too close to the box edge")
        return {"grid": grid, "spec1": specs[0], "spec2": specs[1], "rho1": rho1, "x2": x2}
    if scenario == "charfunc-iterate":
        grid = _grid(cfg)
        spec = _spec(cfg, grid.hbar)
        if not spec.feedback.is_linear:
            raise ConfigError("charfunc-iterate needs linear feedback", key="feedback.kind")
        a = spec.feedback.alpha
        if not 0 < a < 2:
            raise PreconditionError(f"charfunc-iterate needs alpha in (0, 2), got {a:g}")
        n_iter = cfg.int("charfunc", "n_iter", 20)
        if n_iter < 0:
            raise ConfigError("[charfunc] n_iter must be >= 0", key="charfunc.n_iter")
        return {"grid": grid, "spec": spec, "state": _state(cfg, grid), "n_iter": n_iter}
    raise ConfigError(f"unknown scenario {scenario!r}", key="scenario")


def _plan_dcsl_map(cfg: Config) -> dict:
    from .dcsl import ScaledParams, critical_mass, map_params, scale_params

    params = _dcsl_params(cfg)
    dims = cfg.int("dcsl", "dims", 3)
    if dims not in (1, 3):
        raise ConfigError("[dcsl] dims must be 1 or 3", key="dcsl.dims")
    mapping = map_params(params, dims=dims)
    obj = {"params": params, "dims": dims, "mapping": mapping, "scaled": [], "masses": None}
    if params.k == 0:
        return obj
    ref = ScaledParams.from_dcsl(params, dims=dims)
    obj["ref"] = ref
    obj["critical_mass"] = float(critical_mass(ref))
    for m in cfg.floats("dcsl", "scale_to", []):
        # raises ValidityError when alpha(m) >= 2
        obj["scaled"].append(scale_params(ref, m))
    if cfg.has("dcsl", "masses"):
        obj["masses"] = cfg.floats("dcsl", "masses")
    return obj


def validate(cfg: Config, scenario: str) -> ValidationReport:
    """Dry-run every precondition check for ``scenario`` without computing."""
    report = ValidationReport()
    if scenario not in SCENARIOS:
        report.fail(f"unknown scenario {scenario!r}; choose from {', '.join(SCENARIOS)}", EXIT_CONFIG)
        return report
    try:
        _plan(cfg, scenario, report)
    except ConfigError as exc:
        report.fail(str(exc), EXIT_CONFIG)
    except (PreconditionError, ValidityError) as exc:
        report.fail(f"precondition: {exc}", EXIT_PRECONDITION)
    except ValueError as exc:
        report.fail(f"invalid value: {exc}", EXIT_CONFIG)
    return report


# ----------------------------------------------------------------------------
# runners


def _moment_rows(res) -> np.ndarray:
    return np.column_stack([res.times, res.moment_array(), res.energy])


def _run_simulate(o, ctx):
    from .dynamics import evolve_master

    res = evolve_master(o["H"], o["spec"], o["state"], o["t_final"], o["dt"], sample_every=o["sample_every"])
    cols = ["t", "x", "p", "xx", "xp", "pp", "energy"]
    return [ctx.csv("simulate.csv", cols, _moment_rows(res))]


def _run_trajectories(o, ctx):
    from .dynamics import unravel

    res = unravel(
        o["H"],
        o["spec"],
        o["state"],
        o["t_final"],
        o["n_traj"],
        ctx.seed,
        n_samples=o["n_samples"],
        workers=ctx.workers,
    )
    cols = ["t", "x", "p", "xx", "xp", "pp", "energy"] + [f"se_{c}" for c in ("x", "p", "xx", "xp", "pp")]
    rows = np.column_stack([_moment_rows(res), res.stderr])
    return [ctx.csv("trajectories.csv", cols, rows)]


def _run_moments(o, ctx):
    from .dynamics import moment_ode

    res = moment_ode(o["H"], o["spec"], o["m0"], o["t_final"], n_samples=o["n_samples"])
    cols = ["t", "x", "p", "xx", "xp", "pp", "energy"]
    return [ctx.csv("moments.csv", cols, _moment_rows(res))]


def _run_stability(o, ctx):
    from .dynamics import stability_scan

    sm = stability_scan(o["omega"], o["Gamma_range"], o["alpha_range"], o["resolution"])
    G, A = np.meshgrid(sm.gamma_ratio, sm.alpha, indexing="ij")
    stable = ((A > 0) & (A < 2)).astype(float)
    rows = np.column_stack([G.ravel(), A.ravel(), sm.max_re.ravel(), sm.det.ravel(), sm.det_formula.ravel(), stable.ravel()])
    return [ctx.csv("stability.csv", ["gamma_over_omega", "alpha", "max_re_over_omega", "det", "det_formula", "predicted_stable"], rows)]


def _run_equilibrium(o, ctx):
    from .dynamics import equilibrium_moments

    spec, H = o["spec"], o["H"]
    eq = equilibrium_moments(H.omega, spec.rate, spec.feedback.alpha, spec.mu, mass=H.mass)
    m = eq["moments"]
    rec = {
        "quadrature_moments": {"xi": m.x, "pi": m.p, "xixi": m.xx, "xipi": m.xp, "pipi": m.pp},
        "energy_over_hbar_omega": eq["energy"],
        "energy_closed_form": eq["energy_closed_form"],
        "correlation_closed_form": eq["correlation_closed_form"],
        "imbalance_closed_form": eq["imbalance_closed_form"],
    }
    return [ctx.json("equilibrium.json", rec)]


def _run_diffusion(o, ctx):
    from .diffusion import compare_full_vs_diffusion

    cmp_ = compare_full_vs_diffusion(o["H"], o["spec"], o["state"], o["t_final"], o["dt"], o["sample_every"])
    fa, da = cmp_.full.moment_array(), cmp_.diffusion.moment_array()
    rows = np.column_stack(
        [cmp_.times, fa[:, 2:], da[:, 2:], cmp_.trace_distance, cmp_.rel_error["xx"], cmp_.rel_error["xp"], cmp_.rel_error["pp"]]
    )
    cols = ["t", "full_xx", "full_xp", "full_pp", "cl_xx", "cl_xp", "cl_pp", "trace_distance", "rel_xx", "rel_xp", "rel_pp"]
    rec = {"max_rel_error": cmp_.max_rel_error, "coefficients": cmp_.coefficients.as_dict()}
    return [ctx.csv("diffusion_compare.csv", cols, rows), ctx.json("diffusion_summary.json", rec)]


def _run_dcsl_map(o, ctx):
    from .dcsl import com_reduction

    mp = o["mapping"]
    rec = {
        "dims": o["dims"],
        "frictionless": mp.frictionless,
        "sigma": None if mp.frictionless else mp.sigma,
        "alpha": mp.alpha,
        "Gamma": mp.Gamma,
    }
    if "ref" in o:
        rec["critical_mass"] = o["critical_mass"]
        rec["scaled"] = [s.as_dict() for s in o["scaled"]]
        if o["masses"]:
            rec["com_reduction"] = com_reduction(o["masses"], o["ref"]).as_dict()
    return [ctx.json("dcsl_map.json", rec)]


def _run_dcsl_identity(o, ctx):
    from .dcsl import verify_identity

    p = o["params"]
    res = verify_identity(p, o["grid"])
    rec = {"k": p.k, "r_csl": p.r_csl, "max_relative_residual": res, "grid_n": o["grid"].n, "grid_p_max": o["grid"].p_max}
    return [ctx.json("dcsl_identity.json", rec)]


def _run_bystander(o, ctx):
    from .dcsl import bystander_cross_term

    r = bystander_cross_term(o["spec1"], o["spec2"], o["rho1"], o["x2"], grid=o["grid"])
    rec = {"cross_norm": r.cross_norm, "imbalance": r.imbalance, "control_norm": r.control_norm, "raw_norm": r.raw_norm}
    return [ctx.json("bystander.json", rec)]


def _run_charfunc(o, ctx):
    from .charfunc import iterate_channel_char
    from .core import char_function

    spec = o["spec"]
    d = iterate_channel_char(spec.feedback.alpha, spec.mu, char_function(o["state"]), o["n_iter"])
    rows = np.column_stack([np.arange(o["n_iter"] + 1), d.offaxis_sup, d.onaxis_error])
    return [
        ctx.csv("charfunc_iterate.csv", ["iteration", "offaxis_sup", "onaxis_error"], rows),
        ctx.char("charfunc_final.csv", d.final),
    ]


_RUNNERS: Dict[str, Callable] = {
    "simulate": _run_simulate,
    "trajectories": _run_trajectories,
    "moments": _run_moments,
    "stability": _run_stability,
    "equilibrium": _run_equilibrium,
    "diffusion-compare": _run_diffusion,
    "dcsl-map": _run_dcsl_map,
    "dcsl-identity": _run_dcsl_identity,
    "bystander": _run_bystander,
    "charfunc-iterate": _run_charfunc,
}


@dataclass
class _Context:
    out: Path
    meta: dict
    seed: int
    workers: int

    def csv(self, name, cols, rows):
        return write_csv(self.out / name, cols, rows, self.meta)

    def json(self, name, rec):
        return write_json(self.out / name, rec, self.meta)

    def char(self, name, chi):
        return write_char_csv(self.out / name, chi, self.meta)


def run(cfg: Config, scenario: str, out, seed: Optional[int] = None, workers: Optional[int] = None) -> list:
    """Validate, execute and write outputs; returns the written paths."""
    report = ValidationReport()
    objects = _plan(cfg, scenario, report)
    for w in report.warnings:
        log.warning(w)
    seed = cfg.int("run", "seed", 0) if seed is None else int(seed)
    workers = cfg.int("run", "workers", 1) if workers is None else int(workers)
    if seed < 0 or seed >= 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer", key="run.seed")
    if workers < 0:
        raise ConfigError("workers must be >= 0 (0 = auto)", key="run.workers")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    meta = make_metadata(cfg.as_dict(), seed, scenario)
    ctx = _Context(out, meta, seed, workers)
    log.info("running %s into %s", scenario, out)
    paths = _RUNNERS[scenario](objects, ctx)
    return [Path(p) for p in paths]


# ----------------------------------------------------------------------------
# entry point


def _setup_logging():
    level = os.environ.get("FRICTIONCHAN_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="frictionchan", description="Measurement-feedback friction simulations.")
    ap.add_argument("scenario", choices=SCENARIOS)
    ap.add_argument("--config", required=True, help="INI configuration file")
    ap.add_argument("--out", default=".", help="output directory (default: current)")
    ap.add_argument("--seed", type=int, default=None, help="overrides [run] seed")
    ap.add_argument("--workers", type=int, default=None, help="trajectory workers (0 = auto)")
    ap.add_argument("--validate-only", action="store_true", help="check the config and exit")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    _setup_logging()
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.validate_only:
        report = validate(cfg, args.scenario)
        for w in report.warnings:
            print(f"warning: {w}", file=sys.stderr)
        for e in report.errors:
            print(f"error: {e}", file=sys.stderr)
        return report.exit_code
    try:
        paths = run(cfg, args.scenario, args.out, seed=args.seed, workers=args.workers)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PreconditionError, ValidityError) as exc:
        print(f"precondition error: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for p in paths:
        print(p)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
