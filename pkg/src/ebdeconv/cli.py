"""Command-line front end.

Every subcommand writes a report directory containing ``inputs.json``
(digests of input files), ``config.json`` (the full resolved configuration,
reusable through ``--config``), one or more CSV files and ``summary.json``.
Exit status is 0 when the run succeeds with all solver certificates passing,
2 on invalid input or configuration and 3 on numerical failure, including an
uncertified solve.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import datasets, rules
from .io import SchemaError, file_digest, ingest_observations, ingest_panel, panel_rows, write_csv
from .kernels import (
    Binomial,
    DiscreteDistribution,
    GammaScale,
    GaussianLocation,
    Grid,
    Poisson,
    StudentTLocation,
    build_grid,
    build_likelihood_matrix,
    log_grid,
)
from .npmle import SolverConfig, solve_npmle
from .panel import (
    default_grids,
    fit_bivariate_heterogeneity,
    profile_loglik,
    sufficient_stats,
)
from .predict import (
    DEFAULT_PROBS,
    arma_unit_posterior,
    increment_density_table,
    quantile_bands,
    simulate_arma_paths,
    simulate_paths,
    uniform_band,
    unit_posterior,
)
from .statespace import ArmaParams, arma_lattice, build_arma_likelihood_matrix, fit_arma_profile

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC = 0, 2, 3

BINOMIAL_EPS = 1e-4

KERNELS = ("gaussian", "poisson", "binomial", "gamma", "student-t")


class ValidationError(ValueError):
    pass


def parse_range(text: str):
    """``a:b:step`` -> inclusive grid of values, rounded to the step's precision."""
    try:
        a, b, step = (float(p) for p in text.split(":"))
    except ValueError:
        raise ValidationError(f"expected a:b:step, got {text!r}") from None
    if not step > 0 or b < a:
        raise ValidationError(f"bad range {text!r}")
    n = int(math.floor((b - a) / step + 1e-9)) + 1
    return np.round(a + step * np.arange(n), 10)


def _floats(text: str, count: Optional[int] = None):
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise ValidationError(f"expected comma-separated numbers, got {text!r}") from None
    if count is not None and len(vals) != count:
        raise ValidationError(f"expected {count} values, got {text!r}")
    return vals


@dataclass(frozen=True)
class RunConfig:
    """Resolved and validated configuration for one command."""

    command: str
    settings: dict

    @classmethod
    def from_namespace(cls, ns: argparse.Namespace) -> "RunConfig":
        d = {k: v for k, v in vars(ns).items() if k not in ("out", "config", "func")}
        cfg = cls(ns.command, d)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        s = self.settings
        for key in ("data", "panel", "H"):
            p = s.get(key)
            if p is not None and not Path(p).is_file():
                raise ValidationError(f"--{key}: no such file {p}")
        if "tol" in s and not s["tol"] > 0:
            raise ValidationError("--tol must be positive")
        if "prune_eps" in s and not 0 <= s["prune_eps"] < 1:
            raise ValidationError("--prune-eps must lie in [0, 1)")
        for key in ("grid_size", "m", "M", "horizon", "mu_grid_size"):
            if key in s and s[key] is not None and s[key] < 1:
                raise ValidationError(f"--{key.replace('_', '-')} must be positive")
        if s.get("rho") is not None and not -1 < s["rho"] < 1:
            raise ValidationError("--rho must lie in (-1, 1)")

    def solver(self) -> SolverConfig:
        return SolverConfig(tol=self.settings["tol"], prune_eps=self.settings["prune_eps"],
                            max_iter=self.settings.get("max_iter", 200))

    def echo(self) -> dict:
        return {"command": self.command, **self.settings}


# report helpers


class Report:
    def __init__(self, out: Path):
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.certified = True

    def csv(self, name, header, rows):
        write_csv(self.out / name, header, rows)

    def json(self, name, obj):
        with (self.out / name).open("w", encoding="utf-8") as fh:
            json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)
            fh.write("\n")

    def check(self, sol) -> None:
        self.certified = self.certified and bool(sol.certified)


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.bool_):
        return bool(x)
    raise TypeError(f"cannot serialize {type(x).__name__}")


def _finite(x):
    x = float(x)
    return x if math.isfinite(x) else None


def _inputs(cfg: RunConfig) -> dict:
    out = {}
    for key in ("data", "panel", "H"):
        p = cfg.settings.get(key)
        if p:
            out[key] = {"path": str(p), "sha256": file_digest(p)}
    if not out:
        out["generated"] = {"seed": cfg.settings.get("seed")}
    return out


def _mixing_rows(G: DiscreteDistribution):
    if G.atoms.ndim == 2:
        return ["alpha", "theta", "weight"], [(a, t, w) for (a, t), w in zip(G.atoms, G.weights)]
    return ["atom", "weight"], list(zip(G.atoms, G.weights))


# kernels and grids from flags


def _kernel(cfg: RunConfig, obs) -> object:
    s = cfg.settings
    name = s["kernel"]
    col = obs.get if obs is not None else (lambda k: None)
    if name == "gaussian":
        sd = col("sd")
        return GaussianLocation(sd if sd is not None else s["sd"])
    if name == "poisson":
        return Poisson()
    if name == "binomial":
        trials = col("trials")
        if trials is None and s["trials"] is None:
            raise ValidationError("binomial kernel needs --trials or a 'trials' column")
        return Binomial(trials if trials is not None else s["trials"])
    if name == "gamma":
        shape = col("shape")
        if shape is None and s["shape"] is None:
            raise ValidationError("gamma kernel needs --shape or a 'shape' column")
        return GammaScale(shape if shape is not None else s["shape"])
    if name == "student-t":
        return StudentTLocation(s["df"], s["sd"])
    raise ValidationError(f"unknown kernel {name!r}")


def _grid(kernel, y: np.ndarray, m: int) -> Grid:
    if isinstance(kernel, Binomial):
        return Grid(np.linspace(BINOMIAL_EPS, 1 - BINOMIAL_EPS, m))
    if isinstance(kernel, Poisson):
        # rates must be positive; zero counts are served by the smallest rate
        hi = max(float(y.max()), 1.0)
        return Grid(np.linspace(max(float(y.min()), 0.01 * hi), hi, m))
    if isinstance(kernel, GammaScale):
        return log_grid(float(y.min()), float(y.max()), m)
    return build_grid(y, m)


def _observations(cfg: RunConfig):
    s = cfg.settings
    if s.get("data"):
        return ingest_observations(s["data"])
    rng = np.random.default_rng(s["seed"])
    y, _ = datasets.lognormal_demo(rng, s.get("n") or 1000)
    return {"value": y}


# subcommands


def cmd_npmle(cfg: RunConfig, rep: Report) -> dict:
    obs = _observations(cfg)
    y = obs["value"]
    kernel = _kernel(cfg, obs)
    grid = _grid(kernel, y, cfg.settings["grid_size"])
    A = build_likelihood_matrix(kernel, y, grid)
    sol = solve_npmle(A, cfg.solver())
    rep.check(sol)
    rep.csv("grid.csv", ["point"], [(p,) for p in grid.points])
    rep.csv("atoms.csv", *_mixing_rows(sol.mixing))
    return {"n": int(y.size), "grid_size": len(grid), **sol.report()}


def cmd_rules(cfg: RunConfig, rep: Report) -> dict:
    s = cfg.settings
    summary = {}
    if s["binary"]:
        if s["p"] is not None:
            rule = rules.binary_two_point(p=s["p"])
        else:
            rule = rules.binary_two_point(data=_observations(cfg)["value"])
        summary["binary"] = {"p": rule.p, "threshold": rule.threshold, "risk": rule.risk,
                             "minimax_risk": rules.binary_two_point(p=0.5).risk}
        return summary
    obs = _observations(cfg)
    y = obs["value"]
    if s["rule"] == "robbins":
        tab = rules.robbins_poisson(y)
        rep.csv("rule.csv", ["y", "delta", "defined"],
                [(int(a), b if ok else float("nan"), bool(ok)) for a, b, ok in zip(tab.y, tab.delta, tab.defined)])
        return {"rule": "robbins", "n": int(y.size)}
    if s["rule"] == "stein":
        est = rules.linear_shrinkage(y, s["shrinkage"], positive_part=True)
        rep.csv("shrinkage.csv", ["y", "stein"], list(zip(y, est.values)))
        return {"rule": "stein", "mode": s["shrinkage"], "factor": est.factor, "center": est.center}
    # tweedie / g-modeling via the NPMLE
    kernel = _kernel(cfg, obs)
    grid = _grid(kernel, y, s["grid_size"])
    sol = solve_npmle(build_likelihood_matrix(kernel, y, grid), cfg.solver())
    rep.check(sol)
    G = sol.mixing
    if isinstance(kernel, Poisson):
        ys = np.arange(int(y.min()), int(y.max()) + 1)
        post = rules.poisson_g_rule(G, ys)
    elif isinstance(kernel, GaussianLocation) and np.ndim(kernel.sd) == 0:
        ys = np.unique(y)
        post = rules.tweedie_rule(kernel, G, ys)
    else:
        ys = y
        post = rules.posterior_summary(kernel, G, ys)
    rep.csv("rule.csv", ["y", "delta", "variance"], list(zip(ys, post.mean, post.variance)))
    rep.csv("atoms.csv", *_mixing_rows(G))
    return {"rule": "tweedie", **sol.report()}


def _panel(cfg: RunConfig):
    s = cfg.settings
    if s.get("panel"):
        return ingest_panel(s["panel"])
    rng = np.random.default_rng(s["seed"])
    return datasets.ar1_demo_panel(rng)


def _size2(v) -> tuple:
    return (v, v) if isinstance(v, int) else tuple(v)


def cmd_panel_fit(cfg: RunConfig, rep: Report) -> dict:
    s = cfg.settings
    panel = _panel(cfg)
    st = sufficient_stats(panel, s["rho"], s["initial"], keep_first_at_zero=False)
    ag, tg = default_grids(st, _size2(s["grid_size"]))
    sol = fit_bivariate_heterogeneity(st, ag, tg, cfg.solver())
    rep.check(sol)
    rep.csv("H.csv", *_mixing_rows(sol.mixing))
    return {"rho": s["rho"], "initial": s["initial"], "n_units": len(panel),
            "loglik_with_k": float(sol.loglik + st.log_k.sum()), **sol.report()}


def cmd_profile(cfg: RunConfig, rep: Report) -> dict:
    s = cfg.settings
    panel = _panel(cfg)
    grid = parse_range(s["rho_grid"])
    if np.any(np.abs(grid) >= 1):
        raise ValidationError("rho grid must lie inside (-1, 1)")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        pc = profile_loglik(panel, grid, size=_size2(s["grid_size"]), cfg=cfg.solver(),
                            initial=s["initial"], n_jobs=s["jobs"], keep_solutions=True,
                            refine=s["refine"])
    rep.certified = rep.certified and bool(np.all(pc.certified))
    rep.csv("profile.csv", ["rho", "loglik"], list(zip(pc.rho_grid, pc.loglik)))
    sol = pc.mixing_at_hat
    if sol is not None:
        rep.csv("H.csv", *_mixing_rows(sol.mixing))
    return {
        "rho_hat": pc.rho_hat,
        "wilks_ci": [_finite(c) for c in pc.wilks_ci],
        "flags": list(pc.flags),
        "max_loglik": float(np.nanmax(pc.loglik)),
        "certified_points": int(np.sum(pc.certified)),
        "grid_points": int(pc.rho_grid.size),
    }


def _arma_panel(cfg: RunConfig):
    s = cfg.settings
    if s.get("panel"):
        return ingest_panel(s["panel"])
    return datasets.arma_demo_panel(np.random.default_rng(s["seed"]))


def cmd_arma_fit(cfg: RunConfig, rep: Report) -> dict:
    s = cfg.settings
    panel = _arma_panel(cfg)
    lattice = arma_lattice(parse_range(s["arma_rho"]), parse_range(s["arma_theta"]),
                           _sigma_grid(s["sigma_nu"]), _sigma_grid(s["sigma_eta"]))
    if not lattice:
        raise ValidationError("ARMA lattice has no valid points")
    mu_grid = build_grid([x.mean() for x in panel.series], s["mu_grid_size"])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        prof = fit_arma_profile(panel, lattice, mu_grid, cfg.solver(), n_jobs=s["jobs"])
    rep.check(prof.mixing)
    rep.csv("profile_table.csv", ["rho", "theta", "sigma_nu", "sigma_eta", "loglik", "certified"], prof.table)
    rep.csv("G_mu.csv", ["mu", "weight"], list(zip(prof.mixing.mixing.atoms, prof.mixing.mixing.weights)))
    return {
        "best": dict(zip(("rho", "theta", "sigma_nu", "sigma_eta"), prof.best.as_tuple())),
        "top": [{"params": list(p.as_tuple()), "loglik": ll} for p, ll in prof.top],
        "lattice_points": len(lattice),
        "failed_points": int(sum(1 for r in prof.table if not math.isfinite(r[4]))),
        **prof.mixing.report(),
    }


def _sigma_grid(text: str):
    """``a:b:step`` for a linear grid or ``log:a:b:count`` for a geometric one."""
    if text.startswith("log:"):
        lo, hi, count = _floats(text[4:].replace(":", ","), 3)
        if not (0 < lo <= hi) or count < 1:
            raise ValidationError(f"bad log grid {text!r}")
        return np.geomspace(lo, hi, int(count))
    return parse_range(text)


def cmd_predict(cfg: RunConfig, rep: Report) -> dict:
    s = cfg.settings
    panel = _panel(cfg)
    T0 = s["T0"]
    if T0 is None:
        T0 = int(panel.lengths.min()) // 2 + 1
    if T0 < 3:
        raise ValidationError("--T0 must be at least 3")
    if np.any(panel.lengths < T0):
        raise ValidationError("every unit needs at least T0 periods")
    unit = s["unit"] if s["unit"] is not None else panel.ids[0]
    matches = [i for i, u in enumerate(panel.ids) if str(u) == str(unit)]
    if not matches:
        raise ValidationError(f"unit {unit!r} not in panel")
    idx = matches[0]
    rho = s["rho"]
    prefix_panel = panel.truncate(T0)
    if s.get("H"):
        tab = np.loadtxt(s["H"], delimiter=",", skiprows=1, ndmin=2)
        H = DiscreteDistribution.normalized(tab[:, :2], tab[:, 2])
    else:
        st = sufficient_stats(prefix_panel, rho, s["initial"], keep_first_at_zero=False)
        ag, tg = default_grids(st, _size2(s["grid_size"]))
        sol = fit_bivariate_heterogeneity(st, ag, tg, cfg.solver())
        rep.check(sol)
        H = sol.mixing
        rep.csv("H.csv", *_mixing_rows(H))
    series = panel.series[idx]
    prefix = series[:T0]
    actual = series[T0:]
    horizon = s["horizon"] or (actual.size if actual.size else 10)
    post = unit_posterior(H, prefix, rho)
    ens = simulate_paths(post, rho, prefix[-1], horizon, s["m"], s["M"], s["seed"], s["drift"], unit=idx)
    act = actual[:horizon] if actual.size >= horizon else None
    _write_bands(rep, "bands.csv", ens, act)
    lo, hi = uniform_band(ens, s["uniform_level"])
    rep.csv("uniform_band.csv", ["period", "lower", "upper"],
            [(t + 1, a, b) for t, (a, b) in enumerate(zip(lo, hi))])
    inc = increment_density_table(ens)
    rep.csv("increments.csv", ["x", "f", "logf", "neg_inv_sqrt_f"], inc)
    rep.csv("posterior.csv", ["alpha", "theta", "weight"],
            [(a, t, w) for (a, t), w in zip(post.atoms, post.weights) if w > 0])
    summary = {"unit": panel.ids[idx], "T0": T0, "horizon": horizon, "paths": int(ens.paths.shape[0]),
               "rho": rho, "drift": s["drift"], "posterior_atoms": int(np.sum(post.weights > 1e-12))}
    if s["compare_arma"]:
        params = ArmaParams(*_floats(s["compare_arma"], 4))
        mu_grid = build_grid([x.mean() for x in prefix_panel.series], s["mu_grid_size"])
        gsol = solve_npmle(build_arma_likelihood_matrix(params, prefix_panel, mu_grid), cfg.solver())
        rep.check(gsol)
        apost = arma_unit_posterior(params, gsol.mixing, prefix)
        aens = simulate_arma_paths(params, apost, prefix, horizon, s["m"], s["M"], s["seed"], unit=idx)
        _write_bands(rep, "bands_arma.csv", aens, act)
        rep.csv("bands_ar1.csv", *_band_table(ens, act))
        summary["compare_arma"] = {"params": list(params.as_tuple()), **gsol.report()}
    return summary


def _band_table(ens, actual):
    fb = quantile_bands(ens, DEFAULT_PROBS)
    return fb.header(actual is not None), fb.rows(actual)


def _write_bands(rep: Report, name: str, ens, actual):
    rep.csv(name, *_band_table(ens, actual))


def cmd_simulate_demo(cfg: RunConfig, rep: Report) -> dict:
    s = cfg.settings
    rng = np.random.default_rng(s["seed"])
    kind = s["kind"]
    if kind == "lognormal":
        y, theta = datasets.lognormal_demo(rng, s["n"] or 1000)
        rep.csv("observations.csv", ["value"], [(v,) for v in y])
        rep.csv("truth.csv", ["theta"], [(t,) for t in theta])
        return {"kind": kind, "n": int(y.size)}
    if kind == "tack":
        k, p = datasets.tack_counts(rng, s["n"] or 320)
        rep.csv("observations.csv", ["value", "trials"], [(int(a), 9) for a in k])
        rep.csv("truth.csv", ["p"], [(v,) for v in p])
        return {"kind": kind, "n": int(k.size), "trials": 9}
    if kind == "ar1":
        panel = datasets.ar1_demo_panel(rng, s["n"] or 400, s["periods"])
        H = datasets.AR1_DEMO_H
        rep.csv("truth_H.csv", *_mixing_rows(H))
        truth = {"rho": 0.5}
    elif kind == "arma":
        panel = datasets.arma_demo_panel(rng, s["n"] or 400, s["periods"])
        truth = dict(zip(("rho", "theta", "sigma_nu", "sigma_eta"), datasets.ARMA_DEMO_PARAMS.as_tuple()))
        rep.csv("truth_G_mu.csv", ["mu", "weight"], list(zip(datasets.ARMA_DEMO_G.atoms, datasets.ARMA_DEMO_G.weights)))
    else:
        raise ValidationError(f"unknown demo {kind!r}")
    rep.csv("panel.csv", ["unit_id", "period", "value"], panel_rows(panel))
    return {"kind": kind, "n_units": len(panel), "periods": int(panel.lengths.max()), "truth": truth}


# parser


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", required=True, help="report directory")
    p.add_argument("--config", help="JSON config echoed by an earlier run; flags override it")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--prune-eps", type=float, default=1e-3)
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--jobs", type=int, default=1, help="worker processes (capped by EBDECONV_THREADS)")


def _add_kernel(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", help="observations CSV (column value, optional sd/trials/shape)")
    p.add_argument("--n", type=int, default=None, help="demo sample size when --data is absent")
    p.add_argument("--kernel", choices=KERNELS, default="gaussian")
    p.add_argument("--sd", type=float, default=1.0)
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--shape", type=float, default=None)
    p.add_argument("--df", type=float, default=3.0)
    p.add_argument("--grid-size", type=int, default=300)


def _add_panel(p: argparse.ArgumentParser, grid_default=60) -> None:
    p.add_argument("--panel", help="panel CSV (unit_id,period,value); demo panel if absent")
    p.add_argument("--initial", choices=("drop", "stationary"), default="drop")
    p.add_argument("--grid-size", type=int, default=grid_default, help="alpha and theta grid points")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ebdeconv", description="Empirical Bayes deconvolution tools")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("npmle", help="fit a mixing distribution")
    _add_common(p)
    _add_kernel(p)
    p.set_defaults(func=cmd_npmle)

    p = sub.add_parser("rules", help="decision rules")
    _add_common(p)
    _add_kernel(p)
    p.add_argument("--binary", action="store_true", help="two-point binary rule")
    p.add_argument("--p", type=float, default=None, help="prior probability for --binary")
    p.add_argument("--rule", choices=("tweedie", "robbins", "stein"), default="tweedie")
    p.add_argument("--shrinkage", choices=("james-stein", "efron-morris"), default="james-stein")
    p.set_defaults(func=cmd_rules)

    p = sub.add_parser("panel-fit", help="bivariate NPMLE of (alpha, theta) at fixed rho")
    _add_common(p)
    _add_panel(p)
    p.add_argument("--rho", type=float, required=False, default=0.0)
    p.set_defaults(func=cmd_panel_fit)

    p = sub.add_parser("profile", help="profile likelihood over rho with Wilks interval")
    _add_common(p)
    _add_panel(p)
    p.add_argument("--rho-grid", default="0:0.95:0.01")
    p.add_argument("--refine", type=float, default=None, help="second-pass step near the maximum")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("arma-fit", help="ARMA(1,1) structural profile search")
    _add_common(p)
    p.add_argument("--panel")
    p.add_argument("--arma-rho", default="0:0.95:0.05")
    p.add_argument("--arma-theta", default="0:0.9:0.05")
    p.add_argument("--sigma-nu", default="log:0.05:1:8")
    p.add_argument("--sigma-eta", default="log:0.05:1:8")
    p.add_argument("--mu-grid-size", type=int, default=300)
    p.set_defaults(func=cmd_arma_fit)

    p = sub.add_parser("predict", help="posterior predictive paths and bands for one unit")
    _add_common(p)
    _add_panel(p)
    p.add_argument("--rho", type=float, default=0.5)
    p.add_argument("--H", help="fitted H CSV (alpha,theta,weight); fitted on the prefixes if absent")
    p.add_argument("--unit", default=None)
    p.add_argument("--T0", type=int, default=None, help="observed prefix length")
    p.add_argument("--horizon", type=int, default=None)
    p.add_argument("--m", type=int, default=50, help="paths per posterior draw")
    p.add_argument("--M", type=int, default=50, help="posterior draws")
    p.add_argument("--drift", choices=("stationary-alpha", "raw-alpha"), default="stationary-alpha")
    p.add_argument("--uniform-level", type=float, default=0.9)
    p.add_argument("--compare-arma", default=None, metavar="RHO,THETA,SNU,SETA")
    p.add_argument("--mu-grid-size", type=int, default=300)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("simulate-demo", help="write a synthetic dataset")
    _add_common(p)
    p.add_argument("--kind", choices=("lognormal", "tack", "ar1", "arma"), default="lognormal")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--periods", type=int, default=15)
    p.set_defaults(func=cmd_simulate_demo)
    return parser


def _parse(parser: argparse.ArgumentParser, argv: Sequence[str]) -> argparse.Namespace:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config:
        try:
            with open(known.config, encoding="utf-8") as fh:
                saved = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read config {known.config}: {exc}") from None
        cmd = saved.pop("command", None)
        if not argv or argv[0] != cmd:
            raise ValidationError(f"config is for command {cmd!r}")
        sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
        sub.choices[cmd].set_defaults(**saved)
    return parser.parse_args(argv)


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    out_dir = None
    try:
        try:
            ns = _parse(parser, argv)
        except SystemExit as exc:
            return EXIT_OK if exc.code == 0 else EXIT_VALIDATION
        out_dir = Path(ns.out)
        cfg = RunConfig.from_namespace(ns)
        rep = Report(out_dir)
        rep.json("config.json", cfg.echo())
        rep.json("inputs.json", _inputs(cfg))
        summary = ns.func(cfg, rep)
        summary["certified"] = rep.certified
        summary["threads_cap"] = os.environ.get("EBDECONV_THREADS")
        rep.json("summary.json", summary)
        if not rep.certified:
            return EXIT_NUMERIC
        return EXIT_OK
    except (ValidationError, SchemaError, ValueError) as exc:
        return _fail(out_dir, EXIT_VALIDATION, "validation", exc)
    except (FloatingPointError, np.linalg.LinAlgError, RuntimeError, ArithmeticError) as exc:
        return _fail(out_dir, EXIT_NUMERIC, "numeric", exc)


def _fail(out_dir, code: int, kind: str, exc: Exception) -> int:
    payload = {"error": kind, "type": type(exc).__name__, "message": str(exc), "exit_code": code}
    text = json.dumps(payload, sort_keys=True)
    print(text, file=sys.stderr)
    if out_dir is not None:
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
            (out_dir / "error.json").write_text(text + "\n", encoding="utf-8")
        except OSError:
            pass
    return code


if __name__ == "__main__":
    sys.exit(main())
