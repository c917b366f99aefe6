"""Command line interface: simulate, eluder, bounds, lower-bound, verify."""

from __future__ import annotations

import json
import math
import os
import sys
import time
from fractions import Fraction

import click
import numpy as np

from . import bounds as bnd
from .agent import martingale_check
from .eluder import eluder_upper_bound, greedy_eluder_witness, min_region_B_star
from .errors import FitError
from .funclass import FunctionClassSpec, GridFunction
from .harness import (
    ExperimentConfig,
    _coupled,
    build_coupling,
    estimate_bayesian_regret,
    export,
    fit_exponent,
    lower_bound_study,
    write_manifest,
)
from .noise import gaussian

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


def load_config(path) -> dict:
    if path is None:
        return {}
    with open(path, "rb") as fh:
        if str(path).endswith(".json"):
            return json.load(fh)
        return tomllib.load(fh)


def _common(f):
    f = click.option("--threads", type=int, default=None, help="Worker threads for replications.")(f)
    f = click.option("--out-dir", type=click.Path(file_okay=False), default=None, help="Output directory.")(f)
    f = click.option("--seed", type=int, default=None, help="Master seed.")(f)
    f = click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
                     help="TOML or JSON config file.")(f)
    return f


def _resolve(config_path, section, seed, out_dir, threads):
    raw = load_config(config_path)
    cfg = dict(raw.get(section, {}))
    for key in ("seed", "out_dir", "threads"):
        if key in raw and key not in cfg:
            cfg[key] = raw[key]
    if seed is not None:
        cfg["seed"] = seed
    if threads is not None:
        cfg["threads"] = threads
    out = out_dir or cfg.pop("out_dir", None) or "out"
    cfg.pop("out_dir", None)
    cfg.setdefault("seed", 0)
    cfg.setdefault("threads", 1)
    os.makedirs(out, exist_ok=True)
    return cfg, out


@click.group()
def main():
    """Thompson sampling for smooth continuum-armed bandits: studies and checks."""


@main.command()
@_common
def simulate(config_path, seed, out_dir, threads):
    """Bayesian-regret study of one agent over a horizon grid."""
    t0 = time.time()
    cfg, out = _resolve(config_path, "simulate", seed, out_dir, threads)
    ec = ExperimentConfig.from_dict(cfg)
    curve = estimate_bayesian_regret(ec)
    files = export([curve], "csv", out) + export([curve], "svg", out, M=ec.spec.M, name="regret")
    if len(curve.horizons) >= 3:
        fit = fit_exponent(curve, ec.tail_fraction)
        p = os.path.join(out, "fit.json")
        with open(p, "w") as fh:
            json.dump({"slope": fit.slope, "stderr": fit.stderr, "tail_fraction": ec.tail_fraction}, fh,
                      sort_keys=True)
        files.append(p)
    write_manifest(out, ec.to_dict(), files, t0)
    click.echo(f"wrote {len(files)} files to {out}")


@main.command()
@_common
def eluder(config_path, seed, out_dir, threads):
    """Greedy eluder witnesses and upper bounds over an eps sweep."""
    t0 = time.time()
    cfg, out = _resolve(config_path, "eluder", seed, out_dir, threads)
    spec = FunctionClassSpec.from_dict({**FunctionClassSpec().to_dict(), **cfg.get("spec", {})})
    eps_list = cfg.get("eps", [0.2, 0.1, 0.05])
    mode = cfg.get("mode", "extremal")
    restarts = int(cfg.get("restarts", 8))
    files = []
    rows = []
    for i, eps in enumerate(eps_list):
        w = greedy_eluder_witness(spec, eps, mode, int(cfg.get("max_len", 100000)),
                                  np.random.default_rng([cfg["seed"], i]), restarts)
        p = os.path.join(out, f"witness_{i}.csv")
        w.to_csv(p)
        files += [p, p[:-4] + ".json"]
        rows.append((eps, w.length, eluder_upper_bound(spec, eps)))
    p = os.path.join(out, "eluder_scaling.csv")
    with open(p, "w") as fh:
        fh.write("eps,witness_length,upper_bound\n")
        for e, n, u in rows:
            fh.write(f"{e:.17g},{n},{u:.17g}\n")
    files.append(p)
    write_manifest(out, {"eluder": cfg, "spec": spec.to_dict()}, files, t0)
    click.echo(f"wrote {len(files)} files to {out}")


@main.command(name="bounds")
@_common
def bounds_cmd(config_path, seed, out_dir, threads):
    """Regret-bound curve table for one smoothness order."""
    t0 = time.time()
    cfg, out = _resolve(config_path, "bounds", seed, out_dir, threads)
    M = int(cfg.get("M", 0))
    T_grid = cfg.get("T_grid", [2**k for k in range(8, 21)])
    curve = bnd.regret_bound_curve(
        M, T_grid, L=float(cfg.get("L", 1.0)), C=float(cfg.get("C", 1.0)), sigma2=float(cfg.get("sigma2", 1.0)),
        b=float(cfg.get("b", 0.0)), covering_constant=float(cfg.get("covering_constant", 1.0)),
    )
    p = os.path.join(out, "bounds.csv")
    bnd.write_bound_csv(curve, p)
    write_manifest(out, {"bounds": cfg}, [p], t0)
    click.echo(f"wrote {p}")


@main.command(name="lower-bound")
@_common
def lower_bound_cmd(config_path, seed, out_dir, threads):
    """Regret of baselines on the adversarial bump family."""
    t0 = time.time()
    cfg, out = _resolve(config_path, "lower_bound", seed, out_dir, threads)
    M = int(cfg.get("M", 0))
    algs = cfg.get("algorithms", ["fixed-grid-ucb", "uniform-random"])
    T_grid = cfg.get("T_grid", [1000, 3000, 10000, 30000])
    curves = lower_bound_study(M, algs, T_grid, int(cfg.get("replications", 20)), cfg["seed"],
                               c0=float(cfg.get("c0", 0.05)), L=float(cfg.get("L", 1.0)))
    cl = list(curves.values())
    files = export(cl, "csv", out) + export(cl, "svg", out, M=M, name="lower_bound")
    fits = {}
    for k, c in curves.items():
        try:
            f = fit_exponent(c, float(cfg.get("tail_fraction", 1.0)))
            fits[k] = {"slope": f.slope, "stderr": f.stderr}
        except FitError:  # too few horizons, or zero regret (oracle)
            fits[k] = None
    p = os.path.join(out, "fits.json")
    with open(p, "w") as fh:
        json.dump(fits, fh, sort_keys=True, indent=2)
    files.append(p)
    write_manifest(out, {"lower_bound": cfg}, files, t0)
    click.echo(f"wrote {len(files)} files to {out}")


def verify_report(seed: int, threads: int) -> dict:
    """Reduced property suite; every entry is a deterministic function of seed."""
    rep: dict = {"seed": seed}
    rep["exponents"] = {
        str(M): {k: str(getattr(bnd.exponents(M), k)) for k in ("upper", "lower", "kappa_exp", "alpha_exp")}
        for M in range(4)
    }
    rep["exponent_gap_ok"] = all(bnd.exponents(M).gap == bnd.gap_exponent(M) for M in range(51))
    rep["five_sixths"] = bnd.exponents(0).upper == Fraction(5, 6)

    spec0 = FunctionClassSpec(1.0, 0, 1.0, 1001)
    spec1 = FunctionClassSpec(1.0, 1, 1.0, 1001)
    b0 = min_region_B_star(0.5, spec0, 0.3)
    b1 = min_region_B_star(0.5, spec1, 0.3)
    rep["B_star"] = {"M0": b0, "M1": b1, "M0_ok": b0 >= 0.1 - 2 * spec0.h,
                     "M1_ok": b1 >= min(1.0, 2 * math.sqrt(0.2)) - 2 * spec1.h}

    spec = FunctionClassSpec(1.0, 0, 1.0, 501)
    w = greedy_eluder_witness(spec, 0.1, "extremal", rng=np.random.default_rng([seed, 1]), restarts=4)
    ub = eluder_upper_bound(spec, 0.1)
    rep["witness"] = {"length": w.length, "upper_bound": ub, "sound": w.check(), "sandwich": w.length <= ub}

    f0 = GridFunction(np.zeros(spec.grid_n), spec)
    f = GridFunction(np.full(spec.grid_n, 0.5), spec)
    frac = martingale_check(f, f0, np.full(100, 0.5), gaussian(1.0), 0.1, 0.1, 400, seed)
    rep["martingale"] = {"fraction": frac, "ok": frac >= 0.9 - 3 * math.sqrt(0.09 / 400)}

    c = build_coupling(10, 4, 0, 1.0, 1001)
    xs = np.linspace(0.25, 0.45, 9)
    g = np.random.default_rng([seed, 2])
    n = 20000
    means = [float(np.mean(_coupled(c, np.full(n, x), g.random((3, n))))) for x in xs]
    nus = [float(c.nu(x)) for x in xs]
    ok = all(abs(m - v) <= 3 * math.sqrt(max(v * (1 - v), 1e-12) / n) + 1e-12 for m, v in zip(means, nus))
    rep["coupling"] = {"means": means, "nu": nus, "ok": ok}

    ec = ExperimentConfig(spec=FunctionClassSpec(1.0, 0, 25.0, 201), n_particles=128, T_grid=(32, 64, 128),
                          replications=8, seed=seed, threads=threads)
    curve = estimate_bayesian_regret(ec)
    rep["ts_regret"] = {"T": curve.horizons.tolist(), "mean": curve.mean_regret.tolist(),
                        "stderr": curve.stderr.tolist()}
    rep["all_ok"] = bool(rep["exponent_gap_ok"] and rep["five_sixths"] and rep["B_star"]["M0_ok"]
                         and rep["B_star"]["M1_ok"] and rep["witness"]["sound"] and rep["witness"]["sandwich"]
                         and rep["martingale"]["ok"] and rep["coupling"]["ok"])
    return rep


@main.command()
@_common
def verify(config_path, seed, out_dir, threads):
    """Run the reduced property suite and write verify_report.json."""
    cfg, out = _resolve(config_path, "verify", seed, out_dir, threads)
    rep = verify_report(int(cfg["seed"]), int(cfg["threads"]))
    p = os.path.join(out, "verify_report.json")
    with open(p, "w") as fh:
        json.dump(rep, fh, sort_keys=True, indent=2)
        fh.write("\n")
    click.echo(f"{'PASS' if rep['all_ok'] else 'FAIL'}: wrote {p}")
    if not rep["all_ok"]:
        raise SystemExit(1)


if __name__ == "__main__":
    main()
