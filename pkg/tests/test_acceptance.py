"""End-to-end acceptance checks, one test per criterion.

Each test records a "[PASS]/[FAIL] criterion k: ..." line that is printed in
the terminal summary (see conftest.py) and also echoed to stdout.
"""

import json
import math
import time
from fractions import Fraction

import numpy as np
from click.testing import CliRunner

from conftest import ACCEPTANCE_LINES
from smoothts.agent import ParticleEnsemble, empirical_coverage, martingale_check, ts_confidence_run
from smoothts.bounds import BoundParams, default_lambda, exponents, regret_bound_curve
from smoothts.cli import main
from smoothts.eluder import eluder_upper_bound, greedy_eluder_witness, min_region_B_star, region_size_B
from smoothts.funclass import FunctionClassSpec, GridFunction, PriorSpec, extremal_function
from smoothts.harness import (
    ExperimentConfig,
    _coupled,
    build_coupling,
    estimate_bayesian_regret,
    fit_exponent,
    lower_bound_study,
    study_spec,
)
from smoothts.noise import gaussian, laplace


def report(k: int, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {k}: {detail}"
    ACCEPTANCE_LINES[k] = line
    print(line)


def slope(x, y) -> float:
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def test_criterion_01_exponents():
    checks = [
        exponents(0).upper == Fraction(5, 6),
        exponents(1).upper == Fraction(23, 30),
        exponents(0).lower == Fraction(2, 3),
        abs(float(exponents(10**9).upper) - 0.5) < 1e-8,
        all(isinstance(getattr(exponents(M), f), Fraction) for M in range(6) for f in ("upper", "lower")),
    ]
    ok = all(checks)
    report(1, ok, f"upper(0)={exponents(0).upper} upper(1)={exponents(1).upper} lower(0)={exponents(0).lower}")
    assert ok


def test_criterion_02_min_region():
    worst = math.inf
    fails = []
    for M in (0, 1):
        for eps in np.geomspace(0.01, 0.2, 5):
            for L in np.geomspace(1.0, 10.0, 5):
                spec = FunctionClassSpec(C=1, M=M, L=float(L), grid_n=4001)
                b = min_region_B_star(0.5, spec, float(eps))
                lo = eps / (3 * L) if M == 0 else 2 * math.sqrt(2 * eps / (3 * L))
                margin = b - (lo - 2 * spec.h)
                worst = min(worst, margin)
                if margin < 0:
                    fails.append((M, eps, L, b, lo))
    report(2, not fails, f"50 (M, eps, L) points, worst margin {worst:.3g}, failures {len(fails)}")
    assert not fails, fails


def test_criterion_03_region_scaling():
    out = {}
    for M in range(4):
        L = 1.0 if M == 0 else 10.0 ** (M + 1)  # keeps B many grid steps wide at every M
        spec = FunctionClassSpec(C=1, M=M, L=L, grid_n=40001)
        eps = np.geomspace(1e-3, 1e-2, 6) * (1 if M < 3 else 10)
        B = [region_size_B(extremal_function(0.5, spec, float(e)).h, float(e)) for e in eps]
        out[M] = slope(eps, B)
    ok = all(abs(out[M] - 1 / (M + 1)) <= 0.05 for M in out)
    report(3, ok, "slopes " + ", ".join(f"M={M}: {s:.4f} (target {1 / (M + 1):.4f})" for M, s in out.items()))
    assert ok


def test_criterion_04_eluder_sandwich():
    sandwich_ok = True
    slopes = {}
    for M in (0, 1):
        spec = FunctionClassSpec(C=1, M=M, L=1.0, grid_n=4001)
        eps = [0.2, 0.1, 0.05, 0.025, 0.0125]
        n = []
        for i, e in enumerate(eps):
            w = greedy_eluder_witness(spec, e, rng=np.random.default_rng([M, i]))
            sandwich_ok &= w.check() and w.length <= eluder_upper_bound(spec, e)
            n.append(w.length)
        slopes[M] = slope(1 / np.array(eps), n)
    ok = sandwich_ok and all(abs(slopes[M] - 1 / (M + 1)) <= 0.2 for M in slopes)
    report(4, ok, f"sandwich {'holds' if sandwich_ok else 'violated'}; witness slopes "
           + ", ".join(f"M={M}: {s:.3f}" for M, s in slopes.items()))
    assert ok


def test_criterion_05_coverage():
    runs = 500
    spec = FunctionClassSpec(C=1, M=0, L=25.0, grid_n=201)
    rows = []
    ok = True
    for delta in (0.05, 0.1):
        for noise in (gaussian(0.5), laplace(0.5 / math.sqrt(2))):
            lam = default_lambda(spec.C, noise.sigma2, noise.b)
            f0 = GridFunction(np.zeros(spec.grid_n), spec)
            f = GridFunction(0.25 + 0.25 * spec.x, spec)
            acts = np.random.default_rng(0).random(200)
            frac = martingale_check(f, f0, acts, noise, lam, delta, runs, 1)
            cov = empirical_coverage(PriorSpec(), spec, noise, 200, delta, 0.0, lam, runs, 2, n_particles=128)
            m_lo = 1 - delta - 3 * math.sqrt(delta * (1 - delta) / runs)
            c_lo = 1 - 2 * delta - 3 * math.sqrt(2 * delta * (1 - 2 * delta) / runs)
            ok &= frac >= m_lo and cov >= c_lo
            rows.append(f"{noise.family}/d={delta}: mart {frac:.3f}>={m_lo:.3f} cov {cov:.3f}>={c_lo:.3f}")
    report(5, ok, "; ".join(rows))
    assert ok


def test_criterion_06_width_sum():
    T, runs, n_particles = 2000, 50, 256
    spec = study_spec(0, grid_n=501)
    noise = gaussian(0.5)
    lam = default_lambda(spec.C, noise.sigma2, noise.b)
    params = BoundParams(alpha=0.0, delta=1 / (2 * T), lam=lam, C=spec.C)
    kappa = T ** float(exponents(0).kappa_exp)
    dim = eluder_upper_bound(spec, kappa)
    ws_ok = rw_ok = 0
    covered = 0
    ss = np.random.SeedSequence(6)
    for child in ss.spawn(runs):
        rng = np.random.default_rng(child)
        ens = ParticleEnsemble.from_prior(PriorSpec(), spec, n_particles, rng, noise.sigma2)
        run = ts_confidence_run(ens, int(rng.integers(n_particles)), noise, T, params, rng)
        bound = T * kappa + dim * spec.C + 4 * math.sqrt(dim * run.betas[-1] * T)
        ws_ok += float(np.sum(run.widths)) <= bound
        if run.covered:
            covered += 1
            rw_ok += float(np.sum(run.instant_regret)) <= spec.C + float(np.sum(run.widths))
    ok = ws_ok == runs and rw_ok == covered
    report(6, ok, f"width-sum {ws_ok}/{runs}; regret-width {rw_ok}/{covered} covered runs")
    assert ok


def test_criterion_07_bound_pipeline():
    T = [2**k for k in range(8, 21)]
    out = {}
    for M in (0, 1, 2):
        c = regret_bound_curve(M, T)
        top = slope(T[-2:], c.regret_bound[-2:])
        out[M] = (top, float(exponents(M).upper))
    ok = all(abs(s - u) <= 0.03 for s, u in out.values())
    report(7, ok, "local slope at 2^20 " + ", ".join(f"M={M}: {s:.4f} vs {u:.4f}" for M, (s, u) in out.items()))
    assert ok


def test_criterion_08_ts_regret():
    t0 = time.time()
    fits = {}
    for M in (0, 1):
        cfg = ExperimentConfig(spec=study_spec(M), T_grid=tuple(2**k for k in range(6, 15)), replications=200,
                               seed=8 + M)
        curve = estimate_bayesian_regret(cfg)
        fits[M] = fit_exponent(curve, cfg.tail_fraction).slope
    elapsed = time.time() - t0
    ok = all(s <= float(exponents(M).upper) + 0.1 and s < 0.95 for M, s in fits.items()) and elapsed < 3600
    report(8, ok, ", ".join(f"M={M}: slope {s:.3f} (upper {float(exponents(M).upper):.3f})" for M, s in fits.items())
           + f"; {elapsed:.0f}s")
    assert ok


def test_criterion_09_lower_bound():
    c = build_coupling(10, 4, 0, 1.0, 1001)
    g = np.random.default_rng(9)
    n = 50_000
    unbiased = True
    for x in np.linspace(0.0, 1.0, 41):
        m = float(np.mean(_coupled(c, np.full(n, x), g.random((3, n)))))
        v = float(c.nu(x))
        unbiased &= abs(m - v) <= 3 * math.sqrt(v * (1 - v) / n)
    curves = lower_bound_study(0, ["fixed-grid-ucb"], [2000, 4000, 8000, 16000, 32000, 64000], 40, 9)
    s = fit_exponent(curves["fixed-grid-ucb"], 1.0).slope
    ok = unbiased and s >= 2 / 3 - 0.15
    report(9, ok, f"coupling {'unbiased' if unbiased else 'biased'} at 41 points; UCB slope {s:.3f} >= {2 / 3 - 0.15:.3f}")
    assert ok


def test_criterion_10_verify_reproducible(tmp_path):
    runner = CliRunner()
    blobs = []
    for i, th in enumerate(("1", "1", "8")):
        d = tmp_path / str(i)
        res = runner.invoke(main, ["verify", "--seed", "10", "--threads", th, "--out-dir", str(d)])
        assert res.exit_code == 0, res.output
        blobs.append((d / "verify_report.json").read_bytes())
    ok = blobs[0] == blobs[1] == blobs[2] and json.loads(blobs[0])["all_ok"]
    report(10, ok, "verify report byte-identical across 2 runs and 1 vs 8 threads")
    assert ok
