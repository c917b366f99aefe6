"""Experiment orchestration: episodes, regret curves, exponent fits, lower-bound study, export."""

from __future__ import annotations

import hashlib
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.stats import linregress

from .agent import (
    FixedGridUCB,
    OracleAgent,
    ParticleEnsemble,
    TSAgent,
    UniformRandom,
    Zooming,
)
from .bounds import exponents
from .errors import FitError, OutOfRangeError
from .funclass import (
    BumpInstance,
    FunctionClassSpec,
    GridFunction,
    PriorSpec,
    bump_instance,
    bump_width_constant,
    sample_prior_batch,
)
from .noise import NoiseModel, gaussian, sample_noise_array

__version__ = "0.1.0"

AGENTS = ("ts", "oracle", "uniform-random", "fixed-grid-ucb", "zooming")
ANYTIME = ("ts", "oracle", "uniform-random")


def study_spec(M: int, C: float = 1.0, n_terms: int = 8, grid_n: int = 1001) -> FunctionClassSpec:
    """Class whose default sine prior can span the whole range [0, C].

    The leading sine amplitude cap L / ((2 pi)^(M+1) n_terms) equals C / 2,
    so prior draws vary on the scale of the reward noise instead of being
    nearly flat, as they are at L = 1.
    """
    L = C * n_terms * (2 * math.pi) ** (M + 1) / 2.0
    return FunctionClassSpec(C=C, M=M, L=L, grid_n=grid_n)


@dataclass
class ExperimentConfig:
    spec: FunctionClassSpec = field(default_factory=FunctionClassSpec)
    prior: PriorSpec = field(default_factory=lambda: PriorSpec("random-trig"))
    noise: NoiseModel = field(default_factory=lambda: gaussian(0.5))
    agent: str = "ts"
    n_particles: int = 2048
    likelihood_sigma2: Optional[float] = None
    resample_threshold: float = 0.0  # 0 keeps the exact posterior of the particle prior
    ucb_K: Optional[int] = None
    f0_source: str = "ensemble"  # draw f0 from the particle set or afresh from the prior
    T: int = 1000
    replications: int = 10
    seed: int = 0
    T_grid: tuple = ()
    threads: int = 1
    tail_fraction: float = 0.5

    def __post_init__(self):
        if self.agent not in AGENTS:
            raise ValueError(f"unknown agent {self.agent!r}")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if self.f0_source not in ("ensemble", "prior"):
            raise ValueError("f0_source must be 'ensemble' or 'prior'")
        grid = tuple(int(t) for t in (self.T_grid or (self.T,)))
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValueError("T_grid must be strictly increasing")
        self.T_grid = grid

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "prior": self.prior.to_dict(),
            "noise": json.loads(self.noise.to_json()),
            "agent": self.agent,
            "n_particles": self.n_particles,
            "likelihood_sigma2": self.likelihood_sigma2,
            "resample_threshold": self.resample_threshold,
            "ucb_K": self.ucb_K,
            "f0_source": self.f0_source,
            "T": self.T,
            "replications": self.replications,
            "seed": self.seed,
            "T_grid": list(self.T_grid),
            "tail_fraction": self.tail_fraction,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        kw = {}
        if "spec" in d:
            kw["spec"] = FunctionClassSpec.from_dict({**FunctionClassSpec().to_dict(), **d.pop("spec")})
        if "prior" in d:
            kw["prior"] = PriorSpec.from_dict(d.pop("prior"))
        if "noise" in d:
            kw["noise"] = NoiseModel.from_dict(d.pop("noise"))
        for k in ("agent", "n_particles", "likelihood_sigma2", "resample_threshold", "ucb_K", "f0_source", "T", "replications",
                  "seed", "threads", "tail_fraction"):
            if k in d:
                kw[k] = d[k]
        if "T_grid" in d:
            kw["T_grid"] = tuple(d["T_grid"])
        return cls(**kw)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class RunResult:
    actions: np.ndarray
    rewards: np.ndarray
    instant_regret: np.ndarray
    widths: np.ndarray

    @property
    def cumulative_regret(self) -> float:
        return float(np.sum(self.instant_regret))

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("t,action,reward,instant_regret,width\n")
            for t, row in enumerate(zip(self.actions, self.rewards, self.instant_regret, self.widths), start=1):
                fh.write(f"{t}," + ",".join(f"{v:.17g}" for v in row) + "\n")


@dataclass
class RegretCurve:
    horizons: np.ndarray
    mean_regret: np.ndarray
    stderr: np.ndarray
    replications: int
    label: str = "regret"


class FitResult(tuple):
    """(slope, stderr) with attribute access."""

    def __new__(cls, slope, stderr):
        return super().__new__(cls, (slope, stderr))

    @property
    def slope(self) -> float:
        return self[0]

    @property
    def stderr(self) -> float:
        return self[1]


def _rngs(seed: int, horizon: int, rep: int, n: int) -> list:
    ss = np.random.SeedSequence([int(seed), int(horizon), int(rep)])
    return [np.random.default_rng(s) for s in ss.spawn(n)]


def _make_agent(config: ExperimentConfig, T: int, f0: GridFunction, ensemble: Optional[ParticleEnsemble]):
    kind = config.agent
    if kind == "ts":
        return TSAgent(ensemble, config.resample_threshold)
    if kind == "oracle":
        return OracleAgent(f0)
    if kind == "uniform-random":
        return UniformRandom()
    if kind == "fixed-grid-ucb":
        K = config.ucb_K or max(1, int(round((T / math.log(max(T, 2))) ** (1.0 / 3.0))))
        return FixedGridUCB(K, config.noise.sigma2)
    return Zooming(T, config.spec.L)


def _likelihood_sigma2(config: ExperimentConfig) -> float:
    if config.likelihood_sigma2 is not None:
        return float(config.likelihood_sigma2)
    return max(config.noise.sigma2, 1e-6)


def run_episode(
    config: ExperimentConfig,
    f0: GridFunction,
    seed,
    T: Optional[int] = None,
    ensemble: Optional[ParticleEnsemble] = None,
) -> RunResult:
    """Simulate T rounds of the configured agent against f0.

    `seed` is an int or a sequence of ints fed to SeedSequence. Noise is drawn
    up front from its own stream so that agents see identical noise.
    """
    T = int(T or config.T)
    ss = np.random.SeedSequence(seed if not isinstance(seed, (list, tuple)) else list(seed))
    r_noise, r_agent, r_ens = (np.random.default_rng(s) for s in ss.spawn(3))
    return _run(config, f0, T, r_noise, r_agent, r_ens, ensemble)


def _run(config, f0, T, r_noise, r_agent, r_ens, ensemble):
    if config.agent == "ts" and ensemble is None:
        ensemble = ParticleEnsemble.from_prior(
            config.prior, config.spec, config.n_particles, r_ens, _likelihood_sigma2(config)
        )
    agent = _make_agent(config, T, f0, ensemble)
    eta = sample_noise_array(config.noise, r_noise, T)
    fmax = f0.max()
    acts = np.empty(T)
    rews = np.empty(T)
    widths = np.full(T, np.nan)
    is_ts = isinstance(agent, TSAgent)
    for t in range(T):
        a = agent.select(r_agent)
        v = float(f0(a))
        R = v + eta[t]
        if is_ts:
            col = agent.ensemble.values_at(a)
            widths[t] = float(col.max() - col.min())
        agent.update(a, R, r_agent)
        acts[t], rews[t] = a, R
    regret = fmax - f0(acts)
    return RunResult(acts, rews, regret, widths)


def _replication(config: ExperimentConfig, horizon: int, rep: int) -> np.ndarray:
    """Cumulative regret of one replication at each requested horizon."""
    r_noise, r_agent, r_ens, r_f0 = _rngs(config.seed, horizon, rep, 4)
    ensemble = None
    if config.agent == "ts":
        ensemble = ParticleEnsemble.from_prior(
            config.prior, config.spec, config.n_particles, r_ens, _likelihood_sigma2(config)
        )
    if config.agent == "ts" and config.f0_source == "ensemble":
        f0 = GridFunction(ensemble.values[int(r_f0.integers(len(ensemble)))], config.spec)
    else:
        f0 = GridFunction(sample_prior_batch(config.prior, config.spec, 1, r_f0)[0], config.spec)
    res = _run(config, f0, horizon, r_noise, r_agent, r_ens, ensemble)
    return np.cumsum(res.instant_regret)


def _parallel_map(fn, items, threads: int) -> list:
    if threads <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def estimate_bayesian_regret(config: ExperimentConfig, threads: Optional[int] = None) -> RegretCurve:
    """Replication mean and standard error of Reg(T) at every horizon in T_grid.

    f0 is redrawn per replication. Anytime agents are run once to the largest
    horizon and read at each prefix; horizon-dependent agents are rerun.
    """
    threads = config.threads if threads is None else threads
    H = np.array(config.T_grid, dtype=int)
    n = config.replications
    if config.agent in ANYTIME:
        Tmax = int(H[-1])
        cums = _parallel_map(lambda r: _replication(config, Tmax, r), range(n), threads)
        regs = np.array([[c[h - 1] for h in H] for c in cums])
    else:
        jobs = [(int(h), r) for h in H for r in range(n)]
        out = _parallel_map(lambda j: _replication(config, j[0], j[1])[-1], jobs, threads)
        regs = np.array(out).reshape(len(H), n).T
    return _curve(H, regs, config.agent)


def _curve(H, regs: np.ndarray, label: str) -> RegretCurve:
    n = regs.shape[0]
    mean = regs.mean(axis=0)
    se = regs.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(regs.shape[1])
    return RegretCurve(np.asarray(H, dtype=float), mean, se, n, label)


def fit_exponent(curve: RegretCurve, tail_fraction: float = 0.5) -> FitResult:
    """OLS slope of log mean regret on log T over the top tail_fraction of horizons."""
    H = np.asarray(curve.horizons, dtype=float)
    Y = np.asarray(curve.mean_regret, dtype=float)
    k = int(math.ceil(tail_fraction * H.size))
    if k < 3:
        raise FitError(f"need at least 3 horizons in the fit window, have {k}")
    H, Y = H[-k:], Y[-k:]
    if np.any(Y <= 0):
        raise FitError("non-positive regret in the fit window")
    res = linregress(np.log(H), np.log(Y))
    return FitResult(float(res.slope), float(res.stderr))


# ---------------------------------------------------------------------------
# adversarial coupling


@dataclass(frozen=True, eq=False)
class AdversarialCoupling:
    K: int
    a_star: int  # 1-based arm index
    delta: float
    instance: BumpInstance

    def arm_of(self, x):
        """Arm a with x in ((2a - 1)/(2K) - 1/(2K), (2a - 1)/(2K) + 1/(2K)]."""
        x = np.asarray(x, dtype=float)
        return np.clip(np.ceil(x * self.K).astype(int), 1, self.K)

    def center(self, a):
        return (2 * np.asarray(a, dtype=float) - 1) / (2 * self.K)

    def mu(self, a):
        return np.where(np.asarray(a) == self.a_star, 0.5 + self.delta, 0.5)

    def nu(self, x):
        return self.instance.value(x)

    def p(self, x):
        """Probability of passing the arm reward through; 1 in the 0/0 case."""
        x = np.asarray(x, dtype=float)
        num = 0.5 - self.nu(x)
        den = 0.5 - self.mu(self.arm_of(x))
        safe = np.where(den == 0, 1.0, den)
        return np.where(den == 0, 1.0, np.clip(num / safe, 0.0, 1.0))


def lower_bound_K(T: int, M: int, c0: float = 0.05, L: float = 1.0) -> tuple[int, float]:
    """Arm count and bump height for horizon T.

    K is rounded to the nearest integer and then raised, if needed, until
    the height L (1 / (2 c1 K))^(M+1) is at most 0.5.
    """
    c1 = bump_width_constant(M)
    K = max(1, int(round((T / c0 * (1.0 / (2 * c1) ** (2 * M + 2))) ** (1.0 / (2 * M + 3)))))
    while L * (1.0 / (2 * c1 * K)) ** (M + 1) > 0.5:
        K += 1
    return K, L * (1.0 / (2 * c1 * K)) ** (M + 1)


def build_coupling(K: int, a_star: int, M: int, L: float = 1.0, grid_n: int = 1001) -> AdversarialCoupling:
    c1 = bump_width_constant(M)
    delta = L * (1.0 / (2 * c1 * K)) ** (M + 1)
    if delta > 0.5:
        raise OutOfRangeError(f"bump height {delta:.3g} exceeds 0.5 for K={K}")
    x_star = (2 * a_star - 1) / (2.0 * K)
    inst = bump_instance(x_star, delta, M, L, grid_n)
    return AdversarialCoupling(K, int(a_star), float(delta), inst)


def adversarial_coupled_reward(coupling: AdversarialCoupling, x, rng: np.random.Generator):
    """Binary reward with conditional mean nu(x), coupled to the arm reward of a(x)."""
    x = np.asarray(x, dtype=float)
    u = rng.random((3,) + x.shape)
    return _coupled(coupling, x, u)


def _coupled(coupling: AdversarialCoupling, x, u):
    mu = coupling.mu(coupling.arm_of(x))
    r = (u[0] < mu).astype(float)
    indep = (u[2] < 0.5).astype(float)
    return np.where(u[1] < coupling.p(x), r, indep)


_CHUNK = 4096


def _lb_batch(kind: str, couplings: list, T: int, rngs: list, sigma2: float = 0.25, ucb_K: Optional[int] = None):
    """Pseudo-regret sum over t <= T of nu(x*) - nu(x_t), vectorised over replications."""
    R = len(couplings)
    peak = np.array([0.5 + c.delta for c in couplings])
    regret = np.zeros(R)
    if kind == "uniform-random":
        for start in range(0, T, _CHUNK):
            m = min(_CHUNK, T - start)
            for i, (c, g) in enumerate(zip(couplings, rngs)):
                x = g.random(m)
                g.random((3, m))  # coupled rewards are drawn but unused by the policy
                regret[i] += float(np.sum(peak[i] - c.nu(x)))
        return regret
    if kind == "oracle":
        return regret
    if kind != "fixed-grid-ucb":
        raise ValueError(f"unsupported lower-bound algorithm {kind!r}")
    Ku = ucb_K or max(1, int(round((T / math.log(max(T, 2))) ** (1.0 / 3.0))))
    centers = (2 * np.arange(1, Ku + 1) - 1) / (2.0 * Ku)
    nu_tab = np.stack([c.nu(centers) for c in couplings])  # (R, Ku)
    p_tab = np.stack([c.p(centers) for c in couplings])
    mu_tab = np.stack([c.mu(c.arm_of(centers)) for c in couplings])
    n = np.zeros((R, Ku))
    s = np.zeros((R, Ku))
    rows = np.arange(R)
    for start in range(0, T, _CHUNK):
        m = min(_CHUNK, T - start)
        U = np.stack([g.random((m, 3)) for g in rngs], axis=1)  # (m, R, 3)
        for j in range(m):
            t = start + j + 1
            with np.errstate(divide="ignore", invalid="ignore"):
                idx = s / n + np.sqrt(2 * sigma2 * math.log(t) / n)
            idx[n == 0] = np.inf
            k = np.argmax(idx, axis=1)
            u = U[j]
            r = (u[:, 0] < mu_tab[rows, k]).astype(float)
            ind = (u[:, 2] < 0.5).astype(float)
            rew = np.where(u[:, 1] < p_tab[rows, k], r, ind)
            n[rows, k] += 1
            s[rows, k] += rew
            regret += peak - nu_tab[rows, k]
    return regret


def lower_bound_study(
    M: int,
    algorithms: Sequence[str],
    T_grid,
    replications: int,
    seed: int,
    *,
    c0: float = 0.05,
    L: float = 1.0,
    grid_n: int = 1001,
) -> dict:
    """Regret curves of each algorithm on the bump family with K set per horizon.

    For each T and replication, a* is drawn uniformly from [K] and the bump is
    centred on its cell, so it always fits in [0, 1].
    """
    out = {}
    for alg in algorithms:
        regs = np.empty((replications, len(T_grid)))
        for j, T in enumerate(T_grid):
            K, _ = lower_bound_K(int(T), M, c0, L)
            couplings, rngs = [], []
            for r in range(replications):
                g_inst, g_run = _rngs(seed, int(T), r, 2)
                a_star = int(g_inst.integers(1, K + 1))
                couplings.append(build_coupling(K, a_star, M, L, grid_n))
                rngs.append(g_run)
            regs[:, j] = _lb_batch(alg, couplings, int(T), rngs)
        out[alg] = _curve(np.asarray(T_grid), regs, alg)
    return out


# ---------------------------------------------------------------------------
# export


def write_curves_csv(curves: Sequence[RegretCurve], out_dir) -> list:
    paths = []
    for c in curves:
        p = os.path.join(out_dir, f"{c.label}.csv")
        with open(p, "w") as fh:
            fh.write("T,mean,stderr\n")
            for row in zip(c.horizons, c.mean_regret, c.stderr):
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
        paths.append(p)
    return paths


def write_curves_svg(curves: Sequence[RegretCurve], path, M: Optional[int] = None) -> Optional[str]:
    """Log-log plot with reference slopes for the upper and lower exponents of M."""
    if not curves:
        return None
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "smoothts", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6, 4))
        for c in curves:
            ax.loglog(c.horizons, c.mean_regret, marker="o", label=c.label)
        if M is not None:
            ex = exponents(M)
            H = np.asarray(curves[0].horizons, dtype=float)
            y0 = float(np.max([c.mean_regret[0] for c in curves]))
            for name, s in (("upper", ex.upper), ("lower", ex.lower)):
                ax.loglog(H, y0 * (H / H[0]) ** float(s), ls="--", label=f"slope {s} ({name})")
        ax.set_xlabel("T")
        ax.set_ylabel("regret")
        ax.legend(fontsize=7)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return str(path)


def export(curves: Sequence[RegretCurve], fmt: str, out_dir, M: Optional[int] = None, name: str = "curves") -> list:
    os.makedirs(out_dir, exist_ok=True)
    if not curves:
        return []
    if fmt == "csv":
        return write_curves_csv(curves, out_dir)
    if fmt == "svg":
        return [write_curves_svg(curves, os.path.join(out_dir, f"{name}.svg"), M)]
    raise ValueError(f"unknown format {fmt!r}")


def write_manifest(out_dir, config_dict: dict, files: Sequence[str], started: float) -> str:
    blob = json.dumps(config_dict, sort_keys=True).encode()
    man = {
        "config_hash": hashlib.sha256(blob).hexdigest()[:16],
        "version": f"smoothts-{__version__}",
        "wall_time_s": round(time.time() - started, 3),
        "files": sorted(os.path.basename(f) for f in files),
    }
    p = os.path.join(out_dir, "manifest.json")
    with open(p, "w") as fh:
        json.dump(man, fh, indent=2, sort_keys=True)
    return p
