"""Particle Thompson sampling, least-squares confidence sets and baseline policies."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .bounds import BoundParams, ball_width, check_lambda
from .errors import DegenerateEnsembleError, GridMismatchError, PreconditionError
from .funclass import FunctionClassSpec, GridFunction, PriorSpec, sample_prior_batch
from .noise import NoiseModel, sample_noise_array


@dataclass
class History:
    actions: list = field(default_factory=list)
    rewards: list = field(default_factory=list)

    def append(self, a: float, r: float) -> None:
        self.actions.append(float(a))
        self.rewards.append(float(r))

    def __len__(self) -> int:
        return len(self.actions)


def _interp_weights(spec: FunctionClassSpec, a: float) -> tuple[int, int, float]:
    """Grid neighbours (i, j) of a and the weight of j."""
    if not 0.0 <= a <= 1.0:
        raise ValueError(f"action {a} outside [0, 1]")
    pos = a * (spec.grid_n - 1)
    i = min(int(math.floor(pos)), spec.grid_n - 1)
    w = pos - i
    if w <= 1e-12:
        return i, i, 0.0
    return i, i + 1, w


class ParticleEnsemble:
    """Weighted i.i.d. prior draws; the weights form a working posterior.

    The value matrix is shared read-only between successive ensembles, only
    the log weights are copied on update.
    """

    def __init__(self, values: np.ndarray, spec: FunctionClassSpec, log_weights=None, likelihood_sigma2: float = 1.0):
        values = np.asarray(values, dtype=float)
        if values.ndim != 2 or values.shape[1] != spec.grid_n:
            raise GridMismatchError(f"values shape {values.shape} does not match grid_n={spec.grid_n}")
        if not likelihood_sigma2 > 0:
            raise ValueError("likelihood_sigma2 must be positive")
        if values.flags.writeable:
            values = values.copy()
            values.setflags(write=False)
        self.values = values
        self.spec = spec
        n = values.shape[0]
        lw = np.zeros(n) if log_weights is None else np.array(log_weights, dtype=float)
        if lw.shape != (n,):
            raise ValueError("log_weights length must equal the particle count")
        self.log_weights = lw
        self.likelihood_sigma2 = float(likelihood_sigma2)
        self._argmax = np.argmax(values, axis=1)
        self._normalize()

    @classmethod
    def from_prior(
        cls,
        prior: PriorSpec,
        spec: FunctionClassSpec,
        n_particles: int,
        rng: np.random.Generator,
        likelihood_sigma2: float = 1.0,
    ) -> "ParticleEnsemble":
        return cls(sample_prior_batch(prior, spec, n_particles, rng), spec, None, likelihood_sigma2)

    def _normalize(self) -> None:
        lw = self.log_weights
        m = np.max(lw)
        if not np.isfinite(m):
            raise DegenerateEnsembleError("all particle weights are zero")
        lw -= m
        s = np.sum(np.exp(lw))
        lw -= math.log(s)

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def particles(self) -> list:
        return [GridFunction(v, self.spec) for v in self.values]

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    def ess(self) -> float:
        w = self.weights
        return float(1.0 / np.sum(w * w))

    def values_at(self, a: float) -> np.ndarray:
        i, j, w = _interp_weights(self.spec, a)
        if j == i:
            return self.values[:, i]
        return (1 - w) * self.values[:, i] + w * self.values[:, j]

    def argmax_action(self, k: int) -> float:
        return float(self.spec.x[self._argmax[k]])

    def resample(self, rng: np.random.Generator) -> "ParticleEnsemble":
        """Systematic resampling to equal weights."""
        n = len(self)
        pos = (rng.random() + np.arange(n)) / n
        cdf = np.cumsum(self.weights)
        cdf[-1] = 1.0
        idx = np.searchsorted(cdf, pos, side="right")
        idx = np.minimum(idx, n - 1)
        return ParticleEnsemble(self.values[idx], self.spec, None, self.likelihood_sigma2)


def ts_select_action(ensemble: ParticleEnsemble, rng: np.random.Generator) -> float:
    """Draw a particle in proportion to its weight and return its grid maximiser."""
    w = ensemble.weights
    total = float(np.sum(w))
    if not total > 0 or not np.isfinite(total):
        raise DegenerateEnsembleError("ensemble weights sum to zero")
    cdf = np.cumsum(w)
    k = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return ensemble.argmax_action(min(k, len(ensemble) - 1))


def update_posterior(ensemble: ParticleEnsemble, a: float, R: float) -> ParticleEnsemble:
    """Multiply each weight by the Gaussian working likelihood of (a, R)."""
    v = ensemble.values_at(a)
    lw = ensemble.log_weights - (v - R) ** 2 / (2.0 * ensemble.likelihood_sigma2)
    out = ParticleEnsemble.__new__(ParticleEnsemble)
    out.values, out.spec, out.likelihood_sigma2 = ensemble.values, ensemble.spec, ensemble.likelihood_sigma2
    out._argmax = ensemble._argmax
    out.log_weights = lw
    out._normalize()
    return out


def _as_matrix(candidates) -> tuple[np.ndarray, FunctionClassSpec]:
    if isinstance(candidates, ParticleEnsemble):
        return candidates.values, candidates.spec
    cands = list(candidates)
    if not cands:
        raise ValueError("candidate list is empty")
    spec = cands[0].spec
    for c in cands:
        if c.spec != spec:
            raise GridMismatchError("candidates live on different grids")
    return np.vstack([c.values for c in cands]), spec


def least_squares_estimate(candidates, history: History) -> GridFunction:
    """Candidate with the smallest squared error on the history, lowest index on ties."""
    V, spec = _as_matrix(candidates)
    loss = np.zeros(V.shape[0])
    for a, r in zip(history.actions, history.rewards):
        i, j, w = _interp_weights(spec, a)
        v = V[:, i] if i == j else (1 - w) * V[:, i] + w * V[:, j]
        loss += (v - r) ** 2
    return GridFunction(V[int(np.argmin(loss))], spec)


@dataclass
class ConfidenceSet:
    center: GridFunction
    beta: float
    history_actions: Sequence[float] = ()

    def __post_init__(self):
        if not self.beta >= 0:
            raise ValueError("beta must be non-negative")


def confidence_set_membership(f: GridFunction, cset: ConfidenceSet) -> bool:
    if f.spec != cset.center.spec:
        raise GridMismatchError("function and confidence set live on different grids")
    if math.isinf(cset.beta):
        return True
    acts = np.asarray(cset.history_actions, dtype=float)
    if acts.size == 0:
        return True
    d = cset.center(acts) - f(acts)
    return bool(float(np.sum(d * d)) <= cset.beta)


class Width(NamedTuple):
    width: float
    empty: bool


def set_width(cset: ConfidenceSet, members: Sequence[GridFunction], a: float) -> Width:
    """max - min of f(a) over members (ensemble-relative width)."""
    if len(members) == 0:
        return Width(0.0, True)
    vals = np.array([float(f(a)) for f in members])
    return Width(float(vals.max() - vals.min()), False)


class TSAgent:
    """Thompson sampling over a particle ensemble with systematic resampling."""

    def __init__(self, ensemble: ParticleEnsemble, resample_threshold: float = 0.5):
        self.ensemble = ensemble
        self.resample_threshold = resample_threshold

    def select(self, rng: np.random.Generator) -> float:
        return ts_select_action(self.ensemble, rng)

    def update(self, a: float, R: float, rng: Optional[np.random.Generator] = None) -> None:
        ens = update_posterior(self.ensemble, a, R)
        if rng is not None and ens.ess() < self.resample_threshold * len(ens):
            ens = ens.resample(rng)
        self.ensemble = ens


class OracleAgent:
    """Plays the grid maximiser of the true reward function."""

    def __init__(self, f0: GridFunction):
        self.a = f0.argmax()

    def select(self, rng) -> float:
        return self.a

    def update(self, a, R, rng=None) -> None:
        pass


class UniformRandom:
    def select(self, rng: np.random.Generator) -> float:
        return float(rng.random())

    def update(self, a, R, rng=None) -> None:
        pass


class FixedGridUCB:
    """UCB over K arms at cell centres (2k - 1) / (2K)."""

    def __init__(self, K: int, sigma2: float = 1.0):
        if K < 1:
            raise ValueError("K must be positive")
        self.K = K
        self.sigma2 = sigma2
        self.centers = (2 * np.arange(1, K + 1) - 1) / (2.0 * K)
        self.n = np.zeros(K)
        self.s = np.zeros(K)
        self.t = 0

    def index(self) -> np.ndarray:
        t = self.t + 1
        with np.errstate(divide="ignore", invalid="ignore"):
            idx = self.s / self.n + np.sqrt(2 * self.sigma2 * math.log(t) / self.n)
        return np.where(self.n == 0, np.inf, idx)

    def select(self, rng=None) -> float:
        return float(self.centers[int(np.argmax(self.index()))])

    def update(self, a: float, R: float, rng=None) -> None:
        k = int(np.argmin(np.abs(self.centers - a)))
        self.n[k] += 1
        self.s[k] += R
        self.t += 1


class Zooming:
    """Adaptive discretisation: activate an arm wherever no active ball covers."""

    def __init__(self, T: int, L: float = 1.0, n_candidates: int = 1001):
        self.T, self.L = T, L
        self.cand = np.linspace(0.0, 1.0, n_candidates)
        self.arms: list[float] = []
        self.n: list[int] = []
        self.s: list[float] = []

    def radius(self) -> np.ndarray:
        n = np.asarray(self.n, dtype=float)
        with np.errstate(divide="ignore"):
            return np.where(n == 0, np.inf, np.sqrt(8 * math.log(max(self.T, 2)) / np.maximum(n, 1)))

    def _activate(self) -> None:
        r = self.radius()
        covered = np.zeros(self.cand.shape[0], bool)
        for y, ry in zip(self.arms, r):
            if np.isinf(ry):
                return
            covered |= np.abs(self.cand - y) <= ry / self.L
        free = np.flatnonzero(~covered)
        if free.size:
            x = float(self.cand[free[0]])
            self.arms.append(x)
            self.n.append(0)
            self.s.append(0.0)

    def select(self, rng=None) -> float:
        self._activate()
        n = np.asarray(self.n, dtype=float)
        r = self.radius()
        with np.errstate(divide="ignore", invalid="ignore"):
            idx = np.where(n == 0, np.inf, np.asarray(self.s) / np.maximum(n, 1) + 2 * r)
        return self.arms[int(np.argmax(idx))]

    def update(self, a: float, R: float, rng=None) -> None:
        k = self.arms.index(a) if a in self.arms else int(np.argmin(np.abs(np.asarray(self.arms) - a)))
        self.n[k] += 1
        self.s[k] += R


BASELINES = ("fixed-grid-ucb", "zooming", "uniform-random")


def make_baseline(kind: str, *, T: int, K: Optional[int] = None, L: float = 1.0, sigma2: float = 1.0):
    if kind == "fixed-grid-ucb":
        K = K if K is not None else max(1, int(round((T / math.log(max(T, 2))) ** (1 / 3))))
        return FixedGridUCB(K, sigma2)
    if kind == "zooming":
        return Zooming(T, L)
    if kind == "uniform-random":
        return UniformRandom()
    raise ValueError(f"unknown baseline {kind!r}")


def baseline_select(kind: str, state, rng: np.random.Generator) -> float:
    """Next action of a baseline whose state was built by make_baseline(kind)."""
    if kind not in BASELINES:
        raise ValueError(f"unknown baseline {kind!r}")
    return state.select(rng)


# ---------------------------------------------------------------------------
# concentration checks


def martingale_check(
    f: GridFunction,
    f0: GridFunction,
    actions,
    noise: NoiseModel,
    lam: float,
    delta: float,
    runs: int,
    seed: int,
    C: float = 1.0,
) -> float:
    """Fraction of runs where, for every n, the squared loss of f exceeds that of f0
    by at least (1 - 2 lam sigma2) sum (f - f0)^2 - log(1/delta)/lam."""
    if not lam > 0:
        raise PreconditionError("lambda must be positive")
    check_lambda(lam, C, noise.sigma2, noise.b)
    acts = np.asarray(actions, dtype=float)
    fa, f0a = f(acts), f0(acts)
    rng = np.random.default_rng(seed)
    eta = sample_noise_array(noise, rng, (runs, acts.size))
    R = f0a + eta
    Lf = np.cumsum((fa - R) ** 2, axis=1)
    L0 = np.cumsum((f0a - R) ** 2, axis=1)
    gap = (1 - 2 * lam * noise.sigma2) * np.cumsum((fa - f0a) ** 2)
    ok = np.all(Lf >= L0 + gap - math.log(1 / delta) / lam - 1e-9, axis=1)
    return float(np.mean(ok))


@dataclass
class CoverageRun:
    """Per-round quantities of one TS run tracked against its confidence sets."""

    actions: np.ndarray
    instant_regret: np.ndarray
    widths: np.ndarray
    betas: np.ndarray
    covered: bool


def ts_confidence_run(
    ensemble: ParticleEnsemble,
    f0_index: int,
    noise: NoiseModel,
    T: int,
    params: BoundParams,
    rng: np.random.Generator,
) -> CoverageRun:
    """Run TS with f0 = particle f0_index and track the least-squares sets.

    The candidate class is the particle set, so log N = log(#particles). The
    set width at A_t is taken over particles inside F_t.
    """
    V = ensemble.values
    spec = ensemble.spec
    N = V.shape[0]
    f0 = V[f0_index]
    fmax = f0.max()
    logN = math.log(N)
    loss = np.zeros(N)
    counts = np.zeros(spec.grid_n)
    dist = np.zeros(N)  # sum over history of (f_i - f_hat)^2
    ls = 0
    acts = np.empty(T)
    reg = np.empty(T)
    widths = np.empty(T)
    betas = np.empty(T)
    covered = True
    eta = sample_noise_array(noise, rng, T)
    ens = ensemble
    for t in range(T):
        beta = ball_width(t, logN, params, noise.sigma2, noise.b)
        inside = dist <= beta
        if not inside[f0_index]:
            covered = False
        a = ts_select_action(ens, rng)
        k = int(round(a * (spec.grid_n - 1)))
        col = V[:, k]
        widths[t] = float(col[inside].max() - col[inside].min()) if inside.any() else 0.0
        betas[t] = beta
        acts[t] = a
        reg[t] = fmax - f0[k]
        R = f0[k] + eta[t]
        ens = update_posterior(ens, a, R)
        loss += (col - R) ** 2
        counts[k] += 1
        new_ls = int(np.argmin(loss))
        if new_ls != ls:
            ls = new_ls
            dist = ((V - V[ls]) ** 2) @ counts
        else:
            dist += (col - col[ls]) ** 2
    return CoverageRun(acts, reg, widths, betas, covered)


def empirical_coverage(
    prior: PriorSpec,
    spec: FunctionClassSpec,
    noise: NoiseModel,
    T: int,
    delta: float,
    alpha: float,
    lam: float,
    runs: int,
    seed: int,
    n_particles: int = 256,
) -> float:
    """Fraction of TS runs whose f0 stays in every least-squares set F_n, n <= T.

    f0 is drawn from the particle set itself, so TS here is exact posterior
    sampling for the discrete prior with the Gaussian working likelihood.
    """
    check_lambda(lam, spec.C, noise.sigma2, noise.b)
    if not delta > 0 or not alpha >= 0:
        raise PreconditionError("delta must be positive and alpha non-negative")
    params = BoundParams(alpha=alpha, delta=delta, lam=lam, C=spec.C)
    ss = np.random.SeedSequence(seed)
    hits = 0
    for child in ss.spawn(runs):
        rng = np.random.default_rng(child)
        ens = ParticleEnsemble.from_prior(prior, spec, n_particles, rng, likelihood_sigma2=max(noise.sigma2, 1e-6))
        j = int(rng.integers(n_particles))
        run = ts_confidence_run(ens, j, noise, T, params, rng)
        hits += run.covered
    return hits / runs
