"""Eluder-dimension tools: dependence tests, greedy witnesses, region sizes."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import EdgeCaseError
from .funclass import (
    FunctionClassSpec,
    GridFunction,
    PriorSpec,
    extremal_function,
    extremal_profile,
    interiority_margin,
    sample_prior_batch,
)

MODES = ("extremal", "counting", "ensemble")


def region_size_B(g: GridFunction, eps: float) -> float:
    """Trapezoid-rule measure of {x : g(x)^2 > eps^2 / 9}."""
    ind = (np.asarray(g.values) ** 2 > eps * eps / 9.0).astype(float)
    return float(np.trapezoid(ind, g.x))


def min_region_B_star(a: float, spec: FunctionClassSpec, eps: float) -> float:
    """B of the extremal difference function peaked at a."""
    return region_size_B(extremal_function(a, spec, eps).h, eps)


def random_search_B(
    a: float, spec: FunctionClassSpec, eps: float, n: int, rng: np.random.Generator, prior: Optional[PriorSpec] = None
) -> float:
    """Smallest B among random members of G rescaled to exceed eps at a.

    Candidates are differences of prior draws, shifted and scaled so that
    g(a) = eps (1 + 1e-6); scaling down a G member keeps it in G, so only
    draws whose required scale is at most 1 are kept. Returns inf if none.
    """
    prior = prior or PriorSpec("random-trig")
    F = sample_prior_batch(prior, spec, 2 * n, rng)
    G = F[:n] - F[n:]
    ga = np.array([np.interp(a, spec.x, g) for g in G])
    target = eps * (1 + 1e-6)
    ok = np.abs(ga) > 1e-12
    scale = np.where(ok, target / np.where(ok, ga, 1.0), np.inf)
    keep = np.abs(scale) <= 1.0
    if not np.any(keep):
        return math.inf
    Gs = G[keep] * scale[keep, None]
    ind = (Gs**2 > eps * eps / 9.0).astype(float)
    return float(np.min(np.trapezoid(ind, spec.x, axis=1)))


def width_w_k(actions: Sequence[float], eps_prime: float, g_candidates) -> float:
    """max g(a_k) over candidates with sum_{i<k} g(a_i)^2 <= eps_prime^2; -inf if none."""
    acts = np.asarray(actions, dtype=float)
    if acts.size == 0:
        raise ValueError("need at least one action")
    best = -math.inf
    for g in g_candidates:
        vals = np.asarray(g(acts), dtype=float)
        if np.sum(vals[:-1] ** 2) <= eps_prime**2:
            best = max(best, float(vals[-1]))
    return best


def _profile_sq_table(spec: FunctionClassSpec, eps: float) -> np.ndarray:
    """Squared extremal profile at grid offsets -(n-1)..(n-1)."""
    prof = extremal_profile(spec.M, float(spec.L), float(eps), float(spec.C))
    n = spec.grid_n
    off = np.arange(-(n - 1), n) * spec.h
    return prof(off) ** 2


def _difference_ensemble(spec: FunctionClassSpec, n_pairs: int, rng: np.random.Generator) -> np.ndarray:
    F = sample_prior_batch(PriorSpec("random-trig"), spec, 2 * n_pairs, rng)
    G = F[:n_pairs] - F[n_pairs:]
    return np.vstack([G, -G])


def _admissible(spec: FunctionClassSpec, eps: float) -> np.ndarray:
    x = spec.x
    need = interiority_margin(spec, eps)
    if spec.M == 0:
        return np.ones(spec.grid_n, bool)
    return np.minimum(x, 1 - x) > need


def is_eps_dependent(
    a: float,
    prior_actions: Sequence[float],
    eps: float,
    spec: FunctionClassSpec,
    mode: str = "extremal",
    ensemble: Optional[np.ndarray] = None,
) -> bool:
    """Whether a is eps-dependent on prior_actions.

    extremal: a is independent iff the extremal function peaked at a keeps
    its squared sum over prior_actions within eps^2 (an exact certificate).
    counting: independent iff fewer than nine prior actions fall inside the
    region where that function exceeds eps/3 in absolute value.
    ensemble: independent iff some row of `ensemble` (grid values of G
    members) exceeds eps at a while satisfying the constraint.
    """
    prior = np.asarray(prior_actions, dtype=float)
    if mode == "ensemble":
        if ensemble is None:
            ensemble = _difference_ensemble(spec, 512, np.random.default_rng(0))
        rows = [GridFunction(r, spec) for r in np.atleast_2d(ensemble)]
        return not width_w_k(np.append(prior, a), eps, rows) > eps
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    prof = extremal_profile(spec.M, float(spec.L), float(eps), float(spec.C))
    if spec.M > 0 and min(a, 1 - a) <= interiority_margin(spec, eps):
        raise EdgeCaseError(f"a={a} too close to the boundary for M={spec.M}")
    vals = prof(prior - a) if prior.size else np.zeros(0)
    if mode == "extremal":
        return not float(np.sum(vals**2)) <= eps * eps
    return not int(np.sum(vals**2 > eps * eps / 9.0)) < 9


@dataclass
class WitnessSequence:
    actions: np.ndarray
    eps_prime: float
    certificates: list = field(repr=False)
    mode: str = "extremal"
    restarts: int = 1

    @property
    def length(self) -> int:
        return int(len(self.actions))

    def check(self) -> bool:
        """Re-verify both defining inequalities of every certificate."""
        e2 = self.eps_prime**2
        for k, g in enumerate(self.certificates):
            v = np.asarray(g(self.actions[: k + 1]), dtype=float)
            if not v[-1] > self.eps_prime:
                return False
            if not float(np.sum(v[:-1] ** 2)) <= e2:
                return False
        return True

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("k,action\n")
            for k, a in enumerate(self.actions, start=1):
                fh.write(f"{k},{a:.17g}\n")
        side = str(path).rsplit(".", 1)[0] + ".json"
        with open(side, "w") as fh:
            json.dump(
                {"eps": self.eps_prime, "mode": self.mode, "length": self.length, "restarts": self.restarts},
                fh,
                sort_keys=True,
            )


def _greedy_extremal(spec, eps, order, sq, admissible, max_len, count_rule):
    n = spec.grid_n
    S = np.zeros(n)  # running sum of squared profile values per candidate
    C = np.zeros(n, dtype=int)  # running count of prior actions inside the region
    chosen = []
    thr = eps * eps / 9.0
    for c in order:
        if len(chosen) >= max_len:
            break
        if not admissible[c]:
            continue
        ok = C[c] < 9 if count_rule else S[c] <= eps * eps
        if ok:
            chosen.append(int(c))
            # candidate j sees the new action at offset c - j
            row = sq[(n - 1) + c - np.arange(n)]
            S += row
            C += row > thr
    return chosen


def _greedy_ensemble(spec, eps, order, G, max_len):
    sums = np.zeros(G.shape[0])
    chosen, certs = [], []
    for c in order:
        if len(chosen) >= max_len:
            break
        feas = sums <= eps * eps
        if not np.any(feas):
            break
        col = G[:, c]
        masked = np.where(feas, col, -np.inf)
        j = int(np.argmax(masked))
        if masked[j] > eps:
            chosen.append(int(c))
            certs.append(j)
            sums += col**2
    return chosen, certs


def greedy_eluder_witness(
    spec: FunctionClassSpec,
    eps: float,
    mode: str = "extremal",
    max_len: int = 100000,
    rng: np.random.Generator | int = 0,
    restarts: int = 8,
    ensemble: Optional[np.ndarray] = None,
) -> WitnessSequence:
    """Longest of `restarts` greedy sequences of eps-independent grid actions.

    Each restart scans the grid once in a random order and keeps every action
    independent of those already kept; since the constraint sums only grow,
    a single pass reaches a maximal sequence for that order.
    """
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    x = spec.x
    best: list = []
    best_certs: list = []
    if mode == "ensemble":
        G = _difference_ensemble(spec, 512, rng) if ensemble is None else np.atleast_2d(np.asarray(ensemble, float))
        for _ in range(restarts):
            order = rng.permutation(spec.grid_n)
            chosen, certs = _greedy_ensemble(spec, eps, order, G, max_len)
            if len(chosen) > len(best):
                best, best_certs = chosen, certs
        certificates = [GridFunction(G[j], spec) for j in best_certs]
    elif mode in ("extremal", "counting"):
        sq = _profile_sq_table(spec, eps)
        adm = _admissible(spec, eps)
        for _ in range(restarts):
            order = rng.permutation(spec.grid_n)
            chosen = _greedy_extremal(spec, eps, order, sq, adm, max_len, mode == "counting")
            if len(chosen) > len(best):
                best = chosen
        prof = extremal_profile(spec.M, float(spec.L), float(eps), float(spec.C))
        certificates = [GridFunction(prof(x - x[c]), spec) for c in best]
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return WitnessSequence(x[np.array(best, dtype=int)], float(eps), certificates, mode, restarts)


def eluder_upper_bound(spec: FunctionClassSpec, eps: float) -> float:
    """Counting bound 9 / B* + 2 with B* taken at the interior point 0.5."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    return 9.0 / min_region_B_star(0.5, spec, eps) + 2.0


def linear_difference_ensemble(spec: FunctionClassSpec, S: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """Grid values of theta . (1, x) with |theta| <= 2S, the differences of a d=2 linear class."""
    r = 2 * S * np.sqrt(rng.uniform(0, 1, n))
    phi = rng.uniform(0, 2 * np.pi, n)
    th = np.stack([r * np.cos(phi), r * np.sin(phi)], axis=1)
    feats = np.stack([np.ones(spec.grid_n), spec.x], axis=0) / math.sqrt(2.0)
    return th @ feats


def finite_difference_ensemble(spec: FunctionClassSpec, c: float) -> np.ndarray:
    """G for the two-function class {0, c}: the constants 0, c and -c."""
    return np.vstack([np.zeros(spec.grid_n), np.full(spec.grid_n, c), np.full(spec.grid_n, -c)])
