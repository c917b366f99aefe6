"""Smooth function classes on [0, 1] represented on uniform grids.

A class F(C, M, L) holds functions with values in [0, C] whose derivatives of
order 0..M are all L-Lipschitz. Differences of two members form the class G,
which has range [-C, C] and 2L-Lipschitz derivatives.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from numpy.polynomial import Polynomial
from scipy.interpolate import BSpline, PPoly
from scipy.optimize import linprog, root

from .errors import (
    CoarseGridError,
    ConstructionError,
    EdgeCaseError,
    GridMismatchError,
    OutOfRangeError,
    PriorInfeasibleError,
)

_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class FunctionClassSpec:
    """The triple (C, M, L) plus the number of grid nodes on [0, 1]."""

    C: float = 1.0
    M: int = 0
    L: float = 1.0
    grid_n: int = 1001

    def __post_init__(self):
        if not self.C > 0:
            raise ValueError(f"C must be positive, got {self.C}")
        if not self.L > 0:
            raise ValueError(f"L must be positive, got {self.L}")
        if int(self.M) != self.M or self.M < 0:
            raise ValueError(f"M must be a non-negative integer, got {self.M}")
        if int(self.grid_n) != self.grid_n or self.grid_n < 2:
            raise ValueError(f"grid_n must be an integer >= 2, got {self.grid_n}")
        object.__setattr__(self, "C", float(self.C))
        object.__setattr__(self, "L", float(self.L))
        object.__setattr__(self, "M", int(self.M))
        object.__setattr__(self, "grid_n", int(self.grid_n))

    @property
    def h(self) -> float:
        return 1.0 / (self.grid_n - 1)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.grid_n)

    def difference_class(self) -> "FunctionClassSpec":
        """Spec of G: same grid and order, Lipschitz constant doubled."""
        return replace(self, L=2.0 * self.L)

    def max_spacing(self, eps_min: float) -> float:
        return min(0.01, (eps_min / self.L) ** (1.0 / (self.M + 1)) / 10.0)

    def require_resolution(self, eps_min: float) -> None:
        """Raise CoarseGridError if the grid is too coarse for scale eps_min."""
        limit = self.max_spacing(eps_min)
        if self.h > limit * (1 + 1e-12):
            need = int(math.ceil(1.0 / limit)) + 1
            raise CoarseGridError(
                f"grid spacing {self.h:.3g} exceeds {limit:.3g} for eps={eps_min:g}; "
                f"use grid_n >= {need}"
            )

    def to_dict(self) -> dict:
        return {"C": self.C, "M": self.M, "L": self.L, "grid_n": self.grid_n}

    @classmethod
    def from_dict(cls, d: dict) -> "FunctionClassSpec":
        return cls(C=float(d["C"]), M=int(d["M"]), L=float(d["L"]), grid_n=int(d["grid_n"]))


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Values on the uniform grid of `spec`, linearly interpolated in between."""

    values: np.ndarray
    spec: FunctionClassSpec

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 1 or v.shape[0] != self.spec.grid_n:
            raise ValueError(f"expected {self.spec.grid_n} values, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("grid function values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def x(self) -> np.ndarray:
        return self.spec.x

    def __call__(self, a):
        return np.interp(a, self.spec.x, self.values)

    def __len__(self):
        return self.values.shape[0]

    def argmax(self) -> float:
        """Grid maximiser, lowest index on ties."""
        return float(self.spec.x[int(np.argmax(self.values))])

    def max(self) -> float:
        return float(self.values.max())

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "value"])
            for xi, vi in zip(self.spec.x, self.values):
                w.writerow([f"{xi:.17g}", f"{vi:.17g}"])

    @classmethod
    def from_csv(cls, path, spec: FunctionClassSpec) -> "GridFunction":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 1], spec)

    def spec_json(self) -> str:
        return json.dumps(self.spec.to_dict(), sort_keys=True)


# ---------------------------------------------------------------------------
# membership


@dataclass(frozen=True)
class MembershipReport:
    passed: bool
    range_violation: float  # how far values leave [range_lo, range_hi]; 0 if inside
    max_slope: np.ndarray  # per order m: max |Delta^{m+1} f| / h^{m+1}
    allowed: np.ndarray  # per order m: L + slack(m) + round-off allowance
    slack: np.ndarray  # per order m: 10 m L h
    roundoff: np.ndarray  # per order m: floating-point noise floor of the difference quotient
    violation: np.ndarray  # per order m: max(0, max_slope - allowed)

    @property
    def worst_order(self) -> int:
        return int(np.argmax(self.violation))


def slack(m: int, L: float, h: float) -> float:
    return 10.0 * m * L * h


def verify_membership(
    f: GridFunction,
    spec: Optional[FunctionClassSpec] = None,
    range_lo: Optional[float] = None,
    range_hi: Optional[float] = None,
) -> MembershipReport:
    """Check range and Lipschitz bounds of derivatives 0..M by finite differences.

    The (m+1)-th forward difference divided by h^(m+1) is a B-spline weighted
    average of f^(m+1), so exact samples of a member never exceed L. The slack
    budget absorbs interpolation effects and is reported alongside the result.
    """
    spec = f.spec if spec is None else spec
    if spec.grid_n != f.spec.grid_n:
        raise GridMismatchError("function and spec grids differ")
    lo = 0.0 if range_lo is None else range_lo
    hi = spec.C if range_hi is None else range_hi
    M, L, h = spec.M, spec.L, spec.h
    if spec.grid_n < M + 2:
        raise CoarseGridError(f"need at least {M + 2} grid nodes for order M={M}")
    v = f.values
    scale = max(float(np.max(np.abs(v))), 1e-300)
    tol_v = 1e-12 * max(1.0, abs(lo), abs(hi))
    range_violation = max(0.0, float(lo - v.min()), float(v.max() - hi))
    if range_violation <= tol_v:
        range_violation = 0.0

    max_slope = np.zeros(M + 1)
    allowed = np.zeros(M + 1)
    slacks = np.zeros(M + 1)
    roundoff = np.zeros(M + 1)
    d = v.copy()
    for m in range(M + 1):
        d = np.diff(d)
        q = np.abs(d) / h ** (m + 1)
        max_slope[m] = float(q.max()) if q.size else 0.0
        slacks[m] = slack(m, L, h)
        roundoff[m] = 2.0 ** (m + 1) * 4.0 * _EPS * scale / h ** (m + 1)
        if roundoff[m] > 0.5 * max(slacks[m], 1e-3 * L):
            raise CoarseGridError(
                f"round-off floor {roundoff[m]:.3g} of order-{m + 1} differences exceeds the "
                f"slack budget {slacks[m]:.3g}; grid_n={spec.grid_n} cannot resolve order {m}"
            )
        allowed[m] = (L + slacks[m]) * (1.0 + 1e-9) + roundoff[m]
    violation = np.maximum(0.0, max_slope - allowed)
    passed = range_violation == 0.0 and bool(np.all(violation == 0.0))
    return MembershipReport(passed, range_violation, max_slope, allowed, slacks, roundoff, violation)


def verify_difference_membership(g: GridFunction, spec: Optional[FunctionClassSpec] = None) -> MembershipReport:
    """Membership of g in G: range [-C, C] and 2L-Lipschitz derivatives."""
    spec = g.spec if spec is None else spec
    return verify_membership(g, spec.difference_class(), -spec.C, spec.C)


def difference_function(f: GridFunction, f2: GridFunction) -> GridFunction:
    if f.spec.grid_n != f2.spec.grid_n:
        raise GridMismatchError(f"grid sizes differ: {f.spec.grid_n} vs {f2.spec.grid_n}")
    return GridFunction(f.values - f2.values, f.spec)


# ---------------------------------------------------------------------------
# priors


@dataclass(frozen=True)
class PriorSpec:
    """Random smooth-function generator.

    kind: 'random-trig', 'random-poly' or 'spline-knots'.
    n_terms: number of sine terms (random-trig).
    amplitude_scale: multiplies every sine amplitude cap, in [0, 1].
    degree: polynomial degree (random-poly).
    n_knots: number of interior spline pieces (spline-knots).
    """

    kind: str = "random-trig"
    n_terms: int = 8
    amplitude_scale: float = 1.0
    degree: int = 3
    n_knots: int = 8

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "n_terms": self.n_terms,
            "amplitude_scale": self.amplitude_scale,
            "degree": self.degree,
            "n_knots": self.n_knots,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PriorSpec":
        return cls(**{k: d[k] for k in ("kind", "n_terms", "amplitude_scale", "degree", "n_knots") if k in d})


PRIOR_KINDS = ("random-trig", "random-poly", "spline-knots")


def _check_prior(prior: PriorSpec, spec: FunctionClassSpec) -> None:
    if prior.kind not in PRIOR_KINDS:
        raise PriorInfeasibleError(f"unknown prior kind {prior.kind!r}")
    if prior.kind == "random-trig":
        if prior.n_terms < 1:
            raise PriorInfeasibleError("random-trig needs n_terms >= 1")
        if not 0.0 <= prior.amplitude_scale <= 1.0:
            raise PriorInfeasibleError("amplitude_scale must lie in [0, 1] to respect the amplitude caps")
        # the highest frequency must be resolved by the grid (at least 8 nodes per period)
        if 8 * prior.n_terms > spec.grid_n - 1:
            raise PriorInfeasibleError(
                f"frequency {prior.n_terms} is not resolved by {spec.grid_n} grid nodes"
            )
    elif prior.kind == "random-poly":
        if prior.degree < 0:
            raise PriorInfeasibleError("degree must be non-negative")
    else:
        if prior.n_knots < 1:
            raise PriorInfeasibleError("spline-knots needs n_knots >= 1")


def _trig_batch(prior: PriorSpec, spec: FunctionClassSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    K = prior.n_terms
    k = np.arange(1, K + 1)
    caps = spec.L / ((2 * np.pi * k) ** (spec.M + 1) * K)
    amps = prior.amplitude_scale * caps * rng.uniform(0.0, 1.0, size=(n, K))
    phases = rng.uniform(0.0, 2 * np.pi, size=(n, K))
    x = spec.x
    s = np.zeros((n, spec.grid_n))
    for j in range(K):
        s += amps[:, j : j + 1] * np.sin(2 * np.pi * k[j] * x[None, :] + phases[:, j : j + 1])
    # rescale (never clip) so that C/2 + s stays inside [0, C]
    peak = np.max(np.abs(s), axis=1)
    factor = np.where(peak > spec.C / 2, (spec.C / 2) / np.maximum(peak, 1e-300), 1.0)
    return spec.C / 2 + s * factor[:, None]


def _poly_abs_max(p: Polynomial) -> float:
    """max |p| on [0, 1] from the critical points."""
    cands = [0.0, 1.0]
    dp = p.deriv()
    if dp.degree() >= 1 and np.any(dp.coef != 0):
        r = dp.roots()
        cands += [float(z.real) for z in np.atleast_1d(r) if abs(z.imag) < 1e-12 and 0 < z.real < 1]
    return float(max(abs(p(c)) for c in cands))


def _poly_range(p: Polynomial) -> tuple[float, float]:
    cands = [0.0, 1.0]
    dp = p.deriv()
    if dp.degree() >= 1 and np.any(dp.coef != 0):
        r = dp.roots()
        cands += [float(z.real) for z in np.atleast_1d(r) if abs(z.imag) < 1e-12 and 0 < z.real < 1]
    vals = [float(p(c)) for c in cands]
    return min(vals), max(vals)


def _poly_one(prior: PriorSpec, spec: FunctionClassSpec, rng: np.random.Generator) -> np.ndarray:
    p = Polynomial(rng.standard_normal(prior.degree + 1))
    lo, hi = _poly_range(p)
    scale = np.inf
    if hi - lo > 0:
        scale = 0.98 * spec.C / (hi - lo)
    for m in range(spec.M + 1):
        dmax = _poly_abs_max(p.deriv(m + 1))
        if dmax > 0:
            scale = min(scale, 0.98 * spec.L / dmax)
    if not np.isfinite(scale):
        return np.full(spec.grid_n, spec.C / 2)
    return spec.C / 2 + scale * (p(spec.x) - (hi + lo) / 2)


def _spline_one(prior: PriorSpec, spec: FunctionClassSpec, rng: np.random.Generator) -> np.ndarray:
    k = spec.M + 1
    n_int = prior.n_knots
    t = np.concatenate([np.zeros(k), np.linspace(0.0, 1.0, n_int + 1), np.ones(k)])
    coef = rng.standard_normal(len(t) - k - 1)
    spl = BSpline(t, coef, k)
    # values of a B-spline lie in the hull of its coefficients
    lo, hi = coef.min(), coef.max()
    scale = np.inf
    if hi - lo > 0:
        scale = 0.98 * spec.C / (hi - lo)
    dense = np.linspace(0.0, 1.0, 64 * n_int * (k + 1) + 1)
    for m in range(spec.M + 1):
        dmax = float(np.max(np.abs(spl.derivative(m + 1)(dense))))
        if dmax > 0:
            scale = min(scale, 0.98 * spec.L / dmax)
    if not np.isfinite(scale):
        return np.full(spec.grid_n, spec.C / 2)
    return spec.C / 2 + scale * (spl(spec.x) - (hi + lo) / 2)


def sample_prior_batch(prior: PriorSpec, spec: FunctionClassSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw n prior functions as an (n, grid_n) array."""
    _check_prior(prior, spec)
    if prior.kind == "random-trig":
        return _trig_batch(prior, spec, n, rng)
    one = _poly_one if prior.kind == "random-poly" else _spline_one
    return np.stack([one(prior, spec, rng) for _ in range(n)]) if n else np.zeros((0, spec.grid_n))


def sample_prior_function(prior: PriorSpec, spec: FunctionClassSpec, seed: int) -> GridFunction:
    rng = np.random.default_rng(seed)
    return GridFunction(sample_prior_batch(prior, spec, 1, rng)[0], spec)


# ---------------------------------------------------------------------------
# tent and bump instances


def worst_case_lipschitz_instance(x_star: float, delta: float, L: float, grid_n: int) -> GridFunction:
    """Tent 0.5 + delta - L|x - x_star| clipped below at 0.5."""
    if delta < 0 or delta > 0.5:
        raise OutOfRangeError(f"delta must lie in [0, 0.5], got {delta}")
    if delta / L > min(x_star, 1.0 - x_star) + 1e-15:
        raise OutOfRangeError("tent support leaves [0, 1]")
    spec = FunctionClassSpec(C=1.0, M=0, L=L, grid_n=grid_n)
    x = spec.x
    return GridFunction(0.5 + np.maximum(0.0, delta - L * np.abs(x - x_star)), spec)


@dataclass(frozen=True, eq=False)
class BumpInstance:
    nu: GridFunction
    x_star: float
    delta: float
    half_width: float
    M: int
    L: float
    switch_fractions: tuple

    def value(self, x):
        """Exact bump value (not grid interpolated)."""
        return _bump_eval(np.asarray(x, float), self.x_star, self.half_width, self.M, self.L, self.switch_fractions)


def _bump_residual(r: np.ndarray, M: int) -> np.ndarray:
    k = len(r)
    pts = np.concatenate([[0.0], r, [1.0]])
    sig = (-1.0) ** np.arange(k + 1)
    powers = [M + 1 - j for j in range(1, M + 1, 2)]
    out = []
    for p in powers:
        out.append(np.sum(sig * ((1 - pts[:-1]) ** p - (1 - pts[1:]) ** p)))
    return np.array(out)


@lru_cache(maxsize=None)
def bump_switch_fractions(M: int) -> tuple:
    """Switch points (fractions of the half-width, measured from the edge).

    The (M+1)-th derivative is +L from the edge, flipping sign at each switch;
    the switches make every odd derivative vanish at the centre so the mirror
    image joins smoothly.
    """
    k = (M + 1) // 2
    if k == 0:
        return ()
    guesses = [np.arange(1, k + 1) / (k + 1), (np.arange(1, k + 1) - 0.5) / k]
    for g in guesses:
        sol = root(_bump_residual, g, args=(M,), method="hybr", tol=1e-14)
        r = np.sort(sol.x)
        # judged by the residual: hybr can report stalled progress at machine precision
        if (
            np.all(r > 0)
            and np.all(r < 1)
            and np.all(np.diff(r) > 0)
            and np.max(np.abs(_bump_residual(r, M))) < 1e-10
        ):
            return tuple(float(v) for v in r)
    raise ConstructionError(f"switch-point solve failed for M={M}")


def bump_height_factor(M: int) -> float:
    """H with bump height L w^(M+1) H / (M+1)! for half-width w."""
    r = bump_switch_fractions(M)
    pts = np.concatenate([[0.0], r, [1.0]])
    sig = (-1.0) ** np.arange(len(r) + 1)
    return float(np.sum(sig * ((1 - pts[:-1]) ** (M + 1) - (1 - pts[1:]) ** (M + 1))))


def bump_width_constant(M: int) -> float:
    """c with half-width = c (delta / L)^(1/(M+1))."""
    H = bump_height_factor(M)
    return (math.factorial(M + 1) / H) ** (1.0 / (M + 1))


def _bump_eval(x, x_star, w, M, L, r):
    t = w - np.abs(x - x_star)  # distance from the bump edge
    inside = t > 0
    tt = np.where(inside, t, 0.0)
    g = tt ** (M + 1)
    for i, ri in enumerate(r, start=1):
        g = g + 2.0 * (-1.0) ** i * np.maximum(tt - ri * w, 0.0) ** (M + 1)
    g = L * g / math.factorial(M + 1)
    return 0.5 + np.where(inside, g, 0.0)


def bump_instance(x_star: float, delta: float, M: int, L: float, grid_n: int) -> BumpInstance:
    """Symmetric bump of height delta over the level 0.5, in F(1, M, L)."""
    if not 0 < delta <= 0.5:
        raise OutOfRangeError(f"delta must lie in (0, 0.5], got {delta}")
    r = bump_switch_fractions(M)
    H = bump_height_factor(M)
    if H <= 0:
        raise ConstructionError(f"non-positive height factor for M={M}")
    w = (math.factorial(M + 1) * delta / (L * H)) ** (1.0 / (M + 1))
    if x_star - w < -1e-12 or x_star + w > 1 + 1e-12:
        raise OutOfRangeError(f"bump half-width {w:.4g} does not fit around x*={x_star}")
    # unimodality: g(t) must be non-decreasing from the edge to the centre
    tt = np.linspace(0.0, w, 4001)
    gg = _bump_eval(x_star + w - tt, x_star, w, M, L, r)
    if np.any(np.diff(gg) < -1e-12 * max(delta, 1e-300)):
        raise ConstructionError(f"bump for M={M} is not unimodal")
    spec = FunctionClassSpec(C=1.0, M=M, L=L, grid_n=grid_n)
    nu = GridFunction(_bump_eval(spec.x, x_star, w, M, L, r), spec)
    return BumpInstance(nu, float(x_star), float(delta), float(w), int(M), float(L), r)


# ---------------------------------------------------------------------------
# extremal functions of G


def _core_levels(M: int, L: float, D: float) -> dict:
    """Polynomials (left, right) of every derivative order in u = z - x1.

    The left piece covers [y1, x1] (u in [-D, 0]), the right piece [x1, a]
    (u in [0, D]). The M-th derivative is piecewise linear with slope 2L in
    magnitude; integration constants make odd orders vanish at y1 and a and
    even orders (>= 2, and the value offset) vanish at x1.
    """
    if M % 2 == 0:
        top = [Polynomial([0.0, -2 * L]), Polynomial([0.0, -2 * L])]
    else:
        top = [Polynomial([2 * L * D, 2 * L]), Polynomial([2 * L * D, -2 * L])]
    levels = {M: top}
    cur = top
    for k in range(M - 1, -1, -1):
        left, right = cur[0].integ(), cur[1].integ()
        if k % 2 == 1:
            left = left - left(-D)
            right = right - right(D)
        else:
            left = left - left(0.0)
            right = right - right(0.0)
        cur = [left, right]
        levels[k] = cur
    sign = 1.0 if cur[1](D) > 0 else -1.0
    return {k: [sign * p for p in v] for k, v in levels.items()}


def _tail_lp(
    M: int, state: np.ndarray, kappa: float, lower_caps: np.ndarray, vmax: float, S: float, n: int, margin: float = 0.0
):
    """Optimal-control tail in normalised units.

    s runs outward from y1 in units of Delta, values are in units of eps. The
    (M+1)-th derivative is kappa * w_j on cell j with |w_j| <= 1; the state
    starts at `state` and must end at rest at value 0. The objective is the
    length-weighted excursion outside [-1/3, 1/3] plus a small L1 penalty on
    the value, so far-away points see as little of the tail as possible.
    Value constraints are imposed at knots and cell midpoints.
    """
    K = M + 1
    ds = S / n
    A = np.zeros((K, K))
    for i in range(K):
        for j in range(i, K):
            A[i, j] = ds ** (j - i) / math.factorial(j - i)
    B = np.array([kappa * ds ** (K - i) / math.factorial(K - i) for i in range(K)])
    Z0 = np.zeros((n + 1, K))
    G = np.zeros((n + 1, K, n))
    Z0[0] = state
    for j in range(1, n + 1):
        Z0[j] = A @ Z0[j - 1]
        G[j] = A @ G[j - 1]
        G[j][:, j - 1] += B
    tau = 0.5 * ds
    pw = np.array([tau**k / math.factorial(k) for k in range(K)])
    mid = np.einsum("jkn,k->jn", G[:-1], pw)
    mid[np.arange(n), np.arange(n)] += kappa * tau**K / math.factorial(K)
    V = np.vstack([G[:, 0, :], mid])
    c0 = np.concatenate([Z0[:, 0], Z0[:-1] @ pw])
    m = V.shape[0]
    # lower bound on the value, raised slightly away from the trough to absorb
    # between-sample dips of the piecewise polynomial
    sv = np.concatenate([np.arange(n + 1) * ds, (np.arange(n) + 0.5) * ds])
    lo = state[0] + margin * np.minimum(1.0, sv**2)
    Zm = np.zeros((m, m))
    I = np.eye(m)
    # variables: controls (n), excess above 1/3 (m), excess below -1/3 (m), |v| (m)
    blocks = [
        [-V, Zm, Zm, Zm],
        [V, Zm, Zm, Zm],
        [V, -I, Zm, Zm],
        [-V, Zm, -I, Zm],
        [V, Zm, Zm, -I],
        [-V, Zm, Zm, -I],
    ]
    rhs = [c0 - lo, vmax - c0, 1.0 / 3.0 - c0, 1.0 / 3.0 + c0, -c0, c0]
    zk = np.zeros((n + 1, 3 * m))
    for k in range(1, K):
        Dk = G[:, k, :]
        blocks += [[Dk, zk], [-Dk, zk]]
        rhs += [lower_caps[k] - Z0[:, k], lower_caps[k] + Z0[:, k]]
    A_ub = np.vstack([np.hstack(bl) for bl in blocks])
    b_ub = np.concatenate(rhs)
    w = ds / 2.0
    c = np.concatenate([np.zeros(n), np.full(m, w), np.full(m, w), np.full(m, 1e-2 * w)])
    A_eq = np.hstack([G[n], np.zeros((K, 3 * m))])
    b_eq = -Z0[n]
    bounds = [(-1.0, 1.0)] * n + [(0.0, None)] * (3 * m)
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs")
    if res.status != 0:
        return None
    u = res.x[:n]
    states = np.zeros((n + 1, K))
    states[0] = state
    for j in range(n):
        states[j + 1] = A @ states[j] + B * u[j]
    coef = np.zeros((K + 1, n))
    for k in range(K):
        coef[K - k] = states[:-1, k] / math.factorial(k)
    coef[0] = kappa * u / math.factorial(K)
    return PPoly(coef, np.linspace(0.0, S, n + 1))


_TAIL_LENGTHS = (2.0, 4.0, 8.0, 16.0, 32.0, 64.0)


@lru_cache(maxsize=None)
def _shortest_free_tail(M: int, state: tuple, kappa: float) -> int:
    """Index of the shortest tail length feasible without derivative caps.

    Caps only remove options, so no capped problem is feasible below it.
    """
    free = np.full(M + 1, 1e12)
    for i, S in enumerate(_TAIL_LENGTHS):
        if _tail_lp(M, np.array(state), kappa, free, 1e12, S, 50) is not None:
            return max(0, i - 1)
    return len(_TAIL_LENGTHS) - 1


class ExtremalProfile:
    """Extremal member of G peaked at offset 0, as an exact piecewise polynomial.

    Evaluate with profile(z) where z = x - a. The part within 2*Delta of the
    peak is the polynomial core; beyond it an optimal-control tail brings every
    derivative to rest at 0 while staying above -eps/3.
    """

    def __init__(self, M: int, L: float, eps: float, C: float, peak_factor: float = 1.0 + 1e-9, n_cells: int = 200):
        self.M, self.L, self.eps, self.C = M, L, eps, C
        self.peak = eps * peak_factor
        if self.peak * 1.0000001 >= C:
            raise ConstructionError(f"eps={eps} too close to the range bound C={C}")
        unit = _core_levels(M, 1.0, 1.0)[0][1](1.0)
        if not unit > 0:
            raise ConstructionError(f"degenerate core for M={M}")
        # the core is homogeneous: h(a) - eps/3 = unit * L * Delta^(M+1)
        D = ((self.peak - eps / 3.0) / (unit * L)) ** (1.0 / (M + 1))
        self.delta = D
        levels = _core_levels(M, L, D)
        off = Polynomial([eps / 3.0])
        self.left = [levels[k][0] + (off if k == 0 else 0) for k in range(M + 1)]
        self.right = [levels[k][1] + (off if k == 0 else 0) for k in range(M + 1)]
        for k in range(M + 1):
            a, b = self.left[k](0.0), self.right[k](0.0)
            if abs(a - b) > 1e-9 * max(1.0, abs(b)):
                raise ConstructionError(f"core pieces disagree at x1 for order {k}")
        # outward-facing state at y1 in normalised units
        st = np.array([self.left[k](-D) for k in range(M + 1)])
        self.trough = float(st[0])
        state = np.array([(-1.0) ** k * st[k] * D**k / eps for k in range(M + 1)])
        kappa = 2 * L * D ** (M + 1) / eps
        caps = np.array([0.99 * 2 * L * D**k / eps for k in range(M + 1)])
        vmax = 0.99 * C / eps
        self.tail = None
        start = _shortest_free_tail(M, tuple(state), kappa)
        for S in _TAIL_LENGTHS[start:]:
            for margin in (2e-3, 0.0):
                pp = _tail_lp(M, state, kappa, caps, vmax, S, n_cells, margin)
                if pp is not None:
                    break
            if pp is not None:
                self.tail, self.tail_S = pp, S
                break
        if self.tail is None:
            raise ConstructionError(f"no admissible tail found for M={M}, eps={eps}, L={L}")
        self.tail_length = self.tail_S * D
        self.rest_value = float(eps * self.tail(self.tail_S))

    def derivative(self, z, order: int = 0) -> np.ndarray:
        """order-th derivative of the profile (order <= M + 1, one-sided at knots)."""
        z = np.asarray(z, float)
        D, M = self.delta, self.M
        d = np.abs(z)
        # mirror symmetry: odd derivatives flip sign on the right of the peak
        sgn = np.where(z > 0, (-1.0) ** order, 1.0)
        u = D - d  # coordinate relative to x1 on the left side
        out = np.empty_like(d)
        core_r = d <= D
        core_l = (d > D) & (d <= 2 * D)
        tail = d > 2 * D
        pr = self.right[0].deriv(order) if order else self.right[0]
        pl = self.left[0].deriv(order) if order else self.left[0]
        out[core_r] = pr(u[core_r])
        out[core_l] = pl(u[core_l])
        s = np.minimum((d[tail] - 2 * D) / D, self.tail_S)
        tv = self.tail.derivative(order)(s) if order else self.tail(s)
        if order:
            tv = np.where((d[tail] - 2 * D) / D >= self.tail_S, 0.0, tv)
        out[tail] = self.eps * tv * (-1.0) ** order / D**order
        return sgn * out

    def __call__(self, z) -> np.ndarray:
        return self.derivative(z, 0)


@lru_cache(maxsize=64)
def extremal_profile(M: int, L: float, eps: float, C: float) -> ExtremalProfile:
    return ExtremalProfile(M, L, eps, C)


def interiority_margin(spec: FunctionClassSpec, eps: float) -> float:
    """Required min(a, 1 - a) for the extremal construction at peak a."""
    if spec.M == 0:
        return 0.0
    if spec.M == 1:
        return math.sqrt(2 * eps / (3 * spec.L))
    return 4.0 * (eps / spec.L) ** (1.0 / (spec.M + 1))


@dataclass(frozen=True, eq=False)
class ExtremalFunction:
    h: GridFunction
    a: float
    eps: float
    delta_M: float
    x1: float
    x2: float
    y1: float
    y2: float
    deriv_coeffs: dict = field(repr=False)
    profile: Callable = field(repr=False)


def extremal_function(a: float, spec: FunctionClassSpec, eps: float) -> ExtremalFunction:
    """Member of G exceeding eps at a while leaving [-eps/3, eps/3] as fast as possible."""
    if not 0.0 <= a <= 1.0:
        raise EdgeCaseError(f"a={a} outside [0, 1]")
    need = interiority_margin(spec, eps)
    if min(a, 1 - a) <= need and spec.M > 0:
        raise EdgeCaseError(f"min(a, 1-a)={min(a, 1 - a):.4g} must exceed {need:.4g} for M={spec.M}")
    prof = extremal_profile(spec.M, float(spec.L), float(eps), float(spec.C))
    D = prof.delta
    h = GridFunction(prof(spec.x - a), spec)
    coeffs = {
        "left": [p.coef.copy() for p in prof.left],
        "right": [p.coef.copy() for p in prof.right],
        "tail_breaks": prof.tail.x.copy(),
        "tail": prof.tail.c.copy(),
    }
    return ExtremalFunction(h, float(a), float(eps), D, a - D, a + D, a - 2 * D, a + 2 * D, coeffs, prof)
