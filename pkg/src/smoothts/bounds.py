"""Closed-form regret-bound ingredients: confidence radius, covers, exponents."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np

from .errors import PreconditionError


@dataclass(frozen=True)
class BoundParams:
    """alpha: cover radius; delta: failure probability; lam: MGF parameter;
    kappa_value: discretisation level of the eluder term; C: range bound."""

    alpha: float
    delta: float
    lam: float
    kappa_value: float = 0.0
    covering_constant: float = 1.0
    C: float = 1.0


@dataclass(frozen=True)
class ParametricClassParams:
    d: int = 1
    S: float = 1.0
    gamma: float = 1.0
    h_lo: float = 1.0
    h_hi: float = 1.0
    r: float = 1.0
    cardinality: int = 1

    def __post_init__(self):
        if self.h_lo > self.h_hi:
            raise ValueError("h_lo must not exceed h_hi")
        if self.r < 1:
            raise ValueError("slope ratio r must be >= 1")


def check_lambda(lam: float, C: float, sigma2: float, b: float, *, positive: bool = True) -> None:
    if positive and not lam > 0:
        raise PreconditionError(f"lambda must be positive, got {lam}")
    if b > 0 and abs(lam) > 1.0 / (2.0 * C * b) * (1 + 1e-12):
        raise PreconditionError(f"|lambda|={abs(lam):g} exceeds 1/(2Cb)={1 / (2 * C * b):g}")
    if not 1.0 - 2.0 * lam * sigma2 > 0:
        raise PreconditionError(f"1 - 2 lambda sigma2 = {1 - 2 * lam * sigma2:g} must be positive")


def default_lambda(C: float, sigma2: float, b: float) -> float:
    """Largest admissible lambda that keeps 1 - 2 lambda sigma2 >= 1/2."""
    lam = 1.0 / (4.0 * sigma2)
    if b > 0:
        lam = min(lam, 1.0 / (2.0 * C * b))
    return lam


def log_n0(delta: float, sigma2: float, b: float) -> float:
    """log of the branch point n0 = sqrt(delta/4 * exp(sigma2 / (2 b^2)))."""
    if b == 0:
        return math.inf
    return 0.5 * (math.log(delta / 4.0) + sigma2 / (2.0 * b * b))


def _noise_sums(n: int, delta: float, sigma2: float, b: float) -> float:
    """Sum over i <= n of the per-step deviation terms, split at n0.

    Indices up to n0 use the Gaussian branch sqrt(2 sigma2 log(4 i^2/delta)),
    later ones the exponential branch 2 b log(4 i^2/delta).
    """
    if n <= 0:
        return 0.0
    i = np.arange(1, n + 1, dtype=float)
    logs = np.log(4.0 * i * i / delta)
    ln0 = log_n0(delta, sigma2, b)
    k = n if ln0 >= math.log(n) else max(0, min(n, math.floor(math.exp(ln0))))
    total = float(np.sum(np.sqrt(2.0 * sigma2 * logs[:k])))
    if k < n:
        total += float(np.sum(2.0 * b * logs[k:]))
    return total


def discretization_error_bound(
    n: int, alpha: float, C: float, lam: float, sigma2: float, b: float, delta: float
) -> float:
    check_lambda(lam, C, sigma2, b, positive=False)
    if alpha == 0:
        return 0.0
    return 2 * alpha * n * (4 * C + alpha) * (1 - lam * sigma2) + 2 * alpha * _noise_sums(n, delta, sigma2, b)


def ball_width(n: int, log_cover: float, params: BoundParams, sigma2: float, b: float) -> float:
    """Confidence radius beta*_n for a class whose alpha-cover has log size log_cover.

    With alpha = 0 the limit log(N/delta) / (lam (1 - 2 lam sigma2)) is returned.
    """
    check_lambda(params.lam, params.C, sigma2, b)
    if n < 0:
        raise PreconditionError("n must be non-negative")
    if not 0 < params.delta < 1:
        raise PreconditionError("delta must lie in (0, 1)")
    lam, alpha, C, delta = params.lam, params.alpha, params.C, params.delta
    if alpha < 0:
        raise PreconditionError("alpha must be non-negative")
    denom = 1.0 - 2.0 * lam * sigma2
    cover_term = (log_cover + math.log(1.0 / delta)) / (lam * denom)
    if alpha == 0:
        return cover_term
    rest = n * (4 * C + alpha) * (1 - lam * sigma2) + _noise_sums(n, delta, sigma2, b)
    return cover_term + 2 * alpha / denom * rest


def covering_number_log(
    alpha: float,
    kind: str,
    covering_constant: float = 1.0,
    *,
    M: int = 0,
    cardinality: int = 1,
    d: int = 1,
) -> float:
    """log N(alpha) for kind in {'smooth', 'finite', 'linear'}."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    if kind == "smooth":
        return covering_constant * alpha ** (-1.0 / (M + 1))
    if kind == "finite":
        return math.log(cardinality)
    if kind == "linear":
        return max(0.0, covering_constant * d * math.log(1.0 / alpha))
    raise ValueError(f"unknown class kind {kind!r}")


def general_regret_bound(T: float, dim_value: float, beta_star_T: float, kappa_T: float, C: float) -> float:
    for name, v in (("T", T), ("dim", dim_value), ("beta", beta_star_T), ("kappa", kappa_T), ("C", C)):
        if v < 0:
            raise ValueError(f"{name} must be non-negative")
    return T * kappa_T + (dim_value + 1) * C + 4.0 * math.sqrt(dim_value * beta_star_T * T)


@dataclass(frozen=True)
class Exponents:
    upper: Fraction
    lower: Fraction
    kappa_exp: Fraction
    alpha_exp: Fraction

    @property
    def gap(self) -> Fraction:
        return self.upper - self.lower


def exponents(M: int) -> Exponents:
    if M < 0:
        raise ValueError("M must be non-negative")
    M = int(M)
    upper = Fraction(2 * M * M + 11 * M + 10, 4 * M * M + 14 * M + 12)
    lower = Fraction(M + 2, 2 * M + 3)
    kappa = -Fraction(1, 2) * Fraction(2 * M * M + 3 * M + 2, 2 * M * M + 7 * M + 6)
    alpha = -Fraction(M + 1, M + 2)
    return Exponents(upper, lower, kappa, alpha)


def gap_exponent(M: int) -> Fraction:
    return Fraction(3 * M + 2, 4 * M * M + 14 * M + 12)


def parametric_eluder_bound(kind: str, p: ParametricClassParams, eps: float) -> float:
    if not eps > 0:
        raise ValueError("eps must be positive")
    e_ratio = math.e / (math.e - 1)
    if kind == "finite":
        return float(p.cardinality)
    if kind == "linear":
        return 3 * p.d * e_ratio * math.log(3 + 3 * (2 * p.S / eps) ** 2) + 1
    if kind == "glm":
        r2 = p.r**2
        return 3 * p.d * r2 * e_ratio * math.log(3 * r2 + 3 * r2 * (2 * p.S * p.h_hi / eps) ** 2) + 1
    raise ValueError(f"unknown parametric kind {kind!r}")


def smooth_dim_bound(M: int, L: float, eps: float) -> float:
    """Counting bound 9 / B + 2 with B the core width of the extremal profile.

    The core interval (x1, x2) where the profile exceeds eps/3 has width
    2 Delta, so this is never smaller than the bound built from the full
    region size; it needs no grid and so works at any eps.
    """
    from .funclass import _core_levels

    unit = _core_levels(M, 1.0, 1.0)[0][1](1.0)
    D = ((eps * (1 + 1e-9) - eps / 3.0) / (unit * L)) ** (1.0 / (M + 1))
    return 9.0 / (2.0 * D) + 2.0


@dataclass(frozen=True)
class BoundCurve:
    T: np.ndarray
    beta_star: np.ndarray
    dim_bound: np.ndarray
    regret_bound: np.ndarray


def regret_bound_curve(
    M: int,
    T_values,
    *,
    L: float = 1.0,
    C: float = 1.0,
    sigma2: float = 1.0,
    b: float = 0.0,
    lam: Optional[float] = None,
    covering_constant: float = 1.0,
) -> BoundCurve:
    """Compose cover size, confidence radius and eluder bound along T.

    alpha(T) and kappa(T) follow the exponent schedule; delta(T) = 1/(2T).
    """
    ex = exponents(M)
    lam = default_lambda(C, sigma2, b) if lam is None else lam
    Ts = np.asarray(T_values, dtype=float)
    betas, dims, regs = [], [], []
    for T in Ts:
        alpha = T ** float(ex.alpha_exp)
        kappa = T ** float(ex.kappa_exp)
        params = BoundParams(alpha=alpha, delta=1.0 / (2.0 * T), lam=lam, kappa_value=kappa, C=C)
        logN = covering_number_log(alpha, "smooth", covering_constant, M=M)
        beta = ball_width(int(T), logN, params, sigma2, b)
        dim = smooth_dim_bound(M, L, kappa)
        betas.append(beta)
        dims.append(dim)
        regs.append(general_regret_bound(T, dim, beta, kappa, C))
    return BoundCurve(Ts, np.array(betas), np.array(dims), np.array(regs))


def write_bound_csv(curve: BoundCurve, path) -> None:
    with open(path, "w") as fh:
        fh.write("T,beta_star,dim_bound,regret_bound\n")
        for row in zip(curve.T, curve.beta_star, curve.dim_bound, curve.regret_bound):
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
