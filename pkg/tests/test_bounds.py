import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smoothts.bounds import (
    BoundParams,
    ParametricClassParams,
    ball_width,
    covering_number_log,
    discretization_error_bound,
    exponents,
    gap_exponent,
    general_regret_bound,
    parametric_eluder_bound,
    regret_bound_curve,
    write_bound_csv,
)
from smoothts.errors import PreconditionError


def ball_width_oracle(n, log_cover, alpha, delta, lam, C, s2, b):
    """Direct transcription with explicit floor / ceil of the branch point."""
    n0 = math.sqrt(delta / 4 * math.exp(s2 / (2 * b * b)))
    g = sum(math.sqrt(2 * s2 * math.log(4 * i * i / delta)) for i in range(1, n + 1) if i <= math.floor(n0))
    e = sum(2 * b * math.log(4 * i * i / delta) for i in range(1, n + 1) if i >= math.ceil(n0))
    inner = (log_cover + math.log(1 / delta)) / (2 * lam * alpha) + n * (4 * C + alpha) * (1 - lam * s2) + g + e
    return 2 * alpha / (1 - 2 * lam * s2) * inner


class TestBallWidth:
    def test_finite_class_limit(self):
        p = BoundParams(alpha=0.0, delta=0.1, lam=0.25)
        assert ball_width(0, math.log(10), p, 1.0, 0.0) == pytest.approx(36.841361487904734, abs=1e-9)

    @pytest.mark.parametrize("b", [0.3, 0.45, 0.6])
    def test_matches_direct_formula(self, b):
        # b = 0.3, 0.45, 0.6 put n0 near 4.4e1, 2.0, 0.4: both branches and each alone
        s2, C, delta, alpha, lam = 1.0, 1.0, 0.1, 0.05, 0.2
        for n in (1, 5, 40, 200):
            got = ball_width(n, 3.0, BoundParams(alpha, delta, lam, C=C), s2, b)
            assert got == pytest.approx(ball_width_oracle(n, 3.0, alpha, delta, lam, C, s2, b), rel=1e-12)

    def test_gaussian_only_when_b_zero(self):
        p = BoundParams(alpha=0.05, delta=0.1, lam=0.2)
        # b = 0.1 puts n0 far beyond n, so only the Gaussian branch contributes
        expected = ball_width_oracle(30, 3.0, 0.05, 0.1, 0.2, 1.0, 1.0, 0.1)
        assert ball_width(30, 3.0, p, 1.0, 0.0) == pytest.approx(expected, rel=1e-12)

    def test_preconditions(self):
        with pytest.raises(PreconditionError):
            ball_width(10, 1.0, BoundParams(0.1, 0.1, 0.6), 1.0, 0.0)  # 1 - 2 lam sigma2 < 0
        with pytest.raises(PreconditionError):
            ball_width(10, 1.0, BoundParams(0.1, 0.1, 0.4, C=1.0), 0.5, 2.0)  # lam > 1/(2Cb)
        with pytest.raises(PreconditionError):
            ball_width(10, 1.0, BoundParams(0.1, 0.0, 0.1), 1.0, 0.0)

    @settings(max_examples=60, deadline=None)
    @given(n=st.integers(0, 300), alpha=st.floats(1e-4, 0.5), b=st.floats(0.05, 2.0))
    def test_monotone_in_n(self, n, alpha, b):
        lam = min(0.2, 1 / (2 * b))
        p = BoundParams(alpha, 0.1, lam)
        assert ball_width(n + 1, 2.0, p, 1.0, b) >= ball_width(n, 2.0, p, 1.0, b)

    @settings(max_examples=60, deadline=None)
    @given(n=st.integers(1, 300), b=st.floats(0.05, 1.0), factor=st.floats(1.0, 4.0))
    def test_monotone_in_b(self, n, b, factor):
        lam = min(0.2, 1 / (2 * b * factor))
        p = BoundParams(0.05, 0.1, lam)
        assert ball_width(n, 2.0, p, 1.0, b * factor) >= ball_width(n, 2.0, p, 1.0, b) * (1 - 1e-12)


class TestCovering:
    def test_values(self):
        assert covering_number_log(0.01, "smooth", M=0) == pytest.approx(100)
        assert covering_number_log(0.3, "finite", cardinality=math.e) == pytest.approx(1.0)
        assert covering_number_log(0.01, "linear", 2.0, d=3) == pytest.approx(6 * math.log(100))
        with pytest.raises(ValueError):
            covering_number_log(0.0, "smooth")

    @settings(max_examples=50, deadline=None)
    @given(alpha=st.floats(1e-6, 1.0), M=st.integers(0, 5))
    def test_halving_never_decreases(self, alpha, M):
        for kind in ("smooth", "finite", "linear"):
            a = covering_number_log(alpha, kind, M=M, cardinality=5, d=2)
            assert covering_number_log(alpha / 2, kind, M=M, cardinality=5, d=2) >= a


class TestRegretBound:
    def test_degenerate_class(self):
        assert general_regret_bound(100, 0, 50, 0.01, 1) == pytest.approx(2.0)

    def test_hand_value(self):
        assert general_regret_bound(100, 10, 50, 0.01, 1) == pytest.approx(906.4271909999159, abs=1e-9)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0, 1e4), min_size=5, max_size=5), st.integers(0, 4), st.floats(0, 10))
    def test_monotone(self, args, k, bump):
        base = general_regret_bound(*args)
        up = list(args)
        up[k] += bump
        assert general_regret_bound(*up) >= base

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            general_regret_bound(-1, 1, 1, 1, 1)


class TestExponents:
    def test_anchors(self):
        assert exponents(0).upper == Fraction(5, 6)
        assert exponents(0).lower == Fraction(2, 3)
        assert exponents(1).upper == Fraction(23, 30)
        assert abs(float(exponents(10**6).upper) - 0.5) < 1e-5

    def test_schedule(self):
        e = exponents(0)
        assert e.kappa_exp == Fraction(-1, 6) and e.alpha_exp == Fraction(-1, 2)
        # upper = 1 + kappa_exp for every M
        assert all(exponents(M).upper == 1 + exponents(M).kappa_exp for M in range(30))

    def test_gap(self):
        for M in range(51):
            e = exponents(M)
            assert e.upper > e.lower
            assert abs(float(e.gap - gap_exponent(M))) < 1e-12


class TestDiscretization:
    def test_zero_alpha(self):
        assert discretization_error_bound(100, 0.0, 1, 0.2, 1, 0.5, 0.1) == 0.0

    def test_linear_in_small_alpha(self):
        f = lambda a: discretization_error_bound(200, a, 1.0, 0.2, 1.0, 0.5, 0.1)
        s1 = (f(2e-6) - f(1e-6)) / 1e-6
        s2 = (f(4e-6) - f(3e-6)) / 1e-6
        assert s1 == pytest.approx(s2, rel=1e-4)

    def test_precondition(self):
        with pytest.raises(PreconditionError):
            discretization_error_bound(10, 0.1, 1.0, 2.0, 1.0, 0.5, 0.1)

    def test_monte_carlo(self):
        # |L(f) - L(f_a) + (1 - 2 lam s2) sum[(f_a - f0)^2 - (f - f0)^2]| under the bound
        rng = np.random.default_rng(11)
        n, alpha, C, lam, s2, b, delta = 200, 0.05, 1.0, 0.2, 1.0, 0.5, 0.1
        bound = discretization_error_bound(n, alpha, C, lam, s2, b, delta)
        runs, ok = 1000, 0
        for _ in range(runs):
            f0 = rng.uniform(0, C, n)
            f = rng.uniform(0, C, n)
            fa = f + alpha * rng.uniform(-1, 1, n)
            R = f0 + rng.normal(0, 1, n)
            lhs = np.sum((f - R) ** 2) - np.sum((fa - R) ** 2)
            lhs += (1 - 2 * lam * s2) * np.sum((fa - f0) ** 2 - (f - f0) ** 2)
            ok += abs(lhs) <= bound
        assert ok / runs >= 1 - delta - 3 * math.sqrt(delta * (1 - delta) / runs)


class TestParametric:
    def test_finite(self):
        assert parametric_eluder_bound("finite", ParametricClassParams(cardinality=7), 0.1) == 7

    def test_linear_hand_value(self):
        v = parametric_eluder_bound("linear", ParametricClassParams(d=1, S=1.0), 2.0)
        assert v == pytest.approx(3 * math.e / (math.e - 1) * math.log(6) + 1)
        assert v == pytest.approx(9.50, abs=0.01)

    def test_glm_collapses(self):
        p = ParametricClassParams(d=3, S=2.0, r=1.0, h_hi=1.0)
        assert parametric_eluder_bound("glm", p, 0.1) == pytest.approx(parametric_eluder_bound("linear", p, 0.1))

    def test_invalid(self):
        with pytest.raises(ValueError):
            ParametricClassParams(h_lo=2.0, h_hi=1.0)
        with pytest.raises(ValueError):
            ParametricClassParams(r=0.5)


class TestCurve:
    def test_csv(self, tmp_path):
        c = regret_bound_curve(0, [256, 512, 1024])
        write_bound_csv(c, tmp_path / "b.csv")
        lines = (tmp_path / "b.csv").read_text().splitlines()
        assert lines[0] == "T,beta_star,dim_bound,regret_bound" and len(lines) == 4
        assert np.all(np.diff(c.regret_bound) > 0)
