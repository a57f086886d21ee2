import math

import numpy as np
import pytest

from morphoreg.special import betainc, betainc_inv, f_cdf, f_ppf
from morphoreg.validation import ValidationError

from _oracles import betainc_series, f_quantile_bisect


# Exact closed forms anchor correctness independently of any series or
# continued fraction: I_x(1,b) = 1-(1-x)^b, I_x(a,1) = x^a,
# I_x(1/2,1/2) = (2/pi) asin(sqrt(x)), and I_{1/2}(a,a) = 1/2.


@pytest.mark.parametrize("x", [0.01, 0.2, 0.5, 0.8, 0.99])
@pytest.mark.parametrize("b", [0.5, 1.0, 2.5, 10.0])
def test_betainc_closed_form_a_equals_one(x, b):
    assert betainc(1.0, b, x) == pytest.approx(1.0 - (1.0 - x) ** b, abs=1e-13)


@pytest.mark.parametrize("x", [0.01, 0.2, 0.5, 0.8, 0.99])
@pytest.mark.parametrize("a", [0.5, 1.0, 2.5, 10.0])
def test_betainc_closed_form_b_equals_one(x, a):
    assert betainc(a, 1.0, x) == pytest.approx(x**a, abs=1e-13)


@pytest.mark.parametrize("x", [0.05, 0.3, 0.5, 0.7, 0.95])
def test_betainc_arcsine_law(x):
    assert betainc(0.5, 0.5, x) == pytest.approx(
        (2.0 / math.pi) * math.asin(math.sqrt(x)), abs=1e-12
    )


@pytest.mark.parametrize("a", [0.3, 1.0, 4.0, 25.0])
def test_betainc_symmetric_half(a):
    assert betainc(a, a, 0.5) == pytest.approx(0.5, abs=1e-13)


def test_betainc_complement_symmetry():
    rng = np.random.default_rng(0)
    for _ in range(200):
        a, b = rng.uniform(0.2, 40, size=2)
        x = rng.uniform(0.0, 1.0)
        assert betainc(a, b, x) + betainc(b, a, 1.0 - x) == pytest.approx(1.0, abs=1e-12)


def test_betainc_agrees_with_independent_series():
    rng = np.random.default_rng(1)
    for _ in range(300):
        a, b = rng.uniform(0.2, 60, size=2)
        x = rng.uniform(0.0, 1.0)
        assert betainc(a, b, x) == pytest.approx(betainc_series(a, b, x), abs=1e-11)


def test_betainc_inv_round_trip_probability():
    rng = np.random.default_rng(2)
    for _ in range(300):
        a, b = rng.uniform(0.2, 60, size=2)
        p = rng.uniform(1e-6, 1 - 1e-6)
        x = betainc_inv(a, b, p)
        assert betainc(a, b, x) == pytest.approx(p, abs=1e-10)


def test_betainc_edge_values():
    assert betainc(2.0, 3.0, 0.0) == 0.0
    assert betainc(2.0, 3.0, 1.0) == 1.0
    assert betainc_inv(2.0, 3.0, 0.0) == 0.0
    assert betainc_inv(2.0, 3.0, 1.0) == 1.0
    with pytest.raises(ValidationError):
        betainc(-1.0, 2.0, 0.5)


def test_f_cdf_monotone_and_bounded():
    xs = np.linspace(0.0, 20.0, 200)
    vals = [f_cdf(float(x), 3.0, 7.5) for x in xs]
    assert vals[0] == 0.0
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    assert vals[-1] < 1.0


def test_f_quantile_matches_bisection_oracle():
    rng = np.random.default_rng(3)
    for _ in range(100):
        d1 = rng.uniform(0.8, 80)
        d2 = rng.uniform(0.8, 80)
        p = rng.uniform(0.005, 0.995)
        ours = f_ppf(p, d1, d2)
        ref = f_quantile_bisect(p, d1, d2)
        assert ours == pytest.approx(ref, rel=1e-8, abs=1e-10)


def test_f_quantile_median_of_f_1_1():
    # F(1,1) is the ratio of two half-normals squared: median is exactly 1
    assert f_ppf(0.5, 1.0, 1.0) == pytest.approx(1.0, abs=1e-9)


def test_f_quantile_reciprocal_identity():
    # X ~ F(d1,d2)  =>  1/X ~ F(d2,d1): q_p(d1,d2) = 1/q_{1-p}(d2,d1)
    rng = np.random.default_rng(4)
    for _ in range(50):
        d1, d2 = rng.uniform(1.0, 40, size=2)
        p = rng.uniform(0.05, 0.95)
        assert f_ppf(p, d1, d2) == pytest.approx(
            1.0 / f_ppf(1.0 - p, d2, d1), rel=1e-8
        )


def test_f_cdf_round_trip_through_quantile():
    rng = np.random.default_rng(5)
    for _ in range(100):
        d1, d2 = rng.uniform(0.5, 60, size=2)
        p = rng.uniform(0.01, 0.99)
        assert f_cdf(f_ppf(p, d1, d2), d1, d2) == pytest.approx(p, abs=1e-10)


def test_f_ppf_rejects_bad_arguments():
    with pytest.raises(ValidationError):
        f_ppf(1.5, 2.0, 3.0)
    with pytest.raises(ValidationError):
        f_ppf(0.5, -1.0, 3.0)
