"""Special functions for the agreement statistics: regularized incomplete
beta, its inverse, and the F-distribution CDF / inverse CDF.

The incomplete beta uses the Lentz-style continued fraction (the classic
Numerical Recipes `betacf` construction) with the usual symmetry switch;
the inverse runs Newton iterations from a bisection-refined bracket and
falls back to pure bisection whenever Newton leaves the bracket. The
target is 1e-10 accuracy in probability, so no external statistics
package is needed.
"""
from __future__ import annotations

import math

from .validation import ValidationError

__all__ = ["log_beta", "betainc", "betainc_inv", "f_cdf", "f_ppf"]

_MAX_CF_ITER = 300
_CF_EPS = 1e-15
_FPMIN = 1e-290
_PROB_TOL = 1e-10


def log_beta(a: float, b: float) -> float:
    return math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta, evaluated by the
    modified Lentz method."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _FPMIN:
        d = _FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, _MAX_CF_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h
    raise ValidationError(f"incomplete beta continued fraction failed for a={a}, b={b}, x={x}")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if a <= 0.0 or b <= 0.0:
        raise ValidationError(f"betainc requires a, b > 0, got a={a}, b={b}")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = a * math.log(x) + b * math.log1p(-x) - log_beta(a, b)
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def betainc_inv(a: float, b: float, p: float) -> float:
    """Solve I_x(a, b) = p for x to within 1e-10 in probability.

    Newton steps on a maintained bracket; any step that escapes the
    bracket or stalls is replaced by bisection, so convergence is
    guaranteed.
    """
    if not 0.0 <= p <= 1.0:
        raise ValidationError(f"betainc_inv requires p in [0, 1], got {p}")
    if p == 0.0:
        return 0.0
    if p == 1.0:
        return 1.0

    lo, hi = 0.0, 1.0
    x = a / (a + b)  # mean of the beta distribution as the starting point
    log_norm = -log_beta(a, b)
    for _ in range(200):
        fx = betainc(a, b, x) - p
        if abs(fx) <= _PROB_TOL:
            return x
        if fx > 0.0:
            hi = x
        else:
            lo = x
        # density I_x'(a,b); guard the endpoints where it vanishes/diverges
        if 0.0 < x < 1.0:
            log_pdf = log_norm + (a - 1.0) * math.log(x) + (b - 1.0) * math.log1p(-x)
            pdf = math.exp(log_pdf) if log_pdf < 700.0 else math.inf
        else:
            pdf = 0.0
        if pdf > 0.0 and math.isfinite(pdf):
            step = fx / pdf
            candidate = x - step
        else:
            candidate = 0.5 * (lo + hi)
        if not lo < candidate < hi:
            candidate = 0.5 * (lo + hi)
        if candidate == x:
            candidate = 0.5 * (lo + hi)
            if candidate == x:
                return x
        x = candidate
    return x


def f_cdf(x: float, d1: float, d2: float) -> float:
    """CDF of the F distribution with (d1, d2) degrees of freedom."""
    if d1 <= 0.0 or d2 <= 0.0:
        raise ValidationError(f"f_cdf requires positive degrees of freedom, got ({d1}, {d2})")
    if x <= 0.0:
        return 0.0
    t = d1 * x / (d1 * x + d2)
    return betainc(0.5 * d1, 0.5 * d2, t)


def f_ppf(p: float, d1: float, d2: float) -> float:
    """Inverse CDF of the F distribution."""
    if d1 <= 0.0 or d2 <= 0.0:
        raise ValidationError(f"f_ppf requires positive degrees of freedom, got ({d1}, {d2})")
    if not 0.0 <= p < 1.0:
        raise ValidationError(f"f_ppf requires p in [0, 1), got {p}")
    if p == 0.0:
        return 0.0
    t = betainc_inv(0.5 * d1, 0.5 * d2, p)
    if t >= 1.0:
        return math.inf
    return d2 * t / (d1 * (1.0 - t))
