"""Independent brute-force references used by the test suite.

Everything here is deliberately naive (explicit loops, direct sums,
series + bisection) and shares no code with the package implementation,
so the two sides can disagree when one of them is wrong.
"""
from __future__ import annotations

import math

import numpy as np


# ---------------------------------------------------------------------------
# Tensor op references


def conv3d_naive(x, w, b, stride=1, padding=0):
    """Seven-nested-loop 3-D convolution in float64."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    N, C, D, H, W = x.shape
    O, _, k, _, _ = w.shape
    p = padding
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p), (p, p)))
    Do = (D + 2 * p - k) // stride + 1
    Ho = (H + 2 * p - k) // stride + 1
    Wo = (W + 2 * p - k) // stride + 1
    y = np.zeros((N, O, Do, Ho, Wo))
    for n in range(N):
        for o in range(O):
            for d in range(Do):
                for h in range(Ho):
                    for v in range(Wo):
                        acc = b[o]
                        for c in range(C):
                            for a in range(k):
                                for e in range(k):
                                    for f in range(k):
                                        acc += (
                                            w[o, c, a, e, f]
                                            * xp[n, c, d * stride + a, h * stride + e, v * stride + f]
                                        )
                        y[n, o, d, h, v] = acc
    return y


def maxpool3d_naive(x, k, stride):
    x = np.asarray(x, dtype=np.float64)
    N, C, D, H, W = x.shape
    Do = (D - k) // stride + 1
    Ho = (H - k) // stride + 1
    Wo = (W - k) // stride + 1
    y = np.zeros((N, C, Do, Ho, Wo))
    for n in range(N):
        for c in range(C):
            for d in range(Do):
                for h in range(Ho):
                    for v in range(Wo):
                        window = x[
                            n,
                            c,
                            d * stride : d * stride + k,
                            h * stride : h * stride + k,
                            v * stride : v * stride + k,
                        ]
                        y[n, c, d, h, v] = window.max()
    return y


def matmul_naive(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n, f = a.shape
    f2, g = b.shape
    assert f == f2
    y = np.zeros((n, g))
    for i in range(n):
        for j in range(g):
            acc = 0.0
            for t in range(f):
                acc += a[i, t] * b[t, j]
            y[i, j] = acc
    return y


# ---------------------------------------------------------------------------
# Direct two-way ANOVA + ICC(2,1), coded straight from the definitions


def icc_2_1_direct(data, confidence=0.95):
    """ICC(2,1) with CI, from explicit sums and a bisected F quantile.

    Returns (icc, ci_low, ci_high, msr, msc, mse).
    """
    data = np.asarray(data, dtype=np.float64)
    n, k = data.shape
    grand = 0.0
    for i in range(n):
        for j in range(k):
            grand += data[i, j]
    grand /= n * k
    row_means = [sum(data[i, j] for j in range(k)) / k for i in range(n)]
    col_means = [sum(data[i, j] for i in range(n)) / n for j in range(k)]
    ss_rows = k * sum((r - grand) ** 2 for r in row_means)
    ss_cols = n * sum((c - grand) ** 2 for c in col_means)
    ss_total = sum((data[i, j] - grand) ** 2 for i in range(n) for j in range(k))
    ss_err = ss_total - ss_rows - ss_cols
    msr = ss_rows / (n - 1)
    msc = ss_cols / (k - 1)
    mse = ss_err / ((n - 1) * (k - 1))

    denom = msr + (k - 1) * mse + (k / n) * (msc - mse)
    icc = (msr - mse) / denom

    if icc >= 1.0 - 1e-12:
        return icc, icc, icc, msr, msc, mse

    a = (k * icc) / (n * (1.0 - icc))
    bq = 1.0 + (k * icc * (n - 1)) / (n * (1.0 - icc))
    nu = (a * msc + bq * mse) ** 2 / (
        (a * msc) ** 2 / (k - 1) + (bq * mse) ** 2 / ((n - 1) * (k - 1))
    )
    p = 1.0 - (1.0 - confidence) / 2.0
    fl = f_quantile_bisect(p, n - 1, nu)
    fu = f_quantile_bisect(p, nu, n - 1)
    lower = n * (msr - fl * mse) / (fl * (k * msc + (k * n - k - n) * mse) + n * msr)
    upper = n * (fu * msr - mse) / (k * msc + (k * n - k - n) * mse + n * fu * msr)
    lower = min(max(lower, -1.0), 1.0)
    upper = min(max(upper, -1.0), 1.0)
    return icc, lower, upper, msr, msc, mse


# ---------------------------------------------------------------------------
# F-distribution CDF via a power series for the regularized incomplete beta
# (Abramowitz & Stegun 26.5.4), inverted by pure bisection. The package
# implementation uses a continued fraction + Newton, so the routes differ.


def betainc_series(a, b, x, tol=1e-14, max_terms=100000):
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    if x > (a + 1.0) / (a + b + 2.0):
        return 1.0 - betainc_series(b, a, 1.0 - x, tol=tol, max_terms=max_terms)
    log_front = (
        a * math.log(x)
        + b * math.log1p(-x)
        - math.log(a)
        - (math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b))
    )
    front = math.exp(log_front)
    # I_x(a,b) = front * sum_{m>=0} c_m with c_0 = 1,
    # c_{m+1} = c_m * x * (a + b + m) / (a + 1 + m)
    term = 1.0
    total = 1.0
    for m in range(max_terms):
        term *= x * (a + b + m) / (a + 1.0 + m)
        total += term
        if abs(term) < tol * abs(total):
            return front * total
    raise RuntimeError("betainc series did not converge")


def f_cdf_series(x, d1, d2):
    if x <= 0.0:
        return 0.0
    t = d1 * x / (d1 * x + d2)
    return betainc_series(0.5 * d1, 0.5 * d2, t)


def f_quantile_bisect(p, d1, d2, tol=1e-12):
    """Invert the F CDF by bisection only."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must be in (0,1), got {p}")
    lo, hi = 0.0, 1.0
    while f_cdf_series(hi, d1, d2) < p:
        hi *= 2.0
        if hi > 1e300:
            raise RuntimeError("f_quantile_bisect: failed to bracket")
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        if f_cdf_series(mid, d1, d2) < p:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol * max(1.0, lo):
            break
    return 0.5 * (lo + hi)
