"""Distribution functions and quantiles for Student t, chi-square and normal.

CDFs are built on the regularized incomplete beta and gamma functions and
quantiles are obtained by bisection, so the package needs no statistics
dependency at runtime.
"""

import math

EPS = 1e-15
TINY = 1e-300
MAXITER = 500
QUANTILE_TOL = 1e-10


def _betacf(a, b, x):
    # modified Lentz evaluation of the incomplete beta continued fraction
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < TINY:
        d = TINY
    d = 1.0 / d
    h = d
    for m in range(1, MAXITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < TINY:
            d = TINY
        c = 1.0 + aa / c
        if abs(c) < TINY:
            c = TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < TINY:
            d = TINY
        c = 1.0 + aa / c
        if abs(c) < TINY:
            c = TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < EPS:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc(a, b, x):
    """Regularized incomplete beta function I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if x < 0 or x > 1:
        raise ValueError("x must lie in [0, 1]")
    if x == 0 or x == 1:
        return float(x)
    lnfront = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
               + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(lnfront)
    # the continued fraction converges fast only on one side of the mean
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def gammainc(a, x):
    """Regularized lower incomplete gamma function P(a, x)."""
    if a <= 0:
        raise ValueError("a must be positive")
    if x < 0:
        raise ValueError("x must be nonnegative")
    if x == 0:
        return 0.0
    lnfront = -x + a * math.log(x) - math.lgamma(a)
    if x < a + 1.0:
        term = 1.0 / a
        total = term
        ap = a
        for _ in range(MAXITER * 10):
            ap += 1.0
            term *= x / ap
            total += term
            if abs(term) < abs(total) * EPS:
                return total * math.exp(lnfront)
        raise ArithmeticError("incomplete gamma series did not converge")
    # continued fraction for the upper tail Q(a, x)
    b = x + 1.0 - a
    c = 1.0 / TINY
    d = 1.0 / b
    h = d
    for i in range(1, MAXITER + 1):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < TINY:
            d = TINY
        c = b + an / c
        if abs(c) < TINY:
            c = TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < EPS:
            return 1.0 - math.exp(lnfront) * h
    raise ArithmeticError("incomplete gamma continued fraction did not converge")


def t_cdf(t, df):
    if df <= 0:
        raise ValueError("degrees of freedom must be positive")
    tail = 0.5 * betainc(0.5 * df, 0.5, df / (df + t * t))
    return 1.0 - tail if t >= 0 else tail


def chi2_cdf(x, df):
    if df <= 0:
        raise ValueError("degrees of freedom must be positive")
    if x <= 0:
        return 0.0
    return gammainc(0.5 * df, 0.5 * x)


def norm_cdf(x):
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def _bisect(cdf, p, lo, hi, tol=QUANTILE_TOL):
    while cdf(hi) < p:
        lo, hi = hi, 2.0 * hi if hi > 0 else 1.0
    while cdf(lo) > p:
        lo, hi = 2.0 * lo if lo < 0 else -1.0, lo
    for _ in range(4000):
        if hi - lo <= tol * max(abs(lo), abs(hi), TINY):
            break
        mid = 0.5 * (lo + hi)
        if cdf(mid) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _check_prob(p):
    if not 0.0 < p < 1.0:
        raise ValueError(f"probability must lie in (0, 1), got {p}")


def t_ppf(p, df):
    """Quantile of Student's t distribution with ``df`` degrees of freedom."""
    _check_prob(p)
    if p == 0.5:
        return 0.0
    # symmetric: invert the upper half only
    q = _bisect(lambda t: t_cdf(t, df), max(p, 1.0 - p), 0.0, 1.0)
    return q if p > 0.5 else -q


def chi2_ppf(p, df):
    """Quantile of the chi-square distribution with ``df`` degrees of freedom."""
    _check_prob(p)
    return _bisect(lambda x: chi2_cdf(x, df), p, 0.0, max(1.0, float(df)))


def norm_ppf(p):
    """Standard normal quantile."""
    _check_prob(p)
    if p == 0.5:
        return 0.0
    q = _bisect(norm_cdf, max(p, 1.0 - p), 0.0, 1.0)
    return q if p > 0.5 else -q
