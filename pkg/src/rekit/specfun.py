"""Numerically careful scalar kernels shared by the samplers and message passing.

All functions are numba-compiled scalar kernels; ``*_v`` wrappers accept arrays.
"""

import math

import numpy as np
from numba import njit, vectorize

LOG2 = math.log(2.0)
HALF_LOG_PI = 0.5 * math.log(math.pi)
SQRT2 = math.sqrt(2.0)

# log(erfc(x)) switches to the asymptotic tail beyond this point; math.erfc
# keeps full relative precision well past it and underflows near 26.5
_ERFC_TAIL = 25.0


@njit(cache=True)
def log_erfc(x):
    if x < _ERFC_TAIL:
        return math.log(math.erfc(x))
    x2 = x * x
    inv = 1.0 / (2.0 * x2)
    # erfc(x) ~ exp(-x^2)/(x sqrt(pi)) * sum_n (-1)^n (2n-1)!! / (2x^2)^n
    series = 1.0 - inv * (1.0 - 3.0 * inv * (1.0 - 5.0 * inv * (1.0 - 7.0 * inv)))
    return -x2 - math.log(x) - HALF_LOG_PI + math.log(series)


@njit(cache=True)
def log_ndtr(z):
    """log of the standard normal CDF."""
    return log_erfc(-z / SQRT2) - LOG2


@njit(cache=True)
def atanh_erf(x):
    """atanh(erf(x)) without the cancellation of the naive composition."""
    ax = abs(x)
    if ax < 0.5:
        return math.atanh(math.erf(x))
    lo = log_erfc(ax)
    # erfc(-ax) = 2 - erfc(ax)
    hi = math.log1p(1.0 - math.exp(lo)) if lo > -700.0 else LOG2
    r = 0.5 * (hi - lo)
    return r if x > 0 else -r


@njit(cache=True)
def logcosh(x):
    ax = abs(x)
    return ax + math.log1p(math.exp(-2.0 * ax)) - LOG2


@njit(cache=True)
def atanh_prod(h, g):
    """atanh(tanh(h) * tanh(g)) for g >= 0, exact also when g is infinite."""
    if math.isinf(g):
        return h
    if g == 0.0:
        return 0.0
    return 0.5 * (logcosh(h + g) - logcosh(h - g))


@vectorize(["float64(float64)"], cache=True)
def atanh_erf_v(x):
    return atanh_erf(x)


@vectorize(["float64(float64)"], cache=True)
def log_erfc_v(x):
    return log_erfc(x)


@vectorize(["float64(float64)"], cache=True)
def logcosh_v(x):
    return logcosh(x)


@vectorize(["float64(float64, float64)"], cache=True)
def atanh_prod_v(h, g):
    return atanh_prod(h, g)


def stable_atanh_erf(x):
    """Field value atanh(erf(x)), accurate to ~1e-14 relative for |x| <= 8.

    Scalars in, scalars out; arrays are handled elementwise.
    """
    if np.ndim(x) == 0:
        return float(atanh_erf(float(x)))
    return atanh_erf_v(np.asarray(x, dtype=np.float64))


@njit(cache=True)
def softplus(x):
    """log(1 + exp(x))."""
    if x > 0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


@njit(cache=True)
def logaddexp(a, b):
    if a == -math.inf:
        return b
    if b == -math.inf:
        return a
    if a > b:
        return a + math.log1p(math.exp(b - a))
    return b + math.log1p(math.exp(a - b))


@njit(cache=True)
def sech2(x):
    """1 - tanh(x)^2 without cancellation."""
    ax = abs(x)
    if ax > 350.0:
        return 0.0
    e = math.exp(-2.0 * ax)
    return 4.0 * e / ((1.0 + e) * (1.0 + e))
