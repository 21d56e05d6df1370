"""Exact discrete-probability kernel.

Binomial coefficients and PMFs, odds-ratio transforms, and the small
numerical conventions every other module relies on:

* ``C(0, x) = 1`` iff ``x = 0`` (empty groups carry a point mass at zero),
* coefficients are exact integers converted once to float64 wherever the
  magnitude provably fits, with a log-gamma fallback beyond that,
* probability vectors for degenerate ``p in {0, 1}`` are exact one-hots,
* accumulation of long sums uses pairwise (numpy) or compensated
  (``math.fsum``) summation so complete distributions total 1 to ~1e-9.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import gammaln

NEG_INF = float("-inf")

# Largest n for which C(n, n//2) stays comfortably inside float64 range.
_EXACT_COMB_MAX_N = 1000


def binom_coeff_log(n: int, x: int) -> float:
    """Natural log of C(n, x); -inf when x is outside {0, ..., n}.

    Honours the convention C(0, x) = 1{x = 0}.
    """
    if n < 0:
        raise ValueError(f"n must be nonnegative, got {n}")
    if x < 0 or x > n:
        return NEG_INF
    if n <= _EXACT_COMB_MAX_N:
        return math.log(math.comb(n, x))
    return float(gammaln(n + 1) - gammaln(x + 1) - gammaln(n - x + 1))


def binom_coeff_vector(n: int) -> np.ndarray:
    """C(n, x) for x = 0..n as float64, exact for every representable entry."""
    if n < 0:
        raise ValueError(f"n must be nonnegative, got {n}")
    if n <= _EXACT_COMB_MAX_N:
        return np.array([float(math.comb(n, x)) for x in range(n + 1)])
    return np.exp(gammaln(n + 1) - gammaln(np.arange(n + 1) + 1)
                  - gammaln(n - np.arange(n + 1) + 1))


def binom_pmf(x: int, n: int, p: float) -> float:
    """Exact binomial probability P(X = x) for X ~ B(n, p).

    Zero outside the support; log-space evaluation guards against
    overflow of the coefficient for large n.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    if x < 0 or x > n:
        return 0.0
    if p == 0.0:
        return 1.0 if x == 0 else 0.0
    if p == 1.0:
        return 1.0 if x == n else 0.0
    return math.exp(binom_coeff_log(n, x) + x * math.log(p)
                    + (n - x) * math.log1p(-p))


def binom_pmf_vector(n: int, p: float) -> np.ndarray:
    """PMF of B(n, p) over x = 0..n; exact one-hot for p in {0, 1}."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    out = np.zeros(n + 1)
    if p == 0.0:
        out[0] = 1.0
        return out
    if p == 1.0:
        out[n] = 1.0
        return out
    x = np.arange(n + 1)
    logc = (gammaln(n + 1) - gammaln(x + 1) - gammaln(n - x + 1)
            if n > _EXACT_COMB_MAX_N
            else np.log(binom_coeff_vector(n)))
    out = np.exp(logc + x * math.log(p) + (n - x) * math.log1p(-p))
    # Tiny log-space round-off is symmetric; rescale so the vector is a
    # genuine distribution (sum error otherwise ~1e-14 per call compounds
    # through convolutions).
    out /= out.sum()
    return out


def binom_cdf_vector(n: int, p: float) -> np.ndarray:
    """CDF of B(n, p) over x = 0..n (cumulative sum of the exact PMF)."""
    return np.cumsum(binom_pmf_vector(n, p))


def odds_ratio(p_k: float, p_0: float) -> float:
    """Odds ratio p_k(1-p_0) / (p_0(1-p_k)) with {0, inf} sentinels.

    Degenerate inputs map to sentinel values rather than raising: an arm
    that can never (p_k = 0) or always (p_k = 1) succeed has odds ratio 0
    or inf against any non-degenerate control.
    """
    if p_k == p_0:
        return 1.0
    if p_k <= 0.0:
        return 0.0
    if p_k >= 1.0 or p_0 <= 0.0:
        return math.inf
    if p_0 >= 1.0:
        return 0.0
    return p_k * (1.0 - p_0) / (p_0 * (1.0 - p_k))


def odds_ratio_vector(p) -> np.ndarray:
    """Per-arm odds ratios theta_k of p[1..K] against the control p[0].

    theta_k = p_k(1-p_0) / (p_0(1-p_k)); equals 1 exactly when p_k = p_0.
    Degenerate components yield {0, inf} sentinels (handled downstream by
    support restriction, not arithmetic).
    """
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size < 2:
        raise ValueError("p must be a vector (p_0, p_1, ..., p_K) with K >= 1")
    if np.any(p < 0.0) or np.any(p > 1.0):
        raise ValueError("success probabilities must lie in [0, 1]")
    return np.array([odds_ratio(float(pk), float(p[0])) for pk in p[1:]])


def fsum(values) -> float:
    """Compensated sum of an iterable of floats."""
    return math.fsum(values)
