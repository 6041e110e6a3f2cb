"""Jitted pmf -> 16-bit CDF kernels shared by the plane and attribute coders.

Every table holds the in-range symbols n_min..n_max followed by one escape
symbol. Plane tables give the escape the tail mass; attribute tables give it a
fixed frequency.
"""

import math

import numba
import numpy as np

PROB_TOTAL = 1 << 16
# fixed escape frequency of attribute tables: an escape plus its shortest
# overflow code costs 16 - 3 + 3 = 16 bits, the floored model cost
ESCAPE_FREQ = 8
_SQRT2 = math.sqrt(2.0)


@numba.njit(cache=True)
def quantize_pmf(p, n, cdf):
    """Largest-remainder apportionment of ``p[:n]`` onto 2**16 with every frequency >= 1.

    Each symbol first gets max(1, floor(p * 2**16)); leftover units go to the
    largest remainders, ties to the lower index. Writes ``cdf[:n + 1]``.
    """
    apportion(p, n, cdf, PROB_TOTAL)


@numba.njit(cache=True)
def apportion(p, n, cdf, units):
    """``quantize_pmf`` onto ``units`` instead of 2**16."""
    total = 0.0
    for i in range(n):
        if p[i] > 0.0:
            total += p[i]
    freq = np.empty(n, dtype=np.int64)
    rem = np.empty(n)
    used = 0
    for i in range(n):
        x = 0.0
        if total > 0.0 and p[i] > 0.0:
            x = p[i] / total * units
        fl = math.floor(x)
        if fl < 1.0:
            freq[i] = 1
            rem[i] = x - 1.0
        else:
            freq[i] = np.int64(fl)
            rem[i] = x - fl
        used += freq[i]
    left = units - used
    if left > 0:
        order = np.argsort(-rem, kind="mergesort")
        for t in range(left):
            freq[order[t % n]] += 1
    elif left < 0:
        # too many symbols lifted to 1; take back from the largest frequencies,
        # one unit per symbol per round. Whole rounds are applied at once:
        # r rounds remove min(r, freq - 1) from each symbol.
        order = np.argsort(-freq, kind="mergesort")
        need = -left
        lo, hi = 0, 0
        for i in range(n):
            hi = max(hi, freq[i] - 1)
        while lo < hi:
            mid = (lo + hi + 1) // 2
            taken = 0
            for i in range(n):
                taken += min(mid, freq[i] - 1)
            if taken <= need:
                lo = mid
            else:
                hi = mid - 1
        for i in range(n):
            d = min(lo, freq[i] - 1)
            freq[i] -= d
            need -= d
        t = 0
        while need > 0:
            k = order[t]
            if freq[k] > 1:
                freq[k] -= 1
                need -= 1
            t += 1
    cdf[0] = 0
    for i in range(n):
        cdf[i + 1] = cdf[i] + freq[i]


@numba.njit(cache=True)
def _upper_tail(x):
    return 0.5 * math.erfc(x / _SQRT2)


@numba.njit(cache=True)
def gauss_pmf(sigma, q, n_min, n_max, p):
    """Centered Gaussian bin masses for n_min..n_max plus escape; returns alphabet size."""
    s = q / sigma
    k_max = max(-n_min, n_max)
    tails = np.empty(k_max + 1)
    for k in range(k_max + 1):
        tails[k] = _upper_tail((k + 0.5) * s)
    m = n_max - n_min + 1
    for t in range(m):
        k = abs(n_min + t)
        if k == 0:
            p[t] = math.erf(0.5 * s / _SQRT2)
        else:
            p[t] = tails[k - 1] - tails[k]
    p[m] = (tails[-n_min] if n_min <= 0 else 1.0) + tails[n_max]
    return m + 1


@numba.njit(cache=True)
def _laplace_cdf(x, mu, b):
    if x < mu:
        return 0.5 * math.exp((x - mu) / b)
    return 1.0 - 0.5 * math.exp(-(x - mu) / b)


@numba.njit(cache=True)
def _laplace_sf(x, mu, b):
    if x >= mu:
        return 0.5 * math.exp(-(x - mu) / b)
    return 1.0 - 0.5 * math.exp((x - mu) / b)


@numba.njit(cache=True)
def laplace_bin(n, mu, b):
    lo = n - 0.5
    hi = n + 0.5
    if hi <= mu:
        return 0.5 * (math.exp((hi - mu) / b) - math.exp((lo - mu) / b))
    if lo >= mu:
        return 0.5 * (math.exp(-(lo - mu) / b) - math.exp(-(hi - mu) / b))
    return 1.0 - 0.5 * math.exp((lo - mu) / b) - 0.5 * math.exp(-(hi - mu) / b)


@numba.njit(cache=True)
def laplace_pmf(mu, b, n_min, n_max, p):
    m = n_max - n_min + 1
    for t in range(m):
        p[t] = laplace_bin(n_min + t, mu, b)
    p[m] = _laplace_cdf(n_min - 0.5, mu, b) + _laplace_sf(n_max + 0.5, mu, b)
    return m + 1


@numba.njit(cache=True)
def gauss_cdf_table(sigma, q, n_min, n_max, p, cdf):
    """In-range symbols share 2**16 - ESCAPE_FREQ units; the escape gets exactly ESCAPE_FREQ."""
    a = gauss_pmf(sigma, q, n_min, n_max, p)
    apportion(p, a - 1, cdf, PROB_TOTAL - ESCAPE_FREQ)
    cdf[a] = PROB_TOTAL
    return a


@numba.njit(cache=True)
def laplace_cdf_table(mu, b, n_min, n_max, p, cdf):
    a = laplace_pmf(mu, b, n_min, n_max, p)
    quantize_pmf(p, a, cdf)
    return a
