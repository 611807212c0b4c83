"""Numerically robust special functions and log-domain probability kernels.

All likelihood arithmetic in the decoder runs in the natural-log domain;
posteriors are formed only through ``logsumexp`` normalization, because
products over a large number of receive antennas underflow in linear domain.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, ndtr, xlog1py, xlogy

__all__ = [
    "LogWeightVector",
    "marcum_q1",
    "log_cgauss_diag",
    "logsumexp",
    "binom_pmf",
    "binom_logpmf",
]

# Poisson-mass truncation for the Marcum-Q series.
_MARCUM_TOL = 1e-14
# Beyond this noncentrality the series weights underflow; switch to the
# Gaussian tail approximation (error O(1/a), reachable only for a > 34).
_MARCUM_SERIES_XMAX = 600.0


@dataclass(frozen=True)
class LogWeightVector:
    """Unnormalized weights in natural log; index semantics supplied by caller."""

    log_weights: np.ndarray

    def normalize(self) -> np.ndarray:
        """Return linear-domain weights summing to 1.

        Invariant to adding a constant to all log-weights.  All ``-inf``
        input is a domain error (nothing to normalize).
        """
        lw = np.asarray(self.log_weights, dtype=float)
        total = logsumexp(lw)
        if total == -np.inf:
            raise ValueError("cannot normalize: all log-weights are -inf")
        return np.exp(lw - total)


def marcum_q1(a, b):
    """First-order Marcum Q function ``Q1(a, b)``.

    Computed as the upper tail of a noncentral chi-square distribution with
    2 degrees of freedom and noncentrality ``a**2``: a Poisson-weighted sum
    of central chi-square tails, truncated once the remaining Poisson mass
    drops below 1e-14.  Accepts scalars or arrays (broadcast).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(~np.isfinite(a)) or np.any(~np.isfinite(b)):
        raise ValueError("marcum_q1: inputs must be finite")
    if np.any(a < 0) or np.any(b < 0):
        raise ValueError("marcum_q1: inputs must be nonnegative")
    scalar = a.ndim == 0 and b.ndim == 0
    a, b = np.broadcast_arrays(np.atleast_1d(a), np.atleast_1d(b))

    # Q1(a,b) = sum_j Pois(j; x) * Q(j+1, y),  x = a^2/2, y = b^2/2,
    # with Q(s, y) the regularized upper incomplete gamma; for integer s,
    # Q(s, y) = e^{-y} sum_{i<s} y^i / i!.  Weights and tails update
    # recursively, so no Bessel evaluation is needed.
    x = (0.5 * a * a).ravel()
    y = (0.5 * b * b).ravel()
    out = np.empty_like(x)
    big = x > _MARCUM_SERIES_XMAX
    out[big] = ndtr(np.sqrt(2 * x[big]) - np.sqrt(2 * y[big]))

    # Series on the remaining entries, retiring converged ones as the loop
    # runs: entries with small noncentrality converge within a few terms.
    idx = np.nonzero(~big)[0]
    xs, ys = x[idx], y[idx]
    pois = np.exp(-xs)
    pois_cum = pois.copy()
    gterm = np.exp(-ys)
    gtail = gterm.copy()
    acc = pois * gtail
    j = 0
    while idx.size and j < 100000:
        done = pois_cum >= 1.0 - _MARCUM_TOL
        if np.any(done):
            out[idx[done]] = acc[done]
            keep = ~done
            idx, xs, ys = idx[keep], xs[keep], ys[keep]
            pois, pois_cum = pois[keep], pois_cum[keep]
            gterm, gtail, acc = gterm[keep], gtail[keep], acc[keep]
            if not idx.size:
                break
        j += 1
        pois = pois * xs / j
        gterm = gterm * ys / j
        gtail = gtail + gterm
        acc = acc + pois * gtail
        pois_cum = pois_cum + pois
    if idx.size:
        out[idx] = acc
    out = np.clip(out, 0.0, 1.0).reshape(a.shape)
    return float(out.reshape(-1)[0]) if scalar else out


def log_cgauss_diag(r: np.ndarray, v: np.ndarray, antennas_per_ap: int) -> float:
    """Log density of a circular complex Gaussian with per-AP-constant diagonal covariance.

    ``r`` has length ``F = A * B`` with antenna blocks ordered by AP; ``v``
    holds the B per-AP variances.  Returns
    ``sum_b [ -A log(pi v_b) - E_b / v_b ]`` where ``E_b`` is the received
    energy summed over the A antennas of AP ``b``.
    """
    r = np.asarray(r)
    v = np.asarray(v, dtype=float)
    if np.any(v <= 0):
        raise ValueError("log_cgauss_diag: variances must be positive")
    A = int(antennas_per_ap)
    B = v.shape[0]
    if r.shape[-1] != A * B:
        raise ValueError(f"log_cgauss_diag: r has length {r.shape[-1]}, expected {A * B}")
    energy = (np.abs(r) ** 2).reshape(B, A).sum(axis=-1)
    return float(np.sum(-A * np.log(np.pi * v) - energy / v))


def logsumexp(xs) -> float:
    """Max-shifted log(sum(exp(xs))); returns -inf for all-(-inf) input."""
    xs = np.asarray(xs, dtype=float)
    if xs.size == 0:
        raise ValueError("logsumexp: empty input")
    m = np.max(xs)
    if m == -np.inf:
        return -np.inf
    return float(m + np.log(np.sum(np.exp(xs - m))))


def binom_logpmf(k, n, p) -> np.ndarray:
    """Log binomial pmf via log-gamma; ``k > n`` yields -inf by convention."""
    k = np.asarray(k, dtype=float)
    n = np.asarray(n, dtype=float)
    p = np.asarray(p, dtype=float)
    if np.any(p < 0) or np.any(p > 1) or np.any(~np.isfinite(p)):
        raise ValueError("binom_logpmf: p must lie in [0, 1]")
    k, n, p = np.broadcast_arrays(k, n, p)
    out = np.full(k.shape, -np.inf)
    valid = (k >= 0) & (k <= n)
    kv, nv, pv = k[valid], n[valid], p[valid]
    lchoose = gammaln(nv + 1) - gammaln(kv + 1) - gammaln(nv - kv + 1)
    out[valid] = lchoose + xlogy(kv, pv) + xlog1py(nv - kv, -pv)
    return out


def binom_pmf(k, n, p):
    """Binomial pmf; exact to double precision, sums to 1 over ``k = 0..n``."""
    res = np.exp(binom_logpmf(k, n, p))
    return float(res[()]) if res.ndim == 0 else res
