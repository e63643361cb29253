"""Seed-stream derivation and Poisson variate generation.

All stochastic operations in this package draw from numpy PCG64 generators
derived from an explicit seed plus a structured key, so every result is
reproducible across runs, machines, and worker scheduling. The Poisson
sampler is pinned to a fixed algorithm (sequential inversion for small
means, transformed rejection for large means) so that identical seeds yield
identical variates regardless of numpy's own method choices.
"""

from __future__ import annotations

import numpy as np
from scipy.special import gammaln

# Means below this use CDF inversion; at or above, transformed rejection.
_PTRS_SWITCH = 30.0
# Inversion never needs more steps than mean + wide tail; guards underflow stalls.
_INVERSION_CAP_SIGMAS = 60.0


def stream(seed: int, *key) -> np.random.Generator:
    """Derive an independent PCG64 generator from ``seed`` and a key path.

    Streams with distinct keys are statistically independent, so parallel
    trials can each derive their own generator from (seed, trial_index)
    and results do not depend on execution order.
    """
    material = [int(seed)]
    for part in key:
        if isinstance(part, str):
            material.extend(part.encode("utf-8"))
        else:
            material.append(int(part))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(material)))


def _poisson_inversion(rng: np.random.Generator, lam: np.ndarray) -> np.ndarray:
    """Sequential-search inversion, valid for small means (< ~700 before exp underflow)."""
    u = rng.random(lam.shape)
    p = np.exp(-lam)
    cdf = p.copy()
    k = np.zeros(lam.shape, dtype=np.int64)
    cap = np.ceil(lam + _INVERSION_CAP_SIGMAS * np.sqrt(lam) + 10.0)
    active = u > cdf
    while np.any(active):
        k[active] += 1
        p[active] *= lam[active] / k[active]
        cdf[active] += p[active]
        active = (u > cdf) & (k < cap)
    return k


def _poisson_ptrs(rng: np.random.Generator, lam: np.ndarray) -> np.ndarray:
    """Transformed rejection with squeeze, for lam >= 10 (used here from 30 up)."""
    lam = np.asarray(lam, dtype=np.float64)
    b = 0.931 + 2.53 * np.sqrt(lam)
    a = -0.059 + 0.02483 * b
    inv_alpha = 1.1239 + 1.1328 / (b - 3.4)
    v_r = 0.9277 - 3.6224 / (b - 2.0)
    log_lam = np.log(lam)

    out = np.zeros(lam.shape, dtype=np.int64)
    pending = np.arange(lam.size)
    flat = lam.ravel()
    while pending.size:
        idx = pending
        u = rng.random(idx.size) - 0.5
        v = rng.random(idx.size)
        us = 0.5 - np.abs(u)
        bf, af = b.ravel()[idx], a.ravel()[idx]
        k = np.floor((2.0 * af / us + bf) * u + flat[idx] + 0.43)

        accept = (us >= 0.07) & (v <= v_r.ravel()[idx])
        retry = (k < 0) | ((us < 0.013) & (v > us))
        check = ~accept & ~retry
        if np.any(check):
            ci = idx[check]
            lhs = (
                np.log(v[check] * inv_alpha.ravel()[ci] / (af[check] / us[check] ** 2 + bf[check]))
            )
            rhs = k[check] * log_lam.ravel()[ci] - flat[ci] - gammaln(k[check] + 1.0)
            accept[check] = lhs <= rhs
        done = accept
        out.ravel()[idx[done]] = k[done].astype(np.int64)
        pending = idx[~done]
    return out


def poisson(rng: np.random.Generator, mean) -> np.ndarray:
    """Poisson variates with the given elementwise means.

    Uses inversion for means < 30 and transformed rejection above; zero
    means return exact zeros without consuming randomness.
    """
    mean = np.asarray(mean, dtype=np.float64)
    if np.any(mean < 0):
        raise ValueError("Poisson mean must be nonnegative")
    scalar = mean.ndim == 0
    mean = np.atleast_1d(mean)
    out = np.zeros(mean.shape, dtype=np.int64)

    small = (mean > 0) & (mean < _PTRS_SWITCH)
    if np.any(small):
        out[small] = _poisson_inversion(rng, mean[small])
    big = mean >= _PTRS_SWITCH
    if np.any(big):
        out[big] = _poisson_ptrs(rng, mean[big])
    return out[0] if scalar else out


def poisson_matrix(rng: np.random.Generator, mean_row: np.ndarray, n_rows: int) -> np.ndarray:
    """n_rows independent draws of a Poisson vector with common per-column means."""
    mean_row = np.asarray(mean_row, dtype=np.float64)
    tiled = np.broadcast_to(mean_row, (n_rows,) + mean_row.shape)
    return poisson(rng, tiled)
