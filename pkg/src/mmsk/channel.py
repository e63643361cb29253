"""Release, propagation, and reception of molecule mixtures.

Releases are instantaneous bursts of a mixture at a random time. Arrivals at
the receiver within each sampling interval are Poisson with mean given by a
parametric per-type arrival-rate curve; molecules are absorbed on arrival and
never recounted. The receptor array output is a thresholded linear readout of
arrivals plus Poisson baseline noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .affinity import AffinityMatrix
from .rng import poisson


@dataclass(frozen=True)
class ChannelResponse:
    """Parametric arrival-rate curve v(t) = (gamma/beta)(1+alpha/beta)(1-e^{-t/alpha})e^{-t/beta}.

    alpha and beta (seconds) set the rise and decay speeds; gamma is the
    total fraction of released molecules that ever arrive, i.e. the integral
    of v over [0, inf).
    """

    alpha: float
    beta: float
    gamma: float

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("alpha and beta must be positive")
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError("gamma must lie in (0, 1]")

    @property
    def peak_time(self) -> float:
        """Argmax of v: alpha * ln(1 + beta/alpha)."""
        return self.alpha * np.log1p(self.beta / self.alpha)


@dataclass(frozen=True)
class ReleaseEvent:
    """One mixture burst: which alphabet column, when, and how many molecules."""

    mixture_id: int
    release_time: float
    n_rls: float

    def __post_init__(self):
        if self.release_time < 0:
            raise ValueError("release_time must be nonnegative")
        if self.n_rls <= 0:
            raise ValueError("n_rls must be positive")


@dataclass(frozen=True)
class ReceptionConfig:
    lambda_r: float = 10.0   # baseline noise mean per receptor per sample
    x_thr: float = 5.0       # activation threshold
    delta_t: float = 0.2     # sampling interval, seconds
    n_samples: int = 60      # observation window length in samples

    def __post_init__(self):
        if self.lambda_r < 0 or self.x_thr < 0:
            raise ValueError("lambda_r and x_thr must be nonnegative")
        if self.delta_t <= 0:
            raise ValueError("delta_t must be positive")
        if self.n_samples < 1:
            raise ValueError("n_samples must be at least 1")


@dataclass(frozen=True)
class ArrayObservation:
    """One sampling interval: expected arrivals, realized arrivals, array output."""

    x_bar: np.ndarray = field(repr=False)
    x: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)


def response_rate(ch: ChannelResponse, t) -> np.ndarray:
    """Arrival rate v(t); zero for t < 0."""
    t = np.asarray(t, dtype=np.float64)
    tp = np.maximum(t, 0.0)
    scale = (ch.gamma / ch.beta) * (1.0 + ch.alpha / ch.beta)
    v = scale * (-np.expm1(-tp / ch.alpha)) * np.exp(-tp / ch.beta)
    return np.where(t < 0, 0.0, v)


def _antiderivative(ch: ChannelResponse, t) -> np.ndarray:
    # F(t) with F(inf) = 0, so that integral(t0, t1) = F(t1) - F(t0).
    t = np.asarray(t, dtype=np.float64)
    a, b, g = ch.alpha, ch.beta, ch.gamma
    combined = (a + b) / (a * b)
    term1 = -(g * (a + b) / b) * np.exp(-t / b)
    term2 = (g * a / b) * np.exp(-t * combined)
    out = term1 + term2
    return np.where(np.isinf(t), 0.0, out)


def response_integral(ch: ChannelResponse, t0: float, t1: float) -> float:
    """Fraction of a release arriving during [t0, t1], by closed form."""
    if t1 < t0:
        raise ValueError("t1 must be >= t0")
    if t0 < 0:
        raise ValueError("t0 must be nonnegative")
    return float(_antiderivative(ch, t1) - _antiderivative(ch, t0))


def expected_arrivals(
    events,
    construction: np.ndarray,
    channels,
    cfg: ReceptionConfig,
    j: int,
) -> np.ndarray:
    """Expected per-type arrival counts in sampling interval j (1-based).

    An instantaneous release at time tau contributes, within interval
    ((j-1) dt, j dt], the release size times the mixture's composition
    fraction times the arrival-curve mass over the interval shifted by tau.
    """
    if not (1 <= j <= cfg.n_samples):
        raise ValueError(f"sample index {j} outside 1..{cfg.n_samples}")
    Q = construction.shape[0]
    x_bar = np.zeros(Q)
    lo_t, hi_t = (j - 1) * cfg.delta_t, j * cfg.delta_t
    for ev in events:
        lo = max(0.0, lo_t - ev.release_time)
        hi = max(0.0, hi_t - ev.release_time)
        if hi <= 0.0:
            continue
        frac = construction[:, ev.mixture_id]
        for q in np.nonzero(frac)[0]:
            x_bar[q] += ev.n_rls * frac[q] * response_integral(channels[q], lo, hi)
    return x_bar


def sample_arrivals(x_bar: np.ndarray, rng) -> np.ndarray:
    """Independent Poisson arrival counts around the expected values."""
    x_bar = np.asarray(x_bar, dtype=np.float64)
    if np.any(x_bar < 0):
        raise ValueError("expected arrivals must be nonnegative")
    return poisson(rng, x_bar)


def relu(v, x_thr: float):
    """Thresholded linear activation: max(v - x_thr, 0)."""
    return np.maximum(np.asarray(v, dtype=np.float64) - x_thr, 0.0)


def receive(
    A: AffinityMatrix,
    x: np.ndarray,
    cfg: ReceptionConfig,
    rng,
    x_bar: np.ndarray | None = None,
) -> ArrayObservation:
    """Array output for one sample: y = relu(A x + n, x_thr), n ~ Poisson(lambda_r)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (A.n_molecules,):
        raise ValueError("arrival vector length must match molecule count")
    n = poisson(rng, np.full(A.n_receptors, cfg.lambda_r))
    y = relu(A.values @ x + n, cfg.x_thr)
    if x_bar is None:
        x_bar = x.astype(np.float64)
    return ArrayObservation(x_bar=np.asarray(x_bar, dtype=np.float64), x=x, y=y)


def receive_batch(
    A: AffinityMatrix,
    x: np.ndarray,
    cfg: ReceptionConfig,
    rng,
) -> np.ndarray:
    """Vectorized y for a batch of arrival vectors, one row per realization."""
    x = np.asarray(x, dtype=np.float64)
    n = poisson(rng, np.full((x.shape[0], A.n_receptors), cfg.lambda_r))
    return relu(x @ A.values.T + n, cfg.x_thr)
