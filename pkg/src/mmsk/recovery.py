"""Mixture recovery from receptor-array observations.

The single-sample recovery programs are small second-order cone programs:
minimize the l1 mass of the molecule (or mixture) concentration estimate,
subject to reconstruction-error bounds on activated receptors, one-sided
bounds on non-activated receptors, and (for mixture recovery) a per-type
consistency band between molecule and mixture concentrations. Adaptive
recovery re-solves against the inferred transmitter's alphabet only.
Multi-sample traces are sharpened with an anticausal matched filter whose
taps sample the arrival-rate curves of each mixture's constituents.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy.stats import poisson as poisson_dist

from .affinity import AffinityMatrix
from .channel import ChannelResponse, ReceptionConfig, relu, response_rate
from .design import MixtureBook
from .socp import ConeSpec, SocpResult, solve_socp

_STATUS_MAP = {
    "optimal": "optimal",
    "primal_infeasible": "infeasible",
    "dual_infeasible": "iteration-limit",  # cannot occur for these bounded objectives
    "max_iters": "iteration-limit",
}


@dataclass(frozen=True)
class RecoveryConfig:
    epsilon: float = 1.0       # normalized reconstruction error threshold
    delta: float | None = None  # concentration deviation threshold; defaults to epsilon
    solver_tol: float = 1e-7
    max_iters: int = 200

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.delta is not None and self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.solver_tol <= 0 or self.max_iters < 1:
            raise ValueError("solver_tol and max_iters must be positive")

    @property
    def delta_value(self) -> float:
        return self.epsilon if self.delta is None else self.delta


@dataclass(frozen=True)
class RecoveryEstimate:
    x_hat: np.ndarray | None = field(repr=False, default=None)
    w_hat: np.ndarray | None = field(repr=False, default=None)
    active_set: np.ndarray = field(repr=False, default=None)
    status: str = "optimal"
    objective: float = np.nan


def split_active(y: np.ndarray):
    """Indices of strictly positive outputs and their complement."""
    y = np.asarray(y)
    active = np.flatnonzero(y > 0)
    inactive = np.flatnonzero(y <= 0)
    return active, inactive


def _c2_bound(cfg: ReceptionConfig, epsilon: float) -> float:
    # One-sided bound on pre-activation means of silent receptors,
    # rearranged so the threshold appears on the left-hand side.
    return float(np.sqrt(cfg.lambda_r * epsilon) - cfg.lambda_r + cfg.x_thr)


def _c1_radius(cfg: ReceptionConfig, epsilon: float, n_active: int) -> float:
    radius = float(np.sqrt(n_active * cfg.lambda_r * epsilon))
    # Keep a hair of cone interior when the bound degenerates to an equality.
    return max(radius, 1e-9)


def _build_op_cones(
    y: np.ndarray,
    A: AffinityMatrix,
    cfg: ReceptionConfig,
    rcfg: RecoveryConfig,
    reception: np.ndarray | None,
):
    """Cone data shared by the molecule-only and mixture recovery programs."""
    Av = A.values
    R, Q = Av.shape
    M = 0 if reception is None else reception.shape[1]
    n = Q + M
    active, inactive = split_active(y)

    lp_rows, lp_rhs = [], []
    eye = np.eye(n)
    lp_rows.append(-eye)  # x >= 0, w >= 0
    lp_rhs.append(np.zeros(n))
    if inactive.size:
        block = np.zeros((inactive.size, n))
        block[:, :Q] = Av[inactive]
        lp_rows.append(block)
        lp_rhs.append(np.full(inactive.size, _c2_bound(cfg, rcfg.epsilon)))
    G_lp = np.vstack(lp_rows)
    h_lp = np.concatenate(lp_rhs)

    socs = []
    soc_rows, soc_rhs = [], []
    if active.size:
        block = np.zeros((active.size + 1, n))
        rhs = np.zeros(active.size + 1)
        rhs[0] = _c1_radius(cfg, rcfg.epsilon, active.size)
        block[1:, :Q] = Av[active]
        rhs[1:] = y[active] - (cfg.lambda_r - cfg.x_thr)
        soc_rows.append(block)
        soc_rhs.append(rhs)
        socs.append(active.size + 1)

    if reception is not None:
        delta = rcfg.delta_value
        for q in range(Q):
            block = np.zeros((3, n))
            rhs = np.zeros(3)
            # (x_q - t_q)^2 <= delta * t_q with t = reception @ w, as a 3-dim cone:
            # || (x_q - t_q, (delta t_q - 1)/2) || <= (delta t_q + 1)/2
            block[0, Q:] = -(delta / 2.0) * reception[q]
            rhs[0] = 0.5
            block[1, q] = -1.0
            block[1, Q:] = reception[q]
            rhs[1] = 0.0
            block[2, Q:] = -(delta / 2.0) * reception[q]
            rhs[2] = -0.5
            soc_rows.append(block)
            soc_rhs.append(rhs)
            socs.append(3)

    G = np.vstack([G_lp] + soc_rows)
    h = np.concatenate([h_lp] + soc_rhs)
    cone = ConeSpec(l=G_lp.shape[0], socs=tuple(socs))
    return G, h, cone, active


def solve_op1(
    y: np.ndarray,
    A: AffinityMatrix,
    cfg: ReceptionConfig,
    rcfg: RecoveryConfig,
    init_rng=None,
) -> RecoveryEstimate:
    """Sparsest-concentration recovery in molecule space (l1 relaxation)."""
    y = np.asarray(y, dtype=np.float64)
    Q = A.n_molecules
    G, h, cone, active = _build_op_cones(y, A, cfg, rcfg, reception=None)
    c = np.ones(Q)
    res = solve_socp(c, G, h, cone, tol=rcfg.solver_tol, max_iters=rcfg.max_iters, init_rng=init_rng)
    status = _STATUS_MAP[res.status]
    x_hat = np.maximum(res.x, 0.0) if res.x is not None else None
    return RecoveryEstimate(x_hat=x_hat, w_hat=None, active_set=active, status=status,
                            objective=res.objective)


def solve_op2(
    y: np.ndarray,
    A: AffinityMatrix,
    reception: np.ndarray,
    cfg: ReceptionConfig,
    rcfg: RecoveryConfig,
    init_rng=None,
) -> RecoveryEstimate:
    """Joint molecule/mixture recovery, minimizing mixture-concentration mass."""
    y = np.asarray(y, dtype=np.float64)
    reception = np.asarray(reception, dtype=np.float64)
    Q = A.n_molecules
    if reception.shape[0] != Q:
        raise ValueError("reception matrix row count must match molecule count")
    if not np.allclose(reception.sum(axis=0), 1.0, atol=1e-9):
        raise ValueError("reception matrix columns must sum to 1")
    M = reception.shape[1]
    G, h, cone, active = _build_op_cones(y, A, cfg, rcfg, reception=reception)
    c = np.concatenate([np.zeros(Q), np.ones(M)])
    res = solve_socp(c, G, h, cone, tol=rcfg.solver_tol, max_iters=rcfg.max_iters, init_rng=init_rng)
    status = _STATUS_MAP[res.status]
    x_hat = w_hat = None
    if res.x is not None:
        x_hat = np.maximum(res.x[:Q], 0.0)
        w_hat = np.maximum(res.x[Q:], 0.0)
    return RecoveryEstimate(x_hat=x_hat, w_hat=w_hat, active_set=active, status=status,
                            objective=res.objective)


def solve_op2_adaptive(
    y: np.ndarray,
    A: AffinityMatrix,
    book: MixtureBook,
    cfg: ReceptionConfig,
    rcfg: RecoveryConfig,
    detection_floor: float = 1e-9,
):
    """Two-stage recovery: infer the active transmitter, then re-solve on its alphabet.

    Returns (estimate, tx_index); tx_index is None when stage one detects
    nothing (all-zero mixture estimate), in which case the stage-one estimate
    is returned unchanged. The refined w_hat is re-embedded at the inferred
    transmitter's columns of the full alphabet.
    """
    first = solve_op2(y, A, book.reception, cfg, rcfg)
    if first.status != "optimal" or first.w_hat is None:
        return first, None
    if first.w_hat.max() <= detection_floor:
        return first, None
    tx = book.tx_of_mixture(int(np.argmax(first.w_hat)))
    sl = book.tx_slices()[tx]
    refined = solve_op2(y, A, book.reception[:, sl], cfg, rcfg)
    if refined.status != "optimal" or refined.w_hat is None:
        # Restricting the alphabet shrinks the feasible set, so the refined
        # program can be infeasible at a threshold the full one tolerated;
        # keep the full-alphabet estimate in that case.
        return first, tx
    w_full = np.zeros(book.n_mixtures)
    w_full[sl] = refined.w_hat
    return RecoveryEstimate(x_hat=refined.x_hat, w_hat=w_full, active_set=refined.active_set,
                            status=refined.status, objective=refined.objective), tx


def constraint_slacks(
    estimate: RecoveryEstimate,
    y: np.ndarray,
    A: AffinityMatrix,
    cfg: ReceptionConfig,
    rcfg: RecoveryConfig,
    reception: np.ndarray | None = None,
) -> dict:
    """Direct substitution of a solution into the original constraints.

    Returns the worst slack per constraint family (nonnegative = satisfied),
    computed independently of any solver internals.
    """
    x = estimate.x_hat
    active, inactive = split_active(np.asarray(y))
    out = {}
    resid = y[active] - (A.values[active] @ x + (cfg.lambda_r - cfg.x_thr))
    out["C1"] = float(active.size * cfg.lambda_r * rcfg.epsilon - resid @ resid)
    if inactive.size:
        lhs = A.values[inactive] @ x + (cfg.lambda_r - cfg.x_thr)
        out["C2"] = float(np.min(np.sqrt(cfg.lambda_r * rcfg.epsilon) - lhs))
    else:
        out["C2"] = np.inf
    out["nonneg"] = float(min(x.min(), 0.0))
    if reception is not None and estimate.w_hat is not None:
        t = reception @ estimate.w_hat
        out["C3"] = float(np.min(rcfg.delta_value * t - (x - t) ** 2))
        out["nonneg"] = float(min(out["nonneg"], estimate.w_hat.min(), 0.0))
    return out


def detect_peak_mixture(w_hat: np.ndarray) -> np.ndarray:
    """One-hot decision at the largest mixture estimate (lowest index on ties)."""
    w_hat = np.asarray(w_hat, dtype=np.float64)
    if not np.all(np.isfinite(w_hat)):
        raise ValueError("w_hat must be finite")
    s = np.zeros(w_hat.size, dtype=np.int64)
    s[int(np.argmax(w_hat))] = 1
    return s


@dataclass(frozen=True)
class MatchedFilterBank:
    """Anticausal per-mixture filters whose taps sample the arrival curves."""

    coefficients: tuple   # per mixture: 1-D array, entry i is the tap at lag -i
    delta_t: float

    def __post_init__(self):
        coeffs = tuple(np.asarray(f, dtype=np.float64) for f in self.coefficients)
        for f in coeffs:
            f.flags.writeable = False
        object.__setattr__(self, "coefficients", coeffs)


def build_filter_bank(
    construction: np.ndarray,
    channels,
    delta_t: float,
    support_epsilon: float = 1e-3,
) -> MatchedFilterBank:
    """Matched filters f_m[-i] = sum_q c_q v_q(i dt) construction[q, m].

    The support L is minimal such that every constituent's arrival curve has
    decayed past its peak to below support_epsilon of the peak value; the
    per-type normalizer c_q is one over the (truncated) energy of the sampled
    curve.
    """
    if delta_t <= 0:
        raise ValueError("delta_t must be positive")
    Q, M = construction.shape
    c_norm = np.zeros(Q)
    supports = np.zeros(Q, dtype=int)
    for q in range(Q):
        ch = channels[q]
        peak = response_rate(ch, ch.peak_time)
        L = 1
        while True:
            t = L * delta_t
            if t >= ch.peak_time and response_rate(ch, t) < support_epsilon * peak:
                break
            L += 1
        supports[q] = L
        # Energy tail beyond the support threshold is negligible by construction,
        # but extend the sum until terms vanish so c_q does not depend on L.
        L_energy = L
        while response_rate(ch, L_energy * delta_t) > 1e-12 * peak:
            L_energy += 1
        taps = response_rate(ch, np.arange(L_energy + 1) * delta_t)
        c_norm[q] = 1.0 / float(taps @ taps)

    coefficients = []
    for m in range(M):
        constituents = np.nonzero(construction[:, m])[0]
        L = int(max(supports[q] for q in constituents))
        taps = np.zeros(L)
        for q in constituents:
            taps += c_norm[q] * construction[q, m] * response_rate(channels[q], np.arange(L) * delta_t)
        coefficients.append(taps)
    return MatchedFilterBank(coefficients=tuple(coefficients), delta_t=delta_t)


def matched_filter(w_series: np.ndarray, bank: MatchedFilterBank, mixture: int) -> np.ndarray:
    """Filter one mixture's concentration series; output has the input length.

    The filter is anticausal (taps at lags <= 0), so the output at sample j
    correlates the upcoming samples with the arrival-curve shape and peaks at
    release instants. The tail is zero-padded.
    """
    w_series = np.asarray(w_series, dtype=np.float64)
    taps = bank.coefficients[mixture]
    padded = np.concatenate([w_series, np.zeros(taps.size - 1)])
    return np.correlate(padded, taps, mode="valid")


def filter_mixture_series(w_matrix: np.ndarray, bank: MatchedFilterBank) -> np.ndarray:
    """Apply the bank columnwise to a (samples x mixtures) series."""
    return np.column_stack(
        [matched_filter(w_matrix[:, m], bank, m) for m in range(w_matrix.shape[1])]
    )


@dataclass(frozen=True)
class DetectedEvent:
    mixture: int
    sample_index: int   # 1-based, matching observation sample numbering
    time: float


def detect_release_events(
    filtered: np.ndarray,
    delta_t: float,
    rel_threshold: float = 0.5,
    min_separation: int = 5,
) -> list[DetectedEvent]:
    """Pick per-mixture local maxima above a global relative threshold.

    Candidate peaks are local maxima of each mixture's filtered series above
    rel_threshold times the global maximum across mixtures, thinned so that
    retained peaks of one mixture are at least min_separation samples apart;
    when several mixtures retain the same instant, only the strongest is
    reported (one release at a time).
    """
    filtered = np.atleast_2d(np.asarray(filtered, dtype=np.float64))
    J, M = filtered.shape
    global_max = filtered.max()
    if global_max <= 0:
        return []
    threshold = rel_threshold * global_max
    retained: dict[int, tuple[int, float]] = {}
    for m in range(M):
        series = filtered[:, m]
        candidates = []
        for j in range(J):
            left = series[j - 1] if j > 0 else -np.inf
            right = series[j + 1] if j < J - 1 else -np.inf
            if series[j] >= threshold and series[j] > left and series[j] >= right:
                candidates.append((series[j], j))
        candidates.sort(reverse=True)
        kept: list[int] = []
        for value, j in candidates:
            if all(abs(j - k) >= min_separation for k in kept):
                kept.append(j)
        for j in kept:
            value = series[j]
            if j not in retained or retained[j][1] < value:
                retained[j] = (m, value)
    return [
        DetectedEvent(mixture=m, sample_index=j + 1, time=j * delta_t)
        for j, (m, _) in sorted(retained.items())
    ]


def expected_observation(
    x: np.ndarray, A: AffinityMatrix, cfg: ReceptionConfig, noise_quantile: float = 1e-12
) -> np.ndarray:
    """Exact E[y | x] under Poisson receptor noise, by truncated series."""
    lam = cfg.lambda_r
    pre = A.values @ np.asarray(x, dtype=np.float64)
    if lam == 0:
        return relu(pre, cfg.x_thr)
    kmax = int(poisson_dist.isf(noise_quantile, lam)) + 1
    ks = np.arange(kmax + 1)
    pmf = poisson_dist.pmf(ks, lam)
    contrib = relu(pre[:, None] + ks[None, :], cfg.x_thr)
    return contrib @ pmf


def brute_force_sparse_oracle(
    y: np.ndarray,
    A: AffinityMatrix,
    cfg: ReceptionConfig,
    sparsity_cap: int = 3,
    grid: np.ndarray | None = None,
    epsilon_prime: float | None = None,
):
    """Exhaustive sparsest-support search on desk-scale instances.

    Enumerates supports by increasing size (capped at 3) and gridded
    concentrations, scoring each candidate by squared distance between y and
    the exact expected observation. If ``epsilon_prime`` is given, the
    sparsest candidate meeting that reconstruction bound wins; otherwise the
    global error minimizer (ties toward sparser, then smaller mass) is
    returned as (support, concentrations).
    """
    y = np.asarray(y, dtype=np.float64)
    Q = A.n_molecules
    if Q > 12:
        raise ValueError("oracle is limited to at most 12 molecule types")
    if sparsity_cap > 3:
        raise ValueError("oracle is limited to supports of size <= 3")
    if grid is None:
        grid = np.linspace(0.0, 150.0, 16)
    grid = np.asarray(grid, dtype=np.float64)

    best = None  # (error, size, mass, support, conc)
    for size in range(sparsity_cap + 1):
        level_best = None
        for support in combinations(range(Q), size):
            for conc in _grid_points(grid[grid > 0], size):
                x = np.zeros(Q)
                x[list(support)] = conc
                err = float(np.sum((y - expected_observation(x, A, cfg)) ** 2))
                key = (err, size, float(np.sum(conc)))
                if level_best is None or key < level_best[:3]:
                    level_best = (err, size, float(np.sum(conc)), support, np.array(conc))
        if level_best is None:
            continue
        if epsilon_prime is not None and level_best[0] <= epsilon_prime:
            return level_best[3], level_best[4]
        if best is None or level_best[:3] < best[:3]:
            best = level_best
    return best[3], best[4]


def _grid_points(grid: np.ndarray, size: int):
    if size == 0:
        yield ()
        return
    from itertools import product

    yield from product(grid, repeat=size)
