"""Mixture alphabet design: dissimilarity metric, molecule allocation, alphabets.

The dissimilarity metric scores how separable two mixtures look to the
receptor array: squared distance between the mean array responses, divided by
the response variance along the line connecting the two response clusters,
reported in dB. Greedy max-min selection then allocates molecules to
transmitters and builds per-transmitter mixture alphabets in which every pair
of mixtures stays above a separability threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .affinity import AffinityMatrix
from .channel import ReceptionConfig, relu
from .rng import poisson, stream

# Metric estimates are rounded to this many dB decimals before argmax
# comparisons so greedy tie-breaking is reproducible across platforms.
_TIE_DECIMALS = 9
_ZERO_NUMERATOR = 1e-12


@dataclass(frozen=True)
class Mixture:
    """A nonempty set of distinct molecule-type indices released together."""

    constituents: tuple

    def __post_init__(self):
        cons = tuple(sorted(int(q) for q in self.constituents))
        if not cons:
            raise ValueError("mixture must have at least one constituent")
        if len(set(cons)) != len(cons):
            raise ValueError("mixture constituents must be distinct")
        object.__setattr__(self, "constituents", cons)

    def __len__(self):
        return len(self.constituents)

    def __iter__(self):
        return iter(self.constituents)

    def fractions(self, Q: int) -> np.ndarray:
        """Composition vector: 1/size at each constituent, zero elsewhere."""
        frac = np.zeros(Q)
        frac[list(self.constituents)] = 1.0 / len(self.constituents)
        return frac


def as_mixture(m) -> Mixture:
    return m if isinstance(m, Mixture) else Mixture(tuple(m))


def enumerate_mixtures(pool, max_size: int) -> list[Mixture]:
    """All nonempty subsets of the pool with at most max_size constituents."""
    pool = sorted(pool)
    out = []
    for size in range(1, max_size + 1):
        out.extend(Mixture(c) for c in combinations(pool, size))
    return out


def mixture_expected_concentration(mix, x_bar_mix: float, Q: int) -> np.ndarray:
    """Uniform split of the expected mixture total over its constituents."""
    mix = as_mixture(mix)
    if x_bar_mix <= 0:
        raise ValueError("x_bar_mix must be positive")
    return mix.fractions(Q) * x_bar_mix


@dataclass(frozen=True)
class DissimilarityTable:
    """Symmetric pairwise metric table (dB) over a fixed mixture list."""

    mixtures: tuple
    values: np.ndarray = field(repr=False)
    mc_realizations: int = 0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mixtures", tuple(as_mixture(m) for m in self.mixtures))
        values = np.array(self.values, dtype=np.float64)
        if values.shape != (len(self.mixtures),) * 2:
            raise ValueError("table shape must match mixture count")
        if not np.allclose(values, values.T, equal_nan=True):
            raise ValueError("table must be symmetric")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    def value(self, i: int, j: int) -> float:
        if i == j:
            raise ValueError("diagonal is undefined")
        return float(self.values[i, j])

    def index_of(self, mix) -> int:
        return self.mixtures.index(as_mixture(mix))


def _mixture_response_stats(
    A: AffinityMatrix,
    mix: Mixture,
    x_bar_mix: float,
    cfg: ReceptionConfig,
    mc: int,
    rng,
    batch: int = 20000,
):
    """Sample mean and covariance of the array response to one mixture.

    Per realization, each constituent's count is an independent Poisson draw
    at the full mixture concentration scaled by its composition fraction
    (so the expected total is x_bar_mix), plus fresh receptor noise. Moments
    are accumulated in streaming batches so large mc stays in constant memory.
    """
    R, Q = A.values.shape
    frac = mix.fractions(Q)
    active = np.nonzero(frac)[0]
    A_active = A.values[:, active].T  # (n_active, R)
    sum_y = np.zeros(R)
    sum_yy = np.zeros((R, R))
    done = 0
    while done < mc:
        b = min(batch, mc - done)
        raw = poisson(rng, np.full((b, active.size), float(x_bar_mix)))
        x = raw * frac[active]
        n = poisson(rng, np.full((b, R), cfg.lambda_r))
        y = relu(x @ A_active + n, cfg.x_thr)
        sum_y += y.sum(axis=0)
        sum_yy += y.T @ y
        done += b
    mean = sum_y / mc
    cov = (sum_yy - mc * np.outer(mean, mean)) / (mc - 1)
    return mean, cov


def _metric_from_stats(stats1, stats2) -> float:
    mean1, cov1 = stats1
    mean2, cov2 = stats2
    diff = mean1 - mean2
    num = float(diff @ diff)
    if num < _ZERO_NUMERATOR:
        return -np.inf
    p = diff / np.sqrt(num)
    den = float(p @ cov1 @ p + p @ cov2 @ p)
    return float(10.0 * np.log10(num / den))


def dissimilarity(
    A: AffinityMatrix,
    mix1,
    mix2,
    x_bar_mix: float,
    cfg: ReceptionConfig,
    mc: int = 10000,
    seed: int = 0,
) -> float:
    """Monte Carlo dissimilarity (dB) between two mixtures.

    Each mixture's sample stream is keyed by its constituents, so the value
    is symmetric in the argument order and consistent with table filling.
    Returns -inf when the mean responses coincide.
    """
    mix1, mix2 = as_mixture(mix1), as_mixture(mix2)
    if mix1 == mix2:
        raise ValueError("mixtures must differ")
    if mc < 1000:
        raise ValueError("mc must be at least 1000")
    stats = [
        _mixture_response_stats(A, m, x_bar_mix, cfg, mc, stream(seed, "mix", *m.constituents))
        for m in (mix1, mix2)
    ]
    return _metric_from_stats(stats[0], stats[1])


def fill_dissimilarity_table(
    A: AffinityMatrix,
    mixtures,
    x_bar_mix: float,
    cfg: ReceptionConfig,
    mc: int = 10000,
    seed: int = 0,
) -> DissimilarityTable:
    """Pairwise table via one sample set per mixture, reused across pairs."""
    mixtures = [as_mixture(m) for m in mixtures]
    stats = [
        _mixture_response_stats(A, m, x_bar_mix, cfg, mc, stream(seed, "mix", *m.constituents))
        for m in mixtures
    ]
    n = len(mixtures)
    values = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            values[i, j] = values[j, i] = _metric_from_stats(stats[i], stats[j])
    return DissimilarityTable(tuple(mixtures), values, mc_realizations=mc, seed=seed)


def _rounded(values: np.ndarray) -> np.ndarray:
    return np.round(values, _TIE_DECIMALS)


def allocate_molecules(table: DissimilarityTable, K: int, Q_tx: int) -> list[tuple]:
    """Greedy molecule-to-transmitter allocation over a singleton metric table.

    Seeds each transmitter in turn with the remaining most-dissimilar pair,
    then repeatedly gives the globally best (transmitter, molecule) addition
    under the max-min criterion until every transmitter holds Q_tx molecules.
    Ties break toward the lowest index after rounding the metric.
    """
    n = len(table.mixtures)
    if any(len(m) != 1 for m in table.mixtures):
        raise ValueError("allocation table must be over singleton mixtures")
    if K * Q_tx > n:
        raise ValueError(f"cannot allocate {K}x{Q_tx} molecules from {n}")
    D = _rounded(table.values)
    molecule = [m.constituents[0] for m in table.mixtures]
    remaining = list(range(n))
    alloc: list[list[int]] = [[] for _ in range(K)]

    for k in range(K):
        pairs = [(D[i, j], i, j) for i, j in combinations(remaining, 2)]
        best = max(d for d, _, _ in pairs)
        i, j = min((i, j) for d, i, j in pairs if d == best)
        alloc[k] = [i, j]
        remaining.remove(i)
        remaining.remove(j)

    while any(len(a) < Q_tx for a in alloc):
        candidates = []
        for k in range(K):
            if len(alloc[k]) >= Q_tx:
                continue
            scores = [(min(D[q, qp] for qp in alloc[k]), q) for q in remaining]
            best_score = max(s for s, _ in scores)
            q = min(q for s, q in scores if s == best_score)
            candidates.append((best_score, k, q))
        best_score = max(s for s, _, _ in candidates)
        k, q = min((k, q) for s, k, q in candidates if s == best_score)
        alloc[k].append(q)
        remaining.remove(q)

    return [tuple(sorted(molecule[i] for i in a)) for a in alloc]


def build_alphabet(table: DissimilarityTable, d_thr: float) -> list[Mixture]:
    """Greedy distinguishable-alphabet construction over a mixture table.

    Starts from the most dissimilar pair (empty result if even that pair
    falls below d_thr), then keeps adding the candidate whose minimum metric
    against the current alphabet is largest, stopping once that max-min
    drops below d_thr or candidates run out. Every pair in the result is
    then at least d_thr apart according to the same table.
    """
    n = len(table.mixtures)
    D = _rounded(table.values)
    if n < 2:
        return []
    pairs = [(D[i, j], i, j) for i, j in combinations(range(n), 2)]
    best = max(d for d, _, _ in pairs)
    if best < d_thr:
        return []
    i0, j0 = min((i, j) for d, i, j in pairs if d == best)
    selected = [i0, j0]
    while len(selected) < n:
        rest = [m for m in range(n) if m not in selected]
        scores = [(min(D[m, s] for s in selected), m) for m in rest]
        best_score = max(s for s, _ in scores)
        if best_score < d_thr:
            break
        m = min(m for s, m in scores if s == best_score)
        selected.append(m)
    return [table.mixtures[i] for i in selected]


def alphabet_min_metrics(table: DissimilarityTable, alphabet) -> list[float]:
    """Min pairwise metric after each addition, in alphabet order (first entry nan)."""
    idx = [table.index_of(m) for m in alphabet]
    out = [np.nan]
    for t in range(2, len(idx) + 1):
        sub = idx[:t]
        out.append(min(table.values[i, j] for i, j in combinations(sub, 2)))
    return out


def build_construction_matrix(alphabet, Q: int) -> np.ndarray:
    """Composition matrix: one column per mixture, fractions summing to one."""
    alphabet = [as_mixture(m) for m in alphabet]
    if not alphabet:
        raise ValueError("alphabet must be nonempty")
    return np.column_stack([m.fractions(Q) for m in alphabet])


def build_reception_matrix(construction: np.ndarray, gammas: np.ndarray) -> np.ndarray:
    """Composition as seen at the receiver, reweighted by capture fractions.

    Column m becomes construction[:, m] * gamma, renormalized to sum to one;
    equal capture fractions leave the construction matrix unchanged.
    """
    gammas = np.asarray(gammas, dtype=np.float64)
    if np.any(gammas <= 0):
        raise ValueError("capture fractions must be positive")
    weighted = construction * gammas[:, None]
    col_sums = weighted.sum(axis=0)
    if np.any(col_sums <= 0):
        raise ValueError("mixture invisible at receiver")
    return weighted / col_sums


@dataclass(frozen=True)
class MixtureBook:
    """Per-transmitter molecule allocations and mixture alphabets.

    ``construction`` and ``reception`` hold one column per mixture across all
    transmitters, concatenated in transmitter order; ``alphabets[k]`` lists
    transmitter k's mixtures in the order the greedy construction accepted
    them.
    """

    allocations: tuple                 # K disjoint tuples of molecule indices
    alphabets: tuple                   # K tuples of Mixture
    construction: np.ndarray = field(repr=False)
    reception: np.ndarray = field(repr=False)
    x_bar_mix: float = 0.0
    min_metrics: tuple = ()            # per Tx: min pairwise metric per alphabet size

    def __post_init__(self):
        allocations = tuple(tuple(a) for a in self.allocations)
        alphabets = tuple(tuple(as_mixture(m) for m in alph) for alph in self.alphabets)
        seen: set[int] = set()
        for a in allocations:
            if seen & set(a):
                raise ValueError("allocations must be disjoint")
            seen |= set(a)
        for a, alph in zip(allocations, alphabets):
            for m in alph:
                if not set(m.constituents) <= set(a):
                    raise ValueError("mixture uses molecules outside its allocation")
        construction = np.array(self.construction, dtype=np.float64)
        reception = np.array(self.reception, dtype=np.float64)
        for mat, name in ((construction, "construction"), (reception, "reception")):
            if np.any(mat < 0):
                raise ValueError(f"{name} matrix must be nonnegative")
            if not np.allclose(mat.sum(axis=0), 1.0, atol=1e-9):
                raise ValueError(f"{name} columns must sum to 1")
        construction.flags.writeable = False
        reception.flags.writeable = False
        object.__setattr__(self, "allocations", allocations)
        object.__setattr__(self, "alphabets", alphabets)
        object.__setattr__(self, "construction", construction)
        object.__setattr__(self, "reception", reception)
        object.__setattr__(self, "min_metrics", tuple(tuple(v) for v in self.min_metrics))

    @property
    def n_transmitters(self) -> int:
        return len(self.allocations)

    @property
    def n_mixtures(self) -> int:
        return self.construction.shape[1]

    @property
    def mixtures(self) -> list[Mixture]:
        return [m for alph in self.alphabets for m in alph]

    def tx_slices(self) -> list[slice]:
        """Column range of each transmitter within the concatenated matrices."""
        out, start = [], 0
        for alph in self.alphabets:
            out.append(slice(start, start + len(alph)))
            start += len(alph)
        return out

    def tx_of_mixture(self, m: int) -> int:
        for k, sl in enumerate(self.tx_slices()):
            if sl.start <= m < sl.stop:
                return k
        raise IndexError(f"mixture column {m} out of range")

    def to_dict(self) -> dict:
        return {
            "x_bar_mix": self.x_bar_mix,
            "allocations": [list(a) for a in self.allocations],
            "alphabets": [[list(m.constituents) for m in alph] for alph in self.alphabets],
            "min_metrics": [list(v) for v in self.min_metrics],
            "construction": self.construction.tolist(),
            "reception": self.reception.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MixtureBook":
        return cls(
            allocations=tuple(tuple(a) for a in d["allocations"]),
            alphabets=tuple(tuple(Mixture(tuple(m)) for m in alph) for alph in d["alphabets"]),
            construction=np.array(d["construction"]),
            reception=np.array(d["reception"]),
            x_bar_mix=float(d["x_bar_mix"]),
            min_metrics=tuple(tuple(v) for v in d.get("min_metrics", ())),
        )


def design_mixture_book(
    A: AffinityMatrix,
    K: int,
    Q_tx: int,
    M_mix: int,
    d_thr: float,
    x_bar_mix: float,
    gammas: np.ndarray,
    mc: int = 10000,
    seed: int = 0,
    alphabet_size: int | None = None,
) -> MixtureBook:
    """End-to-end design: allocate molecules, build per-Tx alphabets, matrices.

    With ``d_thr=-inf`` the greedy ranks every candidate mixture; passing
    ``alphabet_size`` then truncates each alphabet to its best prefix, which
    is how fixed-size alphabets are produced for the error-rate experiments.
    """
    cfg = ReceptionConfig()  # metric uses only lambda_r / x_thr defaults unless overridden
    return design_mixture_book_with_cfg(
        A, K, Q_tx, M_mix, d_thr, x_bar_mix, gammas, cfg, mc=mc, seed=seed, alphabet_size=alphabet_size
    )


def design_mixture_book_with_cfg(
    A: AffinityMatrix,
    K: int,
    Q_tx: int,
    M_mix: int,
    d_thr: float,
    x_bar_mix: float,
    gammas: np.ndarray,
    cfg: ReceptionConfig,
    mc: int = 10000,
    seed: int = 0,
    alphabet_size: int | None = None,
) -> MixtureBook:
    Q = A.n_molecules
    singles = [Mixture((q,)) for q in range(Q)]
    singleton_table = fill_dissimilarity_table(A, singles, x_bar_mix, cfg, mc=mc, seed=seed)
    allocations = allocate_molecules(singleton_table, K, Q_tx)

    alphabets, min_metrics = [], []
    for k, pool in enumerate(allocations):
        candidates = enumerate_mixtures(pool, M_mix)
        table = fill_dissimilarity_table(A, candidates, x_bar_mix, cfg, mc=mc, seed=seed)
        alphabet = build_alphabet(table, d_thr)
        if alphabet_size is not None:
            if len(alphabet) < alphabet_size:
                raise ValueError(
                    f"transmitter {k}: alphabet has {len(alphabet)} mixtures, "
                    f"need {alphabet_size}"
                )
            alphabet = alphabet[:alphabet_size]
        alphabets.append(tuple(alphabet))
        min_metrics.append(tuple(alphabet_min_metrics(table, alphabet)))

    flat = [m for alph in alphabets for m in alph]
    construction = build_construction_matrix(flat, Q)
    reception = build_reception_matrix(construction, gammas)
    return MixtureBook(
        allocations=tuple(allocations),
        alphabets=tuple(alphabets),
        construction=construction,
        reception=reception,
        x_bar_mix=x_bar_mix,
        min_metrics=tuple(min_metrics),
    )


def random_mixture_book(
    allocations,
    alphabet_size: int,
    Q: int,
    gammas: np.ndarray,
    x_bar_mix: float,
    seed: int = 0,
    mixture_size: int = 2,
) -> MixtureBook:
    """Alphabets of uniformly random fixed-size mixtures, for baseline comparisons."""
    rng = stream(seed, "random-book")
    alphabets = []
    for pool in allocations:
        candidates = [Mixture(c) for c in combinations(sorted(pool), mixture_size)]
        if len(candidates) < alphabet_size:
            raise ValueError("not enough candidate mixtures for requested alphabet size")
        picks = rng.permutation(len(candidates))[:alphabet_size]
        alphabets.append(tuple(candidates[i] for i in sorted(picks)))
    flat = [m for alph in alphabets for m in alph]
    construction = build_construction_matrix(flat, Q)
    reception = build_reception_matrix(construction, gammas)
    return MixtureBook(
        allocations=tuple(tuple(a) for a in allocations),
        alphabets=tuple(alphabets),
        construction=construction,
        reception=reception,
        x_bar_mix=x_bar_mix,
        min_metrics=(),
    )
