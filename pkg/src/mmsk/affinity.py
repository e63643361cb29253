"""Cross-reactive receptor-molecule affinity matrices.

An affinity matrix has one row per receptor type and one column per molecule
type; entry (r, q) is the normalized activation strength of receptor type r
under a unit concentration of molecule type q. Negative entries model
inhibition. Columns are constructed so that activation patterns of distinct
molecule types stay incoherent, which is what lets a small array discriminate
many molecule types.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rng import stream

DEFAULT_RETRY_CAP = 10**6

# Reference 10x20 matrix used throughout the test scenarios, stored to the
# two-decimal precision of its published form. Built with R_act=5, a_inh=0.3,
# mu_thr=0.5; two columns show only four nonzeros because a fifth entry fell
# below the print precision.
_FIXTURE_ROWS = [
    "    0      0      0      0      0   0.55      1   -0.1      0      0      0  -0.28   0.46   0.66      1      0   0.76  -0.14      0      0",
    "    0  -0.06   0.31   0.02      1      0      0   0.38   0.38  -0.29      0      0      1      0      0      0   0.81   0.99      0      0",
    "    0      0      1   0.52   0.38    0.6      0  -0.11      0      1      0      0      0      0      0   0.01   0.98      0      0      0",
    "    1   0.41      0      0      0      0   0.27      0    0.9      0  -0.25   0.65      0  -0.25      0      0      1      0      1   0.76",
    "    0      0      0      1      0      0  -0.01      0  -0.25      0   0.71  -0.17   0.73      0   0.38      0      0   -0.1   0.88   0.79",
    " 0.55   0.44   0.55      0  -0.25   0.29      0      1      0      0   0.31      0      0  -0.24   0.96   0.63  -0.24      0      0      0",
    " -0.3      1      0      0    0.5  -0.29      0      0   0.33    0.6      0      0      0      1   0.12  -0.17      0      0  -0.07   0.75",
    "    0      0   0.62      0      0      0      0  -0.19      1  -0.17      1      0   -0.2  -0.13    0.4   0.55      0      0      0   0.36",
    "-0.08   0.67      0      0      0      1  -0.21      0      0      0   0.45      1      0      0      0      0      0      1   0.77      0",
    " 0.16      0   -0.3   0.16   0.83      0   0.89      0      0   0.16      0   0.84  -0.18      0      0      1      0      0  -0.21      1",
]


@dataclass(frozen=True)
class AffinityParams:
    """Construction parameters for a semi-random affinity matrix."""

    R: int
    Q: int
    R_act: int
    a_inh: float
    mu_thr: float
    seed: int = 0

    def __post_init__(self):
        if self.R <= 0 or self.Q <= 0:
            raise ValueError("R and Q must be positive")
        if not (0 < self.R_act <= self.R):
            raise ValueError("R_act must satisfy 0 < R_act <= R")
        if not (0.0 <= self.a_inh <= 1.0):
            raise ValueError("a_inh must lie in [0, 1]")
        if not (0.0 < self.mu_thr <= 1.0):
            raise ValueError("mu_thr must lie in (0, 1]")


@dataclass(frozen=True)
class AffinityMatrix:
    """Immutable R x Q activation-strength matrix."""

    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError("affinity matrix must be 2-D")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def n_receptors(self) -> int:
        return self.values.shape[0]

    @property
    def n_molecules(self) -> int:
        return self.values.shape[1]

    def column(self, q: int) -> np.ndarray:
        return self.values[:, q]

    def restrict(self, molecule_indices) -> "AffinityMatrix":
        """Sub-array keeping only the given molecule columns."""
        return AffinityMatrix(self.values[:, list(molecule_indices)])


class CoherenceUnsatisfiableError(RuntimeError):
    """Raised when a column cannot be sampled under the coherence threshold."""


def mutual_coherence(a: np.ndarray, b: np.ndarray) -> float:
    """|a.b| / (|a| |b|) for two activation-pattern vectors, in [0, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("degenerate column")
    return float(min(abs(a @ b) / (na * nb), 1.0))


def _sample_column(params: AffinityParams, rng) -> np.ndarray:
    """One candidate column: R_act random positions, values in (0,1], affine-mapped."""
    col = np.zeros(params.R)
    positions = rng.permutation(params.R)[: params.R_act]
    raw = 1.0 - rng.random(params.R_act)  # uniform on (0, 1]
    top = int(np.argmax(raw))
    mapped = (raw / raw[top]) * (1.0 + params.a_inh) - params.a_inh
    mapped[top] = 1.0  # the normalized maximum is exactly one
    col[positions] = mapped
    return col


def construct_affinity(params: AffinityParams, retry_cap: int = DEFAULT_RETRY_CAP) -> AffinityMatrix:
    """Column-by-column rejection sampling under a pairwise coherence cap.

    Each column gets R_act randomly placed activations drawn uniformly on
    (0, 1], rescaled so the strongest is exactly 1 and the weakest can reach
    -a_inh. A candidate column is accepted only if its coherence against all
    previously accepted columns stays at or below mu_thr; otherwise it is
    resampled, up to ``retry_cap`` attempts.
    """
    rng = stream(params.seed, "affinity")
    columns = []
    for q in range(params.Q):
        for _ in range(retry_cap):
            cand = _sample_column(params, rng)
            if q == 0:
                columns.append(cand)
                break
            mu = max(mutual_coherence(cand, prev) for prev in columns)
            if mu <= params.mu_thr:
                columns.append(cand)
                break
        else:
            raise CoherenceUnsatisfiableError(
                f"coherence threshold unsatisfiable for column {q} "
                f"(mu_thr={params.mu_thr}, {retry_cap} attempts)"
            )
    return AffinityMatrix(np.column_stack(columns))


def load_fixture_affinity() -> AffinityMatrix:
    """The embedded 10x20 reference matrix, exact to its two-decimal entries."""
    rows = [[float(tok) for tok in line.split()] for line in _FIXTURE_ROWS]
    return AffinityMatrix(np.array(rows))


def fixture_params(seed: int = 0) -> AffinityParams:
    """Parameters the reference matrix was generated with."""
    return AffinityParams(R=10, Q=20, R_act=5, a_inh=0.3, mu_thr=0.5, seed=seed)


def validate_affinity(A: AffinityMatrix, params: AffinityParams, max_abs_tol: float = 1e-12) -> list[str]:
    """Check a matrix against the construction invariants.

    Returns a list of human-readable violations (empty when valid). The
    nonzero count per column is checked as "at most R_act": a serialized
    matrix can legitimately show fewer nonzeros than R_act because mapped
    entries may round to zero at finite print precision, but never more.
    """
    V = A.values
    if V.shape != (params.R, params.Q):
        raise ValueError(f"dimension mismatch: matrix {V.shape} vs params ({params.R}, {params.Q})")
    report: list[str] = []
    for q in range(params.Q):
        col = V[:, q]
        if col.min() < -params.a_inh - max_abs_tol:
            report.append(f"column {q}: entry below -a_inh ({col.min():.6g} < {-params.a_inh})")
        if col.max() > 1.0 + max_abs_tol:
            report.append(f"column {q}: entry above 1 ({col.max():.6g})")
        if abs(col.max() - 1.0) > max_abs_tol:
            report.append(f"column {q}: column max != 1 ({col.max():.6g})")
        nnz = int(np.count_nonzero(col))
        if nnz > params.R_act:
            report.append(f"column {q}: {nnz} nonzeros exceeds R_act={params.R_act}")
        if nnz == 0:
            report.append(f"column {q}: all-zero column")
    for q1 in range(params.Q):
        for q2 in range(q1 + 1, params.Q):
            mu = mutual_coherence(V[:, q1], V[:, q2])
            if mu > params.mu_thr + max_abs_tol:
                report.append(f"columns ({q1}, {q2}): coherence {mu:.6g} > mu_thr={params.mu_thr}")
    return report


def save_affinity_csv(A: AffinityMatrix, path) -> None:
    """Write one CSV row per receptor, entries at six significant digits."""
    with open(path, "w", encoding="utf-8") as fh:
        for row in A.values:
            fh.write(",".join(f"{v:.6g}" for v in row) + "\n")


def load_affinity_csv(path) -> AffinityMatrix:
    with open(path, "r", encoding="utf-8") as fh:
        rows = [[float(tok) for tok in line.strip().split(",")] for line in fh if line.strip()]
    return AffinityMatrix(np.array(rows))
