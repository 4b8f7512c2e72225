"""Vector monotone rearrangement of a discrete quantile surface.

A fitted quantile surface may violate co-monotonicity because the relaxed
problem does not enforce the exact dual constraints.  Rearrangement permutes
the tabulated values so they become co-monotone with the levels, by solving
the exact uniform-marginal transport problem between the level grid and the
value rows with the inner product as score.  Uniform marginals make an
optimal plan a permutation matrix, so the problem is solved exactly as a
linear assignment.  In one dimension this reduces to sorting.
"""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .cvqf import DiscreteCVQF
from .errors import ShapeError, SizeLimitError

# Assignment is exact but cubic; keep it at desk scale.
MAX_ASSIGNMENT_SIZE = 10_000

_MARGINAL_TOL = 1e-9


@dataclass(frozen=True)
class TransportPlan:
    """Nonnegative coupling matrix with uniform marginal metadata."""

    matrix: np.ndarray
    row_marginal: np.ndarray
    col_marginal: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2:
            raise ShapeError("plan must be a matrix")
        if (m < 0).any():
            raise ShapeError("plan has negative entries")
        r = np.asarray(self.row_marginal, dtype=np.float64)
        c = np.asarray(self.col_marginal, dtype=np.float64)
        if np.abs(m.sum(axis=1) - r).max() > _MARGINAL_TOL:
            raise ShapeError("row sums deviate from the row marginal")
        if np.abs(m.sum(axis=0) - c).max() > _MARGINAL_TOL:
            raise ShapeError("column sums deviate from the column marginal")
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "row_marginal", r)
        object.__setattr__(self, "col_marginal", c)


def permutation_plan(sigma: np.ndarray) -> TransportPlan:
    """Uniform-marginal plan induced by a permutation, entries 1/n."""
    sigma = np.asarray(sigma, dtype=np.intp)
    n = sigma.shape[0]
    m = np.zeros((n, n))
    m[np.arange(n), sigma] = 1.0 / n
    u = np.full(n, 1.0 / n)
    return TransportPlan(matrix=m, row_marginal=u, col_marginal=u)


def solve_assignment(scores: np.ndarray) -> np.ndarray:
    """Permutation sigma maximizing sum_i scores[i, sigma(i)].

    Tie handling is deterministic: the identity permutation is returned
    whenever it attains the optimum (it is the lexicographically smallest
    permutation overall), and ties caused by duplicate score columns are
    broken by assigning ascending rows to ascending column indices.  Exact
    ties between distinct columns are not otherwise canonicalized.
    """
    S = np.asarray(scores, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ShapeError(f"scores must be square, got {S.shape}")
    if not np.isfinite(S).all():
        raise ShapeError("scores contain non-finite entries")
    n = S.shape[0]
    if n > MAX_ASSIGNMENT_SIZE:
        raise SizeLimitError(
            f"assignment size {n} exceeds {MAX_ASSIGNMENT_SIZE}; rearrangement "
            "is exact and cubic, reduce T or d"
        )
    rows, cols = linear_sum_assignment(S, maximize=True)
    sigma = np.empty(n, dtype=np.intp)
    sigma[rows] = cols
    best = float(S[np.arange(n), sigma].sum())
    scale = max(1.0, float(np.abs(S).max()))
    if float(np.trace(S)) >= best - 1e-9 * scale:
        return np.arange(n, dtype=np.intp)
    return _canonicalize_duplicates(S, sigma)


def _canonicalize_duplicates(S: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """Within groups of byte-identical columns, map ascending rows to
    ascending column indices; the objective value is unchanged."""
    n = S.shape[0]
    order = np.lexsort(S)  # groups identical columns together
    sigma = sigma.copy()
    start = 0
    for stop in range(1, n + 1):
        if stop == n or not np.array_equal(S[:, order[stop]], S[:, order[start]]):
            if stop - start > 1:
                group = np.sort(order[start:stop])
                members = np.sort(
                    np.flatnonzero(np.isin(sigma, group))
                )
                sigma[members] = group
            start = stop
    return sigma


def rearrange(cvqf: DiscreteCVQF) -> DiscreteCVQF:
    """Permute the quantile surface into a co-monotone one.

    Output rows are a permutation of the input rows, chosen so every level
    pair satisfies (u_i - u_j)'(Q_i - Q_j) >= 0.  Already co-monotone
    surfaces that decode from a convex potential are returned unchanged, and
    the operation is idempotent.
    """
    scores = cvqf.grid.levels @ cvqf.values.T
    sigma = solve_assignment(scores)
    return DiscreteCVQF(grid=cvqf.grid, values=cvqf.values[sigma], x=cvqf.x)
