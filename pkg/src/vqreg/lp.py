"""Exact primal transport LP at tiny scale, used as ground truth in tests.

The primal problem pairs grid levels with data samples through a coupling
constrained to uniform marginals and mean independence:

    max_{P >= 0}  sum_ij u_i'y_j P_ij
    s.t.          P'1 = nu,   P 1 = mu,   P X = Xbar

It is solved by a dense two-phase simplex method with Bland's anti-cycling
rule.  Cubic cost is accepted here; the size guard keeps instances tiny.
"""

from dataclasses import dataclass

import numpy as np

from .cvqf import Dataset, QuantileGrid
from .errors import InfeasibleError, ShapeError, SizeLimitError, UnboundedError

MAX_LP_VARIABLES = 2000

_TOL = 1e-9
_PIVOT_TOL = 1e-11


@dataclass(frozen=True)
class LpInstance:
    """Equality-form LP: maximize c'x s.t. A x = b, x >= 0."""

    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    n_levels: int = 0
    n_samples: int = 0
    n_covariates: int = 0

    def __post_init__(self):
        c = np.asarray(self.c, dtype=np.float64)
        A = np.asarray(self.A, dtype=np.float64)
        b = np.asarray(self.b, dtype=np.float64)
        if A.shape != (b.shape[0], c.shape[0]):
            raise ShapeError(
                f"A has shape {A.shape}, expected ({b.shape[0]}, {c.shape[0]})"
            )
        for name, arr in (("c", c), ("A", A), ("b", b)):
            if not np.isfinite(arr).all():
                raise ShapeError(f"{name} contains non-finite entries")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)


def build_primal_lp(dataset: Dataset, grid: QuantileGrid) -> LpInstance:
    """Assemble the transport LP for a dataset and level grid.

    Variables are vec(P) in row-major order, so P_ij sits at index i*N + j.
    Rows are ordered: N sample-marginal rows, T^d level-marginal rows, then
    T^d rows per covariate for the mean-independence block.  The row set
    carries linear dependencies (1 + k of them); the solver eliminates
    redundant rows after a rank check.
    """
    n_levels, n = grid.n_points, dataset.n
    k = dataset.k
    if n_levels * n > MAX_LP_VARIABLES:
        raise SizeLimitError(
            f"LP would have {n_levels * n} variables (limit {MAX_LP_VARIABLES})"
        )
    n_vars = n_levels * n
    n_rows = n + n_levels * (k + 1)
    A = np.zeros((n_rows, n_vars))
    b = np.empty(n_rows)
    # P'1 = nu
    for j in range(n):
        A[j, j::n] = 1.0
        b[j] = 1.0 / n
    # P 1 = mu
    for i in range(n_levels):
        A[n + i, i * n : (i + 1) * n] = 1.0
        b[n + i] = 1.0 / n_levels
    # P X = Xbar, one block of T^d rows per covariate
    xbar = dataset.X.mean(axis=0) if k else np.empty(0)
    for c in range(k):
        base = n + n_levels * (1 + c)
        for i in range(n_levels):
            A[base + i, i * n : (i + 1) * n] = dataset.X[:, c]
            b[base + i] = xbar[c] / n_levels
    c_obj = (grid.levels @ dataset.Y.T).reshape(-1)
    return LpInstance(
        c=c_obj, A=A, b=b,
        n_levels=n_levels, n_samples=n, n_covariates=k,
    )


def _independent_rows(A: np.ndarray, b: np.ndarray):
    """Select a spanning independent row subset; reject inconsistent systems.

    Gaussian elimination with partial pivoting over the rows of [A | b]; the
    original rows that end up in pivot positions are kept, eliminated rows
    must have zero residual in both A and b.
    """
    m, n = A.shape
    work = np.hstack([A, b[:, None]]).astype(np.float64)
    orig = np.arange(m)
    r = 0
    for col in range(n):
        if r == m:
            break
        piv = r + int(np.argmax(np.abs(work[r:, col])))
        if abs(work[piv, col]) < _PIVOT_TOL:
            continue
        if piv != r:
            work[[r, piv]] = work[[piv, r]]
            orig[[r, piv]] = orig[[piv, r]]
        factors = work[r + 1 :, col] / work[r, col]
        work[r + 1 :] -= factors[:, None] * work[r]
        r += 1
    scale = max(1.0, float(np.abs(b).max()))
    for row in range(r, m):
        if abs(work[row, -1]) > _TOL * scale:
            raise InfeasibleError("equality constraints are inconsistent")
    keep = np.sort(orig[:r])
    return A[keep], b[keep]


def _bland_simplex(tab, basis, costs):
    """Maximize over a tableau in place with Bland's rule; returns status."""
    m = tab.shape[0]
    n_total = tab.shape[1] - 1
    while True:
        reduced = costs - costs[basis] @ tab[:, :n_total]
        enter = -1
        for j in range(n_total):
            if reduced[j] > _TOL:
                enter = j
                break
        if enter < 0:
            return "optimal"
        col = tab[:, enter]
        leave = -1
        best_ratio = np.inf
        for i in range(m):
            if col[i] > _PIVOT_TOL:
                ratio = tab[i, -1] / col[i]
                if ratio < best_ratio - _PIVOT_TOL or (
                    abs(ratio - best_ratio) <= _PIVOT_TOL
                    and (leave < 0 or basis[i] < basis[leave])
                ):
                    best_ratio = ratio
                    leave = i
        if leave < 0:
            return "unbounded"
        piv = tab[leave, enter]
        tab[leave] /= piv
        for i in range(m):
            if i != leave and abs(tab[i, enter]) > 0.0:
                tab[i] -= tab[i, enter] * tab[leave]
        basis[leave] = enter


def solve_lp_exact(instance: LpInstance):
    """Solve the LP to a vertex optimum; returns (plan or x, value).

    Two-phase dense simplex with Bland's rule, so cycling cannot occur.
    When the instance carries transport metadata the solution is reshaped to
    the (T^d, N) plan.  Raises on infeasible or unbounded problems.
    """
    A, b = _independent_rows(instance.A, instance.b)
    m, n = A.shape
    flip = b < 0
    A = np.where(flip[:, None], -A, A)
    b = np.where(flip, -b, b)
    # phase 1: drive artificial variables to zero
    tab = np.hstack([A, np.eye(m), b[:, None]])
    basis = np.arange(n, n + m)
    costs1 = np.concatenate([np.zeros(n), -np.ones(m)])
    status = _bland_simplex(tab, basis, costs1)
    if status != "optimal":  # phase 1 is always bounded
        raise InfeasibleError("phase 1 failed to terminate at an optimum")
    phase1_value = costs1[basis] @ tab[:, -1]
    if phase1_value < -_TOL * max(1.0, float(np.abs(b).max())):
        raise InfeasibleError("linear program is infeasible")
    # pivot lingering artificials out of the basis
    keep_rows = np.ones(m, dtype=bool)
    for i in range(m):
        if basis[i] >= n:
            piv_col = -1
            for j in range(n):
                if abs(tab[i, j]) > _PIVOT_TOL:
                    piv_col = j
                    break
            if piv_col < 0:
                keep_rows[i] = False
                continue
            piv = tab[i, piv_col]
            tab[i] /= piv
            for r in range(m):
                if r != i and abs(tab[r, piv_col]) > 0.0:
                    tab[r] -= tab[r, piv_col] * tab[i]
            basis[i] = piv_col
    if not keep_rows.all():
        tab = tab[keep_rows]
        basis = basis[keep_rows]
        m = tab.shape[0]
    # phase 2 on original objective
    tab = np.hstack([tab[:, :n], tab[:, -1:]])
    status = _bland_simplex(tab, basis, instance.c)
    if status == "unbounded":
        raise UnboundedError("linear program is unbounded")
    x = np.zeros(n)
    x[basis] = tab[:, -1]
    x[np.abs(x) < 1e-15] = 0.0
    value = float(instance.c @ x)
    if instance.n_levels and instance.n_samples:
        x = x.reshape(instance.n_levels, instance.n_samples)
    return x, value


def plan_barycenter(plan: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Quantile values implied by a plan: row i is sum_j P_ij y_j / mu_i."""
    plan = np.asarray(plan, dtype=np.float64)
    mu = plan.sum(axis=1)
    if (mu <= 0).any():
        raise ShapeError("plan has an empty row; barycenter undefined")
    return (plan @ np.asarray(targets, dtype=np.float64)) / mu[:, None]
