"""Quantile-level grids and discrete (conditional) vector quantile functions.

A vector quantile function is tabulated on a regular lattice of levels in
(0, 1]^d.  This module owns the lattice itself, the containers for data and
tabulated quantile surfaces, decoding of a scalar potential into quantile
values, alpha-contours, and vector-rank inversion.  Everything here is a pure
function over immutable inputs.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, SizeLimitError

# Hard cap on the number of lattice points a grid may hold.
MAX_GRID_POINTS = 10**8


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class QuantileGrid:
    """Lattice of T^d vector quantile levels.

    ``levels`` has shape (T^d, d); row i holds the level vector u_i with every
    coordinate in {1/T, ..., 1}.  Rows are ordered lexicographically with the
    last coordinate varying fastest, so axis ``a`` has row stride T^(d-1-a).
    """

    T: int
    d: int
    levels: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "levels", _freeze(self.levels))
        if self.levels.shape != (self.T**self.d, self.d):
            raise ShapeError(
                f"levels shape {self.levels.shape} does not match "
                f"(T^d, d) = ({self.T ** self.d}, {self.d})"
            )

    @property
    def n_points(self) -> int:
        return self.T**self.d

    def axis_stride(self, axis: int) -> int:
        return self.T ** (self.d - 1 - axis)


@dataclass(frozen=True)
class Dataset:
    """Covariate matrix X (N x k, k=0 allowed) and target matrix Y (N x d)."""

    X: np.ndarray
    Y: np.ndarray
    seed: int = 0
    name: str = ""

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        Y = np.asarray(self.Y, dtype=np.float64)
        if X.ndim != 2 or Y.ndim != 2:
            raise ShapeError("X and Y must be 2-d arrays")
        if X.shape[0] != Y.shape[0]:
            raise ShapeError(
                f"X has {X.shape[0]} rows but Y has {Y.shape[0]}"
            )
        if Y.shape[0] < 1:
            raise ShapeError("dataset must contain at least one sample")
        if X.size and not np.isfinite(X).all():
            raise ShapeError("X contains non-finite entries")
        if not np.isfinite(Y).all():
            raise ShapeError("Y contains non-finite entries")
        object.__setattr__(self, "X", _freeze(X))
        object.__setattr__(self, "Y", _freeze(Y))

    @property
    def n(self) -> int:
        return self.Y.shape[0]

    @property
    def k(self) -> int:
        return self.X.shape[1]

    @property
    def d(self) -> int:
        return self.Y.shape[1]


@dataclass(frozen=True)
class DiscreteCVQF:
    """Quantile surface tabulated on a grid: row i holds Q(u_i; x).

    ``x`` is the conditioning covariate vector, or None for an unconditional
    quantile function.
    """

    grid: QuantileGrid
    values: np.ndarray
    x: np.ndarray | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != (self.grid.n_points, self.grid.d):
            raise ShapeError(
                f"values shape {values.shape} does not match grid "
                f"({self.grid.n_points}, {self.grid.d})"
            )
        if not np.isfinite(values).all():
            raise ShapeError("values contain non-finite entries")
        object.__setattr__(self, "values", _freeze(values))
        if self.x is not None:
            object.__setattr__(self, "x", _freeze(np.atleast_1d(self.x)))


@dataclass(frozen=True)
class ContourSpec:
    """Grid-row indices forming the alpha-contour level set.

    ``alpha`` is the confidence parameter after snapping to the grid.  Every
    selected level vector has all off-axis coordinates in {alpha, 1-alpha}
    and its on-axis coordinate inside [alpha, 1-alpha].
    """

    alpha: float
    indices: np.ndarray = field(repr=False)

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.intp)
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)


def make_grid(T: int, d: int) -> QuantileGrid:
    """Build the lattice of T^d vector quantile levels.

    Levels per axis are 1/T, 2/T, ..., 1.  Rows are ordered
    lexicographically with the last axis varying fastest; the ordering is a
    deterministic function of (T, d).
    """
    if T < 1 or d < 1:
        raise ShapeError("T and d must be positive integers")
    if T**d > MAX_GRID_POINTS:
        raise SizeLimitError(
            f"grid would hold T^d = {T ** d} points (limit {MAX_GRID_POINTS})"
        )
    axis = np.arange(1, T + 1, dtype=np.float64) / T
    mesh = np.meshgrid(*([axis] * d), indexing="ij")
    levels = np.stack([m.reshape(-1) for m in mesh], axis=1)
    return QuantileGrid(T=T, d=d, levels=levels)


def decode_potential(potential: np.ndarray, grid: QuantileGrid) -> DiscreteCVQF:
    """Decode a scalar potential on the grid into quantile values.

    Column a of the result holds the discrete partial derivative of the
    potential along grid axis a: forward difference scaled by T at interior
    points, backward difference at the upper boundary (coordinate equal to 1).
    Decoding is linear in the potential.
    """
    f = np.asarray(potential, dtype=np.float64).reshape(-1)
    if f.shape[0] != grid.n_points:
        raise ShapeError(
            f"potential has length {f.shape[0]}, expected {grid.n_points}"
        )
    T, d = grid.T, grid.d
    cube = f.reshape((T,) * d)
    values = np.empty((grid.n_points, d))
    for a in range(d):
        g = np.empty_like(cube)
        lo = [slice(None)] * d
        hi = [slice(None)] * d
        lo[a], hi[a] = slice(0, T - 1), slice(1, T)
        diff = (cube[tuple(hi)] - cube[tuple(lo)]) * T
        g[tuple(lo)] = diff
        if T > 1:
            last = [slice(None)] * d
            last[a] = slice(T - 1, T)
            prev = [slice(None)] * d
            prev[a] = slice(T - 2, T - 1)
            g[tuple(last)] = (cube[tuple(last)] - cube[tuple(prev)]) * T
        else:
            g[...] = 0.0
        values[:, a] = g.reshape(-1)
    return DiscreteCVQF(grid=grid, values=values)


def snap_alpha(alpha: float, T: int) -> float:
    """Snap alpha to the nearest grid level m/T, ties toward the smaller m."""
    if not 0.0 < alpha < 0.5:
        raise ShapeError(f"alpha must lie in (0, 0.5), got {alpha}")
    m_hi = max(T - 1, 1)
    candidates = np.arange(1, m_hi + 1, dtype=np.float64) / T
    dist = np.abs(candidates - alpha)
    return float(candidates[int(np.argmin(dist))])


def alpha_contour(
    cvqf: DiscreteCVQF, alpha: float
) -> tuple[ContourSpec, np.ndarray]:
    """Select the grid rows forming the alpha-contour and their values.

    The contour level set is the union over axes a of all lattice points
    whose off-axis coordinates each equal alpha or 1-alpha and whose axis-a
    coordinate lies in [alpha, 1-alpha].  For d=1 this degenerates to the two
    interval endpoints.  Returns the contour spec and the quantile values at
    the selected rows.
    """
    grid = cvqf.grid
    a_snap = snap_alpha(alpha, grid.T)
    lo, hi = a_snap, 1.0 - a_snap
    lv = grid.levels
    tol = 1e-12
    at_edge = (np.abs(lv - lo) < tol) | (np.abs(lv - hi) < tol)
    inside = (lv > lo - tol) & (lv < hi + tol)
    if grid.d == 1:
        mask = at_edge[:, 0]
    else:
        mask = np.zeros(grid.n_points, dtype=bool)
        for axis in range(grid.d):
            others = [a for a in range(grid.d) if a != axis]
            mask |= inside[:, axis] & at_edge[:, others].all(axis=1)
    indices = np.flatnonzero(mask)
    spec = ContourSpec(alpha=a_snap, indices=indices)
    return spec, cvqf.values[indices]


def invert_cvqf(cvqf: DiscreteCVQF, y: np.ndarray) -> int:
    """Vector rank of y: index of the grid row with the closest quantile.

    Returns argmin_i ||y - Q(u_i)||_2 with ties broken toward the smallest
    row index.
    """
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.shape[0] != cvqf.grid.d:
        raise ShapeError(
            f"y has length {y.shape[0]}, expected {cvqf.grid.d}"
        )
    diff = cvqf.values - y
    return int(np.argmin(np.einsum("ij,ij->i", diff, diff)))


def invert_cvqf_many(cvqf: DiscreteCVQF, ys: np.ndarray) -> np.ndarray:
    """Row-wise :func:`invert_cvqf` for an (M, d) batch of targets."""
    ys = np.asarray(ys, dtype=np.float64)
    if ys.ndim != 2 or ys.shape[1] != cvqf.grid.d:
        raise ShapeError("ys must have shape (M, d)")
    out = np.empty(ys.shape[0], dtype=np.intp)
    q = cvqf.values
    q_sq = np.einsum("ij,ij->i", q, q)
    # chunk over samples so the distance matrix stays small
    step = max(1, int(4e6) // max(1, q.shape[0]))
    for s in range(0, ys.shape[0], step):
        block = ys[s : s + step]
        d2 = q_sq[None, :] - 2.0 * block @ q.T
        out[s : s + step] = np.argmin(d2, axis=1)
    return out


def separable_cvqf(per_dim: list[DiscreteCVQF]) -> DiscreteCVQF:
    """Compose d one-dimensional quantile functions into a separable one.

    Grid row (u_1, ..., u_d) maps to (Q_1(u_1), ..., Q_d(u_d)).  All inputs
    must share the same T and have d=1.
    """
    if not per_dim:
        raise ShapeError("per_dim must be non-empty")
    T = per_dim[0].grid.T
    for c in per_dim:
        if c.grid.d != 1:
            raise ShapeError("separable components must be one-dimensional")
        if c.grid.T != T:
            raise ShapeError("separable components must share T")
    d = len(per_dim)
    grid = make_grid(T, d)
    # level index along axis a for each grid row
    m = np.rint(grid.levels * T).astype(np.intp) - 1
    values = np.column_stack(
        [per_dim[a].values[m[:, a], 0] for a in range(d)]
    )
    return DiscreteCVQF(grid=grid, values=values)
