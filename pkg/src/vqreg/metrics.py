"""Evaluation metrics for estimated quantile surfaces.

Distribution distance is measured between kernel density estimates of model
samples and ground-truth samples; estimation error against a proxy truth
fitted on conditional samples; uniformity of the inverse map via a normalized
entropy; and co-monotonicity violations directly.  Confidence-set metrics
(marginal coverage, hull area, alpha calibration) operate on alpha-contours.
All functions are pure; fan-out over conditioning values is embarrassingly
parallel but run sequentially here.
"""

from dataclasses import dataclass, field

import numpy as np

from .cvqf import DiscreteCVQF, alpha_contour, invert_cvqf_many
from .errors import CalibrationError, NumericError, ShapeError

_SUM_TOL = 1e-9


@dataclass(frozen=True)
class KdeGrid:
    """Gaussian-kernel density on a regular bin-center lattice, summing to 1."""

    bins: int
    sigma: float
    bounds: tuple
    density: np.ndarray

    def __post_init__(self):
        dens = np.asarray(self.density, dtype=np.float64)
        if (dens < 0).any():
            raise ShapeError("density has negative entries")
        if abs(dens.sum() - 1.0) > _SUM_TOL:
            raise ShapeError("density does not sum to 1")
        dens.setflags(write=False)
        object.__setattr__(self, "density", dens)
        object.__setattr__(self, "bounds", tuple(map(tuple, self.bounds)))


@dataclass
class MetricReport:
    """Bundle of metric values; absent metrics stay None.

    Serialized with fixed JSON keys: kde_l1, qfd, entropy, entropy_ref, mv,
    coverage, area, meta.
    """

    kde_l1: float | None = None
    qfd: float | None = None
    entropy: float | None = None
    entropy_reference: float | None = None
    mv_fraction: float | None = None
    coverage: float | None = None
    confidence_area: float | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("kde_l1", "qfd", "entropy", "entropy_reference",
                     "mv_fraction", "coverage", "confidence_area"):
            v = getattr(self, name)
            if v is not None and not np.isfinite(v):
                raise ShapeError(f"{name} is not finite")
        for name in ("mv_fraction", "coverage"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ShapeError(f"{name}={v} outside [0, 1]")

    def to_json_dict(self) -> dict:
        return {
            "kde_l1": self.kde_l1,
            "qfd": self.qfd,
            "entropy": self.entropy,
            "entropy_ref": self.entropy_reference,
            "mv": self.mv_fraction,
            "coverage": self.coverage,
            "area": self.confidence_area,
            "meta": self.metadata,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "MetricReport":
        return cls(
            kde_l1=d.get("kde_l1"),
            qfd=d.get("qfd"),
            entropy=d.get("entropy"),
            entropy_reference=d.get("entropy_ref"),
            mv_fraction=d.get("mv"),
            coverage=d.get("coverage"),
            confidence_area=d.get("area"),
            metadata=d.get("meta", {}),
        )


def _bin_centers(lo: float, hi: float, bins: int) -> np.ndarray:
    edges = np.linspace(lo, hi, bins + 1)
    return 0.5 * (edges[:-1] + edges[1:])


def _default_bounds(samples: np.ndarray, sigma: float):
    return [
        (float(samples[:, a].min() - 3.0 * sigma),
         float(samples[:, a].max() + 3.0 * sigma))
        for a in range(samples.shape[1])
    ]


def kde(samples: np.ndarray, bins: int = 100, sigma: float = 0.05,
        bounds=None) -> KdeGrid:
    """Isotropic Gaussian KDE evaluated on the bin-center lattice.

    Supports d in {1, 2}.  Default bounds are the per-axis sample range
    padded by 3*sigma.  The returned density is normalized to sum to 1.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim == 1:
        samples = samples[:, None]
    if samples.shape[0] == 0:
        raise ShapeError("kde requires at least one sample")
    d = samples.shape[1]
    if d not in (1, 2):
        raise ShapeError(f"kde supports d in {{1, 2}}, got d={d}")
    if sigma <= 0:
        raise ShapeError("sigma must be positive")
    if bounds is None:
        bounds = _default_bounds(samples, sigma)
    kernels = []
    for a in range(d):
        centers = _bin_centers(bounds[a][0], bounds[a][1], bins)
        z = (centers[:, None] - samples[None, :, a]) / sigma
        kernels.append(np.exp(-0.5 * z * z))
    if d == 1:
        density = kernels[0].sum(axis=1)
    else:
        density = kernels[0] @ kernels[1].T
    total = density.sum()
    if total <= 0:
        raise NumericError("all density mass fell outside the grid")
    return KdeGrid(bins=bins, sigma=sigma, bounds=bounds, density=density / total)


def kde_l1(samples_a: np.ndarray, samples_b: np.ndarray,
           bins: int = 100, sigma: float = 0.05) -> float:
    """L1 distance between the KDEs of two sample sets on shared bounds.

    Bounds cover the union of both sets padded by 3*sigma; the value lies
    in [0, 2] and is 0 exactly for identical inputs.
    """
    a = np.atleast_2d(np.asarray(samples_a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(samples_b, dtype=np.float64))
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ShapeError("kde_l1 requires non-empty sample sets")
    if a.ndim == 2 and a.shape[1] != b.shape[1]:
        raise ShapeError("sample sets must share dimension")
    bounds = _default_bounds(np.vstack([a, b]), sigma)
    fa = kde(a, bins=bins, sigma=sigma, bounds=bounds)
    fb = kde(b, bins=bins, sigma=sigma, bounds=bounds)
    return float(np.abs(fa.density - fb.density).sum())


def qfd(estimated: DiscreteCVQF, gt_samples: np.ndarray, solver_fn,
        proxy: DiscreteCVQF | None = None) -> float:
    """Quantile-surface distance against a proxy truth.

    The proxy is an unconditional quantile surface fitted on fresh samples
    from the true conditional distribution (estimation, not regression).
    Returns the global Frobenius ratio ||Q* - Qhat|| / ||Q*|| over all grid
    rows; ``proxy`` short-circuits the refit when the caller already has it.
    """
    if proxy is None:
        proxy = solver_fn(np.asarray(gt_samples, dtype=np.float64), estimated.grid)
    if proxy.values.shape != estimated.values.shape:
        raise ShapeError("proxy and estimate are on different grids")
    denom = float(np.linalg.norm(proxy.values))
    if denom == 0.0:
        raise NumericError("proxy quantile surface has zero norm")
    return float(np.linalg.norm(proxy.values - estimated.values)) / denom


def inverse_entropy(cvqf: DiscreteCVQF, gt_samples: np.ndarray,
                    seed: int = 0) -> tuple[float, float]:
    """Normalized entropy of the inverse map over true conditional samples.

    Each sample is mapped to its nearest quantile row; the hit histogram's
    Shannon entropy h is reported as (exp(h) - 1) / (T^d - 1), which is 1
    for uniform hits and 0 for a point mass.  The reference value pushes the
    same number of uniform grid draws (seeded) through the same pipeline,
    capturing the quantization floor.
    """
    gt_samples = np.atleast_2d(np.asarray(gt_samples, dtype=np.float64))
    m = gt_samples.shape[0]
    n_cells = cvqf.grid.n_points
    hits = invert_cvqf_many(cvqf, gt_samples)
    rng = np.random.default_rng(seed)
    ref_hits = rng.integers(0, n_cells, size=m)

    def _normalized(idx):
        counts = np.bincount(idx, minlength=n_cells)
        p = counts[counts > 0] / m
        h = float(-(p * np.log(p)).sum())
        if n_cells == 1:
            return 1.0
        return (np.exp(h) - 1.0) / (n_cells - 1.0)

    return _normalized(hits), _normalized(ref_hits)


def monotonicity_violations(cvqf: DiscreteCVQF) -> float:
    """Fraction of level pairs with (u_i - u_j)'(Q_i - Q_j) < 0.

    All T^(2d) ordered pairs count, including i = j (never a violation).
    """
    return mv_fraction(cvqf.grid.levels, cvqf.values)


def mv_fraction(levels: np.ndarray, values: np.ndarray) -> float:
    """Co-monotonicity violation fraction on raw (levels, values) arrays.

    Computed from pairwise differences, not the expanded inner-product
    matrix: the difference form is exactly zero for identical value rows,
    where the expanded form leaves cancellation dust with the wrong sign.
    """
    u = np.asarray(levels, dtype=np.float64)
    q = np.asarray(values, dtype=np.float64)
    n, d = u.shape
    violations = 0
    step = max(1, int(2e6) // max(1, n * d))
    for s in range(0, n, step):
        blk = slice(s, min(s + step, n))
        du = u[blk][:, None, :] - u[None, :, :]
        dq = q[blk][:, None, :] - q[None, :, :]
        pair = np.einsum("ijk,ijk->ij", du, dq)
        violations += int((pair < 0.0).sum())
    return violations / float(n) ** 2


@dataclass(frozen=True)
class HullResult:
    """Convex hull vertices in counterclockwise order plus shoelace area."""

    vertices: np.ndarray
    area: float
    degenerate: bool


def convex_hull_area(points: np.ndarray) -> HullResult:
    """Monotone-chain convex hull and its area.

    Fewer than three distinct points, or collinear input, yield area 0 with
    the degenerate flag set.
    """
    pts = np.unique(np.asarray(points, dtype=np.float64).reshape(-1, 2), axis=0)
    if pts.shape[0] < 3:
        return HullResult(vertices=pts, area=0.0, degenerate=True)
    # np.unique sorts lexicographically by (x, y) already
    def _half(chain_pts):
        chain = []
        for p in chain_pts:
            while len(chain) >= 2:
                a, b = chain[-2], chain[-1]
                if (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) <= 0:
                    chain.pop()
                else:
                    break
            chain.append(p)
        return chain

    lower = _half(pts)
    upper = _half(pts[::-1])
    hull = np.asarray(lower[:-1] + upper[:-1])
    if hull.shape[0] < 3:
        return HullResult(vertices=hull, area=0.0, degenerate=True)
    x, y = hull[:, 0], hull[:, 1]
    area = 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))
    return HullResult(vertices=hull, area=abs(area), degenerate=False)


def _points_in_hull(points: np.ndarray, hull: HullResult) -> np.ndarray:
    """Inclusive point-in-convex-polygon test for CCW hull vertices."""
    if hull.degenerate:
        return np.zeros(points.shape[0], dtype=bool)
    v = hull.vertices
    w = np.roll(v, -1, axis=0)
    scale = max(1.0, float(np.abs(v).max()))
    edge = w - v
    rel = points[:, None, :] - v[None, :, :]
    cross = edge[None, :, 0] * rel[:, :, 1] - edge[None, :, 1] * rel[:, :, 0]
    return (cross >= -1e-9 * scale).all(axis=1)


def marginal_coverage(cvqf_provider, X_test: np.ndarray, Y_test: np.ndarray,
                      alpha: float) -> float:
    """Fraction of held-out points inside their conditional alpha-hull.

    For each test pair the alpha-contour of the provided surface at x is
    hulled and the point tested for inclusion (boundary counts as covered);
    a degenerate hull counts the point as uncovered.  Requires d = 2.
    """
    X_test = np.atleast_2d(np.asarray(X_test, dtype=np.float64))
    Y_test = np.atleast_2d(np.asarray(Y_test, dtype=np.float64))
    if Y_test.shape[1] != 2:
        raise ShapeError("coverage is hull-based and requires d = 2")
    covered = 0
    for x, y in zip(X_test, Y_test):
        _, pts = alpha_contour(cvqf_provider(x), alpha)
        hull = convex_hull_area(pts)
        covered += int(_points_in_hull(y[None, :], hull)[0])
    return covered / X_test.shape[0]


def confidence_area(cvqf_provider, X_test: np.ndarray, alpha: float) -> float:
    """Mean hull area of the conditional alpha-confidence sets."""
    X_test = np.atleast_2d(np.asarray(X_test, dtype=np.float64))
    areas = []
    for x in X_test:
        _, pts = alpha_contour(cvqf_provider(x), alpha)
        areas.append(convex_hull_area(pts).area)
    return float(np.mean(areas))


def calibrate_alpha(cvqf_provider, X_cal: np.ndarray, Y_cal: np.ndarray,
                    nominal: float, tolerance: float = 0.0) -> float:
    """Largest grid-representable alpha whose coverage reaches the target.

    Scans alpha in {1/T, ..., (floor(T/2) - 1)/T} and returns the largest
    value with measured coverage >= nominal - tolerance.  Deterministic;
    raises :class:`CalibrationError` listing the best achievable coverage
    when no alpha qualifies.
    """
    if not 0.0 < nominal < 1.0:
        raise ShapeError("nominal coverage must lie in (0, 1)")
    X_cal = np.atleast_2d(np.asarray(X_cal, dtype=np.float64))
    Y_cal = np.atleast_2d(np.asarray(Y_cal, dtype=np.float64))
    surfaces = [cvqf_provider(x) for x in X_cal]
    T = surfaces[0].grid.T
    m_max = T // 2 - 1
    if m_max < 1:
        raise ShapeError(f"grid T={T} leaves no usable alpha levels")
    best_alpha, best_cov = None, -1.0
    for m in range(m_max, 0, -1):
        alpha = m / T
        covered = 0
        for surf, y in zip(surfaces, Y_cal):
            _, pts = alpha_contour(surf, alpha)
            hull = convex_hull_area(pts)
            covered += int(_points_in_hull(y[None, :], hull)[0])
        cov = covered / len(surfaces)
        if cov > best_cov:
            best_alpha, best_cov = alpha, cov
        if cov >= nominal - tolerance:
            return alpha
    raise CalibrationError(
        f"no alpha reaches coverage {nominal} - {tolerance}; best is "
        f"{best_cov:.4f} at alpha={best_alpha}"
    )


def evaluation_report(
    provider,
    sampler,
    *,
    which=("kde_l1", "qfd", "entropy", "mv"),
    l_values: int = 20,
    m_samples: int = 4000,
    bins: int = 100,
    sigma: float = 0.05,
    seed: int = 0,
    qfd_fitter=None,
    coverage_data=None,
    alpha: float | None = None,
    metadata: dict | None = None,
) -> MetricReport:
    """Fan out the per-x metrics over L conditioning draws and average.

    ``provider`` maps x to a quantile surface (apply rearrangement inside it
    if wanted); ``sampler`` supplies ground-truth draws.  Coverage and area
    need ``coverage_data=(X_test, Y_test)`` and ``alpha``.
    """
    which = set(which)
    rng = np.random.default_rng(seed)
    sums = {name: 0.0 for name in ("kde_l1", "qfd", "entropy", "entropy_ref", "mv")}
    want_x = which & {"kde_l1", "qfd", "entropy", "mv"}
    if want_x:
        xs = sampler.sample_x(l_values, rng)
        for li, x in enumerate(xs):
            surf = provider(x)
            gt = sampler.sample_y(x, m_samples, rng)
            if "kde_l1" in which:
                idx = rng.integers(0, surf.grid.n_points, size=m_samples)
                sums["kde_l1"] += kde_l1(surf.values[idx], gt, bins=bins, sigma=sigma)
            if "qfd" in which:
                if qfd_fitter is None:
                    raise ShapeError("qfd requested without a qfd_fitter")
                sums["qfd"] += qfd(surf, gt, qfd_fitter)
            if "entropy" in which:
                ent, ref = inverse_entropy(surf, gt, seed=seed + li)
                sums["entropy"] += ent
                sums["entropy_ref"] += ref
            if "mv" in which:
                sums["mv"] += monotonicity_violations(surf)
    coverage = area = None
    if coverage_data is not None and alpha is not None:
        X_test, Y_test = coverage_data
        coverage = marginal_coverage(provider, X_test, Y_test, alpha)
        area = confidence_area(provider, X_test, alpha)
    meta = {
        "L": l_values, "M": m_samples, "seed": seed,
        "sigma": sigma, "bins": bins, "alpha": alpha,
        "qfd_norm": "frobenius",
    }
    if metadata:
        meta.update(metadata)
    n = max(1, l_values)
    return MetricReport(
        kde_l1=sums["kde_l1"] / n if "kde_l1" in which else None,
        qfd=sums["qfd"] / n if "qfd" in which else None,
        entropy=sums["entropy"] / n if "entropy" in which else None,
        entropy_reference=sums["entropy_ref"] / n if "entropy" in which else None,
        mv_fraction=sums["mv"] / n if "mv" in which else None,
        coverage=coverage,
        confidence_area=area,
        metadata=meta,
    )
