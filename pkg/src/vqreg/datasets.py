"""Seeded synthetic data generators with ground-truth conditional samplers.

Each generator returns the joint dataset plus a sampler exposing the data
generating process, so evaluation metrics can draw fresh conditional samples
at arbitrary covariate values.  Generation is a deterministic function of the
spec and seed.
"""

import csv
import io
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .cvqf import Dataset
from .errors import ConfigError, ShapeError

STAR_ANGLES = (0, 10, 20, 30, 40, 50, 60)

GENERATOR_NAMES = ("mvn", "banana", "glasses", "star")


@dataclass(frozen=True)
class GeneratorSpec:
    """Which process to draw from and with what size/shape parameters."""

    name: str
    n: int
    seed: int = 0
    k: int = 1
    d: int = 2
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in GENERATOR_NAMES:
            raise ConfigError(
                f"unknown generator {self.name!r}; expected one of {GENERATOR_NAMES}"
            )
        if self.n < 1:
            raise ConfigError("n must be at least 1")


@dataclass(frozen=True)
class ConditionalSampler:
    """Ground-truth access to the generating process.

    ``sample_x(L, rng)`` draws covariates from the marginal of X;
    ``sample_y(x, M, rng)`` draws fresh targets from Y | X = x.
    ``params`` exposes the realized process parameters (projection matrix,
    noise covariance, mixing weights) for moment checks.
    """

    sample_x: Callable
    sample_y: Callable
    params: dict = field(default_factory=dict)


def gen_mvn(N, k, d, seed, noise_scale=1.0, cov_override=None):
    """Linear-Gaussian process y = A x + eta.

    x is uniform on [0,1]^k, A is a seeded random d x k matrix with entries
    uniform in [-1, 1], and eta is centered Gaussian noise with covariance
    L L' where L has uniform [-0.5, 0.5] entries plus 0.5 on the diagonal.
    ``noise_scale`` scales L (0 gives the noise-free point mass) and
    ``cov_override`` replaces the covariance entirely; both are test hooks.
    """
    rng = np.random.default_rng(seed)
    A = rng.uniform(-1.0, 1.0, size=(d, k))
    L = rng.uniform(-0.5, 0.5, size=(d, d)) + 0.5 * np.eye(d)
    if cov_override is not None:
        cov = np.asarray(cov_override, dtype=np.float64)
        if cov.shape != (d, d):
            raise ShapeError(f"cov_override must be {d}x{d}")
        L = np.linalg.cholesky(cov)
    L = L * noise_scale
    X = rng.uniform(0.0, 1.0, size=(N, k))
    Y = X @ A.T + rng.standard_normal((N, d)) @ L.T
    dataset = Dataset(X=X, Y=Y, seed=seed, name="mvn")

    def sample_x(L_draws, rng2):
        return rng2.uniform(0.0, 1.0, size=(L_draws, k))

    def sample_y(x, M, rng2):
        mean = np.asarray(x, dtype=np.float64).reshape(-1) @ A.T
        return mean + rng2.standard_normal((M, d)) @ L.T

    return dataset, ConditionalSampler(
        sample_x=sample_x, sample_y=sample_y,
        params={"A": A, "noise_chol": L, "cov": L @ L.T},
    )


def gen_banana(N, k, seed, r_scale=1.0):
    """Banana-shaped conditional distribution over a scalar-like covariate.

    With s = beta'x (beta drawn once per dataset, normalized to unit L1 norm,
    so s = x when k = 1):

        z ~ U[-pi, pi],  phi ~ U[0, 2*pi],  r ~ U[-0.1, 0.1]
        y0 = (1 - cos z)/2 + r sin(phi) + sin(s)
        y1 = z/s + r cos(phi)

    ``r_scale`` scales the r noise (0 gives the deterministic curve).
    """
    rng = np.random.default_rng(seed)
    beta_hat = rng.uniform(0.0, 1.0, size=k)
    beta = beta_hat / np.abs(beta_hat).sum()
    X = rng.uniform(0.8, 3.2, size=(N, k))

    def _draw(s, M, rng2):
        z = rng2.uniform(-np.pi, np.pi, size=M)
        phi = rng2.uniform(0.0, 2.0 * np.pi, size=M)
        r = rng2.uniform(-0.1, 0.1, size=M) * r_scale
        y0 = 0.5 * (-np.cos(z) + 1.0) + r * np.sin(phi) + np.sin(s)
        y1 = z / s + r * np.cos(phi)
        return np.column_stack([y0, y1])

    Y = _draw(X @ beta, N, rng)
    dataset = Dataset(X=X, Y=Y, seed=seed, name="banana")

    def sample_x(L_draws, rng2):
        return rng2.uniform(0.8, 3.2, size=(L_draws, k))

    def sample_y(x, M, rng2):
        s = float(np.asarray(x, dtype=np.float64).reshape(-1) @ beta)
        return _draw(s, M, rng2)

    return dataset, ConditionalSampler(
        sample_x=sample_x, sample_y=sample_y, params={"beta": beta},
    )


def gen_glasses(N, seed, gamma_override=None):
    """Bimodal scalar-target process with periodically shifting modes.

        x ~ U[0, 1],  z1 = 3*pi*x,  z2 = pi*(1 + 3x)
        e ~ Beta(0.5, 1)  (drawn as u^2, the closed-form inverse CDF)
        gamma fair over {0, 1}
        y = gamma*(5 sin(z1) + 2.5 + e) + (1 - gamma)*(5 sin(z2) + 2.5 - e)

    ``gamma_override`` pins the branch (test hook).
    """
    rng = np.random.default_rng(seed)
    X = rng.uniform(0.0, 1.0, size=(N, 1))

    def _draw(x, M, rng2):
        x = np.broadcast_to(np.asarray(x, dtype=np.float64).reshape(-1), (M,)) \
            if np.asarray(x).size == 1 else np.asarray(x, dtype=np.float64).reshape(-1)
        e = rng2.uniform(0.0, 1.0, size=M) ** 2
        if gamma_override is None:
            gamma = rng2.integers(0, 2, size=M).astype(np.float64)
        else:
            gamma = np.full(M, float(gamma_override))
        y1 = 5.0 * np.sin(3.0 * np.pi * x) + 2.5 + e
        y2 = 5.0 * np.sin(np.pi * (1.0 + 3.0 * x)) + 2.5 - e
        return (gamma * y1 + (1.0 - gamma) * y2).reshape(-1, 1)

    Y = _draw(X[:, 0], N, rng)
    dataset = Dataset(X=X, Y=Y, seed=seed, name="glasses")

    def sample_x(L_draws, rng2):
        return rng2.uniform(0.0, 1.0, size=(L_draws, 1))

    def sample_y(x, M, rng2):
        return _draw(float(np.asarray(x).reshape(-1)[0]), M, rng2)

    return dataset, ConditionalSampler(sample_x=sample_x, sample_y=sample_y)


def _star_polygon():
    """Regular 5-pointed star, outer radius 1, inner 0.5, one point up."""
    theta = np.pi / 2 + np.arange(10) * (np.pi / 5)
    radius = np.where(np.arange(10) % 2 == 0, 1.0, 0.5)
    return np.column_stack([radius * np.cos(theta), radius * np.sin(theta)])


def _sample_in_star(M, rng):
    """Uniform points inside the star via its fan triangulation."""
    verts = _star_polygon()
    nxt = np.roll(verts, -1, axis=0)
    areas = 0.5 * np.abs(verts[:, 0] * nxt[:, 1] - verts[:, 1] * nxt[:, 0])
    tri = rng.choice(10, size=M, p=areas / areas.sum())
    a = np.sqrt(rng.uniform(0.0, 1.0, size=M))
    b = rng.uniform(0.0, 1.0, size=M)
    # vertex 0 of every triangle is the origin
    return (a * (1.0 - b))[:, None] * verts[tri] + (a * b)[:, None] * nxt[tri]


def _rotate(points, degrees):
    t = np.deg2rad(degrees)
    rot = np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])
    return points @ rot.T


def gen_star(N, seed, angles=STAR_ANGLES):
    """Star-shaped distribution rotated by a discrete angle covariate.

    Points are uniform inside a procedural 5-pointed star polygon rotated by
    x degrees; x is discrete uniform over ``angles``.  The conditional mean
    stays at the origin for every angle.
    """
    angles = tuple(int(a) for a in angles)
    if not angles or any(a not in STAR_ANGLES for a in angles):
        raise ConfigError(f"angles must be a non-empty subset of {STAR_ANGLES}")
    rng = np.random.default_rng(seed)
    X = rng.choice(np.asarray(angles, dtype=np.float64), size=(N, 1))
    base = _sample_in_star(N, rng)
    Y = np.empty_like(base)
    for a in angles:
        mask = X[:, 0] == a
        Y[mask] = _rotate(base[mask], a)
    dataset = Dataset(X=X, Y=Y, seed=seed, name="star")

    def sample_x(L_draws, rng2):
        return rng2.choice(np.asarray(angles, dtype=np.float64), size=(L_draws, 1))

    def sample_y(x, M, rng2):
        deg = float(np.asarray(x).reshape(-1)[0])
        return _rotate(_sample_in_star(M, rng2), deg)

    return dataset, ConditionalSampler(sample_x=sample_x, sample_y=sample_y)


def make_generator(spec: GeneratorSpec):
    """Dispatch a GeneratorSpec to its generator; returns (dataset, sampler)."""
    if spec.name == "mvn":
        return gen_mvn(spec.n, spec.k, spec.d, spec.seed, **spec.extra)
    if spec.name == "banana":
        return gen_banana(spec.n, spec.k, spec.seed, **spec.extra)
    if spec.name == "glasses":
        return gen_glasses(spec.n, spec.seed, **spec.extra)
    return gen_star(spec.n, spec.seed, **spec.extra)


def write_csv(dataset: Dataset, path) -> None:
    """Write the dataset as UTF-8 CSV, header x_0..x_{k-1},y_0..y_{d-1}.

    Floats are rendered with repr (shortest round-trip form) so repeated
    runs emit byte-identical files and values survive a round trip exactly.
    """
    buf = io.StringIO()
    header = [f"x_{i}" for i in range(dataset.k)] + [f"y_{i}" for i in range(dataset.d)]
    buf.write(",".join(header) + "\n")
    for xi, yi in zip(dataset.X, dataset.Y):
        row = [repr(float(v)) for v in xi] + [repr(float(v)) for v in yi]
        buf.write(",".join(row) + "\n")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def read_csv(path, name="", seed=0) -> Dataset:
    """Read a dataset CSV with the x_*/y_* header schema."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigError(f"{path}: empty CSV") from None
        x_cols = [i for i, h in enumerate(header) if h.strip().startswith("x_")]
        y_cols = [i for i, h in enumerate(header) if h.strip().startswith("y_")]
        if not y_cols:
            raise ConfigError(f"{path}: header must contain y_* columns")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: {exc}") from None
    data = np.asarray(rows, dtype=np.float64)
    if data.shape[1] != len(header):
        raise ConfigError(f"{path}: row width does not match header")
    return Dataset(X=data[:, x_cols], Y=data[:, y_cols], seed=seed, name=name)
