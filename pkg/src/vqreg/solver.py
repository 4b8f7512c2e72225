"""Relaxed-dual solver for linear vector quantile regression.

The regression problem is solved through a smooth unconstrained surrogate of
the optimal-transport dual with a mean-independence term.  With data
(x_j, y_j), grid levels u_i, uniform marginals mu_i = 1/T^d and nu_j = 1/N,
and a feature map g, the objective in the dual variables (psi, beta) is

    psi' nu + tr(beta' Gbar) +
        eps * sum_i mu_i * log sum_j exp((u_i'y_j - beta_i'g(x_j) - psi_j)/eps)

where Gbar is the mean-embedding constraint matrix whose rows all equal
gbar / T^d with gbar the empirical mean of g(x_j).  The temperature eps
controls how closely the smooth max approximates the exact dual.  The third
dual variable phi (the potential over levels) is not optimized; it is
recovered from the first-order optimality condition after fitting.

Minimization is plain SGD over mini-batches of both data points and quantile
levels, with a plateau learning-rate decay schedule.  Within a batch the
marginals are renormalized to sum to one over the sampled indices, which
makes mini-batch gradients unbiased up to the softmax-denominator bias; this
estimator choice is an approximation and is documented as such.
"""

from dataclasses import dataclass, field

import numpy as np

from .cvqf import Dataset, DiscreteCVQF, QuantileGrid, decode_potential
from .errors import DivergenceError, ShapeError


def logsumexp_stable(values: np.ndarray, epsilon: float) -> float:
    """Temperature log-sum-exp: eps * log sum_i exp(v_i / eps).

    The maximum is subtracted before exponentiation, so the result is finite
    for any input scale; without this the sum overflows once v/eps exceeds
    roughly 700.
    """
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if v.size == 0:
        raise ShapeError("logsumexp_stable requires a non-empty vector")
    if epsilon <= 0:
        raise ShapeError("epsilon must be positive")
    m = float(v.max())
    return m + epsilon * float(np.log(np.exp((v - m) / epsilon).sum()))


def _lse_rows(A: np.ndarray, epsilon: float) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise stabilized (lse, softmax) for a score matrix A."""
    m = A.max(axis=1, keepdims=True)
    E = np.exp((A - m) / epsilon)
    se = E.sum(axis=1, keepdims=True)
    lse = m[:, 0] + epsilon * np.log(se[:, 0])
    return lse, E / se


class IdentityMap:
    """Feature map g(x) = x; the linear-model case (k' = k, no parameters)."""

    trainable = False
    n_params = 0

    def __init__(self, k: int):
        self.out_dim = k

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X, dtype=np.float64)

    def forward_cached(self, X):
        return self(X), None

    def get_params(self) -> np.ndarray:
        return np.empty(0)


@dataclass(frozen=True)
class MeanConstraint:
    """Empirical mean of the embedded covariates; the repeated row of the
    mean-independence constraint matrix up to its 1/T^d factor."""

    xbar_row: np.ndarray

    def __post_init__(self):
        row = np.asarray(self.xbar_row, dtype=np.float64).reshape(-1)
        if row.size and not np.isfinite(row).all():
            raise ShapeError("mean constraint contains non-finite entries")
        object.__setattr__(self, "xbar_row", row)


def mean_constraint(dataset: Dataset, embed=None) -> MeanConstraint:
    embed = embed if embed is not None else IdentityMap(dataset.k)
    G = embed(dataset.X)
    return MeanConstraint(xbar_row=G.mean(axis=0) if G.size else np.zeros(G.shape[1]))


@dataclass(frozen=True)
class SolverConfig:
    """Hyperparameters of the SGD fit.

    The schedule decays the learning rate by ``lr_decay_factor`` every
    ``lr_patience_iters`` iterations if the running mean of the last window
    of mini-batch losses did not drop by ``lr_improvement_threshold``
    (fractional).  ``batch_n`` / ``batch_t`` of None mean full batch.
    """

    epsilon: float = 0.005
    iterations: int = 10_000
    learning_rate: float = 0.5
    lr_decay_factor: float = 0.9
    lr_patience_iters: int = 500
    lr_improvement_threshold: float = 0.005
    batch_n: int | None = None
    batch_t: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ShapeError("epsilon must be positive")
        if self.iterations < 1:
            raise ShapeError("iterations must be positive")
        if self.learning_rate <= 0:
            raise ShapeError("learning_rate must be positive")
        if not 0 < self.lr_decay_factor <= 1:
            raise ShapeError("lr_decay_factor must lie in (0, 1]")
        if self.lr_patience_iters < 1:
            raise ShapeError("lr_patience_iters must be positive")


@dataclass(frozen=True)
class DualSolution:
    """Fitted dual variables.

    ``psi`` has length N, ``beta`` shape (T^d, k') and ``phi`` length T^d.
    ``phi`` is recovered from optimality, not optimized.  For nonlinear fits
    ``embedding_params`` holds the flat parameter vector of the feature map.
    """

    psi: np.ndarray
    beta: np.ndarray
    phi: np.ndarray
    epsilon: float
    embedding_params: np.ndarray | None = None

    def __post_init__(self):
        for name in ("psi", "beta", "phi"):
            a = np.asarray(getattr(self, name), dtype=np.float64)
            if not np.isfinite(a).all():
                raise ShapeError(f"{name} contains non-finite entries")
            object.__setattr__(self, name, a)
        if self.epsilon <= 0:
            raise ShapeError("epsilon must be positive")


@dataclass
class FitResult:
    """A fitted solution plus the per-iteration optimization trace."""

    solution: DualSolution
    loss_trace: np.ndarray
    lr_trace: np.ndarray
    config: SolverConfig = field(repr=False, default=None)


def sample_batch(rng, n: int, n_levels: int, batch_n: int, batch_t: int):
    """Draw without-replacement index batches for data points and levels."""
    if not 1 <= batch_n <= n:
        raise ShapeError(f"batch_n={batch_n} outside [1, {n}]")
    if not 1 <= batch_t <= n_levels:
        raise ShapeError(f"batch_t={batch_t} outside [1, {n_levels}]")
    idx_n = rng.choice(n, size=batch_n, replace=False)
    idx_t = rng.choice(n_levels, size=batch_t, replace=False)
    return idx_n, idx_t


def _objective_terms(
    psi, beta, dataset, grid, epsilon, embed,
    sample_indices=None, level_indices=None, need_feature_grad=False,
):
    """Objective, gradients and optional feature upstream on a batch.

    With index subsets the marginals are renormalized over the batch.  The
    feature upstream gradient is d(objective)/dG where G = g(X_batch), used
    for joint training of a parametric feature map.
    """
    X, Y, U = dataset.X, dataset.Y, grid.levels
    jn = np.arange(dataset.n) if sample_indices is None else np.asarray(sample_indices)
    it = np.arange(grid.n_points) if level_indices is None else np.asarray(level_indices)
    bn, bt = len(jn), len(it)
    G, cache = embed.forward_cached(X[jn])
    if G.shape != (bn, beta.shape[1]):
        raise ShapeError(
            f"feature map produced shape {G.shape}, expected ({bn}, {beta.shape[1]})"
        )
    S = U[it] @ Y[jn].T
    A = S - beta[it] @ G.T - psi[jn][None, :]
    lse, W = _lse_rows(A, epsilon)
    gbar = G.mean(axis=0) if G.size else np.zeros(G.shape[1])
    obj = float(psi[jn].mean()) + float(beta[it].sum(axis=0) @ gbar) / bt \
        + float(lse.sum()) / bt
    grad_psi = 1.0 / bn - W.sum(axis=0) / bt
    grad_beta = gbar[None, :] / bt - (W @ G) / bt
    upstream = None
    if need_feature_grad:
        bsum = beta[it].sum(axis=0)
        upstream = bsum[None, :] / (bt * bn) - (W.T @ beta[it]) / bt
    return obj, grad_psi, grad_beta, upstream, cache


def relaxed_dual_objective(psi, beta, dataset, grid, epsilon, embed=None) -> float:
    """Full-data value of the relaxed dual objective."""
    embed = embed if embed is not None else IdentityMap(dataset.k)
    psi = np.asarray(psi, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    _check_shapes(psi, beta, dataset, grid, embed)
    obj, *_ = _objective_terms(psi, beta, dataset, grid, epsilon, embed)
    if not np.isfinite(obj):
        raise DivergenceError("objective is non-finite")
    return obj


def objective_gradients(
    psi, beta, dataset, grid, epsilon, embed=None,
    sample_indices=None, level_indices=None,
):
    """Analytic gradients of the relaxed dual objective.

    Returns (grad_psi, grad_beta) restricted to the sampled batch rows and
    levels; with no indices given, the full-batch gradients.  With softmax
    weights w_ij over data points,

        d/dpsi_j  = nu_j - sum_i mu_i w_ij
        d/dbeta_i = gbar / T^d - mu_i sum_j w_ij g(x_j)
    """
    embed = embed if embed is not None else IdentityMap(dataset.k)
    psi = np.asarray(psi, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    _check_shapes(psi, beta, dataset, grid, embed)
    _, gp, gb, _, _ = _objective_terms(
        psi, beta, dataset, grid, epsilon, embed,
        sample_indices=sample_indices, level_indices=level_indices,
    )
    return gp, gb


def _check_shapes(psi, beta, dataset, grid, embed):
    if psi.shape != (dataset.n,):
        raise ShapeError(f"psi has shape {psi.shape}, expected ({dataset.n},)")
    if beta.shape != (grid.n_points, embed.out_dim):
        raise ShapeError(
            f"beta has shape {beta.shape}, expected "
            f"({grid.n_points}, {embed.out_dim})"
        )


def recover_phi(psi, beta, dataset, grid, epsilon, embed=None) -> np.ndarray:
    """Recover the level potential phi from the fitted (psi, beta).

    First-order optimality of the non-relaxed smooth dual gives

        phi_i = eps * log((1/mu_i) * sum_j exp((u_i'y_j - beta_i'g(x_j) - psi_j)/eps))

    computed with the stabilized log-sum-exp.  Adding a constant c to every
    psi_j shifts every phi_i by -c, which cancels in decoding.
    """
    embed = embed if embed is not None else IdentityMap(dataset.k)
    psi = np.asarray(psi, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    _check_shapes(psi, beta, dataset, grid, embed)
    G = embed(dataset.X)
    phi = np.empty(grid.n_points)
    log_td = np.log(grid.n_points)
    step = max(1, int(4e6) // max(1, dataset.n))
    for s in range(0, grid.n_points, step):
        it = slice(s, min(s + step, grid.n_points))
        A = grid.levels[it] @ dataset.Y.T - beta[it] @ G.T - psi[None, :]
        lse, _ = _lse_rows(A, epsilon)
        phi[it] = lse + epsilon * log_td
    if not np.isfinite(phi).all():
        raise DivergenceError("recovered phi is non-finite")
    return phi


def implied_plan(
    solution: DualSolution, dataset: Dataset, grid: QuantileGrid, embed=None
) -> np.ndarray:
    """Coupling implied by the fitted duals: softmax rows scaled by mu.

    Row i holds mu_i * softmax_j((u_i'y_j - beta_i'g(x_j) - psi_j)/eps); at
    the optimum this is the entropic transport plan, whose barycentric
    pairing row_i' Y / mu_i is the quantile map estimate used for oracle
    comparisons (dual variables themselves are only defined up to gauge).
    """
    embed = embed if embed is not None else IdentityMap(dataset.k)
    psi, beta = solution.psi, solution.beta
    _check_shapes(psi, beta, dataset, grid, embed)
    G = embed(dataset.X)
    A = grid.levels @ dataset.Y.T - beta @ G.T - psi[None, :]
    _, W = _lse_rows(A, solution.epsilon)
    return W / grid.n_points


def evaluate_cvqf(
    solution: DualSolution, x, grid: QuantileGrid, embed=None
) -> DiscreteCVQF:
    """Decode the fitted quantile surface at covariate x.

    Builds the potential beta(u)'g(x) + phi(u) over the grid and decodes its
    discrete gradient.  With no covariates (k'=0 or x None) the potential is
    phi alone and the result does not depend on x.
    """
    if solution.beta.shape[1] == 0 or x is None:
        potential = solution.phi
        x_out = None
    else:
        embed = embed if embed is not None else IdentityMap(solution.beta.shape[1])
        x_arr = np.asarray(x, dtype=np.float64).reshape(1, -1)
        g = embed(x_arr)[0]
        if g.shape[0] != solution.beta.shape[1]:
            raise ShapeError(
                f"embedded x has length {g.shape[0]}, "
                f"expected {solution.beta.shape[1]}"
            )
        potential = solution.beta @ g + solution.phi
        x_out = x_arr[0]
    cvqf = decode_potential(potential, grid)
    return DiscreteCVQF(grid=grid, values=cvqf.values, x=x_out)


def fit_feature_vqr(
    dataset: Dataset, grid: QuantileGrid, config: SolverConfig, embed
) -> FitResult:
    """SGD fit of the relaxed dual with an arbitrary feature map.

    psi and beta start at zero.  Trainable feature maps are updated jointly
    with the dual variables using the shared learning rate and schedule.
    Raises :class:`DivergenceError` with the loss trace if the objective
    turns non-finite.
    """
    n, n_levels = dataset.n, grid.n_points
    bn = config.batch_n if config.batch_n is not None else n
    bt = config.batch_t if config.batch_t is not None else n_levels
    if not 1 <= bn <= n:
        raise ShapeError(f"batch_n={bn} outside [1, {n}]")
    if not 1 <= bt <= n_levels:
        raise ShapeError(f"batch_t={bt} outside [1, {n_levels}]")
    rng = np.random.default_rng(config.seed)
    full_batch = bn == n and bt == n_levels
    psi = np.zeros(n)
    beta = np.zeros((n_levels, embed.out_dim))
    lr = config.learning_rate
    losses = np.empty(config.iterations)
    lrs = np.empty(config.iterations)
    prev_window = None
    train_features = getattr(embed, "trainable", False)
    for step in range(config.iterations):
        if full_batch:
            jn = it = None
        else:
            jn, it = sample_batch(rng, n, n_levels, bn, bt)
        obj, gpsi, gbeta, upstream, cache = _objective_terms(
            psi, beta, dataset, grid, config.epsilon, embed,
            sample_indices=jn, level_indices=it,
            need_feature_grad=train_features,
        )
        if not np.isfinite(obj):
            raise DivergenceError(
                f"objective diverged at iteration {step}",
                iteration=step, trace=losses[:step],
            )
        losses[step] = obj
        lrs[step] = lr
        if full_batch:
            psi -= lr * gpsi
            beta -= lr * gbeta
        else:
            psi[jn] -= lr * gpsi
            beta[it] -= lr * gbeta
        if train_features:
            gtheta = embed.param_gradient(cache, upstream)
            embed.set_params(embed.get_params() - lr * gtheta)
        if (step + 1) % config.lr_patience_iters == 0:
            window = float(losses[step + 1 - config.lr_patience_iters : step + 1].mean())
            if prev_window is not None:
                drop = prev_window - window
                needed = config.lr_improvement_threshold * max(abs(prev_window), 1e-12)
                if drop < needed:
                    lr *= config.lr_decay_factor
            prev_window = window
    phi = recover_phi(psi, beta, dataset, grid, config.epsilon, embed)
    params = embed.get_params().copy() if embed.n_params else None
    solution = DualSolution(
        psi=psi, beta=beta, phi=phi, epsilon=config.epsilon,
        embedding_params=params,
    )
    return FitResult(solution=solution, loss_trace=losses, lr_trace=lrs, config=config)


def fit_linear_vqr(
    dataset: Dataset, grid: QuantileGrid, config: SolverConfig
) -> FitResult:
    """Fit linear vector quantile regression (feature map g(x) = x)."""
    return fit_feature_vqr(dataset, grid, config, IdentityMap(dataset.k))


def fit_vqe(targets: np.ndarray, grid: QuantileGrid, config: SolverConfig) -> DiscreteCVQF:
    """Unconditional vector quantile estimation on raw target samples.

    Convenience wrapper: fits with zero covariates and decodes the surface.
    """
    Y = np.asarray(targets, dtype=np.float64)
    if Y.ndim != 2:
        raise ShapeError("targets must be an (M, d) array")
    ds = Dataset(X=np.zeros((Y.shape[0], 0)), Y=Y, seed=config.seed, name="vqe")
    result = fit_feature_vqr(ds, grid, config, IdentityMap(0))
    return evaluate_cvqf(result.solution, None, grid)
