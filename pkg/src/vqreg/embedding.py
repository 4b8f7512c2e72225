"""Learned nonlinear feature map for vector quantile regression.

A small fully-connected network g(x) embeds covariates into k' dimensions and
is trained jointly with the regression coefficients.  Forward and reverse
passes are explicit so gradients can be checked against finite differences.
"""

from dataclasses import dataclass

import numpy as np

from .cvqf import Dataset, QuantileGrid
from .errors import ShapeError
from .solver import FitResult, SolverConfig, fit_feature_vqr


@dataclass(frozen=True)
class EmbeddingSpec:
    """Architecture of the feature map.

    Layer widths run input -> hidden_sizes -> output_dim with a rectifier
    after every layer except the last.  Skip connections add a layer's input
    to its activated output whenever the two widths match (never on the final
    linear layer).  ``trainable=False`` freezes the parameters so the map
    acts as a fixed transformation.
    """

    input_dim: int
    hidden_sizes: tuple[int, ...] = ()
    output_dim: int = 1
    activation: str = "relu"
    skip_connections: bool = False
    seed: int = 0
    trainable: bool = True

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if self.input_dim < 1 or self.output_dim < 1:
            raise ShapeError("input_dim and output_dim must be positive")
        if any(h < 1 for h in self.hidden_sizes):
            raise ShapeError("hidden sizes must be positive")
        if self.activation != "relu":
            raise ShapeError(f"unsupported activation {self.activation!r}")

    @property
    def layer_dims(self) -> list[int]:
        return [self.input_dim, *self.hidden_sizes, self.output_dim]


class EmbeddingParams:
    """Per-layer weights and biases backed by one flat parameter vector."""

    def __init__(self, spec: EmbeddingSpec, flat: np.ndarray):
        dims = spec.layer_dims
        size = sum(dims[l + 1] * dims[l] + dims[l + 1] for l in range(len(dims) - 1))
        flat = np.asarray(flat, dtype=np.float64).reshape(-1)
        if flat.shape[0] != size:
            raise ShapeError(f"flat vector has length {flat.shape[0]}, expected {size}")
        if not np.isfinite(flat).all():
            raise ShapeError("parameters contain non-finite entries")
        self.spec = spec
        self.flat = flat
        self._offsets = []
        o = 0
        for l in range(len(dims) - 1):
            w_sz = dims[l + 1] * dims[l]
            self._offsets.append((o, o + w_sz, o + w_sz + dims[l + 1]))
            o += w_sz + dims[l + 1]

    @property
    def n_layers(self) -> int:
        return len(self._offsets)

    def weight(self, layer: int) -> np.ndarray:
        dims = self.spec.layer_dims
        a, b, _ = self._offsets[layer]
        return self.flat[a:b].reshape(dims[layer + 1], dims[layer])

    def bias(self, layer: int) -> np.ndarray:
        _, b, c = self._offsets[layer]
        return self.flat[b:c]


def init_params(spec: EmbeddingSpec) -> EmbeddingParams:
    """Seeded uniform init in +-sqrt(6/(fan_in+fan_out)); biases zero."""
    rng = np.random.default_rng(spec.seed)
    dims = spec.layer_dims
    chunks = []
    for l in range(len(dims) - 1):
        fan_in, fan_out = dims[l], dims[l + 1]
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        chunks.append(rng.uniform(-bound, bound, size=fan_out * fan_in))
        chunks.append(np.zeros(fan_out))
    return EmbeddingParams(spec, np.concatenate(chunks))


def identity_params(spec: EmbeddingSpec) -> EmbeddingParams:
    """Identity-initialized single linear layer; requires k' = k, no hiddens."""
    if spec.hidden_sizes or spec.output_dim != spec.input_dim:
        raise ShapeError("identity init needs a single square linear layer")
    flat = np.concatenate([np.eye(spec.input_dim).ravel(), np.zeros(spec.output_dim)])
    return EmbeddingParams(spec, flat)


def _skip_at(spec: EmbeddingSpec, layer: int) -> bool:
    dims = spec.layer_dims
    last = len(dims) - 2
    return (
        spec.skip_connections
        and layer < last
        and dims[layer] == dims[layer + 1]
    )


def embed_forward(params: EmbeddingParams, x: np.ndarray):
    """Evaluate the feature map; returns (g(x), cache for backward).

    Accepts a single k-vector or an (n, k) batch; the output matches.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    H = x.reshape(1, -1) if single else x
    if H.shape[1] != params.spec.input_dim:
        raise ShapeError(
            f"input has width {H.shape[1]}, expected {params.spec.input_dim}"
        )
    layers = []
    for l in range(params.n_layers):
        Z = H @ params.weight(l).T + params.bias(l)
        layers.append((H, Z))
        if l < params.n_layers - 1:
            A = np.maximum(Z, 0.0)
            H = A + layers[l][0] if _skip_at(params.spec, l) else A
        else:
            H = Z
    out = H[0] if single else H
    cache = (layers, single)
    return out, cache


def embed_backward(params: EmbeddingParams, cache, upstream: np.ndarray):
    """Reverse-mode gradients of the forward map.

    ``upstream`` is d(loss)/d(g(x)) with the same shape as the forward
    output.  Returns (flat parameter gradient, gradient w.r.t. x).
    """
    layers, single = cache
    dH = np.asarray(upstream, dtype=np.float64)
    if single:
        dH = dH.reshape(1, -1)
    grad = np.zeros_like(params.flat)
    gview = EmbeddingParams(params.spec, grad)
    for l in range(params.n_layers - 1, -1, -1):
        H_in, Z = layers[l]
        if l < params.n_layers - 1:
            dZ = dH * (Z > 0.0)
            dH_skip = dH if _skip_at(params.spec, l) else 0.0
        else:
            dZ = dH
            dH_skip = 0.0
        gview.weight(l)[...] = dZ.T @ H_in
        gview.bias(l)[...] = dZ.sum(axis=0)
        dH = dZ @ params.weight(l) + dH_skip
    dx = dH[0] if single else dH
    return grad, dx


class MlpMap:
    """Feature-map adapter driving the solver loop with an MLP."""

    def __init__(self, params: EmbeddingParams):
        self.params = params
        self.out_dim = params.spec.output_dim
        self.n_params = params.flat.shape[0]
        self.trainable = params.spec.trainable

    def __call__(self, X: np.ndarray) -> np.ndarray:
        out, _ = embed_forward(self.params, X)
        return out

    def forward_cached(self, X: np.ndarray):
        return embed_forward(self.params, X)

    def param_gradient(self, cache, upstream: np.ndarray) -> np.ndarray:
        grad, _ = embed_backward(self.params, cache, upstream)
        return grad

    def get_params(self) -> np.ndarray:
        return self.params.flat

    def set_params(self, flat: np.ndarray) -> None:
        self.params.flat[...] = flat


def fit_nonlinear_vqr(
    dataset: Dataset,
    grid: QuantileGrid,
    config: SolverConfig,
    spec: EmbeddingSpec,
    params: EmbeddingParams | None = None,
) -> FitResult:
    """Jointly fit (psi, beta) and the feature-map parameters.

    The mean-embedding term of the objective is recomputed every step from
    the current parameters over the sampled batch.  ``params`` overrides the
    seeded initialization (used for warm starts and reduction tests).
    """
    if spec.input_dim != dataset.k:
        raise ShapeError(
            f"embedding input_dim {spec.input_dim} does not match k={dataset.k}"
        )
    fmap = MlpMap(params if params is not None else init_params(spec))
    return fit_feature_vqr(dataset, grid, config, fmap)
