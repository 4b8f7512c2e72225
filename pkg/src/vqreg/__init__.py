"""Scalable linear and nonlinear vector quantile regression.

Estimates conditional vector quantile functions from joint samples through a
relaxed optimal-transport dual solved by SGD, with a learned nonlinear
feature map, exact monotone rearrangement of fitted surfaces, alpha-contour
confidence sets, synthetic data generators, and an evaluation-metric suite.
"""

from .cvqf import (
    ContourSpec,
    Dataset,
    DiscreteCVQF,
    QuantileGrid,
    alpha_contour,
    decode_potential,
    invert_cvqf,
    invert_cvqf_many,
    make_grid,
    separable_cvqf,
)
from .datasets import (
    ConditionalSampler,
    GeneratorSpec,
    gen_banana,
    gen_glasses,
    gen_mvn,
    gen_star,
    make_generator,
    read_csv,
    write_csv,
)
from .embedding import (
    EmbeddingParams,
    EmbeddingSpec,
    MlpMap,
    embed_backward,
    embed_forward,
    fit_nonlinear_vqr,
    identity_params,
    init_params,
)
from .errors import (
    ArtifactError,
    CalibrationError,
    ConfigError,
    DivergenceError,
    InfeasibleError,
    NumericError,
    ShapeError,
    SizeLimitError,
    UnboundedError,
    VqregError,
)
from .lp import LpInstance, build_primal_lp, plan_barycenter, solve_lp_exact
from .metrics import (
    HullResult,
    KdeGrid,
    MetricReport,
    calibrate_alpha,
    confidence_area,
    convex_hull_area,
    evaluation_report,
    inverse_entropy,
    kde,
    kde_l1,
    marginal_coverage,
    monotonicity_violations,
    mv_fraction,
    qfd,
)
from .rearrange import TransportPlan, permutation_plan, rearrange, solve_assignment
from .solver import (
    DualSolution,
    FitResult,
    IdentityMap,
    MeanConstraint,
    SolverConfig,
    evaluate_cvqf,
    fit_linear_vqr,
    fit_vqe,
    implied_plan,
    logsumexp_stable,
    mean_constraint,
    objective_gradients,
    recover_phi,
    relaxed_dual_objective,
    sample_batch,
)

__version__ = "0.1.0"
