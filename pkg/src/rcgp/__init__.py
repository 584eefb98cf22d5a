"""Robust and conjugate Gaussian process regression."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    Ablation,
    FittedModel,
    GaussianBelief,
    fit,
    gp_log_marginal_likelihood,
    log_pseudo_marginal,
    posterior,
    predict,
    predict_mean_var,
)
from .errors import InputError, NumericalError, RCGPError  # noqa: E402
from .kernels import (  # noqa: E402
    ConstantMean,
    EmpiricalMean,
    KernelParams,
    PolynomialMean,
    ZeroMean,
    cross_gram,
    gram_matrix,
    kernel_eval,
    mean_vector,
)
from .selection import (  # noqa: E402
    HyperSearchConfig,
    LooComponents,
    loo_components,
    loo_objective,
    optimize_hyperparams,
)
from .weights import (  # noqa: E402
    ConstantWeight,
    HeteroskedasticWeight,
    IMQWeight,
    SEWeight,
    ThresholdRule,
    check_robustness,
    grad_log_w_squared,
    select_c,
    weight_eval,
    weight_vector,
)

__all__ = [
    "Ablation", "FittedModel", "GaussianBelief", "fit", "gp_log_marginal_likelihood", "log_pseudo_marginal",
    "posterior", "predict", "predict_mean_var", "InputError", "NumericalError", "RCGPError",
    "ConstantMean", "EmpiricalMean", "KernelParams", "PolynomialMean", "ZeroMean", "cross_gram",
    "gram_matrix", "kernel_eval", "mean_vector", "HyperSearchConfig", "LooComponents", "loo_components",
    "loo_objective", "optimize_hyperparams", "ConstantWeight", "HeteroskedasticWeight", "IMQWeight",
    "SEWeight", "ThresholdRule", "check_robustness", "grad_log_w_squared", "select_c", "weight_eval",
    "weight_vector",
]
