"""Rosenbrock-family benchmark densities with exact constants and samplers."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    DimensionError, DivergenceError, MetricError, NonFiniteError, NotDecomposableError,
    RosenbrockError, ZeroVarianceError,
)
from .models import (  # noqa: E402
    ConditionalGaussian, DensityEval, EvenParams, Factor, FullParams, HybridParams, ModelSpec,
    TwoDParams, conditional_decomposition, evaluate, full3d_conditional_x2, grad_log_kernel,
    hessian_log_kernel, log_kernel, log_norm_constant,
)
from .exact import RngStream, SampleBatch, conditional_moment_check, sample_exact  # noqa: E402
from .mcmc import Chain, Metric, SamplerConfig, regularized_metric, run_chain  # noqa: E402
from .diagnostics import (  # noqa: E402
    integrated_autocorrelation, iat_report, ks_two_sample, quantile_table,
)
