"""Stochastic microcanonical Langevin sampling (python bindings).

The heavy lifting lives in the C++ extension; this package re-exports the
operations needed for scripting and smoke tests.
"""

from smile._core import (
    NoiseSpec,
    RegressionData,
    Target,
    fit_gamma,
    gamma_quantile_wh,
    load_regression_csv,
    make_funnel,
    make_gmm25,
    make_icg,
    make_linreg_target,
    make_noise_spec,
    make_rosenbrock,
    mode_coverage,
    momentum_update,
    posterior_moments,
    run_sampler,
    second_moment_bias,
    synthetic_regression,
)

__all__ = [
    "NoiseSpec",
    "RegressionData",
    "Target",
    "fit_gamma",
    "gamma_quantile_wh",
    "load_regression_csv",
    "make_funnel",
    "make_gmm25",
    "make_icg",
    "make_linreg_target",
    "make_noise_spec",
    "make_rosenbrock",
    "mode_coverage",
    "momentum_update",
    "posterior_moments",
    "run_sampler",
    "second_moment_bias",
    "synthetic_regression",
]
