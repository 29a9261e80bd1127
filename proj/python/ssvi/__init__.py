"""Star-structured variational inference with piecewise-linear transport maps."""

from ._core import (
    __version__,
    ConfigError,
    FitResult,
    InputError,
    dictionary_size,
    fit_gaussian,
    kl_gaussians,
    mfvi_gaussian,
    mixture_log_concavity_bound,
    run_command,
    set_thread_count,
    ssvi_gaussian,
    ssvi_mfvi_gap,
)

__all__ = [
    "__version__",
    "ConfigError",
    "FitResult",
    "InputError",
    "dictionary_size",
    "fit_gaussian",
    "kl_gaussians",
    "mfvi_gaussian",
    "mixture_log_concavity_bound",
    "run_command",
    "set_thread_count",
    "ssvi_gaussian",
    "ssvi_mfvi_gap",
]
