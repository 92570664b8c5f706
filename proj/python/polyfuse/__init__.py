"""Python bindings for the polyfuse library.

Specs and configs are plain dicts using the same keys as the JSON run
configuration; arrays are float64 numpy arrays.
"""

from ._core import (
    ConfigError,
    DataError,
    Dataset,
    FusionLayer,
    GuardError,
    Model,
    __version__,
    cross_validate,
    fuse_linear,
    fuse_polynomial_full,
    fuse_tensor_full,
    param_count,
    reconstruct_full,
    verify,
)

__all__ = [
    "ConfigError",
    "DataError",
    "Dataset",
    "FusionLayer",
    "GuardError",
    "Model",
    "__version__",
    "cross_validate",
    "fuse_linear",
    "fuse_polynomial_full",
    "fuse_tensor_full",
    "param_count",
    "reconstruct_full",
    "verify",
]
