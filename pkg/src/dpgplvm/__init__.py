"""Gaussian-process latent variable model with a Dirichlet-process prior over
per-dimension kernel hyperparameters."""

import os


def _cap_threads():
    # must run before jax/numpy spin up their thread pools
    value = os.environ.get("DPGPLVM_THREADS")
    if not value:
        return
    try:
        n = int(value)
    except ValueError:
        return
    if n < 1:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(n))
    flags = os.environ.get("XLA_FLAGS", "")
    if "intra_op_parallelism_threads" not in flags:
        extra = f"--xla_cpu_multi_thread_eigen={'true' if n > 1 else 'false'} intra_op_parallelism_threads={n}"
        os.environ["XLA_FLAGS"] = f"{flags} {extra}".strip()


_cap_threads()

import jax  # noqa: E402

# the bound needs double precision; jax defaults to float32
jax.config.update("jax_enable_x64", True)

from .exceptions import (  # noqa: E402
    ConfigError, DPGPLVMError, InitializationError, InputError, NumericError,
    SingularKernelError, StructuralError,
)
from .model import (  # noqa: E402
    ComponentParams, DataMatrix, DPState, Mode, ModelConfig, ModelState, VariationalLatent,
    initialize, inverse_transform, transform_unconstrained,
)
from .estimator import DPGPLVM  # noqa: E402

__version__ = "0.1.0"
