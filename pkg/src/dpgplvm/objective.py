"""The full variational objective and its gradient in the unconstrained space."""

from __future__ import annotations

import functools
from typing import NamedTuple

import jax
import jax.numpy as jnp
import numpy as np

from .dp_bound import DPBoundBreakdown, _dp_terms
from .exceptions import InputError, NumericError
from .gp_bound import GPBoundBreakdown, _gp_terms, gp_lower_bound
from .model import ModelConfig, Mode, ModelState, inverse_transform, parameter_blocks, unpack_params

HALF_LOG_2PI = 0.5 * float(np.log(2.0 * np.pi))


class ElboReport(NamedTuple):
    total: float
    gp: GPBoundBreakdown
    dp: DPBoundBreakdown
    hyperprior: float
    iter: int = 0


def _log_lognormal(x):
    u = jnp.log(x)
    return jnp.sum(-u - 0.5 * u**2 - HALF_LOG_2PI)


def _hyperprior(components):
    sv, ard, beta = components
    return _log_lognormal(sv) + _log_lognormal(ard) + _log_lognormal(beta)


def hyperprior_log_density(components) -> float:
    """Standard log-normal log density summed over every ARD weight, signal variance and precision."""
    arrays = [np.asarray(x, dtype=float) for x in components]
    if any(np.any(x <= 0) for x in arrays):
        raise InputError("hyperparameters must be strictly positive")
    return float(_hyperprior(arrays))


def _terms(params, values, mask, *, s1, s2, jitter, include_dp, dense):
    latent, components, dp = params
    f, kl = _gp_terms(latent, components, dp.phi, values, mask, jitter, dense=dense)
    hyper = _hyperprior(components)
    gp_total = jnp.sum(f) - kl
    if include_dp:
        dp_terms = jnp.stack(_dp_terms(dp.a, dp.b, dp.phi, dp.w1, dp.w2, s1, s2))
    else:
        dp_terms = jnp.zeros(6)
    total = gp_total + jnp.sum(dp_terms) + hyper
    return total, {"f": f, "kl": kl, "dp": dp_terms, "hyper": hyper}


@functools.lru_cache(maxsize=64)
def _compiled(config: ModelConfig, mode: Mode, dense: bool):
    """Jitted ``raw -> (total, aux)`` and its value-and-gradient for one layout."""
    kwargs = dict(
        s1=config.s1, s2=config.s2, jitter=config.jitter, include_dp=mode.name != "bgplvm", dense=dense
    )

    def objective(raw, values, mask):
        params = unpack_params(raw, config, mode, xp=jnp)
        return _terms(params, values, mask, **kwargs)

    return jax.jit(objective), jax.jit(jax.value_and_grad(objective, has_aux=True))


def _layout_key(config: ModelConfig) -> ModelConfig:
    # optimizer settings and seed do not change the objective; share compilations
    return config.replace(learning_rate=1e-2, momentum=0.9, max_iters=1, elbo_tol=1e-4, seed=0)


def objective_functions(config: ModelConfig, mode: Mode, mask=None):
    """Compiled objective functions; a fully observed ``mask`` selects the dense path."""
    dense = mask is not None and bool(np.all(np.asarray(mask)))
    return _compiled(_layout_key(config), mode, dense)


def make_report(total, aux, iteration=0) -> ElboReport:
    f = np.asarray(aux["f"])
    kl = float(aux["kl"])
    dp = [float(x) for x in np.asarray(aux["dp"])]
    gp = GPBoundBreakdown(f, kl, float(np.sum(f) - kl))
    return ElboReport(
        float(total), gp, DPBoundBreakdown(*dp, total=float(sum(dp))), float(aux["hyper"]), iteration
    )


def _check_data(state: ModelState, Y):
    values, mask = Y
    if values.shape != (state.config.n, state.config.d):
        raise InputError(
            f"data shape {values.shape} does not match state ({state.config.n}, {state.config.d})"
        )
    if np.any(np.asarray(mask).sum(axis=0) < 1):
        raise InputError("every column needs at least one observed entry")
    return jnp.asarray(values), jnp.asarray(mask)


def elbo(state: ModelState, Y) -> ElboReport:
    """Evaluate the full bound: GP part + DP part + log hyperprior."""
    values, mask = _check_data(state, Y)
    value_fn, _ = objective_functions(state.config, state.mode, mask)
    total, aux = value_fn(jnp.asarray(inverse_transform(state)), values, mask)
    if not np.isfinite(float(total)):
        gp_lower_bound(state, Y)  # raises a precise error if a kernel is singular
        raise NumericError("ELBO is not finite")
    return make_report(total, aux)


def elbo_gradient(state: ModelState, Y) -> np.ndarray:
    """Gradient of :func:`elbo` with respect to the flat unconstrained parameters."""
    values, mask = _check_data(state, Y)
    _, grad_fn = objective_functions(state.config, state.mode, mask)
    (total, _), grad = grad_fn(jnp.asarray(inverse_transform(state)), values, mask)
    if not np.isfinite(float(total)):
        raise NumericError("ELBO is not finite")
    grad = np.asarray(grad)
    if not np.all(np.isfinite(grad)):
        offset = 0
        for name, shape, _ in parameter_blocks(state.config, state.mode):
            size = int(np.prod(shape))
            if not np.all(np.isfinite(grad[offset:offset + size])):
                raise NumericError(f"non-finite gradient in parameter block {name!r}", block=name)
            offset += size
    return grad
