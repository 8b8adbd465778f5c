"""Collapsed GP free energy per observed dimension and the latent KL term."""

from __future__ import annotations

from typing import NamedTuple

import jax
import jax.numpy as jnp
import numpy as np
from jax.scipy.linalg import solve_triangular
from scipy.linalg import lapack

from .exceptions import InputError, NumericError, SingularKernelError
from .kernels import _ard_se, _psi1, _psi2, _psi2_pairs, _unpack_pairs

LOG_2PI = float(np.log(2.0 * np.pi))
GUARD_RTOL = 1e-8


class GPBoundBreakdown(NamedTuple):
    f_per_dim: np.ndarray
    kl_x: float
    total: float


def _free_energy_factored(Lu, yty, psi1y, n_obs, psi0, psi2, beta):
    """Stable collapsed bound for one dimension given ``Lu = chol(Kuu + jitter I)``.

    ``psi1y`` is ``Psi1^T y`` over the observed rows; only triangular solves
    against the two Cholesky factors are used.
    """
    eye = jnp.eye(Lu.shape[0], dtype=Lu.dtype)
    tmp = solve_triangular(Lu, psi2, lower=True)
    B = solve_triangular(Lu, tmp.T, lower=True)
    B = 0.5 * (B + B.T)
    LA = jnp.linalg.cholesky(beta * B + eye)
    c = solve_triangular(LA, solve_triangular(Lu, psi1y, lower=True), lower=True)
    trace_gap = psi0 - jnp.trace(B)
    fit = yty - beta * jnp.dot(c, c)
    value = (
        -0.5 * n_obs * LOG_2PI
        + 0.5 * n_obs * jnp.log(beta)
        - jnp.sum(jnp.log(jnp.diag(LA)))
        - 0.5 * beta * trace_gap
        - 0.5 * beta * fit
    )
    # both gaps are non-negative in exact arithmetic; a clearly negative value
    # means cancellation has destroyed the result
    valid = (trace_gap >= -GUARD_RTOL * psi0) & (fit >= -GUARD_RTOL * yty)
    return jnp.where(valid, value, jnp.nan)


def _free_energy(yty, psi1y, n_obs, psi0, psi2, Kuu, beta, jitter):
    Lu = jnp.linalg.cholesky(Kuu + jitter * jnp.eye(Kuu.shape[0], dtype=Kuu.dtype))
    return _free_energy_factored(Lu, yty, psi1y, n_obs, psi0, psi2, beta)


def _kl_latent(mu, sigma):
    return 0.5 * jnp.sum(mu**2 + sigma - jnp.log(sigma) - 1.0)


def _component_stats(latent, components, values, mask):
    """Per-component statistics restricted to each dimension's observed rows.

    Shapes: ``psi0 (T, D)``, ``psi1y (T, D, M)``, ``psi2 (T, D, M, M)``,
    ``kuu (T, M, M)``, ``yty (D,)``, ``n_obs (D,)``.
    """
    mu, sigma, Xu = latent
    sv, ard, _ = components
    W = mask.astype(values.dtype)
    Yw = values * W
    psi1_t = jax.vmap(_psi1, in_axes=(None, None, None, 0, 0))(mu, sigma, Xu, sv, ard)
    pairs_t = jax.vmap(_psi2_pairs, in_axes=(None, None, None, 0, 0))(mu, sigma, Xu, sv, ard)
    psi2 = _unpack_pairs(jnp.einsum("tnp,nd->tdp", pairs_t, W), Xu.shape[0])
    n_obs = jnp.sum(W, axis=0)
    return {
        "yty": jnp.sum(Yw * values, axis=0),
        "n_obs": n_obs,
        "psi0": sv[:, None] * n_obs[None, :],
        "psi1y": jnp.einsum("tnm,nd->tdm", psi1_t, Yw),
        "psi2": psi2,
        "kuu": jax.vmap(_ard_se, in_axes=(None, None, 0, 0))(Xu, Xu, sv, ard),
    }


def _component_free_energies(latent, components, values, mask, jitter):
    """Free energy of every (component, dimension) pair, shape ``(T, D)``."""
    s = _component_stats(latent, components, values, mask)
    sv, _, beta = components
    m = s["kuu"].shape[-1]

    def one_component(kuu, sv_t, psi0, psi1y, psi2, beta_t):
        Lu = jnp.linalg.cholesky(kuu + jitter * sv_t * jnp.eye(m, dtype=kuu.dtype))
        per_dim = jax.vmap(_free_energy_factored, in_axes=(None, 0, 0, 0, 0, 0, None))
        return per_dim(Lu, s["yty"], psi1y, s["n_obs"], psi0, psi2, beta_t)

    return jax.vmap(one_component)(s["kuu"], sv, s["psi0"], s["psi1y"], s["psi2"], beta)


def _component_free_energies_dense(latent, components, values, jitter):
    """Same as :func:`_component_free_energies` for a fully observed ``values``.

    Every dimension then shares the statistics of its component, so only one
    pair of Cholesky factors per component is needed.
    """
    mu, sigma, Xu = latent
    sv, ard, beta = components
    n, _ = values.shape
    m = Xu.shape[0]
    eye = jnp.eye(m, dtype=values.dtype)
    yty = jnp.sum(values**2, axis=0)

    def one_component(sv_t, ard_t, beta_t):
        kuu = _ard_se(Xu, Xu, sv_t, ard_t) + jitter * sv_t * eye
        Lu = jnp.linalg.cholesky(kuu)
        psi1_ = _psi1(mu, sigma, Xu, sv_t, ard_t)
        psi2_ = _psi2(mu, sigma, Xu, sv_t, ard_t)
        B = solve_triangular(Lu, solve_triangular(Lu, psi2_, lower=True).T, lower=True)
        B = 0.5 * (B + B.T)
        LA = jnp.linalg.cholesky(beta_t * B + eye)
        C = solve_triangular(LA, solve_triangular(Lu, psi1_.T @ values, lower=True), lower=True)
        trace_gap = n * sv_t - jnp.trace(B)
        fit = yty - beta_t * jnp.sum(C**2, axis=0)
        value = (
            -0.5 * n * LOG_2PI
            + 0.5 * n * jnp.log(beta_t)
            - jnp.sum(jnp.log(jnp.diag(LA)))
            - 0.5 * beta_t * trace_gap
            - 0.5 * beta_t * fit
        )
        valid = (trace_gap >= -GUARD_RTOL * n * sv_t) & (fit >= -GUARD_RTOL * yty)
        return jnp.where(valid, value, jnp.nan)

    return jax.vmap(one_component)(sv, ard, beta)


def _gp_terms(latent, components, phi, values, mask, jitter, dense=False):
    if dense:
        F = _component_free_energies_dense(latent, components, values, jitter)
    else:
        F = _component_free_energies(latent, components, values, mask, jitter)
    f = jnp.sum(phi * F.T, axis=1)
    return f, _kl_latent(latent.mu, latent.sigma)


# --- validated public API -----------------------------------------------------------

def check_cholesky(matrix, block="Kuu"):
    """Raise :class:`SingularKernelError` if ``matrix`` has no Cholesky factor."""
    matrix = np.asarray(matrix, dtype=float)
    if not np.all(np.isfinite(matrix)):
        raise NumericError(f"{block}: non-finite entries", block=block)
    _, info = lapack.dpotrf(matrix, lower=1)
    if info > 0:
        raise SingularKernelError(
            f"{block}: leading minor of order {info} is not positive definite",
            minor=int(info), block=block,
        )


def free_energy_dim(y_d, stats, Kuu_tilde, beta_tilde, jitter) -> float:
    """Collapsed free energy of one observed dimension.

    ``y_d`` holds only the observed entries; ``stats`` must be computed over
    the same rows. ``jitter`` is added to the diagonal of ``Kuu_tilde``.
    """
    y_d = np.asarray(y_d, dtype=float).ravel()
    psi1_ = np.asarray(stats.psi1, dtype=float)
    psi2_ = np.asarray(stats.psi2, dtype=float)
    Kuu = np.asarray(Kuu_tilde, dtype=float)
    n_obs = y_d.size
    if n_obs < 1:
        raise InputError("at least one observed entry is required")
    if psi1_.shape != (n_obs, Kuu.shape[0]) or psi2_.shape != Kuu.shape:
        raise InputError("statistics do not match y_d / Kuu shapes")
    if not beta_tilde > 0:
        raise InputError("beta_tilde must be positive")
    if not np.all(np.isfinite(y_d)):
        raise NumericError("y_d must be finite")
    m = Kuu.shape[0]
    check_cholesky(Kuu + jitter * np.eye(m), block="Kuu")
    value = _free_energy(
        y_d @ y_d, psi1_.T @ y_d, float(n_obs), float(stats.psi0), psi2_, Kuu,
        float(beta_tilde), float(jitter),
    )
    value = float(value)
    if not np.isfinite(value):
        raise NumericError("free energy is not finite", block="free_energy")
    return value


def kl_latent(latent) -> float:
    """``KL(q(X) || N(0, I))`` for a diagonal Gaussian ``q(X)``."""
    mu = np.asarray(latent.mu, dtype=float)
    sigma = np.asarray(latent.sigma, dtype=float)
    if np.any(sigma <= 0):
        raise InputError("latent variances must be strictly positive")
    return float(_kl_latent(mu, sigma))


def gp_lower_bound(state, Y) -> GPBoundBreakdown:
    """Sum of per-dimension free energies minus the latent KL.

    Each dimension's free energy is the responsibility-weighted average of
    the collapsed bounds it would have under every component.
    """
    values, mask = Y
    if values.shape != (state.config.n, state.config.d):
        raise InputError("data shape does not match the model state")
    if np.any(mask.sum(axis=0) < 1):
        raise InputError("every column needs at least one observed entry")
    kl = kl_latent(state.latent)
    f, _ = _gp_terms(
        state.latent, state.components, jnp.asarray(state.dp.phi), values, mask, state.config.jitter
    )
    f = np.asarray(f)
    if not np.all(np.isfinite(f)):
        _raise_for_kernel(state)
        raise NumericError("free energy is not finite", block="free_energy")
    return GPBoundBreakdown(f, kl, float(np.sum(f) - kl))


def _raise_for_kernel(state):
    Xu = np.asarray(state.latent.Xu)
    sv, ard, _ = state.components
    for t, (s, g) in enumerate(zip(np.asarray(sv), np.asarray(ard))):
        kuu = np.asarray(_ard_se(Xu, Xu, s, g))
        check_cholesky(kuu + state.config.jitter * s * np.eye(Xu.shape[0]), block=f"Kuu[t={t}]")
