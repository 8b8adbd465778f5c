"""ARD squared-exponential kernel and its expectations under a diagonal Gaussian.

The underscore-prefixed functions are pure ``jax.numpy`` code used inside the
jitted objective. The public functions validate their inputs and return
numpy arrays.
"""

from __future__ import annotations

from typing import NamedTuple, Sequence

import jax.numpy as jnp
import numpy as np

from .exceptions import InputError, NumericError


class PsiStats(NamedTuple):
    psi0: float
    psi1: np.ndarray  # (N, M)
    psi2: np.ndarray  # (M, M)


def _ard_se(X1, X2, sigma2, gamma):
    diff = X1[:, None, :] - X2[None, :, :]
    return sigma2 * jnp.exp(-0.5 * jnp.sum(gamma * diff**2, axis=-1))


def _log_psi1(mu, sigma, Xu, sigma2, gamma):
    scale = gamma * sigma + 1.0  # (N, Q)
    diff2 = (mu[:, None, :] - Xu[None, :, :]) ** 2  # (N, M, Q)
    return (
        jnp.log(sigma2)
        - 0.5 * jnp.sum(jnp.log(scale), axis=-1)[:, None]
        - jnp.sum(gamma * diff2 / (2.0 * scale[:, None, :]), axis=-1)
    )


def _psi1(mu, sigma, Xu, sigma2, gamma):
    return jnp.exp(_log_psi1(mu, sigma, Xu, sigma2, gamma))


def _psi2_pairs(mu, sigma, Xu, sigma2, gamma):
    """Per-sample Psi2 entries for the upper-triangular inducing pairs, shape ``(N, P)``.

    Psi2 is symmetric, so only ``P = M (M + 1) / 2`` pairs are evaluated. The
    quadratic in the latent mean is expanded so that the log table comes
    from two matrix products instead of an (N, P, Q) tensor.
    """
    scale = 2.0 * gamma * sigma + 1.0  # (N, Q)
    a = gamma / scale
    i, j = jnp.triu_indices(Xu.shape[0])
    xbar = 0.5 * (Xu[i] + Xu[j])  # (P, Q)
    xdiff = jnp.sum(gamma * (Xu[i] - Xu[j]) ** 2, axis=-1)  # (P,)
    const = 2.0 * jnp.log(sigma2) - 0.5 * jnp.sum(jnp.log(scale), axis=-1) - jnp.sum(a * mu**2, axis=-1)
    log_terms = const[:, None] - 0.25 * xdiff[None] + 2.0 * (a * mu) @ xbar.T - a @ (xbar**2).T
    return jnp.exp(log_terms)


def _unpack_pairs(values, m):
    """Symmetric ``(..., M, M)`` matrices from their upper-triangular entries."""
    i, j = jnp.triu_indices(m)
    out = jnp.zeros(values.shape[:-1] + (m, m), dtype=values.dtype)
    out = out.at[..., i, j].set(values)
    return out.at[..., j, i].set(values)


def _psi2_per_sample(mu, sigma, Xu, sigma2, gamma):
    """Per-sample summands of Psi2, shape ``(N, M, M)``."""
    return _unpack_pairs(_psi2_pairs(mu, sigma, Xu, sigma2, gamma), Xu.shape[0])


def _psi2(mu, sigma, Xu, sigma2, gamma):
    return _unpack_pairs(jnp.sum(_psi2_pairs(mu, sigma, Xu, sigma2, gamma), axis=0), Xu.shape[0])


# --- validated public API -----------------------------------------------------------

def _finite(name, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericError(f"{name}: non-finite input")


def _check_params(sigma2, gamma, q):
    gamma = np.asarray(gamma, dtype=float)
    _finite("kernel parameters", sigma2, gamma)
    if gamma.shape != (q,):
        raise InputError(f"gamma must have shape ({q},), got {gamma.shape}")
    if sigma2 <= 0 or np.any(gamma < 0):
        raise InputError("sigma2 must be positive and gamma non-negative")
    return float(sigma2), gamma


def _check_latent(latent):
    mu = np.asarray(latent.mu, dtype=float)
    sigma = np.asarray(latent.sigma, dtype=float)
    Xu = np.asarray(latent.Xu, dtype=float)
    _finite("latent", mu, sigma, Xu)
    if mu.shape != sigma.shape or mu.ndim != 2 or Xu.ndim != 2 or Xu.shape[1] != mu.shape[1]:
        raise InputError("inconsistent latent shapes")
    if np.any(sigma < 0):
        raise InputError("latent variances must be non-negative")
    return mu, sigma, Xu


def ard_se(X1, X2, sigma2, gamma) -> np.ndarray:
    """ARD squared-exponential covariance between the rows of ``X1`` and ``X2``."""
    X1 = np.atleast_2d(np.asarray(X1, dtype=float))
    X2 = np.atleast_2d(np.asarray(X2, dtype=float))
    _finite("ard_se", X1, X2)
    if X1.shape[1] != X2.shape[1]:
        raise InputError("X1 and X2 must have the same number of columns")
    sigma2, gamma = _check_params(sigma2, gamma, X1.shape[1])
    return np.asarray(_ard_se(X1, X2, sigma2, gamma))


def psi0(sigma2, n: int) -> float:
    """Sum over samples of the expected kernel diagonal; equals ``n * sigma2``."""
    if not (np.isfinite(sigma2) and sigma2 > 0):
        raise InputError("sigma2 must be positive and finite")
    if n < 1:
        raise InputError("n must be >= 1")
    return float(n * sigma2)


def psi1(latent, sigma2, gamma) -> np.ndarray:
    """``E_q[K_fu]`` of shape ``(N, M)``, computed in log space."""
    mu, sigma, Xu = _check_latent(latent)
    sigma2, gamma = _check_params(sigma2, gamma, mu.shape[1])
    return np.asarray(_psi1(mu, sigma, Xu, sigma2, gamma))


def psi2(latent, sigma2, gamma) -> np.ndarray:
    """``E_q[K_uf K_fu]`` of shape ``(M, M)``, summed over samples and symmetrized."""
    mu, sigma, Xu = _check_latent(latent)
    sigma2, gamma = _check_params(sigma2, gamma, mu.shape[1])
    return np.asarray(_psi2(mu, sigma, Xu, sigma2, gamma))


def psi_stats(latent, sigma2, gamma) -> PsiStats:
    return PsiStats(psi0(sigma2, np.shape(latent.mu)[0]), psi1(latent, sigma2, gamma), psi2(latent, sigma2, gamma))


def mixture_stats(phi_d, per_component: Sequence[PsiStats], Kuu_t: Sequence[np.ndarray], beta):
    """Responsibility-weighted statistics for one observed dimension.

    Returns ``(PsiStats, Kuu_tilde, beta_tilde)`` where every quantity is
    ``sum_t phi_d[t] * value_t``.
    """
    phi_d = np.asarray(phi_d, dtype=float)
    beta = np.asarray(beta, dtype=float)
    t = phi_d.size
    if len(per_component) != t or len(Kuu_t) != t or beta.shape != (t,):
        raise InputError("phi_d, per_component, Kuu_t and beta must all have length T")
    if np.any(phi_d < -1e-8) or np.any(phi_d > 1 + 1e-8) or abs(phi_d.sum() - 1.0) > 1e-8:
        raise InputError("phi_d must lie on the probability simplex")
    p0 = sum(w * s.psi0 for w, s in zip(phi_d, per_component))
    p1 = sum(w * np.asarray(s.psi1) for w, s in zip(phi_d, per_component))
    p2 = sum(w * np.asarray(s.psi2) for w, s in zip(phi_d, per_component))
    kuu = sum(w * np.asarray(k) for w, k in zip(phi_d, Kuu_t))
    return PsiStats(float(p0), p1, p2), kuu, float(phi_d @ beta)
