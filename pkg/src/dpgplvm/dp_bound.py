"""Truncated stick-breaking bound on the assignment variables."""

from __future__ import annotations

from typing import NamedTuple

import jax.numpy as jnp
import numpy as np
from jax.scipy.special import betaln, digamma, gammaln

from .exceptions import InputError


class DPBoundBreakdown(NamedTuple):
    e_log_pz: float
    e_log_pv: float
    e_log_palpha: float
    h_qv: float
    h_qz: float
    h_qalpha: float
    total: float

    @classmethod
    def zeros(cls):
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)


def mixing_proportions(v) -> np.ndarray:
    """Stick-breaking weights from the ``T - 1`` free stick fractions."""
    v = np.asarray(v, dtype=float).ravel()
    if np.any(v <= 0) or np.any(v >= 1):
        raise InputError("stick fractions must lie strictly inside (0, 1)")
    remaining = np.concatenate([[1.0], np.cumprod(1.0 - v)])
    return np.concatenate([v, [1.0]]) * remaining


def _safe_entropy(phi):
    positive = phi > 0
    safe = jnp.where(positive, phi, 1.0)
    return -jnp.sum(jnp.where(positive, phi * jnp.log(safe), 0.0))


def _expected_log_priors(a, b, phi, w1, w2, s1, s2):
    e_log_alpha = digamma(w1) - jnp.log(w2)
    e_alpha = w1 / w2
    e_log_palpha = -gammaln(s1) + s1 * jnp.log(s2) - s2 * e_alpha + (s1 - 1.0) * e_log_alpha
    t = phi.shape[1]
    if t == 1:
        zero = jnp.zeros(())
        return zero, zero, e_log_palpha
    dab = digamma(a + b)
    e_log_v = digamma(a) - dab
    e_log_1mv = digamma(b) - dab
    # tail[:, t] = sum_{t' > t} phi[:, t'] for t < T - 1
    tail = jnp.cumsum(phi[:, ::-1], axis=1)[:, ::-1][:, 1:]
    e_log_pz = jnp.sum(phi[:, : t - 1] @ e_log_v + tail @ e_log_1mv)
    e_log_pv = (t - 1) * e_log_alpha + (e_alpha - 1.0) * jnp.sum(e_log_1mv)
    return e_log_pz, e_log_pv, e_log_palpha


def _entropies(a, b, phi, w1, w2):
    h_qv = jnp.sum(
        betaln(a, b)
        - (a - 1.0) * digamma(a)
        - (b - 1.0) * digamma(b)
        + (a + b - 2.0) * digamma(a + b)
    )
    h_qz = _safe_entropy(phi)
    h_qalpha = w1 - jnp.log(w2) + gammaln(w1) + (1.0 - w1) * digamma(w1)
    return h_qv, h_qz, h_qalpha


def _dp_terms(a, b, phi, w1, w2, s1, s2):
    return _expected_log_priors(a, b, phi, w1, w2, s1, s2) + _entropies(a, b, phi, w1, w2)


def _check_dp(dp):
    a = np.asarray(dp.a, dtype=float)
    b = np.asarray(dp.b, dtype=float)
    phi = np.asarray(dp.phi, dtype=float)
    if phi.ndim != 2 or a.shape != (phi.shape[1] - 1,) or b.shape != a.shape:
        raise InputError("stick parameters must have length T - 1")
    if np.any(a <= 0) or np.any(b <= 0) or dp.w1 <= 0 or dp.w2 <= 0:
        raise InputError("a, b, w1, w2 must be strictly positive")
    if np.any(phi < 0) or np.any(phi > 1) or np.max(np.abs(phi.sum(axis=1) - 1.0)) > 1e-10:
        raise InputError("rows of phi must lie on the probability simplex")
    return a, b, phi, float(dp.w1), float(dp.w2)


def dp_expected_log_priors(dp, s1, s2):
    """``(E[log p(Z|V)], E[log p(V|alpha)], E[log p(alpha)])`` under q."""
    if s1 <= 0 or s2 <= 0:
        raise InputError("s1 and s2 must be positive")
    a, b, phi, w1, w2 = _check_dp(dp)
    return tuple(float(x) for x in _expected_log_priors(a, b, phi, w1, w2, float(s1), float(s2)))


def dp_entropies(dp):
    """``(H[q(V)], H[q(Z)], H[q(alpha)])``."""
    a, b, phi, w1, w2 = _check_dp(dp)
    return tuple(float(x) for x in _entropies(a, b, phi, w1, w2))


def dp_lower_bound(dp, s1, s2) -> DPBoundBreakdown:
    terms = dp_expected_log_priors(dp, s1, s2) + dp_entropies(dp)
    return DPBoundBreakdown(*terms, total=float(sum(terms)))
