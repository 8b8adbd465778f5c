"""Prediction, missing-data imputation and latent inference for new rows."""

from __future__ import annotations

from typing import NamedTuple, Optional, Sequence

import jax.numpy as jnp
import numpy as np
from scipy.linalg import solve_triangular

from .exceptions import InputError, NumericError
from .gp_bound import check_cholesky
from .kernels import ard_se, psi1, psi2
from .model import DataMatrix, ModelState, VariationalLatent, inverse_transform
from .objective import elbo, objective_functions
from .training import TrainTrace, ascend


class Predictive(NamedTuple):
    mean: np.ndarray
    var: np.ndarray


class ImputeResult(NamedTuple):
    rows: np.ndarray
    cols: np.ndarray
    prediction: Predictive
    mse: Optional[float]


class _Factors(NamedTuple):
    Lu: np.ndarray
    LA: np.ndarray
    c: np.ndarray
    beta: float


def _factors(state: ModelState, Y: DataMatrix, d: int, t: int, beta=None) -> _Factors:
    """Cholesky factors of ``Kuu`` and ``I + beta Lu^-1 Psi2 Lu^-T`` for one (dimension, component)."""
    values, mask = Y
    rows = np.flatnonzero(mask[:, d])
    latent = state.latent
    sub = VariationalLatent(latent.mu[rows], latent.sigma[rows], latent.Xu)
    sv = float(state.components.signal_var[t])
    ard = np.asarray(state.components.ard[t])
    beta = float(state.components.noise_prec[t]) if beta is None else float(beta)
    m = latent.Xu.shape[0]
    kuu = ard_se(latent.Xu, latent.Xu, sv, ard) + state.config.jitter * sv * np.eye(m)
    check_cholesky(kuu, block=f"Kuu[t={t}]")
    Lu = np.linalg.cholesky(kuu)
    y = values[rows, d]
    if rows.size:
        p1y = psi1(sub, sv, ard).T @ y
        p2 = psi2(sub, sv, ard)
    else:
        p1y, p2 = np.zeros(m), np.zeros((m, m))
    B = solve_triangular(Lu, solve_triangular(Lu, p2, lower=True).T, lower=True)
    A = beta * 0.5 * (B + B.T) + np.eye(m)
    check_cholesky(A, block=f"A[t={t}]")
    LA = np.linalg.cholesky(A)
    c = solve_triangular(LA, solve_triangular(Lu, p1y, lower=True), lower=True)
    return _Factors(Lu, LA, c, beta)


def _check_dim(state, d):
    if not 0 <= int(d) < state.config.d:
        raise InputError(f"dimension index {d} out of range [0, {state.config.d})")
    return int(d)


def _check_data(state, Y):
    if not isinstance(Y, DataMatrix):
        Y = DataMatrix.from_array(Y)
    if Y.values.shape != (state.config.n, state.config.d):
        raise InputError(f"data shape {Y.values.shape} does not match the trained model")
    return Y


def optimal_qu(state: ModelState, Y, d: int, t: Optional[int] = None, beta=None):
    """Moments of the optimal ``q(u)`` for dimension ``d`` under component ``t``.

    ``t`` defaults to the component with the largest responsibility for
    ``d``. ``beta`` overrides the component's noise precision.

    Returns
    -------
    mean_u : ndarray, shape (M,)
    cov_u : ndarray, shape (M, M)
    """
    Y = _check_data(state, Y)
    d = _check_dim(state, d)
    if t is None:
        t = int(np.argmax(state.dp.phi[d]))
    f = _factors(state, Y, d, t, beta)
    # Kuu (Kuu + beta Psi2)^-1 = Lu A^-1 Lu^-1
    R = solve_triangular(f.LA, f.Lu.T, lower=True)  # LA^-1 Lu^T
    mean = f.beta * R.T @ f.c
    cov = R.T @ R
    return mean, 0.5 * (cov + cov.T)


def _predict_component(state, f: _Factors, t, Xstar):
    sv = float(state.components.signal_var[t])
    ard = np.asarray(state.components.ard[t])
    ksu = ard_se(Xstar, state.latent.Xu, sv, ard)
    W = solve_triangular(f.Lu, ksu.T, lower=True)
    V = solve_triangular(f.LA, W, lower=True)
    mean = f.beta * V.T @ f.c
    var = sv - np.sum(W**2, axis=0) + np.sum(V**2, axis=0) + 1.0 / f.beta
    return mean, var


def predict(state: ModelState, Y, Xstar, dims: Optional[Sequence[int]] = None) -> Predictive:
    """Predictive moments of the observed dimensions ``dims`` at latent points ``Xstar``.

    Each dimension mixes the predictions of the components by its
    responsibilities; the variance is that of the resulting mixture and
    includes observation noise. Queries are treated as exact points.

    Parameters
    ----------
    state : ModelState
        Trained model.
    Y : DataMatrix or array_like
        The training data (NaN marks missing entries).
    Xstar : array_like, shape (P, Q)
    dims : sequence of int, optional
        0-based observed dimensions; all of them by default.

    Returns
    -------
    Predictive
        ``mean`` and ``var`` of shape ``(P, len(dims))``.
    """
    Y = _check_data(state, Y)
    Xstar = np.atleast_2d(np.asarray(Xstar, dtype=float))
    if Xstar.shape[1] != state.config.q:
        raise InputError(f"Xstar must have {state.config.q} columns")
    if not np.all(np.isfinite(Xstar)):
        raise InputError("Xstar must be finite")
    dims = range(state.config.d) if dims is None else [_check_dim(state, d) for d in dims]
    dims = list(dims)
    p = Xstar.shape[0]
    mean = np.zeros((p, len(dims)))
    var = np.zeros((p, len(dims)))
    phi = np.asarray(state.dp.phi)
    for j, d in enumerate(dims):
        first, second, within = np.zeros(p), np.zeros(p), np.zeros(p)
        for t in np.flatnonzero(phi[d] > 0):
            m_t, v_t = _predict_component(state, _factors(state, Y, d, t), t, Xstar)
            first += phi[d, t] * m_t
            second += phi[d, t] * m_t**2
            within += phi[d, t] * v_t
        mean[:, j] = first
        # spread of the component means, clipped against rounding
        var[:, j] = within + np.maximum(second - first**2, 0.0)
    return Predictive(mean, var)


def impute(state: ModelState, Y, truth=None) -> ImputeResult:
    """Predict every masked entry of ``Y`` at the latent mean of its row.

    ``truth`` is an optional full matrix; when given, the mean squared error
    over the masked entries is returned (``None`` if nothing is masked).
    """
    Y = _check_data(state, Y)
    rows, cols = np.nonzero(~Y.mask)
    mean = np.zeros(rows.size)
    var = np.zeros(rows.size)
    for d in np.unique(cols):
        sel = np.flatnonzero(cols == d)
        pred = predict(state, Y, state.latent.mu[rows[sel]], [d])
        mean[sel] = pred.mean[:, 0]
        var[sel] = pred.var[:, 0]
    mse = None
    if truth is not None:
        truth = np.asarray(truth, dtype=float)
        if truth.shape != Y.values.shape:
            raise InputError("truth must have the same shape as Y")
        target = truth[rows, cols]
        if not np.all(np.isfinite(target)):
            raise InputError("truth is missing at an entry that has to be imputed")
        if rows.size:
            mse = float(np.mean((mean - target) ** 2))
    return ImputeResult(rows, cols, Predictive(mean, var), mse)


class NewLatent(NamedTuple):
    latent: VariationalLatent
    bound_ratio: float
    trace: TrainTrace


def _new_block_slices(n, p, q):
    # mu and log-sigma are the first two blocks, row-major over all rows
    total = (n + p) * q
    return slice(n * q, total), slice(total + n * q, 2 * total)


def _joint_raw(state, raw_new, p):
    config, mode = state.config, state.mode
    n, q = config.n, config.q
    trained = inverse_transform(state)
    head = 2 * n * q
    mu, log_sigma = trained[: n * q], trained[n * q: head]
    k = p * q
    return np.concatenate([mu, raw_new[:k], log_sigma, raw_new[k:], trained[head:]])


def _initial_new(state, Y, Ystar):
    """Start each new row at the latent posterior of its nearest training row."""
    obs = Ystar.mask.astype(float)
    joint = Y.mask.astype(float)
    diff = (Ystar.values[:, None, :] - Y.values[None, :, :]) ** 2
    weight = obs[:, None, :] * joint[None, :, :]
    dist = np.sum(diff * weight, axis=-1) / np.maximum(weight.sum(axis=-1), 1.0)
    nearest = np.argmin(dist, axis=1)
    mu = state.latent.mu[nearest]
    sigma = state.latent.sigma[nearest]
    return np.concatenate([mu.ravel(), np.log(sigma).ravel()])


def infer_latent_new(state: ModelState, Y, Ystar) -> NewLatent:
    """Fit ``q(X*)`` for new observations with every trained parameter held fixed.

    Returns the fitted latent posterior of the new rows and the log ratio of
    the joint bound to the training bound.
    """
    Y = _check_data(state, Y)
    if not isinstance(Ystar, DataMatrix):
        Ystar = DataMatrix.from_array(np.atleast_2d(np.asarray(Ystar, dtype=float)).reshape(-1, state.config.d))
    config, mode = state.config, state.mode
    n, q = config.n, config.q
    p = Ystar.values.shape[0]
    if Ystar.values.shape[1] != config.d:
        raise InputError(f"Ystar must have {config.d} columns")
    base = elbo(state, Y).total
    empty = VariationalLatent(np.zeros((0, q)), np.zeros((0, q)), state.latent.Xu)
    if p == 0:
        return NewLatent(empty, 0.0, TrainTrace([], state, True, None, []))
    joint_config = config.replace(n=n + p)
    values = jnp.asarray(np.vstack([Y.values, Ystar.values]))
    mask = np.vstack([Y.mask, Ystar.mask])
    _, vg = objective_functions(joint_config, mode, mask)
    mask = jnp.asarray(mask)
    mu_slice, sigma_slice = _new_block_slices(n, p, q)

    def value_and_grad(raw_new):
        raw = _joint_raw(state, raw_new, p)
        (total, aux), grad = vg(jnp.asarray(raw), values, mask)
        grad = np.asarray(grad)
        return float(total), aux, np.concatenate([grad[mu_slice], grad[sigma_slice]])

    raw_new, reports, converged, error, steps = ascend(_initial_new(state, Y, Ystar), value_and_grad, config)
    if error is not None or not reports:
        raise NumericError(f"latent inference for new rows failed: {error}", block="mu*")
    k = p * q
    latent = VariationalLatent(raw_new[:k].reshape(p, q), np.exp(raw_new[k:]).reshape(p, q), state.latent.Xu)
    trace = TrainTrace(reports, state, converged, None, steps)
    return NewLatent(latent, reports[-1].total - base, trace)
