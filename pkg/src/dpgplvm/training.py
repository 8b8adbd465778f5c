"""Gradient ascent with momentum and step-size backtracking on the ELBO."""

from __future__ import annotations

import json
import logging
from typing import List, NamedTuple, Optional

import jax.numpy as jnp
import numpy as np

from .exceptions import NumericError
from .model import (
    DataMatrix, Mode, ModelConfig, ModelState, initialize, inverse_transform, parameter_blocks,
    transform_unconstrained,
)
from .objective import ElboReport, make_report, objective_functions

logger = logging.getLogger(__name__)

WINDOW = 25
MAX_HALVINGS = 30
# merge proposals (responsibilities only)
MERGE_LAP = 250
MERGE_ITERS = 100
MERGE_CANDIDATES = 2
MERGE_FLOOR = 1e-10


class TrainTrace(NamedTuple):
    elbo_history: List[ElboReport]
    final_state: ModelState
    converged: bool
    error: Optional[str] = None
    step_sizes: Optional[List[float]] = None

    @property
    def totals(self) -> np.ndarray:
        return np.array([r.total for r in self.elbo_history])


def ascend(raw, value_and_grad, config: ModelConfig, callback=None):
    """Run the optimizer from ``raw``.

    ``value_and_grad(raw) -> (total, aux, grad)``. Returns
    ``(raw, reports, converged, error, step_sizes)``. A step is accepted only
    if the bound does not decrease; otherwise the step is halved and the
    velocity cleared. The step size returns to the base rate after every
    accepted step.
    """
    total, aux, grad = value_and_grad(raw)
    if not np.isfinite(total) or not np.all(np.isfinite(grad)):
        return raw, [], False, "non-finite ELBO or gradient at the initial state", []
    reports = [make_report(total, aux, 0)]
    steps = [0.0]
    velocity = np.zeros_like(raw)
    converged, error = False, None
    for it in range(1, config.max_iters + 1):
        step = config.learning_rate
        for _ in range(MAX_HALVINGS + 1):
            proposal = config.momentum * velocity + step * grad
            candidate = raw + proposal
            c_total, c_aux, c_grad = value_and_grad(candidate)
            if np.isfinite(c_total) and c_total >= total and np.all(np.isfinite(c_grad)):
                break
            step *= 0.5
            velocity = np.zeros_like(raw)
        else:
            # no ascent direction at any step size: treat as a stationary point
            converged = True
            break
        raw, velocity, total, aux, grad = candidate, proposal, c_total, c_aux, c_grad
        report = make_report(total, aux, it)
        reports.append(report)
        steps.append(step)
        if callback is not None:
            callback(report, step)
        if it >= WINDOW:
            previous = reports[-1 - WINDOW].total
            if abs(total - previous) < config.elbo_tol * abs(total):
                converged = True
                break
    return raw, reports, converged, error, steps


def _log_record(report: ElboReport, step: float):
    logger.info(json.dumps({
        "iter": report.iter, "total": report.total, "gp": report.gp.total,
        "dp": report.dp.total, "hyperprior": report.hyperprior, "step_size": step,
    }))


def _phi_slice(config: ModelConfig, mode: Mode) -> slice:
    offset = 0
    for name, shape, _ in parameter_blocks(config, mode):
        size = int(np.prod(shape))
        if name == "phi":
            return slice(offset, offset + size)
        offset += size
    raise ValueError("layout has no responsibility block")


def _softmax_rows(logits):
    z = np.exp(logits - logits.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


def merge_components(raw, config: ModelConfig, mode: Mode, src: int, dst: int) -> np.ndarray:
    """Move all responsibility of component ``src`` onto ``dst`` in a flat vector."""
    sl = _phi_slice(config, mode)
    phi = _softmax_rows(raw[sl].reshape(config.d, config.t))
    phi[:, dst] += phi[:, src]
    phi[:, src] = 0.0
    phi = np.maximum(phi, MERGE_FLOOR)
    phi /= phi.sum(axis=1, keepdims=True)
    out = raw.copy()
    out[sl] = np.log(phi).ravel()
    return out


def move_column(raw, config: ModelConfig, mode: Mode, d: int, dst: int) -> np.ndarray:
    """Put all responsibility of column ``d`` on component ``dst`` in a flat vector."""
    sl = _phi_slice(config, mode)
    logits = raw[sl].reshape(config.d, config.t).copy()
    logits[d] = np.log(MERGE_FLOOR)
    logits[d, dst] = 0.0
    out = raw.copy()
    out[sl] = logits.ravel()
    return out


def _reassign(raw, total, value_and_grad, config, mode):
    """Greedy sweep moving single columns between occupied components.

    Saturated responsibilities barely move under gradient steps, so a column
    can stay with a poor component indefinitely. Each column goes to the
    occupied component with the highest bound, if that beats the current one.
    Returns the new vector and one ``(total, aux)`` per accepted move.
    """
    accepted = []
    sl = _phi_slice(config, mode)
    for d in range(config.d):
        occupied = _occupied(raw, config, mode)
        current = int(np.argmax(raw[sl].reshape(config.d, config.t)[d]))
        best = None
        for dst in occupied:
            if dst == current:
                continue
            candidate = move_column(raw, config, mode, d, dst)
            value, aux, grad = value_and_grad(candidate)
            if np.isfinite(value) and np.all(np.isfinite(grad)) and value > total and (best is None or value > best[0]):
                best = (value, aux, candidate)
        if best is not None:
            total, aux, raw = best
            accepted.append((total, aux))
            logger.debug("moved column %d", d)
    return raw, accepted


def _occupied(raw, config, mode):
    phi = _softmax_rows(raw[_phi_slice(config, mode)].reshape(config.d, config.t))
    return sorted(set(np.argmax(phi, axis=1).tolist()))


def _try_merges(raw, total, value_and_grad, config, mode, budget):
    """Short trial ascents from the most promising merges.

    Returns ``(raw, reports, steps, used)``; ``reports`` is empty when no
    trial ended above ``total``. Only the part of an accepted trial that
    lies above ``total`` is returned, so the combined trace never drops.
    """
    occupied = _occupied(raw, config, mode)
    scored = []
    for src in occupied:
        for dst in occupied:
            if src != dst:
                candidate = merge_components(raw, config, mode, src, dst)
                value = value_and_grad(candidate)[0]
                if np.isfinite(value):
                    scored.append((-value, src, dst, candidate))
    scored.sort(key=lambda item: item[:3])
    used = 0
    for _, src, dst, candidate in scored[:MERGE_CANDIDATES]:
        iters = min(MERGE_ITERS, budget - used)
        if iters < 1:
            break
        trial_raw, reports, _, error, steps = ascend(
            candidate, value_and_grad, config.replace(max_iters=iters)
        )
        used += max(len(reports) - 1, 0)
        if error is None and reports and reports[-1].total > total:
            keep = next(k for k, r in enumerate(reports) if r.total > total)
            logger.debug("merged component %d into %d", src, dst)
            return trial_raw, reports[keep:], steps[keep:], used
    return raw, [], [], used


def train_from(state: ModelState, Y: DataMatrix, verbose: bool = False) -> TrainTrace:
    """Optimize every free parameter of ``state`` against ``Y``.

    Gradient ascent runs in laps. When responsibilities are free, every lap
    ends with proposals to merge one occupied component into another; a
    merge is kept only if a short ascent from it beats the current bound.
    Trial iterations count against ``max_iters``.
    """
    config, mode = state.config, state.mode
    _, vg = objective_functions(config, mode, Y.mask)
    values, mask = jnp.asarray(Y.values), jnp.asarray(Y.mask)

    def value_and_grad(raw):
        (total, aux), grad = vg(jnp.asarray(raw), values, mask)
        return float(total), aux, np.asarray(grad)

    callback = _log_record if verbose else None
    merging = mode.name == "dpgplvm" and config.t > 1 and config.learning_rate > 0
    raw0 = inverse_transform(state)
    raw, reports, steps = raw0, [], []
    remaining, converged = config.max_iters, False
    while remaining > 0:
        lap = min(remaining, MERGE_LAP) if merging else remaining
        raw, lap_reports, converged, error, lap_steps = ascend(raw, value_and_grad, config.replace(max_iters=lap))
        if error is not None:
            return TrainTrace(reports, state, False, error, steps)
        _extend(reports, steps, lap_reports if not reports else lap_reports[1:],
                lap_steps if not steps else lap_steps[1:], callback)
        remaining -= len(lap_reports) - 1
        if not merging or remaining <= 0:
            break
        raw, moves = _reassign(raw, reports[-1].total, value_and_grad, config, mode)
        _extend(reports, steps, [make_report(v, aux, 0) for v, aux in moves], [0.0] * len(moves), callback)
        raw, merge_reports, merge_steps, used = _try_merges(
            raw, reports[-1].total, value_and_grad, config, mode, remaining
        )
        remaining -= used
        _extend(reports, steps, merge_reports, merge_steps, callback)
        if converged and not merge_reports and not moves:
            break
        converged = False
    final = state if np.array_equal(raw, raw0) else transform_unconstrained(raw, config, mode)
    return TrainTrace(reports, final, converged, None, steps)


def _extend(reports, steps, new_reports, new_steps, callback):
    for report, step in zip(new_reports, new_steps):
        report = report._replace(iter=len(reports))
        reports.append(report)
        steps.append(step)
        if callback is not None and report.iter > 0:
            callback(report, step)


def train(Y: DataMatrix, config: ModelConfig, mode: Mode = Mode(), verbose: bool = False) -> TrainTrace:
    """Initialize and fit a model. Deterministic given ``(Y, config, mode)``."""
    Y.check(1)
    return train_from(initialize(Y, config, mode), Y, verbose=verbose)
