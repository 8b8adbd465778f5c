"""Synthetic datasets drawn from the generative model, and evaluation helpers."""

from __future__ import annotations

import dataclasses
import math
import re
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .exceptions import InputError, SingularKernelError
from .model import DataMatrix


@dataclasses.dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a grouped dataset.

    ``groups`` is a sequence of ``(dims, active_latents)`` pairs with
    0-based indices. The per-group kernel and noise settings may be scalars
    (shared by all groups) or one value per group.
    """

    n: int = 100
    d: int = 20
    q_true: int = 3
    groups: tuple = (
        (tuple(range(0, 10)), (0, 1)),
        (tuple(range(10, 20)), (0, 2)),
    )
    sigma2_true: object = 1.0
    gamma_true: object = 0.25
    beta_true: object = 100.0
    seed: int = 0

    def __post_init__(self):
        groups = tuple((tuple(int(i) for i in dims), tuple(int(q) for q in act)) for dims, act in self.groups)
        object.__setattr__(self, "groups", groups)
        self.validate()

    def per_group(self, name):
        value = getattr(self, name)
        values = np.broadcast_to(np.asarray(value, dtype=float), (len(self.groups),))
        return values

    def validate(self):
        if self.n < 1 or self.d < 1 or self.q_true < 1:
            raise InputError("n, d and q_true must be positive")
        dims = sorted(i for g, _ in self.groups for i in g)
        if dims != list(range(self.d)):
            raise InputError("group dimension sets must partition 0..d-1")
        for _, active in self.groups:
            if any(not 0 <= q < self.q_true for q in active):
                raise InputError("active latent indices must lie in 0..q_true-1")
        for name in ("sigma2_true", "gamma_true", "beta_true"):
            try:
                values = self.per_group(name)
            except ValueError:
                raise InputError(f"{name} must be a scalar or have one value per group") from None
            if np.any(values < 0) or not np.all(np.isfinite(values)):
                raise InputError(f"{name} must be non-negative and finite")
        if np.any(self.per_group("sigma2_true") <= 0) or np.any(self.per_group("beta_true") <= 0):
            raise InputError("sigma2_true and beta_true must be positive")

    def labels(self) -> np.ndarray:
        out = np.empty(self.d, dtype=int)
        for g, (dims, _) in enumerate(self.groups):
            out[list(dims)] = g
        return out

    def to_dict(self) -> dict:
        return {
            "n": self.n, "d": self.d, "q_true": self.q_true,
            "groups": [[list(dims), list(act)] for dims, act in self.groups],
            "sigma2_true": np.asarray(self.sigma2_true).tolist(),
            "gamma_true": np.asarray(self.gamma_true).tolist(),
            "beta_true": np.asarray(self.beta_true).tolist(),
            "seed": self.seed,
        }


def parse_groups(text: str) -> tuple:
    """Parse ``"1-10:1,2;11-20:1,3"`` (1-based, inclusive) into 0-based groups."""
    groups = []
    for part in text.split(";"):
        match = re.fullmatch(r"\s*([\d,\-\s]+):([\d,\s]+)\s*", part)
        if not match:
            raise InputError(f"malformed group description {part!r}")
        dims = []
        for item in match.group(1).split(","):
            item = item.strip()
            if re.fullmatch(r"\d+-\d+", item):
                lo, hi = (int(x) for x in item.split("-"))
                if hi < lo:
                    raise InputError(f"empty range {item!r}")
                dims.extend(range(lo, hi + 1))
            elif item.isdigit():
                dims.append(int(item))
            else:
                raise InputError(f"malformed dimension list {match.group(1)!r}")
        latents = [int(x) for x in match.group(2).split(",") if x.strip()]
        if not latents or min(dims) < 1 or min(latents) < 1:
            raise InputError("indices are 1-based and groups need at least one latent")
        groups.append((tuple(i - 1 for i in dims), tuple(q - 1 for q in latents)))
    return tuple(groups)


class SyntheticData(NamedTuple):
    Y: DataMatrix
    labels: np.ndarray
    X_true: np.ndarray


def _sample_gp(rng, X, sigma2, gamma, size, jitter):
    diff = X[:, None, :] - X[None, :, :]
    K = sigma2 * np.exp(-0.5 * np.sum(gamma * diff**2, axis=-1))
    for attempt in range(2):
        try:
            L = np.linalg.cholesky(K + jitter * sigma2 * np.eye(len(X)))
            break
        except np.linalg.LinAlgError:
            if attempt == 1:
                raise SingularKernelError("GP prior covariance is not positive definite") from None
            jitter *= 2
    return L @ rng.standard_normal((len(X), size))


def generate(spec: SyntheticSpec = SyntheticSpec(), jitter: float = 1e-8) -> SyntheticData:
    """Draw latents from N(0, I) and each group's dimensions from its GP prior plus noise."""
    rng = np.random.default_rng(spec.seed)
    X = rng.standard_normal((spec.n, spec.q_true))
    Y = np.empty((spec.n, spec.d))
    sigma2 = spec.per_group("sigma2_true")
    gamma = spec.per_group("gamma_true")
    beta = spec.per_group("beta_true")
    for g, (dims, active) in enumerate(spec.groups):
        weights = np.zeros(spec.q_true)
        weights[list(active)] = gamma[g]
        F = _sample_gp(rng, X, sigma2[g], weights, len(dims), jitter)
        Y[:, list(dims)] = F + rng.standard_normal(F.shape) / np.sqrt(beta[g])
    return SyntheticData(DataMatrix.from_array(Y), spec.labels(), X)


class GroupingScore(NamedTuple):
    accuracy: float
    n_effective: int


def hard_assignment(phi) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. the lowest component index on ties
    return np.argmax(np.asarray(phi), axis=1)


def grouping_score(phi, truth, mass_threshold: float = 0.05) -> GroupingScore:
    """Agreement of the hard assignment with ``truth`` under the best one-to-one relabelling."""
    phi = np.asarray(phi, dtype=float)
    truth = np.asarray(truth)
    if not 0 < mass_threshold < 1:
        raise InputError("mass_threshold must lie in (0, 1)")
    d, t = phi.shape
    if truth.shape != (d,):
        raise InputError("truth must have one label per row of phi")
    labels, truth_idx = np.unique(truth, return_inverse=True)
    assigned = hard_assignment(phi)
    counts = np.zeros((t, labels.size))
    np.add.at(counts, (assigned, truth_idx), 1)
    rows, cols = linear_sum_assignment(counts, maximize=True)
    accuracy = counts[rows, cols].sum() / d
    mass = phi.sum(axis=0)
    n_effective = int(np.clip(np.sum(mass > mass_threshold * d), 1, t))
    return GroupingScore(float(accuracy), n_effective)


def mask_random(Y: DataMatrix, frac_rows: float, frac_dims: float, seed: int, min_observed: int = 1) -> DataMatrix:
    """Hide the intersection of a random row subset and a random column subset."""
    if not (0 < frac_rows < 1 and 0 < frac_dims < 1):
        raise InputError("fractions must lie strictly inside (0, 1)")
    n, d = Y.values.shape
    rng = np.random.default_rng(seed)
    rows = rng.choice(n, size=math.ceil(frac_rows * n), replace=False)
    cols = rng.choice(d, size=math.ceil(frac_dims * d), replace=False)
    hide = np.zeros((n, d), dtype=bool)
    hide[np.ix_(rows, cols)] = True
    remaining = (Y.mask & ~hide).sum(axis=0)
    if np.any(remaining < min_observed):
        raise InputError(f"masking would leave a column with fewer than {min_observed} observations")
    mask = Y.mask & ~hide
    return DataMatrix(np.where(mask, Y.values, 0.0), mask)
