"""Model state, configuration, parameter transforms and initialization."""

from __future__ import annotations

import dataclasses
import json
import math
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.special import softmax

from .exceptions import ConfigError, InitializationError, InputError, NumericError, StructuralError

MODES = ("dpgplvm", "bgplvm", "mrd")

_CONFIG_KEYS = {
    "q", "t", "m", "s1", "s2", "jitter", "learning_rate", "momentum",
    "max_iters", "elbo_tol", "seed", "mode",
}


@dataclasses.dataclass(frozen=True)
class ModelConfig:
    """Sizes, priors and optimizer settings for one model.

    ``jitter`` is relative: each component adds ``jitter * signal_var`` to the
    diagonal of its inducing-point covariance. ``elbo_tol`` is relative to
    the magnitude of the current bound.
    """

    q: int
    t: int
    n: int
    d: int
    m: Optional[int] = None
    s1: float = 1.0
    s2: float = 1.0
    jitter: float = 1e-6
    learning_rate: float = 1e-2
    momentum: float = 0.9
    max_iters: int = 2000
    elbo_tol: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.m is None:
            object.__setattr__(self, "m", min(self.n, 10 * self.q))
        self.validate()

    def validate(self):
        if self.q < 1:
            raise ConfigError(f"q must be >= 1, got {self.q}")
        if self.q >= self.d:
            raise ConfigError(f"q must be smaller than d (q={self.q}, d={self.d})")
        if not 1 <= self.t <= self.d:
            raise ConfigError(f"t must lie in [1, d={self.d}], got {self.t}")
        if not 1 <= self.m <= self.n:
            raise ConfigError(f"m must lie in [1, n={self.n}], got {self.m}")
        for name in ("s1", "s2", "jitter", "elbo_tol"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ConfigError(f"{name} must be a positive finite number, got {value}")
        # a zero learning rate is allowed: it freezes the initial state
        if not (math.isfinite(self.learning_rate) and self.learning_rate >= 0):
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.max_iters < 1:
            raise ConfigError(f"max_iters must be >= 1, got {self.max_iters}")

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_json(cls, text_or_dict, n: int, d: int) -> tuple["ModelConfig", Optional[str]]:
        """Parse a JSON config object; returns ``(config, mode)``.

        Unknown keys are rejected. ``n`` and ``d`` come from the data.
        """
        raw = json.loads(text_or_dict) if isinstance(text_or_dict, str) else dict(text_or_dict)
        unknown = set(raw) - _CONFIG_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        mode = raw.pop("mode", None)
        if mode is not None and mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
        return cls(n=n, d=d, **raw), mode


@dataclasses.dataclass(frozen=True)
class Mode:
    """Which special case of the model is trained.

    ``assignment`` is only used by ``mrd`` and holds the fixed component id
    of every observed dimension.
    """

    name: str = "dpgplvm"
    assignment: Optional[tuple] = None

    def __post_init__(self):
        if self.name not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.name!r}")
        if self.name == "mrd":
            if self.assignment is None:
                raise ConfigError("mrd mode requires an assignment")
            object.__setattr__(self, "assignment", tuple(int(a) for a in self.assignment))
        elif self.assignment is not None:
            raise ConfigError(f"{self.name} mode does not take an assignment")

    @classmethod
    def dpgplvm(cls):
        return cls("dpgplvm")

    @classmethod
    def bgplvm(cls):
        return cls("bgplvm")

    @classmethod
    def mrd(cls, assignment: Sequence[int]):
        return cls("mrd", tuple(assignment))

    def check(self, config: ModelConfig):
        if self.name == "bgplvm" and config.t != 1:
            raise ConfigError(f"bgplvm mode requires t = 1, got t = {config.t}")
        if self.name == "mrd":
            a = np.asarray(self.assignment)
            if a.shape != (config.d,):
                raise ConfigError(f"mrd assignment must have length d={config.d}, got {a.size}")
            if a.min() < 0 or a.max() >= config.t:
                raise ConfigError(f"mrd assignment ids must lie in [0, t={config.t})")

    def fixed_phi(self, d: int, t: int) -> Optional[np.ndarray]:
        if self.name == "bgplvm":
            return np.ones((d, 1))
        if self.name == "mrd":
            return np.eye(t)[np.asarray(self.assignment)]
        return None


class DataMatrix(NamedTuple):
    """Observations with a boolean mask (True = observed)."""

    values: np.ndarray
    mask: np.ndarray

    @classmethod
    def from_array(cls, Y, mask=None) -> "DataMatrix":
        """Build from an array in which NaN marks a missing entry."""
        Y = np.array(Y, dtype=float)
        if Y.ndim != 2:
            raise InputError(f"Y must be a 2-D array, got shape {Y.shape}")
        observed = ~np.isnan(Y)
        if mask is not None:
            mask = np.asarray(mask, dtype=bool)
            if mask.shape != Y.shape:
                raise InputError("mask shape does not match Y")
            observed &= mask
        if not np.all(np.isfinite(Y[observed])):
            raise NumericError("observed entries of Y must be finite")
        return cls(np.where(observed, Y, 0.0), observed)

    @property
    def shape(self):
        return self.values.shape

    def check(self, min_observed: int = 1):
        counts = self.mask.sum(axis=0)
        if np.any(counts < min_observed):
            bad = np.flatnonzero(counts < min_observed).tolist()
            raise InputError(f"columns {bad} have fewer than {min_observed} observed rows")


class VariationalLatent(NamedTuple):
    mu: np.ndarray  # (N, Q)
    sigma: np.ndarray  # (N, Q) diagonal variances
    Xu: np.ndarray  # (M, Q)


class ComponentParams(NamedTuple):
    signal_var: np.ndarray  # (T,)
    ard: np.ndarray  # (T, Q)
    noise_prec: np.ndarray  # (T,)


class DPState(NamedTuple):
    a: np.ndarray  # (T-1,)
    b: np.ndarray  # (T-1,)
    phi: np.ndarray  # (D, T)
    w1: float
    w2: float


@dataclasses.dataclass(frozen=True, eq=False)
class ModelState:
    config: ModelConfig
    latent: VariationalLatent
    components: ComponentParams
    dp: DPState
    mode: Mode = Mode()

    @property
    def params(self):
        """The array part of the state as a pytree ``(latent, components, dp)``."""
        return (self.latent, self.components, self.dp)

    def replace(self, **changes) -> "ModelState":
        return dataclasses.replace(self, **changes)

    def equals(self, other: "ModelState") -> bool:
        """Bit-identical comparison of every array and of config/mode."""
        if self.config != other.config or self.mode != other.mode:
            return False
        for x, y in zip(_leaves(self.params), _leaves(other.params)):
            if np.shape(x) != np.shape(y) or not np.array_equal(np.asarray(x), np.asarray(y)):
                return False
        return True


def _leaves(params):
    out = []
    for group in params:
        out.extend(group)
    return out


# --- unconstrained parameterization -------------------------------------------------

def parameter_blocks(config: ModelConfig, mode: Mode):
    """Ordered ``(name, shape, transform)`` blocks of the flat parameter vector.

    ``transform`` is ``"identity"``, ``"log"`` or ``"softmax"`` (row-wise).
    """
    n, q, m, t, d = config.n, config.q, config.m, config.t, config.d
    blocks = [
        ("mu", (n, q), "identity"),
        ("sigma", (n, q), "log"),
        ("Xu", (m, q), "identity"),
        ("signal_var", (t,), "log"),
        ("ard", (t, q), "log"),
        ("noise_prec", (t,), "log"),
    ]
    if mode.name != "bgplvm":
        blocks += [("a", (t - 1,), "log"), ("b", (t - 1,), "log")]
    if mode.name == "dpgplvm":
        blocks.append(("phi", (d, t), "softmax"))
    if mode.name != "bgplvm":
        blocks += [("w1", (), "log"), ("w2", (), "log")]
    return blocks


def n_parameters(config: ModelConfig, mode: Mode) -> int:
    return sum(int(np.prod(shape)) for _, shape, _ in parameter_blocks(config, mode))


def _split(raw, config, mode, xp):
    out, offset = {}, 0
    for name, shape, transform in parameter_blocks(config, mode):
        size = int(np.prod(shape))
        chunk = xp.reshape(raw[offset:offset + size], shape)
        offset += size
        if transform == "log":
            chunk = xp.exp(chunk)
        elif transform == "softmax":
            chunk = xp.exp(chunk - xp.max(chunk, axis=1, keepdims=True))
            chunk = chunk / xp.sum(chunk, axis=1, keepdims=True)
        out[name] = chunk
    return out


def unpack_params(raw, config: ModelConfig, mode: Mode, xp=np):
    """Map a flat unconstrained vector to the ``(latent, components, dp)`` pytree.

    ``xp`` is the array namespace (numpy or jax.numpy); the jax path is what
    gets differentiated during training.
    """
    v = _split(raw, config, mode, xp)
    latent = VariationalLatent(v["mu"], v["sigma"], v["Xu"])
    components = ComponentParams(v["signal_var"], v["ard"], v["noise_prec"])
    if mode.name == "bgplvm":
        dp = DPState(xp.zeros(0), xp.zeros(0), xp.ones((config.d, 1)), config.s1, config.s2)
    else:
        phi = v["phi"] if mode.name == "dpgplvm" else xp.asarray(mode.fixed_phi(config.d, config.t))
        dp = DPState(v["a"], v["b"], phi, v["w1"], v["w2"])
    return latent, components, dp


def transform_unconstrained(raw, config: ModelConfig, mode: Mode = Mode()) -> ModelState:
    """Constrained :class:`ModelState` from a flat unconstrained vector."""
    raw = np.asarray(raw, dtype=float)
    expected = n_parameters(config, mode)
    if raw.ndim != 1 or raw.size != expected:
        raise StructuralError(f"expected a flat vector of length {expected}, got shape {raw.shape}")
    if not np.all(np.isfinite(raw)):
        raise NumericError("unconstrained vector contains non-finite entries")
    mode.check(config)
    latent, components, dp = unpack_params(raw, config, mode)
    dp = dp._replace(w1=float(dp.w1), w2=float(dp.w2))
    return ModelState(config, latent, components, dp, mode)


def inverse_transform(state: ModelState) -> np.ndarray:
    """Flat unconstrained vector of ``state`` (inverse of :func:`transform_unconstrained`)."""
    values = {
        "mu": state.latent.mu, "sigma": state.latent.sigma, "Xu": state.latent.Xu,
        "signal_var": state.components.signal_var, "ard": state.components.ard,
        "noise_prec": state.components.noise_prec,
        "a": state.dp.a, "b": state.dp.b, "phi": state.dp.phi,
        "w1": state.dp.w1, "w2": state.dp.w2,
    }
    chunks = []
    for name, shape, transform in parameter_blocks(state.config, state.mode):
        value = np.asarray(values[name], dtype=float)
        if value.shape != shape:
            raise StructuralError(f"{name} has shape {value.shape}, expected {shape}")
        if transform == "log":
            if np.any(value <= 0):
                raise InputError(f"{name} must be strictly positive")
            value = np.log(value)
        elif transform == "softmax":
            if np.any(value <= 0):
                raise InputError("phi entries must be strictly positive to have finite logits")
            value = np.log(value)
        chunks.append(value.ravel())
    return np.concatenate(chunks) if chunks else np.zeros(0)


# --- initialization ------------------------------------------------------------------

def pca_scores(Y: DataMatrix, q: int) -> np.ndarray:
    """First ``q`` principal-component scores (unscaled) of the column-centred data.

    Masked entries are replaced by their column mean first.
    """
    values, mask = Y
    counts = np.maximum(mask.sum(axis=0), 1)
    col_mean = (values * mask).sum(axis=0) / counts
    filled = np.where(mask, values, col_mean)
    centred = filled - filled.mean(axis=0)
    U, s, _ = np.linalg.svd(centred, full_matrices=False)
    tol = max(centred.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    rank = int(np.sum(s > tol))
    if rank < q:
        raise InitializationError(
            f"data has numerical rank {rank}, fewer than the {q} latent dimensions requested",
            rank=rank,
        )
    return U[:, :q] * s[:q]


def initialize(Y: DataMatrix, config: ModelConfig, mode: Mode = Mode()) -> ModelState:
    """Starting point for optimization.

    PCA means, unit variances, inducing inputs on a random subset of the
    means, and log-normal draws for sticks and hyperparameters. Pure in
    ``(Y, config, mode)``.
    """
    if Y.values.shape != (config.n, config.d):
        raise InputError(f"data shape {Y.values.shape} does not match config ({config.n}, {config.d})")
    mode.check(config)
    n, q, m, t, d = config.n, config.q, config.m, config.t, config.d
    rng = np.random.default_rng(config.seed)

    mu = pca_scores(Y, q)
    sigma = np.ones((n, q))
    Xu = mu[np.sort(rng.choice(n, size=m, replace=False))].copy()

    a = rng.lognormal(size=t - 1)
    b = rng.lognormal(size=t - 1)
    phi = softmax(rng.standard_normal((d, t)), axis=1)
    signal_var = rng.lognormal(size=t)
    ard = rng.lognormal(size=(t, q))
    noise_prec = rng.lognormal(size=t)

    fixed = mode.fixed_phi(d, t)
    if fixed is not None:
        phi = fixed
    if mode.name == "bgplvm":
        a, b = np.zeros(0), np.zeros(0)

    return ModelState(
        config,
        VariationalLatent(mu, sigma, Xu),
        ComponentParams(signal_var, ard, noise_prec),
        DPState(a, b, phi, float(config.s1), float(config.s2)),
        mode,
    )
