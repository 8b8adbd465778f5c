import jax.numpy as jnp
import numpy as np
import pytest

from conftest import random_state
from dpgplvm.exceptions import ConfigError, InputError, StructuralError
from dpgplvm.model import (
    DataMatrix, Mode, ModelConfig, inverse_transform, n_parameters, transform_unconstrained,
)
from dpgplvm.objective import elbo, elbo_gradient, objective_functions

H = 1e-5


def _gradient_error(state, Y):
    f, _ = objective_functions(state.config, state.mode, Y.mask)
    values, mask = jnp.asarray(Y.values), jnp.asarray(Y.mask)
    raw = inverse_transform(state)
    grad = elbo_gradient(state, Y)
    fd = np.zeros_like(raw)
    for i in range(raw.size):
        e = np.zeros_like(raw)
        e[i] = H
        fd[i] = (float(f(jnp.asarray(raw + e), values, mask)[0]) - float(f(jnp.asarray(raw - e), values, mask)[0])) / (2 * H)
    keep = (np.abs(grad) >= 1e-7) | (np.abs(fd) >= 1e-7)
    return np.max(np.abs(grad - fd)[keep] / np.maximum(np.abs(grad), np.abs(fd))[keep])


@pytest.mark.parametrize("seed", range(20))
def test_gradient_matches_central_differences(seed):
    state, Y = random_state(np.random.default_rng(seed), n=6, d=4, q=2, t=2, m=3)
    assert _gradient_error(state, Y) < 1e-4


@pytest.mark.parametrize("mode", [Mode.bgplvm(), Mode.mrd([0, 1, 1, 0])], ids=["bgplvm", "mrd"])
def test_gradient_in_other_modes(mode):
    t = 1 if mode.name == "bgplvm" else 2
    state, Y = random_state(np.random.default_rng(7), n=6, d=4, q=2, t=t, m=3, mode=mode)
    assert _gradient_error(state, Y) < 1e-4


def test_gradient_with_missing_entries():
    rng = np.random.default_rng(3)
    state, Y = random_state(rng, n=6, d=4, q=2, t=2, m=3)
    mask = rng.random((6, 4)) > 0.3
    mask[0] = True
    assert _gradient_error(state, DataMatrix.from_array(Y.values, mask)) < 1e-4


def test_dense_and_masked_paths_agree(rng):
    state, Y = random_state(rng, n=9, d=5, q=2, t=3, m=4)
    raw = jnp.asarray(inverse_transform(state))
    values, mask = jnp.asarray(Y.values), jnp.asarray(Y.mask)
    dense_f, dense_vg = objective_functions(state.config, state.mode, Y.mask)
    masked_f, masked_vg = objective_functions(state.config, state.mode, None)
    assert float(dense_f(raw, values, mask)[0]) == pytest.approx(float(masked_f(raw, values, mask)[0]), abs=1e-9)
    np.testing.assert_allclose(dense_vg(raw, values, mask)[1], masked_vg(raw, values, mask)[1], rtol=1e-7, atol=1e-9)


def test_report_terms_add_up(rng):
    state, Y = random_state(rng)
    report = elbo(state, Y)
    assert report.total == pytest.approx(report.gp.total + report.dp.total + report.hyperprior, abs=1e-10)
    assert report.gp.kl_x >= 0


def test_transform_round_trip(rng):
    state, _ = random_state(rng, n=5, d=4, q=2, t=3, m=2)
    raw = inverse_transform(state)
    assert raw.size == n_parameters(state.config, state.mode)
    back = transform_unconstrained(raw, state.config, state.mode)
    np.testing.assert_allclose(back.dp.phi, state.dp.phi, rtol=1e-12)
    np.testing.assert_allclose(back.latent.sigma, state.latent.sigma, rtol=1e-12)
    np.testing.assert_allclose(inverse_transform(back), raw, rtol=1e-12, atol=1e-12)


def test_wrong_vector_length_is_structural(rng):
    state, _ = random_state(rng)
    with pytest.raises(StructuralError):
        transform_unconstrained(np.zeros(3), state.config, state.mode)


def test_data_shape_mismatch(rng):
    state, Y = random_state(rng)
    with pytest.raises(InputError):
        elbo(state, DataMatrix.from_array(Y.values[:4]))


@pytest.mark.parametrize("bad", [
    dict(q=4), dict(t=0), dict(m=20), dict(jitter=0.0), dict(momentum=1.0),
    dict(learning_rate=-1.0), dict(max_iters=0),
])
def test_invalid_config(bad):
    args = dict(q=2, t=2, n=6, d=4)
    args.update(bad)
    with pytest.raises(ConfigError):
        ModelConfig(**args)


def test_config_json_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        ModelConfig.from_json('{"q": 2, "lr": 0.1}', n=6, d=4)
    config, mode = ModelConfig.from_json('{"q": 2, "t": 3, "mode": "mrd"}', n=6, d=4)
    assert (config.q, config.t, mode) == (2, 3, "mrd")
