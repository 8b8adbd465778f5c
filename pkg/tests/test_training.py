import numpy as np
import pytest

from dpgplvm.model import DataMatrix, Mode, ModelConfig, initialize, inverse_transform, transform_unconstrained
from dpgplvm.synthetic import SyntheticSpec, generate
from dpgplvm.training import ascend, merge_components, move_column, train, train_from


@pytest.fixture(scope="module")
def small_data():
    spec = SyntheticSpec(n=30, d=8, q_true=2, groups=(((0, 1, 2, 3), (0,)), ((4, 5, 6, 7), (1,))), seed=4)
    return generate(spec)


def _config(data, **kw):
    args = dict(q=2, t=3, n=data.Y.values.shape[0], d=data.Y.values.shape[1], m=8, max_iters=300, seed=1)
    args.update(kw)
    return ModelConfig(**args)


@pytest.mark.parametrize("mode_name", ["dpgplvm", "bgplvm", "mrd"])
def test_trace_is_non_decreasing(small_data, mode_name):
    mode = {"dpgplvm": Mode.dpgplvm(), "bgplvm": Mode.bgplvm(), "mrd": Mode.mrd(small_data.labels)}[mode_name]
    t = {"dpgplvm": 3, "bgplvm": 1, "mrd": 2}[mode_name]
    trace = train(small_data.Y, _config(small_data, t=t), mode)
    totals = trace.totals
    assert trace.error is None
    assert np.all(np.diff(totals) >= 0)
    assert all(r.gp.kl_x >= 0 for r in trace.elbo_history)
    assert [r.iter for r in trace.elbo_history] == list(range(len(totals)))
    assert totals[-1] > totals[0]


def test_training_is_deterministic(small_data):
    a = train(small_data.Y, _config(small_data, max_iters=120))
    b = train(small_data.Y, _config(small_data, max_iters=120))
    assert a.final_state.equals(b.final_state)
    np.testing.assert_array_equal(a.totals, b.totals)


def test_zero_learning_rate_keeps_the_initial_state(small_data):
    config = _config(small_data, learning_rate=0.0, max_iters=30)
    trace = train(small_data.Y, config)
    assert trace.final_state.equals(initialize(small_data.Y, config))
    assert np.all(trace.totals == trace.totals[0])


def test_final_state_matches_last_report(small_data):
    from dpgplvm.objective import elbo
    trace = train(small_data.Y, _config(small_data, max_iters=80))
    assert elbo(trace.final_state, small_data.Y).total == pytest.approx(trace.totals[-1], abs=1e-8)


def test_iteration_budget_is_respected(small_data):
    trace = train(small_data.Y, _config(small_data, max_iters=40, elbo_tol=1e-12))
    assert len(trace.totals) - 1 <= 40
    assert not trace.converged


def test_merge_moves_all_mass(small_data):
    config = _config(small_data)
    state = initialize(small_data.Y, config)
    raw = merge_components(inverse_transform(state), config, state.mode, src=2, dst=0)
    phi = transform_unconstrained(raw, config, state.mode).dp.phi
    np.testing.assert_allclose(phi[:, 0], state.dp.phi[:, 0] + state.dp.phi[:, 2], atol=1e-9)
    assert np.all(phi[:, 2] < 1e-9)
    np.testing.assert_allclose(phi.sum(axis=1), 1.0, atol=1e-12)


def test_move_column_changes_one_row(small_data):
    config = _config(small_data)
    state = initialize(small_data.Y, config)
    raw = move_column(inverse_transform(state), config, state.mode, d=5, dst=1)
    phi = transform_unconstrained(raw, config, state.mode).dp.phi
    assert np.argmax(phi[5]) == 1 and phi[5, 1] > 1 - 1e-9
    np.testing.assert_allclose(np.delete(phi, 5, axis=0), np.delete(state.dp.phi, 5, axis=0), rtol=1e-12)


def test_ascend_finds_quadratic_maximum():
    target = np.array([1.0, -2.0, 0.5])

    def value_and_grad(x):
        r = x - target
        aux = {"f": np.zeros(1), "kl": 0.0, "dp": np.zeros(6), "hyper": 0.0}
        return -float(r @ r), aux, -2.0 * r

    config = ModelConfig(q=1, t=1, n=2, d=2, learning_rate=0.1, momentum=0.5, max_iters=500, elbo_tol=1e-12)
    x, reports, converged, error, _ = ascend(np.zeros(3), value_and_grad, config)
    assert error is None
    np.testing.assert_allclose(x, target, atol=1e-6)
    assert np.all(np.diff([r.total for r in reports]) >= 0)


def test_ascend_reports_bad_start():
    config = ModelConfig(q=1, t=1, n=2, d=2)
    _, reports, converged, error, _ = ascend(
        np.zeros(2), lambda x: (np.nan, None, np.zeros(2)), config
    )
    assert reports == [] and not converged and "non-finite" in error


def test_ascend_rejects_every_downhill_step():
    # the gradient points the wrong way, so no step is ever accepted
    config = ModelConfig(q=1, t=1, n=2, d=2, max_iters=5)
    aux = {"f": np.zeros(1), "kl": 0.0, "dp": np.zeros(6), "hyper": 0.0}
    x, reports, converged, _, _ = ascend(
        np.zeros(1), lambda x: (-float(x[0] ** 2), aux, np.array([1.0])), config
    )
    assert converged and len(reports) == 1
    np.testing.assert_array_equal(x, np.zeros(1))


def test_training_with_missing_entries(small_data):
    rng = np.random.default_rng(0)
    mask = rng.random(small_data.Y.values.shape) > 0.2
    Y = DataMatrix.from_array(small_data.Y.values, mask)
    trace = train(Y, _config(small_data, max_iters=100))
    assert trace.error is None and np.all(np.diff(trace.totals) >= 0)


def test_train_from_continues(small_data):
    config = _config(small_data, max_iters=50)
    first = train(small_data.Y, config)
    second = train_from(first.final_state, small_data.Y)
    assert second.totals[0] == pytest.approx(first.totals[-1], abs=1e-8)
    assert second.totals[-1] >= first.totals[-1]
