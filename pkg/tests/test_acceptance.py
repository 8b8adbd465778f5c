"""End-to-end acceptance runs, one test per criterion.

Each test records a pass/fail line that is printed in the terminal summary.
Criteria 1, 2, 9 and 10 train 40 models in total and take roughly 25
minutes on one core.
"""

import json
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE, dense_log_marginal, random_state
from dpgplvm.cli import main
from dpgplvm.inference import impute
from dpgplvm.model import Mode, ModelConfig
from dpgplvm.synthetic import SyntheticSpec, generate, grouping_score, mask_random
from dpgplvm.training import train

SEEDS = range(10)
# the optimizer budget used by every training run below
RUN = dict(q=3, m=15, max_iters=4000, learning_rate=1e-2, momentum=0.9)
TIME_LIMIT = 60.0


def record(k, passed, detail):
    ACCEPTANCE[k] = (bool(passed), detail)
    print(f"criterion {k}: {'PASS' if passed else 'FAIL'}  {detail}")
    assert passed, detail


def _ard_pattern(ard):
    return ard > 0.1 * ard.max()


@pytest.fixture(scope="module")
def grouping_runs():
    """Default synthetic data, free responsibilities, T = 5."""
    runs = []
    for seed in SEEDS:
        data = generate(SyntheticSpec(seed=seed))
        config = ModelConfig(t=5, n=100, d=20, seed=seed, **RUN)
        start = time.perf_counter()
        trace = train(data.Y, config, Mode.dpgplvm())
        elapsed = time.perf_counter() - start
        runs.append((data, trace, elapsed))
    return runs


@pytest.fixture(scope="module")
def imputation_runs():
    """25% of rows x 25% of columns hidden; three models per seed."""
    out = []
    for seed in SEEDS:
        data = generate(SyntheticSpec(seed=seed))
        Y = mask_random(data.Y, 0.25, 0.25, seed=seed)
        row = {}
        for name, mode, t in [
            ("dpgplvm", Mode.dpgplvm(), 5), ("bgplvm", Mode.bgplvm(), 1), ("mrd", Mode.mrd(data.labels), 2),
        ]:
            trace = train(Y, ModelConfig(t=t, n=100, d=20, seed=seed, **RUN), mode)
            row[name] = (trace, impute(trace.final_state, Y, data.Y.values).mse)
        out.append(row)
    return out


def test_criterion_01_grouping_recovery(grouping_runs):
    ok = 0
    details = []
    for data, trace, elapsed in grouping_runs:
        score = grouping_score(trace.final_state.dp.phi, data.labels)
        good = score.accuracy == 1.0 and score.n_effective == 2 and elapsed < TIME_LIMIT
        ok += good
        details.append(f"{score.accuracy:.2f}/{score.n_effective}/{elapsed:.0f}s")
    record(1, ok >= 8, f"{ok}/10 seeds with accuracy 1, two components, under 60 s [{' '.join(details)}]")


def test_criterion_02_ard_structure(grouping_runs):
    checked, ok = 0, 0
    for data, trace, elapsed in grouping_runs:
        state = trace.final_state
        score = grouping_score(state.dp.phi, data.labels)
        if not (score.accuracy == 1.0 and score.n_effective == 2 and elapsed < TIME_LIMIT):
            continue
        checked += 1
        used = np.unique(np.argmax(state.dp.phi, axis=1))
        patterns = [_ard_pattern(np.asarray(state.components.ard[t])) for t in used]
        two_each = all(p.sum() == 2 for p in patterns)
        shared = len(patterns) == 2 and int(np.sum(patterns[0] & patterns[1])) == 1
        ok += two_each and shared
    record(2, checked > 0 and ok == checked, f"{ok}/{checked} passing runs with two high ARD weights per component, one shared")


def test_criterion_03_exact_marginal():
    from test_gp_bound import _exact_instance
    from dpgplvm.gp_bound import free_energy_dim
    from dpgplvm.kernels import ard_se, psi_stats
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 21))
        y, latent, sv, ard, beta, K = _exact_instance(rng, n, n)
        f = free_energy_dim(y, psi_stats(latent, sv, ard), ard_se(latent.Xu, latent.Xu, sv, ard), beta, 1e-12 * sv)
        worst = max(worst, abs(f - dense_log_marginal(y, K, beta)))
    record(3, worst < 1e-6, f"max |bound - exact| = {worst:.2e} over 20 instances")


def test_criterion_04_bound_dominance():
    from test_gp_bound import _exact_instance
    from dpgplvm.gp_bound import free_energy_dim
    from dpgplvm.kernels import ard_se, psi_stats
    worst = -np.inf
    for seed in range(50):
        rng = np.random.default_rng(1000 + seed)
        n = int(rng.integers(3, 21))
        m = int(rng.integers(1, n))
        y, latent, sv, ard, beta, K = _exact_instance(rng, n, m)
        f = free_energy_dim(y, psi_stats(latent, sv, ard), ard_se(latent.Xu, latent.Xu, sv, ard), beta, 1e-10 * sv)
        worst = max(worst, f - dense_log_marginal(y, K, beta))
    record(4, worst <= 1e-8, f"max (bound - exact) = {worst:.2e} over 50 instances")


def test_criterion_05_kernel_expectations():
    import test_kernels as tk
    failures = []
    for check in (tk.test_psi0_matches_monte_carlo, tk.test_psi1_matches_monte_carlo,
                  tk.test_psi2_matches_monte_carlo):
        for seed in range(10):
            try:
                check(seed)
            except AssertionError:
                failures.append(f"{check.__name__}[{seed}]")
    record(5, not failures, "30 instances within 3 standard errors" if not failures else f"failed: {failures}")


def test_criterion_06_dp_terms():
    import test_dp_bound as td
    failures = []
    for name, check, seeds in [
        ("expectations", td.test_expected_log_priors_match_monte_carlo, range(5)),
        ("entropies", td.test_entropies_match_closed_forms, range(10)),
        ("hand values", lambda _: td.test_hand_values_for_unit_parameters(), [0]),
    ]:
        for seed in seeds:
            try:
                check(seed)
            except AssertionError:
                failures.append(f"{name}[{seed}]")
    record(6, not failures, "MC expectations, closed-form entropies and hand values agree" if not failures else f"failed: {failures}")


def test_criterion_07_gradients():
    from test_objective import _gradient_error
    worst = max(_gradient_error(*random_state(np.random.default_rng(seed))) for seed in range(20))
    record(7, worst < 1e-4, f"max relative error vs central differences = {worst:.2e} over 20 states")


def test_criterion_08_special_cases():
    import test_gp_bound as tg
    from dpgplvm.objective import elbo
    from dpgplvm.model import DPState
    worst = 0.0
    for seed in range(5):
        rng = np.random.default_rng(seed)
        state, Y = random_state(rng, n=8, d=5, q=2, t=1, m=4, mode=Mode.bgplvm())
        worst = max(worst, abs(elbo(state, Y).total - tg._hand_bgplvm(state, Y)))
        mrd = state.replace(mode=Mode.mrd(np.zeros(5, dtype=int)),
                            dp=DPState(np.zeros(0), np.zeros(0), np.ones((5, 1)), 1.0, 1.0))
        a, b = elbo(state, Y).gp, elbo(mrd, Y).gp
        worst = max(worst, float(np.max(np.abs(a.f_per_dim - b.f_per_dim))), abs(a.total - b.total))
    record(8, worst < 1e-10, f"max deviation = {worst:.2e}")


def test_criterion_09_imputation(imputation_runs):
    mse = {k: np.mean([row[k][1] for row in imputation_runs]) for k in ("dpgplvm", "bgplvm", "mrd")}
    ok = mse["dpgplvm"] <= 1.1 * mse["bgplvm"] and mse["dpgplvm"] <= 1.1 * mse["mrd"]
    record(9, ok, "mean MSE " + ", ".join(f"{k} {v:.4f}" for k, v in mse.items()))


def test_criterion_10_monotone_traces(grouping_runs, imputation_runs):
    traces = [trace for _, trace, _ in grouping_runs]
    traces += [row[k][0] for row in imputation_runs for k in row]
    monotone = all(np.all(np.diff(t.totals) >= 0) for t in traces)
    kl_ok = all(r.gp.kl_x >= 0 for t in traces for r in t.elbo_history)
    record(10, monotone and kl_ok, f"{len(traces)} traces, non-decreasing: {monotone}, KL >= 0: {kl_ok}")


def _cli_pipeline(out, config):
    steps = [
        ["--seed", "11", "--out-dir", str(out), "synth", "--mask-rows", "0.25", "--mask-dims", "0.25"],
        ["--seed", "11", "--out-dir", str(out), "train", "--data", str(out / "data.csv"), "--config", config],
        ["--out-dir", str(out), "impute", "--model", str(out / "model.json"), "--data", str(out / "data.csv"),
         "--truth", str(out / "data_complete.csv")],
        ["--out-dir", str(out), "predict", "--model", str(out / "model.json"), "--data", str(out / "data.csv"),
         "--latent", str(out / "latent.csv")],
    ]
    (out / "latent.csv").parent.mkdir(parents=True, exist_ok=True)
    (out / "latent.csv").write_text("x1,x2,x3\n0,0,0\n0.5,-1,2\n")
    return [main(argv) for argv in steps]


def test_criterion_11_determinism(tmp_path):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"m": 15, "max_iters": 500}))
    codes = [_cli_pipeline(tmp_path / run, str(config)) for run in ("a", "b")]
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    same = all((tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes() for n in names)
    ok = codes[0] == codes[1] == [0, 0, 0, 0] and same
    record(11, ok, f"{len(names)} files byte-identical across reruns: {same}")
