"""Acceptance checks, one test per criterion.

Each test records a verdict line in ``RESULTS``; conftest prints them in the
terminal summary.  The two full-experiment runs (criteria 8 and 9) take a few
minutes on one core and are marked ``slow``.
"""
import json
import time

import numpy as np
import pytest

from lqem import cli
from lqem import experiment as ex
from lqem.model import LatentDynamics, ParameterEstimate
from lqem.penalty import PenaltySpec, kappa_weight, lq_scalar_prox
from lqem.simulator import SimConfig, simulate, simulate_fully_observed
from lqem.smoother import build_grid, e_step, forward_backward, smooth
from lqem.solvers import SolverOptions, default_init, map_surrogate_grad, run_estimator

from oracles import cd_lasso, kalman_rts, prox_grid_argmin

RESULTS = {}


def record(key, ok, detail):
    RESULTS[key] = (bool(ok), detail)
    print(f"criterion {key}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, detail


def test_c1_prox_matches_grid_oracle():
    rng = np.random.default_rng(1)
    qs = np.array([0.1, 0.3, 0.5, 0.7, 0.9, 1.0])
    triples = [(rng.uniform(-10, 10), 2.0 * (1.0 - rng.random()), rng.choice(qs))
               for _ in range(1000)]
    t0 = time.perf_counter()
    ours = [lq_scalar_prox(z, lam, q) for z, lam, q in triples]
    elapsed = time.perf_counter() - t0
    worst = max(abs(t - prox_grid_argmin(z, lam, q)) for t, (z, lam, q) in zip(ours, triples))
    record("1", worst <= 2e-5 and elapsed < 5.0,
           f"max |prox - grid argmin| = {worst:.2e}, prox time {elapsed:.3f} s")


def test_c2_soft_threshold_exact():
    rng = np.random.default_rng(2)
    z = rng.uniform(-10, 10, 10_000)
    lam = 2.0 * (1.0 - rng.random(10_000))
    got = np.array([lq_scalar_prox(a, b, 1.0) for a, b in zip(z, lam)])
    worst = float(np.max(np.abs(got - np.sign(z) * np.maximum(np.abs(z) - lam, 0.0))))
    record("2", worst <= 1e-12, f"max deviation {worst:.2e} over 1e4 draws")


def _expected_complete_q(theta, spec, post, grid, k_diag):
    """E[log p(y | z, theta)] under the smoothed marginals, minus the K quadratic."""
    phase = spec.phases()[:, None] + grid.nodes[None, :]
    mean = np.sin(phase) * (spec.inputs @ theta)[:, None]
    resid2 = (spec.responses[:, None] - mean) ** 2
    return float(-0.5 * np.sum(post.marginals * resid2) / spec.noise_var_obs
                 - 0.5 * np.sum(k_diag * theta**2))


def test_c3_surrogate_gradient():
    rng = np.random.default_rng(3)
    worst = 0.0
    h = 1e-4
    for inst in range(10):
        ds = simulate(SimConfig(n=40, p=4, theta_true=rng.uniform(-1.5, 1.5, 4), seed=inst))
        spec = ds.spec
        grid = build_grid(spec.latent, 61, 5.0)
        pen = PenaltySpec("lq", rng.choice([0.1, 0.5, 1.0]), rng.uniform(0.1, 2.0))
        hat = ParameterEstimate(rng.uniform(0.1, 1.5, 4) * rng.choice([-1, 1], 4))
        moments, _ = e_step(spec, hat.theta, grid)
        post = smooth(spec, hat.theta, grid)
        k_diag = np.array([kappa_weight(t, pen) for t in hat.theta])
        for _ in range(5):
            t = rng.uniform(-2, 2, 4)
            g = map_surrogate_grad(t, hat, moments, pen)
            for j in range(4):
                e = np.eye(4)[j] * h
                fd = (_expected_complete_q(t + e, spec, post, grid, k_diag)
                      - _expected_complete_q(t - e, spec, post, grid, k_diag)) / (2 * h)
                worst = max(worst, abs(g[j] - fd) / max(abs(fd), 1e-8))
    record("3", worst <= 1e-6, f"max relative gradient error {worst:.2e} (50 points)")


def test_c4_em_and_map_ascent():
    worst_drop, worst_time = 0.0, 0.0
    pen = PenaltySpec("lq", 0.1, 0.1)
    for seed in range(20):
        t0 = time.perf_counter()
        ds = simulate(SimConfig(seed=seed))
        grid = build_grid(ds.spec.latent, 201, 5.0)
        init = default_init(ds.spec, grid)
        for opts in (SolverOptions("ml_em", grid=grid), SolverOptions("map_em", pen, grid=grid)):
            tr = run_estimator(ds.spec, init, opts)
            objs = np.array([tr.initial_objective] + tr.objectives)
            worst_drop = max(worst_drop, float(-np.min(np.diff(objs))))
        worst_time = max(worst_time, time.perf_counter() - t0)
    record("4", worst_drop <= 1e-8 and worst_time < 60.0,
           f"largest objective decrease {max(worst_drop, 0.0):.2e}, slowest seed {worst_time:.2f} s")


def test_c5_ridge_one_step():
    ds = simulate_fully_observed(100, 7, np.linspace(-1.5, 1.5, 7), 0.5, seed=5)
    X, y, s2 = ds.spec.inputs, ds.spec.responses, ds.spec.noise_var_obs
    pen = PenaltySpec("ridge", tau=0.8)
    closed = np.linalg.solve(X.T @ X / s2 + 2 * pen.weight * np.eye(7), X.T @ y / s2)
    tr = run_estimator(ds.spec, np.zeros(7), SolverOptions("map_em", pen, max_iters=10,
                                                         tol_theta=1e-300, tol_obj=1e-300))
    first = float(np.max(np.abs(tr.iterates[0].theta - closed)))
    drift = max(float(np.max(np.abs(it.theta - tr.iterates[0].theta))) for it in tr.iterates)
    record("5", first <= 1e-10 and drift <= 1e-10,
           f"step-1 error {first:.2e}, later drift {drift:.2e}")


def test_c6_lasso_fixed_point():
    theta = np.array([1.5, -2.0, 0.0, 0.8, 0.0, -1.1, 0.0, 2.5, 0.6, -0.4])
    pen = PenaltySpec("lq", 1.0, 0.05)
    worst, most_iters = 0.0, 0
    for seed in range(10):
        ds = simulate_fully_observed(100, 10, theta, 1.0, seed=seed)
        m, _ = e_step(ds.spec, np.zeros(10))
        oracle = cd_lasso(m.b, m.a, pen.weight)
        tr = run_estimator(ds.spec, default_init(ds.spec), SolverOptions("map_em", pen, max_iters=500))
        worst = max(worst, float(np.max(np.abs(tr.final.theta - oracle))))
        most_iters = max(most_iters, len(tr.iterates))
    record("6", worst <= 1e-4 and most_iters <= 500,
           f"max sup-norm gap {worst:.2e}, at most {most_iters} iterations")


def test_c7_grid_smoother_vs_rts():
    lat = LatentDynamics(0.9, 0.1)
    worst_m = worst_v = worst_ll = 0.0
    for seed in range(5):
        rng = np.random.default_rng(70 + seed)
        n = 100
        z = np.empty(n)
        z[0] = rng.normal(0, np.sqrt(lat.init_var))
        for k in range(1, n):
            z[k] = 0.9 * z[k - 1] + rng.normal(0, np.sqrt(0.1))
        y = z + rng.normal(0, np.sqrt(0.1), n)
        grid = build_grid(lat, 401, 6.0)
        logE = -0.5 * (np.log(2 * np.pi * 0.1) + (y[:, None] - grid.nodes[None, :]) ** 2 / 0.1)
        post = forward_backward(logE, grid, lat)
        ms, ps, ll = kalman_rts(y, 0.9, 0.1, 0.1, 0.0, lat.init_var)
        mean = post.marginals @ grid.nodes
        var = post.marginals @ grid.nodes**2 - mean**2
        worst_m = max(worst_m, float(np.max(np.abs(mean - ms))))
        worst_v = max(worst_v, float(np.max(np.abs(var - ps))))
        worst_ll = max(worst_ll, abs(post.loglik - ll))
    record("7", max(worst_m, worst_v, worst_ll) <= 1e-3,
           f"mean {worst_m:.1e}, var {worst_v:.1e}, loglik {worst_ll:.1e}")


@pytest.fixture(scope="module")
def full_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("reference")
    outs = {}
    for jobs in (1, 8):
        out = base / f"jobs{jobs}"
        code = cli.main(["estimate", "--out", str(out), "--jobs", str(jobs)])
        outs[jobs] = (out, code)
    return outs


def _rows(full_runs):
    out, _ = full_runs[1]
    return {r["label"]: r for r in json.loads((out / "report.json").read_text())["rows"]}


@pytest.mark.slow
def test_c8a_map_em_recovers_zeros(full_runs):
    row = _rows(full_runs)["map_em_q0.1"]
    rate = row["zero_recovery_rate"]
    record("8a", rate is not None and rate >= 0.8,
           f"map_em(q=0.1) locked all four zeros in {rate:.0%} of replicates (target 80%)")


@pytest.mark.slow
def test_c8b_median_mse_ordering(full_runs):
    rows = _rows(full_runs)
    a, ml, l1 = (rows[k]["median_mse"] for k in ("map_em_q0.1", "ml_em", "map_em_q1"))
    record("8b", a < ml and a < l1,
           f"median MSE map_em(q=0.1) {a:.3e}, ml_em {ml:.3e}, map_em(q=1) {l1:.3e}")


@pytest.mark.slow
def test_c8c_ecm_zero_exit_diagnostic(full_runs):
    exits = _rows(full_runs)["ecm_cd_q0.1"]["zero_exit_replicates"]
    # non-gating: recorded for the summary, never fails the suite
    RESULTS["8c"] = (exits >= 1, f"ecm_cd zero coordinate left the 1e-3 band in {exits} "
                                 f"replicates (diagnostic only)")
    print(f"criterion 8c: {'PASS' if exits >= 1 else 'FAIL'} (diagnostic, {exits} replicates)")


@pytest.mark.slow
def test_c9_determinism(full_runs):
    (o1, c1), (o8, c8) = full_runs[1], full_runs[8]
    same = all((o1 / f).read_bytes() == (o8 / f).read_bytes() for f in ("report.json", "report.csv"))
    traces = sorted(p.relative_to(o1) for p in (o1 / "traces").rglob("*.csv"))
    same_traces = all((o1 / p).read_bytes() == (o8 / p).read_bytes() for p in traces)
    record("9", c1 == 0 and c8 == 0 and same and same_traces,
           f"jobs=1 vs jobs=8: reports identical={same}, {len(traces)} traces identical={same_traces}")
