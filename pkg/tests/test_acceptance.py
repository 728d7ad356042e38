"""Acceptance criteria 1-10, each reporting one PASS/FAIL line.

Run ``pytest tests/test_acceptance.py -v`` and read the "acceptance criteria"
section of the terminal summary (or pass ``-s`` to see the lines inline).
"""
import math
import time

import numpy as np
import pytest

from skewdp import cli
from skewdp.allocation import (
    WeightPlan,
    allocation_objective,
    assumption_graph,
    calibrate_concentration,
    clip_user_budgets,
    concentration_success_rate,
    improvement_ratio,
    make_plan,
    optimal_weights,
    power_law_counts,
    solve_allocation_numeric,
    weights_from_private_counts,
)
from skewdp.graph import build_graph, clip_dataset, make_dataset
from skewdp.matcomp import alternating_minimization, low_rank_ratings
from skewdp.privacy import PrivateCounts, dp_to_rdp, per_user_budget, rdp_to_dp, split_budget
from skewdp.solvers import (
    GdConfig,
    RidgeLoss,
    ridge_exact,
    schedule_strongly_convex,
    ssp_statistics,
    task_gradients,
    weighted_noisy_gd,
    weighted_ssp,
)

from conftest import random_dataset


def constant_plan(ds, omega):
    """Per-task weights applied to every edge, with the budget they realize."""
    omega = np.asarray(omega, dtype=float)
    w = omega[ds.graph.tasks]
    budget = float(np.max(np.bincount(ds.graph.users, w * w, minlength=ds.n), initial=0.0))
    return WeightPlan(omega, w, max(budget, 1e-300))


def fuzz_graph(rng):
    """Random graph mixing dense, sparse and hub-heavy shapes."""
    n = int(rng.integers(1, 60))
    m = int(rng.integers(1, min(30, n) + 1))
    kind = rng.integers(3)
    if kind == 0:
        mask = rng.random((m, n)) < rng.uniform(0.05, 1.0)
    elif kind == 1:
        mask = rng.random((m, n)) < rng.uniform(0, 1, m)[:, None] ** 3
    else:
        mask = rng.random((m, n)) < rng.uniform(0, 1, n)[None, :] ** 0.3
    return build_graph(np.argwhere(mask), m, n)


def test_criterion_01_feasibility(verdict):
    rng = np.random.default_rng(101)
    start = time.perf_counter()
    violations = 0
    for _ in range(1000):
        g = fuzz_graph(rng)
        beta = float(10 ** rng.uniform(-4, 3))
        omega = 10 ** rng.uniform(-3, 2, g.m) * (rng.random(g.m) < 0.9)
        w = clip_user_budgets(omega, g, beta)
        violations += per_user_budget(w, g) > beta
    elapsed = time.perf_counter() - start
    verdict(1, "per-user budget <= beta after clipping",
            violations == 0 and elapsed < 10, f"{violations} violations, {elapsed:.1f}s")


def test_criterion_02_sensitivity(verdict):
    rng = np.random.default_rng(202)
    start = time.perf_counter()
    worst = 0.0  # largest (observed distance / bound)
    for _ in range(200):
        ds = random_dataset(rng, m_max=5, n_max=10, d_max=4)
        gx, gs = float(rng.uniform(0.3, 2)), float(rng.uniform(0.3, 2))
        lam, radius = float(rng.uniform(0, 1)), float(rng.uniform(0.5, 2))
        beta = float(rng.uniform(0.05, 3))
        ds = clip_dataset(ds, gx, gs)
        plan = make_plan(rng.uniform(0.05, 3, ds.m), ds.graph, beta)
        loss = RidgeLoss(lam)
        gamma = loss.lipschitz(radius, gx, gs)
        theta = rng.standard_normal((ds.m, ds.d))
        theta *= radius / np.maximum(radius, np.linalg.norm(theta, axis=1, keepdims=True))

        full = ssp_statistics(ds, plan.edge_weights, 0.0)
        grad = task_gradients(theta, ds, plan.edge_weights, loss, gamma)
        for j in range(ds.n):
            keep = ds.graph.users != j
            sub, w = ds.subset(keep), plan.edge_weights[keep]
            nb = ssp_statistics(sub, w, 0.0)
            nb_grad = task_gradients(theta, sub, w, loss, gamma)
            root = math.sqrt(beta)
            worst = max(worst,
                        np.linalg.norm(full.A - nb.A) / (root * gx ** 2),
                        np.linalg.norm(full.b - nb.b) / (root * gx ** 2 * gs),
                        np.linalg.norm(grad - nb_grad) / (root * gamma))
    elapsed = time.perf_counter() - start
    verdict(2, "neighbor distance of SSP statistics and GD gradients within bounds",
            worst <= 1 + 1e-12 and elapsed < 30, f"max ratio {worst:.4f}, {elapsed:.1f}s")


def test_criterion_03_kkt(verdict):
    rng = np.random.default_rng(303)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(50):
        m = int(rng.integers(1, 21))
        n = int(rng.integers(50, 500))
        counts = rng.integers(1, n + 1, m)
        beta, c_n = float(rng.uniform(0.1, 5)), float(rng.uniform(1, 3))
        for gamma in (0, 1):
            closed = allocation_objective(optimal_weights(counts, beta, gamma, n, c_n), counts, gamma)
            numeric = allocation_objective(
                solve_allocation_numeric(counts, beta, gamma, n=n, c_n=c_n), counts, gamma)
            worst = max(worst, abs(closed - numeric) / numeric)
    elapsed = time.perf_counter() - start
    verdict(3, "closed-form weights match the numeric optimum",
            worst <= 1e-6 and elapsed < 30, f"max relative gap {worst:.2e}, {elapsed:.1f}s")


def test_criterion_04_improvement_ratios(verdict):
    rng = np.random.default_rng(404)
    start = time.perf_counter()
    lowest = math.inf
    for _ in range(1000):
        counts = rng.integers(1, 10 ** int(rng.integers(1, 6)), int(rng.integers(1, 200)))
        lowest = min(lowest, improvement_ratio(counts, 0), improvement_ratio(counts, 1))
    uniform_dev = max(abs(improvement_ratio(np.full(m, c), g) - 1)
                      for m in (1, 7, 100) for c in (1, 3, 1000) for g in (0, 1))
    r1 = improvement_ratio([1, 4], 1)
    r0 = improvement_ratio([1, 4], 0)
    exact = abs(r1 - 1.5625) <= 1e-12 and abs(r0 - math.sqrt(10) / 3) <= 1e-12
    elapsed = time.perf_counter() - start
    ok = lowest >= 1 - 1e-12 and uniform_dev <= 1e-12 and exact and elapsed < 5
    verdict(4, "improvement ratios >= 1, = 1 on uniform counts, (1, 4) values exact", ok,
            f"min {lowest:.6f}, uniform dev {uniform_dev:.1e}, R1={r1!r}, R0={r0!r}")


def test_criterion_05_concentration(verdict):
    rng = np.random.default_rng(505)
    start = time.perf_counter()
    n, m = 1000, 100
    counts = power_law_counts(m, n, 2.0, 20.0, rng)
    rates = []
    for gamma in (0, 1):
        # calibration and evaluation use independent graph draws
        c = calibrate_concentration(counts, n, gamma, rng, draws=50, target=0.99)
        rate = concentration_success_rate(counts, n, c, gamma, 1.0, 100, rng)
        rates.append((gamma, c, rate))
    elapsed = time.perf_counter() - start
    ok = all(rate >= 0.95 for _, _, rate in rates) and elapsed < 120
    detail = "; ".join(f"gamma={g}: c={c:.3f}, {round(r * 100)}/100" for g, c, r in rates)
    verdict(5, "clipped-user fraction <= 1/n in >= 95 of 100 draws", ok,
            f"{detail}, {elapsed:.1f}s")


def test_criterion_06_zero_noise_oracles(verdict):
    rng = np.random.default_rng(606)
    start = time.perf_counter()
    ssp_err = 0.0
    for _ in range(20):
        ds = random_dataset(rng, m_max=5, n_max=30, d_max=4)
        lam = float(rng.uniform(0.05, 1))
        plan = constant_plan(ds, rng.uniform(0.2, 3, ds.m))
        got = weighted_ssp(ds, plan, 1e6, 1e6, lam, None, noise_on=False).theta
        ssp_err = max(ssp_err, float(np.abs(got - ridge_exact(ds, lam).theta).max()))

    theta = rng.standard_normal((4, 3)) / math.sqrt(3)
    edges = [(i, j) for i in range(4) for j in range(80) if rng.random() < 0.6]
    x = rng.standard_normal((len(edges), 3)) / math.sqrt(3)
    t = np.array([e[0] for e in edges])
    y = np.einsum("ed,ed->e", x, theta[t]) + 0.1 * rng.standard_normal(len(edges))
    ds = make_dataset(edges, x, y, 4, 80)
    lam = 0.5
    loss = RidgeLoss(lam)
    counts = ds.graph.task_counts
    plan = constant_plan(ds, optimal_weights(counts, 1.0, 1, ds.n))
    T, rates = schedule_strongly_convex(counts, plan.task_weights, ds.d, loss.strong_convexity)
    cfg = GdConfig(radius=10.0, lipschitz=1e6, steps=50 * T, rates=rates,
                   strong_convexity=loss.strong_convexity)
    got = weighted_noisy_gd(ds, plan, cfg, loss, rng, noise_on=False).theta
    gd_err = float(np.linalg.norm(got - ridge_exact(ds, lam).theta, axis=1).max())
    elapsed = time.perf_counter() - start
    verdict(6, "noiseless SSP and GD match the ridge oracle",
            ssp_err <= 1e-10 and gd_err <= 1e-3 and elapsed < 60,
            f"SSP {ssp_err:.1e}, GD {gd_err:.1e} after {50 * T} steps, {elapsed:.1f}s")


def test_criterion_07_synthetic_direction(verdict):
    start = time.perf_counter()
    cfg = cli.ExperimentConfig(dataset="synthetic:m=100,n=10000,d=5,a=2,noise=1e-3",
                               algorithm="ssp", allocation=["adaptive"], mu=[0.0, 0.5],
                               epsilon=[1.0, 10.0], delta=1e-5, seeds=list(range(10)))
    rows, _ = cli.run(cfg)
    med = {}
    for mu, eps in [(0.0, 1.0), (0.5, 1.0), (0.5, 10.0)]:
        med[mu, eps] = float(np.median([r[8] for r in rows
                                        if r[3] == mu and r[4] == eps and r[7] == "test_rmse"]))
    elapsed = time.perf_counter() - start
    ok = med[0.5, 1.0] < med[0.0, 1.0] and med[0.5, 10.0] < med[0.5, 1.0] and elapsed < 600
    verdict(7, "median test RMSE: mu=1/2 beats mu=0, eps=10 beats eps=1", ok,
            f"mu=0: {med[0.0, 1.0]:.4f}, mu=1/2: {med[0.5, 1.0]:.4f}, "
            f"mu=1/2 eps=10: {med[0.5, 10.0]:.4f}, {elapsed:.1f}s")


def test_criterion_08_variance_scaling(verdict):
    start = time.perf_counter()
    n1, lam = 200, 0.1
    ds = make_dataset([(0, j) for j in range(n1)], np.ones((n1, 1)), np.ones(n1), 1, n1)
    draws = {}
    for omega in (1.0, 2.0):
        plan = WeightPlan(np.array([omega]), np.full(n1, omega), omega ** 2)
        # common random numbers: the same noise draws for both weights
        draws[omega] = np.array([
            weighted_ssp(ds, plan, 1.0, 1.0, lam, np.random.default_rng(s)).theta[0, 0]
            for s in range(500)])
    ratio = draws[1.0].var(ddof=1) / draws[2.0].var(ddof=1)
    elapsed = time.perf_counter() - start
    verdict(8, "doubling omega divides Var(theta) by 4",
            abs(ratio / 4 - 1) <= 0.2 and elapsed < 60, f"ratio {ratio:.3f}, {elapsed:.1f}s")


def test_criterion_09_accountant(verdict):
    start = time.perf_counter()
    eps, delta, rounds = 1.0, 1e-5, 5
    total = dp_to_rdp(eps, delta)
    beta0 = 0.15 * total
    beta = split_budget(total, beta0, rounds)
    rng = np.random.default_rng(909)
    ratings, _, _ = low_rank_ratings(200, 500, 5, 0.1, rng, 0.1)
    run = alternating_minimization(ratings, rounds, 5, 1.0, beta, beta0, "adaptive-weights", rng)
    ledger = run.account.total_coefficient
    exact = ledger == math.fsum([beta0] + [beta] * rounds)
    close = math.isclose(ledger, beta0 + rounds * beta, rel_tol=1e-12)
    certified = rdp_to_dp(ledger, delta).epsilon
    elapsed = time.perf_counter() - start
    ok = exact and close and run.account.private and certified <= eps and elapsed < 60
    verdict(9, "ALS ledger equals beta0 + T beta and certifies (eps, delta)", ok,
            f"ledger {ledger!r}, certified eps {certified!r}, {elapsed:.1f}s")


def test_criterion_10_private_count_underestimation(verdict):
    rng = np.random.default_rng(1010)
    start = time.perf_counter()
    passed = 0
    for _ in range(100):
        n, m = int(rng.integers(50, 400)), int(rng.integers(2, 40))
        counts = power_law_counts(m, n, float(rng.uniform(0.5, 3)), m / 4, rng)
        graph = assumption_graph(counts, n, rng)
        s = float(rng.uniform(0, 20))
        estimates = counts + rng.uniform(-s, s, m)
        priv = PrivateCounts(estimates, s, coefficient=0.0)
        beta = float(rng.uniform(0.1, 5))
        ok = True
        for gamma in (0, 1):
            from_priv = weights_from_private_counts(priv, beta, n, gamma=gamma)
            exact = optimal_weights(counts, beta, gamma, n)
            ok &= bool(np.all(from_priv <= exact))
            plan = make_plan(from_priv, graph, beta)
            ok &= per_user_budget(plan.edge_weights, graph) <= beta
        passed += ok
    elapsed = time.perf_counter() - start
    verdict(10, "weights from s-accurate counts never exceed exact-count weights",
            passed == 100 and elapsed < 10, f"{passed}/100 trials, {elapsed:.1f}s")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-s"]))
