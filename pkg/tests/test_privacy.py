import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from skewdp.graph import build_graph
from skewdp.privacy import (
    DpStatement,
    PrivacyError,
    RdpAccount,
    cap_contributions,
    compose,
    count_accuracy,
    dp_to_rdp,
    exact_counts,
    gaussian_rdp_coefficient,
    per_user_budget,
    private_counts,
    private_counts_for_budget,
    rdp_to_dp,
    sufficient_condition,
    user_budgets,
)

from conftest import random_graph

LOG_1E5 = math.log(1e5)


def test_gaussian_coefficient_examples():
    beta, gx = 0.3, 1.7
    assert gaussian_rdp_coefficient(beta * gx ** 4, gx ** 4) == pytest.approx(beta / 2, rel=1e-15)
    assert gaussian_rdp_coefficient(0.0, 2.0) == 0.0
    gamma, T = 2.5, 40
    assert gaussian_rdp_coefficient(beta * gamma ** 2, gamma ** 2 * T / 2) == pytest.approx(
        beta / T, rel=1e-14)


@pytest.mark.parametrize("var", [0.0, -1.0])
def test_gaussian_coefficient_rejects_bad_variance(var):
    with pytest.raises(PrivacyError):
        gaussian_rdp_coefficient(1.0, var)


def test_compose_examples():
    beta = 0.37
    acct = RdpAccount()
    compose(acct, beta / 2, "A")
    compose(acct, beta / 2, "b")
    assert acct.total_coefficient == beta
    acct = RdpAccount()
    for _ in range(17):
        acct.compose(beta / 17)
    assert acct.total_coefficient == pytest.approx(beta, rel=1e-15)
    before = acct.total_coefficient
    acct.compose(0.0)
    assert acct.total_coefficient == before


@pytest.mark.parametrize("bad", [-1e-9, math.inf, math.nan])
def test_compose_rejects(bad):
    with pytest.raises(PrivacyError):
        RdpAccount().compose(bad)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 10), max_size=12), st.randoms(use_true_random=False))
def test_composition_order_independent(coefs, rnd):
    a = RdpAccount()
    for c in coefs:
        a.compose(c)
    shuffled = list(coefs)
    rnd.shuffle(shuffled)
    b = RdpAccount()
    for c in shuffled:
        b.compose(c)
    assert a.total_coefficient == b.total_coefficient


def test_rdp_to_dp_example():
    # frozen: 0.010857 + 2 sqrt(0.010857 * ln 1e5)
    out = rdp_to_dp(0.010857, 1e-5)
    assert out.epsilon == pytest.approx(0.71795199, abs=1e-7)
    assert out.epsilon == pytest.approx(0.7180, abs=1e-4)
    assert rdp_to_dp(0.0, 1e-5).epsilon == 0.0
    assert rdp_to_dp(1e-14, 1e-5).epsilon < 1e-6


def test_sufficient_condition_certifies():
    beta = 1 / (8 * LOG_1E5)
    assert beta == pytest.approx(0.010857, abs=1e-6)
    assert sufficient_condition(beta, 1.0, 1e-5)
    assert rdp_to_dp(beta, 1e-5).epsilon <= 1.0


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-6, 1e3), st.floats(1e-12, 0.5))
def test_sufficient_condition_implies_closed_form(beta, delta):
    eps = math.sqrt(8 * beta * math.log(1 / delta))
    if eps <= math.log(1 / delta):
        assert rdp_to_dp(beta, delta).epsilon <= eps * (1 + 1e-12)


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-4, 100), st.floats(1e-12, 0.5))
def test_dp_to_rdp_round_trip(eps, delta):
    beta = dp_to_rdp(eps, delta)
    got = rdp_to_dp(beta, delta).epsilon
    assert got <= eps
    assert got == pytest.approx(eps, rel=1e-9)


def test_rdp_to_dp_monotone():
    betas = np.linspace(0.001, 5, 50)
    eps = [rdp_to_dp(b, 1e-5).epsilon for b in betas]
    assert np.all(np.diff(eps) > 0)
    deltas = [1e-9, 1e-6, 1e-3, 0.1]
    eps = [rdp_to_dp(0.1, d).epsilon for d in deltas]
    assert np.all(np.diff(eps) < 0)


def test_closed_form_is_minimum_over_orders():
    beta, delta = 0.05, 1e-6
    alphas = np.linspace(1.001, 200, 200_000)
    grid = np.min(alphas * beta + math.log(1 / delta) / (alphas - 1))
    assert rdp_to_dp(beta, delta).epsilon <= grid + 1e-12
    assert rdp_to_dp(beta, delta).epsilon == pytest.approx(grid, rel=1e-6)


@pytest.mark.parametrize("delta", [0.0, 1.0, -0.1])
def test_bad_delta(delta):
    with pytest.raises(PrivacyError):
        rdp_to_dp(0.1, delta)


def test_dp_statement_format():
    assert str(DpStatement(1.5, 1e-5)) == "epsilon=1.5 delta=1e-05"


def test_non_private_account_refuses():
    acct = RdpAccount.non_private().compose(0.1)
    with pytest.raises(PrivacyError):
        acct.to_dp(1e-5)
    merged = RdpAccount().compose(0.2).merge(acct)
    assert not merged.private and merged.total_coefficient == pytest.approx(0.3)


def test_ledger_csv_round_trip(tmp_path):
    acct = RdpAccount().compose(0.1, "counts").compose(1 / 3, "round 1")
    path = tmp_path / "ledger.csv"
    acct.write_csv(path)
    assert path.read_text().splitlines()[0] == "label,coefficient"
    again = RdpAccount.read_csv(path)
    assert again.entries == acct.entries


def test_per_user_budget_examples():
    g = build_graph([(i, 0) for i in range(5)] + [(0, 1)], 5, 6)
    assert per_user_budget(np.ones(g.num_edges), g) == 5.0
    assert per_user_budget(np.zeros(0), build_graph([], 1, 1)) == 0.0
    with pytest.raises(PrivacyError):
        per_user_budget(np.ones(2), g)


def test_user_budgets_matches_loop(rng):
    for _ in range(20):
        g = random_graph(rng)
        w = rng.random(g.num_edges)
        expect = [sum(w[e] ** 2 for e in g.user_edges(j)) for j in range(g.n)]
        np.testing.assert_allclose(user_budgets(w, g), expect, rtol=1e-13)


def test_count_accuracy_example():
    assert count_accuracy(1.0, 1, 0.99) == pytest.approx(math.sqrt(2 * math.log(200)), rel=1e-14)
    assert count_accuracy(1.0, 1, 0.99) == pytest.approx(3.255, abs=5e-4)


def test_private_counts_mechanism(rng):
    g = build_graph([(i, j) for i in range(3) for j in range(4) if (i + j) % 2 == 0], 3, 4)
    pc = private_counts(g, 2.0, 0.95, rng, cap=2)
    assert pc.estimates.shape == (3,)
    assert pc.coefficient == pytest.approx(2 / (2 * 4.0))
    assert pc.accuracy == pytest.approx(count_accuracy(2.0, 3, 0.95))
    with pytest.raises(PrivacyError):
        private_counts(g, 0.0, 0.9, rng)


def test_private_counts_for_budget_hits_coefficient(rng):
    g = build_graph([(0, 0), (1, 1)], 2, 2)
    pc = private_counts_for_budget(g, 0.02, 0.9, rng, cap=10)
    assert pc.coefficient == pytest.approx(0.02, rel=1e-12)


def test_exact_counts():
    g = build_graph([(0, 0), (0, 1)], 2, 2)
    ec = exact_counts(g)
    np.testing.assert_array_equal(ec.estimates, [2, 0])
    assert ec.accuracy == 0 and not ec.private


def test_cap_contributions(rng):
    g = build_graph([(i, 0) for i in range(6)] + [(0, 1)], 6, 6)
    keep = cap_contributions(g, 2, rng)
    assert keep[g.users == 0].sum() == 2 and keep[g.users == 1].all()


def test_private_counts_are_s_accurate():
    # violation rate at confidence 0.9 over 2000 trials, with 3-sigma binomial slack
    rng = np.random.default_rng(7)
    g = build_graph([(i, j) for i in range(5) for j in range(10) if j <= 2 * i], 5, 10)
    conf, trials = 0.9, 2000
    bad = 0
    for _ in range(trials):
        pc = private_counts(g, 1.5, conf, rng)
        bad += np.any(np.abs(pc.estimates - g.task_counts) > pc.accuracy)
    p = 1 - conf
    assert bad / trials <= p + 3 * math.sqrt(p * (1 - p) / trials)


def test_split_budget_never_exceeds_total():
    from skewdp.privacy import split_budget

    rng = np.random.default_rng(7)
    for _ in range(500):
        total = float(rng.uniform(1e-4, 10))
        pre = float(rng.uniform(0, 0.5)) * total
        T = int(rng.integers(1, 40))
        beta = split_budget(total, pre, T)
        assert math.fsum([pre] + [beta] * T) <= total
        assert beta == pytest.approx((total - pre) / T, rel=1e-12)
    with pytest.raises(PrivacyError):
        split_budget(1.0, 1.0, 2)
    with pytest.raises(PrivacyError):
        split_budget(1.0, 0.1, 0)
