import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fascl.backtest import (
    BacktestReport,
    mean_reversion_pnl,
    portfolio_stats,
    run_backtest,
    sharpe,
    spread_series,
    tracking_error,
)
from fascl.baselines import random_embeddings
from fascl.data import build_cohorts
from fascl.metrics import CohortOutcome, oracle_retrieval
from fascl.retrieval import retrieve_all, retrieve_by_similarity
from oracles import mean_reversion_pnl as pnl_oracle
from oracles import sample_std

small = st.floats(-0.05, 0.05, allow_nan=False)


def test_spread_examples():
    q = np.array([0.01, -0.02, 0.03])
    assert np.all(spread_series(q, np.stack([q, q])) == 0)
    np.testing.assert_allclose(spread_series(np.full(4, 0.01), np.full((1, 4), -0.01)), 0.02, atol=1e-17)


def test_spread_matches_scalar_oracle(rng):
    q, p = rng.normal(size=5), rng.normal(size=(3, 5))
    expected = [q[d] - (p[0, d] + p[1, d] + p[2, d]) / 3 for d in range(5)]
    np.testing.assert_allclose(spread_series(q, p), expected, atol=1e-15)


def test_spread_needs_peers():
    with pytest.raises(ValueError):
        spread_series(np.zeros(3), np.zeros((0, 3)))


def test_pnl_hand_traces():
    assert list(mean_reversion_pnl([1.0, -1.0])) == [1.0]
    assert list(mean_reversion_pnl([1.0, 1.0])) == [-1.0]
    assert np.all(mean_reversion_pnl(np.zeros(6)) == 0)


def test_pnl_zero_cumulative_spread_goes_short():
    # cum = 0 after day 1 counts as positive, so the position is -1
    assert list(mean_reversion_pnl([0.0, 0.5])) == [-0.5]


def test_pnl_matches_oracle_and_has_no_lookahead():
    rng = np.random.default_rng(11)
    for _ in range(100):
        H = int(rng.integers(3, 40))
        s = rng.normal(0, 0.01, size=H)
        full = mean_reversion_pnl(s)
        np.testing.assert_array_equal(full, pnl_oracle(list(s)))
        cut = int(rng.integers(2, H))
        np.testing.assert_array_equal(mean_reversion_pnl(s[:cut]), full[: cut - 1])


def test_sharpe_formula_fixture():
    x = [0.0012, -0.0004, 0.0021, 0.0003, -0.0011, 0.0008, 0.0015]
    expected = (sum(x) / len(x)) / sample_std(x) * math.sqrt(252)
    assert sharpe(x) == pytest.approx(expected, abs=1e-10)


def test_sharpe_degenerate_cases():
    assert math.isnan(portfolio_stats([np.zeros(5)])[0])
    assert math.isnan(sharpe(np.full(10, 0.001)))
    assert sharpe([0.01, -0.01] * 5) == 0.0


def test_portfolio_averages_by_day():
    s, port = portfolio_stats([np.array([1.0, 2.0, 3.0]), np.array([3.0, 2.0, 1.0])])
    np.testing.assert_array_equal(port, [2.0, 2.0, 2.0])
    with pytest.raises(ValueError):
        portfolio_stats([np.zeros(3), np.zeros(4)])


def test_tracking_error_fixture():
    te = tracking_error([np.array([0.01, -0.01, 0.01, -0.01])])
    assert sample_std([0.01, -0.01, 0.01, -0.01]) == pytest.approx(0.011547, abs=1e-6)
    assert te == pytest.approx(0.011547005383792516 * math.sqrt(252), abs=1e-12)
    assert te == pytest.approx(0.18330, abs=1e-5)
    assert tracking_error([np.zeros(3), np.zeros(3)]) == 0.0
    with pytest.raises(ValueError):
        tracking_error([np.array([0.1])])


@settings(max_examples=50, deadline=None)
@given(st.lists(arrays(np.float64, 6, elements=small), min_size=1, max_size=6), st.randoms())
def test_tracking_error_order_invariant(spreads, rnd):
    shuffled = list(spreads)
    rnd.shuffle(shuffled)
    assert tracking_error(spreads) == pytest.approx(tracking_error(shuffled), rel=1e-12, abs=1e-15)


def _identical_cohort(n=6, H=10, seed=0):
    r = np.random.default_rng(seed).normal(0, 0.01, size=H)
    out = CohortOutcome([f"Q{i}" for i in range(n)], np.tile(r, (n, 1)), np.zeros((n, 1)), (1,), None)
    ret = retrieve_by_similarity(np.datetime64("2020-01-01"), out.tickers, np.zeros((n, n)), [1, 3])
    return ret, out


def test_identical_peers_zero_te_and_undefined_sharpe():
    ret, out = _identical_cohort()
    rep = run_backtest([ret], [out], [1, 3])
    for K in (1, 3):
        assert rep.tracking_error[K] == 0.0 and rep.undefined(K)
    assert "undefined" in rep.to_csv()


def test_run_backtest_is_composition():
    rng = np.random.default_rng(4)
    n, H = 8, 12
    outs, rets = [], []
    for c in range(2):
        out = CohortOutcome([f"A{i}" for i in range(n)], rng.normal(0, 0.01, (n, H)), np.zeros((n, 1)), (1,), None)
        outs.append(out)
        rets.append(retrieve_by_similarity(np.datetime64("2020-01-01") + c, out.tickers, rng.normal(size=(n, n)), [2]))
    rep = run_backtest(rets, outs, [2])
    spreads, pnls = [], []
    for r, o in zip(rets, outs):
        for row, q in enumerate(r.queries):
            s = spread_series(o.future_returns[q], o.future_returns[r.peers[row, :2]])
            spreads.append(s)
            pnls.append(pnl_oracle(list(s)))
    port = np.mean(pnls, axis=0)
    assert rep.sharpe[2] == pytest.approx(np.mean(port) / sample_std(list(port)) * math.sqrt(252), abs=1e-10)
    assert rep.tracking_error[2] == pytest.approx(tracking_error(spreads), abs=1e-15)
    assert rep.n_queries[2] == 16 and rep.n_days[2] == H - 1
    assert list(rep.sharpe) == [2]


def test_oracle_te_below_random(small_panel, small_split):
    cohorts = build_cohorts(small_panel, small_split, "test")
    outs = [CohortOutcome.from_cohort(c) for c in cohorts]
    K_list = [1, 5, 10, 20]
    rnd = run_backtest([retrieve_all(random_embeddings(c, 16, 0), K_list) for c in cohorts], outs, K_list)
    ora = run_backtest([oracle_retrieval(o, c.anchor, K_list) for c, o in zip(cohorts, outs)], outs, K_list)
    for K in K_list:
        assert ora.tracking_error[K] < rnd.tracking_error[K]


def test_report_json():
    rep = BacktestReport({1: float("nan")}, {1: 0.0}, {1: 3}, {1: 9}, {"seed": 1})
    assert '"sharpe": null' in rep.to_json() and '"sharpe_undefined": true' in rep.to_json()
