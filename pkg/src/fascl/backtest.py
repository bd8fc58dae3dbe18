"""Spread-trading backtest over retrieved peer baskets (signal quality, no costs)."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .metrics import CohortOutcome
from .retrieval import CohortRetrieval

TRADING_DAYS = 252
FLAT_STD = 1e-12


def spread_series(query_returns, peer_returns) -> np.ndarray:
    """Daily query return minus the equal-weight peer basket return."""
    q = np.asarray(query_returns, dtype=float)
    p = np.atleast_2d(np.asarray(peer_returns, dtype=float))
    if p.shape[0] == 0:
        raise ValueError("need at least one peer (K >= 1)")
    if p.shape[1] != q.shape[-1]:
        raise ValueError(f"peer horizon {p.shape[1]} != query horizon {q.shape[-1]}")
    # mean of differences, so peers identical to the query give exact zeros
    return (q - p).mean(axis=0)


def mean_reversion_pnl(spread) -> np.ndarray:
    """Trade against the cumulative spread: position_{d+1} = -sign(sum_{d'<=d} s_d'), sign(0) = +1."""
    s = np.asarray(spread, dtype=float)
    if s.shape[-1] < 2:
        raise ValueError("need at least 2 spread days")
    cum = np.cumsum(s[..., :-1], axis=-1)
    position = -np.where(cum >= 0, 1.0, -1.0)
    return position * s[..., 1:]


def sharpe(series) -> float:
    """Annualized mean/std (sample std); NaN when the series is flat."""
    x = np.asarray(series, dtype=float)
    if len(x) < 2:
        return float("nan")
    sd = x.std(ddof=1)
    if sd < FLAT_STD:
        return float("nan")
    return float(x.mean() / sd * math.sqrt(TRADING_DAYS))


def portfolio_stats(pnl_per_query) -> tuple[float, np.ndarray]:
    """Cross-query mean daily P&L and its annualized Sharpe (NaN = undefined)."""
    pnl = [np.asarray(p, dtype=float) for p in pnl_per_query]
    if not pnl:
        raise ValueError("need at least one query")
    if len({len(p) for p in pnl}) != 1:
        raise ValueError("all P&L series must have equal length")
    portfolio = np.mean(pnl, axis=0)
    return sharpe(portfolio), portfolio


def tracking_error(spreads) -> float:
    """Annualized sample std of all daily spread returns pooled across queries."""
    pooled = np.concatenate([np.ravel(s) for s in spreads]) if len(spreads) else np.empty(0)
    if len(pooled) < 2:
        raise ValueError("tracking error needs at least 2 pooled observations")
    return float(pooled.std(ddof=1) * math.sqrt(TRADING_DAYS))


@dataclass
class BacktestReport:
    sharpe: dict[int, float] = field(default_factory=dict)
    tracking_error: dict[int, float] = field(default_factory=dict)
    n_queries: dict[int, int] = field(default_factory=dict)
    n_days: dict[int, int] = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def undefined(self, K: int) -> bool:
        return math.isnan(self.sharpe[K])

    def to_dict(self) -> dict:
        return {
            "provenance": self.provenance,
            "rows": [
                {
                    "K": K,
                    "sharpe": None if self.undefined(K) else self.sharpe[K],
                    "sharpe_undefined": self.undefined(K),
                    "tracking_error": self.tracking_error[K],
                    "n_queries": self.n_queries[K],
                    "n_days": self.n_days[K],
                }
                for K in self.sharpe
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        if self.provenance:
            buf.write("# " + " ".join(f"{k}={v}" for k, v in self.provenance.items()) + "\n")
        w = csv.writer(buf)
        w.writerow(["K", "sharpe", "tracking_error", "n_queries", "n_days"])
        for r in self.to_dict()["rows"]:
            w.writerow([r["K"], "undefined" if r["sharpe_undefined"] else repr(r["sharpe"]), repr(r["tracking_error"]), r["n_queries"], r["n_days"]])
        return buf.getvalue()


def cohort_spreads(ret: CohortRetrieval, out: CohortOutcome, K: int) -> np.ndarray:
    """(Q, H) spread returns for every query of a cohort."""
    r = out.future_returns
    return (r[ret.queries, None, :] - r[ret.top(K)]).mean(axis=1)


def run_backtest(retrievals: list[CohortRetrieval], outcomes: list[CohortOutcome], K_list=(1, 5, 10, 20)) -> BacktestReport:
    """Portfolio Sharpe and tracking error per K.

    Queries from every cohort are stacked into one portfolio; each
    query's P&L covers days 2..H after its own anchor.
    """
    report = BacktestReport()
    for K in K_list:
        spreads = [cohort_spreads(r, o, K) for r, o in zip(retrievals, outcomes)]
        spreads = np.concatenate(spreads) if spreads else np.empty((0, 0))
        pnl = mean_reversion_pnl(spreads)
        report.sharpe[K], _ = portfolio_stats(list(pnl))
        report.tracking_error[K] = tracking_error(list(spreads))
        report.n_queries[K] = len(spreads)
        report.n_days[K] = pnl.shape[1]
    return report
