"""Retrieval evaluation: trend consistency, future-return correlation, IC and sector precision.

All metrics pool queries across cohorts: per-query scores are averaged
over every query of every cohort, and IC ranks one cross-section built
from all pooled queries.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .data import HORIZONS, EvalCohort
from .objective import pairwise_future_correlation
from .retrieval import CohortRetrieval, retrieve_by_similarity

K_LIST = (1, 5, 10, 20)


class InsufficientDataError(ValueError):
    pass


@dataclass
class CohortOutcome:
    """What actually happened after the anchor, for every member of one cohort."""

    tickers: list[str]
    future_returns: np.ndarray  # (M_c, H)
    horizon_returns: np.ndarray  # (M_c, n_horizons)
    horizons: tuple[int, ...]
    sectors: list[str] | None = None

    @classmethod
    def from_cohort(cls, cohort: EvalCohort, horizons=HORIZONS, sectors: dict[str, str] | None = None) -> "CohortOutcome":
        for s in cohort.samples:
            missing = [h for h in horizons if h not in s.horizon_returns]
            if missing:
                raise ValueError(f"{s.ticker}: missing horizon returns {missing}")
        if sectors is not None:
            missing = [t for t in cohort.tickers if t not in sectors]
            if missing:
                raise KeyError(f"no sector label for ticker {missing[0]!r}")
            sec = [sectors[t] for t in cohort.tickers]
        else:
            sec = [s.sector for s in cohort.samples]
            if any(x is None for x in sec):
                sec = None
        return cls(cohort.tickers, cohort.future_returns(), cohort.horizon_matrix(horizons), tuple(horizons), sec)

    def horizon_column(self, h: int) -> np.ndarray:
        try:
            return self.horizon_returns[:, self.horizons.index(h)]
        except ValueError:
            raise ValueError(f"horizon {h} not available (have {self.horizons})") from None


def sign_pos(x: np.ndarray) -> np.ndarray:
    """Sign with sign(0) := +1."""
    return np.where(np.asarray(x) >= 0, 1, -1)


def spearman(x, y) -> float:
    """Pearson correlation of average ranks; NaN for a constant input."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if len(x) != len(y) or len(x) < 3:
        raise InsufficientDataError("spearman needs two equal-length vectors of length >= 3")
    rx, ry = rankdata(x), rankdata(y)
    rx -= rx.mean()
    ry -= ry.mean()
    den = np.sqrt((rx @ rx) * (ry @ ry))
    if den == 0:
        return float("nan")
    return float(rx @ ry / den)


# per-query kernels: each returns one value per query row of a cohort


def _tc_rows(ret: CohortRetrieval, out: CohortOutcome, K: int, h: int) -> np.ndarray:
    s = sign_pos(out.horizon_column(h))
    peers = ret.top(K)
    return (s[peers] == s[ret.queries, None]).mean(axis=1)


def _frc_rows(ret: CohortRetrieval, out: CohortOutcome, K: int, corr: np.ndarray | None = None) -> np.ndarray:
    if corr is None:
        corr = pairwise_future_correlation(out.future_returns)
    return np.take_along_axis(corr[ret.queries], ret.top(K), axis=1).mean(axis=1)


def _sp_rows(ret: CohortRetrieval, out: CohortOutcome, K: int) -> np.ndarray:
    if out.sectors is None:
        raise ValueError("sector labels required for sector precision")
    codes = np.unique(out.sectors, return_inverse=True)[1]
    return (codes[ret.top(K)] == codes[ret.queries, None]).mean(axis=1)


def _consensus(ret: CohortRetrieval, out: CohortOutcome, K: int, h: int) -> tuple[np.ndarray, np.ndarray]:
    R = out.horizon_column(h)
    return R[ret.top(K)].mean(axis=1), R[ret.queries]


def _pooled(pairs, fn) -> float:
    vals = [fn(r, o) for r, o in pairs]
    vals = np.concatenate(vals) if vals else np.empty(0)
    return float(vals.mean()) if len(vals) else float("nan")


def trend_consistency(pairs, K: int, h: int) -> float:
    """Mean fraction of top-K peers whose h-day cumulative return sign matches the query's."""
    return _pooled(pairs, lambda r, o: _tc_rows(r, o, K, h))


def future_return_correlation(pairs, K: int) -> float:
    """Mean Pearson correlation of H-day future daily returns between query and top-K peers."""
    return _pooled(pairs, lambda r, o: _frc_rows(r, o, K))


def sector_precision(pairs, K: int) -> float:
    return _pooled(pairs, lambda r, o: _sp_rows(r, o, K))


def information_coefficient(pairs, K: int, h: int) -> float:
    """Spearman correlation between peer-consensus and realized query returns, pooled over cohorts."""
    pred, actual = [], []
    for r, o in pairs:
        p, a = _consensus(r, o, K, h)
        pred.append(p)
        actual.append(a)
    pred = np.concatenate(pred) if pred else np.empty(0)
    actual = np.concatenate(actual) if actual else np.empty(0)
    if len(pred) < 3:
        raise InsufficientDataError(f"IC needs >= 3 pooled queries, got {len(pred)}")
    return spearman(pred, actual)


@dataclass
class MetricReport:
    """Nested values: ``values[metric][K][h]`` with h = 0 for horizon-free metrics."""

    values: dict[str, dict[int, dict[int, float]]] = field(default_factory=dict)
    n_queries: int = 0
    n_cohorts: int = 0
    provenance: dict = field(default_factory=dict)

    def get(self, metric: str, K: int, h: int = 0) -> float:
        return self.values[metric][K][h]

    def to_dict(self) -> dict:
        return {
            "provenance": self.provenance,
            "n_queries": self.n_queries,
            "n_cohorts": self.n_cohorts,
            "metrics": {
                m: {str(K): {str(h): v for h, v in byh.items()} for K, byh in byK.items()} for m, byK in self.values.items()
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def rows(self) -> list[tuple[str, int, int, float]]:
        return [(m, K, h, v) for m, byK in self.values.items() for K, byh in byK.items() for h, v in byh.items()]

    def to_csv(self) -> str:
        buf = io.StringIO()
        if self.provenance:
            buf.write("# " + " ".join(f"{k}={v}" for k, v in self.provenance.items()) + "\n")
        w = csv.writer(buf)
        w.writerow(["metric", "K", "horizon", "value", "n_queries"])
        for m, K, h, v in self.rows():
            w.writerow([m, K, h, repr(v), self.n_queries])
        return buf.getvalue()


def evaluate(
    retrievals: list[CohortRetrieval],
    outcomes: list[CohortOutcome],
    K_list=K_LIST,
    horizons=HORIZONS,
) -> MetricReport:
    """Full metric grid: TC and IC per (K, h); FRC and SP per K."""
    if len(retrievals) != len(outcomes):
        raise ValueError("need one outcome per cohort retrieval")
    pairs = list(zip(retrievals, outcomes))
    for r, o in pairs:
        if list(r.tickers) != list(o.tickers):
            raise ValueError(f"cohort {r.anchor}: retrieval and outcome tickers differ")
    report = MetricReport(n_queries=sum(len(r.queries) for r in retrievals), n_cohorts=len(pairs))
    if not K_list:
        return report
    corr = [pairwise_future_correlation(o.future_returns) for o in outcomes]
    have_sectors = all(o.sectors is not None for o in outcomes)
    v = report.values
    for K in K_list:
        v.setdefault("FRC", {})[K] = {
            0: float(np.concatenate([_frc_rows(r, o, K, c) for (r, o), c in zip(pairs, corr)]).mean())
        }
        if have_sectors:
            v.setdefault("SP", {})[K] = {0: sector_precision(pairs, K)}
        v.setdefault("TC", {})[K] = {h: trend_consistency(pairs, K, h) for h in horizons}
        v.setdefault("IC", {})[K] = {h: information_coefficient(pairs, K, h) for h in horizons}
    return report


def mean_pairwise_correlation(outcomes: list[CohortOutcome]) -> float:
    """Query-weighted mean off-diagonal future-return correlation (the random-retrieval FRC level)."""
    vals = []
    for o in outcomes:
        c = pairwise_future_correlation(o.future_returns)
        n = len(c)
        vals.append((c.sum(axis=1) - 1.0) / (n - 1))
    return float(np.concatenate(vals).mean())


def oracle_retrieval(outcome: CohortOutcome, anchor, K_list=K_LIST) -> CohortRetrieval:
    """Rank peers by realized future-return correlation (an upper bound for FRC)."""
    return retrieve_by_similarity(anchor, outcome.tickers, pairwise_future_correlation(outcome.future_returns), K_list)
