"""Daily market panels, observation windows and temporal splits."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

FEATURES = ("open", "high", "low", "close", "volume", "value")
CLOSE = FEATURES.index("close")
HORIZONS = (1, 5, 20, 60)
DEGENERATE_STD = 1e-8


class PanelError(ValueError):
    """Malformed or inconsistent panel input."""


class CoverageError(ValueError):
    """A window does not have enough history or future data."""

    def __init__(self, side: str, message: str):
        super().__init__(message)
        self.side = side


class ConfigError(ValueError):
    def __init__(self, msg: str, field: str | None = None):
        super().__init__(msg)
        self.field = field


@dataclass
class AssetPanel:
    """Per-ticker daily features on a shared calendar.

    ``features`` has shape (M, n_days, 6); entries outside a ticker's
    observed span are NaN. ``first``/``last`` are inclusive calendar
    indices of each ticker's contiguous span.
    """

    tickers: list[str]
    calendar: np.ndarray  # datetime64[D], strictly increasing
    features: np.ndarray
    sectors: list[str]
    exchange: list[str]
    first: np.ndarray
    last: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self._index = {t: i for i, t in enumerate(self.tickers)}
        if len(self.calendar) > 1 and not np.all(np.diff(self.calendar) > np.timedelta64(0, "D")):
            raise PanelError("calendar must be strictly increasing")

    @property
    def n_tickers(self) -> int:
        return len(self.tickers)

    def index_of(self, ticker: str) -> int:
        try:
            return self._index[ticker]
        except KeyError:
            raise KeyError(f"unknown ticker {ticker!r}") from None

    def date_index(self, date) -> int:
        d = np.datetime64(date, "D")
        i = int(np.searchsorted(self.calendar, d))
        if i >= len(self.calendar) or self.calendar[i] != d:
            raise KeyError(f"date {d} not in calendar")
        return i

    def sector_map(self) -> dict[str, str]:
        return dict(zip(self.tickers, self.sectors))


@dataclass
class WindowSample:
    ticker: str
    anchor: np.datetime64
    history: np.ndarray  # (T, C) raw features
    future_returns: np.ndarray  # (H,)
    horizon_returns: dict[int, float]
    sector: str | None = None


@dataclass
class SplitSpec:
    train_range: tuple[np.datetime64, np.datetime64]
    valid_range: tuple[np.datetime64, np.datetime64]
    test_range: tuple[np.datetime64, np.datetime64]
    embargo_days: int = 0

    def __post_init__(self):
        self.train_range = _as_range(self.train_range)
        self.valid_range = _as_range(self.valid_range)
        self.test_range = _as_range(self.test_range)
        if self.embargo_days < 0:
            raise ConfigError("embargo_days must be >= 0", "embargo_days")
        for name, (a, b) in self.ranges().items():
            if a > b:
                raise ConfigError(f"{name} range is empty ({a} > {b})")
        if not (self.train_range[1] < self.valid_range[0] and self.valid_range[1] < self.test_range[0]):
            raise ConfigError("ranges must be disjoint and ordered train < valid < test")

    def ranges(self) -> dict[str, tuple[np.datetime64, np.datetime64]]:
        return {"train": self.train_range, "valid": self.valid_range, "test": self.test_range}

    def to_dict(self) -> dict:
        return {
            name: [str(a), str(b)] for name, (a, b) in self.ranges().items()
        } | {"embargo_days": self.embargo_days}

    @classmethod
    def from_dict(cls, d: dict) -> "SplitSpec":
        return cls(tuple(d["train"]), tuple(d["valid"]), tuple(d["test"]), int(d.get("embargo_days", 0)))

    @classmethod
    def from_tail(cls, calendar: np.ndarray, valid_days: int, test_days: int, embargo_days: int = 0) -> "SplitSpec":
        """Last ``test_days`` dates are test, the ``valid_days`` before them validation, the rest train."""
        n = len(calendar)
        if valid_days + test_days >= n:
            raise ConfigError("calendar too short for requested validation/test lengths", "valid_days")
        t0 = n - test_days
        v0 = t0 - valid_days
        return cls(
            (calendar[0], calendar[v0 - 1]),
            (calendar[v0], calendar[t0 - 1]),
            (calendar[t0], calendar[-1]),
            embargo_days,
        )


def _as_range(r) -> tuple[np.datetime64, np.datetime64]:
    a, b = r
    return np.datetime64(a, "D"), np.datetime64(b, "D")


@dataclass
class EvalCohort:
    anchor: np.datetime64
    samples: list[WindowSample]

    def __post_init__(self):
        tickers = [s.ticker for s in self.samples]
        if len(set(tickers)) != len(tickers):
            raise PanelError(f"duplicate tickers in cohort {self.anchor}")
        if any(s.anchor != self.anchor for s in self.samples):
            raise PanelError("all cohort samples must share the anchor date")

    @property
    def tickers(self) -> list[str]:
        return [s.ticker for s in self.samples]

    def __len__(self) -> int:
        return len(self.samples)

    def histories(self) -> np.ndarray:
        return np.stack([s.history for s in self.samples])

    def future_returns(self) -> np.ndarray:
        return np.stack([s.future_returns for s in self.samples])

    def horizon_matrix(self, horizons=HORIZONS) -> np.ndarray:
        return np.array([[s.horizon_returns[h] for h in horizons] for s in self.samples])


# ---------------------------------------------------------------------------
# ingestion


def load_panel(path, T: int = 64, H: int = 64) -> AssetPanel:
    """Read a long-format CSV into an AssetPanel.

    Rows with a non-positive close are rejected and counted in
    ``panel.meta["rejected_rows"]``. Gaps inside a ticker's span are
    cleaned by keeping its longest contiguous run of calendar dates;
    tickers whose span is shorter than ``T + H`` are dropped.
    """
    path = Path(path)
    rows: dict[str, dict[np.datetime64, list[float]]] = {}
    sector: dict[str, str] = {}
    exchange: dict[str, str] = {}
    rejected = 0
    with path.open(newline="") as fh:
        physical = []  # physical line number of each non-comment line fed to the reader

        def lines():
            for n, ln in enumerate(fh, start=1):
                if not ln.startswith("#"):
                    physical.append(n)
                    yield ln

        reader = csv.reader(lines())
        header = next(reader, None)
        if header is None:
            raise PanelError(f"{path}: empty file")
        header = [h.strip() for h in header]
        required = ["date", "ticker", "open", "high", "low", "close", "volume", "sector"]
        missing = [c for c in required if c not in header]
        if missing:
            raise PanelError(f"{path}: missing columns {missing}")
        col = {c: header.index(c) for c in header}
        has_value = "value" in col
        for rec in reader:
            lineno = physical[-1]
            if not rec or all(not x.strip() for x in rec):
                continue
            if len(rec) != len(header):
                raise PanelError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(rec)}")
            try:
                date = np.datetime64(rec[col["date"]].strip(), "D")
                vals = [float(rec[col[c]]) for c in ("open", "high", "low", "close", "volume")]
                value = rec[col["value"]].strip() if has_value else ""
                vals.append(float(value) if value else vals[3] * vals[4])
            except ValueError as exc:
                raise PanelError(f"{path}: line {lineno}: {exc}") from None
            if not all(math.isfinite(v) for v in vals):
                raise PanelError(f"{path}: line {lineno}: non-finite value")
            if vals[3] <= 0 or vals[4] < 0:
                rejected += 1
                continue
            t = rec[col["ticker"]].strip()
            rows.setdefault(t, {})[date] = vals
            sector[t] = rec[col["sector"]].strip()
            if "exchange" in col:
                exchange[t] = rec[col["exchange"]].strip()
    if rejected:
        log.warning("%s: rejected %d rows with non-positive close or negative volume", path, rejected)
    panel = _assemble(rows, sector, exchange, T + H)
    panel.meta["rejected_rows"] = rejected
    return panel


def _assemble(rows, sector, exchange, min_span: int) -> AssetPanel:
    calendar = np.array(sorted({d for r in rows.values() for d in r}), dtype="datetime64[D]")
    pos = {d: i for i, d in enumerate(calendar)}
    keep, firsts, lasts, blocks = [], [], [], []
    dropped = 0
    for t in sorted(rows):
        idx = np.array(sorted(pos[d] for d in rows[t]))
        # longest contiguous run of calendar indices
        breaks = np.flatnonzero(np.diff(idx) != 1)
        starts = np.concatenate([[0], breaks + 1])
        ends = np.concatenate([breaks, [len(idx) - 1]])
        k = int(np.argmax(ends - starts))
        a, b = idx[starts[k]], idx[ends[k]]
        if b - a + 1 < min_span:
            dropped += 1
            continue
        block = np.full((len(calendar), len(FEATURES)), np.nan)
        for d, v in rows[t].items():
            i = pos[d]
            if a <= i <= b:
                block[i] = v
        keep.append(t)
        firsts.append(a)
        lasts.append(b)
        blocks.append(block)
    features = np.stack(blocks) if blocks else np.empty((0, len(calendar), len(FEATURES)))
    return AssetPanel(
        tickers=keep,
        calendar=calendar,
        features=features,
        sectors=[sector[t] for t in keep],
        exchange=[exchange.get(t, "") for t in keep],
        first=np.array(firsts, dtype=int),
        last=np.array(lasts, dtype=int),
        meta={"dropped_tickers": dropped},
    )


def write_panel(panel: AssetPanel, path, header_comment: str | None = None) -> None:
    """Write a panel in the long CSV format read by :func:`load_panel`."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh)
        w.writerow(["date", "ticker", *FEATURES, "sector", "exchange"])
        for i, t in enumerate(panel.tickers):
            for d in range(panel.first[i], panel.last[i] + 1):
                v = panel.features[i, d]
                w.writerow([str(panel.calendar[d]), t, *(repr(float(x)) for x in v), panel.sectors[i], panel.exchange[i]])


# ---------------------------------------------------------------------------
# returns and windows


def compute_daily_returns(panel: AssetPanel, ticker: str) -> np.ndarray:
    """Simple daily returns of the close, aligned to the later date."""
    i = panel.index_of(ticker)
    close = panel.features[i, panel.first[i] : panel.last[i] + 1, CLOSE]
    if len(close) < 2:
        raise PanelError(f"{ticker}: need at least 2 observations")
    return close[1:] / close[:-1] - 1.0


def horizon_returns(future_returns: np.ndarray, horizons=HORIZONS) -> dict[int, float]:
    growth = np.cumprod(1.0 + np.asarray(future_returns, dtype=float))
    if max(horizons) > len(growth):
        raise CoverageError("future", f"horizon {max(horizons)} exceeds future length {len(growth)}")
    return {h: float(growth[h - 1] - 1.0) for h in horizons}


def _window_at(panel: AssetPanel, i: int, a: int, T: int, H: int, horizons) -> WindowSample:
    f = panel.features[i]
    history = f[a - T + 1 : a + 1].copy()
    close = f[a : a + H + 1, CLOSE]
    fut = close[1:] / close[:-1] - 1.0
    return WindowSample(
        ticker=panel.tickers[i],
        anchor=panel.calendar[a],
        history=history,
        future_returns=fut,
        horizon_returns=horizon_returns(fut, horizons),
        sector=panel.sectors[i],
    )


def make_window(panel: AssetPanel, ticker: str, anchor, T: int, H: int, horizons=HORIZONS) -> WindowSample:
    i = panel.index_of(ticker)
    a = panel.date_index(anchor)
    if max(horizons) > H:
        raise ConfigError(f"horizons {horizons} exceed H={H}", "horizons")
    if a - T + 1 < panel.first[i]:
        raise CoverageError("history", f"{ticker} @ {anchor}: fewer than T={T} days of history")
    if a + H > panel.last[i]:
        raise CoverageError("future", f"{ticker} @ {anchor}: fewer than H={H} future days")
    return _window_at(panel, i, a, T, H, horizons)


def znorm(window: np.ndarray) -> np.ndarray:
    """Per-column z-score over time (population std); flat columns become zeros."""
    x = np.asarray(window, dtype=float)
    mu = x.mean(axis=-2, keepdims=True)
    sd = x.std(axis=-2, keepdims=True)
    degenerate = sd < DEGENERATE_STD
    out = (x - mu) / np.where(degenerate, 1.0, sd)
    return np.where(degenerate, 0.0, out)


# ---------------------------------------------------------------------------
# temporal protocol


def _range_indices(panel: AssetPanel, rng) -> tuple[int, int]:
    lo = int(np.searchsorted(panel.calendar, rng[0], side="left"))
    hi = int(np.searchsorted(panel.calendar, rng[1], side="right")) - 1
    return lo, hi


def eval_anchors(panel: AssetPanel, i: int, lo: int, hi: int, T: int, H: int) -> list[int]:
    """First and last anchors whose history and future both sit inside [lo, hi].

    The last anchor is kept only if its history window does not overlap
    the first one.
    """
    a0 = max(lo, panel.first[i]) + T - 1
    a1 = min(hi, panel.last[i]) - H
    if a0 > a1:
        return []
    return [a0, a1] if a1 - a0 >= T else [a0]


def build_cohorts(
    panel: AssetPanel,
    split: SplitSpec,
    mode: str,
    T: int = 64,
    H: int = 64,
    k_max: int = 20,
    horizons=HORIZONS,
) -> list[EvalCohort]:
    """Group the evaluation windows of one split into same-anchor cohorts.

    Cohorts with fewer than ``k_max + 2`` members are dropped.
    """
    if mode not in ("valid", "test"):
        raise ConfigError(f"eval mode must be 'valid' or 'test', got {mode!r}")
    lo, hi = _range_indices(panel, split.ranges()[mode])
    if lo > hi:
        raise ConfigError(f"{mode} range contains no trading dates")
    by_anchor: dict[int, list[WindowSample]] = {}
    for i in np.argsort(panel.tickers, kind="stable"):
        for a in eval_anchors(panel, i, lo, hi, T, H):
            by_anchor.setdefault(a, []).append(_window_at(panel, i, a, T, H, horizons))
    cohorts = []
    for a in sorted(by_anchor):
        samples = by_anchor[a]
        if len(samples) < k_max + 2:
            log.info("dropping cohort %s with %d members", panel.calendar[a], len(samples))
            continue
        cohorts.append(EvalCohort(panel.calendar[a], samples))
    return cohorts


def train_anchor_limit(panel: AssetPanel, split: SplitSpec, H: int) -> int:
    """Largest calendar index usable as a training anchor.

    Guarantees anchor + H + embargo_days falls strictly before the
    first validation date.
    """
    v0 = int(np.searchsorted(panel.calendar, split.valid_range[0], side="left"))
    _, t_hi = _range_indices(panel, split.train_range)
    return min(t_hi, v0 - 1 - H - split.embargo_days)
