"""Synthetic OHLCV universes from a linear factor model.

Daily returns follow ``r_i = b_i * (s_k * f_mkt + f_sec[k]) + eps_i`` for a
ticker in sector ``k`` with persistent loading ``b_i``. ``s_k`` is +1 unless
the universe is ``balanced``, in which case odd sectors carry negative
market exposure so the cross-section has no directional bias.

Each sector also gets a deterministic intraday-range signature: the
high/low spread around the open-close body oscillates with a
sector-specific period and phase. Same-sector tickers therefore share a
visible pattern in their high/low columns that close-to-close return
correlation does not see. Periods are spaced geometrically between
``period_min`` and ``period_max`` and shuffled across sectors.

The defaults put the mean pairwise return correlation near 0.14: the
market factor alone contributes about 0.12 between sectors.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .data import AssetPanel, ConfigError


@dataclass
class SynthSpec:
    m: int = 400
    sectors: int = 8
    days: int = 1000
    market_vol: float = 0.007
    sector_vol: float = 0.009
    idio_vol: float = 0.017
    beta_min: float = 0.8
    beta_max: float = 1.2
    seed: int = 7
    balanced: bool = False
    range_base: float = 0.05
    range_amp: float = 0.9
    range_noise: float = 0.05
    period_min: float = 6.0
    period_max: float = 30.0
    volume_noise: float = 0.5
    start: str = "2010-01-04"

    def __post_init__(self):
        for name in ("market_vol", "sector_vol", "idio_vol"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive", name)
        if self.m < 1 or self.sectors < 1 or self.days < 2:
            raise ConfigError("m, sectors must be >= 1 and days >= 2")
        if self.beta_min > self.beta_max:
            raise ConfigError("beta_min must not exceed beta_max", "beta_min")
        if not 0 <= self.range_amp < 1:
            raise ConfigError("range_amp must lie in [0, 1)", "range_amp")

    @classmethod
    def from_json(cls, path) -> "SynthSpec":
        raw = json.loads(Path(path).read_text())
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown synth spec fields: {sorted(unknown)}", sorted(unknown)[0])
        return cls(**raw)

    def to_dict(self) -> dict:
        return asdict(self)


def factor_returns(spec: SynthSpec, rng: np.random.Generator):
    """Draw loadings and the (M, days) return matrix. Returns (returns, sector_ids, loadings)."""
    M, S, n = spec.m, spec.sectors, spec.days
    sector_ids = np.arange(M) % S
    rng.shuffle(sector_ids)
    loadings = rng.uniform(spec.beta_min, spec.beta_max, size=M)
    f_mkt = rng.normal(0.0, spec.market_vol, size=n)
    f_sec = rng.normal(0.0, spec.sector_vol, size=(S, n))
    eps = rng.normal(0.0, spec.idio_vol, size=(M, n))
    direction = np.ones(S)
    if spec.balanced:
        direction[1::2] = -1.0
    common = direction[sector_ids, None] * f_mkt[None, :] + f_sec[sector_ids]
    returns = loadings[:, None] * common + eps
    return np.clip(returns, -0.5, None), sector_ids, loadings


def synth_generate(spec: SynthSpec, seed: int | None = None) -> AssetPanel:
    """Generate a full-span synthetic panel; deterministic for a given seed."""
    seed = spec.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    M, S, n = spec.m, spec.sectors, spec.days
    returns, sector_ids, _ = factor_returns(spec, rng)

    p0 = rng.uniform(10.0, 200.0, size=M)
    close = p0[:, None] * np.cumprod(1.0 + returns, axis=1)
    prev = np.concatenate([p0[:, None], close[:, :-1]], axis=1)
    # overnight gap: a small share of the day's move happens at the open
    open_ = prev * (1.0 + 0.25 * returns + rng.normal(0.0, 0.002, size=(M, n)))

    period = np.geomspace(spec.period_min, spec.period_max, S)
    rng.shuffle(period)
    phase = rng.uniform(0.0, 2 * np.pi, size=S)
    t = np.arange(n)
    pattern = np.sin(2 * np.pi * t[None, :] / period[:, None] + phase[:, None])  # (S, n)
    spread = spec.range_base * (1.0 + spec.range_amp * pattern[sector_ids])
    spread = spread * np.exp(rng.normal(0.0, spec.range_noise, size=(M, n)))
    body_hi = np.maximum(open_, close)
    body_lo = np.minimum(open_, close)
    high = body_hi * (1.0 + spread / 2)
    low = body_lo * (1.0 - spread / 2)

    base_volume = rng.uniform(2e5, 5e6, size=M)
    volume = np.round(base_volume[:, None] * np.exp(rng.normal(0.0, spec.volume_noise, size=(M, n))))
    value = close * volume

    features = np.stack([open_, high, low, close, volume, value], axis=-1)
    calendar = np.array(
        np.busday_offset(np.datetime64(spec.start, "D"), np.arange(n), roll="forward"), dtype="datetime64[D]"
    )
    width = len(str(M - 1))
    tickers = [f"T{i:0{width}d}" for i in range(M)]
    exchanges = rng.choice(["NASDAQ", "NYSE"], size=M)
    return AssetPanel(
        tickers=tickers,
        calendar=calendar,
        features=features,
        sectors=[f"S{k}" for k in sector_ids],
        exchange=[str(e) for e in exchanges],
        first=np.zeros(M, dtype=int),
        last=np.full(M, n - 1, dtype=int),
        meta={"synth_spec": spec.to_dict(), "seed": seed},
    )
