"""Same-period batch sampling and the AdamW training loop."""

from __future__ import annotations

import copy
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn

from .data import HORIZONS, AssetPanel, CLOSE, ConfigError, SplitSpec, WindowSample, build_cohorts, train_anchor_limit, znorm
from .encoder import EncoderConfig, PatchTransformerEncoder, init_params
from .metrics import CohortOutcome, future_return_correlation, sector_precision, trend_consistency
from .objective import (
    TAU,
    TAU_TARGET,
    future_targets,
    hard_infonce_loss,
    multi_horizon_regression_loss,
    observation_aligned_targets,
    predicted_distribution,
    soft_contrastive_loss,
)
from .retrieval import embed_cohort, retrieve_all

log = logging.getLogger(__name__)

LOSS_VARIANTS = ("soft_contrastive", "hard_infonce", "observation_aligned", "multi_horizon")


class DataError(ValueError):
    pass


class NonFiniteLossError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 10
    steps_per_epoch: int = 100
    batch_size: int = 128
    peak_lr: float = 1e-3
    min_lr: float = 1e-6
    warmup_epochs: int = 1
    weight_decay: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    grad_clip_norm: float = 1.0
    seed: int = 0
    loss_variant: str = "soft_contrastive"
    eval_every: int = 1
    tau: float = TAU
    tau_t: float = TAU_TARGET
    T: int = 64
    H: int = 64
    channels: tuple[int, ...] | None = None  # input feature subset; None = all

    def __post_init__(self):
        if self.channels is not None:
            self.channels = tuple(self.channels)
        if self.epochs > 0 and self.warmup_epochs >= self.epochs:
            raise ConfigError("warmup_epochs must be < epochs", "warmup_epochs")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2", "batch_size")
        if self.grad_clip_norm <= 0:
            raise ConfigError("grad_clip_norm must be > 0", "grad_clip_norm")
        if self.loss_variant not in LOSS_VARIANTS:
            raise ConfigError(f"unknown loss_variant {self.loss_variant!r}", "loss_variant")

    @property
    def total_steps(self) -> int:
        return self.epochs * self.steps_per_epoch

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.channels is not None:
            d["channels"] = list(self.channels)
        return d


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warmup 0 -> peak, cosine decay peak -> min_lr, then flat at min_lr."""
    warm = cfg.warmup_epochs * cfg.steps_per_epoch
    total = cfg.total_steps
    if step < warm:
        return cfg.peak_lr * step / warm
    if step >= total:
        return cfg.min_lr
    frac = (step - warm) / (total - warm)
    return cfg.min_lr + 0.5 * (cfg.peak_lr - cfg.min_lr) * (1.0 + math.cos(math.pi * frac))


class SamePeriodSampler:
    """Draws batches of windows that all share one anchor date.

    Eligibility is computed once: a ticker is eligible on a date when it
    has full T history and H future days, with the future ending before
    the validation range (plus embargo). Dates are drawn uniformly from
    those with at least B eligible tickers.
    """

    def __init__(self, panel: AssetPanel, split: SplitSpec, T: int, H: int, min_size: int = 2, horizons=HORIZONS):
        self.panel, self.T, self.H = panel, T, H
        self.horizons = tuple(h for h in horizons if h <= H)
        limit = train_anchor_limit(panel, split, H)
        lo = int(np.searchsorted(panel.calendar, split.train_range[0]))
        self.anchor_limit = limit
        self.dates: list[int] = []
        self.eligible: list[np.ndarray] = []
        for a in range(max(lo, T - 1), limit + 1):
            ok = np.flatnonzero((panel.first <= a - T + 1) & (panel.last >= a + H))
            if len(ok) >= min_size:
                self.dates.append(a)
                self.eligible.append(ok)
        if not self.dates:
            raise DataError("no admissible training date in the train range")
        self._admissible: dict[int, np.ndarray] = {}
        close = panel.features[:, :, CLOSE]
        with np.errstate(invalid="ignore", divide="ignore"):
            self._ret = np.concatenate([np.full((len(close), 1), np.nan), close[:, 1:] / close[:, :-1] - 1.0], axis=1)

    def admissible(self, B: int) -> np.ndarray:
        """Positions in ``dates`` with at least B eligible tickers, or every date if none has B."""
        if B not in self._admissible:
            full = np.flatnonzero(np.array([len(e) for e in self.eligible]) >= B)
            self._admissible[B] = full if len(full) else np.arange(len(self.dates))
        return self._admissible[B]

    def sample(self, B: int, rng: np.random.Generator):
        """Return (ticker indices, anchor index); fewer than B tickers only if no date has B."""
        dates = self.admissible(B)
        k = int(dates[rng.integers(len(dates))])
        a, pool = self.dates[k], self.eligible[k]
        if len(pool) <= B:
            if len(pool) < B:
                log.debug("date %s has only %d eligible tickers (< B=%d)", self.panel.calendar[a], len(pool), B)
            idx = pool.copy()
        else:
            idx = np.sort(rng.choice(pool, size=B, replace=False))
        return idx, a

    def arrays(self, idx: np.ndarray, a: int):
        """(raw histories (B,T,C), future returns (B,H), horizon returns (B,n_h)) for one batch."""
        hist = self.panel.features[idx, a - self.T + 1 : a + 1]
        fut = self._ret[idx, a + 1 : a + self.H + 1]
        growth = np.cumprod(1.0 + fut, axis=1)
        hz = np.stack([growth[:, h - 1] - 1.0 for h in self.horizons], axis=1)
        return hist, fut, hz

    def windows(self, idx: np.ndarray, a: int) -> list[WindowSample]:
        hist, fut, hz = self.arrays(idx, a)
        return [
            WindowSample(
                self.panel.tickers[i],
                self.panel.calendar[a],
                hist[n],
                fut[n],
                dict(zip(self.horizons, map(float, hz[n]))),
                self.panel.sectors[i],
            )
            for n, i in enumerate(idx)
        ]


def sample_same_period_batch(panel: AssetPanel, split: SplitSpec, B: int, rng: np.random.Generator, T: int = 64, H: int = 64):
    """One same-anchor batch: (list of WindowSample, anchor date)."""
    sampler = SamePeriodSampler(panel, split, T, H)
    idx, a = sampler.sample(B, rng)
    return sampler.windows(idx, a), panel.calendar[a]


@dataclass
class Batch:
    windows: np.ndarray  # z-normalized (B, T, C')
    future_returns: np.ndarray
    horizon_returns: np.ndarray
    anchor: np.datetime64
    tickers: list[str]


@dataclass
class TrainState:
    optimizer: torch.optim.Optimizer
    rng: np.random.Generator
    head: nn.Module | None = None
    step: int = 0
    best_frc: float = -math.inf
    best_params: dict | None = None


def build_state(model: PatchTransformerEncoder, cfg: TrainConfig) -> TrainState:
    head = None
    if cfg.loss_variant == "multi_horizon":
        torch.manual_seed(cfg.seed)
        head = nn.Linear(model.cfg.out_dim, len([h for h in HORIZONS if h <= cfg.H])).to(next(model.parameters()).dtype)
        nn.init.zeros_(head.bias)
    no_decay = model.no_decay_names()
    decay, plain = [], []
    for name, p in model.named_parameters():
        (plain if name in no_decay else decay).append(p)
    if head is not None:
        decay.append(head.weight)
        plain.append(head.bias)
    groups = [
        {"params": decay, "weight_decay": cfg.weight_decay},
        {"params": plain, "weight_decay": 0.0},
    ]
    opt = torch.optim.AdamW(groups, lr=lr_at(0, cfg), betas=(cfg.beta1, cfg.beta2), weight_decay=cfg.weight_decay)
    return TrainState(opt, np.random.default_rng(cfg.seed), head)


def batch_loss(model: PatchTransformerEncoder, batch: Batch, cfg: TrainConfig, head: nn.Module | None = None) -> torch.Tensor:
    dtype = next(model.parameters()).dtype
    z = model.train(True)(torch.as_tensor(batch.windows, dtype=dtype))
    v = cfg.loss_variant
    if v == "soft_contrastive":
        t = future_targets(batch.future_returns, cfg.tau_t)
        return soft_contrastive_loss(t.log_p, predicted_distribution(z, cfg.tau).log_q)
    if v == "observation_aligned":
        t = observation_aligned_targets(batch.windows, cfg.tau_t)
        return soft_contrastive_loss(t.log_p, predicted_distribution(z, cfg.tau).log_q)
    if v == "hard_infonce":
        t = future_targets(batch.future_returns, cfg.tau_t)
        return hard_infonce_loss(z, t.corr, cfg.tau)
    return multi_horizon_regression_loss(z, head, batch.horizon_returns)


def trainable(model: nn.Module, state: TrainState) -> list[torch.nn.Parameter]:
    params = list(model.parameters())
    if state.head is not None:
        params += list(state.head.parameters())
    return params


def train_step(model: PatchTransformerEncoder, state: TrainState, batch: Batch, cfg: TrainConfig) -> float:
    """One optimizer update; returns the pre-update loss."""
    lr = lr_at(state.step, cfg)
    for g in state.optimizer.param_groups:
        g["lr"] = lr
    state.optimizer.zero_grad(set_to_none=True)
    loss = batch_loss(model, batch, cfg, state.head)
    if not torch.isfinite(loss):
        raise NonFiniteLossError(
            f"non-finite loss at step {state.step}, anchor {batch.anchor}, tickers {batch.tickers[:10]}..."
        )
    loss.backward()
    torch.nn.utils.clip_grad_norm_(trainable(model, state), cfg.grad_clip_norm)
    state.optimizer.step()
    state.step += 1
    return float(loss.detach())


def make_batch(sampler: SamePeriodSampler, idx: np.ndarray, a: int, channels=None) -> Batch:
    hist, fut, hz = sampler.arrays(idx, a)
    x = znorm(hist)
    if channels is not None:
        x = x[..., list(channels)]
    return Batch(x, fut, hz, sampler.panel.calendar[a], [sampler.panel.tickers[i] for i in idx])


@dataclass
class FitResult:
    model: PatchTransformerEncoder
    log: list[tuple[int, float, float]] = field(default_factory=list)  # (step, lr, loss)
    evals: list[dict] = field(default_factory=list)
    best_frc: float = float("nan")
    state: TrainState | None = None
    seconds: float = 0.0


def validation_metrics(model, cohorts, channels=None) -> dict:
    rets, outs = [], []
    for c in cohorts:
        rets.append(retrieve_all(embed_cohort(c, model, channels), [20]))
        outs.append(CohortOutcome.from_cohort(c, (1,)))
    pairs = list(zip(rets, outs))
    return {
        "frc@10": future_return_correlation(pairs, 10),
        "tc@10_1d": trend_consistency(pairs, 10, 1),
        "sp@10": sector_precision(pairs, 10) if all(o.sectors for o in outs) else float("nan"),
    }


def fit(
    panel: AssetPanel,
    split: SplitSpec,
    enc_cfg: EncoderConfig,
    cfg: TrainConfig,
    model: PatchTransformerEncoder | None = None,
    state: TrainState | None = None,
    start_epoch: int = 0,
    on_epoch=None,
    stop_epoch: int | None = None,
) -> FitResult:
    """Train for ``cfg.epochs``; keep the parameters with the best validation FRC@10.

    ``start_epoch``/``stop_epoch`` run a slice of the schedule so a run can
    be checkpointed and resumed; ``on_epoch(epoch, model, state, result)``
    fires after each epoch, before the best parameters are restored.
    """
    t0 = time.perf_counter()
    if model is None:
        model = init_params(enc_cfg, cfg.seed)
    if cfg.epochs == 0:
        return FitResult(model)
    sampler = SamePeriodSampler(panel, split, cfg.T, cfg.H)
    val_cohorts = build_cohorts(panel, split, "valid", cfg.T, cfg.H, horizons=(1,)) if cfg.eval_every else []
    if state is None:
        state = build_state(model, cfg)
    torch.manual_seed(cfg.seed)
    result = FitResult(model, state=state)
    if state.best_params is not None:
        result.best_frc = state.best_frc
    for epoch in range(start_epoch, cfg.epochs if stop_epoch is None else min(stop_epoch, cfg.epochs)):
        for _ in range(cfg.steps_per_epoch):
            idx, a = sampler.sample(cfg.batch_size, state.rng)
            batch = make_batch(sampler, idx, a, cfg.channels)
            lr = lr_at(state.step, cfg)
            loss = train_step(model, state, batch, cfg)
            result.log.append((state.step - 1, lr, loss))
        if val_cohorts and (epoch + 1) % cfg.eval_every == 0:
            m = validation_metrics(model, val_cohorts, cfg.channels)
            row = {"epoch": epoch + 1} | m
            result.evals.append(row)
            log.info("epoch %d loss %.4f val %s", epoch + 1, result.log[-1][2], m)
            if m["frc@10"] > state.best_frc:
                state.best_frc = m["frc@10"]
                state.best_params = copy.deepcopy(model.state_dict())
        if on_epoch is not None:
            on_epoch(epoch + 1, model, state, result)
    if state.best_params is not None:
        model.load_state_dict(state.best_params)
        result.best_frc = state.best_frc
    model.eval()
    result.seconds = time.perf_counter() - t0
    return result
