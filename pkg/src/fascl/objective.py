"""Training objectives: future-aligned soft contrastive loss and ablation variants.

Target-side quantities (correlations, target distributions) carry no
gradient and are computed in float64 numpy. Predicted distributions and
losses are torch so they backpropagate into the encoder.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .data import ConfigError

DEGENERATE_STD = 1e-12
ZERO_NORM = 1e-12
TAU = 0.01
TAU_TARGET = 0.05


class DegenerateEmbeddingError(ValueError):
    def __init__(self, row: int):
        super().__init__(f"embedding row {row} has (near) zero norm")
        self.row = row


def pairwise_future_correlation(returns: np.ndarray) -> np.ndarray:
    """Pearson correlation between every pair of rows of a (B, H) return matrix.

    Rows with (near) zero variance correlate 0 with everything, except
    themselves; the diagonal is always exactly 1.
    """
    r = np.asarray(returns, dtype=float)
    if r.ndim != 2 or r.shape[1] < 2:
        raise ValueError(f"need a (B, H) matrix with H >= 2, got shape {r.shape}")
    c = r - r.mean(axis=1, keepdims=True)
    norm = np.sqrt(np.einsum("ij,ij->i", c, c))
    ok = norm > DEGENERATE_STD * np.sqrt(r.shape[1])
    u = np.where(ok[:, None], c / np.where(ok, norm, 1.0)[:, None], 0.0)
    corr = np.clip(u @ u.T, -1.0, 1.0)
    corr = (corr + corr.T) / 2
    np.fill_diagonal(corr, 1.0)
    return corr


def masked_log_softmax(scores: np.ndarray, temperature: float) -> np.ndarray:
    """Row log-softmax of scores/temperature over off-diagonal entries; diagonal is -inf."""
    if temperature <= 0:
        raise ConfigError("temperature must be positive")
    s = np.array(scores, dtype=float) / temperature
    np.fill_diagonal(s, -np.inf)
    m = s.max(axis=1, keepdims=True)
    lse = m + np.log(np.exp(s - m).sum(axis=1, keepdims=True))
    return s - lse


@dataclass
class BatchTargets:
    corr: np.ndarray
    log_p: np.ndarray
    tau_t: float
    source: str = "future_returns"

    @property
    def p(self) -> np.ndarray:
        return np.exp(self.log_p)


def target_distribution(corr: np.ndarray, tau_t: float = TAU_TARGET) -> np.ndarray:
    """Row-stochastic softmax of corr/tau_t over j != i (zero diagonal)."""
    return np.exp(masked_log_softmax(corr, tau_t))


def future_targets(returns: np.ndarray, tau_t: float = TAU_TARGET) -> BatchTargets:
    corr = pairwise_future_correlation(returns)
    return BatchTargets(corr, masked_log_softmax(corr, tau_t), tau_t, "future_returns")


def observation_aligned_targets(windows: np.ndarray, tau_t: float = TAU_TARGET) -> BatchTargets:
    """Soft targets from cosine similarity of the flattened (normalized) input windows."""
    x = np.asarray(windows, dtype=float).reshape(len(windows), -1)
    norm = np.linalg.norm(x, axis=1)
    bad = np.flatnonzero(norm < ZERO_NORM)
    if len(bad):
        raise DegenerateEmbeddingError(int(bad[0]))
    u = x / norm[:, None]
    sim = np.clip(u @ u.T, -1.0, 1.0)
    np.fill_diagonal(sim, 1.0)
    return BatchTargets(sim, masked_log_softmax(sim, tau_t), tau_t, "observation")


@dataclass
class PredictedDist:
    sim: torch.Tensor
    log_q: torch.Tensor
    tau: float

    @property
    def q(self) -> torch.Tensor:
        return self.log_q.exp()


def cosine_matrix(z: torch.Tensor) -> torch.Tensor:
    norm = z.norm(dim=1)
    bad = torch.nonzero(norm < ZERO_NORM)
    if len(bad):
        raise DegenerateEmbeddingError(int(bad[0, 0]))
    u = z / norm[:, None]
    return u @ u.T


def predicted_distribution(z: torch.Tensor, tau: float = TAU) -> PredictedDist:
    if tau <= 0:
        raise ConfigError("tau must be positive")
    sim = cosine_matrix(z)
    eye = torch.eye(len(z), dtype=torch.bool, device=z.device)
    logits = (sim / tau).masked_fill(eye, float("-inf"))
    return PredictedDist(sim, F.log_softmax(logits, dim=1), tau)


def soft_contrastive_loss(log_p, log_q: torch.Tensor) -> torch.Tensor:
    """Mean over anchors of KL(p_i || q_i), evaluated from log-probabilities.

    Diagonals are excluded; off-diagonal p that underflow to zero
    contribute zero.
    """
    log_p = torch.as_tensor(log_p, dtype=log_q.dtype, device=log_q.device)
    if log_p.shape != log_q.shape or log_p.dim() != 2 or log_p.shape[0] != log_p.shape[1]:
        raise ValueError(f"shape mismatch: {tuple(log_p.shape)} vs {tuple(log_q.shape)}")
    B = log_p.shape[0]
    off = ~torch.eye(B, dtype=torch.bool, device=log_q.device)
    p = log_p.exp()
    live = off & (p > 0)
    terms = torch.where(live, p * (log_p.where(live, 0.0) - log_q.where(live, 0.0)), 0.0)
    return terms.sum() / B


def hard_infonce_loss(z: torch.Tensor, corr: np.ndarray, tau: float = TAU) -> torch.Tensor:
    """One-positive InfoNCE; the positive is the most future-correlated other asset."""
    B = len(z)
    if B < 2:
        raise ValueError("hard InfoNCE needs B >= 2")
    c = np.array(corr, dtype=float)
    np.fill_diagonal(c, -np.inf)
    pos = torch.as_tensor(np.argmax(c, axis=1))  # first max -> lowest index on ties
    log_q = predicted_distribution(z, tau).log_q
    return -log_q[torch.arange(B), pos].mean()


def multi_horizon_regression_loss(z: torch.Tensor, head: torch.nn.Module, horizon_returns) -> torch.Tensor:
    """MSE between an affine head's predictions and the (B, 4) cumulative horizon returns."""
    y = torch.as_tensor(horizon_returns, dtype=z.dtype)
    pred = head(z)
    if pred.shape != y.shape:
        raise ValueError(f"head output {tuple(pred.shape)} does not match targets {tuple(y.shape)}")
    return ((pred - y) ** 2).mean()


def entropy_rows(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(p > 0, -p * np.log(p), 0.0)
    return t.sum(axis=1)
