"""Train-free reference retrievers: random embeddings, historical Pearson, DTW."""

from __future__ import annotations

from dataclasses import dataclass

import numba as nb
import numpy as np

from .data import CLOSE, EvalCohort, znorm
from .retrieval import CohortRetrieval, EmbeddingMatrix, retrieve_by_similarity


@dataclass
class DtwConfig:
    band_radius: int | None = None

    def __post_init__(self):
        if self.band_radius is not None and self.band_radius < 0:
            raise ValueError("band_radius must be >= 0")


def random_embeddings(cohort: EvalCohort, D: int, seed: int) -> EmbeddingMatrix:
    rng = np.random.default_rng(seed)
    return EmbeddingMatrix(cohort.anchor, cohort.tickers, rng.standard_normal((len(cohort), D)))


def pearson_embeddings(cohort: EvalCohort) -> EmbeddingMatrix:
    """Centered historical close-to-close returns; cosine of these is Pearson correlation.

    Constant-price windows give a zero vector and are marked invalid.
    """
    close = cohort.histories()[:, :, CLOSE]
    r = close[:, 1:] / close[:, :-1] - 1.0
    c = r - r.mean(axis=1, keepdims=True)
    valid = np.sqrt(np.einsum("ij,ij->i", c, c)) > 1e-12 * np.sqrt(c.shape[1])
    c[~valid] = 0.0
    return EmbeddingMatrix(cohort.anchor, cohort.tickers, c, valid=valid)


@nb.njit(cache=True, nogil=True)
def _dtw(x, y, band):
    n, m = len(x), len(y)
    inf = np.inf
    prev = np.full(m + 1, inf)
    cur = np.full(m + 1, inf)
    prev[0] = 0.0
    for i in range(1, n + 1):
        cur[:] = inf
        lo, hi = 1, m
        if band >= 0:
            lo = max(1, i - band)
            hi = min(m, i + band)
        for j in range(lo, hi + 1):
            best = prev[j - 1]
            if prev[j] < best:
                best = prev[j]
            if cur[j - 1] < best:
                best = cur[j - 1]
            cur[j] = abs(x[i - 1] - y[j - 1]) + best
        prev, cur = cur, prev
    return prev[m]


@nb.njit(cache=True, parallel=True)
def _dtw_matrix(X, band):
    n = X.shape[0]
    D = np.zeros((n, n))
    for i in nb.prange(n):
        for j in range(i + 1, n):
            d = _dtw(X[i], X[j], band)
            D[i, j] = d
            D[j, i] = d
    return D


def dtw_distance(x, y, config: DtwConfig | None = None) -> float:
    """Unnormalized DTW with |x_i - y_j| cost and match/insert/delete steps."""
    x = np.ascontiguousarray(x, dtype=float)
    y = np.ascontiguousarray(y, dtype=float)
    if len(x) == 0 or len(y) == 0:
        raise ValueError("DTW needs non-empty series")
    band = -1 if config is None or config.band_radius is None else config.band_radius
    return float(_dtw(x, y, band))


def dtw_matrix(series: np.ndarray, config: DtwConfig | None = None) -> np.ndarray:
    """Symmetric pairwise DTW distances between the rows of ``series``."""
    band = -1 if config is None or config.band_radius is None else config.band_radius
    return _dtw_matrix(np.ascontiguousarray(series, dtype=float), band)


def cohort_closes(cohort: EvalCohort) -> np.ndarray:
    return znorm(cohort.histories()[:, :, CLOSE : CLOSE + 1])[:, :, 0]


def dtw_retrieve(cohort: EvalCohort, K_list, config: DtwConfig | None = None) -> CohortRetrieval:
    """Rank peers by ascending DTW distance between z-normalized close paths."""
    if isinstance(K_list, int):
        K_list = [K_list]
    D = dtw_matrix(cohort_closes(cohort), config)
    return retrieve_by_similarity(cohort.anchor, cohort.tickers, -D, K_list)
