"""Same-period cohort embedding and exact top-K cosine search."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import ConfigError, EvalCohort, znorm
from .encoder import PatchTransformerEncoder, embed_numpy

ZERO_NORM = 1e-12


@dataclass
class EmbeddingMatrix:
    anchor: np.datetime64
    tickers: list[str]
    vectors: np.ndarray
    valid: np.ndarray | None = None  # False rows are degenerate: never queried, ranked last

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=float)
        if self.vectors.ndim != 2 or len(self.vectors) != len(self.tickers):
            raise ValueError("vectors must be (len(tickers), D)")
        # row order doubles as the tie-break order, so it must be ticker-id order
        if any(a >= b for a, b in zip(self.tickers, self.tickers[1:])):
            raise ValueError("tickers must be unique and sorted ascending")
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError(f"non-finite embedding in cohort {self.anchor}")
        if self.valid is None:
            self.valid = np.linalg.norm(self.vectors, axis=1) > ZERO_NORM
            if not self.valid.all():
                raise ValueError(f"zero-norm embedding for {self.tickers[int(np.argmin(self.valid))]}")

    def __len__(self) -> int:
        return len(self.tickers)


@dataclass
class RetrievalResult:
    query: str
    peers: list[str]
    scores: list[float]


@dataclass
class CohortRetrieval:
    """Ranked peers for every valid query of one cohort.

    ``peers[q]`` lists cohort row indices, best first; row ``q`` of the
    arrays belongs to query row ``queries[q]``.
    """

    anchor: np.datetime64
    tickers: list[str]
    queries: np.ndarray
    peers: np.ndarray
    scores: np.ndarray

    @property
    def k_max(self) -> int:
        return self.peers.shape[1]

    def top(self, K: int) -> np.ndarray:
        if K > self.k_max:
            raise ConfigError(f"K={K} exceeds retrieved depth {self.k_max}")
        return self.peers[:, :K]

    def result(self, q: int, K: int) -> RetrievalResult:
        row = int(np.flatnonzero(self.queries == q)[0])
        return RetrievalResult(
            self.tickers[q],
            [self.tickers[j] for j in self.peers[row, :K]],
            [float(s) for s in self.scores[row, :K]],
        )

    def results(self, K: int) -> dict[str, RetrievalResult]:
        return {self.tickers[q]: self.result(q, K) for q in self.queries}


def embed_cohort(cohort: EvalCohort, model: PatchTransformerEncoder, channels=None) -> EmbeddingMatrix:
    """Normalize every window and encode the cohort with dropout off."""
    x = znorm(cohort.histories())
    if channels is not None:
        x = x[..., list(channels)]
    return EmbeddingMatrix(cohort.anchor, cohort.tickers, embed_numpy(model, x))


def cosine_similarity(vectors: np.ndarray, valid: np.ndarray | None = None) -> np.ndarray:
    v = np.asarray(vectors, dtype=float)
    norm = np.linalg.norm(v, axis=1)
    ok = norm > ZERO_NORM if valid is None else valid
    u = np.where(ok[:, None], v / np.where(ok, norm, 1.0)[:, None], 0.0)
    return u @ u.T


def rank_rows(sim: np.ndarray, k: int, valid: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Top-k columns per row of a similarity matrix, excluding self.

    Ties break by ascending column index; invalid candidates rank last
    and invalid rows are not queried. Returns (queries, peers, scores).
    """
    n = len(sim)
    valid = np.ones(n, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    if k > n - 1:
        raise ConfigError(f"K={k} exceeds cohort size - 1 = {n - 1}")
    queries = np.flatnonzero(valid)
    # sort key: smaller is better; invalid candidates just above every real score, self last
    key = -np.array(sim, dtype=float)[queries]
    key[:, ~valid] = np.finfo(float).max
    key[np.arange(len(queries)), queries] = np.inf
    if k == 0 or len(queries) == 0:
        empty = np.empty((len(queries), k), dtype=int)
        return queries, empty, empty.astype(float)
    part = np.argpartition(key, k - 1, axis=1)[:, :k]
    kth = np.take_along_axis(key, part, axis=1).max(axis=1)
    # every entry tied with the k-th key is a candidate, so index tie-breaks stay exact
    rows, cols = np.nonzero(key <= kth[:, None])
    order = np.lexsort((cols, key[rows, cols], rows))
    rows, cols = rows[order], cols[order]
    starts = np.searchsorted(rows, np.arange(len(queries)))
    pick = starts[:, None] + np.arange(k)[None, :]
    peers = cols[pick]
    scores = -np.take_along_axis(key, peers, axis=1)
    scores[~valid[peers]] = -np.inf
    return queries, peers, scores


def top_k(query_index: int, emb: EmbeddingMatrix, K: int) -> RetrievalResult:
    """Exact top-K for one query by a stable full sort (the reference path for ``rank_rows``)."""
    n = len(emb)
    if K > n - 1:
        raise ConfigError(f"K={K} exceeds cohort size - 1 = {n - 1}")
    v = emb.vectors
    norm = np.linalg.norm(v, axis=1)
    u = v / np.where(emb.valid, norm, 1.0)[:, None]
    s = u @ u[query_index]
    s[~emb.valid] = -np.inf
    s[query_index] = np.nan
    order = np.argsort(-s, kind="stable")[:K]
    return RetrievalResult(emb.tickers[query_index], [emb.tickers[j] for j in order], [float(s[j]) for j in order])


def retrieve_all(emb: EmbeddingMatrix, K_list) -> CohortRetrieval:
    """Rank peers for every query with one similarity pass, deep enough for max(K_list)."""
    k = max(K_list)
    queries, peers, scores = rank_rows(cosine_similarity(emb.vectors, emb.valid), k, emb.valid)
    return CohortRetrieval(emb.anchor, list(emb.tickers), queries, peers, scores)


def retrieve_by_similarity(anchor, tickers, sim: np.ndarray, K_list, valid=None) -> CohortRetrieval:
    queries, peers, scores = rank_rows(sim, max(K_list), valid)
    return CohortRetrieval(anchor, list(tickers), queries, peers, scores)
