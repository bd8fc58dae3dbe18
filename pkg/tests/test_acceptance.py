"""Acceptance criteria 1-11.

Each test records one PASS/FAIL line; the lines are printed together at the
end of the pytest run (see ``conftest.py``) and when this file is executed
directly with ``python3 tests/test_acceptance.py``.
"""

import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest
import torch

from fascl.backtest import mean_reversion_pnl, run_backtest, sharpe
from fascl.baselines import DtwConfig, dtw_distance, dtw_retrieve, pearson_embeddings, random_embeddings
from fascl.cli import load_config
from fascl.data import HORIZONS, build_cohorts
from fascl.encoder import EncoderConfig, embed_numpy, init_params
from fascl.metrics import CohortOutcome, evaluate, mean_pairwise_correlation, oracle_retrieval
from fascl.objective import (
    entropy_rows,
    future_targets,
    predicted_distribution,
    soft_contrastive_loss,
    target_distribution,
)
from fascl.retrieval import EmbeddingMatrix, embed_cohort, retrieve_all, retrieve_by_similarity, top_k
from fascl.synth import SynthSpec, synth_generate
from fascl.trainer import fit
from oracles import central_fd_grad, dtw_bruteforce, pooled_metrics, rank_peers, sample_std
from oracles import mean_reversion_pnl as pnl_oracle
from test_metrics import _oracle_view, hand_cohort

ROOT = Path(__file__).resolve().parents[1]
RESULTS: dict[int, str] = {}
K_LIST = [1, 5, 10, 20]

# every CohortRetrieval produced below, audited by criterion 10
ALL_RETRIEVALS = []


def record(n: int, name: str, ok: bool, detail: str) -> None:
    RESULTS[n] = f"[{'PASS' if ok else 'FAIL'}] criterion {n:>2}: {name} -- {detail}"
    assert ok, RESULTS[n]


def _keep(rets):
    ALL_RETRIEVALS.extend(rets)
    return rets


# ---------------------------------------------------------------------------
# shared desk-scale setup


@pytest.fixture(scope="module")
def desk():
    cfg = load_config(str(ROOT / "configs" / "desk.json"), [])
    panel = synth_generate(SynthSpec.from_json(ROOT / "configs" / "synth_desk.json"))
    split = cfg.split_for(panel.calendar)
    cohorts = build_cohorts(panel, split, "test", cfg.T, cfg.H)
    outs = [CohortOutcome.from_cohort(c) for c in cohorts]
    return cfg, panel, split, cohorts, outs


@pytest.fixture(scope="module")
def trained(desk):
    """Full model plus the two ablations criterion 7 needs, each trained once."""
    import dataclasses

    cfg, panel, split, cohorts, outs = desk
    runs = {}
    for variant in ("soft_contrastive", "hard_infonce", "multi_horizon"):
        tc = dataclasses.replace(cfg.train, loss_variant=variant)
        t0 = time.perf_counter()
        res = fit(panel, split, cfg.encoder, tc)
        rets = _keep([retrieve_all(embed_cohort(c, res.model), K_LIST) for c in cohorts])
        runs[variant] = (res, evaluate(rets, outs, K_LIST, HORIZONS), time.perf_counter() - t0)
    return runs


# ---------------------------------------------------------------------------


def test_criterion_01_gradient_correctness():
    rng = np.random.default_rng(0)
    cfg = EncoderConfig(T=16, C=6, P=4, D=8, L=1, n_heads=2)
    model = init_params(cfg, 0, dtype=torch.float64).eval()
    with torch.no_grad():  # move away from the init point so norm scales and biases matter
        for p in model.parameters():
            p += 0.05 * torch.as_tensor(rng.normal(size=p.shape))
    x = torch.as_tensor(rng.normal(size=(4, 16, 6)))
    targets = future_targets(rng.normal(0, 0.01, size=(4, 16)))

    def loss_value():
        with torch.no_grad():
            return float(soft_contrastive_loss(targets.log_p, predicted_distribution(model(x)).log_q))

    t0 = time.perf_counter()
    params = list(model.parameters())
    soft_contrastive_loss(targets.log_p, predicted_distribution(model(x)).log_q).backward()
    fd = central_fd_grad(loss_value, params, eps=1e-5)
    worst, where = 0.0, ""
    for (name, p), g in zip(model.named_parameters(), fd):
        a = p.grad.numpy()
        err = np.max(np.abs(a - g) / np.maximum(np.maximum(np.abs(a), np.abs(g)), 1e-8))
        if err > worst:
            worst, where = err, name
    secs = time.perf_counter() - t0
    record(1, "gradient vs central differences", worst < 1e-4 and secs < 60,
           f"max rel err {worst:.2e} ({where}), {len(params)} tensors, {secs:.1f}s")


def test_criterion_02_distribution_invariants():
    rng = np.random.default_rng(1)
    worst_sum = worst_diag = 0.0
    min_kl, max_self_kl = math.inf, 0.0
    entropy_ok = True
    for _ in range(1000):
        B = int(rng.integers(2, 33))
        H = int(rng.integers(2, 65))
        t = future_targets(rng.normal(0, 0.02, size=(B, H)) + rng.normal(0, 0.01, size=(1, H)))
        z = torch.as_tensor(rng.normal(size=(B, int(rng.integers(1, 17)))))
        q = predicted_distribution(z)
        p = t.p
        worst_sum = max(worst_sum, np.abs(p.sum(1) - 1).max(), (q.q.sum(1) - 1).abs().max().item())
        worst_diag = max(worst_diag, np.abs(np.diag(p)).max(), q.q.diagonal().abs().max().item())
        min_kl = min(min_kl, soft_contrastive_loss(t.log_p, q.log_q).item())
        lp = torch.as_tensor(t.log_p)
        max_self_kl = max(max_self_kl, soft_contrastive_loss(lp, lp).item())
        ent = [entropy_rows(target_distribution(t.corr, tt)) for tt in (1.0, 0.1, 0.05, 0.01)]
        entropy_ok &= all(np.all(b <= a + 1e-12) for a, b in zip(ent, ent[1:]))
    ok = worst_sum <= 1e-9 and worst_diag == 0.0 and min_kl >= -1e-12 and max_self_kl < 1e-10 and entropy_ok
    record(2, "distribution invariants over 1000 batches", ok,
           f"row-sum err {worst_sum:.1e}, diag {worst_diag}, min KL {min_kl:.2e}, KL(p||p) {max_self_kl:.1e}, entropy monotone {entropy_ok}")


def test_criterion_03_metric_oracle_equivalence():
    # 22 assets: K=20 needs at least 21 cohort members
    cohorts = [hand_cohort(seed=0), hand_cohort(seed=1, anchor=np.datetime64("2021-06-01"))]
    rep = evaluate([c[0] for c in cohorts], [c[1] for c in cohorts], K_LIST, HORIZONS)
    worst = 0.0
    for K in K_LIST:
        for h in HORIZONS:
            ref = pooled_metrics([_oracle_view(*c, h) for c in cohorts], K)
            worst = max(worst, abs(rep.get("TC", K, h) - ref["TC"]), abs(rep.get("IC", K, h) - ref["IC"]),
                        abs(rep.get("FRC", K) - ref["FRC"]), abs(rep.get("SP", K) - ref["SP"]))
    record(3, "evaluate vs brute-force metrics", worst <= 1e-12, f"max abs diff {worst:.1e} over K x h grid, 22-asset cohorts")


def test_criterion_04_random_calibration():
    base = SynthSpec.from_json(ROOT / "configs" / "synth_balanced.json")
    cfg = load_config(str(ROOT / "configs" / "desk.json"), [])
    rets, outs = [], []
    for seed in (base.seed, base.seed + 1, base.seed + 2):
        panel = synth_generate(base, seed=seed)
        cohorts = build_cohorts(panel, cfg.split_for(panel.calendar), "test", cfg.T, cfg.H)
        outs += [CohortOutcome.from_cohort(c) for c in cohorts]
        rets += _keep([retrieve_all(random_embeddings(c, cfg.random_dim, 1000 * seed + i), K_LIST) for i, c in enumerate(cohorts)])
    rep = evaluate(rets, outs, [10], (1,))
    tc, sp = rep.get("TC", 10, 1), rep.get("SP", 10)
    ok = 0.48 <= tc <= 0.52 and abs(sp - 1 / 8) <= 0.02 and rep.n_queries >= 2000
    record(4, "random baseline calibration (balanced M=400, S=8)", ok,
           f"TC@10(1d) {tc:.4f}, SP@10 {sp:.4f}, {rep.n_queries} queries over 3 seeds")


def test_criterion_05_frc_floor(desk):
    cfg, panel, split, cohorts, outs = desk
    rets = _keep([retrieve_all(random_embeddings(c, cfg.random_dim, cfg.seed + i), K_LIST) for i, c in enumerate(cohorts)])
    frc = evaluate(rets, outs, [10], (1,)).get("FRC", 10)
    floor = mean_pairwise_correlation(outs)
    record(5, "random FRC@10 = mean pairwise correlation", abs(frc - floor) <= 0.03,
           f"FRC@10 {frc:.4f} vs mean pairwise {floor:.4f}")


def test_criterion_06_ordering(desk, trained):
    cfg, panel, split, cohorts, outs = desk

    def frc(rets):
        return evaluate(_keep(rets), outs, [10], (1,)).get("FRC", 10)

    res, rep, secs = trained["soft_contrastive"]
    v = {
        "FASCL": rep.get("FRC", 10),
        "Pearson": frc([retrieve_all(pearson_embeddings(c), K_LIST) for c in cohorts]),
        "DTW": frc([dtw_retrieve(c, K_LIST, cfg.dtw) for c in cohorts]),
        "Random": frc([retrieve_all(random_embeddings(c, cfg.random_dim, cfg.seed + i), K_LIST) for i, c in enumerate(cohorts)]),
        "Oracle": frc([oracle_retrieval(o, c.anchor, K_LIST) for c, o in zip(cohorts, outs)]),
    }
    ok = (
        v["FASCL"] >= v["Pearson"] >= v["DTW"] > v["Random"]
        and all(v["Oracle"] > x for k, x in v.items() if k != "Oracle")
        and v["FASCL"] >= 1.5 * v["Random"]
        and secs < 600
    )
    first, last = res.log[0][2], float(np.mean([l for *_, l in res.log[-cfg.train.steps_per_epoch:]]))
    detail = ", ".join(f"{k} {x:.4f}" for k, x in v.items())
    record(6, "FRC@10 ordering after desk training", ok,
           f"{detail}; FASCL/Random {v['FASCL'] / v['Random']:.2f}x; train {secs:.0f}s; loss {first:.1f} -> {last:.2f}")


def test_criterion_07_ablation_collapse(desk, trained):
    cfg, panel, split, cohorts, outs = desk
    full = trained["soft_contrastive"][1].get("FRC", 10)
    hard = trained["hard_infonce"][1].get("FRC", 10)
    multi = trained["multi_horizon"][1].get("FRC", 10)
    rnd = evaluate([retrieve_all(random_embeddings(c, cfg.random_dim, cfg.seed + i), K_LIST) for i, c in enumerate(cohorts)],
                   outs, [10], (1,)).get("FRC", 10)
    ok = abs(multi - rnd) <= 0.2 * rnd and abs(hard - full) <= 0.1 * full
    record(7, "ablation collapse", ok,
           f"multi-horizon {multi:.4f} vs random {rnd:.4f} ({(multi / rnd - 1):+.1%}); "
           f"hard InfoNCE {hard:.4f} vs full {full:.4f} ({(hard / full - 1):+.1%})")


def test_criterion_08_dtw():
    rng = np.random.default_rng(8)
    exact = all(
        dtw_distance(x, y) == dtw_bruteforce(list(x), list(y))
        for x, y in (rng.normal(size=(2, 8)) for _ in range(100))
    )
    sym = True
    for _ in range(1000):
        x, y = rng.normal(size=int(rng.integers(1, 25))), rng.normal(size=int(rng.integers(1, 25)))
        band = DtwConfig(None if rng.random() < 0.5 else int(rng.integers(0, 5)))
        sym &= dtw_distance(x, y, band) == dtw_distance(y, x, band) and dtw_distance(x, x, band) == 0.0
    record(8, "DTW exactness, symmetry, self-distance", exact and sym, f"100 exact pairs: {exact}; 1000 symmetry/self checks: {sym}")


def test_criterion_09_backtest_degeneracies():
    rng = np.random.default_rng(9)
    n, H = 6, 10
    r = rng.normal(0, 0.01, size=H)
    out = CohortOutcome([f"Q{i}" for i in range(n)], np.tile(r, (n, 1)), np.zeros((n, 1)), (1,), None)
    ret = retrieve_by_similarity(np.datetime64("2020-01-01"), out.tickers, np.zeros((n, n)), [1, 3])
    rep = run_backtest([ret], [out], [1, 3])
    degenerate = all(rep.tracking_error[K] == 0.0 and rep.undefined(K) for K in (1, 3))
    lookahead = True
    for _ in range(100):
        s = rng.normal(0, 0.01, size=int(rng.integers(3, 40)))
        full = mean_reversion_pnl(s)
        cut = int(rng.integers(2, len(s)))
        lookahead &= np.array_equal(full, pnl_oracle(list(s))) and np.array_equal(mean_reversion_pnl(s[:cut]), full[: cut - 1])
    x = [0.0012, -0.0004, 0.0021, 0.0003, -0.0011, 0.0008, 0.0015]
    hand = (sum(x) / len(x)) / sample_std(x) * math.sqrt(252)
    err = abs(sharpe(x) - hand)
    record(9, "backtest degeneracies", degenerate and lookahead and err <= 1e-10,
           f"identical peers TE=0 & Sharpe undefined: {degenerate}; no look-ahead x100: {lookahead}; Sharpe err {err:.1e}")


def test_criterion_10_retrieval_protocol(trained):
    self_hits = cross = prefix_bad = 0
    for r in ALL_RETRIEVALS:
        for row, q in enumerate(r.queries):
            peers = r.peers[row]
            self_hits += int(q in peers)
            cross += int(np.any((peers < 0) | (peers >= len(r.tickers))))
        if r.k_max >= 20:
            prefix_bad += int(not np.array_equal(r.top(20)[:, :5], r.top(5)))
    # independent re-ranking of a 200-asset cohort
    rng = np.random.default_rng(10)
    tickers = [f"A{i:03d}" for i in range(200)]
    vecs = np.round(rng.normal(size=(200, 16)), 1)
    vecs[7] = vecs[3]  # exact duplicate forces a score tie
    emb = EmbeddingMatrix(np.datetime64("2022-01-03"), tickers, vecs)
    unit = vecs / np.linalg.norm(vecs, axis=1, keepdims=True)
    exact = True
    for q in range(200):
        sims = list(unit @ unit[q])
        exact &= [tickers.index(t) for t in top_k(q, emb, 20).peers] == rank_peers(sims, q, 20, tickers)
    small = retrieve_all(emb, [5])
    big = retrieve_all(emb, [20])
    prefix_bad += int(not np.array_equal(big.top(5), small.top(5)))
    ok = self_hits == 0 and cross == 0 and prefix_bad == 0 and exact and len(ALL_RETRIEVALS) > 0
    record(10, "retrieval protocol", ok,
           f"{len(ALL_RETRIEVALS)} cohort retrievals: self {self_hits}, cross-cohort {cross}, prefix violations {prefix_bad}; "
           f"200-asset exact search matches oracle: {exact}")


def test_criterion_11_performance_budget():
    cfg = EncoderConfig.paper()
    model = init_params(cfg, 0)
    rng = np.random.default_rng(11)
    x = rng.normal(size=(4000, cfg.T, cfg.C)).astype(np.float32)
    t0 = time.perf_counter()
    z = embed_numpy(model, x)
    embed_s = time.perf_counter() - t0
    tickers = [f"A{i:04d}" for i in range(4000)]
    emb = EmbeddingMatrix(np.datetime64("2022-01-03"), tickers, z)
    t0 = time.perf_counter()
    ret = retrieve_all(emb, [20])
    search_s = time.perf_counter() - t0
    ok = embed_s < 30 and search_s < 2 and ret.peers.shape == (4000, 20)
    record(11, "performance budget (paper config, 4000 assets)", ok,
           f"embed {embed_s:.1f}s (< 30), top-20 search for all 4000 queries {search_s:.2f}s (< 2), {torch.get_num_threads()} torch threads")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
