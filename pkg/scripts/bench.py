"""Timing benchmarks: paper-config embedding, dense search, DTW scaling.

    python3 scripts/bench.py [--assets 4000] [--dtw-sizes 100 200 400]

The DTW exponent is the log-log slope of wall time against cohort size;
the all-pairs matrix should scale close to M^2.
"""

import argparse
import time
import warnings

import numpy as np

from fascl.baselines import dtw_matrix
from fascl.encoder import EncoderConfig, count_params, embed_numpy, init_params
from fascl.retrieval import EmbeddingMatrix, retrieve_all

warnings.filterwarnings("ignore", message="The TBB threading layer")


def timed(fn, *a, **kw):
    t0 = time.perf_counter()
    out = fn(*a, **kw)
    return out, time.perf_counter() - t0


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--assets", type=int, default=4000)
    ap.add_argument("--dtw-sizes", type=int, nargs="+", default=[100, 200, 400])
    ap.add_argument("--T", type=int, default=64)
    args = ap.parse_args()
    rng = np.random.default_rng(0)

    cfg = EncoderConfig.paper()
    model = init_params(cfg, 0)
    x = rng.normal(size=(args.assets, cfg.T, cfg.C)).astype(np.float32)
    z, t_embed = timed(embed_numpy, model, x)
    emb = EmbeddingMatrix(np.datetime64("2022-01-03"), [f"A{i:05d}" for i in range(args.assets)], z)
    _, t_search = timed(retrieve_all, emb, [20])
    print(f"paper encoder ({count_params(model):,} params): embed {args.assets} windows {t_embed:.2f}s, "
          f"top-20 search {t_search:.3f}s")

    dtw_matrix(rng.normal(size=(4, args.T)))  # compile outside the timing
    sizes, secs = [], []
    for m in args.dtw_sizes:
        _, s = timed(dtw_matrix, rng.normal(size=(m, args.T)))
        sizes.append(m)
        secs.append(s)
        print(f"DTW all pairs, M={m}: {s:.3f}s")
    if len(sizes) > 1:
        slope = np.polyfit(np.log(sizes), np.log(secs), 1)[0]
        print(f"DTW scaling exponent: {slope:.2f}")


if __name__ == "__main__":
    main()
