"""End-to-end desk pipeline through the CLI: synth -> train -> eval (all methods) -> backtest.

    python3 scripts/run_desk.py --work runs/desk [--ablate]

Prints a method comparison table (FRC@10, TC@10 at 1d, SP@10, IC@10 at 20d)
and the wall time of each stage.
"""

import argparse
import json
import time
import warnings
from pathlib import Path

from fascl.cli import main

ROOT = Path(__file__).resolve().parents[1]

warnings.filterwarnings("ignore", message="The TBB threading layer")


def step(name, argv, timings):
    t0 = time.perf_counter()
    code = main([str(a) for a in argv])
    timings[name] = time.perf_counter() - t0
    if code != 0:
        raise SystemExit(f"{name} failed with exit code {code}")


def main_() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--work", default="runs/desk")
    ap.add_argument("--config", default=str(ROOT / "configs" / "desk.json"))
    ap.add_argument("--spec", default=str(ROOT / "configs" / "synth_desk.json"))
    ap.add_argument("--ablate", action="store_true", help="also run the seven-row ablation (about 7 training runs)")
    args = ap.parse_args()
    work = Path(args.work)
    work.mkdir(parents=True, exist_ok=True)
    panel = work / "panel.csv"
    common = ["--panel", panel, "--config", args.config]
    t = {}
    step("synth", ["synth", "--spec", args.spec, "--out", panel], t)
    step("train", ["train", *common, "--out-dir", work / "model"], t)
    methods = {"FASCL": ["--checkpoint", work / "model" / "model.pt"]} | {
        b.capitalize(): ["--baseline", b] for b in ("random", "pearson", "dtw", "oracle")
    }
    for name, flag in methods.items():
        step(f"eval {name}", ["eval", *common, *flag, "--out", work / f"eval_{name.lower()}"], t)
    step("backtest FASCL", ["backtest", *common, *methods["FASCL"], "--out", work / "backtest_fascl"], t)
    if args.ablate:
        step("ablate", ["ablate", *common, "--out", work / "ablation.csv"], t)

    print(f"\n{'method':<8} {'FRC@10':>8} {'TC@10 1d':>9} {'SP@10':>7} {'IC@10 20d':>10}")
    for name in methods:
        m = json.loads((work / f"eval_{name.lower()}.json").read_text())["metrics"]
        print(f"{name:<8} {m['FRC']['10']['0']:8.4f} {m['TC']['10']['1']:9.4f} {m['SP']['10']['0']:7.4f} {m['IC']['10']['20']:10.4f}")
    bt = json.loads((work / "backtest_fascl.json").read_text())["rows"]
    print("\nFASCL backtest: " + ", ".join(f"K={r['K']} Sharpe {r['sharpe']:.2f} TE {r['tracking_error']:.3f}" for r in bt))
    print("\n" + "\n".join(f"{k:<16} {v:7.1f}s" for k, v in t.items()))
    print(f"{'total':<16} {sum(t.values()):7.1f}s")


if __name__ == "__main__":
    main_()
