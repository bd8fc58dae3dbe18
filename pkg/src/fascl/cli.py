"""Command-line entry point.

    fascl synth    --spec s.json --out panel.csv --seed 7
    fascl train    --panel panel.csv --config run.json --out-dir run/ [--resume]
    fascl embed    --panel panel.csv (--checkpoint run/model.pt | --baseline random) --out emb.csv
    fascl retrieve --panel panel.csv (--checkpoint ... | --baseline pearson) --out ret.csv
    fascl eval     --panel panel.csv (--checkpoint ... | --baseline dtw) --out report
    fascl backtest --panel panel.csv (--checkpoint ... | --baseline oracle) --out bt
    fascl ablate   --panel panel.csv --config run.json --out table4.csv

Every command accepts ``--config`` (JSON) plus repeated ``--set a.b=value``
overrides. Artifacts carry a provenance header: command, config hash, seed
and a short hash of each input file. Nothing time-dependent is written, so
re-running a command with the same inputs reproduces its files byte for byte.

Failures print one JSON object on stderr and exit 1; argument errors and
unknown commands exit 2 with usage text.
"""

from __future__ import annotations

import argparse
import copy
import csv
import dataclasses
import hashlib
import io
import json
import logging
import os
import sys
import warnings
from pathlib import Path

import numpy as np
import torch

from .backtest import run_backtest
from .baselines import DtwConfig, dtw_retrieve, pearson_embeddings, random_embeddings
from .data import HORIZONS, ConfigError, CoverageError, PanelError, SplitSpec, build_cohorts, load_panel, write_panel
from .encoder import EncoderConfig, init_params, load_checkpoint, save_checkpoint
from .metrics import K_LIST, CohortOutcome, InsufficientDataError, evaluate, oracle_retrieval
from .retrieval import embed_cohort, retrieve_all
from .synth import SynthSpec, synth_generate
from .trainer import DataError, NonFiniteLossError, TrainConfig, build_state, fit

log = logging.getLogger("fascl")

BASELINES = ("random", "pearson", "dtw", "oracle")
N_CHANNELS = 6

# one field changed per row relative to the full model
ABLATIONS = (
    ("Hard InfoNCE", "train.loss_variant", "hard_infonce"),
    ("Observation-aligned", "train.loss_variant", "observation_aligned"),
    ("Multi-horizon only", "train.loss_variant", "multi_horizon"),
    ("CLS pooling", "encoder.pooling_mode", "cls"),
    ("With projection head", "encoder.use_projection_head", True),
    ("Close price only", "train.channels", [3]),
)


# ---------------------------------------------------------------------------
# configuration


def _default_config() -> dict:
    return {
        "seed": None,
        "T": 64,
        "H": 64,
        "split": {"valid_days": 252, "test_days": 252, "embargo_days": 0},
        "encoder": {},
        "train": {},
        "eval": {"K_list": list(K_LIST), "split": "test"},  # horizons default to those <= H
        "dtw": {"band_radius": None},
        "random_dim": 64,
    }


_SECTIONS = {
    "split": {"valid_days", "test_days", "embargo_days", "train", "valid", "test"},
    "encoder": {f.name for f in dataclasses.fields(EncoderConfig)} - {"T", "C"},
    "train": {f.name for f in dataclasses.fields(TrainConfig)} - {"T", "H", "seed"},
    "eval": {"K_list", "horizons", "split"},
    "dtw": {"band_radius"},
}


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(cfg: dict, assignment: str) -> None:
    """Apply one ``a.b=value`` override in place; the value is parsed as JSON when possible."""
    key, sep, value = assignment.partition("=")
    if not sep or not key:
        raise ConfigError(f"override {assignment!r} is not of the form key=value", "--set")
    *parents, leaf = key.split(".")
    node = cfg
    for p in parents:
        if not isinstance(node.get(p), dict):
            raise ConfigError(f"unknown config section {p!r}", key)
        node = node[p]
    node[leaf] = _parse_value(value)


def merge(base: dict, update: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in update.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = v
    return out


@dataclasses.dataclass
class RunConfig:
    """Validated view of the merged JSON config."""

    raw: dict
    seed: int | None
    T: int
    H: int
    encoder: EncoderConfig
    train: TrainConfig
    K_list: tuple[int, ...]
    horizons: tuple[int, ...]
    eval_split: str
    dtw: DtwConfig
    random_dim: int

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        known = set(_default_config())
        for k in raw:
            if k not in known:
                raise ConfigError(f"unknown config key {k!r}", k)
        for sec, allowed in _SECTIONS.items():
            if not isinstance(raw.get(sec), dict):
                raise ConfigError(f"{sec} must be an object", sec)
            for k in raw[sec]:
                if k not in allowed:
                    raise ConfigError(f"unknown or derived key {sec}.{k}", f"{sec}.{k}")
        seed = raw["seed"]
        if seed is not None and (not isinstance(seed, int) or isinstance(seed, bool) or seed < 0):
            raise ConfigError("seed must be a non-negative integer", "seed")
        for k in ("T", "H", "random_dim"):
            if not isinstance(raw[k], int) or raw[k] < 1:
                raise ConfigError(f"{k} must be a positive integer", k)
        T, H = raw["T"], raw["H"]
        tr = dict(raw["train"])
        channels = tr.get("channels")
        if channels is not None and (not channels or any(c not in range(N_CHANNELS) for c in channels)):
            raise ConfigError(f"channels must be a non-empty subset of 0..{N_CHANNELS - 1}", "train.channels")
        C = N_CHANNELS if channels is None else len(channels)
        encoder = _section(EncoderConfig, "encoder", raw["encoder"] | {"T": T, "C": C})
        train = _section(TrainConfig, "train", tr | {"T": T, "H": H, "seed": 0 if seed is None else seed})
        ev = raw["eval"]
        K_list = tuple(ev.get("K_list", K_LIST))
        horizons = tuple(ev.get("horizons", [h for h in HORIZONS if h <= H]))
        if not K_list or any(not isinstance(k, int) or k < 1 for k in K_list):
            raise ConfigError("K_list must hold positive integers", "eval.K_list")
        if not horizons or any(not isinstance(h, int) or not 1 <= h <= H for h in horizons):
            raise ConfigError(f"horizons must lie in 1..H={H}", "eval.horizons")
        if ev.get("split", "test") not in ("valid", "test"):
            raise ConfigError("eval.split must be 'valid' or 'test'", "eval.split")
        dtw = _section(DtwConfig, "dtw", raw["dtw"])
        return cls(raw, seed, T, H, encoder, train, K_list, horizons, ev.get("split", "test"), dtw, raw["random_dim"])

    def split_for(self, calendar: np.ndarray) -> SplitSpec:
        s = self.raw["split"]
        try:
            if {"train", "valid", "test"} <= set(s):
                return SplitSpec.from_dict(s)
            return SplitSpec.from_tail(calendar, s["valid_days"], s["test_days"], s.get("embargo_days", 0))
        except ConfigError as e:
            raise ConfigError(str(e), f"split.{e.field}" if e.field else "split") from None
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"bad split: {e}", "split") from None

    def canonical(self) -> str:
        return json.dumps(self.raw, sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]


def _section(cls, name: str, values: dict):
    try:
        return cls(**values)
    except ConfigError as e:
        raise ConfigError(str(e), f"{name}.{e.field}" if e.field else name) from None
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{name}: {e}", name) from None


def load_config(path: str | None, overrides: list[str], seed: int | None = None) -> RunConfig:
    raw = _default_config()
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})", "config") from None
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: top level must be an object", "config")
        raw = merge(raw, user)
    for o in overrides:
        apply_override(raw, o)
    if seed is not None:
        raw["seed"] = seed
    return RunConfig.from_dict(raw)


# ---------------------------------------------------------------------------
# provenance and output


def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()[:12]


def provenance(command: str, cfg: RunConfig | None, inputs: dict[str, str], **extra) -> dict:
    prov = {"command": command}
    if cfg is not None:
        prov["config_hash"] = cfg.hash()
        prov["seed"] = cfg.seed
    prov.update({f"{k}_hash": file_hash(v) for k, v in inputs.items() if v is not None})
    prov.update(extra)
    return prov


def header(prov: dict) -> str:
    return "# fascl " + " ".join(f"{k}={v}" for k, v in prov.items()) + "\n"


def write_text(path, text: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text)


def write_csv(path, prov: dict, head: list[str], rows) -> None:
    buf = io.StringIO()
    buf.write(header(prov))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(head)
    w.writerows(rows)
    write_text(path, buf.getvalue())


def _fmt(x) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# shared pipeline pieces


def _require(path, field: str):
    if path is None or not Path(path).exists():
        raise ConfigError(f"{field} path does not exist: {path}", field)
    return path


def _require_seed(cfg: RunConfig, why: str) -> int:
    if cfg.seed is None:
        raise ConfigError(f"a seed is required for {why}; pass --seed or set it in the config", "seed")
    return cfg.seed


def _method(args) -> str:
    if (args.checkpoint is None) == (args.baseline is None):
        raise ConfigError("give exactly one of --checkpoint or --baseline", "checkpoint")
    if args.checkpoint is not None:
        _require(args.checkpoint, "checkpoint")
        return "model"
    return args.baseline


def _eval_setup(args, cfg: RunConfig):
    panel = load_panel(_require(args.panel, "panel"), cfg.T, cfg.H)
    split = cfg.split_for(panel.calendar)
    k_max = max(cfg.K_list)
    cohorts = build_cohorts(panel, split, cfg.eval_split, cfg.T, cfg.H, k_max, cfg.horizons)
    if not cohorts:
        raise ConfigError(f"no {cfg.eval_split} cohort has more than {k_max + 1} members", "eval.split")
    return panel, cohorts


def _load_model(path, cfg: RunConfig):
    model, payload = load_checkpoint(path)
    if model.cfg.T != cfg.T:
        raise ConfigError(f"checkpoint was trained with T={model.cfg.T}, config has T={cfg.T}", "T")
    return model, payload.get("channels")


def _embeddings(method: str, cohorts, cfg: RunConfig, checkpoint=None):
    if method == "model":
        model, channels = _load_model(checkpoint, cfg)
        return [embed_cohort(c, model, channels) for c in cohorts]
    if method == "random":
        seed = _require_seed(cfg, "random embeddings")
        return [random_embeddings(c, cfg.random_dim, seed + i) for i, c in enumerate(cohorts)]
    if method == "pearson":
        return [pearson_embeddings(c) for c in cohorts]
    raise ConfigError(f"baseline {method!r} ranks peers directly and has no embeddings", "baseline")


def _retrievals(method: str, cohorts, outcomes, cfg: RunConfig, checkpoint=None):
    if method == "dtw":
        return [dtw_retrieve(c, cfg.K_list, cfg.dtw) for c in cohorts]
    if method == "oracle":
        return [oracle_retrieval(o, c.anchor, cfg.K_list) for c, o in zip(cohorts, outcomes)]
    return [retrieve_all(e, cfg.K_list) for e in _embeddings(method, cohorts, cfg, checkpoint)]


def _outcomes(cohorts, cfg: RunConfig):
    return [CohortOutcome.from_cohort(c, cfg.horizons) for c in cohorts]


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> dict:
    _require(args.spec, "spec")
    raw = json.loads(Path(args.spec).read_text())
    if args.seed is None and "seed" not in raw:
        raise ConfigError("a seed is required; pass --seed or set it in the spec file", "seed")
    try:
        spec = SynthSpec.from_json(args.spec)
    except ConfigError as e:
        raise ConfigError(str(e), f"spec.{e.field}" if e.field else "spec") from None
    except TypeError as e:
        raise ConfigError(f"spec: {e}", "spec") from None
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    spec_json = json.dumps(spec.to_dict(), sort_keys=True, separators=(",", ":"))
    prov = {"command": "synth", "config_hash": hashlib.sha256(spec_json.encode()).hexdigest()[:16], "seed": spec.seed}
    panel = synth_generate(spec)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_panel(panel, args.out, header_comment="fascl " + " ".join(f"{k}={v}" for k, v in prov.items()))
    return {"artifacts": [str(args.out)], "tickers": panel.n_tickers, "days": len(panel.calendar)}


def _train_artifacts(out_dir: Path, prov: dict, log_rows, eval_rows) -> None:
    write_csv(out_dir / "train_log.csv", prov, ["step", "lr", "loss"], [(s, _fmt(lr), _fmt(l)) for s, lr, l in log_rows])
    write_csv(
        out_dir / "eval_log.csv",
        prov,
        ["epoch", "frc@10", "tc@10_1d", "sp@10"],
        [(e["epoch"], _fmt(e["frc@10"]), _fmt(e["tc@10_1d"]), _fmt(e["sp@10"])) for e in eval_rows],
    )


def train_run(panel, cfg: RunConfig, out_dir: Path, prov: dict, resume: bool = False, stop_after: int | None = None):
    """Fit one model, writing ``model.pt``, ``state.pt`` and the two CSV logs into ``out_dir``."""
    out_dir.mkdir(parents=True, exist_ok=True)
    split = cfg.split_for(panel.calendar)
    tcfg = cfg.train
    model = init_params(cfg.encoder, tcfg.seed)
    state = build_state(model, tcfg)
    start, prior_log, prior_evals = 0, [], []
    state_path = out_dir / "state.pt"
    if resume:
        _require(state_path, "resume")
        saved = torch.load(state_path, map_location="cpu", weights_only=False)
        if saved["config_hash"] != prov["config_hash"] or saved["panel_hash"] != prov["panel_hash"]:
            raise ConfigError("state.pt was written for a different config or panel", "resume")
        model.load_state_dict(saved["params"])
        state.optimizer.load_state_dict(saved["optimizer"])
        state.rng.bit_generator.state = saved["rng"]
        if state.head is not None:
            state.head.load_state_dict(saved["head"])
        state.step, state.best_frc, state.best_params = saved["step"], saved["best_frc"], saved["best_params"]
        start, prior_log, prior_evals = saved["epoch"], saved["log"], saved["evals"]
    done = {"log": list(prior_log), "evals": list(prior_evals)}

    def on_epoch(epoch, m, st, result):
        done["log"] = prior_log + result.log
        done["evals"] = prior_evals + result.evals
        torch.save(
            {
                "epoch": epoch,
                "config_hash": prov["config_hash"],
                "panel_hash": prov["panel_hash"],
                "params": {k: v.detach().clone() for k, v in m.state_dict().items()},
                "optimizer": st.optimizer.state_dict(),
                "rng": st.rng.bit_generator.state,
                "head": None if st.head is None else st.head.state_dict(),
                "step": st.step,
                "best_frc": st.best_frc,
                "best_params": st.best_params,
                "log": done["log"],
                "evals": done["evals"],
            },
            state_path,
        )
        _train_artifacts(out_dir, prov, done["log"], done["evals"])

    res = fit(panel, split, cfg.encoder, tcfg, model=model, state=state, start_epoch=start, on_epoch=on_epoch, stop_epoch=stop_after)
    extra = {"provenance": prov, "train": tcfg.to_dict(), "channels": None if tcfg.channels is None else list(tcfg.channels)}
    save_checkpoint(out_dir / "model.pt", res.model, tcfg.seed, extra)
    _train_artifacts(out_dir, prov, done["log"], done["evals"])
    return res, done


def cmd_train(args) -> dict:
    cfg = load_config(args.config, args.set, args.seed)
    _require_seed(cfg, "training")
    panel = load_panel(_require(args.panel, "panel"), cfg.T, cfg.H)
    prov = provenance("train", cfg, {"panel": args.panel})
    out = Path(args.out_dir)
    res, done = train_run(panel, cfg, out, prov, resume=args.resume, stop_after=args.stop_after)
    write_text(out / "config.json", json.dumps(cfg.raw, indent=2, sort_keys=True) + "\n")
    return {
        "artifacts": [str(out / n) for n in ("model.pt", "state.pt", "train_log.csv", "eval_log.csv", "config.json")],
        "steps": len(done["log"]),
        "best_frc@10": None if not done["evals"] else res.best_frc,
    }


def _eval_inputs(args, command: str):
    cfg = load_config(args.config, args.set, args.seed)
    method = _method(args)
    panel, cohorts = _eval_setup(args, cfg)
    prov = provenance(command, cfg, {"panel": args.panel, "checkpoint": args.checkpoint}, method=method)
    return cfg, method, cohorts, prov


def cmd_embed(args) -> dict:
    cfg, method, cohorts, prov = _eval_inputs(args, "embed")
    embs = _embeddings(method, cohorts, cfg, args.checkpoint)
    dim = embs[0].vectors.shape[1]
    rows = [(str(e.anchor), t, *map(_fmt, v)) for e in embs for t, v in zip(e.tickers, e.vectors)]
    write_csv(args.out, prov, ["anchor", "ticker", *(f"dim{i}" for i in range(dim))], rows)
    return {"artifacts": [str(args.out)], "cohorts": len(cohorts), "rows": len(rows)}


def cmd_retrieve(args) -> dict:
    cfg, method, cohorts, prov = _eval_inputs(args, "retrieve")
    rets = _retrievals(method, cohorts, _outcomes(cohorts, cfg), cfg, args.checkpoint)
    K = max(cfg.K_list)
    rows = []
    for r in rets:
        for row, q in enumerate(r.queries):
            for rank in range(K):
                rows.append((str(r.anchor), r.tickers[q], rank + 1, r.tickers[r.peers[row, rank]], _fmt(r.scores[row, rank])))
    write_csv(args.out, prov, ["anchor", "query", "rank", "peer", "score"], rows)
    return {"artifacts": [str(args.out)], "queries": sum(len(r.queries) for r in rets)}


def cmd_eval(args) -> dict:
    cfg, method, cohorts, prov = _eval_inputs(args, "eval")
    outs = _outcomes(cohorts, cfg)
    rep = evaluate(_retrievals(method, cohorts, outs, cfg, args.checkpoint), outs, cfg.K_list, cfg.horizons)
    rep.provenance = prov
    write_text(f"{args.out}.json", rep.to_json() + "\n")
    write_text(f"{args.out}.csv", rep.to_csv())
    K = 10 if 10 in cfg.K_list else max(cfg.K_list)
    h = 1 if 1 in cfg.horizons else cfg.horizons[0]
    summary = {f"FRC@{K}": rep.get("FRC", K), f"TC@{K}_{h}d": rep.get("TC", K, h)}
    if "SP" in rep.values:
        summary[f"SP@{K}"] = rep.get("SP", K)
    return {"artifacts": [f"{args.out}.json", f"{args.out}.csv"], "n_queries": rep.n_queries} | summary


def cmd_backtest(args) -> dict:
    cfg, method, cohorts, prov = _eval_inputs(args, "backtest")
    outs = _outcomes(cohorts, cfg)
    rep = run_backtest(_retrievals(method, cohorts, outs, cfg, args.checkpoint), outs, cfg.K_list)
    rep.provenance = prov
    write_text(f"{args.out}.json", rep.to_json() + "\n")
    write_text(f"{args.out}.csv", rep.to_csv())
    return {"artifacts": [f"{args.out}.json", f"{args.out}.csv"], "n_queries": rep.n_queries[max(cfg.K_list)]}


def ablation_configs(args) -> list[tuple[str, RunConfig]]:
    """The full model followed by one config per ablation, each changing a single field."""
    base = load_config(args.config, args.set, args.seed)
    _require_seed(base, "ablation training")
    out = [("FASCL (full model)", base)]
    for label, key, value in ABLATIONS:
        raw = copy.deepcopy(base.raw)
        apply_override(raw, f"{key}={json.dumps(value)}")
        out.append((label, RunConfig.from_dict(raw)))
    return out


def cmd_ablate(args) -> dict:
    import tempfile

    variants = ablation_configs(args)
    base = variants[0][1]
    panel = load_panel(_require(args.panel, "panel"), base.T, base.H)
    prov = provenance("ablate", base, {"panel": args.panel})
    split = base.split_for(panel.calendar)
    cohorts = build_cohorts(panel, split, base.eval_split, base.T, base.H, max(base.K_list), base.horizons)
    if not cohorts:
        raise ConfigError(f"no {base.eval_split} cohort is large enough", "eval.split")
    outs = _outcomes(cohorts, base)
    h_tc = 20 if 20 in base.horizons else max(base.horizons)
    Ks = base.K_list
    table, ext = [], []
    with tempfile.TemporaryDirectory() as tmp:
        work = Path(args.work_dir) if args.work_dir else Path(tmp)
        for i, (label, cfg) in enumerate(variants):
            log.info("ablation %d/%d: %s", i + 1, len(variants), label)
            vprov = provenance("train", cfg, {"panel": args.panel})
            res, _ = train_run(panel, cfg, work / f"variant{i}", vprov)
            ch = cfg.train.channels
            rets = [retrieve_all(embed_cohort(c, res.model, ch), Ks) for c in cohorts]
            rep = evaluate(rets, outs, Ks, (h_tc,))
            table.append((label, *(_fmt(rep.get("FRC", K)) for K in Ks)))
            sp = [_fmt(rep.get("SP", K)) if "SP" in rep.values else "nan" for K in Ks]
            ext.append((label, *(_fmt(rep.get("TC", K, h_tc)) for K in Ks), *sp))
    write_csv(args.out, prov, ["Variant", *(f"K={K}" for K in Ks)], table)
    ext_path = Path(args.out).with_name(Path(args.out).stem + "_extended.csv")
    write_csv(ext_path, prov, ["Variant", *(f"TC@{K}_{h_tc}d" for K in Ks), *(f"SP@{K}" for K in Ks)], ext)
    return {"artifacts": [str(args.out), str(ext_path)], "variants": len(variants)}


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fascl", description="Future-aligned peer retrieval: data, training, evaluation.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    def common(sp, panel=True):
        sp.add_argument("--config", help="JSON run config")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config field, e.g. train.epochs=3")
        sp.add_argument("--seed", type=int, help="overrides the config seed")
        if panel:
            sp.add_argument("--panel", required=True, help="panel CSV")

    s = sub.add_parser("synth", help="write a synthetic panel CSV")
    s.add_argument("--spec", required=True, help="synthetic universe JSON")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="fit an encoder, write checkpoint and logs")
    common(s)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--resume", action="store_true", help="continue from OUT_DIR/state.pt")
    s.add_argument("--stop-after", type=int, metavar="EPOCH", help="stop once this many epochs are complete (resumable)")
    s.set_defaults(func=cmd_train)

    for name, fn, what in (
        ("embed", cmd_embed, "cohort embeddings CSV"),
        ("retrieve", cmd_retrieve, "ranked peers CSV"),
        ("eval", cmd_eval, "metric report (OUT.json, OUT.csv)"),
        ("backtest", cmd_backtest, "spread backtest report (OUT.json, OUT.csv)"),
    ):
        s = sub.add_parser(name, help=what)
        common(s)
        g = s.add_mutually_exclusive_group()
        g.add_argument("--checkpoint", help="trained model.pt")
        g.add_argument("--baseline", choices=BASELINES)
        s.add_argument("--out", required=True)
        s.set_defaults(func=fn)

    s = sub.add_parser("ablate", help="train the full model and six single-change variants")
    common(s)
    s.add_argument("--out", required=True, help="ablation table CSV")
    s.add_argument("--work-dir", help="keep per-variant runs here (default: a temporary directory)")
    s.set_defaults(func=cmd_ablate)
    return p


def set_threads() -> None:
    value = os.environ.get("FASCL_THREADS")
    if not value:
        return
    try:
        n = int(value)
        if n < 1:
            raise ValueError
    except ValueError:
        raise ConfigError(f"FASCL_THREADS must be a positive integer, got {value!r}", "FASCL_THREADS") from None
    import numba

    # numba's pool can reset the OpenMP thread count on first launch, so torch goes last
    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
    torch.set_num_threads(n)


def _fail(kind: str, message: str, field: str | None) -> int:
    sys.stderr.write(json.dumps({"status": "error", "error": kind, "field": field, "message": message}) + "\n")
    return 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)  # exits 2 with usage on bad commands
    warnings.filterwarnings("ignore", message="The TBB threading layer")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        set_threads()
        summary = args.func(args)
    except ConfigError as e:
        return _fail("ConfigError", str(e), e.field)
    except (PanelError, CoverageError, DataError, InsufficientDataError, NonFiniteLossError, FileNotFoundError) as e:
        return _fail(type(e).__name__, str(e), getattr(e, "field", None))
    print(json.dumps({"status": "ok", "command": args.command} | summary))
    return 0


if __name__ == "__main__":
    sys.exit(main())
