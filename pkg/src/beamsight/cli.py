"""``beamsight`` command line: gen-data, train, eval, latency-report.

Exit codes: 0 success, 2 configuration error, 3 data / I/O error, 4 numeric
divergence.  ``BEAMSIGHT_THREADS`` caps the BLAS worker count.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4
_THREAD_VARS = ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS")


def _apply_thread_cap() -> None:
    raw = os.environ.get("BEAMSIGHT_THREADS")
    if raw is None:
        return
    if not raw.isdigit() or int(raw) < 1:
        raise ValueError(f"BEAMSIGHT_THREADS must be a positive integer, got {raw!r}")
    for var in _THREAD_VARS:
        os.environ[var] = raw


log = logging.getLogger("beamsight")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON config file (overrides built-in defaults)")
    common.add_argument("--seed", type=int, help="global seed")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="beamsight", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[common], help="synthesize a multimodal dataset")
    g.add_argument("--scenario", choices=("v2i-day", "v2i-night", "v2v-day", "v2v-night"))
    g.add_argument("--n", type=int, default=2000, help="number of samples")
    g.add_argument("--los-only", action="store_true", help="drop reflected paths")

    t = sub.add_parser("train", parents=[common], help="train one model variant")
    t.add_argument("--data", type=Path, required=True, help="dataset directory")
    t.add_argument("--variant", choices=("proposed", "baseline1", "baseline2"))
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--resume", action="store_true", help="continue from <out>/last.ckpt")

    e = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on the test split")
    e.add_argument("--data", type=Path, required=True)
    e.add_argument("--checkpoint", type=Path, required=True)
    e.add_argument("--k", type=int, action="append", default=[], help="extra k (repeatable)")
    e.add_argument("--p-o", default=None, help="noise floor for APL: a number or 'auto'")

    lat = sub.add_parser("latency-report", parents=[common], help="beam-sweep latency / overhead table")
    lat.add_argument("--K", type=int, help="codebook size")
    lat.add_argument("--k", type=int, action="append", default=[], help="candidate count (repeatable)")
    lat.add_argument("--exhaustive-ms", type=float, help="exhaustive-search latency baseline")
    return p


def _overrides(args) -> dict:
    o: dict = {}
    if args.seed is not None:
        o["seed"] = args.seed
    cmd = args.command
    if cmd == "gen-data" and args.scenario:
        o["scenario"] = args.scenario
    if cmd == "train":
        tr = {k: v for k, v in (("variant", args.variant), ("epochs", args.epochs),
                                ("batch_size", args.batch_size), ("lr", args.lr)) if v is not None}
        if tr:
            o["train"] = tr
        if args.variant:
            o["model"] = {"variant": args.variant}
    if cmd == "latency-report":
        lt = {}
        if args.K is not None:
            lt["K"] = args.K
        if args.k:
            lt["k_list"] = sorted(set(args.k))
        if args.exhaustive_ms is not None:
            lt["exhaustive_total_ms"] = args.exhaustive_ms
        if lt:
            o["latency"] = lt
    return o


def _out_dir(args, default: str) -> Path:
    out = args.out if args.out is not None else Path(default)
    return out


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def cmd_gen_data(args, cfg: dict, objs: dict) -> int:
    import numpy as np

    from .scenegen import generate_dataset, make_scene

    out = _out_dir(args, ".")
    if not out.is_dir():
        print(f"error: output directory {out} does not exist", file=sys.stderr)
        return EXIT_DATA
    scene = make_scene(cfg["scenario"], cfg["seed"])
    manifest = generate_dataset(scene, args.n, objs["generator"], out, cfg["scenario"], cfg["seed"], args.los_only)
    labels = np.loadtxt(out / "labels.csv", delimiter=",", skiprows=1, usecols=1, ndmin=1).astype(int)
    counts = np.bincount(labels)
    prob = counts[counts > 0] / max(len(labels), 1)
    entropy = float(-(prob * np.log2(prob)).sum())
    print(f"N={manifest.count} label_entropy_bits={entropy:.4f} seed={cfg['seed']} sha256={manifest.sha256}")
    return EXIT_OK


def _load_samples(path: Path):
    from .scenegen import read_dataset

    reader = read_dataset(path)
    return list(reader), reader


def cmd_train(args, cfg: dict, objs: dict) -> int:
    from .model import BeamModel
    from .plotting import plot_loss_curves
    from .training import evaluate, prepare_splits, train

    out = _out_dir(args, "run")
    samples, _ = _load_samples(args.data)
    tcfg = objs["train"]
    mcfg = objs["model"]
    n_beams = len(samples[0].powers) if samples else 0
    if n_beams != mcfg.n_beams:
        print(f"error: dataset has {n_beams} beams but model expects {mcfg.n_beams}", file=sys.stderr)
        return EXIT_CONFIG
    data = prepare_splits(samples, tcfg.ratios, tcfg.seed, objs["preprocess"])
    out.mkdir(parents=True, exist_ok=True)
    model = BeamModel(mcfg, seed=tcfg.seed)
    result = train(model, data.train, data.val, tcfg, out, resume=args.resume,
                   extra_meta={"preproc": data.preproc.to_dict()})
    model.load_arrays(result.best_arrays)
    report = evaluate(model, data.val, tcfg.eval_ks, tcfg.p_o, tcfg.seed, result.curves, split="validation",
                      config=cfg)
    report.to_json(out / "eval_val.json")
    report.to_csv(out / "eval_val.csv")
    result.curves.to_csv(out / "loss.csv")
    plot_loss_curves(result.curves.train, result.curves.val, out / "loss.png", title=mcfg.variant)
    _write_json(out / "config.json", cfg)
    acc = report.topk_accuracy
    print(f"variant={mcfg.variant} best_epoch={result.best_epoch} val_loss={result.best_val:.4f} "
          f"val_top1={acc[min(acc)]:.4f} params={model.n_params} seed={tcfg.seed}")
    return EXIT_OK


def cmd_eval(args, cfg: dict, objs: dict) -> int:
    from .config import ConfigError
    from .fusion import write_predictions
    from .plotting import plot_topk
    from .preprocess import PreprocConfig
    from .training import DEFAULT_KS, TrainConfig, prepare_splits, report_from_probs, load_model

    out = _out_dir(args, "eval")
    model, header = load_model(args.checkpoint)
    extra = header.get("extra") or {}
    if "preproc" not in extra or "train" not in (header.get("config") or {}):
        raise ConfigError(f"{args.checkpoint}: checkpoint lacks preprocessing or training config")
    tcfg = TrainConfig.from_dict(header["config"]["train"])
    samples, _ = _load_samples(args.data)
    n_beams = len(samples[0].powers) if samples else 0
    if n_beams != model.cfg.n_beams:
        raise ConfigError(f"checkpoint predicts {model.cfg.n_beams} beams, dataset has {n_beams}")
    pre = PreprocConfig.from_dict(extra["preproc"])
    data = prepare_splits(samples, tcfg.ratios, tcfg.seed, pre)
    if data.preproc.to_dict() != pre.to_dict():
        raise ConfigError("dataset does not match the checkpoint's training split (GPS range differs)")
    ks = sorted(set(DEFAULT_KS) | set(args.k))
    if any(k < 1 or k > n_beams for k in ks):
        raise ConfigError(f"k values must lie in [1, {n_beams}]")
    p_o = tcfg.p_o if args.p_o is None else (args.p_o if args.p_o == "auto" else float(args.p_o))
    out.mkdir(parents=True, exist_ok=True)
    probs = model.predict_proba(data.test)
    eval_cfg = {**cfg, "checkpoint_config": header.get("config"), "checkpoint_seed": header.get("seed")}
    report = report_from_probs(probs, data.test, model.cfg.variant, ks, p_o, tcfg.seed, split="test",
                               config=eval_cfg)
    report.to_json(out / "eval.json")
    report.to_csv(out / "eval.csv")
    write_predictions(out / "predictions.csv", probs, data.test.labels)
    plot_topk({model.cfg.variant: report}, out / "topk.png")
    for k in ks:
        print(f"k={k:3d} accuracy={report.topk_accuracy[k]:.4f} apl_db={report.apl_db[k]:.4f}")
    return EXIT_OK


def cmd_latency_report(args, cfg: dict, objs: dict) -> int:
    from .nrlatency import overhead_report
    from .plotting import plot_latency

    out = _out_dir(args, ".")
    lat = cfg["latency"]
    report = overhead_report(lat["K"], lat["k_list"], objs["timing"], lat["exhaustive_total_ms"], seed=cfg["seed"])
    out.mkdir(parents=True, exist_ok=True)
    report.write_csv(out / "latency.csv")
    doc = report.to_dict()
    doc["resolved_config"] = cfg
    _write_json(out / "latency.json", doc)
    plot_latency(report, out / "latency.png")
    for r in report.rows:
        print(f"{r.scheme:10s} k={r.k:3d} sweep={r.T_sp_mm_ms:.5f} ms total={r.total_ms:.5f} ms "
              f"latency_reduction={r.latency_reduction_pct:.2f}% search_fraction={r.search_fraction_pct:.4f}%")
    return EXIT_OK


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "latency-report": cmd_latency_report}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        _apply_thread_cap()
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG

    from .config import ConfigError, build_objects, load_config_file, resolve_config
    from .metrics import DegenerateSampleError
    from .numerics import CheckpointError
    from .preprocess import PreprocConfigError
    from .scenegen import DatasetError
    from .training import DivergenceError

    try:
        file_doc = load_config_file(args.config) if args.config else None
        cfg = resolve_config(file_doc, _overrides(args))
        return COMMANDS[args.command](args, cfg, build_objects(cfg))
    except (ConfigError, PreprocConfigError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as e:
        print(f"diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DatasetError, CheckpointError, DegenerateSampleError, OSError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
