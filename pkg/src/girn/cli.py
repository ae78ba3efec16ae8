"""Command-line entry point: ``girn synth | train | eval | ablate | grid | sweep``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import evalkit
from .config import ConfigError, RunConfig, dump_config, load_config
from .model import ModelConfig, param_shapes
from .numcore.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .numcore.rng import RngStream
from .pairing import JointSubset, canonical_court, inter_pair_count
from .skeldata.io import dataset_digest, load_clip, save_clip
from .skeldata.preprocess import preprocess
from .skeldata.synth import synth_generate
from .trainer import g_params, run_training

log = logging.getLogger("girn")

SPLITS = ("train", "val", "test")
ABLATION_ROWS = (("intra",), ("inter",), ("intra", "inter"), ("object",),
                 ("intra", "inter", "object"))
ABLATION_COLUMNS = ("baseline", "+individual", "+attention")


class CommandError(RuntimeError):
    pass


# --- helpers -------------------------------------------------------------------

def _write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def _out_dir(args, command: str) -> Path:
    out = Path(args.out) if args.out else Path("out") / command
    out.mkdir(parents=True, exist_ok=True)
    return out


def _row_name(types) -> str:
    return "+".join(types)


def load_splits(cfg: RunConfig) -> dict:
    """Raw (pixel-space) splits from ``data_dir``, or freshly generated synthetic data."""
    if not cfg.data_dir:
        return synth_generate(cfg.synth_config(), RngStream(cfg.seed))
    root = Path(cfg.data_dir)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise CommandError(f"data_dir {root} has no manifest.json (create it with 'girn synth')")
    manifest = json.loads(manifest_path.read_text())
    return {split: [load_clip(root / split / cid) for cid in manifest["splits"].get(split, [])]
            for split in SPLITS}


def _preprocessed(cfg: RunConfig, samples) -> list:
    kw = cfg.preprocess_kwargs()
    return [preprocess(s, **kw) for s in samples]


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def save_model(path: Path, params: dict, mcfg: ModelConfig) -> None:
    save_checkpoint(path, params)
    _write_json(_sidecar(path), {"model_config": mcfg.to_dict()})


def load_model(path, expected: ModelConfig | None = None):
    """Parameters and model config of a checkpoint, checked against its shapes.

    When ``expected`` is given, any differing model key is reported.
    """
    path = Path(path)
    if not path.exists():
        raise CommandError(f"checkpoint {path} does not exist")
    params = load_checkpoint(path)
    side = _sidecar(path)
    if not side.exists():
        raise CommandError(f"checkpoint {path} has no model config sidecar {side.name}")
    mcfg = ModelConfig.from_dict(json.loads(side.read_text())["model_config"])
    if expected is not None:
        diff = mcfg.diff(expected)
        if diff:
            lines = [f"  {k}: checkpoint={a!r} config={b!r}" for k, (a, b) in sorted(diff.items())]
            raise CommandError("checkpoint is incompatible with the config:\n" + "\n".join(lines))
    shapes = param_shapes(mcfg)
    got = {k: v.shape for k, v in params.items()}
    if got != shapes:
        lines = [f"  {k}: checkpoint={got.get(k)} expected={shapes.get(k)}"
                 for k in sorted(set(got) | set(shapes)) if got.get(k) != shapes.get(k)]
        raise CommandError("checkpoint tensors do not match its model config:\n"
                           + "\n".join(lines))
    return params, mcfg


def _train_eval(cfg: RunConfig, mcfg: ModelConfig, pre: dict, pretrained=None):
    run = run_training(mcfg, cfg.train_config(), pre["train"], pre["val"], pretrained=pretrained)
    preds = evalkit.predict_labels(run.params, pre["test"], mcfg)
    acc = evalkit.accuracy(preds, [s.group_label for s in pre["test"]])
    return run, acc


def _explicit_model_config(args, cfg: RunConfig) -> ModelConfig | None:
    return cfg.model_config() if args.config else None


# --- commands ------------------------------------------------------------------

def cmd_synth(cfg: RunConfig, args) -> int:
    out = _out_dir(args, "synth")
    data = synth_generate(cfg.synth_config(), RngStream(cfg.seed))
    manifest = {"seed": cfg.seed, "splits": {}, "digests": {}}
    for split in SPLITS:
        for s in data[split]:
            save_clip(s, out / split / s.clip_id)
        manifest["splits"][split] = [s.clip_id for s in data[split]]
        manifest["digests"][split] = dataset_digest(data[split])
    manifest["dataset_digest"] = dataset_digest([s for split in SPLITS for s in data[split]])
    _write_json(out / "manifest.json", manifest)
    (out / "resolved_config.json").write_text(dump_config(cfg))
    print(f"wrote {sum(len(v) for v in data.values())} clips to {out} "
          f"(digest {manifest['dataset_digest'][:16]})")
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    out = _out_dir(args, "train")
    (out / "resolved_config.json").write_text(dump_config(cfg))
    raw = load_splits(cfg)
    pre = {k: _preprocessed(cfg, v) for k, v in raw.items()}
    mcfg = cfg.model_config()
    t0 = time.perf_counter()
    run = run_training(mcfg, cfg.train_config(), pre["train"], pre["val"])
    elapsed = time.perf_counter() - t0
    ckpt = Path(args.checkpoint) if args.checkpoint else out / "model.ckpt"
    save_model(ckpt, run.params, mcfg)
    if len(mcfg.relation_types) > 1:
        for phase in run.phases[:-1]:
            kind = phase.phase.split("-", 1)[1]
            save_model(out / f"{phase.phase}.ckpt", phase.params,
                       replace(mcfg, relation_types=(kind,)))
    with open(out / "runlog.jsonl", "w") as fh:
        for entry in run.log:
            fh.write(json.dumps(entry.record(), sort_keys=True) + "\n")
    _write_json(out / "timings.json", {
        "total_seconds": elapsed,
        "epochs": [{"phase": e.phase, "epoch": e.epoch, "seconds": e.wall_time} for e in run.log],
    })
    test = None
    if pre["test"]:
        preds = evalkit.predict_labels(run.params, pre["test"], mcfg)
        test = evalkit.accuracy(preds, [s.group_label for s in pre["test"]])
    manifest = {
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "dataset_digest": {k: dataset_digest(v) for k, v in raw.items()},
        "checkpoint": ckpt.name,
        "phases": [{"phase": p.phase, "epochs_run": len(p.log), "best_epoch": p.best_epoch,
                    "best_val_loss": p.best_val_loss, "best_val_accuracy": p.best_val_accuracy}
                   for p in run.phases],
        "test_accuracy": test,
        "action_class_weights": [float(w) for w in run.action_weights],
    }
    _write_json(out / "run_manifest.json", manifest)
    summary = f"test accuracy {test:.4f}" if test is not None else "no test split"
    print(f"trained {'+'.join(mcfg.relation_types)} in {elapsed:.1f}s; {summary}; "
          f"checkpoint {ckpt}")
    return 0


def cmd_eval(cfg: RunConfig, args) -> int:
    if not args.checkpoint:
        raise CommandError("eval needs --checkpoint")
    params, mcfg = load_model(args.checkpoint, _explicit_model_config(args, cfg))
    out = _out_dir(args, "eval")
    (out / "resolved_config.json").write_text(dump_config(cfg))
    split = args.split
    samples = load_splits(cfg)[split]
    if not samples:
        raise CommandError(f"split {split!r} is empty")
    res = evalkit.evaluate_raw(params, mcfg, samples, **cfg.preprocess_kwargs())
    cm = res["confusion"]
    (out / "confusion.csv").write_text(cm.to_csv())
    (out / "confusion_rates.csv").write_text(cm.to_csv(normalized=True))
    _write_json(out / "metrics.json", {
        "split": split, "n": len(samples), "accuracy": res["accuracy"],
        "per_class_recall": dict(zip(cm.class_names, np.diag(cm.rates()).round(6).tolist())),
        "checkpoint": str(args.checkpoint),
    })
    if cfg.figures:
        from .plots import confusion_figure
        confusion_figure(cm, out / "confusion.png")
    print(f"{split} accuracy {res['accuracy']:.4f} on {len(samples)} clips")
    return 0


def cmd_ablate(cfg: RunConfig, args) -> int:
    out = _out_dir(args, "ablate")
    (out / "resolved_config.json").write_text(dump_config(cfg))
    pre = {k: _preprocessed(cfg, v) for k, v in load_splits(cfg).items()}
    toggles = {"baseline": (False, False), "+individual": (True, False),
               "+attention": (True, True)}
    table, pretrained = {}, {c: {} for c in ABLATION_COLUMNS}
    for col in ABLATION_COLUMNS:
        heads, att = toggles[col]
        for types in ABLATION_ROWS:
            mcfg = cfg.model_config(relation_types=types, individual_heads=heads, attention=att)
            reuse = {k: v for k, v in pretrained[col].items() if k in types}
            run, acc = _train_eval(cfg, mcfg, pre, reuse if len(types) > 1 else None)
            if len(types) == 1:
                pretrained[col][types[0]] = g_params(run.params, types[0])
            table[(_row_name(types), col)] = acc
            log.info("ablation %s / %s: %.4f", _row_name(types), col, acc)
    rows = [_row_name(t) for t in ABLATION_ROWS]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["relationships", *ABLATION_COLUMNS])
    for r in rows:
        w.writerow([r, *(f"{table[(r, c)]:.6f}" for c in ABLATION_COLUMNS)])
    (out / "ablation.csv").write_text(buf.getvalue())
    _write_json(out / "ablation.json", {r: {c: table[(r, c)] for c in ABLATION_COLUMNS}
                                        for r in rows})
    if cfg.figures:
        from .plots import ablation_figure
        ablation_figure(table, rows, ABLATION_COLUMNS, out / "ablation.png")
    print(buf.getvalue(), end="")
    return 0


def grid_cells(cfg: RunConfig) -> dict:
    """(strategy, joints) -> inter pairs per full scene, or None when over budget."""
    court = canonical_court()
    cells = {}
    for s in cfg.grid_connectivity:
        for k in cfg.grid_joints:
            n = inter_pair_count(court, s, JointSubset.of(k))
            cells[(s, k)] = n if n <= cfg.pair_budget else None
    return cells


def cmd_grid(cfg: RunConfig, args) -> int:
    out = _out_dir(args, "grid")
    (out / "resolved_config.json").write_text(dump_config(cfg))
    pre = {k: _preprocessed(cfg, v) for k, v in load_splits(cfg).items()}
    cells = grid_cells(cfg)
    table = {}
    for (s, k), n in cells.items():
        if n is None:
            log.info("grid %s/J%d skipped: over the pair budget of %d", s, k, cfg.pair_budget)
            continue
        mcfg = cfg.model_config(relation_types=("inter",), connectivity=s, inter_joints=k)
        _, table[(s, k)] = _train_eval(cfg, mcfg, pre)
        log.info("grid %s/J%d (%d pairs): %.4f", s, k, n, table[(s, k)])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["connectivity", *(f"{k}-joints" for k in cfg.grid_joints)])
    for s in cfg.grid_connectivity:
        w.writerow([s, *("-" if (s, k) not in table else f"{table[(s, k)]:.6f}"
                         for k in cfg.grid_joints)])
    (out / "grid.csv").write_text(buf.getvalue())
    _write_json(out / "grid.json", {
        "pair_budget": cfg.pair_budget,
        "cells": [{"connectivity": s, "joints": k, "inter_pairs": inter_pair_count(
            canonical_court(), s, JointSubset.of(k)), "accuracy": table.get((s, k))}
            for (s, k) in cells],
    })
    if cfg.figures:
        from .plots import grid_figure
        grid_figure(table, cfg.grid_connectivity, cfg.grid_joints, out / "grid.png")
    print(buf.getvalue(), end="")
    return 0


def cmd_sweep(cfg: RunConfig, args) -> int:
    if not args.checkpoint:
        raise CommandError("sweep needs --checkpoint")
    params, mcfg = load_model(args.checkpoint, _explicit_model_config(args, cfg))
    if "object" not in mcfg.relation_types:
        raise CommandError("sweep perturbs the ball track, but the checkpoint's model has no "
                           f"object relation type (relation_types={list(mcfg.relation_types)})")
    out = _out_dir(args, "sweep")
    (out / "resolved_config.json").write_text(dump_config(cfg))
    samples = load_splits(cfg)[args.split]
    specs = [evalkit.NoiseSpec("displacement", v, cfg.sweep_repetitions, cfg.seed)
             for v in cfg.sweep_displacement]
    specs += [evalkit.NoiseSpec("dropout", v, cfg.sweep_repetitions, cfg.seed)
              for v in cfg.sweep_dropout]
    rows = evalkit.noise_sweep(params, mcfg, samples, specs, cfg.impute_dropped,
                               **cfg.preprocess_kwargs())
    text = evalkit.sweep_csv(rows)
    (out / "sweep.csv").write_text(text)
    _write_json(out / "sweep.json", [
        {"kind": r.spec.kind, "parameter": r.spec.value, "accuracies": r.accuracies,
         "mean_accuracy": r.mean_accuracy, "injected_std": r.injected_std,
         "dropped_fraction": r.dropped_fraction} for r in rows])
    if cfg.figures and rows:
        from .plots import sweep_figure
        sweep_figure(rows, out / "sweep.png")
    for r in rows:
        print(f"{r.spec.kind:12s} {r.spec.value:8g}  mean accuracy {r.mean_accuracy:.4f}")
    return 0


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate,
            "grid": cmd_grid, "sweep": cmd_sweep}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="girn", description=__doc__)
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="JSON file of flat key/value overrides")
    parser.add_argument("--seed", type=int, help="overrides the config seed")
    parser.add_argument("--out", help="output directory (default out/<command>)")
    parser.add_argument("--checkpoint", help="checkpoint to write (train) or read (eval, sweep)")
    parser.add_argument("--split", default="test", choices=SPLITS,
                        help="split used by eval and sweep")
    parser.add_argument("--log-level", default="INFO")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, seed=args.seed)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (CommandError, CheckpointError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
