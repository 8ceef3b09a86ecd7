"""Command-line surface: synth, train, eval, gradcheck.

stdout carries machine-readable JSON only; human diagnostics go to stderr.
Exit codes: 0 success, 1 gradient-check failure, 2 usage/config/data error,
3 training divergence (non-finite loss).

Configuration is a flat "key = value" document ("#" starts a comment).
Unknown keys are rejected; every value is validated by the owning module's
invariants at load time. A --seed flag on any command overrides the config
seed so identical seeds give byte-identical artifacts.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audit import END_TO_END_NAME, LAYER_NAMES, run_audit
from .data import (
    DatasetManifest,
    PreprocessConfig,
    SbmSpec,
    load_arrays,
    load_isic_layout,
    save_image_dataset,
    save_sbm_dataset,
    synth_sbm_graph,
    synth_texture_dataset,
)
from .exceptions import ConfigError, DatasetError, ShapeError
from .graph import derive_seed
from .metrics import build_report
from .model import MsfCnnConfig, build_model, load_checkpoint, load_params_into, save_checkpoint
from .train import (
    SplitSpec,
    TrainConfig,
    cross_validate,
    predict_probs,
    split_indices,
    train_loop,
    write_jsonl,
)

__all__ = ["RunConfig", "parse_config_text", "load_run_config", "main", "entry"]


def _parse_int_tuple(text: str) -> tuple:
    return tuple(int(v) for v in text.split(",") if v.strip() != "")


def _parse_float_tuple(text: str) -> tuple:
    return tuple(float(v) for v in text.split(",") if v.strip() != "")


# key -> parser; values land in a flat dict consumed by RunConfig.from_flat.
CONFIG_SCHEMA = {
    "conv_channels": _parse_int_tuple,
    "pool_positions": _parse_int_tuple,
    "scales": int,
    "fusion_weights": _parse_float_tuple,
    "ppm_levels": _parse_int_tuple,
    "gnn_kind": str,
    "gnn_layers": int,
    "gnn_hidden": int,
    "gnn_sample_size": int,
    "knn_k": int,
    "classes": int,
    "in_channels": int,
    "lr_initial": float,
    "lr_final": float,
    "decay_epoch": int,
    "epochs": int,
    "batch_size": int,
    "seed": int,
    "train_fraction": float,
    "folds": int,
    "image_size": int,
    "denoise_window": int,
    "normalize_range": str,
    "n_per_class": int,
    "sbm_blocks": int,
    "sbm_nodes_per_block": int,
    "sbm_p_in": float,
    "sbm_p_out": float,
    "sbm_feature_dim": int,
    "sbm_feature_shift": float,
}


def parse_config_text(text: str) -> dict:
    """Flat key=value grammar with '#' comments; unknown keys rejected."""
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in CONFIG_SCHEMA:
            raise ConfigError(f"unknown config key {key!r} (line {lineno})")
        if key in values:
            raise ConfigError(f"duplicate config key {key!r} (line {lineno})")
        try:
            values[key] = CONFIG_SCHEMA[key](value)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"invalid value for key {key!r}: {value!r} ({exc})")
    return values


@dataclass(frozen=True)
class RunConfig:
    """Validated union of model, training, split, preprocessing, and
    generator settings."""

    model: MsfCnnConfig = field(default_factory=MsfCnnConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    split: SplitSpec = field(default_factory=SplitSpec)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    n_per_class: int = 10
    sbm: SbmSpec = field(default_factory=SbmSpec)

    @classmethod
    def from_flat(cls, values: dict, seed_override: int | None = None) -> "RunConfig":
        values = dict(values)
        if seed_override is not None:
            values["seed"] = int(seed_override)
        seed = values.get("seed", 0)

        def pick(mapping: dict) -> dict:
            return {dst: values[src] for src, dst in mapping.items() if src in values}

        try:
            model = MsfCnnConfig(**pick({k: k for k in (
                "conv_channels", "pool_positions", "scales", "fusion_weights",
                "ppm_levels", "gnn_kind", "gnn_layers", "gnn_hidden",
                "gnn_sample_size", "knn_k", "classes", "in_channels")}))
            train = TrainConfig(seed=seed, **pick({k: k for k in (
                "lr_initial", "lr_final", "decay_epoch", "epochs", "batch_size")}))
            split = SplitSpec(seed=seed, **pick({k: k for k in (
                "train_fraction", "folds")}))
            preprocess = PreprocessConfig(**pick({
                "image_size": "target_size",
                "denoise_window": "denoise_window",
                "normalize_range": "normalize_range"}))
            sbm = SbmSpec(seed=seed, **pick({
                "sbm_blocks": "blocks",
                "sbm_nodes_per_block": "nodes_per_block",
                "sbm_p_in": "p_in",
                "sbm_p_out": "p_out",
                "sbm_feature_dim": "feature_dim",
                "sbm_feature_shift": "feature_shift"}))
        except ValueError as exc:
            raise ConfigError(str(exc))
        return cls(model=model, train=train, split=split, preprocess=preprocess,
                   n_per_class=values.get("n_per_class", 10), sbm=sbm)


def load_run_config(path, seed_override: int | None = None) -> RunConfig:
    values = {} if path is None else parse_config_text(Path(path).read_text(encoding="utf-8"))
    return RunConfig.from_flat(values, seed_override)


def _info(message: str) -> None:
    print(message, file=sys.stderr)


# ---------------------------------------------------------------------------
# Commands.
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    cfg = load_run_config(args.config, args.seed)
    out_dir = Path(args.out)
    if args.kind == "textures":
        records = synth_texture_dataset(cfg.n_per_class, cfg.preprocess.target_size,
                                        cfg.train.seed)
        files = save_image_dataset(records, out_dir)
        summary = {"kind": "textures", "images": len(records),
                   "per_class": cfg.n_per_class, "size": cfg.preprocess.target_size,
                   "seed": cfg.train.seed, "files": files}
    else:
        graph, labels = synth_sbm_graph(cfg.sbm)
        files = save_sbm_dataset(graph, labels, out_dir)
        summary = {"kind": "sbm", "nodes": graph.node_count,
                   "edges": len(graph.edges), "blocks": cfg.sbm.blocks,
                   "seed": cfg.sbm.seed, "files": files}
    print(json.dumps(summary))
    return 0


def _load_dataset(data_dir, cfg: RunConfig, ids=None) -> tuple[DatasetManifest, np.ndarray, np.ndarray]:
    manifest = load_isic_layout(data_dir)
    if len(manifest.class_names) != cfg.model.classes:
        raise ConfigError(
            f"config key 'classes' = {cfg.model.classes} but dataset has "
            f"{len(manifest.class_names)} classes {manifest.class_names}")
    x, y = load_arrays(manifest, cfg.preprocess, ids=ids)
    return manifest, x, y


def cmd_train(args) -> int:
    cfg = load_run_config(args.config, args.seed)
    manifest, x, y = _load_dataset(args.data, cfg)
    train_idx, test_idx = split_indices(y, cfg.split)
    _info(f"dataset {len(y)} records -> train {len(train_idx)} / test {len(test_idx)}")

    def builder(fold: int):
        return build_model(cfg.model, derive_seed(cfg.train.seed, 500 + fold))

    fold_accs = cross_validate(builder, x, y, train_idx, cfg.split, cfg.train)
    _info("cv fold accuracies: " + ", ".join(f"{a:.4f}" for a in fold_accs))

    model = build_model(cfg.model, derive_seed(cfg.train.seed, 1000))
    logs = train_loop(model, x[train_idx], y[train_idx], cfg.train,
                      classes=cfg.model.classes)
    ckpt_path = Path(args.out)
    ckpt_path.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model.params, ckpt_path)
    log_path = Path(str(ckpt_path) + ".log.jsonl")
    write_jsonl(logs, log_path)
    ids = manifest.ids
    split_path = Path(str(ckpt_path) + ".split.json")
    split_doc = {"train_ids": [ids[i] for i in train_idx],
                 "test_ids": [ids[i] for i in test_idx]}
    split_path.write_text(json.dumps(split_doc), encoding="utf-8")
    summary = {
        "checkpoint": str(ckpt_path),
        "log": str(log_path),
        "split": str(split_path),
        "cv_fold_accuracies": fold_accs,
        "cv_mean": float(np.mean(fold_accs)),
        "cv_std": float(np.std(fold_accs)),
        "final_train_accuracy": logs[-1].train_accuracy,
        "epochs": cfg.train.epochs,
        "seed": cfg.train.seed,
    }
    print(json.dumps(summary))
    return 0


def cmd_eval(args) -> int:
    cfg = load_run_config(args.config, args.seed)
    ids = None
    if args.ids:
        ids = {line.strip() for line in Path(args.ids).read_text(encoding="utf-8").splitlines()
               if line.strip()}
    manifest, x, y = _load_dataset(args.data, cfg, ids=ids)
    model = build_model(cfg.model, cfg.train.seed)
    load_params_into(model, load_checkpoint(args.ckpt))
    probs = predict_probs(model, x, cfg.train.batch_size)
    report = build_report(y, probs, manifest.class_names)
    print(report.to_json())
    return 0


def cmd_gradcheck(args) -> int:
    base = args.seed if args.seed is not None else 0
    seeds = tuple(range(base, base + 5))
    results = run_audit(args.scope, seeds=seeds)
    print(json.dumps({"seeds": list(seeds), "results": results,
                      "pass": all(r["pass"] for r in results.values())}))
    offenders = [name for name, r in results.items() if not r["pass"]]
    if offenders:
        _info("gradient check FAILED for: " + ", ".join(offenders))
        return 1
    return 0


# ---------------------------------------------------------------------------
# Argument parsing and process wiring.
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="flat key=value config file")
    common.add_argument("--seed", type=int, default=None,
                        help="override every config seed")
    parser = argparse.ArgumentParser(prog="msfnet",
                                     description="multi-scale fusion CNN+GNN experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", parents=[common],
                             help="generate a synthetic dataset")
    p_synth.add_argument("kind", choices=("textures", "sbm"))
    p_synth.add_argument("--out", required=True, help="output directory")
    p_synth.set_defaults(fn=cmd_synth)

    p_train = sub.add_parser("train", parents=[common],
                             help="split, cross-validate, fit, and checkpoint")
    p_train.add_argument("--data", required=True, help="dataset directory")
    p_train.add_argument("--out", required=True, help="checkpoint path")
    p_train.set_defaults(fn=cmd_train)

    p_eval = sub.add_parser("eval", parents=[common],
                            help="evaluate a checkpoint; prints a metrics report")
    p_eval.add_argument("--ckpt", required=True, help="checkpoint path")
    p_eval.add_argument("--data", required=True, help="dataset directory")
    p_eval.add_argument("--ids", default=None,
                        help="file of record ids (one per line) to restrict to")
    p_eval.set_defaults(fn=cmd_eval)

    p_check = sub.add_parser("gradcheck", parents=[common],
                             help="finite-difference audit of every backward pass")
    p_check.add_argument("--scope", default="all",
                         choices=("all",) + LAYER_NAMES + (END_TO_END_NAME,))
    p_check.set_defaults(fn=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, DatasetError, ShapeError, OSError, ValueError) as exc:
        _info(f"error: {exc}")
        return 2
    except FloatingPointError as exc:
        _info(f"training diverged: {exc}")
        return 3


def entry() -> None:
    sys.exit(main())
