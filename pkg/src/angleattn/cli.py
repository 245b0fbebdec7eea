"""Command-line entry point: synth, train, eval, and sweep subcommands.

Exit codes: 0 success, 1 runtime/data error, 2 usage or configuration
error. A JSON config file may supply any flag value; explicit flags win.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from .attention import AttentionConfig, NormMode, ScoreVariant
from .data import (HyperCube, LabelMap, SplitSpec, SynthSpec, export_map,
                   inject_noise, load_cube, load_labels, normalize_bands,
                   save_cube, save_labels, stratified_split, synth_scene)
from .errors import AngleAttnError, ConfigError
from .model import (ModelConfig, ModelParams, Positional, init_params,
                    load_checkpoint, save_checkpoint)
from .train import (SWEEP_CSV_HEADER, TrainConfig, _sweep_cell, evaluate,
                    predict, rows_to_csv, train)

# defaults follow the reference training protocol
CONFIG_DEFAULTS = {
    "patch": 16, "dim": 64, "depth": 4, "heads": 4, "mlp_dim": 128,
    "dropout": 0.1, "variant": "cs2", "norm_mode": None, "temperature": 0.5,
    "positional": "learnable", "epochs": 50, "batch": 128, "lr": 3e-4,
    "wd": 2e-4, "clip": 1.0, "clip_mode": "per_tensor", "smoothing": 0.05,
    "train_frac": 0.01, "val_frac": 0.01, "seed": 0, "snr_db": None,
    "classes": None, "cube": None, "labels": None, "out": None,
    "height": 64, "width": 64, "bands": 32, "sites": 24,
    "gain_lo": 0.5, "gain_hi": 1.5,
}


def load_config_file(path):
    with open(path) as f:
        doc = json.load(f)
    unknown = sorted(set(doc) - set(CONFIG_DEFAULTS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return doc


def resolve_config(args):
    """defaults < config file < explicit flags."""
    cfg = dict(CONFIG_DEFAULTS)
    if getattr(args, "config", None):
        cfg.update(load_config_file(args.config))
    for key in CONFIG_DEFAULTS:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return cfg


def build_model_config(cfg, bands, classes):
    attn = AttentionConfig(
        model_dim=cfg["dim"], heads=cfg["heads"],
        variant=ScoreVariant.from_tag(cfg["variant"]),
        norm_mode=NormMode.from_tag(cfg["norm_mode"]) if cfg["norm_mode"] else None,
        temperature=cfg["temperature"])
    return ModelConfig(
        bands=bands, num_classes=classes, patch_size=cfg["patch"],
        model_dim=cfg["dim"], depth=cfg["depth"], heads=cfg["heads"],
        mlp_dim=cfg["mlp_dim"], dropout_rate=cfg["dropout"],
        attention=attn, positional=Positional.from_tag(cfg["positional"]))


def build_train_config(cfg):
    return TrainConfig(
        epochs=cfg["epochs"], batch_size=cfg["batch"], lr=cfg["lr"],
        weight_decay=cfg["wd"], clip_norm=cfg["clip"],
        label_smoothing=cfg["smoothing"], seed=cfg["seed"],
        clip_mode=cfg["clip_mode"])


def _require(cfg, *keys):
    missing = [k for k in keys if not cfg.get(k)]
    if missing:
        raise ConfigError(f"missing required option(s): {', '.join('--' + k for k in missing)}")


def _load_scene(cfg):
    _require(cfg, "cube", "labels")
    cube = load_cube(cfg["cube"])
    labels = load_labels(cfg["labels"])
    labels.check_pairing(cube)
    cube = normalize_bands(cube)
    if cfg["snr_db"] is not None:
        cube = inject_noise(cube, cfg["snr_db"], cfg["seed"])
    return cube, labels


def cmd_synth(args):
    cfg = resolve_config(args)
    _require(cfg, "out")
    spec = SynthSpec(height=cfg["height"], width=cfg["width"], bands=cfg["bands"],
                     classes=cfg["classes"] or 8, sites=cfg["sites"],
                     gain_lo=cfg["gain_lo"], gain_hi=cfg["gain_hi"],
                     snr_db=cfg["snr_db"], seed=cfg["seed"])
    cube, labels = synth_scene(spec)
    os.makedirs(cfg["out"], exist_ok=True)
    save_cube(os.path.join(cfg["out"], "scene.npy"), cube)
    save_labels(os.path.join(cfg["out"], "labels.npy"), labels)
    counts = np.bincount(labels.ids.reshape(-1), minlength=spec.classes + 1)
    print(f"wrote {spec.height}x{spec.width}x{spec.bands} scene to {cfg['out']}")
    for k in range(1, spec.classes + 1):
        print(f"  class {k}: {counts[k]} pixels")
    return 0


def cmd_train(args):
    cfg = resolve_config(args)
    _require(cfg, "out")
    cube, labels = _load_scene(cfg)
    classes = cfg["classes"] or labels.num_classes
    model_cfg = build_model_config(cfg, cube.bands, classes)
    tcfg = build_train_config(cfg)
    split_spec = SplitSpec(train_frac=cfg["train_frac"], val_frac=cfg["val_frac"],
                           seed=cfg["seed"])
    splits = stratified_split(labels, split_spec)
    params, log, best_epoch = train(model_cfg, cube, labels, splits, tcfg)
    manifest_cfg = dict(cfg)
    manifest_cfg["classes"] = classes
    manifest_cfg["scene_bands"] = cube.bands
    save_checkpoint(cfg["out"], params, manifest_cfg, cfg["seed"], best_epoch)
    with open(os.path.join(cfg["out"], "epochs.jsonl"), "w") as f:
        for entry in log:
            f.write(json.dumps(entry, sort_keys=True) + "\n")
    final = log[-1]["val_oa"] if log else float("nan")
    print(f"checkpoint written to {cfg['out']} (best epoch {best_epoch}, "
          f"last val OA {100 * final:.2f})")
    return 0


def _params_from_checkpoint(path):
    values, manifest = load_checkpoint(path)
    cfg = dict(CONFIG_DEFAULTS)
    cfg.update(manifest["config"])
    model_cfg = build_model_config(cfg, cfg["scene_bands"], cfg["classes"])
    params = init_params(model_cfg, manifest["seed"])
    names = {name for name, _ in params.named_parameters()}
    if names != set(values):
        missing = sorted(names ^ set(values))
        raise ConfigError(f"checkpoint does not match config; mismatched params: {missing}")
    params.load_values(values)
    return params, model_cfg, cfg, manifest


def cmd_eval(args):
    params, model_cfg, cfg, manifest = _params_from_checkpoint(args.checkpoint)
    if args.cube:
        cfg["cube"] = args.cube
    if args.labels:
        cfg["labels"] = args.labels
    cube, labels = _load_scene(cfg)
    if cube.bands != model_cfg.bands:
        raise ConfigError(f"cube has {cube.bands} bands, checkpoint expects {model_cfg.bands}")
    split_spec = SplitSpec(train_frac=cfg["train_frac"], val_frac=cfg["val_frac"],
                           seed=manifest["seed"])
    _, _, test_idx = stratified_split(labels, split_spec)
    report = evaluate(params, model_cfg, cube, labels, test_idx)
    print(f"OA={100 * report.oa:.2f} AA={100 * report.aa:.2f} kappa={100 * report.kappa:.2f}")
    if args.out:
        row = {"variant": cfg["variant"], "seed": manifest["seed"],
               "epoch_best": manifest["epoch"], "oa": report.oa, "aa": report.aa,
               "kappa": report.kappa, "train_seconds": 0.0}
        with open(args.out, "w") as f:
            f.write(rows_to_csv([row]))
    if args.map:
        flat = np.arange(labels.ids.size)
        preds = predict(params, model_cfg, cube, flat).reshape(labels.ids.shape)
        export_map(preds, args.map, num_classes=model_cfg.num_classes)
        if args.map_npy:
            np.save(args.map_npy, preds.astype("<u2"))
    return 0


def _parse_list(text, cast):
    return [cast(x) for x in text.split(",") if x]


def _run_sweep_cell(payload):
    (variant, seed, snr_db, cfg, cube_values, label_ids) = payload
    cube = HyperCube(cube_values)
    if snr_db is not None:
        cube = inject_noise(cube, snr_db, seed)
    labels = LabelMap(label_ids)
    classes = cfg["classes"] or labels.num_classes
    model_cfg = build_model_config(cfg, cube.bands, classes)
    tcfg = build_train_config(cfg)
    split_spec = SplitSpec(train_frac=cfg["train_frac"], val_frac=cfg["val_frac"], seed=seed)
    row = _sweep_cell(ScoreVariant.from_tag(variant), seed, model_cfg, cube, labels,
                      split_spec, tcfg)
    row["snr_db"] = snr_db
    return row


def cmd_sweep(args):
    cfg = resolve_config(args)
    variants = _parse_list(args.variants, str)
    seeds = _parse_list(args.seeds, int) if args.seeds else [cfg["seed"]]
    snrs = _parse_list(args.snr_db_list, float) if args.snr_db_list else [None]
    if not variants or not seeds:
        raise ConfigError("sweep needs nonempty --variants and --seeds")
    for v in variants:
        ScoreVariant.from_tag(v)  # fail fast on unknown tags
    _require(cfg, "cube", "labels")
    cube = normalize_bands(load_cube(cfg["cube"]))
    labels = load_labels(cfg["labels"])
    labels.check_pairing(cube)
    cells = [(v, s, snr, cfg, cube.values, labels.ids)
             for v in variants for s in seeds for snr in snrs]
    workers = int(os.environ.get("ANGLEATTN_THREADS", "1"))
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_sweep_cell, cells))
    else:
        rows = [_run_sweep_cell(c) for c in cells]
    csv_text = rows_to_csv(rows)
    if cfg["out"]:
        with open(cfg["out"], "w") as f:
            f.write(csv_text)
    print(csv_text, end="")
    return 0


def _add_common_flags(p):
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--cube", help="input cube (.npy, <f4, HxWxC)")
    p.add_argument("--labels", help="input labels (.npy, <u2, HxW)")
    p.add_argument("--out", help="output path")
    p.add_argument("--seed", type=int)
    p.add_argument("--variant", help="score variant tag (cs2, cs, abscs, tempcs2, dp, "
                                     "sdp, add, msa-cs2, c-sdp, c-cs2, c-cs, c-add)")
    p.add_argument("--norm-mode", dest="norm_mode", help="none, query, key, or both")
    p.add_argument("--patch", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--mlp-dim", dest="mlp_dim", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--positional")
    p.add_argument("--temperature", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--wd", type=float)
    p.add_argument("--clip", type=float)
    p.add_argument("--clip-mode", dest="clip_mode")
    p.add_argument("--smoothing", type=float)
    p.add_argument("--train-frac", dest="train_frac", type=float)
    p.add_argument("--val-frac", dest="val_frac", type=float)
    p.add_argument("--snr-db", dest="snr_db", type=float)
    p.add_argument("--classes", type=int)


def build_parser():
    parser = argparse.ArgumentParser(prog="angleattn",
                                     description="Angular-attention hyperspectral classifier")
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic labeled scene")
    _add_common_flags(p_synth)
    p_synth.add_argument("--height", type=int)
    p_synth.add_argument("--width", type=int)
    p_synth.add_argument("--bands", type=int)
    p_synth.add_argument("--sites", type=int)
    p_synth.add_argument("--gain-lo", dest="gain_lo", type=float)
    p_synth.add_argument("--gain-hi", dest="gain_hi", type=float)
    p_synth.set_defaults(func=cmd_synth)

    p_train = sub.add_parser("train", help="train a model on a cube + label raster")
    _add_common_flags(p_train)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on its test split")
    _add_common_flags(p_eval)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--map", help="write a PPM classification map here")
    p_eval.add_argument("--map-npy", dest="map_npy", help="also dump predictions as <u2 NPY")
    p_eval.set_defaults(func=cmd_eval)

    p_sweep = sub.add_parser("sweep", help="cross product of variants x seeds [x SNRs]")
    _add_common_flags(p_sweep)
    p_sweep.add_argument("--variants", required=True, help="comma-separated variant tags")
    p_sweep.add_argument("--seeds", help="comma-separated integer seeds")
    p_sweep.add_argument("--snr-db-list", dest="snr_db_list",
                         help="comma-separated SNR values in dB")
    p_sweep.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (AngleAttnError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
