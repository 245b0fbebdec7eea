"""Training loop, AdamW, label-smoothed cross-entropy, metrics, sweeps."""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .attention import AttentionConfig, NormMode, ScoreVariant
from .data import extract_patch, stratified_split
from .errors import ConfigError, EvalError, LabelError, SplitError
from .model import (ModelConfig, batched_forward, init_params, is_no_decay)
from .tensor import Tensor


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 128
    lr: float = 3e-4
    weight_decay: float = 2e-4
    clip_norm: float = 1.0
    label_smoothing: float = 0.05
    seed: int = 0
    clip_mode: str = "per_tensor"  # or "global"

    def __post_init__(self):
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigError(f"label_smoothing must be in [0, 1), got {self.label_smoothing}")
        if self.clip_mode not in ("per_tensor", "global"):
            raise ConfigError(f"clip_mode must be per_tensor or global, got {self.clip_mode!r}")


@dataclass
class EvalReport:
    confusion: np.ndarray  # (K, K), rows = truth
    oa: float
    aa: float
    kappa: float
    per_class_acc: np.ndarray


def label_smoothed_ce(probs, targets, smoothing):
    """Mean over the batch of -sum_k y'_k ln(max(p_k, 1e-12))."""
    targets = np.asarray(targets)
    k = probs.shape[-1]
    if targets.min() < 0 or targets.max() >= k:
        raise LabelError(f"targets must lie in [0, {k}), got range "
                         f"[{targets.min()}, {targets.max()}]")
    smoothed = np.full((len(targets), k), smoothing / k)
    smoothed[np.arange(len(targets)), targets] += 1.0 - smoothing
    logp = T.log(T.clamp_min(probs, 1e-12))
    return T.scale(T.sum_all(T.mul(Tensor(smoothed), logp)), -1.0 / len(targets))


def clip_gradients(named_params, clip_norm, mode="per_tensor"):
    """Scale gradients so no tensor norm (or the global norm) exceeds clip_norm."""
    if mode == "global":
        total = np.sqrt(sum(float((t.grad ** 2).sum())
                            for _, t in named_params if t.grad is not None))
        if total > clip_norm:
            factor = clip_norm / total
            for _, t in named_params:
                if t.grad is not None:
                    t.grad = t.grad * factor
        return
    for _, t in named_params:
        if t.grad is None:
            continue
        norm = float(np.sqrt((t.grad ** 2).sum()))
        if norm > clip_norm:
            t.grad = t.grad * (clip_norm / norm)


class AdamW:
    """Decoupled weight decay; decay skips layer norms and biases."""

    beta1 = 0.9
    beta2 = 0.999
    eps = 1e-8

    def __init__(self, named_params, lr, weight_decay=0.0):
        self.named_params = list(named_params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {name: np.zeros_like(t.data) for name, t in self.named_params}
        self.v = {name: np.zeros_like(t.data) for name, t in self.named_params}

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, tensor in self.named_params:
            g = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
            m = self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            v = self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            tensor.data = tensor.data - self.lr * update
            if self.weight_decay and not is_no_decay(name):
                tensor.data = tensor.data - self.lr * self.weight_decay * tensor.data


def metrics_from_confusion(confusion):
    """(oa, aa, kappa, per-class recall) from a truth-by-prediction count matrix."""
    confusion = np.asarray(confusion, dtype=np.float64)
    total = confusion.sum()
    if total == 0:
        raise EvalError("empty confusion matrix")
    diag = np.diag(confusion)
    oa = diag.sum() / total
    row = confusion.sum(axis=1)
    col = confusion.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(row > 0, diag / row, 0.0)
    aa = per_class[row > 0].mean()
    pe = float((row * col).sum()) / total**2
    kappa = 1.0 if pe == 1.0 else (oa - pe) / (1.0 - pe)
    return float(oa), float(aa), float(kappa), per_class


def _gather_batch(cube, flat_indices, patch_size):
    w = cube.values.shape[1]
    patches = np.stack([extract_patch(cube, idx // w, idx % w, patch_size)
                        for idx in flat_indices])
    return patches


def predict(params, cfg, cube, flat_indices, batch_size=256):
    """Predicted class ids (1-based) for the given flat pixel indices."""
    preds = np.empty(len(flat_indices), dtype=np.int64)
    for lo in range(0, len(flat_indices), batch_size):
        chunk = flat_indices[lo:lo + batch_size]
        probs = batched_forward(_gather_batch(cube, chunk, cfg.patch_size),
                                params, cfg, training=False)
        preds[lo:lo + len(chunk)] = probs.data.argmax(axis=-1) + 1
    return preds


def evaluate(params, cfg, cube, labels, test_indices, batch_size=256):
    """Confusion matrix and OA/AA/kappa over the given test pixels."""
    if len(test_indices) == 0:
        raise EvalError("empty test set")
    truth = labels.ids.reshape(-1)[test_indices].astype(np.int64)
    preds = predict(params, cfg, cube, test_indices, batch_size)
    k = cfg.num_classes
    confusion = np.zeros((k, k), dtype=np.int64)
    np.add.at(confusion, (truth - 1, preds - 1), 1)
    oa, aa, kappa, per_class = metrics_from_confusion(confusion)
    return EvalReport(confusion=confusion, oa=oa, aa=aa, kappa=kappa, per_class_acc=per_class)


def train(cfg, cube, labels, splits, tcfg):
    """Run the training protocol; returns (best params, per-epoch log).

    ``splits`` is the (train, val, test) triple of flat pixel indices.
    Model selection keeps the epoch with the best validation OA; with
    epochs=0 the freshly initialized parameters are returned.
    """
    train_idx, val_idx, _ = splits
    if len(train_idx) == 0:
        raise SplitError("empty training split")
    flat_labels = labels.ids.reshape(-1).astype(np.int64)
    params = init_params(cfg, tcfg.seed)
    named = params.named_parameters()
    opt = AdamW(named, lr=tcfg.lr, weight_decay=tcfg.weight_decay)
    shuffle_rng = np.random.default_rng(tcfg.seed + 1)
    dropout_rng = np.random.default_rng(tcfg.seed + 2)
    log = []
    best = {"val_oa": -1.0, "epoch": 0, "values": params.copy_values()}
    for epoch in range(tcfg.epochs):
        order = shuffle_rng.permutation(len(train_idx))
        losses = []
        for lo in range(0, len(order), tcfg.batch_size):
            sel = train_idx[order[lo:lo + tcfg.batch_size]]
            batch = _gather_batch(cube, sel, cfg.patch_size)
            targets = flat_labels[sel] - 1
            params.zero_grads()
            probs = batched_forward(batch, params, cfg, training=True, rng=dropout_rng)
            loss = label_smoothed_ce(probs, targets, tcfg.label_smoothing)
            loss.backward()
            clip_gradients(named, tcfg.clip_norm, tcfg.clip_mode)
            opt.step()
            losses.append(loss.item())
        val_report = evaluate(params, cfg, cube, labels, val_idx)
        entry = {"epoch": epoch, "loss": float(np.mean(losses)), "val_oa": val_report.oa}
        log.append(entry)
        if val_report.oa > best["val_oa"]:
            best = {"val_oa": val_report.oa, "epoch": epoch, "values": params.copy_values()}
    params.load_values(best["values"])
    return params, log, best["epoch"]


SWEEP_CSV_HEADER = "variant,seed,epoch_best,oa,aa,kappa,train_seconds"


def sweep(variants, cfg_base, cube, labels, split_spec, tcfg_base, seeds=None):
    """Train/evaluate each variant on identical splits; rows in input order."""
    if not variants:
        raise ConfigError("sweep needs at least one variant")
    seeds = list(seeds) if seeds is not None else [tcfg_base.seed]
    variants = [ScoreVariant.from_tag(v) if isinstance(v, str) else v for v in variants]
    rows = []
    for variant in variants:
        for seed in seeds:
            rows.append(_sweep_cell(variant, seed, cfg_base, cube, labels, split_spec, tcfg_base))
    return rows


def _sweep_cell(variant, seed, cfg_base, cube, labels, split_spec, tcfg_base):
    from dataclasses import replace

    attn = replace(cfg_base.attention, variant=variant,
                   norm_mode=cfg_base.attention.norm_mode)
    cfg = replace(cfg_base, attention=attn)
    spec = replace(split_spec, seed=seed)
    splits = stratified_split(labels, spec)
    tcfg = replace(tcfg_base, seed=seed)
    start = time.perf_counter()
    params, _, best_epoch = train(cfg, cube, labels, splits, tcfg)
    elapsed = time.perf_counter() - start
    report = evaluate(params, cfg, cube, labels, splits[2])
    return {"variant": variant.value, "seed": seed, "epoch_best": best_epoch,
            "oa": report.oa, "aa": report.aa, "kappa": report.kappa,
            "train_seconds": elapsed}


def rows_to_csv(rows):
    lines = [SWEEP_CSV_HEADER]
    for r in rows:
        lines.append(f"{r['variant']},{r['seed']},{r['epoch_best']},"
                     f"{r['oa']:.6f},{r['aa']:.6f},{r['kappa']:.6f},{r['train_seconds']:.3f}")
    return "\n".join(lines) + "\n"
