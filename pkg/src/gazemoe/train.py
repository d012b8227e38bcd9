"""Training and evaluation loops: Adam + stepped LR, class-uniform
batches, per-epoch CSV metrics, and best/final checkpoints.

Reproducibility contract: a fixed TrainConfig and manifest produce
byte-identical metrics CSVs and checkpoints. All randomness flows from
``config.seed`` through three independent child streams (fold shuffle,
batch sampling, augmentation); metric floats are serialized with
``repr`` so the CSV captures them exactly.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .config import TrainConfig, config_from_text, config_to_text
from .data import (SampleManifest, augment, load_groups, load_manifest,
                   read_pgm, subject_kfold, uniform_class_iter)
from .errors import ConfigError, ContractError, NumericsError
from .losses import cross_entropy, load_balance_loss, total_loss
from .metrics import accuracy, macro_auc, routing_purity
from .model import HybridMoeNet, build_model
from .moe import RoutingRecord, batch_routing_stats, write_routing_csv
from .optim import Adam, step_lr
from .serialize import load_checkpoint, load_into, save_checkpoint
from .tensor import GradCheckReport, Tensor, finite_diff_check

METRICS_NAME = "metrics.csv"
BEST_DIR = "checkpoint_best"
FINAL_DIR = "checkpoint_final"


# -- batching ---------------------------------------------------------------


def _load_pixels(rows: list[SampleManifest]) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Decode every referenced PGM once; sample_id -> (image, heatmap) in [0,1]."""
    cache = {}
    for m in rows:
        img, imax = read_pgm(m.image_path)
        heat, hmax = read_pgm(m.heatmap_path)
        cache[m.sample_id] = (img.astype(np.float64) / imax,
                              heat.astype(np.float64) / hmax)
    return cache


def _assemble(rows, cache, dtype, augment_cfg=None, rng=None):
    """Stack cached pixels into model inputs, augmenting when configured."""
    images, heatmaps, labels = [], [], []
    for m in rows:
        img, heat = cache[m.sample_id]
        img, heat = img[None, :, :], heat[None, :, :]
        if augment_cfg is not None:
            img, heat = augment(img, heat, augment_cfg, rng)
        images.append(img)
        heatmaps.append(heat)
        labels.append(m.label)
    return (
        Tensor(np.stack(images).astype(dtype)),
        Tensor(np.stack(heatmaps).astype(dtype)),
        np.array(labels, dtype=np.int64),
    )


def _chunks(rows, size):
    for start in range(0, len(rows), size):
        yield rows[start : start + size]


def _forward_losses(model: HybridMoeNet, images, heatmaps, labels, lb_weight):
    """One forward pass: logits, routing records, and the combined loss."""
    logits, records = model(images, None if model.is_baseline else heatmaps)
    cls = cross_entropy(logits, labels)
    lb_terms = [
        load_balance_loss(*batch_routing_stats(rec, rec.num_experts))
        for rec in records
    ]
    total, breakdown = total_loss(cls, lb_terms, lb_weight)
    return logits, records, total, breakdown


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


# -- split evaluation --------------------------------------------------------


@dataclass
class SplitReport:
    """Aggregate metrics over one split, in manifest order."""

    loss_cls: float
    loss_lb: float
    loss_total: float
    acc: float
    auc: float
    # (block_id, branch) -> per-expert top-1 fraction over the whole split
    expert_fracs: dict = field(default_factory=dict)
    # (block_id, branch) -> per-sample top-1 expert over the whole split
    top1: dict = field(default_factory=dict)
    sample_ids: list = field(default_factory=list)


def evaluate_split(model: HybridMoeNet, rows, cache, batch_size, lb_weight,
                   dtype) -> SplitReport:
    """Metrics over a split without updates or augmentation.

    Cross-entropy is averaged per sample; the balance term is a
    batch-level quantity, so it is averaged over chunks weighted by
    chunk size.
    """
    if not rows:
        raise ConfigError("cannot evaluate an empty split")
    cls_sum = 0.0
    lb_sum = 0.0
    logits_all = []
    labels_all = []
    counts: dict = {}
    top1: dict = {}
    sample_ids = []
    with T.no_grad():
        for chunk in _chunks(rows, batch_size):
            images, heatmaps, labels = _assemble(chunk, cache, dtype)
            logits, records, _, breakdown = _forward_losses(
                model, images, heatmaps, labels, lb_weight
            )
            cls_sum += breakdown.cls * len(chunk)
            lb_sum += breakdown.lb * len(chunk)
            logits_all.append(logits.data)
            labels_all.append(labels)
            sample_ids += [m.sample_id for m in chunk]
            for rec in records:
                key = (rec.block_id, rec.branch)
                counts.setdefault(key, np.zeros(rec.num_experts))
                counts[key] += np.bincount(rec.top1, minlength=rec.num_experts)
                top1.setdefault(key, []).append(rec.top1)
    n = len(rows)
    logits_cat = np.concatenate(logits_all)
    labels_cat = np.concatenate(labels_all)
    cls = cls_sum / n
    lb = lb_sum / n
    return SplitReport(
        loss_cls=cls,
        loss_lb=lb,
        loss_total=cls + lb_weight * lb,
        acc=accuracy(logits_cat, labels_cat),
        auc=macro_auc(_softmax_rows(logits_cat), labels_cat),
        expert_fracs={k: v / n for k, v in counts.items()},
        top1={k: np.concatenate(v) for k, v in top1.items()},
        sample_ids=sample_ids,
    )


# -- metrics CSV -------------------------------------------------------------


def _frac_keys(model: HybridMoeNet):
    keys = []
    for blk in model.hybrid_blocks():
        keys.append((blk.block_id, "DD"))
        keys.append((blk.block_id, "DE"))
    return keys


def metrics_header(model: HybridMoeNet) -> list[str]:
    cols = ["epoch", "split", "loss_cls", "loss_lb", "loss_total", "acc", "auc"]
    num_experts = model.config.num_experts
    for block_id, branch in _frac_keys(model):
        cols += [f"f_b{block_id}_{branch.lower()}_e{i}" for i in range(num_experts)]
    return cols


def _metrics_row(model, epoch, split, report: SplitReport) -> list[str]:
    row = [str(epoch), split] + [
        repr(float(v))
        for v in (report.loss_cls, report.loss_lb, report.loss_total,
                  report.acc, report.auc)
    ]
    for key in _frac_keys(model):
        row += [repr(float(v)) for v in report.expert_fracs[key]]
    return row


# -- training -----------------------------------------------------------------


@dataclass(frozen=True)
class TrainResult:
    metrics_path: str
    best_dir: str
    final_dir: str
    best_epoch: int
    best_auc: float
    final_train: SplitReport
    final_test: SplitReport


def train(config: TrainConfig, manifest_path, out_dir) -> TrainResult:
    """Train on one subject-wise fold; writes metrics.csv plus best/final
    checkpoints under out_dir and returns where everything landed."""
    config.validate()
    if not 0 <= config.fold < config.folds:
        raise ConfigError(f"fold {config.fold} outside [0, {config.folds})")
    os.makedirs(out_dir, exist_ok=True)

    manifests = load_manifest(manifest_path, config.model.num_classes)
    folds = subject_kfold(manifests, config.folds, config.seed)
    train_ids, test_ids = folds[config.fold]
    by_id = {m.sample_id: m for m in manifests}
    train_rows = [by_id[i] for i in train_ids]
    test_rows = [by_id[i] for i in test_ids]
    cache = _load_pixels(manifests)

    dtype = np.float64 if config.precision == "float64" else np.float32
    model = build_model(config.model, config.precision)
    config_text = config_to_text(config)

    metric_rows: list[list[str]] = []
    best_auc = -math.inf
    best_epoch = -1

    def log_epoch(epoch: int) -> tuple[SplitReport, SplitReport]:
        nonlocal best_auc, best_epoch
        train_rep = evaluate_split(model, train_rows, cache, config.batch_size,
                                   config.lb_weight, dtype)
        test_rep = evaluate_split(model, test_rows, cache, config.batch_size,
                                  config.lb_weight, dtype)
        metric_rows.append(_metrics_row(model, epoch, "train", train_rep))
        metric_rows.append(_metrics_row(model, epoch, "test", test_rep))
        if test_rep.auc > best_auc:
            best_auc = test_rep.auc
            best_epoch = epoch
            save_checkpoint(os.path.join(out_dir, BEST_DIR),
                            model.named_parameters(), config_text)
        return train_rep, test_rep

    train_rep, test_rep = log_epoch(0)

    opt = Adam(model.named_parameters(), lr=config.lr)
    batch_iter = uniform_class_iter(
        train_rows, config.batch_size,
        np.random.default_rng([config.seed, 1]), config.model.num_classes,
    )
    aug_rng = np.random.default_rng([config.seed, 2])
    steps_per_epoch = math.ceil(len(train_rows) / config.batch_size)
    aug_cfg = config.augment if config.augment.enabled else None

    for epoch in range(1, config.epochs + 1):
        opt.lr = step_lr(epoch - 1, config.lr, config.step_size, config.gamma)
        for step in range(steps_per_epoch):
            batch = next(batch_iter)
            images, heatmaps, labels = _assemble(batch, cache, dtype,
                                                 aug_cfg, aug_rng)
            _, _, total, breakdown = _forward_losses(
                model, images, heatmaps, labels, config.lb_weight
            )
            if not math.isfinite(breakdown.total):
                raise NumericsError(
                    f"non-finite loss {breakdown.total} at epoch {epoch}, "
                    f"step {step}"
                )
            opt.zero_grad()
            T.backward(total)
            opt.step()
        train_rep, test_rep = log_epoch(epoch)

    metrics_path = os.path.join(out_dir, METRICS_NAME)
    with open(metrics_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(metrics_header(model))
        writer.writerows(metric_rows)
    final_dir = os.path.join(out_dir, FINAL_DIR)
    save_checkpoint(final_dir, model.named_parameters(), config_text)
    return TrainResult(
        metrics_path=metrics_path,
        best_dir=os.path.join(out_dir, BEST_DIR),
        final_dir=final_dir,
        best_epoch=best_epoch,
        best_auc=best_auc,
        final_train=train_rep,
        final_test=test_rep,
    )


# -- evaluation entry points ----------------------------------------------------


def load_model(checkpoint_dir) -> tuple[HybridMoeNet, TrainConfig]:
    """Rebuild the model a checkpoint was saved from and load its weights."""
    arrays, config_text = load_checkpoint(checkpoint_dir)
    config = config_from_text(config_text, TrainConfig)
    config.validate()
    model = build_model(config.model, config.precision)
    load_into(model.named_parameters(), arrays)
    return model, config


@dataclass(frozen=True)
class EvalResult:
    report: SplitReport
    # (block_id, branch) -> routing purity; empty without a groups.csv
    purity: dict


def evaluate(checkpoint_dir, manifest_path, fold: int | None = None) -> EvalResult:
    """Metrics for a checkpoint on a manifest (optionally one fold's test
    split). Routing purity is added when a groups.csv sits next to the
    manifest."""
    model, config = load_model(checkpoint_dir)
    manifests = load_manifest(manifest_path, config.model.num_classes)
    if fold is not None:
        if not 0 <= fold < config.folds:
            raise ConfigError(f"fold {fold} outside [0, {config.folds})")
        _, test_ids = subject_kfold(manifests, config.folds, config.seed)[fold]
        by_id = {m.sample_id: m for m in manifests}
        rows = [by_id[i] for i in test_ids]
    else:
        rows = manifests
    cache = _load_pixels(rows)
    dtype = np.float64 if config.precision == "float64" else np.float32
    report = evaluate_split(model, rows, cache, config.batch_size,
                            config.lb_weight, dtype)

    purity: dict = {}
    groups_path = os.path.join(os.path.dirname(os.path.abspath(manifest_path)),
                               "groups.csv")
    if os.path.isfile(groups_path) and report.top1:
        groups = load_groups(groups_path)
        missing = [sid for sid in report.sample_ids if sid not in groups]
        if missing:
            raise ContractError(
                f"groups.csv lacks {len(missing)} evaluated samples, "
                f"first {missing[0]!r}"
            )
        group_labels = np.array([groups[sid] for sid in report.sample_ids])
        for key, top1 in report.top1.items():
            purity[key] = routing_purity(top1, group_labels,
                                         model.config.num_experts)
    return EvalResult(report=report, purity=purity)


def collect_routing(model: HybridMoeNet, rows, cache, batch_size, dtype
                    ) -> tuple[list[RoutingRecord], list[str]]:
    """Forward a whole manifest in chunks and stitch per-branch routing
    records back together so each covers every sample once."""
    if model.is_baseline:
        raise ContractError("baseline model has no routing to dump")
    parts: dict = {}
    sample_ids: list[str] = []
    with T.no_grad():
        for chunk in _chunks(rows, batch_size):
            images, heatmaps, labels = _assemble(chunk, cache, dtype)
            _, records = model(images, heatmaps)
            sample_ids += [m.sample_id for m in chunk]
            for rec in records:
                store = parts.setdefault(
                    (rec.block_id, rec.branch),
                    {"raw": [], "idx": [], "w": [], "gate": []},
                )
                store["raw"].append(rec.raw_scores.data)
                store["idx"].append(rec.indices)
                store["w"].append(rec.weights)
                store["gate"].append(rec.gate_p)
    stitched = [
        RoutingRecord(
            block_id=block_id,
            branch=branch,
            raw_scores=Tensor(np.concatenate(store["raw"])),
            indices=np.concatenate(store["idx"]),
            weights=np.concatenate(store["w"]),
            gate_p=np.concatenate(store["gate"]),
        )
        for (block_id, branch), store in parts.items()
    ]
    return stitched, sample_ids


def run_gradcheck(config: TrainConfig, batch_size: int = 2, image_size: int = 16,
                  max_coords_per_param: int = 3, tol: float = 1e-4
                  ) -> GradCheckReport:
    """Finite-difference check of the full training loss on a random batch.

    Always runs in float64 (central differences need the headroom) and
    probes a seeded subset of coordinates per parameter.
    """
    model = build_model(config.model, "float64")
    rng = np.random.default_rng(config.seed)
    images = Tensor(rng.uniform(
        0, 1, (batch_size, config.model.in_channels, image_size, image_size)
    ))
    heatmaps = Tensor(rng.uniform(0, 1, (batch_size, 1, image_size, image_size)))
    labels = rng.integers(0, config.model.num_classes, batch_size)

    def f():
        _, _, total, _ = _forward_losses(model, images, heatmaps, labels,
                                         config.lb_weight)
        return total

    return finite_diff_check(
        f, model.named_parameters(), eps=1e-5, tol=tol,
        max_coords_per_param=max_coords_per_param,
        rng=np.random.default_rng(config.seed + 1),
    )


def route_dump(checkpoint_dir, manifest_path, out_path) -> str:
    """Write per-sample routing scores for every hybrid branch to CSV."""
    model, config = load_model(checkpoint_dir)
    manifests = load_manifest(manifest_path, config.model.num_classes)
    cache = _load_pixels(manifests)
    dtype = np.float64 if config.precision == "float64" else np.float32
    records, sample_ids = collect_routing(model, manifests, cache,
                                          config.batch_size, dtype)
    write_routing_csv(out_path, records, sample_ids)
    return out_path
