"""Training loop, evaluation wiring, and report/figure emission."""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import tensor as T
from .config import RunConfig
from .data import Dataset, frame_targets_from_semantic, load_dataset, max_workers
from .losses import LossWeights, total_loss
from .metrics import evaluate_clips
from .model import Model
from .optim import AdamW
from .query_decoder import upsample_masks
from .seeding import stream


class TrainingDiverged(RuntimeError):
    def __init__(self, iteration: int, components: dict):
        super().__init__(f"non-finite loss at iteration {iteration}: {components}")
        self.iteration = iteration
        self.components = components


def _targets_for(gt: np.ndarray):
    return [[frame_targets_from_semantic(gt[bi, ti])
             for ti in range(gt.shape[1])] for bi in range(gt.shape[0])]


def _frame_annotation_mask(cfg: RunConfig, batch: int) -> np.ndarray:
    mask = np.ones((batch, cfg.frames))
    if cfg.annotations == "first":
        mask[:, 1:] = 0.0
    return mask


def train(cfg: RunConfig, dataset: Dataset, out_dir,
          log_lines: list | None = None) -> Model:
    """Run the configured number of AdamW iterations and save a checkpoint."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model = Model(cfg)
    opt = AdamW(model.params, lr=cfg.learning_rate,
                weight_decay=cfg.weight_decay)
    weights = LossWeights(cfg.lambda_cls, cfg.lambda_mask, cfg.lambda_ada,
                          cfg.no_object_weight)
    batch_rng = stream(cfg.seed, "batches")
    frame_mask = _frame_annotation_mask(cfg, cfg.batch_size)
    log_path = out_dir / "training_log.jsonl"
    records = []
    with open(log_path, "w") as log:
        for it in range(cfg.iterations):
            if cfg.lr_schedule == "cosine":
                opt.lr = cfg.learning_rate * 0.5 * (
                    1.0 + np.cos(np.pi * it / cfg.iterations))
            idx = batch_rng.integers(0, len(dataset), size=cfg.batch_size)
            preds, _ = model.forward(dataset.frames[idx],
                                     dataset.maskiges[idx],
                                     dataset.audio[idx])
            targets = _targets_for(dataset.gt[idx])
            try:
                loss, parts = total_loss(
                    preds, targets, weights, frame_mask,
                    (cfg.height, cfg.width), cfg.consistency_layer,
                    cfg.consistency_source)
            except FloatingPointError as exc:
                raise TrainingDiverged(it, {"error": str(exc)}) from exc
            if not np.isfinite(parts["total"]):
                raise TrainingDiverged(it, parts)
            opt.zero_grad()
            T.backward(loss)
            opt.step()
            if it % cfg.log_every == 0 or it == cfg.iterations - 1:
                record = {"iter": it, **{k: round(v, 6) for k, v in parts.items()}}
                log.write(json.dumps(record, sort_keys=True) + "\n")
                records.append(record)
                if log_lines is not None:
                    log_lines.append(record)
    model.save_checkpoint(out_dir, extra={"iterations": cfg.iterations})
    try:
        from .plots import plot_training_curve
        plot_training_curve(records, out_dir / "loss_curve.png")
    except Exception:
        pass  # figures are best-effort; the log is the artifact of record
    return model


def predict_dataset(model: Model, dataset: Dataset) -> list[np.ndarray]:
    def run(i):
        return model.infer_clip(dataset.frames[i], dataset.maskiges[i],
                                dataset.audio[i])
    workers = max_workers()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(run, range(len(dataset))))
    return [run(i) for i in range(len(dataset))]


def evaluate(model: Model, dataset: Dataset, out_path=None,
             pred_dir=None) -> dict:
    """Run inference over a dataset and build the metric report."""
    preds = predict_dataset(model, dataset)
    report = evaluate_clips(preds, [dataset.gt[i] for i in range(len(dataset))])
    if pred_dir is not None:
        _export_predictions(pred_dir, preds, dataset, model.cfg.num_classes)
    if out_path is not None:
        out_path = Path(out_path)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
        _write_csv(out_path.with_suffix(".csv"), report, dataset.names)
        try:
            from .plots import plot_metric_report
            plot_metric_report(report, out_path.with_suffix(".png"))
        except Exception:
            pass
    return report


def _export_predictions(pred_dir, preds, dataset: Dataset, num_classes: int):
    from .imagefile import write_pgm
    pred_dir = Path(pred_dir)
    pred_dir.mkdir(parents=True, exist_ok=True)
    for name, pred in zip(dataset.names, preds):
        for ti in range(pred.shape[0]):
            scaled = np.floor(255.0 * pred[ti] / num_classes).astype(np.uint8)
            write_pgm(pred_dir / f"{name}_pred_{ti:02d}.pgm", scaled)


def _write_csv(path, report: dict, names: list[str]):
    lines = ["clip,miou,fscore"]
    for name, row in zip(names, report["per_clip"]):
        lines.append(f"{name},{row['miou']:.6f},{row['fscore']:.6f}")
    lines.append(f"ALL,{report['miou']:.6f},{report['fscore']:.6f}")
    Path(path).write_text("\n".join(lines) + "\n")


def loss_on_batch(model: Model, dataset: Dataset, idx, weights: LossWeights):
    """Forward + loss on explicit clip indices (helper for tests/gradcheck)."""
    cfg = model.cfg
    preds, _ = model.forward(dataset.frames[idx], dataset.maskiges[idx],
                             dataset.audio[idx])
    targets = _targets_for(dataset.gt[idx])
    frame_mask = _frame_annotation_mask(cfg, len(idx))
    return total_loss(preds, targets, weights, frame_mask,
                      (cfg.height, cfg.width), cfg.consistency_layer,
                      cfg.consistency_source)
