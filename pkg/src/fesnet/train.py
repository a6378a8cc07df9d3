"""Training and evaluation loops.

Training iterates epochs of augmented random crops with ADAM and a
per-epoch multiplicative learning-rate decay. Every random draw is rooted
in the config seed: model init, epoch ordering, and per-sample
augmentation streams, so a (seed, config, data) triple fully determines
the parameter trajectory in single-threaded mode.

Two log files are written (append-only, one record per line): the loss
log carries only deterministic fields and is byte-identical across
same-seed runs; wall-clock timings and validation metrics go to a
separate epoch log.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import save_checkpoint
from .data import (
    AugmentConfig,
    Sample,
    augment,
    prepare_sample,
    random_crop,
    sample_rng,
    write_png,
)
from .layers import cross_entropy_loss
from .metrics import (
    RocAccumulator,
    aggregate,
    compute_metrics,
    confusion_counts,
    render_overlay,
)
from .model import FesNet
from .optim import Adam

RNG_ALGORITHM = "numpy-pcg64"
MAX_CROP_RETRIES = 8


def init_rng(seed: int) -> np.random.Generator:
    """Model-initialization stream; per-epoch streams use longer seed tuples
    so the sequences never collide."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


class TrainingAborted(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr0: float = 2e-5
    lr_decay: float = 0.90
    epochs: int = 150
    batch_size: int = 4
    crop_size: int = 320
    seed: int = 0
    checkpoint_every: int = 10       # epochs; 0 = final checkpoint only
    eval_every: int = 0              # epochs between validation passes; 0 = never
    target_width: int = 640
    pad_multiple: int = 16
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        if self.lr0 <= 0 or not (0 < self.lr_decay <= 1):
            raise ValueError(f"learning rate schedule must stay positive, "
                             f"got lr0={self.lr0}, decay={self.lr_decay}")
        if self.epochs < 1 or self.batch_size < 1 or self.crop_size < 1:
            raise ValueError("epochs, batch_size, and crop_size must be >= 1")


def lr_schedule(config: TrainConfig, epoch: int) -> float:
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return config.lr0 * config.lr_decay ** epoch


@dataclass
class TrainLog:
    steps: list = field(default_factory=list)    # {"step", "epoch", "lr", "loss"}
    epochs: list = field(default_factory=list)   # {"epoch", "mean_loss", "seconds", "val"}

    def loss_lines(self) -> list[str]:
        lines = []
        for rec in self.steps:
            lines.append(json.dumps({"kind": "step", **rec}, sort_keys=True))
        for rec in self.epochs:
            lines.append(json.dumps(
                {"kind": "epoch", "epoch": rec["epoch"], "mean_loss": rec["mean_loss"]},
                sort_keys=True))
        return lines


def _make_batch(prepared: list[Sample], indices, config: TrainConfig, epoch: int):
    """Augment + crop each chosen sample; returns stacked arrays or None when
    every crop landed outside the evaluable region."""
    images, targets, weights = [], [], []
    for idx in indices:
        base = prepared[idx]
        rng = sample_rng(config.seed, epoch, base.id)
        crop = None
        for _ in range(MAX_CROP_RETRIES):
            candidate = random_crop(augment(base, config.augment, rng), config.crop_size, rng)
            if candidate.roi is None or candidate.roi.any():
                crop = candidate
                break
        if crop is None:
            continue
        images.append(crop.image)
        targets.append(crop.mask.astype(np.int64))
        weights.append(np.ones_like(crop.mask) if crop.roi is None else crop.roi)
    if not images:
        return None
    return np.stack(images), np.stack(targets), np.stack(weights)


def train(config: TrainConfig, model: FesNet, samples: list[Sample],
          out_dir: Path | None = None):
    """Run the training loop; returns ``(final_checkpoint_path, TrainLog)``.

    ``samples`` are raw loaded samples; train-split members are resized,
    normalized, and padded once up front. A non-finite loss aborts the run,
    leaving the last good checkpoint in place.
    """
    train_samples = [s for s in samples if s.split == "train"]
    if not train_samples:
        raise ValueError("dataset has no train-split samples")
    prepared = [prepare_sample(s, config.target_width, config.pad_multiple)
                for s in train_samples]

    optimizer = Adam(model.params())
    log = TrainLog()
    loss_f = epoch_f = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        loss_f = open(out_dir / "loss_log.txt", "a")
        epoch_f = open(out_dir / "epoch_log.txt", "a")

    def emit(handle, record):
        if handle is not None:
            handle.write(json.dumps(record, sort_keys=True) + "\n")
            handle.flush()

    last_checkpoint = None

    def write_checkpoint(tag: str, epoch: int):
        nonlocal last_checkpoint
        if out_dir is None:
            return None
        meta = {"seed": config.seed, "epoch": epoch, "rng_algorithm": RNG_ALGORITHM}
        last_checkpoint = save_checkpoint(model, out_dir / f"{tag}.fesnet", meta=meta)
        return last_checkpoint

    try:
        step = 0
        for epoch in range(config.epochs):
            t0 = time.perf_counter()
            lr = lr_schedule(config, epoch)
            order = np.random.Generator(
                np.random.PCG64(np.random.SeedSequence((config.seed, epoch)))
            ).permutation(len(prepared))
            epoch_losses = []
            for start in range(0, len(order), config.batch_size):
                batch = _make_batch(prepared, order[start:start + config.batch_size],
                                    config, epoch)
                if batch is None:
                    continue
                images, targets, weights = batch
                probs = model.forward(images, train=True)
                loss, dlogits = cross_entropy_loss(probs, targets, weights)
                if not math.isfinite(loss):
                    raise TrainingAborted(
                        f"non-finite loss {loss} at step {step}; last good checkpoint: "
                        f"{last_checkpoint}"
                    )
                model.backward(dlogits)
                try:
                    optimizer.step(lr)
                except ValueError as exc:
                    raise TrainingAborted(
                        f"{exc} at step {step}; last good checkpoint: {last_checkpoint}"
                    ) from exc
                rec = {"step": step, "epoch": epoch, "lr": lr, "loss": loss}
                log.steps.append(rec)
                emit(loss_f, {"kind": "step", **rec})
                epoch_losses.append(loss)
                step += 1

            mean_loss = float(np.mean(epoch_losses)) if epoch_losses else float("nan")
            val = None
            if config.eval_every and (epoch + 1) % config.eval_every == 0:
                test = [s for s in samples if s.split == "test"]
                if test:
                    val = evaluate(model.predict_probs, test, out_dir=None,
                                   target_width=config.target_width,
                                   pad_multiple=config.pad_multiple)[0].as_dict()
            erec = {"epoch": epoch, "mean_loss": mean_loss,
                    "seconds": time.perf_counter() - t0, "val": val}
            log.epochs.append(erec)
            emit(loss_f, {"kind": "epoch", "epoch": epoch, "mean_loss": mean_loss})
            emit(epoch_f, erec)

            if config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0:
                write_checkpoint(f"ckpt_e{epoch + 1:04d}", epoch + 1)
        final = write_checkpoint("model", config.epochs)
        return final, log
    finally:
        for handle in (loss_f, epoch_f):
            if handle is not None:
                handle.close()


def evaluate(predict_probs, samples: list[Sample], out_dir: Path | None = None,
             split: str | None = None, target_width: int = 640, pad_multiple: int = 16,
             aggregate_mode: str = "global", overlays: bool = True):
    """Full-image inference and metric computation.

    ``predict_probs`` maps a prepared (3,H,W) image to (2,H,W) class
    probabilities — a model method or any test double. Metrics are taken
    over the roi (field of view when provided, otherwise the unpadded
    region). Returns ``(MetricReport, per_image_rows)``; when ``out_dir``
    is given an overlay PNG is written per image.
    """
    chosen = samples if split is None else [s for s in samples if s.split == split]
    if not chosen:
        raise ValueError(f"no samples to evaluate (split={split!r})")

    rows = []
    counts = []
    roc = RocAccumulator()
    for sample in chosen:
        prepared = prepare_sample(sample, target_width, pad_multiple)
        probs = predict_probs(prepared.image)
        ch, cw = prepared.content_hw
        vessel = probs[1, :ch, :cw]
        pred = (probs.argmax(axis=0)[:ch, :cw]).astype(np.uint8)
        gt = prepared.mask[:ch, :cw]
        roi = prepared.roi[:ch, :cw]
        c = confusion_counts(pred, gt, roi)
        counts.append(c)
        image_roc = RocAccumulator()
        image_roc.add(vessel, gt, roi)
        roc.pos += image_roc.pos
        roc.neg += image_roc.neg
        report = compute_metrics(c)
        report.auc_roc = image_roc.auc()
        rows.append({"id": sample.id, "split": sample.split, **report.as_dict()})
        if out_dir is not None and overlays:
            write_png(render_overlay(pred, gt), Path(out_dir) / f"{sample.id}_overlay.png")

    total = aggregate(counts, mode=aggregate_mode)
    total.auc_roc = roc.auc()
    return total, rows
