"""Mini-batch training loop: AdamW with decoupled weight decay, global
gradient clipping, per-epoch validation at a flat 0.5 threshold, patience
early stopping, and best-epoch checkpoint selection.

Threshold tuning stays post-hoc; validating with tuned thresholds inside
the loop would leak the tuning data into model selection.
"""

from __future__ import annotations

import io
import time
from dataclasses import dataclass, field

import numpy as np

from . import nn_core
from .checkpoint import Checkpoint
from .feature_store import AU_NAMES, N_AUS, FeatureStore
from .fusion_model import (ModelConfig, ModelParams, collate, forward_batch,
                           backward, init_model, predict_binary)
from .losses import LossWeights
from .metrics import EvalReport, f1_per_au, macro_f1
from .postprocess import PredictionTrack, flat_thresholds


@dataclass
class TrainConfig:
    lr: float = 1e-5
    weight_decay: float = 1e-5
    clip_norm: float = 1.0
    batch_size: int = 256
    max_epochs: int = 20
    patience: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0 or self.clip_norm <= 0:
            raise ValueError("lr and clip_norm must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if self.batch_size < 1 or self.patience < 1 or self.max_epochs < 0:
            raise ValueError("batch_size and patience must be >= 1, max_epochs >= 0")
        if self.max_epochs > 0 and self.patience > self.max_epochs:
            raise ValueError("patience cannot exceed max_epochs")

    def to_dict(self) -> dict:
        return {"lr": self.lr, "weight_decay": self.weight_decay,
                "clip_norm": self.clip_norm, "batch_size": self.batch_size,
                "max_epochs": self.max_epochs, "patience": self.patience,
                "seed": self.seed}


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_macro_f1: float
    val_per_au_f1: np.ndarray
    wall_time_s: float


@dataclass
class TrainHistory:
    epochs: list[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.epochs)

    def to_csv(self) -> str:
        """One row per epoch. The wall-time column is the only field that
        varies between reruns of an identical configuration."""
        buf = io.StringIO()
        au_cols = ",".join(f"val_f1_{name}" for name in AU_NAMES)
        buf.write(f"epoch,train_loss,val_macro_f1,{au_cols},wall_time_s\n")
        for rec in self.epochs:
            aus = ",".join(f"{v:.6f}" for v in rec.val_per_au_f1)
            buf.write(f"{rec.epoch},{rec.train_loss:.6f},{rec.val_macro_f1:.6f},"
                      f"{aus},{rec.wall_time_s:.3f}\n")
        return buf.getvalue()


def _batches(n: int, batch_size: int, order: np.ndarray):
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def predict_tracks(params: ModelParams, store: FeatureStore, split: str,
                   batch_size: int = 256):
    """Per-video logits over every filtered frame of a split.

    Returns (tracks, labels) aligned list-wise for the post-processing
    stack.
    """
    tracks: list[PredictionTrack] = []
    labels: list[np.ndarray] = []
    for entry in store.manifest.videos:
        if entry.split != split:
            continue
        frames = store.valid_frames(entry.video_id)
        if frames.size == 0:
            continue
        logits = np.empty((frames.size, N_AUS))
        for start in range(0, frames.size, batch_size):
            chunk = frames[start : start + batch_size]
            samples = store.assemble_batch(
                [(entry.video_id, int(i)) for i in chunk])
            logits[start : start + chunk.size] = forward_batch(
                params, collate(samples)).logits
        tracks.append(PredictionTrack(video_id=entry.video_id,
                                      frame_indices=frames, logits=logits))
        labels.append(store.labels_for_frames(entry.video_id, frames))
    if not tracks:
        raise ValueError(f"split {split!r} holds no labeled frames")
    return tracks, labels


def _val_scores(params: ModelParams, store: FeatureStore, split: str,
                batch_size: int) -> tuple[np.ndarray, float]:
    tracks, labels = predict_tracks(params, store, split, batch_size)
    probs = np.concatenate([t.probabilities for t in tracks])
    truth = np.concatenate(labels)
    per_au = f1_per_au(predict_binary(probs, flat_thresholds()), truth)
    return per_au, macro_f1(per_au)


@dataclass
class EvaluateResult:
    report: EvalReport
    tracks: list[PredictionTrack]
    labels: list[np.ndarray]


def evaluate(params: ModelParams, store: FeatureStore, split: str,
             tau: np.ndarray | None = None,
             batch_size: int = 256) -> EvaluateResult:
    """Raw-model F1 on a split at the given thresholds (flat 0.5 default),
    plus the prediction tracks the post-processing stack consumes."""
    if tau is None:
        tau = flat_thresholds()
    tracks, labels = predict_tracks(params, store, split, batch_size)
    probs = np.concatenate([t.probabilities for t in tracks])
    truth = np.concatenate(labels)
    report = EvalReport()
    report.add("Base", f1_per_au(predict_binary(probs, tau), truth))
    return EvaluateResult(report=report, tracks=tracks, labels=labels)


def train(cfg: TrainConfig, model_cfg: ModelConfig, store: FeatureStore,
          weights: LossWeights | None = None,
          verbose: bool = True) -> tuple[Checkpoint, TrainHistory]:
    """Train and return the best-validation checkpoint plus the history.

    Each step runs backward, clips the global gradient norm, then applies
    one AdamW update. Validation macro F1 is computed after every epoch;
    training stops at max_epochs or after `patience` consecutive epochs
    without improvement. Ties keep the earlier epoch.
    """
    if weights is None:
        weights = LossWeights()
    train_pairs = store.samples_for_split("train")
    if not train_pairs:
        raise ValueError("train split holds no labeled frames")
    if not store.samples_for_split("val"):
        raise ValueError("val split holds no labeled frames")

    params = init_model(model_cfg)
    tensors = params.tensors()
    opt = nn_core.adamw_init(tensors, lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    history = TrainHistory()

    best_params = params.clone()
    best_opt_snapshot = (opt.step, {k: v.copy() for k, v in opt.m.items()},
                         {k: v.copy() for k, v in opt.v.items()})
    best_macro = -1.0
    best_epoch = 0
    bad_epochs = 0

    for epoch in range(1, cfg.max_epochs + 1):
        started = time.perf_counter()
        order = rng.permutation(len(train_pairs))
        loss_sum, seen = 0.0, 0
        for step, batch_idx in enumerate(_batches(len(train_pairs), cfg.batch_size, order)):
            samples = store.assemble_batch([train_pairs[i] for i in batch_idx])
            batch = collate(samples)
            loss, grads = backward(params, batch, weights)
            if not np.isfinite(loss):
                raise RuntimeError(
                    f"non-finite training loss {loss} at epoch {epoch} step {step}; "
                    f"lower the learning rate or inspect the input features")
            grads = nn_core.clip_global_norm(grads, cfg.clip_norm)
            nn_core.adamw_step(opt, tensors, grads)
            loss_sum += loss * len(batch)
            seen += len(batch)

        per_au, val_macro = _val_scores(params, store, "val", cfg.batch_size)
        history.epochs.append(EpochRecord(
            epoch=epoch, train_loss=loss_sum / seen, val_macro_f1=val_macro,
            val_per_au_f1=per_au, wall_time_s=time.perf_counter() - started))

        if val_macro > best_macro:
            best_macro = val_macro
            best_epoch = epoch
            best_params = params.clone()
            best_opt_snapshot = (opt.step, {k: v.copy() for k, v in opt.m.items()},
                                 {k: v.copy() for k, v in opt.v.items()})
            bad_epochs = 0
        else:
            bad_epochs += 1
        if verbose:
            print(f"epoch {epoch}/{cfg.max_epochs} "
                  f"train_loss={loss_sum / seen:.4f} val_macro_f1={val_macro:.4f} "
                  f"(best {best_macro:.4f} @ epoch {best_epoch})")
        if bad_epochs >= cfg.patience:
            if verbose:
                print(f"early stop after epoch {epoch}: no improvement for "
                      f"{cfg.patience} epochs")
            break

    step_count, m, v = best_opt_snapshot
    best_opt = nn_core.OptimizerState(lr=cfg.lr, beta1=opt.beta1, beta2=opt.beta2,
                                      eps=opt.eps, weight_decay=cfg.weight_decay,
                                      step=step_count, m=m, v=v)
    meta = {"best_epoch": best_epoch,
            "best_val_macro_f1": best_macro if best_epoch else None,
            "train_config": cfg.to_dict()}
    return Checkpoint(config=model_cfg, params=best_params,
                      optimizer=best_opt, meta=meta), history
