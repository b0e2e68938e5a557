"""Training loops: masked-reconstruction pre-training, fine-tuning, evaluation.

Pre-training draws fresh masks at all requested levels for every window each
epoch, combines the per-level reconstruction losses with the task weights and
takes one optimizer step per batch.  Fine-tuning attaches a fresh classifier
head, trains everything with cross-entropy and keeps the best validation
epoch.  All loops are bit-reproducible given (data, config, seed).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DegenerateTaskError, TrainingDivergedError
from .imu_io import SampleWindow
from .masking import LEVELS, MaskConfig, mask_period, mask_point, mask_sensor, mask_subperiod
from .nets.autodiff import Tensor, backward
from .nets.losses import LossWeights, cross_entropy, masked_mse
from .nets.model import (
    EncoderConfig,
    ModelParams,
    attach_classifier,
    classify_batch,
    init_params,
    reconstruct_batch,
)
from .semantics import (
    DEFAULT_DOMINANCE_RADIUS,
    DEFAULT_MIN_DISTANCE,
    KeyPointSet,
    MainPeriod,
    NoPeriodError,
    detect_key_points,
    detect_main_period,
    energy_series,
)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    epochs_pretrain: int = 50
    epochs_finetune: int = 50
    batch_size: int = 32
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    fixed_masks: bool = False          # debug: reuse epoch-0 masks every epoch
    best_metric: str = "accuracy"      # validation criterion: accuracy | macro_f1
    dtype: str = "float32"             # training precision (float32 | float64)

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs_pretrain < 0 or self.epochs_finetune < 0:
            raise ConfigError("epoch counts must be >= 0")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")
        if self.best_metric not in ("accuracy", "macro_f1"):
            raise ConfigError(f"unknown best_metric {self.best_metric!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64


@dataclass
class Metrics:
    accuracy: float
    macro_f1: float
    per_class: list[tuple[float, float, float]]
    classes: list[int]

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "classes": self.classes,
            "per_class": [
                {"class": c, "precision": p, "recall": r, "f1": f}
                for c, (p, r, f) in zip(self.classes, self.per_class)
            ],
        }


@dataclass
class PretrainResult:
    model: ModelParams
    trace: list[dict]


@dataclass
class FinetuneResult:
    model: ModelParams
    metrics: Metrics
    best_epoch: int
    history: list[dict]


class Adam:
    """Adaptive-moment optimizer with bias correction."""

    def __init__(self, model: ModelParams, cfg: TrainConfig):
        self.model = model
        self.lr = cfg.lr
        self.beta1 = cfg.beta1
        self.beta2 = cfg.beta2
        self.eps = cfg.eps
        self.t = 0
        self.m = {k: np.zeros_like(v.data) for k, v in model.tensors.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in model.tensors.items()}

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, tensor in self.model.tensors.items():
            g = tensor.grad
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            tensor.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


@dataclass
class WindowSemantics:
    keypoints: KeyPointSet | None
    period: MainPeriod | None


def window_semantics(
    windows: list[SampleWindow],
    accel_cols: tuple[int, ...] = (0, 1, 2),
    w: int = DEFAULT_DOMINANCE_RADIUS,
    d: int = DEFAULT_MIN_DISTANCE,
) -> list[WindowSemantics]:
    """Precompute key points and main period once per window."""
    out = []
    for win in windows:
        e = energy_series(win, accel_cols)
        kp = detect_key_points(e, w, d)
        try:
            period = detect_main_period(e)
        except NoPeriodError:
            period = None
        out.append(WindowSemantics(keypoints=kp, period=period))
    return out


_LEVEL_INDEX = {level: i for i, level in enumerate(LEVELS)}


def draw_mask(
    window: SampleWindow,
    semantics: WindowSemantics,
    level: str,
    mask_cfg: MaskConfig,
    seed_parts: tuple[int, ...],
) -> np.ndarray:
    """Boolean mask for one window and level, deterministic in seed_parts."""
    rng = np.random.default_rng((*seed_parts, _LEVEL_INDEX[level]))
    if level == "sensor":
        masked = mask_sensor(window, mask_cfg, rng)
    elif level == "point":
        masked = mask_point(window, mask_cfg, rng)
    elif level == "subperiod":
        masked = mask_subperiod(window, semantics.keypoints, rng, mask_cfg)
    elif level == "period":
        masked = mask_period(window, semantics.period, rng, mask_cfg)
    else:
        raise ConfigError(f"unknown mask level {level!r}")
    return masked.spec.bool_mask()


def pretrain(
    unlabelled: list[SampleWindow],
    w: LossWeights,
    cfg: TrainConfig,
    encoder: EncoderConfig | None = None,
    mask_cfg: MaskConfig | None = None,
    accel_cols: tuple[int, ...] = (0, 1, 2),
    levels: tuple[str, ...] = LEVELS,
    model: ModelParams | None = None,
    log_path: str | Path | None = None,
) -> PretrainResult:
    """Masked-reconstruction pre-training; returns the model and per-epoch trace."""
    if not unlabelled:
        raise ConfigError("pretrain needs a nonempty dataset")
    for level in levels:
        if level not in LEVELS:
            raise ConfigError(f"unknown mask level {level!r}")
    mask_cfg = mask_cfg or MaskConfig()
    l_win, d = unlabelled[0].values.shape
    if encoder is None:
        encoder = EncoderConfig(input_dim=d, max_len=l_win)
    if model is None:
        model = init_params(encoder, seed=cfg.seed)
    model.astype(cfg.np_dtype)
    sems = window_semantics(unlabelled, accel_cols)
    values = np.stack([win.values for win in unlabelled]).astype(cfg.np_dtype)
    weights_by_level = dict(zip(LEVELS, w.as_tuple()))

    optimizer = Adam(model, cfg)
    trace: list[dict] = []
    log_fh = open(log_path, "w") if log_path is not None else None
    try:
        for epoch in range(cfg.epochs_pretrain):
            mask_epoch = 0 if cfg.fixed_masks else epoch
            order = np.random.default_rng((cfg.seed, epoch, 101)).permutation(len(unlabelled))
            sums = {level: 0.0 for level in levels}
            total_sum = 0.0
            n_batches = 0
            for start in range(0, len(order), cfg.batch_size):
                batch = order[start : start + cfg.batch_size]
                originals = values[batch]
                model.zero_grad()
                total = None
                batch_losses = {}
                for level in levels:
                    masks = np.stack(
                        [
                            draw_mask(
                                unlabelled[i],
                                sems[i],
                                level,
                                mask_cfg,
                                (cfg.seed, mask_epoch, int(i)),
                            )
                            for i in batch
                        ]
                    )
                    preds = reconstruct_batch(model, np.where(masks, 0.0, originals))
                    level_loss = masked_mse(preds, originals, masks)
                    batch_losses[level] = level_loss.item()
                    term = weights_by_level[level] * level_loss
                    total = term if total is None else total + term
                if not math.isfinite(total.item()):
                    raise TrainingDivergedError(
                        f"pre-training loss is non-finite at epoch {epoch}"
                    )
                backward(total)
                optimizer.step()
                for level in levels:
                    sums[level] += batch_losses[level]
                total_sum += total.item()
                n_batches += 1
            record = {"epoch": epoch, "total": total_sum / n_batches}
            for level in LEVELS:
                record[f"loss_{level}"] = (
                    sums[level] / n_batches if level in levels else None
                )
            trace.append(record)
            if log_fh is not None:
                log_fh.write(json.dumps(record, sort_keys=True) + "\n")
    finally:
        if log_fh is not None:
            log_fh.close()
    return PretrainResult(model=model, trace=trace)


def finetune(
    backbone: ModelParams,
    labelled: list[SampleWindow],
    valid: list[SampleWindow],
    cfg: TrainConfig,
    log_path: str | Path | None = None,
) -> FinetuneResult:
    """Supervised fine-tuning with a fresh classifier head; keeps the best epoch.

    Ties on the validation criterion go to the earlier epoch.
    """
    if not labelled:
        raise ConfigError("finetune needs a nonempty labelled set")
    labels = [win.label for win in labelled]
    if any(lbl is None for lbl in labels):
        raise ConfigError("every fine-tuning window must carry a label")
    classes = sorted(set(labels))
    if len(classes) < 2:
        raise DegenerateTaskError(
            f"fine-tuning needs >= 2 classes, got {classes}"
        )
    n_classes = max(classes) + 1
    if classes != list(range(n_classes)):
        raise ConfigError(f"labels must form a contiguous 0..C-1 set, got {classes}")

    model = attach_classifier(backbone, n_classes, seed=cfg.seed).astype(cfg.np_dtype)
    optimizer = Adam(model, cfg)
    values = np.stack([win.values for win in labelled]).astype(cfg.np_dtype)
    targets = np.array(labels, dtype=np.intp)

    best_model = model.clone()
    best_metrics = evaluate(model, valid)
    best_epoch = -1  # epoch -1 = untrained head
    best_score = getattr(best_metrics, cfg.best_metric)
    history: list[dict] = []
    log_fh = open(log_path, "w") if log_path is not None else None
    try:
        for epoch in range(cfg.epochs_finetune):
            order = np.random.default_rng((cfg.seed, epoch, 202)).permutation(len(labelled))
            loss_sum = 0.0
            n_batches = 0
            for start in range(0, len(order), cfg.batch_size):
                batch = order[start : start + cfg.batch_size]
                model.zero_grad()
                probs = classify_batch(model, values[batch])
                loss = cross_entropy(probs, targets[batch])
                if not math.isfinite(loss.item()):
                    raise TrainingDivergedError(
                        f"fine-tuning loss is non-finite at epoch {epoch}"
                    )
                backward(loss)
                optimizer.step()
                loss_sum += loss.item()
                n_batches += 1
            metrics = evaluate(model, valid)
            record = {
                "epoch": epoch,
                "train_loss": loss_sum / n_batches,
                "val_accuracy": metrics.accuracy,
                "val_macro_f1": metrics.macro_f1,
            }
            history.append(record)
            if log_fh is not None:
                log_fh.write(json.dumps(record, sort_keys=True) + "\n")
            score = getattr(metrics, cfg.best_metric)
            if score > best_score:
                best_score = score
                best_metrics = metrics
                best_epoch = epoch
                best_model = model.clone()
    finally:
        if log_fh is not None:
            log_fh.close()
    return FinetuneResult(
        model=best_model, metrics=best_metrics, best_epoch=best_epoch, history=history
    )


def predict(model: ModelParams, windows: list[SampleWindow], batch_size: int = 64) -> np.ndarray:
    """Argmax class prediction per window."""
    values = np.stack([win.values for win in windows]).astype(model.dtype)
    out = []
    for start in range(0, len(windows), batch_size):
        probs = classify_batch(model, values[start : start + batch_size])
        out.append(np.argmax(probs.data, axis=1))
    return np.concatenate(out)


def evaluate(model: ModelParams, test: list[SampleWindow]) -> Metrics:
    """Accuracy, per-class precision/recall/F1 and macro-F1 on a labelled set."""
    if not test:
        raise ConfigError("evaluate needs a nonempty test set")
    labels = [win.label for win in test]
    if any(lbl is None for lbl in labels):
        raise ConfigError("every evaluation window must carry a label")
    y_true = np.array(labels, dtype=np.intp)
    y_pred = predict(model, test)
    return compute_metrics(y_true, y_pred)


def compute_metrics(y_true: np.ndarray, y_pred: np.ndarray) -> Metrics:
    """Classification metrics; classes absent from the true labels are skipped.

    Precision and recall with empty denominators count as 0, as does the F1
    of a class with p = r = 0.
    """
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.shape != y_pred.shape:
        raise ConfigError("y_true and y_pred must have the same shape")
    accuracy = float(np.mean(y_true == y_pred))
    classes = sorted(int(c) for c in np.unique(y_true))
    per_class = []
    for cls in classes:
        tp = int(np.sum((y_pred == cls) & (y_true == cls)))
        fp = int(np.sum((y_pred == cls) & (y_true != cls)))
        fn = int(np.sum((y_pred != cls) & (y_true == cls)))
        precision = tp / (tp + fp) if tp + fp > 0 else 0.0
        recall = tp / (tp + fn) if tp + fn > 0 else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        per_class.append((precision, recall, f1))
    macro_f1 = float(np.mean([f for _, _, f in per_class])) if per_class else 0.0
    return Metrics(
        accuracy=accuracy, macro_f1=macro_f1, per_class=per_class, classes=classes
    )
