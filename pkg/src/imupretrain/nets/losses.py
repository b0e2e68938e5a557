"""Reconstruction and classification losses.

``masked_mse`` averages squared error over masked cells only; unmasked
positions are inputs, not targets.  ``weighted_loss`` mixes the four
per-level losses linearly.  Degenerate inputs (empty mask, clamped log)
increment :data:`WARNING_COUNTS` rather than raising.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from ..masking import MaskSpec
from .autodiff import Tensor

WARNING_COUNTS: Counter = Counter()

_LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class LossWeights:
    w_se: float
    w_po: float
    w_sp: float
    w_pe: float

    def __post_init__(self):
        vals = (self.w_se, self.w_po, self.w_sp, self.w_pe)
        if any(v < 0 for v in vals):
            raise ConfigError(f"loss weights must be nonnegative, got {vals}")
        if sum(vals) <= 0:
            raise ConfigError("loss weights must not all be zero")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.w_se, self.w_po, self.w_sp, self.w_pe)


def masked_mse(pred, original, spec) -> Tensor:
    """Mean squared error over masked cells.

    ``spec`` is a :class:`MaskSpec` or a boolean array (True = masked),
    broadcastable to the prediction shape.  An empty mask yields zero loss
    and bumps ``WARNING_COUNTS['empty_mask']``.
    """
    pred_t = pred if isinstance(pred, Tensor) else Tensor(pred)
    orig = original.data if isinstance(original, Tensor) else np.asarray(original)
    if pred_t.data.shape != orig.shape:
        raise ConfigError(
            f"prediction shape {pred_t.data.shape} != original shape {orig.shape}"
        )
    mask = spec.bool_mask() if isinstance(spec, MaskSpec) else np.asarray(spec, dtype=bool)
    n_cells = int(mask.sum())
    if n_cells == 0:
        WARNING_COUNTS["empty_mask"] += 1
        return Tensor(0.0)
    dtype = pred_t.data.dtype
    diff = (pred_t - Tensor(orig.astype(dtype, copy=False))) * Tensor(mask.astype(dtype))
    return diff.square().sum() * (1.0 / n_cells)


def weighted_loss(l_se, l_po, l_sp, l_pe, weights: LossWeights):
    """Linear mix of the four per-level losses; works on floats or tensors."""
    return (
        weights.w_se * l_se
        + weights.w_po * l_po
        + weights.w_sp * l_sp
        + weights.w_pe * l_pe
    )


def cross_entropy(probs, labels) -> Tensor:
    """Negative log likelihood of the true labels, averaged over the batch.

    Probabilities below 1e-12 are clamped (and counted) to keep the log finite.
    """
    probs_t = probs if isinstance(probs, Tensor) else Tensor(probs)
    if probs_t.data.ndim == 1:
        probs_t = probs_t.reshape(1, -1)
    labels = np.atleast_1d(np.asarray(labels, dtype=np.intp))
    n, c = probs_t.data.shape
    if labels.shape != (n,):
        raise ConfigError(f"labels shape {labels.shape} does not match batch size {n}")
    if labels.min() < 0 or labels.max() >= c:
        raise ConfigError(f"labels out of range for {c} classes")
    picked = probs_t.gather_labels(labels)
    clamped = int((picked.data < _LOG_FLOOR).sum())
    if clamped:
        WARNING_COUNTS["clamped_log"] += clamped
    return -(picked.clip_min(_LOG_FLOOR).log().mean())
