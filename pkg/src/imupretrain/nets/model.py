"""Sequence encoder with reconstruction and classification heads.

Encoder: input projection + learned positional table + post-norm transformer
blocks.  Reconstruction head is a linear map back to the channel space.
Classification runs a GRU over the encoder outputs, mean-pools the GRU states
over time and applies a linear map + softmax.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError
from ..imu_io import SampleWindow
from ..masking import MaskedWindow
from .autodiff import Tensor, affine2, layer_norm, linear


@dataclass
class EncoderConfig:
    input_dim: int
    max_len: int
    hidden_dim: int = 32
    n_blocks: int = 2
    n_heads: int = 4

    def __post_init__(self):
        if self.hidden_dim % self.n_heads != 0:
            raise ConfigError(
                f"hidden_dim={self.hidden_dim} not divisible by n_heads={self.n_heads}"
            )
        for name in ("input_dim", "max_len", "hidden_dim", "n_blocks", "n_heads"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")


@dataclass
class ModelParams:
    """Named parameter tensors plus the configuration they were shaped for."""

    config: EncoderConfig
    tensors: dict[str, Tensor]
    n_classes: int | None = None

    def clone(self) -> "ModelParams":
        copies = {
            name: Tensor(t.data.copy(), requires_grad=True, op=name)
            for name, t in self.tensors.items()
        }
        return ModelParams(config=self.config, tensors=copies, n_classes=self.n_classes)

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    @property
    def dtype(self) -> np.dtype:
        return next(iter(self.tensors.values())).data.dtype

    def astype(self, dtype) -> "ModelParams":
        """Cast all parameters in place; returns self."""
        for t in self.tensors.values():
            t.data = t.data.astype(dtype, copy=False)
        return self


_INIT_STD = 0.02


def init_params(
    config: EncoderConfig, seed: int, n_classes: int | None = None
) -> ModelParams:
    """Seeded parameter initialization; construction order fixes rng consumption."""
    rng = np.random.default_rng(seed)
    h, d = config.hidden_dim, config.input_dim
    tensors: dict[str, Tensor] = {}

    def weight(name, shape):
        tensors[name] = Tensor(
            rng.normal(0.0, _INIT_STD, shape), requires_grad=True, op=name
        )

    def zeros(name, shape):
        tensors[name] = Tensor(np.zeros(shape), requires_grad=True, op=name)

    def ones(name, shape):
        tensors[name] = Tensor(np.ones(shape), requires_grad=True, op=name)

    weight("embed.w", (d, h))
    zeros("embed.b", (h,))
    weight("pos", (config.max_len, h))
    for i in range(config.n_blocks):
        for part in ("wq", "wk", "wv", "wo"):
            weight(f"block{i}.attn.{part}", (h, h))
            zeros(f"block{i}.attn.b{part[1]}", (h,))
        ones(f"block{i}.ln1.g", (h,))
        zeros(f"block{i}.ln1.b", (h,))
        weight(f"block{i}.ff.w1", (h, 4 * h))
        zeros(f"block{i}.ff.b1", (4 * h,))
        weight(f"block{i}.ff.w2", (4 * h, h))
        zeros(f"block{i}.ff.b2", (h,))
        ones(f"block{i}.ln2.g", (h,))
        zeros(f"block{i}.ln2.b", (h,))
    weight("recon.w", (h, d))
    zeros("recon.b", (d,))
    if n_classes is not None:
        _init_classifier(tensors, rng, h, n_classes)
    return ModelParams(config=config, tensors=tensors, n_classes=n_classes)


def _init_classifier(tensors, rng, h, n_classes):
    # fan-in scaling: the head must train within few-label fine-tuning budgets
    std = 1.0 / math.sqrt(h)
    for gate in ("z", "h"):
        tensors[f"gru.w{gate}"] = Tensor(
            rng.normal(0.0, std, (h, h)), requires_grad=True, op=f"gru.w{gate}"
        )
        tensors[f"gru.b{gate}"] = Tensor(
            np.zeros(h), requires_grad=True, op=f"gru.b{gate}"
        )
    tensors["cls.w"] = Tensor(
        rng.normal(0.0, std, (h, n_classes)), requires_grad=True, op="cls.w"
    )
    tensors["cls.b"] = Tensor(np.zeros(n_classes), requires_grad=True, op="cls.b")


def attach_classifier(model: ModelParams, n_classes: int, seed: int) -> ModelParams:
    """Clone the model and (re)initialize a fresh classifier head."""
    if n_classes < 2:
        raise ConfigError(f"n_classes must be >= 2, got {n_classes}")
    out = model.clone()
    out.tensors = {
        k: v for k, v in out.tensors.items()
        if not (k.startswith("gru.") or k.startswith("cls."))
    }
    rng = np.random.default_rng(seed)
    _init_classifier(out.tensors, rng, model.config.hidden_dim, n_classes)
    out.n_classes = n_classes
    return out


def _check_input(model: ModelParams, values: np.ndarray) -> None:
    cfg = model.config
    if values.shape[-2:] != (cfg.max_len, cfg.input_dim):
        raise ConfigError(
            f"input shape {values.shape[-2:]} does not match "
            f"(max_len, input_dim) = {(cfg.max_len, cfg.input_dim)}"
        )


def encode(model: ModelParams, x: np.ndarray | Tensor) -> Tensor:
    """Encoder forward over a (B, L, D) batch; returns (B, L, H) states."""
    t = x if isinstance(x, Tensor) else Tensor(x)
    _check_input(model, t.data)
    p = model.tensors
    cfg = model.config
    if t.data.dtype != model.dtype and not t.requires_grad:
        t = Tensor(t.data.astype(model.dtype))
    h = linear(t, p["embed.w"], p["embed.b"])
    h = h + p["pos"]
    for i in range(cfg.n_blocks):
        h = _block(p, i, h, cfg)
    return h


def _block(p, i, h, cfg):
    bsz, length, hdim = h.data.shape
    nh = cfg.n_heads
    dh = hdim // nh

    def heads(t):
        return t.reshape(bsz, length, nh, dh).transpose((0, 2, 1, 3))

    # scale folded into q so the (L, L) score array is touched once
    q = heads(linear(h, p[f"block{i}.attn.wq"], p[f"block{i}.attn.bq"])) * (1.0 / math.sqrt(dh))
    k = heads(linear(h, p[f"block{i}.attn.wk"], p[f"block{i}.attn.bk"]))
    v = heads(linear(h, p[f"block{i}.attn.wv"], p[f"block{i}.attn.bv"]))
    scores = q @ k.transpose((0, 1, 3, 2))
    ctx = scores.softmax() @ v
    ctx = ctx.transpose((0, 2, 1, 3)).reshape(bsz, length, hdim)
    attn_out = linear(ctx, p[f"block{i}.attn.wo"], p[f"block{i}.attn.bo"])
    h = layer_norm(h + attn_out, p[f"block{i}.ln1.g"], p[f"block{i}.ln1.b"])
    ff = linear(h, p[f"block{i}.ff.w1"], p[f"block{i}.ff.b1"]).silu()
    ff = linear(ff, p[f"block{i}.ff.w2"], p[f"block{i}.ff.b2"])
    return layer_norm(h + ff, p[f"block{i}.ln2.g"], p[f"block{i}.ln2.b"])


def reconstruct_batch(model: ModelParams, x: np.ndarray | Tensor) -> Tensor:
    """(B, L, D) -> (B, L, D) reconstruction."""
    h = encode(model, x)
    return linear(h, model.tensors["recon.w"], model.tensors["recon.b"])


def classify_batch(model: ModelParams, x: np.ndarray | Tensor) -> Tensor:
    """(B, L, D) -> (B, n_classes) class probabilities.

    Head: mean over time of the encoder states feeds one gated recurrent
    cell step from a zero state (update gate times candidate state), then a
    linear map and softmax.
    """
    if model.n_classes is None:
        raise ConfigError("model has no classifier head; call attach_classifier first")
    h = encode(model, x)
    p = model.tensors
    length = h.data.shape[1]
    pooled = h.sum(axis=1) * (1.0 / length)
    gate = linear(pooled, p["gru.wz"], p["gru.bz"]).sigmoid()
    cand = linear(pooled, p["gru.wh"], p["gru.bh"]).tanh()
    logits = linear(gate * cand, p["cls.w"], p["cls.b"])
    return logits.softmax()


def forward_reconstruct(model: ModelParams, masked: MaskedWindow) -> np.ndarray:
    """Reconstruct one masked window; returns an (L, D) array."""
    out = reconstruct_batch(model, masked.values[None, :, :])
    return out.data[0]


def forward_classify(model: ModelParams, window: SampleWindow) -> np.ndarray:
    """Class probabilities for one window; returns an (n_classes,) vector."""
    out = classify_batch(model, window.values[None, :, :])
    return out.data[0]
