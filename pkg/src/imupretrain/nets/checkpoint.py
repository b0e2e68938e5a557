"""Parameter checkpoint persistence.

Checkpoint layout (little-endian):
    magic    4 bytes  b"PRMS"
    version  uint32   (currently 1)
    count    uint32   number of tensors
    per tensor:
        name_len  uint16, then name bytes (utf-8)
        ndim      uint8, then ndim * uint32 dims
        data      float32, C order

The matching model configuration is a key=value text sidecar written by
:func:`save_model` to "<checkpoint>.cfg".
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import ConfigError, ParseError
from .autodiff import Tensor
from .model import EncoderConfig, ModelParams

_MAGIC = b"PRMS"
_VERSION = 1


def save_params(path: str | Path, tensors: dict[str, Tensor]) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(tensors)))
        for name, tensor in tensors.items():
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            shape = tensor.data.shape
            fh.write(struct.pack("<B", len(shape)))
            for dim in shape:
                fh.write(struct.pack("<I", dim))
            fh.write(tensor.data.astype("<f4").tobytes(order="C"))


def load_params(path: str | Path) -> dict[str, Tensor]:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ParseError(f"{path} is not a parameter checkpoint")
        version, count = struct.unpack("<II", fh.read(8))
        if version != _VERSION:
            raise ParseError(f"unsupported checkpoint version {version}")
        tensors: dict[str, Tensor] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = tuple(struct.unpack("<I", fh.read(4))[0] for _ in range(ndim))
            n_bytes = int(np.prod(shape, dtype=np.int64)) * 4 if shape else 4
            raw = fh.read(n_bytes)
            if len(raw) != n_bytes:
                raise ParseError(f"{path} is truncated at tensor {name!r}")
            data = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)
            tensors[name] = Tensor(data, requires_grad=True, op=name)
    return tensors


def save_model(path: str | Path, model: ModelParams) -> None:
    save_params(path, model.tensors)
    cfg = model.config
    lines = [
        f"input_dim = {cfg.input_dim}",
        f"max_len = {cfg.max_len}",
        f"hidden_dim = {cfg.hidden_dim}",
        f"n_blocks = {cfg.n_blocks}",
        f"n_heads = {cfg.n_heads}",
        f"n_classes = {'none' if model.n_classes is None else model.n_classes}",
    ]
    Path(str(path) + ".cfg").write_text("\n".join(lines) + "\n")


def load_model(path: str | Path) -> ModelParams:
    cfg_path = Path(str(path) + ".cfg")
    if not cfg_path.exists():
        raise ConfigError(f"missing model config sidecar {cfg_path}")
    fields: dict[str, str] = {}
    for raw in cfg_path.read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, value = (part.strip() for part in line.split("=", 1))
        fields[key] = value
    try:
        config = EncoderConfig(
            input_dim=int(fields["input_dim"]),
            max_len=int(fields["max_len"]),
            hidden_dim=int(fields["hidden_dim"]),
            n_blocks=int(fields["n_blocks"]),
            n_heads=int(fields["n_heads"]),
        )
        n_classes = None if fields["n_classes"] == "none" else int(fields["n_classes"])
    except KeyError as exc:
        raise ConfigError(f"model config {cfg_path} is missing field {exc}")
    return ModelParams(config=config, tensors=load_params(path), n_classes=n_classes)
