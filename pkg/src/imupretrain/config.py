"""Experiment configuration: sectioned key=value files plus CLI overrides.

One INI-style file drives every command; ``--set section.key=value`` applies
point overrides.  The effective configuration is echoed verbatim into each
command's output directory for reproducibility.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .masking import MaskConfig
from .nets.losses import LossWeights
from .nets.model import EncoderConfig
from .synth import SyntheticSpec
from .trainer import TrainConfig
from .weight_search import SearchConfig

_DEFAULTS = {
    "data": {
        "csv": "",
        "schema": "",
        "out_dir": "runs/exp",
    },
    "preprocess": {
        "target_hz": "20",
        "window_len": "120",
        "ratios": "0.6, 0.2, 0.2",
        "split_seed": "1",
        "label_rate": "1.0",
        "label_seed": "1",
    },
    "masking": {
        "n_axes": "1",
        "p_geo": "0.2",
        "l_max": "12",
        "keypoint_window": "5",
        "keypoint_min_dist": "10",
    },
    "model": {
        "hidden_dim": "32",
        "n_blocks": "2",
        "n_heads": "4",
    },
    "pretrain": {
        "epochs": "20",
        "lr": "1e-3",
        "batch_size": "32",
        "seed": "0",
        "weights": "0.25, 0.25, 0.25, 0.25",
    },
    "finetune": {
        "epochs": "20",
        "lr": "1e-3",
        "batch_size": "32",
        "seed": "0",
        "best_metric": "accuracy",
    },
    "search": {
        "budget": "10",
        "n_initial": "5",
        "pool": "2000",
        "seed": "0",
    },
    "synth": {
        "n_classes": "4",
        "windows_per_class": "100",
        "periods": "20, 30, 40, 60",
        "noise": "0.1",
        "seed": "0",
        "window_len": "120",
        "n_channels": "6",
    },
}


@dataclass
class ExperimentConfig:
    parser: configparser.ConfigParser

    @classmethod
    def load(cls, path: str | Path | None, overrides: list[str] | None = None) -> "ExperimentConfig":
        parser = configparser.ConfigParser()
        parser.read_dict(_DEFAULTS)
        if path is not None:
            path = Path(path)
            if not path.exists():
                raise ConfigError(f"config file not found: {path}")
            parser.read(path)
        cfg = cls(parser=parser)
        for item in overrides or []:
            cfg._apply_override(item)
        return cfg

    def _apply_override(self, item: str) -> None:
        if "=" not in item:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        key, value = item.split("=", 1)
        if "." not in key:
            raise ConfigError(f"override key must be section.key, got {key!r}")
        section, option = key.split(".", 1)
        if not self.parser.has_section(section):
            raise ConfigError(f"unknown config section {section!r}")
        self.parser.set(section.strip(), option.strip(), value.strip())

    # -- typed accessors ----------------------------------------------------

    def _get(self, section: str, key: str, cast, description: str):
        try:
            raw = self.parser.get(section, key)
        except (configparser.NoSectionError, configparser.NoOptionError):
            raise ConfigError(f"missing config field {section}.{key}")
        try:
            return cast(raw)
        except (TypeError, ValueError):
            raise ConfigError(
                f"config field {section}.{key} must be {description}, got {raw!r}"
            )

    def _floats(self, section: str, key: str, count: int) -> tuple[float, ...]:
        raw = self.parser.get(section, key)
        parts = [p.strip() for p in raw.split(",") if p.strip()]
        if len(parts) != count:
            raise ConfigError(
                f"config field {section}.{key} needs {count} comma-separated values, got {raw!r}"
            )
        try:
            return tuple(float(p) for p in parts)
        except ValueError:
            raise ConfigError(f"config field {section}.{key} must be numeric, got {raw!r}")

    def out_dir(self) -> Path:
        return Path(self.parser.get("data", "out_dir"))

    def csv_path(self) -> Path:
        raw = self.parser.get("data", "csv")
        if not raw:
            raise ConfigError("missing config field data.csv")
        return Path(raw)

    def schema_path(self) -> Path:
        raw = self.parser.get("data", "schema")
        if not raw:
            raise ConfigError("missing config field data.schema")
        return Path(raw)

    def preprocess_params(self) -> dict:
        return {
            "target_hz": self._get("preprocess", "target_hz", float, "a number"),
            "window_len": self._get("preprocess", "window_len", int, "an integer"),
            "ratios": self._floats("preprocess", "ratios", 3),
            "split_seed": self._get("preprocess", "split_seed", int, "an integer"),
            "label_rate": self._get("preprocess", "label_rate", float, "a number"),
            "label_seed": self._get("preprocess", "label_seed", int, "an integer"),
        }

    def mask_config(self) -> MaskConfig:
        return MaskConfig(
            n_axes=self._get("masking", "n_axes", int, "an integer"),
            p_geo=self._get("masking", "p_geo", float, "a number"),
            l_max=self._get("masking", "l_max", int, "an integer"),
        )

    def keypoint_params(self) -> tuple[int, int]:
        return (
            self._get("masking", "keypoint_window", int, "an integer"),
            self._get("masking", "keypoint_min_dist", int, "an integer"),
        )

    def encoder_config(self, input_dim: int, max_len: int) -> EncoderConfig:
        return EncoderConfig(
            input_dim=input_dim,
            max_len=max_len,
            hidden_dim=self._get("model", "hidden_dim", int, "an integer"),
            n_blocks=self._get("model", "n_blocks", int, "an integer"),
            n_heads=self._get("model", "n_heads", int, "an integer"),
        )

    def pretrain_config(self) -> TrainConfig:
        return TrainConfig(
            lr=self._get("pretrain", "lr", float, "a number"),
            epochs_pretrain=self._get("pretrain", "epochs", int, "an integer"),
            batch_size=self._get("pretrain", "batch_size", int, "an integer"),
            seed=self._get("pretrain", "seed", int, "an integer"),
        )

    def loss_weights(self) -> LossWeights:
        w = self._floats("pretrain", "weights", 4)
        return LossWeights(*w)

    def finetune_config(self) -> TrainConfig:
        return TrainConfig(
            lr=self._get("finetune", "lr", float, "a number"),
            epochs_finetune=self._get("finetune", "epochs", int, "an integer"),
            batch_size=self._get("finetune", "batch_size", int, "an integer"),
            seed=self._get("finetune", "seed", int, "an integer"),
            best_metric=self.parser.get("finetune", "best_metric"),
        )

    def search_config(self) -> SearchConfig:
        return SearchConfig(
            budget=self._get("search", "budget", int, "an integer"),
            n_initial=self._get("search", "n_initial", int, "an integer"),
            candidate_pool_size=self._get("search", "pool", int, "an integer"),
            seed=self._get("search", "seed", int, "an integer"),
        )

    def synthetic_spec(self) -> SyntheticSpec:
        n_classes = self._get("synth", "n_classes", int, "an integer")
        raw_periods = self.parser.get("synth", "periods")
        ranges = []
        for part in (p.strip() for p in raw_periods.split(",") if p.strip()):
            if "-" in part:
                lo, hi = part.split("-", 1)
            else:
                lo = hi = part
            try:
                ranges.append((int(lo), int(hi)))
            except ValueError:
                raise ConfigError(
                    f"config field synth.periods must be integers or lo-hi ranges, got {part!r}"
                )
        return SyntheticSpec(
            n_classes=n_classes,
            windows_per_class=self._get("synth", "windows_per_class", int, "an integer"),
            periods=tuple(ranges),
            noise=self._get("synth", "noise", float, "a number"),
            seed=self._get("synth", "seed", int, "an integer"),
            l_win=self._get("synth", "window_len", int, "an integer"),
            n_channels=self._get("synth", "n_channels", int, "an integer"),
        )

    def echo(self, out_dir: Path) -> None:
        """Write the effective configuration into the output directory."""
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "config.ini", "w") as fh:
            self.parser.write(fh)
