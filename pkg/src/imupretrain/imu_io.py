"""Ingest raw IMU recordings: normalize, resample, window, split, subsample labels.

Input format is CSV (one sample per row) described by a small key=value schema
file that maps CSV columns to (sensor, axis) channels.  Windows are persisted
as a flat binary container (see :func:`write_windows` for the exact layout)
with a plain-text label sidecar.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ConfigError,
    EmptyInputError,
    InsufficientDataError,
    ParseError,
    UpsamplingError,
)

GRAVITY = 9.80665  # m/s^2, standard gravity used for accelerometer scaling

SENSOR_KINDS = ("accel", "gyro", "mag")

#: Counters for recoverable anomalies (e.g. zero-norm magnetometer samples).
WARNING_COUNTS: Counter = Counter()


@dataclass
class RawRecording:
    """One contiguous multichannel recording at a fixed sampling rate.

    ``samples`` is an (N, D) float array in native sensor units,
    ``channel_layout`` an ordered tuple of (sensor_kind, axis) pairs of
    length D.  Sensors are triaxial, so D = 3 * number of sensor kinds.
    """

    samples: np.ndarray
    rate_hz: float
    channel_layout: tuple[tuple[str, str], ...]
    label: int | None = None
    subject: str | None = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2:
            raise ConfigError("samples must be a 2-d array of shape (N, D)")
        if self.rate_hz <= 0:
            raise ConfigError(f"rate_hz must be positive, got {self.rate_hz}")
        d = self.samples.shape[1]
        if len(self.channel_layout) != d:
            raise ConfigError(
                f"channel_layout has {len(self.channel_layout)} entries "
                f"but samples have {d} columns"
            )
        kinds = Counter(kind for kind, _ in self.channel_layout)
        for kind, count in kinds.items():
            if kind not in SENSOR_KINDS:
                raise ConfigError(f"unknown sensor kind {kind!r}")
            if count != 3:
                raise ConfigError(f"sensor {kind!r} must have 3 axes, has {count}")

    @property
    def n_channels(self) -> int:
        return self.samples.shape[1]

    def columns_of(self, kind: str) -> list[int]:
        return [i for i, (k, _) in enumerate(self.channel_layout) if k == kind]


@dataclass
class SampleWindow:
    """A fixed-length slice of normalized IMU readings, the unit of training."""

    values: np.ndarray  # (L_win, D), dimensionless
    label: int | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ConfigError("window values must be 2-d (L_win, D)")
        if not np.all(np.isfinite(self.values)):
            raise ConfigError("window values must be finite")


@dataclass
class DatasetSplit:
    train: list[SampleWindow]
    valid: list[SampleWindow]
    test: list[SampleWindow]
    seed: int


@dataclass
class Schema:
    """Column mapping parsed from a key=value schema file."""

    rate_hz: float
    channels: list[tuple[str, str, str]]  # (csv column, sensor kind, axis)
    label_column: str | None = None
    subject_column: str | None = None
    session_column: str | None = None

    @property
    def layout(self) -> tuple[tuple[str, str], ...]:
        return tuple((kind, axis) for _, kind, axis in self.channels)


def load_schema(path: str | Path) -> Schema:
    """Parse a schema file.

    Recognized keys: ``rate_hz``, ``label_column``, ``subject_column``,
    ``session_column`` and one ``channel.<csv_column> = <sensor>.<axis>``
    line per data channel (order defines the channel layout).
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"schema file not found: {path}")
    rate_hz = None
    channels: list[tuple[str, str, str]] = []
    extras: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected key = value, got {raw!r}", line=lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if key == "rate_hz":
            try:
                rate_hz = float(value)
            except ValueError:
                raise ParseError(f"rate_hz is not a number: {value!r}", line=lineno)
        elif key.startswith("channel."):
            column = key[len("channel."):]
            if "." not in value:
                raise ParseError(
                    f"channel value must be <sensor>.<axis>, got {value!r}",
                    line=lineno,
                )
            kind, axis = value.split(".", 1)
            if kind not in SENSOR_KINDS:
                raise ParseError(f"unknown sensor kind {kind!r}", line=lineno)
            channels.append((column, kind, axis))
        elif key in ("label_column", "subject_column", "session_column"):
            extras[key] = value
        else:
            raise ParseError(f"unknown schema key {key!r}", line=lineno)
    if rate_hz is None:
        raise ConfigError(f"schema {path} does not define rate_hz")
    if not channels:
        raise ConfigError(f"schema {path} defines no channels")
    return Schema(rate_hz=rate_hz, channels=channels, **extras)


def load_recordings(path: str | Path, schema: Schema) -> list[RawRecording]:
    """Load a CSV dump into recordings, one per (subject, session) group.

    Within a group, rows are split into maximal contiguous runs of one label
    so each recording carries a single class id.  Sample order is preserved.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"input file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyInputError(f"{path} is empty")
        header = [h.strip() for h in header]
        col_index = {name: i for i, name in enumerate(header)}
        for column, _, _ in schema.channels:
            if column not in col_index:
                raise ConfigError(f"CSV is missing schema column {column!r}")
        data_cols = [col_index[column] for column, _, _ in schema.channels]
        label_col = _optional_column(schema.label_column, col_index, "label_column")
        subject_col = _optional_column(schema.subject_column, col_index, "subject_column")
        session_col = _optional_column(schema.session_column, col_index, "session_column")

        # group key -> list of (values, label); insertion order preserved
        groups: dict[tuple, list[tuple[list[float], int | None]]] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            values = []
            for col in data_cols:
                cell = row[col] if col < len(row) else ""
                try:
                    values.append(float(cell))
                except ValueError:
                    raise ParseError(
                        f"non-numeric cell {cell!r} in column {header[col]!r}",
                        line=lineno,
                    )
            label = None
            if label_col is not None:
                try:
                    label = int(row[label_col])
                except ValueError:
                    raise ParseError(
                        f"non-integer label {row[label_col]!r}", line=lineno
                    )
            subject = row[subject_col] if subject_col is not None else None
            session = row[session_col] if session_col is not None else None
            groups.setdefault((subject, session), []).append((values, label))

    if not groups:
        raise EmptyInputError(f"{path} contains no samples")

    recordings = []
    for (subject, _session), rows in groups.items():
        for run_rows, run_label in _label_runs(rows):
            recordings.append(
                RawRecording(
                    samples=np.array(run_rows, dtype=np.float64),
                    rate_hz=schema.rate_hz,
                    channel_layout=schema.layout,
                    label=run_label,
                    subject=subject,
                )
            )
    return recordings


def _optional_column(name, col_index, field_name):
    if name is None:
        return None
    if name not in col_index:
        raise ConfigError(f"CSV is missing {field_name} {name!r}")
    return col_index[name]


def _label_runs(rows):
    """Split (values, label) rows into contiguous runs of identical label."""
    runs = []
    current: list[list[float]] = []
    current_label = None
    for values, label in rows:
        if current and label != current_label:
            runs.append((current, current_label))
            current = []
        current.append(values)
        current_label = label
    if current:
        runs.append((current, current_label))
    return runs


def normalize(rec: RawRecording) -> RawRecording:
    """Scale channels to dimensionless units.

    Accelerometer channels are divided by standard gravity, magnetometer
    samples are scaled to unit Euclidean norm (zero-norm samples stay zero
    and bump ``WARNING_COUNTS['zero_norm_mag']``), gyroscope channels pass
    through unchanged.
    """
    out = rec.samples.copy()
    accel = rec.columns_of("accel")
    if accel:
        out[:, accel] /= GRAVITY
    mag = rec.columns_of("mag")
    if mag:
        norms = np.linalg.norm(out[:, mag], axis=1)
        zero = norms == 0.0
        if np.any(zero):
            WARNING_COUNTS["zero_norm_mag"] += int(zero.sum())
        safe = np.where(zero, 1.0, norms)
        out[:, mag] /= safe[:, None]
    return RawRecording(
        samples=out,
        rate_hz=rec.rate_hz,
        channel_layout=rec.channel_layout,
        label=rec.label,
        subject=rec.subject,
    )


def resample(rec: RawRecording, target_hz: float) -> RawRecording:
    """Reduce the sampling rate by decimation or nearest-time selection.

    Integer rate ratios keep every k-th sample; otherwise each target grid
    time t_j = j / target_hz takes the nearest source sample (ties take the
    earlier sample).
    """
    if target_hz <= 0:
        raise ConfigError(f"target_hz must be positive, got {target_hz}")
    if target_hz > rec.rate_hz:
        raise UpsamplingError(
            f"cannot resample {rec.rate_hz} Hz to {target_hz} Hz: upsampling unsupported"
        )
    n = rec.samples.shape[0]
    ratio = rec.rate_hz / target_hz
    if abs(ratio - round(ratio)) < 1e-9:
        out = rec.samples[:: int(round(ratio))].copy()
    else:
        m = int(math.floor(n * target_hz / rec.rate_hz))
        j = np.arange(m)
        idx = np.ceil(j * ratio - 0.5).astype(int)  # round-half-down: tie -> earlier
        idx = np.clip(idx, 0, n - 1)
        out = rec.samples[idx].copy()
    return RawRecording(
        samples=out,
        rate_hz=target_hz,
        channel_layout=rec.channel_layout,
        label=rec.label,
        subject=rec.subject,
    )


def slice_windows(rec: RawRecording, l_win: int) -> list[SampleWindow]:
    """Cut consecutive non-overlapping windows; the trailing remainder is dropped."""
    if l_win < 2:
        raise ConfigError(f"l_win must be >= 2, got {l_win}")
    n = rec.samples.shape[0]
    count = n // l_win
    return [
        SampleWindow(values=rec.samples[i * l_win : (i + 1) * l_win].copy(), label=rec.label)
        for i in range(count)
    ]


def split_dataset(
    windows: list[SampleWindow],
    ratios: tuple[float, float, float],
    seed: int,
) -> DatasetSplit:
    """Deterministic shuffle-then-cut split; remainder goes to the test set."""
    r_train, r_valid, r_test = ratios
    if min(r_train, r_valid, r_test) <= 0:
        raise ConfigError(f"split ratios must be positive, got {ratios}")
    if abs(r_train + r_valid + r_test - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must sum to 1, got {ratios}")
    n = len(windows)
    if n < 3:
        raise InsufficientDataError(f"need at least 3 windows to split, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(math.floor(n * r_train))
    n_valid = int(math.floor(n * r_valid))
    train = [windows[i] for i in perm[:n_train]]
    valid = [windows[i] for i in perm[n_train : n_train + n_valid]]
    test = [windows[i] for i in perm[n_train + n_valid :]]
    return DatasetSplit(train=train, valid=valid, test=test, seed=seed)


def subsample_labels(
    train: list[SampleWindow], rate: float, seed: int
) -> list[SampleWindow]:
    """Stratified draw of ceil(rate * n_c) windows per class, deterministic under seed.

    For a fixed seed the selection at a lower rate is a subset of the
    selection at any higher rate.
    """
    if not 0.0 < rate <= 1.0:
        raise ConfigError(f"labelling rate must be in (0, 1], got {rate}")
    for i, w in enumerate(train):
        if w.label is None:
            raise ConfigError(f"window {i} has no label; cannot subsample")
    by_class: dict[int, list[int]] = {}
    for i, w in enumerate(train):
        by_class.setdefault(w.label, []).append(i)
    rng = np.random.default_rng(seed)
    chosen: set[int] = set()
    for cls in sorted(by_class):
        idxs = by_class[cls]
        if not idxs:
            continue
        order = rng.permutation(len(idxs))
        take = math.ceil(rate * len(idxs))
        chosen.update(idxs[k] for k in order[:take])
    return [train[i] for i in range(len(train)) if i in chosen]


# ---------------------------------------------------------------------------
# Window container persistence
#
# Layout (little-endian):
#   magic    4 bytes  b"IMUW"
#   version  uint32   (currently 1)
#   l_win    uint32
#   d        uint32
#   count    uint32
#   payload  count * l_win * d float32, C order
# Labels live in a "<container>.labels" text sidecar, one integer per line,
# -1 meaning unlabelled.
# ---------------------------------------------------------------------------

_MAGIC = b"IMUW"
_CONTAINER_VERSION = 1


def write_windows(path: str | Path, windows: list[SampleWindow]) -> None:
    path = Path(path)
    if not windows:
        raise EmptyInputError("cannot write an empty window container")
    l_win, d = windows[0].values.shape
    for i, w in enumerate(windows):
        if w.values.shape != (l_win, d):
            raise ConfigError(
                f"window {i} has shape {w.values.shape}, expected {(l_win, d)}"
            )
    data = np.stack([w.values for w in windows]).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<III", _CONTAINER_VERSION, l_win, d))
        fh.write(struct.pack("<I", len(windows)))
        fh.write(data.tobytes(order="C"))
    labels = [(-1 if w.label is None else int(w.label)) for w in windows]
    Path(str(path) + ".labels").write_text("\n".join(str(x) for x in labels) + "\n")


def read_windows(path: str | Path) -> list[SampleWindow]:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise ParseError(f"{path} is not a window container (bad magic {magic!r})")
        version, l_win, d = struct.unpack("<III", fh.read(12))
        if version != _CONTAINER_VERSION:
            raise ParseError(f"unsupported container version {version}")
        (count,) = struct.unpack("<I", fh.read(4))
        raw = fh.read(count * l_win * d * 4)
        if len(raw) != count * l_win * d * 4:
            raise ParseError(f"{path} is truncated")
    data = np.frombuffer(raw, dtype="<f4").reshape(count, l_win, d).astype(np.float64)
    label_path = Path(str(path) + ".labels")
    labels: list[int | None]
    if label_path.exists():
        labels = [int(x) for x in label_path.read_text().split()]
        if len(labels) != count:
            raise ParseError(f"{label_path} has {len(labels)} labels, expected {count}")
        labels = [None if x < 0 else x for x in labels]
    else:
        labels = [None] * count
    return [SampleWindow(values=data[i], label=labels[i]) for i in range(count)]


def write_manifest(path: str | Path, manifest: dict) -> None:
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def read_manifest(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())
