"""Generate and apply the four mask granularities to a sample window.

Every mask zeroes a set of cells of the window and leaves the rest
bit-identical.  Sensor masks zero whole columns; point, sub-period and
period masks zero whole contiguous row ranges across all columns.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ConfigError
from .imu_io import SampleWindow
from .semantics import KeyPointSet, MainPeriod

LEVELS = ("sensor", "point", "subperiod", "period")


@dataclass
class MaskConfig:
    n_axes: int = 1          # sensor level: number of masked columns
    p_geo: float = 0.2       # point level: geometric success probability
    l_max: int = 12          # point level: span clip length
    fallback: str = "point"  # policy when semantics are undetectable

    def __post_init__(self):
        if self.n_axes < 0:
            raise ConfigError(f"n_axes must be >= 0, got {self.n_axes}")
        if not 0.0 < self.p_geo < 1.0:
            raise ConfigError(f"p_geo must be in (0, 1), got {self.p_geo}")
        if self.l_max < 1:
            raise ConfigError(f"l_max must be >= 1, got {self.l_max}")
        if self.fallback != "point":
            raise ConfigError(f"unsupported fallback policy {self.fallback!r}")


@dataclass(frozen=True)
class MaskSpec:
    """Cells zeroed by one masking task.

    Stored compactly: sensor-level masks as column indices, the other levels
    as a [row_start, row_stop) range over all columns.  ``cells`` materializes
    the explicit (row, col) set.
    """

    level: str
    shape: tuple[int, int]
    columns: tuple[int, ...] = ()
    row_start: int = 0
    row_stop: int = 0

    def __post_init__(self):
        if self.level not in LEVELS:
            raise ConfigError(f"unknown mask level {self.level!r}")
        l_win, d = self.shape
        if self.level == "sensor":
            if any(not 0 <= c < d for c in self.columns):
                raise ConfigError(f"mask columns {self.columns} out of bounds for D={d}")
        else:
            if not 0 <= self.row_start <= self.row_stop <= l_win:
                raise ConfigError(
                    f"mask rows [{self.row_start}, {self.row_stop}) out of bounds for L={l_win}"
                )

    @cached_property
    def cells(self) -> frozenset[tuple[int, int]]:
        l_win, d = self.shape
        if self.level == "sensor":
            return frozenset((r, c) for c in self.columns for r in range(l_win))
        return frozenset(
            (r, c) for r in range(self.row_start, self.row_stop) for c in range(d)
        )

    def bool_mask(self) -> np.ndarray:
        """Boolean (L_win, D) array, True at masked cells."""
        mask = np.zeros(self.shape, dtype=bool)
        if self.level == "sensor":
            mask[:, list(self.columns)] = True
        else:
            mask[self.row_start : self.row_stop, :] = True
        return mask

    @property
    def n_cells(self) -> int:
        l_win, d = self.shape
        if self.level == "sensor":
            return l_win * len(self.columns)
        return (self.row_stop - self.row_start) * d


@dataclass
class MaskedWindow:
    values: np.ndarray
    spec: MaskSpec
    original: SampleWindow


def apply_spec(window: SampleWindow, spec: MaskSpec) -> MaskedWindow:
    """Zero the spec's cells; every other cell stays bit-identical."""
    if spec.shape != window.values.shape:
        raise ConfigError(
            f"mask shape {spec.shape} does not match window {window.values.shape}"
        )
    values = window.values.copy()
    values[spec.bool_mask()] = 0.0
    return MaskedWindow(values=values, spec=spec, original=window)


def span_length_pmf(p: float, l_max: int) -> np.ndarray:
    """Geometric pmf (1-p)^(k-1) p renormalized over k in [1, l_max]."""
    k = np.arange(1, l_max + 1)
    pmf = (1.0 - p) ** (k - 1) * p
    return pmf / pmf.sum()


def sample_span_length(rng: np.random.Generator, p: float, l_max: int) -> int:
    """Inverse-CDF draw from the clipped, renormalized geometric distribution."""
    cdf = np.cumsum(span_length_pmf(p, l_max))
    return int(np.searchsorted(cdf, rng.random(), side="right")) + 1


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def mask_sensor(window: SampleWindow, cfg: MaskConfig, rng_seed) -> MaskedWindow:
    """Zero ``cfg.n_axes`` distinct columns drawn uniformly."""
    l_win, d = window.values.shape
    if cfg.n_axes > d:
        raise ConfigError(f"n_axes={cfg.n_axes} exceeds channel count D={d}")
    rng = _rng(rng_seed)
    cols = tuple(sorted(int(c) for c in rng.choice(d, size=cfg.n_axes, replace=False)))
    spec = MaskSpec(level="sensor", shape=(l_win, d), columns=cols)
    return apply_spec(window, spec)


def mask_point(window: SampleWindow, cfg: MaskConfig, rng_seed) -> MaskedWindow:
    """Zero a contiguous row span of geometric length starting at a uniform row."""
    l_win, d = window.values.shape
    rng = _rng(rng_seed)
    length = sample_span_length(rng, cfg.p_geo, cfg.l_max)
    start = int(rng.integers(l_win))
    spec = MaskSpec(
        level="point",
        shape=(l_win, d),
        row_start=start,
        row_stop=min(start + length, l_win),
    )
    return apply_spec(window, spec)


def mask_subperiod(
    window: SampleWindow, keypoints: KeyPointSet, rng_seed, cfg: MaskConfig
) -> MaskedWindow:
    """Zero one uniformly chosen segment of the key-point partition.

    Segment boundaries are {0} + peaks + valleys + {L_win}.  Windows without
    key points fall back to a point-level mask under the same seed.
    """
    if keypoints is None or keypoints.is_empty:
        return mask_point(window, cfg, rng_seed)
    l_win, d = window.values.shape
    boundaries = sorted({0, l_win, *keypoints.peaks, *keypoints.valleys})
    n_segments = len(boundaries) - 1
    rng = _rng(rng_seed)
    pick = int(rng.integers(n_segments))
    spec = MaskSpec(
        level="subperiod",
        shape=(l_win, d),
        row_start=boundaries[pick],
        row_stop=boundaries[pick + 1],
    )
    return apply_spec(window, spec)


def mask_period(
    window: SampleWindow, period: MainPeriod | None, rng_seed, cfg: MaskConfig
) -> MaskedWindow:
    """Zero one uniformly chosen period-length segment.

    The window is split into floor(L/T) segments of T = round(t_main) rows;
    the trailing remainder is attached to the last segment.  A missing period
    falls back to a point-level mask under the same seed.
    """
    if period is None:
        return mask_point(window, cfg, rng_seed)
    if period.t_main < 2:
        raise ConfigError(f"t_main must be >= 2, got {period.t_main}")
    l_win, d = window.values.shape
    t = int(np.floor(period.t_main + 0.5))
    n_segments = max(1, l_win // t)
    rng = _rng(rng_seed)
    pick = int(rng.integers(n_segments))
    row_start = pick * t
    row_stop = (pick + 1) * t if pick < n_segments - 1 else l_win
    spec = MaskSpec(
        level="period", shape=(l_win, d), row_start=row_start, row_stop=row_stop
    )
    return apply_spec(window, spec)
