"""Extract IMU window semantics: energy series, key points, dominant period.

The energy series is the per-timestep sum of squared accelerometer readings.
Key points are its filtered local extrema (peaks and valleys); they bound the
sub-period segments used by sub-period masking.  The dominant period comes
from the largest non-DC bin of the energy spectrum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import maximum_filter1d, minimum_filter1d

from .errors import MissingChannelError, NoPeriodError
from .imu_io import SampleWindow

#: window-dominance radius and minimum key-point separation at 20 Hz
DEFAULT_DOMINANCE_RADIUS = 5
DEFAULT_MIN_DISTANCE = 10


@dataclass(frozen=True)
class KeyPointSet:
    """Filtered peaks and valleys of an energy series.

    ``w`` is the dominance radius (a kept extremum must dominate every
    neighbour within w samples), ``d`` the minimum index distance between
    two kept peaks (and between two kept valleys).
    """

    peaks: tuple[int, ...]
    valleys: tuple[int, ...]
    w: int
    d: int

    @property
    def is_empty(self) -> bool:
        return not self.peaks and not self.valleys


@dataclass(frozen=True)
class MainPeriod:
    """Dominant period of an energy series, in samples."""

    t_main: float
    f_index: int


def energy_series(
    window: SampleWindow, accel_cols: tuple[int, ...] = (0, 1, 2)
) -> np.ndarray:
    """Per-row sum of squares over the accelerometer columns."""
    if len(accel_cols) == 0:
        raise MissingChannelError("no accelerometer channels identified")
    d = window.values.shape[1]
    for c in accel_cols:
        if not 0 <= c < d:
            raise MissingChannelError(
                f"accelerometer column {c} out of bounds for {d}-channel window"
            )
    acc = window.values[:, list(accel_cols)]
    return np.sum(acc * acc, axis=1)


def detect_key_points(
    e: np.ndarray,
    w: int = DEFAULT_DOMINANCE_RADIUS,
    d: int = DEFAULT_MIN_DISTANCE,
) -> KeyPointSet:
    """Three-stage key-point filter.

    1. Candidates: interior local maxima/minima under non-strict comparison.
    2. Window dominance: keep i only if e[i] dominates all e[j], |i-j| <= w
       (neighbourhoods truncated at the array bounds); among equal-valued
       survivors of one flat run, keep the smallest index.
    3. Minimum distance: scan in descending energy (ascending for valleys),
       greedily keeping candidates at least d from every kept one.
    """
    e = np.asarray(e, dtype=np.float64)
    peaks = _filter_extrema(e, w, d, kind="peak")
    valleys = _filter_extrema(e, w, d, kind="valley")
    return KeyPointSet(peaks=peaks, valleys=valleys, w=w, d=d)


def _filter_extrema(e: np.ndarray, w: int, d: int, kind: str) -> tuple[int, ...]:
    n = len(e)
    if n < 3:
        return ()
    interior = e[1:-1]
    if kind == "peak":
        local = (interior >= e[:-2]) & (interior >= e[2:])
        dominant = e >= maximum_filter1d(e, size=2 * w + 1, mode="constant", cval=-np.inf)
        rank = -e
    else:
        local = (interior <= e[:-2]) & (interior <= e[2:])
        dominant = e <= minimum_filter1d(e, size=2 * w + 1, mode="constant", cval=np.inf)
        rank = e
    candidates = np.flatnonzero(local) + 1
    candidates = candidates[dominant[candidates]]
    if candidates.size == 0:
        return ()

    # flat runs: maximal stretches of equal consecutive values; keep the
    # smallest surviving index of each run
    run_id = np.concatenate(([0], np.cumsum(e[1:] != e[:-1])))
    keep_first = np.concatenate(([True], run_id[candidates][1:] != run_id[candidates][:-1]))
    candidates = candidates[keep_first]

    order = candidates[np.lexsort((candidates, rank[candidates]))]
    kept: list[int] = []
    for i in order:
        if all(abs(int(i) - j) >= d for j in kept):
            kept.append(int(i))
    return tuple(sorted(kept))


def detect_main_period(e: np.ndarray) -> MainPeriod:
    """Dominant period via the discrete Fourier transform of the mean-removed series.

    The winning bin is the argmax of the magnitude over bins 1..L/2; the
    period is L divided by that bin index.  An effectively constant series
    (all magnitudes below 1e-12) has no period.
    """
    e = np.asarray(e, dtype=np.float64)
    n = len(e)
    if n < 4:
        raise NoPeriodError(f"series of length {n} is too short for period detection")
    spectrum = np.abs(np.fft.rfft(e - e.mean()))
    bins = spectrum[1 : n // 2 + 1]
    if np.all(bins < 1e-12):
        raise NoPeriodError("series has no periodic component (constant input)")
    f_index = int(np.argmax(bins)) + 1
    return MainPeriod(t_main=n / f_index, f_index=f_index)
