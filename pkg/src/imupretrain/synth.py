"""Synthetic labelled IMU windows with known periodic structure.

Each class has a period range; a window of class c is built from three
accelerometer carriers at 120-degree phase offsets whose common amplitude
envelope oscillates at the class period, plus gyroscope channels and white
noise.  The carrier rides on a low harmonic of the class period, mimicking
cyclic motion whose oscillation rate is locked to the gait period.  The
3-phase construction makes the accelerometer energy an exactly band-limited
function of the envelope, so the class period is the dominant energy period
by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .imu_io import SampleWindow


@dataclass
class SyntheticSpec:
    n_classes: int = 4
    windows_per_class: int = 100
    periods: tuple[tuple[int, int], ...] = ((20, 20), (30, 30), (40, 40), (60, 60))
    noise: float = 0.1
    seed: int = 0
    l_win: int = 120
    n_channels: int = 6

    def __post_init__(self):
        if self.n_classes < 1:
            raise ConfigError(f"n_classes must be >= 1, got {self.n_classes}")
        if self.windows_per_class < 1:
            raise ConfigError(
                f"windows_per_class must be >= 1, got {self.windows_per_class}"
            )
        if len(self.periods) != self.n_classes:
            raise ConfigError(
                f"need one period range per class: {self.n_classes} classes, "
                f"{len(self.periods)} ranges"
            )
        for cls, (lo, hi) in enumerate(self.periods):
            if not 4 <= lo <= hi <= self.l_win:
                raise ConfigError(
                    f"period range for class {cls} must lie within [4, {self.l_win}], "
                    f"got ({lo}, {hi})"
                )
        if self.noise < 0:
            raise ConfigError(f"noise must be >= 0, got {self.noise}")
        if self.n_channels < 3 or self.n_channels % 3 != 0:
            raise ConfigError(
                f"n_channels must be a positive multiple of 3, got {self.n_channels}"
            )


_ENVELOPE_DEPTH = 0.5
_CARRIER_HARMONICS = (3, 5)  # carrier = this harmonic of the class period


def generate(spec: SyntheticSpec) -> tuple[list[SampleWindow], list[int]]:
    """Build labelled windows; returns (windows, true period per window)."""
    windows: list[SampleWindow] = []
    true_periods: list[int] = []
    t = np.arange(spec.l_win)
    for cls in range(spec.n_classes):
        lo, hi = spec.periods[cls]
        for i in range(spec.windows_per_class):
            rng = np.random.default_rng((spec.seed, cls, i))
            period = int(rng.integers(lo, hi + 1))
            amp = rng.uniform(0.8, 1.2)
            env_phase = rng.uniform(0.0, 2.0 * math.pi)
            harmonic = int(rng.integers(_CARRIER_HARMONICS[0], _CARRIER_HARMONICS[1] + 1))
            carrier_phase = rng.uniform(0.0, 2.0 * math.pi)
            envelope = 1.0 + _ENVELOPE_DEPTH * np.sin(2.0 * math.pi * t / period + env_phase)

            values = np.zeros((spec.l_win, spec.n_channels))
            carrier_arg = 2.0 * math.pi * harmonic * t / period + carrier_phase
            for k in range(3):
                values[:, k] = amp * envelope * np.sin(carrier_arg + 2.0 * math.pi * k / 3.0)
            for k in range(3, spec.n_channels):
                gyro_phase = rng.uniform(0.0, 2.0 * math.pi)
                values[:, k] = 0.5 * amp * envelope * np.cos(carrier_arg + gyro_phase)
            if spec.noise > 0:
                values += rng.normal(0.0, spec.noise, values.shape)
            windows.append(SampleWindow(values=values, label=cls))
            true_periods.append(period)
    return windows, true_periods
