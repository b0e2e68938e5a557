"""Self-supervised IMU pre-training with multi-granularity semantic masking.

Pipeline: ingest and window raw IMU recordings, extract per-window semantics
(key points, dominant period), mask windows at four granularities, pre-train
a small sequence encoder by weighted masked reconstruction, fine-tune a
classifier on few labels, and search the four task weights with a
Gaussian-process surrogate driven by expected improvement.
"""

__version__ = "0.1.0"

from . import imu_io, masking, nets, semantics, synth, trainer, weight_search

__all__ = [
    "imu_io",
    "semantics",
    "masking",
    "nets",
    "trainer",
    "weight_search",
    "synth",
    "__version__",
]
