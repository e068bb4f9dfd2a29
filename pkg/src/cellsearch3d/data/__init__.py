from .augment import AugmentConfig, augment
from .normalize import BrainCube, NormStats, compute_norm_stats, detect_brain_cube, normalize
from .synth import synth_phantom
from .volume import (
    VolumeCase, VolumeFormatError, load_directory, read_case, read_label, read_volume,
    write_case, write_volume,
)

__all__ = [
    "AugmentConfig", "augment", "BrainCube", "NormStats", "compute_norm_stats",
    "detect_brain_cube", "normalize", "synth_phantom", "VolumeCase", "VolumeFormatError",
    "load_directory", "read_case", "read_label", "read_volume", "write_case", "write_volume",
]
