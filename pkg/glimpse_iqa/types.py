"""Define enumerations shared across the package."""
from enum import Enum
import logging
from typing import Tuple

_LOGGER: logging.Logger = logging.getLogger(__name__)

MAX_LEVEL: int = 4
PRISTINE_MOS: float = 9.0


class Activation(Enum):
    """Elementwise nonlinearities understood by the numerical core."""

    RELU = "relu"
    HARDTANH = "hardtanh"

    @staticmethod
    def lookup(name_or_value):
        if isinstance(name_or_value, Activation):
            return name_or_value
        if isinstance(name_or_value, str) and name_or_value.upper() in Activation.__members__:
            return Activation[name_or_value.upper()]
        return Activation(name_or_value)


class DistortionKind(Enum):
    """
    Synthetic distortion families.

    Each member carries its severity parameter per level (1..4) and the offset
    subtracted from the level-derived opinion score.
    """

    @staticmethod
    def lookup(name_or_value):
        if isinstance(name_or_value, DistortionKind):
            return name_or_value
        if isinstance(name_or_value, str) and name_or_value.upper() in DistortionKind.__members__:
            return DistortionKind[name_or_value.upper()]
        return DistortionKind(name_or_value)

    def __new__(cls, value, severities=(), mos_offset=0.0):
        obj = object.__new__(cls)
        obj._value_ = value
        obj._severities_ = tuple(severities)
        obj._mos_offset_ = mos_offset
        return obj

    @property
    def class_index(self) -> int:
        """Return the label index of the kind."""
        return list(DistortionKind).index(self)

    def severity(self, level: int) -> float:
        """Return the severity parameter for a level in 1..4."""
        if not 1 <= level <= MAX_LEVEL:
            raise ValueError(f"Level {level} outside 1..{MAX_LEVEL}")
        return self._severities_[level - 1]

    def mos(self, level: int) -> float:
        """Return the opinion score assigned to a level; level 0 is pristine."""
        if level == 0:
            return PRISTINE_MOS
        self.severity(level)
        return PRISTINE_MOS - 2.0 * (level - 1) - self._mos_offset_

    # Noise standard deviation on the [0, 1] intensity scale
    ADDITIVE_GAUSSIAN = "additive_gaussian", (0.03, 0.06, 0.10, 0.16), 0.1
    # Amplitude of high-pass filtered noise
    HIGH_FREQUENCY_NOISE = "high_frequency_noise", (0.05, 0.10, 0.16, 0.24), 0.2
    # Intensity shift inside each corrupted block
    LOCAL_BLOCKWISE = "local_blockwise", (0.15, 0.25, 0.35, 0.45), 0.3
    # Gaussian blur sigma in pixels
    GAUSSIAN_BLUR = "gaussian_blur", (0.8, 1.5, 2.5, 4.0), 0.4


# TID2008 distortion types, 1-based in file names
TID2008_TYPES: Tuple[str, ...] = (
    "additive_gaussian_noise",
    "color_noise",
    "spatially_correlated_noise",
    "masked_noise",
    "high_frequency_noise",
    "impulse_noise",
    "quantization_noise",
    "gaussian_blur",
    "denoising",
    "jpeg_compression",
    "jpeg2000_compression",
    "jpeg_transmission_errors",
    "jpeg2000_transmission_errors",
    "non_eccentricity_pattern_noise",
    "local_blockwise_distortions",
    "mean_shift",
    "contrast_change",
)
TID2008_EXCLUDED_TYPES: Tuple[int, ...] = (16, 17)
TID2008_EXCLUDED_REFERENCES: Tuple[int, ...] = (25,)
