from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from ssbshift.exceptions import ConfigError

if TYPE_CHECKING:
    from ssbshift.config import RakeConfig


@dataclass(frozen=True)
class WeightTable:
    """Triangular harmonic weights ``w(h, nu)``.

    Row ``h - 1`` holds harmonic ``h``, column ``nu + width`` holds offset ``nu``. Harmonic 1 is the pitch
    itself and carries half the peak weight of harmonic 2; harmonics from 2 upwards decay as ``2 / h``.
    """

    weights: np.ndarray
    tau_max: int
    width: int

    def __getitem__(self, key: tuple[int, int]) -> float:
        harmonic, offset = key
        if not 1 <= harmonic <= self.tau_max or abs(offset) > self.width:
            raise KeyError(key)
        return float(self.weights[harmonic - 1, offset + self.width])

    @property
    def peaks(self) -> np.ndarray:
        """Weight at ``nu == 0`` per harmonic."""
        return self.weights[:, self.width]

    @property
    def total(self) -> float:
        return float(self.weights.sum())


@dataclass(frozen=True)
class HarmonicComb:
    """Sparse comb filter for one pitch hypothesis.

    ``taps`` is a sorted tuple of ``(offset, weight)`` pairs, offsets in bins relative to the shift hypothesis.
    Offsets reached by more than one ``(h, nu)`` pair carry the summed weight.
    """

    pitch_bin: int
    taps: tuple[tuple[int, float], ...]

    @property
    def offsets(self) -> np.ndarray:
        return np.array([offset for offset, _ in self.taps], dtype=np.int64)

    @property
    def weights(self) -> np.ndarray:
        return np.array([weight for _, weight in self.taps], dtype=np.float64)

    def kernel(self, origin: int, length: int) -> np.ndarray:
        """Dense filter with ``kernel[k]`` holding the weight at offset ``origin + k``."""
        kernel = np.zeros(length, dtype=np.float64)
        kernel[self.offsets - origin] = self.weights
        return kernel


def build_weight_table(cfg: RakeConfig) -> WeightTable:
    """Build the triangular weight table for ``cfg.tau_max`` harmonics and ``cfg.comb_width`` side bins.

    Raises:
        ConfigError: If ``tau_max < 2``, the half weight of the pitch needs a first harmonic.
    """
    tau_max, width = cfg.tau_max, cfg.comb_width
    if tau_max < 2:
        raise ConfigError(f"tau_max must be at least 2, got {tau_max}")
    if width < 0:
        raise ConfigError(f"comb_width must be non-negative, got {width}")

    harmonics = np.arange(1, tau_max + 1, dtype=np.float64)
    peaks = 2.0 / harmonics
    peaks[0] = 0.5

    offsets = np.arange(-width, width + 1)
    triangle = 1.0 - np.abs(offsets) / (width + 1)

    weights = np.outer(peaks, triangle)
    weights.setflags(write=False)
    return WeightTable(weights, tau_max, width)


def build_comb(pitch_bin: int, table: WeightTable, num_bins: int | None = None) -> HarmonicComb:
    """Build the comb ``h(f) = sum_h sum_nu w(h, nu) * delta(f - h * pitch_bin - nu)``.

    Taps beyond the last spectrum bin are kept, the caller decides how to read outside the spectrum.

    Args:
        pitch_bin: The pitch hypothesis in FFT bins.
        table: The weight table.
        num_bins: Number of bins in the spectrum, only used for validation.
    """
    if pitch_bin < 1:
        raise ValueError(f"pitch_bin must be positive, got {pitch_bin}")
    if num_bins is not None and pitch_bin >= num_bins:
        raise ValueError(f"pitch_bin {pitch_bin} outside a spectrum of {num_bins} bins")

    width = table.width
    harmonics = np.arange(1, table.tau_max + 1)[:, None]
    offsets = harmonics * pitch_bin + np.arange(-width, width + 1)[None, :]

    unique, inverse = np.unique(offsets.ravel(), return_inverse=True)
    summed = np.bincount(inverse.ravel(), weights=table.weights.ravel(), minlength=len(unique))

    return HarmonicComb(pitch_bin, tuple(zip(unique.tolist(), summed.tolist())))
