from __future__ import annotations

import dataclasses
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from ssbshift.exceptions import ConfigError

# The estimator only works on narrow-band HF audio
ESTIMATION_SAMPLE_RATE = 8000
FFT_SIZES = (2048, 4096, 8192)
MAX_SHIFT_HZ = 3500.0

# Defines the default thread count for the command line tool
SSBSHIFT_THREADS = int(os.getenv("SSBSHIFT_THREADS", "1"))

_PARSERS = {
    "int": int,
    "float": float,
    "str": str,
}


@dataclass(frozen=True)
class RakeConfig:
    """All free parameters of the carrier frequency difference search.

    Frequencies are in Hz, the comb width is in FFT bins. Bin ranges are derived from the Hz ranges by
    rounding inwards, so every hypothesis lies inside the configured range.
    """

    fft_size: int = 4096
    frame_shift_s: float = 0.02
    pitch_min_hz: float = 50.0
    pitch_max_hz: float = 400.0
    shift_min_hz: float = 0.0
    shift_max_hz: float = MAX_SHIFT_HZ
    tau_max: int = 5
    comb_width: int = 2
    variance_threshold_hz2: float = 25.0
    epsilon_floor: float = 1e-12
    window: str = "hann"
    max_peaks: int = 3
    min_peak_separation_hz: float = 50.0
    smoothing_noise_ratio: float = 0.01
    overlap_save_bins: int = 0
    direct_memory_bytes: int = 512 * 1024 * 1024
    block_memory_bytes: int = 64 * 1024 * 1024

    def __post_init__(self) -> None:
        if self.fft_size not in FFT_SIZES:
            raise ConfigError(f"fft_size must be one of {FFT_SIZES}, got {self.fft_size}")
        if self.frame_shift_s <= 0 or self.hop < 1:
            raise ConfigError(f"frame_shift_s too small: {self.frame_shift_s}")
        if not 0 < self.pitch_min_hz < self.pitch_max_hz:
            raise ConfigError(f"invalid pitch range {self.pitch_min_hz}..{self.pitch_max_hz} Hz")
        if self.shift_min_hz < 0 or self.shift_max_hz > MAX_SHIFT_HZ or self.shift_min_hz > self.shift_max_hz:
            raise ConfigError(f"invalid shift range {self.shift_min_hz}..{self.shift_max_hz} Hz")
        # The half weight of the pitch itself needs a first harmonic
        if self.tau_max < 2 or self.comb_width < 0:
            raise ConfigError(f"invalid comb shape tau_max={self.tau_max} comb_width={self.comb_width}")
        if self.epsilon_floor <= 0:
            raise ConfigError("epsilon_floor must be positive")
        if self.max_peaks < 1 or self.min_peak_separation_hz < 0:
            raise ConfigError("max_peaks must be >= 1 and min_peak_separation_hz >= 0")
        if self.smoothing_noise_ratio <= 0:
            raise ConfigError("smoothing_noise_ratio must be positive")
        if self.overlap_save_bins < 0:
            raise ConfigError("overlap_save_bins must be >= 0")
        if len(self.pitch_bins) == 0:
            raise ConfigError("pitch range does not contain a single FFT bin")
        if len(self.shift_bins) == 0:
            raise ConfigError("shift range does not contain a single FFT bin")

    @property
    def sample_rate(self) -> int:
        return ESTIMATION_SAMPLE_RATE

    @property
    def bin_hz(self) -> float:
        return self.sample_rate / self.fft_size

    @property
    def hop(self) -> int:
        return round(self.frame_shift_s * self.sample_rate)

    @property
    def num_bins(self) -> int:
        return self.fft_size // 2 + 1

    @property
    def log_floor(self) -> float:
        return math.log(self.epsilon_floor)

    @property
    def pitch_bins(self) -> np.ndarray:
        """Pitch hypotheses as FFT bin indices, ascending."""
        lo = math.ceil(self.pitch_min_hz / self.bin_hz)
        hi = math.floor(self.pitch_max_hz / self.bin_hz)
        return np.arange(max(lo, 1), hi + 1)

    @property
    def shift_bins(self) -> np.ndarray:
        """Carrier frequency difference hypotheses as FFT bin indices, ascending."""
        lo = math.ceil(self.shift_min_hz / self.bin_hz)
        hi = min(math.floor(self.shift_max_hz / self.bin_hz), self.num_bins - 1)
        return np.arange(lo, hi + 1)

    def replace(self, **changes: Any) -> RakeConfig:
        """Return a copy with the given fields replaced. ``None`` values are ignored."""
        return dataclasses.replace(self, **{k: v for k, v in changes.items() if v is not None})

    @classmethod
    def from_mapping(cls, values: dict[str, str], **overrides: Any) -> RakeConfig:
        """Build a config from string values, as found in a config file.

        Keyword overrides take precedence over ``values``, ``None`` overrides are ignored.
        """
        fields = {field.name: field for field in dataclasses.fields(cls)}
        kwargs = {}

        for key, raw in values.items():
            if key not in fields:
                raise ConfigError(f"unknown config key: {key!r}")

            parser = _PARSERS[fields[key].type]
            try:
                kwargs[key] = parser(raw)
            except ValueError:
                raise ConfigError(f"invalid value for {key}: {raw!r}")

        kwargs.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**kwargs)


def parse_config(text: str) -> dict[str, str]:
    """Parse flat ``key = value`` text. ``#`` starts a comment."""
    values = {}

    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue

        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        values[key.strip()] = value.strip()

    return values


def load_config(path: str | Path | None = None, **overrides: Any) -> RakeConfig:
    """Load a :class:`RakeConfig` from a config file, with keyword overrides applied on top.

    Args:
        path: Optional path to a flat ``key = value`` config file.
        overrides: Field values that take precedence over the file. ``None`` values are ignored.

    Raises:
        ConfigError: If the file contains unknown keys or invalid values.
    """
    values = {}
    if path is not None:
        try:
            values = parse_config(Path(path).read_text(encoding="utf-8"))
        except OSError as e:
            raise ConfigError(f"cannot read config file {path}: {e}")

    return RakeConfig.from_mapping(values, **overrides)
