from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
import scipy.fft
import scipy.signal
from numpy.lib.stride_tricks import sliding_window_view

from ssbshift.config import ESTIMATION_SAMPLE_RATE
from ssbshift.exceptions import SampleRateError, SegmentTooShortError

if TYPE_CHECKING:
    from ssbshift.config import RakeConfig

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AudioSegment:
    """A mono audio signal with samples scaled to ``[-1, 1]``."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self) -> None:
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"audio must be mono, got an array of shape {samples.shape}")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate

    def slice(self, start_s: float, end_s: float) -> AudioSegment:
        """Return the part of the segment between ``start_s`` and ``end_s`` seconds."""
        start = round(start_s * self.sample_rate)
        end = round(end_s * self.sample_rate)
        return AudioSegment(self.samples[start:end], self.sample_rate)


@dataclass(frozen=True)
class LogSpectrogram:
    """Floored log power spectrogram, ``values`` has shape ``(num_frames, num_bins)``."""

    values: np.ndarray
    frame_shift_s: float
    bin_hz: float
    fft_size: int

    @property
    def num_frames(self) -> int:
        return self.values.shape[0]

    @property
    def num_bins(self) -> int:
        return self.values.shape[1]


def num_frames(num_samples: int, fft_size: int, hop: int) -> int:
    """Number of complete analysis frames in a signal of ``num_samples`` samples."""
    if num_samples < fft_size:
        return 0
    return (num_samples - fft_size) // hop + 1


def frame_centers_s(count: int, cfg: RakeConfig) -> np.ndarray:
    """Center time in seconds of the first ``count`` analysis frames."""
    return (np.arange(count) * cfg.hop + cfg.fft_size / 2) / cfg.sample_rate


def stft_log_psd(seg: AudioSegment, cfg: RakeConfig, workers: int = 1) -> LogSpectrogram:
    """Compute the floored log power spectrogram ``log(max(|X|^2, epsilon_floor))`` of a segment.

    The frame length equals the FFT size and frames advance by ``cfg.hop`` samples. Trailing samples that
    do not fill a complete frame are not analysed. The power is the unscaled squared magnitude of the
    windowed one-sided DFT.

    Args:
        seg: The audio segment, sampled at 8 kHz.
        cfg: The configuration, providing FFT size, frame shift, window and floor.
        workers: Number of threads used by the FFT.

    Raises:
        SampleRateError: If the segment is not sampled at 8 kHz.
        SegmentTooShortError: If the segment is shorter than one analysis frame.
    """
    if seg.sample_rate != ESTIMATION_SAMPLE_RATE:
        raise SampleRateError(
            f"expected audio sampled at {ESTIMATION_SAMPLE_RATE} Hz, got {seg.sample_rate} Hz (resample first)"
        )

    count = num_frames(len(seg), cfg.fft_size, cfg.hop)
    if count == 0:
        raise SegmentTooShortError(
            f"segment of {len(seg)} samples is shorter than one {cfg.fft_size} sample analysis frame"
        )

    window = scipy.signal.get_window(cfg.window, cfg.fft_size)
    frames = sliding_window_view(seg.samples, cfg.fft_size)[:: cfg.hop][:count]

    spectrum = scipy.fft.rfft(frames * window, axis=-1, workers=workers)
    power = spectrum.real**2 + spectrum.imag**2
    values = np.log(np.maximum(power, cfg.epsilon_floor))

    log.debug("Spectrogram: %d frames x %d bins (%s window)", count, values.shape[1], cfg.window)
    return LogSpectrogram(values, cfg.hop / seg.sample_rate, cfg.bin_hz, cfg.fft_size)
