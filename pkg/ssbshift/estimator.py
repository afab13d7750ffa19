from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
import scipy.signal
from filterpy.common import Q_discrete_white_noise
from filterpy.kalman import KalmanFilter
from scipy.interpolate import CubicSpline

from ssbshift.comb import build_weight_table
from ssbshift.exceptions import ConfigError, EmptyInputError, LengthMismatchError
from ssbshift.rake import ENGINES
from ssbshift.spectral import stft_log_psd

if TYPE_CHECKING:
    from ssbshift.config import RakeConfig
    from ssbshift.rake import GammaSlice
    from ssbshift.spectral import AudioSegment

log = logging.getLogger(__name__)

GRID_STEP_HZ = 0.1
# Spline support around the best integer bin, and the distance a refined peak may move from it
REFINE_RADIUS_BINS = 2
REFINE_LIMIT_BINS = 1.5
# Scores closer than this count as tied
SCORE_TOLERANCE = 1e-9

_MEASUREMENT_NOISE = 1.0
_MAX_NOISE_INFLATION = math.log(1e6)


@dataclass(frozen=True)
class AccumulatedEnergy:
    """Comb response summed over time, one value per shift hypothesis."""

    gamma_hat: np.ndarray
    shift_bins: np.ndarray
    bin_hz: float
    winning_pitch: np.ndarray

    @property
    def shift_hz(self) -> np.ndarray:
        return self.shift_bins * self.bin_hz


@dataclass(frozen=True)
class Peak:
    f_d_hz: float
    score: float
    flat: bool = False


@dataclass(frozen=True)
class CfdEstimate:
    """Carrier frequency difference estimate of one segment.

    ``pitch_trace_hz`` is read at the winning integer shift bin. ``frame_energy`` is the mean log power per comb
    tap of the winning hypothesis in every frame.
    """

    f_d_hz: float
    peak_score: float
    shift_bin: int
    pitch_trace_hz: np.ndarray
    pitch_variance_hz2: float
    is_speech: bool
    secondary_peaks: tuple[Peak, ...]
    frame_energy: np.ndarray
    flat: bool = False


def accumulate(gamma: GammaSlice) -> AccumulatedEnergy:
    """Sum the pitch-maximised comb response over all frames."""
    if gamma.num_frames < 1:
        raise EmptyInputError("cannot accumulate an empty comb response")
    return AccumulatedEnergy(gamma.gamma_prime.sum(axis=0), gamma.shift_bins, gamma.bin_hz, gamma.winning_pitch)


class _SplinePeaks:
    """Natural cubic spline through the accumulated energy, with peak refinement around integer bins."""

    def __init__(self, acc: AccumulatedEnergy):
        if len(acc.gamma_hat) < 5:
            raise EmptyInputError(f"peak refinement needs at least 5 shift bins, got {len(acc.gamma_hat)}")

        self.acc = acc
        self.freqs = acc.shift_hz
        self.spline = CubicSpline(self.freqs, acc.gamma_hat, bc_type="natural")
        self._critical = None

    @property
    def critical(self) -> np.ndarray:
        if self._critical is None:
            self._critical = self.spline.derivative().roots(extrapolate=False)
        return self._critical

    @property
    def tolerance(self) -> float:
        return SCORE_TOLERANCE * max(1.0, float(np.max(np.abs(self.acc.gamma_hat))))

    @property
    def flat(self) -> bool:
        return float(np.ptp(self.acc.gamma_hat)) <= self.tolerance

    def refine(self, index: int) -> Peak:
        freqs = self.freqs
        bin_hz = self.acc.bin_hz
        center = freqs[index]

        lo = freqs[max(index - REFINE_RADIUS_BINS, 0)]
        hi = freqs[min(index + REFINE_RADIUS_BINS, len(freqs) - 1)]
        grid = np.linspace(lo, hi, max(1, math.ceil((hi - lo) / GRID_STEP_HZ)) + 1)
        values = np.where(np.abs(grid - center) <= REFINE_LIMIT_BINS * bin_hz, self.spline(grid), -np.inf)
        best = int(np.argmax(values))

        # The exact maximum lies in one of the grid cells next to the best grid point
        a = grid[max(best - 1, 0)]
        b = grid[min(best + 1, len(grid) - 1)]
        critical = self.critical
        inside = (critical >= a) & (critical <= b) & (np.abs(critical - center) <= REFINE_LIMIT_BINS * bin_hz)
        critical = critical[inside]

        candidates = np.concatenate((critical, [grid[best], center]))
        scores = self.spline(candidates)
        winner = int(np.argmax(scores))
        return Peak(float(candidates[winner]), float(scores[winner]))

    def lowest_maximum(self) -> Peak:
        values = self.acc.gamma_hat
        index = int(np.flatnonzero(values >= values.max() - self.tolerance)[0])
        return Peak(float(self.freqs[index]), float(self.acc.gamma_hat[index]), flat=True)


def refine_peak(acc: AccumulatedEnergy) -> Peak:
    """Locate the global maximum of the accumulated energy below bin resolution.

    A natural cubic spline is fitted through the accumulated energy over shift frequency. The spline is evaluated
    on a grid of at most 0.1 Hz around the best integer bin, and the best grid point is polished to the exact
    critical point of the spline. A flat curve yields the lowest frequency with ``flat`` set.
    """
    peaks = _SplinePeaks(acc)
    if peaks.flat:
        return peaks.lowest_maximum()
    return peaks.refine(int(np.argmax(acc.gamma_hat)))


def find_peaks(acc: AccumulatedEnergy, max_peaks: int, min_separation_hz: float) -> list[Peak]:
    """Find up to ``max_peaks`` refined local maxima, strongest first.

    Local maxima of the accumulated energy, including maxima at the range edges, are refined like
    :func:`refine_peak`. Peaks are then accepted greedily in order of descending score, skipping any peak within
    ``min_separation_hz`` of an accepted one. Equal scores order by frequency.
    """
    if max_peaks < 1:
        raise ValueError(f"max_peaks must be at least 1, got {max_peaks}")

    peaks = _SplinePeaks(acc)
    if peaks.flat:
        return [peaks.lowest_maximum()]

    padded = np.concatenate(([-np.inf], acc.gamma_hat, [-np.inf]))
    indices, _ = scipy.signal.find_peaks(padded)

    candidates = sorted(
        (peaks.refine(int(index) - 1) for index in indices),
        key=lambda peak: (-round(peak.score / SCORE_TOLERANCE), peak.f_d_hz),
    )

    selected = []
    for peak in candidates:
        if all(abs(peak.f_d_hz - other.f_d_hz) >= min_separation_hz for other in selected):
            selected.append(peak)
            if len(selected) == max_peaks:
                break

    return selected


def estimate_cfd(gamma: GammaSlice, cfg: RakeConfig) -> CfdEstimate:
    """Estimate the carrier frequency difference from the pitch-maximised comb response.

    Args:
        gamma: The comb response of a segment.
        cfg: The configuration, providing the speech variance threshold and peak search settings.

    Raises:
        EmptyInputError: If the comb response has no frames or too few shift bins.
    """
    if gamma.num_frames < 1 or gamma.gamma_prime.shape[1] < 1:
        raise EmptyInputError("cannot estimate from an empty comb response")

    acc = accumulate(gamma)
    primary = refine_peak(acc)
    best = int(np.argmax(acc.gamma_hat))

    pitch_trace = acc.winning_pitch[:, best] * acc.bin_hz
    variance = float(np.var(pitch_trace, ddof=1)) if len(pitch_trace) > 1 else 0.0

    peaks = find_peaks(acc, cfg.max_peaks, cfg.min_peak_separation_hz)
    secondary = tuple(peak for peak in peaks if not math.isclose(peak.f_d_hz, primary.f_d_hz, abs_tol=1e-6))

    estimate = CfdEstimate(
        f_d_hz=primary.f_d_hz,
        peak_score=primary.score,
        shift_bin=int(acc.shift_bins[best]),
        pitch_trace_hz=pitch_trace,
        pitch_variance_hz2=variance,
        is_speech=variance >= cfg.variance_threshold_hz2,
        secondary_peaks=secondary[: cfg.max_peaks - 1],
        frame_energy=gamma.gamma_prime[:, best] / build_weight_table(cfg).total,
        flat=primary.flat,
    )

    log.debug(
        "Estimate: %.2f Hz (score %.2f), pitch variance %.1f Hz^2, %d secondary peak(s)",
        estimate.f_d_hz,
        estimate.peak_score,
        estimate.pitch_variance_hz2,
        len(estimate.secondary_peaks),
    )
    return estimate


def estimate_segment(seg: AudioSegment, cfg: RakeConfig, engine: str = "pc", workers: int = 1) -> CfdEstimate:
    """Run the full pipeline on one audio segment: spectrogram, comb search and estimation.

    Args:
        seg: The audio segment, sampled at 8 kHz.
        cfg: The configuration.
        engine: ``"pc"`` for the transform-domain engine or ``"direct"`` for direct summation.
        workers: Number of threads.
    """
    if engine not in ENGINES:
        raise ConfigError(f"unknown engine {engine!r}, expected one of {sorted(ENGINES)}")

    spec = stft_log_psd(seg, cfg, workers=workers)
    return estimate_cfd(ENGINES[engine](spec, cfg, workers=workers), cfg)


def smooth_pitch_trace(
    trace: np.ndarray, voiced_energy: np.ndarray | None = None, noise_ratio: float = 0.01
) -> np.ndarray:
    """Smooth a pitch trace with a constant-velocity Kalman filter and a Rauch-Tung-Striebel pass.

    Args:
        trace: Pitch per frame in Hz.
        voiced_energy: Optional log energy per frame. Frames below the loudest frame get their measurement noise
                       inflated by ``exp(max - energy)``, so the smoother coasts through quiet frames.
        noise_ratio: Ratio of process noise to measurement noise.

    Returns:
        The smoothed trace, same length as ``trace``.
    """
    trace = np.asarray(trace, dtype=np.float64)
    if trace.ndim != 1 or len(trace) < 1:
        raise EmptyInputError("pitch trace must be a non-empty 1D sequence")

    kf = KalmanFilter(dim_x=2, dim_z=1)
    kf.x = np.array([trace[0], 0.0])
    kf.F = np.array([[1.0, 1.0], [0.0, 1.0]])
    kf.H = np.array([[1.0, 0.0]])
    kf.P *= 1000.0
    kf.R = np.array([[_MEASUREMENT_NOISE]])
    kf.Q = Q_discrete_white_noise(dim=2, dt=1.0, var=noise_ratio * _MEASUREMENT_NOISE)

    noise = None
    if voiced_energy is not None:
        energy = np.asarray(voiced_energy, dtype=np.float64)
        if energy.shape != trace.shape:
            raise LengthMismatchError(f"voiced energy has shape {energy.shape}, trace has shape {trace.shape}")
        noise = list(_MEASUREMENT_NOISE * np.exp(np.minimum(energy.max() - energy, _MAX_NOISE_INFLATION)))

    means, covariances, _, _ = kf.batch_filter(trace, Rs=noise)
    smoothed, _, _, _ = kf.rts_smoother(means, covariances)
    return smoothed[:, 0]
