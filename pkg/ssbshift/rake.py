"""Harmonic comb search over pitch and carrier frequency difference hypotheses.

Two engines compute the same quantity. For every frame ``t``, pitch bin ``p`` and shift bin ``d``::

    gamma(t, p, d) = sum_h sum_nu w(h, nu) * L(t, d + h * p + nu)

where ``L`` is the log power spectrogram, read as ``log(epsilon_floor)`` outside the spectrum. The direct
engine sums the comb taps one by one. The fast engine treats the frequency axis as the time axis of a
correlation and multiplies in the transform domain, using overlap-save blocks along the shift axis.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
import scipy.fft
from numpy.lib.stride_tricks import sliding_window_view

from ssbshift.comb import HarmonicComb, WeightTable, build_comb, build_weight_table
from ssbshift.config import RakeConfig
from ssbshift.exceptions import ConfigError, MemoryBudgetError

if TYPE_CHECKING:
    from collections.abc import Callable

    from ssbshift.spectral import LogSpectrogram

log = logging.getLogger(__name__)

# Pitch hypotheses per transform bank of the fast engine
_BANK_PITCHES = 16
# Upper bound for the products of one frame chunk and bank, small enough to stay in cache
_WORKING_SET_BYTES = 4 * 1024 * 1024

__all__ = [
    "ENGINES",
    "GammaSlice",
    "GammaTensor",
    "RakeConfig",
    "gamma_direct",
    "gamma_direct_reduced",
    "gamma_pc",
    "reduce_max",
]


@dataclass(frozen=True)
class GammaTensor:
    """Full comb response, ``values`` has shape ``(frames, pitch bins, shift bins)``."""

    values: np.ndarray
    pitch_bins: np.ndarray
    shift_bins: np.ndarray
    bin_hz: float


@dataclass(frozen=True)
class GammaSlice:
    """Comb response maximised over pitch, both arrays have shape ``(frames, shift bins)``.

    ``winning_pitch`` holds the pitch bin attaining ``gamma_prime``.
    """

    gamma_prime: np.ndarray
    winning_pitch: np.ndarray
    shift_bins: np.ndarray
    bin_hz: float

    @property
    def num_frames(self) -> int:
        return self.gamma_prime.shape[0]


@dataclass(frozen=True)
class _Geometry:
    pitch_bins: np.ndarray
    shift_bins: np.ndarray
    combs: list[HarmonicComb]
    # Smallest tap offset over all combs, kernel index 0 maps to this offset
    origin: int
    kernel_length: int
    floor: float

    @property
    def start(self) -> int:
        """First spectrum bin read by any hypothesis."""
        return int(self.shift_bins[0]) + self.origin

    @property
    def span(self) -> int:
        """Number of spectrum bins read for all shift hypotheses."""
        return len(self.shift_bins) + self.kernel_length - 1


def _geometry(spec: LogSpectrogram, cfg: RakeConfig, table: WeightTable | None) -> _Geometry:
    if spec.fft_size != cfg.fft_size or spec.num_bins != cfg.num_bins:
        raise ConfigError(f"spectrogram with FFT size {spec.fft_size} does not match config FFT size {cfg.fft_size}")

    table = table or build_weight_table(cfg)
    pitch_bins = cfg.pitch_bins
    combs = [build_comb(int(p), table, spec.num_bins) for p in pitch_bins]

    origin = int(pitch_bins[0]) - table.width
    kernel_length = table.tau_max * int(pitch_bins[-1]) + table.width - origin + 1
    return _Geometry(pitch_bins, cfg.shift_bins, combs, origin, kernel_length, cfg.log_floor)


def _extend(values: np.ndarray, start: int, length: int, floor: float) -> np.ndarray:
    """Read ``length`` bins starting at ``start`` from every frame, with ``floor`` outside the spectrum."""
    out = np.full((values.shape[0], length), floor, dtype=np.float64)

    lo = max(start, 0)
    hi = min(start + length, values.shape[1])
    if lo < hi:
        out[:, lo - start : hi - start] = values[:, lo:hi]
    return out


def _direct_block(extended: np.ndarray, geometry: _Geometry) -> np.ndarray:
    num_shifts = len(geometry.shift_bins)
    out = np.zeros((extended.shape[0], len(geometry.combs), num_shifts), dtype=np.float64)

    for i, comb in enumerate(geometry.combs):
        acc = out[:, i, :]
        for offset, weight in comb.taps:
            k = offset - geometry.origin
            acc += weight * extended[:, k : k + num_shifts]

    return out


def gamma_direct(spec: LogSpectrogram, cfg: RakeConfig, table: WeightTable | None = None) -> GammaTensor:
    """Evaluate the comb response for every frame, pitch and shift hypothesis by direct summation.

    Args:
        spec: The log power spectrogram.
        cfg: The configuration, must use the same FFT size as ``spec``.
        table: Optional precomputed weight table.

    Raises:
        MemoryBudgetError: If the full tensor exceeds ``cfg.direct_memory_bytes``.
    """
    geometry = _geometry(spec, cfg, table)

    nbytes = spec.num_frames * len(geometry.pitch_bins) * len(geometry.shift_bins) * 8
    if nbytes > cfg.direct_memory_bytes:
        raise MemoryBudgetError(
            f"full comb response needs {nbytes} bytes, budget is {cfg.direct_memory_bytes} bytes; "
            "use gamma_pc() or gamma_direct_reduced() instead"
        )

    extended = _extend(spec.values, geometry.start, geometry.span, geometry.floor)
    values = _direct_block(extended, geometry)
    return GammaTensor(values, geometry.pitch_bins, geometry.shift_bins, spec.bin_hz)


def reduce_max(tensor: GammaTensor) -> GammaSlice:
    """Maximise the comb response over pitch. Ties resolve to the lowest pitch bin."""
    index = np.argmax(tensor.values, axis=1)
    gamma_prime = np.take_along_axis(tensor.values, index[:, None, :], axis=1)[:, 0, :]
    return GammaSlice(gamma_prime, tensor.pitch_bins[index], tensor.shift_bins, tensor.bin_hz)


def _empty_slice(spec: LogSpectrogram, geometry: _Geometry) -> GammaSlice:
    shape = (spec.num_frames, len(geometry.shift_bins))
    return GammaSlice(
        np.empty(shape, dtype=np.float64),
        np.empty(shape, dtype=geometry.pitch_bins.dtype),
        geometry.shift_bins,
        spec.bin_hz,
    )


def _run_blocks(work: Callable[[int], None], starts: list[int], workers: int) -> None:
    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(work, starts))
    else:
        for start in starts:
            work(start)


def gamma_direct_reduced(
    spec: LogSpectrogram, cfg: RakeConfig, table: WeightTable | None = None, workers: int = 1
) -> GammaSlice:
    """Direct summation followed by :func:`reduce_max`, evaluated in frame blocks within the memory budget."""
    geometry = _geometry(spec, cfg, table)
    result = _empty_slice(spec, geometry)

    frame_bytes = len(geometry.pitch_bins) * len(geometry.shift_bins) * 8
    frames_per_block = max(1, min(cfg.direct_memory_bytes, cfg.block_memory_bytes) // frame_bytes)

    def work(start: int) -> None:
        stop = min(start + frames_per_block, spec.num_frames)
        extended = _extend(spec.values[start:stop], geometry.start, geometry.span, geometry.floor)
        tensor = GammaTensor(_direct_block(extended, geometry), geometry.pitch_bins, geometry.shift_bins, spec.bin_hz)
        reduced = reduce_max(tensor)
        result.gamma_prime[start:stop] = reduced.gamma_prime
        result.winning_pitch[start:stop] = reduced.winning_pitch

    _run_blocks(work, list(range(0, spec.num_frames, frames_per_block)), workers)
    return result


@dataclass(frozen=True)
class _CombBank:
    """Transformed combs of adjacent pitch hypotheses sharing one FFT length."""

    pitch_bins: np.ndarray
    # Offset of the first spectrum bin read, relative to the first shift hypothesis
    origin: int
    kernel_length: int
    nfft: int
    spectra: np.ndarray


def _comb_banks(geometry: _Geometry, block: int) -> list[_CombBank]:
    banks = []
    for lo in range(0, len(geometry.combs), _BANK_PITCHES):
        combs = geometry.combs[lo : lo + _BANK_PITCHES]
        # Taps are sorted and both ends grow with the pitch
        origin = combs[0].taps[0][0]
        kernel_length = combs[-1].taps[-1][0] - origin + 1
        nfft = scipy.fft.next_fast_len(block + kernel_length - 1, real=True)

        kernels = np.stack([comb.kernel(origin, kernel_length) for comb in combs])
        spectra = np.conj(scipy.fft.rfft(kernels, n=nfft, axis=-1))
        banks.append(_CombBank(geometry.pitch_bins[lo : lo + len(combs)], origin, kernel_length, nfft, spectra))
    return banks


def gamma_pc(
    spec: LogSpectrogram, cfg: RakeConfig, table: WeightTable | None = None, workers: int = 1
) -> GammaSlice:
    """Compute the pitch-maximised comb response by correlation in the power cepstral domain.

    Pitch hypotheses are grouped into banks of adjacent pitches. Every frame of the log power spectrum is
    transformed once per bank and overlap-save block, multiplied with the conjugate transform of every comb in
    the bank and transformed back. Each block covers ``B`` shift bins and reads ``B + K - 1`` spectrum bins, with
    ``K`` the kernel length of the bank, so the circular correlation of the transform equals the linear one on
    the bins that are kept. The maximum over pitch is kept as a running maximum across banks.

    Args:
        spec: The log power spectrogram.
        cfg: The configuration, ``cfg.overlap_save_bins`` sets ``B`` (0 for a single block).
        table: Optional precomputed weight table.
        workers: Number of threads, frames are partitioned across threads.
    """
    geometry = _geometry(spec, cfg, table)
    result = _empty_slice(spec, geometry)

    num_shifts = len(geometry.shift_bins)
    block = min(cfg.overlap_save_bins or num_shifts, num_shifts)
    num_blocks = math.ceil(num_shifts / block)
    banks = _comb_banks(geometry, block)

    frame_bytes = num_blocks * _BANK_PITCHES * max(bank.nfft for bank in banks) * 24
    frames_per_chunk = max(1, min(cfg.block_memory_bytes, _WORKING_SET_BYTES) // frame_bytes)
    if workers > 1:
        frames_per_chunk = min(frames_per_chunk, math.ceil(spec.num_frames / workers))

    log.debug(
        "Fast engine: %d frames, %d pitch bins in %d bank(s), %d shift bins, %d block(s) of %d bins, FFT length %d-%d",
        spec.num_frames,
        len(geometry.pitch_bins),
        len(banks),
        num_shifts,
        num_blocks,
        block,
        banks[0].nfft,
        banks[-1].nfft,
    )

    def work(start: int) -> None:
        stop = min(start + frames_per_chunk, spec.num_frames)
        count = stop - start

        best = np.full((count, num_blocks * block), -np.inf)
        winner = np.zeros((count, num_blocks * block), dtype=geometry.pitch_bins.dtype)

        for bank in banks:
            segment = block + bank.kernel_length - 1
            extended = _extend(
                spec.values[start:stop],
                int(geometry.shift_bins[0]) + bank.origin,
                num_blocks * block + bank.kernel_length - 1,
                geometry.floor,
            )
            segments = sliding_window_view(extended, segment, axis=-1)[:, ::block]
            cepstra = scipy.fft.rfft(segments, n=bank.nfft, axis=-1)

            products = cepstra[:, :, None, :] * bank.spectra[None, None]
            corr = scipy.fft.irfft(products, n=bank.nfft, axis=-1, overwrite_x=True)[..., :block]

            # Ties keep the lower pitch, from the earlier bank or the lower index
            index = np.argmax(corr, axis=2)
            top = np.take_along_axis(corr, index[:, :, None, :], axis=2).reshape(count, -1)
            better = top > best
            best[better] = top[better]
            winner[better] = bank.pitch_bins[index.reshape(count, -1)[better]]

        result.gamma_prime[start:stop] = best[:, :num_shifts]
        result.winning_pitch[start:stop] = winner[:, :num_shifts]

    _run_blocks(work, list(range(0, spec.num_frames, frames_per_chunk)), workers)
    return result


# Engines by command line name, both return a GammaSlice
ENGINES = {
    "direct": gamma_direct_reduced,
    "pc": gamma_pc,
}
