"""Scoring of estimates against simulated ground truth, and real-time factor measurement."""

from __future__ import annotations

import csv
import logging
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from ssbshift.audio import open_output
from ssbshift.config import RakeConfig
from ssbshift.estimator import estimate_segment
from ssbshift.exceptions import EmptyInputError, LengthMismatchError, SegmentTooShortError

if TYPE_CHECKING:
    from collections.abc import Iterable, Sequence

    from ssbshift.audio import ResultRecord
    from ssbshift.simulate import ManifestRecord
    from ssbshift.spectral import AudioSegment

log = logging.getLogger(__name__)

# Left-closed class edges, in Hz and seconds
ERROR_EDGES_HZ = (5.0, 10.0, 50.0, 100.0)
LENGTH_EDGES_S = (0.5, 1.0, 2.0, 10.0)
ERROR_CLASSES = ("<5 Hz", "5-10 Hz", "10-50 Hz", "50-100 Hz", ">100 Hz")
LENGTH_BUCKETS = ("<0.5 s", "0.5-1 s", "1-2 s", "2-10 s", ">10 s")

OCTAVE_FACTORS = (0.5, 1.0, 2.0)

BENCHMARK_ENGINES = ("direct", "pc-single", "pc-multi")
MIN_BENCHMARK_S = 10.0


@dataclass(frozen=True)
class ErrorClassHistogram:
    """Counts of estimation errors, ``counts[length bucket, error class]``."""

    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def percentages(self) -> np.ndarray:
        """Class percentages per length bucket, rows of empty buckets are all zero."""
        totals = self.counts.sum(axis=1, keepdims=True)
        return np.divide(100.0 * self.counts, totals, out=np.zeros(self.counts.shape), where=totals > 0)


@dataclass(frozen=True)
class ErrorCdf:
    """Empirical distribution of errors: ``probabilities[i]`` of the errors are at most ``errors[i]``."""

    errors: np.ndarray
    probabilities: np.ndarray

    def quantile(self, q: float) -> float:
        return float(np.quantile(self.errors, q))

    @property
    def median(self) -> float:
        return self.quantile(0.5)

    def fraction_within(self, limit: float) -> float:
        return float(np.searchsorted(self.errors, limit, side="right") / len(self.errors))


@dataclass(frozen=True)
class RtfResult:
    engine: str
    fft_size: int
    threads: int
    audio_s: float
    elapsed_s: float

    @property
    def rtf(self) -> float:
        return self.elapsed_s / self.audio_s


def classify_errors(
    estimates: Sequence[float], truths: Sequence[float], lengths: Sequence[float]
) -> ErrorClassHistogram:
    """Bin absolute estimation errors into error classes, stratified by speech length.

    Raises:
        LengthMismatchError: If the inputs differ in length.
    """
    estimates = np.asarray(estimates, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.float64)
    lengths = np.asarray(lengths, dtype=np.float64)
    if not len(estimates) == len(truths) == len(lengths):
        raise LengthMismatchError(
            f"got {len(estimates)} estimates, {len(truths)} truths and {len(lengths)} lengths"
        )

    error_class = np.digitize(np.abs(estimates - truths), ERROR_EDGES_HZ)
    length_bucket = np.digitize(lengths, LENGTH_EDGES_S)

    counts = np.zeros((len(LENGTH_BUCKETS), len(ERROR_CLASSES)), dtype=np.int64)
    np.add.at(counts, (length_bucket, error_class), 1)
    return ErrorClassHistogram(counts)


def _flatten(traces: np.ndarray | Sequence[np.ndarray]) -> np.ndarray:
    if isinstance(traces, np.ndarray):
        return traces.astype(np.float64).ravel()
    return np.concatenate([np.asarray(trace, dtype=np.float64).ravel() for trace in traces] or [np.empty(0)])


def pitch_error_cdf(
    est_traces: np.ndarray | Sequence[np.ndarray],
    true_traces: np.ndarray | Sequence[np.ndarray],
    oracle_octave: bool = False,
) -> ErrorCdf:
    """Distribution of per-frame pitch errors over voiced frames.

    Frames where the true pitch is NaN are unvoiced and skipped. With ``oracle_octave`` the estimate may be halved
    or doubled, whichever is closest to the truth. An estimate missing in a voiced frame counts as infinite error.

    Raises:
        LengthMismatchError: If the traces are not aligned.
        EmptyInputError: If no frame is voiced.
    """
    estimated = _flatten(est_traces)
    true = _flatten(true_traces)
    if estimated.shape != true.shape:
        raise LengthMismatchError(f"{len(estimated)} estimated frames against {len(true)} reference frames")

    voiced = np.isfinite(true)
    if not voiced.any():
        raise EmptyInputError("no voiced frames to score")

    estimated, true = estimated[voiced], true[voiced]
    factors = OCTAVE_FACTORS if oracle_octave else (1.0,)
    errors = np.min([np.abs(estimated * factor - true) for factor in factors], axis=0)
    errors = np.sort(np.where(np.isnan(errors), np.inf, errors))

    return ErrorCdf(errors, np.arange(1, len(errors) + 1) / len(errors))


def match_manifest(
    manifest: Iterable[ManifestRecord], results: Iterable[ResultRecord]
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pair every result with the ground truth of its input file.

    Results are matched by resolved input path. The speech length of a result is the length of its segment.

    Returns:
        Estimates, true carrier frequency differences and speech lengths.
    """
    truths = {Path(record.path).resolve(): record.cfd_hz for record in manifest}

    estimates, expected, lengths = [], [], []
    for result in results:
        key = Path(result.input_path).resolve()
        if key not in truths:
            log.warning("No ground truth for %s", result.input_path)
            continue

        estimates.append(result.f_d_hz)
        expected.append(truths[key])
        lengths.append(result.segment_end_s - result.segment_start_s)

    return np.array(estimates), np.array(expected), np.array(lengths)


def benchmark_rtf(
    engine: str, fft_size: int, audio: AudioSegment, threads: int | None = None, cfg: RakeConfig | None = None
) -> RtfResult:
    """Measure the real-time factor of the full estimation pipeline.

    Args:
        engine: ``"direct"`` (direct summation, one thread), ``"pc-single"`` (fast engine, one thread) or
                ``"pc-multi"`` (fast engine, ``threads`` threads, all cores by default).
        fft_size: The FFT size.
        audio: At least 10 seconds of audio.
        threads: Thread count for ``"pc-multi"``.
        cfg: Base configuration, the FFT size is replaced.
    """
    if engine not in BENCHMARK_ENGINES:
        raise ValueError(f"unknown benchmark engine {engine!r}, expected one of {BENCHMARK_ENGINES}")
    if audio.duration_s < MIN_BENCHMARK_S:
        raise SegmentTooShortError(f"benchmark needs at least {MIN_BENCHMARK_S} s of audio, got {audio.duration_s} s")

    cfg = (cfg or RakeConfig()).replace(fft_size=fft_size)
    workers = 1
    if engine == "pc-multi":
        workers = threads or os.cpu_count() or 1

    start = time.perf_counter()
    estimate_segment(audio, cfg, engine="direct" if engine == "direct" else "pc", workers=workers)
    elapsed = time.perf_counter() - start

    result = RtfResult(engine, fft_size, workers, audio.duration_s, elapsed)
    log.info("%s, FFT %d, %d thread(s): RTF %.4f", engine, fft_size, workers, result.rtf)
    return result


def write_histogram(hist: ErrorClassHistogram, path: str | Path, gnuplot: bool = False) -> None:
    """Write class percentages per length bucket as CSV, or as a whitespace separated gnuplot data file."""
    percentages = hist.percentages()
    totals = hist.counts.sum(axis=1)

    with open_output(path) as fh:
        if gnuplot:
            fh.write("# bucket count " + " ".join(f'"{name}"' for name in ERROR_CLASSES) + "\n")
            for bucket, total, row in zip(LENGTH_BUCKETS, totals, percentages):
                fh.write(f'"{bucket}" {total} ' + " ".join(f"{value:.4f}" for value in row) + "\n")
            return

        writer = csv.writer(fh)
        writer.writerow(["bucket", "count", *ERROR_CLASSES])
        for bucket, total, row in zip(LENGTH_BUCKETS, totals, percentages):
            writer.writerow([bucket, int(total), *(f"{value:.4f}" for value in row)])


def write_cdf(cdf: ErrorCdf, path: str | Path, gnuplot: bool = False) -> None:
    """Write the error distribution as ``error_hz,probability`` rows."""
    rows = list(zip(cdf.errors.tolist(), cdf.probabilities.tolist()))

    with open_output(path) as fh:
        if gnuplot:
            fh.write("# error_hz probability\n")
            fh.writelines(f"{error!r} {prob!r}\n" for error, prob in rows)
            return

        writer = csv.writer(fh)
        writer.writerow(["error_hz", "probability"])
        writer.writerows(rows)


def write_rtf(results: Iterable[RtfResult], path: str | Path) -> None:
    with open_output(path) as fh:
        writer = csv.writer(fh)
        writer.writerow(["engine", "fft_size", "threads", "audio_s", "elapsed_s", "rtf"])
        for result in results:
            writer.writerow(
                [result.engine, result.fft_size, result.threads, result.audio_s, result.elapsed_s, result.rtf]
            )
