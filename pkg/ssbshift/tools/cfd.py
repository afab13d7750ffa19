from __future__ import annotations

import argparse
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import TYPE_CHECKING, TypeVar

import numpy as np

from ssbshift.audio import (
    PitchTrack,
    ResultRecord,
    read_pitch_tracks,
    read_results,
    read_wav,
    write_pitch_tracks,
    write_results,
)
from ssbshift.config import FFT_SIZES, SSBSHIFT_THREADS, load_config
from ssbshift.estimator import estimate_segment, smooth_pitch_trace
from ssbshift.evaluation import (
    BENCHMARK_ENGINES,
    benchmark_rtf,
    classify_errors,
    match_manifest,
    pitch_error_cdf,
    write_cdf,
    write_histogram,
    write_rtf,
)
from ssbshift.exceptions import Error, SegmentTooShortError
from ssbshift.rake import ENGINES
from ssbshift.simulate import ChannelSpec, apply_channel, generate_corpus, random_voice, read_manifest, synth_voice
from ssbshift.spectral import frame_centers_s, num_frames

if TYPE_CHECKING:
    from collections.abc import Callable, Sequence

    from ssbshift.config import RakeConfig
    from ssbshift.evaluation import ErrorClassHistogram, RtfResult
    from ssbshift.simulate import ManifestRecord

log = logging.getLogger(__name__)

T = TypeVar("T")

DEFAULT_CFDS_HZ = (0.0, 100.0, 300.0, 500.0, 1000.0)
BENCH_CFD_HZ = 300.0
BENCH_SNR_DB = 20.0


def _map_files(
    func: Callable[[str, int], T], inputs: Sequence[str], threads: int
) -> tuple[list[tuple[str, T]], list[tuple[str, Error]]]:
    """Apply ``func(path, workers)`` to every input, in input order.

    Several inputs are spread over ``threads`` threads with one worker each, a single input gets all threads.
    Failures are logged and collected, the batch continues.
    """
    file_threads = threads if len(inputs) > 1 else 1
    workers = 1 if file_threads > 1 else threads

    def run(path: str) -> tuple[str, T | Error]:
        try:
            return path, func(path, workers)
        except Error as e:
            log.error("%s: %s", path, e)  # noqa: TRY400
            return path, e

    if file_threads > 1:
        with ThreadPoolExecutor(max_workers=file_threads) as pool:
            outcomes = list(pool.map(run, inputs))
    else:
        outcomes = [run(path) for path in inputs]

    done = [(path, value) for path, value in outcomes if not isinstance(value, Error)]
    failed = [(path, value) for path, value in outcomes if isinstance(value, Error)]
    return done, failed


def _estimate_file(
    path: str, cfg: RakeConfig, engine: str, workers: int, segment_s: float | None
) -> list[ResultRecord]:
    audio = read_wav(path)

    bounds = [(0.0, audio.duration_s)]
    if segment_s:
        starts = np.arange(0.0, audio.duration_s, segment_s)
        bounds = [(float(start), float(min(start + segment_s, audio.duration_s))) for start in starts]

    records = []
    for start, end in bounds:
        segment = audio.slice(start, end)
        if segment_s and num_frames(len(segment), cfg.fft_size, cfg.hop) == 0:
            log.debug("%s: skipping segment %.2f-%.2f s, shorter than one frame", path, start, end)
            continue

        estimate = estimate_segment(segment, cfg, engine=engine, workers=workers)
        records.append(
            ResultRecord(
                input_path=path,
                segment_start_s=start,
                segment_end_s=end,
                f_d_hz=estimate.f_d_hz,
                peak_score=estimate.peak_score,
                is_speech=estimate.is_speech,
                pitch_variance_hz2=estimate.pitch_variance_hz2,
                secondary_peaks=tuple((peak.f_d_hz, peak.score) for peak in estimate.secondary_peaks),
            )
        )
        log.info("%s [%.2f-%.2f s]: %.2f Hz, speech=%s", path, start, end, estimate.f_d_hz, estimate.is_speech)

    if not records:
        raise SegmentTooShortError(f"no segment holds a complete {cfg.fft_size} sample analysis frame")
    return records


def run_estimate(
    inputs: Sequence[str],
    cfg: RakeConfig,
    engine: str = "pc",
    threads: int = 1,
    segment_s: float | None = None,
) -> tuple[list[ResultRecord], list[tuple[str, Error]]]:
    """Estimate the carrier frequency difference of every input file.

    Returns:
        The result records in input order, and the failed inputs with their errors.
    """
    done, failed = _map_files(
        lambda path, workers: _estimate_file(path, cfg, engine, workers, segment_s), inputs, threads
    )
    return [record for _, records in done for record in records], failed


def _pitch_file(path: str, cfg: RakeConfig, engine: str, workers: int, smooth: bool) -> PitchTrack:
    estimate = estimate_segment(read_wav(path), cfg, engine=engine, workers=workers)

    trace = estimate.pitch_trace_hz
    smoothed = trace
    if smooth:
        smoothed = smooth_pitch_trace(trace, estimate.frame_energy, cfg.smoothing_noise_ratio)

    return PitchTrack(path, frame_centers_s(len(trace), cfg), trace, smoothed)


def run_pitch(
    inputs: Sequence[str], cfg: RakeConfig, engine: str = "pc", threads: int = 1, smooth: bool = False
) -> tuple[list[PitchTrack], list[tuple[str, Error]]]:
    """Extract the pitch trace at the estimated carrier frequency difference of every input file."""
    done, failed = _map_files(lambda path, workers: _pitch_file(path, cfg, engine, workers, smooth), inputs, threads)
    return [track for _, track in done], failed


def run_simulate(
    out_dir: str | Path,
    count: int,
    cfds_hz: Sequence[float] = DEFAULT_CFDS_HZ,
    snr_db: float = 10.0,
    duration_s: float = 10.0,
    bandwidth_hz: float = 2700.0,
    seed: int = 0,
) -> list[ManifestRecord]:
    """Generate ``count`` vibrato voices, cycling through the carrier frequency differences."""
    rng = np.random.default_rng(seed)
    items = [
        (
            random_voice(rng, duration_s),
            ChannelSpec(cfd_hz=cfds_hz[i % len(cfds_hz)], bandwidth_hz=bandwidth_hz, snr_db=snr_db),
        )
        for i in range(count)
    ]
    return generate_corpus(out_dir, items, seed=seed)


def run_bench(
    cfg: RakeConfig,
    audio_path: str | None = None,
    duration_s: float = 60.0,
    fft_sizes: Sequence[int] = FFT_SIZES,
    engines: Sequence[str] = BENCHMARK_ENGINES,
    threads: int | None = None,
    seed: int = 0,
) -> list[RtfResult]:
    """Measure real-time factors on a WAV file, or on a simulated voice of ``duration_s`` seconds."""
    if audio_path is not None:
        audio = read_wav(audio_path)
    else:
        voice = random_voice(np.random.default_rng(seed), duration_s)
        audio = apply_channel(synth_voice(voice), ChannelSpec(cfd_hz=BENCH_CFD_HZ, snr_db=BENCH_SNR_DB), seed=seed)

    return [benchmark_rtf(engine, fft, audio, threads=threads, cfg=cfg) for fft in fft_sizes for engine in engines]


def _truth_pitch(record: ManifestRecord, times: np.ndarray) -> np.ndarray:
    knots = np.array(record.breakpoints, dtype=np.float64)
    truth = np.interp(times, knots[:, 0], knots[:, 1])
    return np.where(times <= record.duration_s, truth, np.nan)


def run_eval(
    manifest_path: str | Path,
    results_path: str | Path,
    out: str | Path,
    gnuplot: bool = False,
    pitch_path: str | Path | None = None,
    cdf_out: str | Path | None = None,
    oracle_octave: bool = False,
) -> ErrorClassHistogram:
    """Score estimates, and optionally pitch tracks, against a simulation manifest."""
    manifest = read_manifest(manifest_path)
    estimates, truths, lengths = match_manifest(manifest, read_results(results_path))

    hist = classify_errors(estimates, truths, lengths)
    write_histogram(hist, out, gnuplot=gnuplot)
    log.info("Scored %d estimate(s)", hist.total)

    if pitch_path is not None:
        by_path = {Path(record.path).resolve(): record for record in manifest}
        est_traces, true_traces = [], []
        for track in read_pitch_tracks(pitch_path):
            record = by_path.get(Path(track.input_path).resolve())
            if record is None:
                log.warning("No ground truth for %s", track.input_path)
                continue
            est_traces.append(track.pitch_hz)
            true_traces.append(_truth_pitch(record, track.times_s))

        cdf = pitch_error_cdf(est_traces, true_traces, oracle_octave=oracle_octave)
        write_cdf(cdf, cdf_out or "-", gnuplot=gnuplot)
        log.info("Median pitch error %.2f Hz", cdf.median)

    return hist


def _parse_snr(value: str) -> float:
    return math.inf if value.lower() in ("inf", "none") else float(value)


def _parse_floats(value: str) -> list[float]:
    return [float(item) for item in value.split(",") if item]


def _configure_logging(verbosity: int) -> None:
    level = logging.WARNING - 10 * verbosity
    logging.basicConfig(level=max(level, logging.DEBUG), format="%(levelname)s %(name)s: %(message)s")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="flat key = value config file")
    common.add_argument("--fft", type=int, choices=FFT_SIZES, help="FFT size, overrides the config file")
    common.add_argument("--threads", type=int, default=SSBSHIFT_THREADS, help="thread count")
    common.add_argument("--seed", type=int, default=0, help="random seed")
    common.add_argument("-v", "--verbose", action="count", default=0, help="increase verbosity")
    common.add_argument("-q", "--quiet", action="store_true", help="only report errors")

    engine = argparse.ArgumentParser(add_help=False)
    engine.add_argument("--engine", choices=sorted(ENGINES), default="pc", help="comb search engine")

    parser = argparse.ArgumentParser(description="Carrier frequency difference estimation for SSB speech")
    commands = parser.add_subparsers(dest="command", required=True)

    cmd = commands.add_parser("estimate", parents=[common, engine], help="estimate the carrier frequency difference")
    cmd.add_argument("inputs", nargs="*", help="8 kHz 16-bit PCM mono WAV files")
    cmd.add_argument("--out", default="-", help="result file, - for standard output")
    cmd.add_argument("--format", choices=("csv", "json"), default="csv", help="result file format")
    cmd.add_argument("--segment", type=float, help="estimate consecutive segments of this many seconds")

    cmd = commands.add_parser("pitch", parents=[common, engine], help="extract pitch traces")
    cmd.add_argument("inputs", nargs="*", help="8 kHz 16-bit PCM mono WAV files")
    cmd.add_argument("--out", default="-", help="pitch CSV file, - for standard output")
    cmd.add_argument("--smooth", action="store_true", help="apply the Kalman smoother")

    cmd = commands.add_parser("simulate", parents=[common], help="generate a simulated corpus")
    cmd.add_argument("out", type=Path, help="output directory")
    cmd.add_argument("--count", type=int, default=len(DEFAULT_CFDS_HZ), help="number of files")
    cmd.add_argument("--cfd", type=_parse_floats, default=list(DEFAULT_CFDS_HZ), help="comma separated shifts in Hz")
    cmd.add_argument("--snr", type=_parse_snr, default=10.0, help="SNR in dB, inf for a clean channel")
    cmd.add_argument("--duration", type=float, default=10.0, help="file duration in seconds")
    cmd.add_argument("--bandwidth", type=float, default=2700.0, help="channel bandwidth in Hz")

    cmd = commands.add_parser("bench", parents=[common], help="measure real-time factors")
    cmd.add_argument("input", nargs="?", help="WAV file, a simulated voice by default")
    cmd.add_argument("--duration", type=float, default=60.0, help="simulated audio duration in seconds")
    cmd.add_argument("--engines", nargs="+", choices=BENCHMARK_ENGINES, default=list(BENCHMARK_ENGINES))
    cmd.add_argument("--out", default="-", help="RTF CSV file, - for standard output")

    cmd = commands.add_parser("eval", parents=[common], help="score results against a simulation manifest")
    cmd.add_argument("manifest", type=Path, help="manifest.jsonl written by simulate")
    cmd.add_argument("results", type=Path, help="result file written by estimate")
    cmd.add_argument("--out", default="-", help="error class histogram, - for standard output")
    cmd.add_argument("--gnuplot", action="store_true", help="write gnuplot data files instead of CSV")
    cmd.add_argument("--pitch", type=Path, help="pitch CSV written by pitch, scored into a CDF")
    cmd.add_argument("--cdf-out", help="pitch error CDF file, standard output by default")
    cmd.add_argument("--oracle-octave", action="store_true", help="forgive octave errors in the pitch CDF")

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(-1 if args.quiet else args.verbose)

    if args.threads < 1:
        parser.error("--threads must be at least 1")

    try:
        cfg = load_config(args.config, fft_size=args.fft)
        failed = []

        if args.command == "estimate":
            records, failed = run_estimate(args.inputs, cfg, args.engine, args.threads, args.segment)
            write_results(records, args.out, args.format)

        elif args.command == "pitch":
            tracks, failed = run_pitch(args.inputs, cfg, args.engine, args.threads, args.smooth)
            write_pitch_tracks(tracks, args.out)

        elif args.command == "simulate":
            run_simulate(args.out, args.count, args.cfd, args.snr, args.duration, args.bandwidth, args.seed)

        elif args.command == "bench":
            fft_sizes = [args.fft] if args.fft else FFT_SIZES
            # One thread means all cores for the multi-thread engine
            threads = args.threads if args.threads > 1 else None
            results = run_bench(cfg, args.input, args.duration, fft_sizes, args.engines, threads, args.seed)
            write_rtf(results, args.out)

        elif args.command == "eval":
            run_eval(args.manifest, args.results, args.out, args.gnuplot, args.pitch, args.cdf_out, args.oracle_octave)

    except Error as e:
        parser.exit(1, f"error: {e}\n")

    if failed:
        log.error("%d of %d input(s) failed", len(failed), len(args.inputs))
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
