"""Synthetic voiced signals and a single sideband channel model with a known carrier frequency difference."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
import scipy.signal

from ssbshift.audio import write_wav
from ssbshift.config import ESTIMATION_SAMPLE_RATE
from ssbshift.exceptions import ChannelError, SampleRateError, SynthesisError
from ssbshift.spectral import AudioSegment

if TYPE_CHECKING:
    from collections.abc import Iterable

log = logging.getLogger(__name__)

PITCH_MIN_HZ = 50.0
PITCH_MAX_HZ = 400.0
PEAK_LEVEL = 0.9

# Band limiting filter
STOPBAND_DB = 80.0
TRANSITION_HZ = 200.0
# Fraction of the Nyquist frequency that shifted content may reach
NYQUIST_GUARD = 0.95
MIN_BANDWIDTH_HZ = 500.0

MANIFEST_NAME = "manifest.jsonl"


@dataclass(frozen=True)
class VoiceSpec:
    """A synthetic voiced signal.

    The pitch contour is piecewise linear through ``breakpoints`` of ``(time_s, pitch_hz)`` and held constant
    outside them. ``voiced_intervals`` lists ``(start_s, end_s)`` intervals with voicing, ``None`` means voiced
    throughout.
    """

    breakpoints: tuple[tuple[float, float], ...]
    duration_s: float
    num_harmonics: int = 10
    harmonic_rolloff: float = 1.0
    voiced_intervals: tuple[tuple[float, float], ...] | None = None
    sample_rate: int = ESTIMATION_SAMPLE_RATE

    def __post_init__(self) -> None:
        breakpoints = tuple((float(t), float(f)) for t, f in self.breakpoints)
        object.__setattr__(self, "breakpoints", breakpoints)

        if self.duration_s <= 0:
            raise ValueError(f"duration must be positive, got {self.duration_s}")
        if not breakpoints:
            raise ValueError("pitch contour needs at least one breakpoint")
        if any(b[0] <= a[0] for a, b in zip(breakpoints, breakpoints[1:])):
            raise ValueError("pitch breakpoints must have strictly increasing times")
        if any(not PITCH_MIN_HZ <= f <= PITCH_MAX_HZ for _, f in breakpoints):
            raise ValueError(f"pitch contour must stay within {PITCH_MIN_HZ}..{PITCH_MAX_HZ} Hz")
        if self.num_harmonics < 1:
            raise ValueError("num_harmonics must be at least 1")

    @classmethod
    def constant(cls, pitch_hz: float, duration_s: float, **kwargs) -> VoiceSpec:
        return cls(((0.0, pitch_hz),), duration_s, **kwargs)

    @classmethod
    def glide(cls, start_hz: float, end_hz: float, duration_s: float, **kwargs) -> VoiceSpec:
        return cls(((0.0, start_hz), (duration_s, end_hz)), duration_s, **kwargs)

    @classmethod
    def vibrato(
        cls,
        center_hz: float,
        depth_hz: float,
        rate_hz: float,
        duration_s: float,
        phase: float = 0.0,
        step_s: float = 0.01,
        **kwargs,
    ) -> VoiceSpec:
        """Sinusoidal pitch modulation ``center + depth * sin(2 pi rate t + phase)``."""
        times = np.arange(0.0, duration_s + step_s, step_s)
        pitch = center_hz + depth_hz * np.sin(2 * np.pi * rate_hz * times + phase)
        return cls(tuple(zip(times.tolist(), pitch.tolist())), duration_s, **kwargs)

    @property
    def num_samples(self) -> int:
        return round(self.duration_s * self.sample_rate)

    def pitch_at(self, times: np.ndarray) -> np.ndarray:
        """Pitch contour in Hz at the given times."""
        knots = np.array(self.breakpoints)
        return np.interp(times, knots[:, 0], knots[:, 1])

    def voiced_at(self, times: np.ndarray) -> np.ndarray:
        """Boolean voicing mask at the given times."""
        times = np.asarray(times, dtype=np.float64)
        if self.voiced_intervals is None:
            return np.ones(times.shape, dtype=bool)

        mask = np.zeros(times.shape, dtype=bool)
        for start, end in self.voiced_intervals:
            mask |= (times >= start) & (times < end)
        return mask


@dataclass(frozen=True)
class ChannelSpec:
    """Single sideband channel: band limit, carrier frequency difference and white noise."""

    cfd_hz: float = 0.0
    bandwidth_hz: float = 2700.0
    snr_db: float = math.inf
    sample_rate: int = ESTIMATION_SAMPLE_RATE

    def __post_init__(self) -> None:
        if self.cfd_hz < 0:
            raise ValueError(f"carrier frequency difference must be non-negative, got {self.cfd_hz}")
        if not 0 < self.bandwidth_hz < self.sample_rate / 2:
            raise ValueError(f"bandwidth must lie within (0, {self.sample_rate / 2}) Hz, got {self.bandwidth_hz}")


@dataclass(frozen=True)
class ManifestRecord:
    path: str
    cfd_hz: float
    snr_db: float
    breakpoints: list[list[float]] = field(default_factory=list)
    duration_s: float = 0.0

    def to_json(self) -> str:
        record = asdict(self)
        if not math.isfinite(self.snr_db):
            record["snr_db"] = None
        return json.dumps(record)

    @classmethod
    def from_json(cls, line: str) -> ManifestRecord:
        record = json.loads(line)
        if record.get("snr_db") is None:
            record["snr_db"] = math.inf
        return cls(**record)


def synth_voice(spec: VoiceSpec) -> AudioSegment:
    """Synthesize ``sum_h h^-rolloff * cos(h * phi(t))`` with a phase-continuous pitch contour.

    Unvoiced intervals are silent. The result is peak-normalized to 0.9.

    Raises:
        SynthesisError: If the highest harmonic of the contour reaches the Nyquist frequency.
    """
    fs = spec.sample_rate
    times = np.arange(spec.num_samples) / fs
    pitch = spec.pitch_at(times)

    top = float(np.max(pitch))
    if spec.num_harmonics * top >= fs / 2:
        raise SynthesisError(
            f"{spec.num_harmonics} harmonics of a {top:.1f} Hz pitch reach the Nyquist frequency of {fs / 2} Hz"
        )

    phase = 2 * np.pi * np.concatenate(([0.0], np.cumsum(pitch[:-1]))) / fs

    signal = np.zeros(len(times))
    for harmonic in range(1, spec.num_harmonics + 1):
        signal += harmonic ** (-spec.harmonic_rolloff) * np.cos(harmonic * phase)
    signal *= spec.voiced_at(times)

    peak = np.max(np.abs(signal), initial=0.0)
    if peak > 0:
        signal *= PEAK_LEVEL / peak
    return AudioSegment(signal, fs)


def _lowpass_taps(cutoff_hz: float, sample_rate: int) -> np.ndarray:
    numtaps, beta = scipy.signal.kaiserord(STOPBAND_DB, TRANSITION_HZ / (sample_rate / 2))
    # Odd length, so the group delay is a whole number of samples
    numtaps |= 1
    return scipy.signal.firwin(numtaps, cutoff_hz, window=("kaiser", beta), fs=sample_rate)


def band_limit(seg: AudioSegment, cutoff_hz: float) -> AudioSegment:
    """Low-pass filter a segment with a linear-phase FIR filter, compensating the group delay."""
    taps = _lowpass_taps(cutoff_hz, seg.sample_rate)
    return AudioSegment(scipy.signal.fftconvolve(seg.samples, taps, mode="same"), seg.sample_rate)


def apply_channel(seg: AudioSegment, ch: ChannelSpec, seed: int = 0) -> AudioSegment:
    """Pass a segment through the single sideband channel model.

    The segment is band limited to ``ch.bandwidth_hz``, moved up by ``ch.cfd_hz`` through modulation of its analytic
    signal and disturbed by white Gaussian noise at ``ch.snr_db``. Content that would be moved beyond 95% of the
    Nyquist frequency is removed before the shift, like the upper band edge lost by a mistuned receiver.

    Args:
        seg: The input segment.
        ch: The channel parameters.
        seed: Seed for the noise generator.

    Raises:
        ChannelError: If the carrier frequency difference leaves too little of the band.
    """
    fs = seg.sample_rate
    if fs != ch.sample_rate:
        raise SampleRateError(f"channel expects {ch.sample_rate} Hz audio, got {fs} Hz")

    cutoff = min(ch.bandwidth_hz, NYQUIST_GUARD * fs / 2 - ch.cfd_hz)
    if cutoff < MIN_BANDWIDTH_HZ:
        raise ChannelError(
            f"carrier frequency difference of {ch.cfd_hz} Hz leaves {cutoff:.0f} Hz of the band, "
            f"at least {MIN_BANDWIDTH_HZ:.0f} Hz required"
        )

    out = band_limit(seg, cutoff).samples
    if ch.cfd_hz:
        times = np.arange(len(out)) / fs
        out = np.real(scipy.signal.hilbert(out) * np.exp(2j * np.pi * ch.cfd_hz * times))

    if math.isfinite(ch.snr_db):
        rng = np.random.default_rng(seed)
        noise_power = np.mean(out**2) / 10 ** (ch.snr_db / 10)
        out = out + rng.normal(0.0, math.sqrt(noise_power), len(out))

    return AudioSegment(out, fs)


def mix(*segments: AudioSegment) -> AudioSegment:
    """Sum segments of equal sample rate, truncated to the shortest."""
    if not segments:
        raise ValueError("nothing to mix")
    if len({seg.sample_rate for seg in segments}) != 1:
        raise SampleRateError("cannot mix segments with different sample rates")

    length = min(len(seg) for seg in segments)
    return AudioSegment(sum(seg.samples[:length] for seg in segments), segments[0].sample_rate)


def random_voice(
    rng: np.random.Generator,
    duration_s: float,
    center_range_hz: tuple[float, float] = (100.0, 250.0),
    depth_hz: float = 20.0,
    rate_range_hz: tuple[float, float] = (0.1, 0.3),
) -> VoiceSpec:
    """Draw a vibrato voice with random center pitch, modulation rate and phase."""
    return VoiceSpec.vibrato(
        center_hz=float(rng.uniform(*center_range_hz)),
        depth_hz=depth_hz,
        rate_hz=float(rng.uniform(*rate_range_hz)),
        duration_s=duration_s,
        phase=float(rng.uniform(0, 2 * np.pi)),
    )


def generate_corpus(
    out_dir: str | Path, items: Iterable[tuple[VoiceSpec, ChannelSpec]], seed: int = 0
) -> list[ManifestRecord]:
    """Render voices through their channels into WAV files and write a JSON lines manifest.

    Item ``i`` is rendered with noise seed ``seed + i`` and written as ``sim_<i>.wav``.

    Returns:
        The manifest records, in item order.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    records = []
    for i, (voice, channel) in enumerate(items):
        audio = apply_channel(synth_voice(voice), channel, seed=seed + i)
        peak = np.max(np.abs(audio.samples), initial=0.0)
        if peak > 0:
            audio = AudioSegment(audio.samples * (PEAK_LEVEL / peak), audio.sample_rate)

        path = out_dir / f"sim_{i:04d}.wav"
        write_wav(audio, path)
        records.append(
            ManifestRecord(
                path=str(path),
                cfd_hz=channel.cfd_hz,
                snr_db=channel.snr_db,
                breakpoints=[list(point) for point in voice.breakpoints],
                duration_s=voice.duration_s,
            )
        )
        log.info("Simulated %s: cfd %.1f Hz, SNR %s dB", path, channel.cfd_hz, channel.snr_db)

    (out_dir / MANIFEST_NAME).write_text("".join(f"{record.to_json()}\n" for record in records), encoding="utf-8")
    return records


def read_manifest(path: str | Path) -> list[ManifestRecord]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [ManifestRecord.from_json(line) for line in lines if line.strip()]
