from __future__ import annotations

import csv
import json
import logging
import sys
import wave
from contextlib import nullcontext
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, TextIO

import numpy as np

from ssbshift.exceptions import AudioIOError, UnsupportedFormatError
from ssbshift.spectral import AudioSegment

if TYPE_CHECKING:
    from collections.abc import Iterable
    from contextlib import AbstractContextManager

log = logging.getLogger(__name__)

PCM_SCALE = 32768.0

RESULT_FORMATS = ("csv", "json")
CSV_HEADER = ("input", "start_s", "end_s", "f_d_hz", "score", "is_speech", "pitch_var_hz2", "secondary")
PITCH_HEADER = ("input", "time_s", "pitch_hz", "smoothed_hz")


def read_wav(path: str | Path) -> AudioSegment:
    """Read a 16-bit PCM mono WAV file, with samples scaled to ``[-1, 1)``.

    Raises:
        UnsupportedFormatError: If the file is not 16-bit PCM mono. The message names the offending property.
        AudioIOError: If the file cannot be read.
    """
    try:
        with wave.open(str(path), "rb") as fh:
            channels = fh.getnchannels()
            sample_width = fh.getsampwidth()
            sample_rate = fh.getframerate()

            if channels != 1:
                raise UnsupportedFormatError(f"{path}: {channels} channels, only mono audio is supported")
            if sample_width != 2:
                raise UnsupportedFormatError(
                    f"{path}: {sample_width * 8}-bit samples, only 16-bit PCM is supported"
                )

            data = fh.readframes(fh.getnframes())
    except wave.Error as e:
        # The wave module rejects float and other non-PCM encodings on open
        raise UnsupportedFormatError(f"{path}: unsupported WAV encoding ({e}), only 16-bit PCM is supported")
    except (OSError, EOFError) as e:
        raise AudioIOError(f"cannot read {path}: {e}")

    samples = np.frombuffer(data, dtype="<i2").astype(np.float64) / PCM_SCALE
    log.debug("Read %s: %d samples at %d Hz", path, len(samples), sample_rate)
    return AudioSegment(samples, sample_rate)


def write_wav(seg: AudioSegment, path: str | Path) -> None:
    """Write a segment as a 16-bit PCM mono WAV file. Samples outside ``[-1, 1)`` are clipped.

    Raises:
        AudioIOError: If the file cannot be written.
    """
    pcm = np.clip(np.round(seg.samples * PCM_SCALE), -32768, 32767).astype("<i2")

    try:
        with wave.open(str(path), "wb") as fh:
            fh.setnchannels(1)
            fh.setsampwidth(2)
            fh.setframerate(seg.sample_rate)
            fh.writeframes(pcm.tobytes())
    except OSError as e:
        raise AudioIOError(f"cannot write {path}: {e}")


@dataclass(frozen=True)
class ResultRecord:
    """Estimate of one segment of an input file.

    ``secondary_peaks`` holds ``(f_d_hz, score)`` pairs of the weaker peaks.
    """

    input_path: str
    segment_start_s: float
    segment_end_s: float
    f_d_hz: float
    peak_score: float
    is_speech: bool
    pitch_variance_hz2: float
    secondary_peaks: tuple[tuple[float, float], ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        # Plain Python scalars, numpy scalars neither repr nor serialize as plain numbers
        for name in ("segment_start_s", "segment_end_s", "f_d_hz", "peak_score", "pitch_variance_hz2"):
            object.__setattr__(self, name, float(getattr(self, name)))
        object.__setattr__(self, "is_speech", bool(self.is_speech))
        object.__setattr__(self, "secondary_peaks", tuple((float(f), float(s)) for f, s in self.secondary_peaks))

    def to_row(self) -> list[str]:
        return [
            self.input_path,
            repr(self.segment_start_s),
            repr(self.segment_end_s),
            repr(self.f_d_hz),
            repr(self.peak_score),
            "true" if self.is_speech else "false",
            repr(self.pitch_variance_hz2),
            ";".join(f"{freq!r}:{score!r}" for freq, score in self.secondary_peaks),
        ]

    @classmethod
    def from_row(cls, row: dict[str, str]) -> ResultRecord:
        secondary = []
        for item in filter(None, row["secondary"].split(";")):
            freq, _, score = item.partition(":")
            secondary.append((float(freq), float(score)))

        return cls(
            input_path=row["input"],
            segment_start_s=float(row["start_s"]),
            segment_end_s=float(row["end_s"]),
            f_d_hz=float(row["f_d_hz"]),
            peak_score=float(row["score"]),
            is_speech=row["is_speech"] == "true",
            pitch_variance_hz2=float(row["pitch_var_hz2"]),
            secondary_peaks=tuple(secondary),
        )

    def to_dict(self) -> dict:
        record = asdict(self)
        record["secondary_peaks"] = [list(peak) for peak in self.secondary_peaks]
        return record

    @classmethod
    def from_dict(cls, record: dict) -> ResultRecord:
        record = dict(record)
        record["secondary_peaks"] = tuple(tuple(peak) for peak in record.get("secondary_peaks", ()))
        return cls(**record)


def _check_format(fmt: str) -> None:
    if fmt not in RESULT_FORMATS:
        raise ValueError(f"unknown result format {fmt!r}, expected one of {RESULT_FORMATS}")


def open_output(path: str | Path) -> AbstractContextManager[TextIO]:
    """Open a text file for writing, ``-`` is standard output.

    Raises:
        AudioIOError: If the file cannot be opened.
    """
    if str(path) == "-":
        return nullcontext(sys.stdout)

    try:
        return Path(path).open("w", encoding="utf-8", newline="")
    except OSError as e:
        raise AudioIOError(f"cannot write {path}: {e}")


def write_results(records: Iterable[ResultRecord], path: str | Path, fmt: str = "csv") -> None:
    """Write result records as CSV with a fixed header row, or as a JSON array. ``-`` writes to standard output.

    Raises:
        AudioIOError: If the file cannot be written.
    """
    _check_format(fmt)
    records = list(records)

    with open_output(path) as fh:
        if fmt == "csv":
            writer = csv.writer(fh)
            writer.writerow(CSV_HEADER)
            writer.writerows(record.to_row() for record in records)
        else:
            json.dump([record.to_dict() for record in records], fh, indent=2)
            fh.write("\n")


def read_results(path: str | Path, fmt: str | None = None) -> list[ResultRecord]:
    """Read result records written by :func:`write_results`. The format defaults to the file suffix."""
    path = Path(path)
    fmt = fmt or ("json" if path.suffix.lower() == ".json" else "csv")
    _check_format(fmt)

    try:
        with path.open(encoding="utf-8", newline="") as fh:
            if fmt == "csv":
                return [ResultRecord.from_row(row) for row in csv.DictReader(fh)]
            return [ResultRecord.from_dict(record) for record in json.load(fh)]
    except OSError as e:
        raise AudioIOError(f"cannot read {path}: {e}")


@dataclass(frozen=True)
class PitchTrack:
    """Pitch per analysis frame of one input, times are frame centers."""

    input_path: str
    times_s: np.ndarray
    pitch_hz: np.ndarray
    smoothed_hz: np.ndarray


def write_pitch_tracks(tracks: Iterable[PitchTrack], path: str | Path) -> None:
    """Write pitch tracks as CSV rows ``input,time_s,pitch_hz,smoothed_hz``."""
    with open_output(path) as fh:
        writer = csv.writer(fh)
        writer.writerow(PITCH_HEADER)
        for track in tracks:
            for row in zip(track.times_s.tolist(), track.pitch_hz.tolist(), track.smoothed_hz.tolist()):
                writer.writerow([track.input_path, *(repr(value) for value in row)])


def read_pitch_tracks(path: str | Path) -> list[PitchTrack]:
    rows: dict[str, list[tuple[float, float, float]]] = {}
    try:
        with Path(path).open(encoding="utf-8", newline="") as fh:
            for row in csv.DictReader(fh):
                values = (float(row["time_s"]), float(row["pitch_hz"]), float(row["smoothed_hz"]))
                rows.setdefault(row["input"], []).append(values)
    except OSError as e:
        raise AudioIOError(f"cannot read {path}: {e}")

    tracks = []
    for input_path, values in rows.items():
        times, pitch, smoothed = np.array(values).T
        tracks.append(PitchTrack(input_path, times, pitch, smoothed))
    return tracks
