from __future__ import annotations

from typing import Callable

import numpy as np
import pytest

from ssbshift.config import RakeConfig
from ssbshift.estimator import (
    AccumulatedEnergy,
    accumulate,
    estimate_cfd,
    estimate_segment,
    find_peaks,
    refine_peak,
    smooth_pitch_trace,
)
from ssbshift.exceptions import ConfigError, EmptyInputError, LengthMismatchError
from ssbshift.rake import GammaSlice, gamma_pc
from ssbshift.simulate import VoiceSpec, mix
from ssbshift.spectral import AudioSegment, LogSpectrogram

BIN_HZ = 1.953125


def _acc(gamma_hat: np.ndarray, bin_hz: float = BIN_HZ) -> AccumulatedEnergy:
    gamma_hat = np.asarray(gamma_hat, dtype=np.float64)
    shift_bins = np.arange(len(gamma_hat))
    return AccumulatedEnergy(gamma_hat, shift_bins, bin_hz, np.zeros((1, len(gamma_hat)), dtype=np.int64))


def _slice(gamma_prime: np.ndarray, winning_pitch: np.ndarray, bin_hz: float = BIN_HZ) -> GammaSlice:
    return GammaSlice(gamma_prime, winning_pitch, np.arange(gamma_prime.shape[1]), bin_hz)


def test_accumulate(rng: np.random.Generator) -> None:
    gamma_prime = rng.normal(size=(5, 20))
    winning = rng.integers(26, 204, size=(5, 20))
    acc = accumulate(_slice(gamma_prime, winning))

    np.testing.assert_allclose(acc.gamma_hat, [sum(gamma_prime[t, d] for t in range(5)) for d in range(20)])
    np.testing.assert_array_equal(acc.winning_pitch, winning)
    np.testing.assert_array_equal(acc.shift_hz, np.arange(20) * BIN_HZ)

    # Single frame is the identity, duplicated frames double
    assert np.array_equal(accumulate(_slice(gamma_prime[:1], winning[:1])).gamma_hat, gamma_prime[0])
    doubled = accumulate(_slice(np.repeat(gamma_prime, 2, axis=0), np.repeat(winning, 2, axis=0)))
    np.testing.assert_allclose(doubled.gamma_hat, 2 * acc.gamma_hat)

    # Permuting frames does not matter
    permuted = accumulate(_slice(gamma_prime[::-1], winning[::-1]))
    np.testing.assert_allclose(permuted.gamma_hat, acc.gamma_hat)

    with pytest.raises(EmptyInputError):
        accumulate(_slice(np.empty((0, 20)), np.empty((0, 20), dtype=np.int64)))


def test_refine_quadratic() -> None:
    bins = np.arange(201)
    peak = refine_peak(_acc(-((bins - 100.0) ** 2)))

    assert peak.f_d_hz == pytest.approx(100.0 * BIN_HZ, abs=1e-6)
    assert peak.score == pytest.approx(0.0, abs=1e-6)
    assert not peak.flat


def test_refine_off_grid_vertex() -> None:
    bins = np.arange(201)
    vertex = 100.0 + 1 / 3
    peak = refine_peak(_acc(-((bins - vertex) ** 2)))

    assert peak.f_d_hz == pytest.approx(vertex * BIN_HZ, abs=1e-6)


def test_refine_symmetric_triangle() -> None:
    bins = np.arange(200)
    peak = refine_peak(_acc(-np.abs(bins - 99.5)))

    assert 99 * BIN_HZ < peak.f_d_hz < 100 * BIN_HZ
    assert peak.f_d_hz == pytest.approx(99.5 * BIN_HZ, abs=0.1)


def test_refine_flat() -> None:
    peak = refine_peak(_acc(np.full(50, 3.0)))

    assert peak.flat
    assert peak.f_d_hz == 0.0
    assert peak.score == 3.0


def test_refine_too_few_bins() -> None:
    with pytest.raises(EmptyInputError, match="5 shift bins"):
        refine_peak(_acc(np.arange(4.0)))


@pytest.mark.parametrize("seed", range(20))
def test_refine_within_bounds(seed: int) -> None:
    rng = np.random.default_rng(seed)
    acc = _acc(np.cumsum(rng.normal(size=300)))
    best = int(np.argmax(acc.gamma_hat))
    peak = refine_peak(acc)

    assert abs(peak.f_d_hz - best * BIN_HZ) <= 1.5 * BIN_HZ + 1e-9
    assert peak.score >= acc.gamma_hat[best] - 1e-9


def test_find_peaks_single() -> None:
    bins = np.arange(201)
    acc = _acc(-((bins - 100.0) ** 2))

    assert find_peaks(acc, 3, 50.0) == [refine_peak(acc)]


def test_find_peaks_equal_bumps() -> None:
    # Bins 100 and 611 lie 998 Hz apart
    bins = np.arange(801)
    gamma_hat = np.exp(-((bins - 100) ** 2) / 32.0) + np.exp(-((bins - 611) ** 2) / 32.0)
    peaks = find_peaks(_acc(gamma_hat), 3, 50.0)

    assert len(peaks) == 2
    assert peaks[0].f_d_hz == pytest.approx(100 * BIN_HZ, abs=1e-3)
    assert peaks[1].f_d_hz == pytest.approx(611 * BIN_HZ, abs=1e-3)
    assert peaks[0].score == pytest.approx(peaks[1].score)


def test_find_peaks_order_and_separation() -> None:
    bins = np.arange(801)
    gamma_hat = (
        1.0 * np.exp(-((bins - 100) ** 2) / 32.0)
        + 3.0 * np.exp(-((bins - 400) ** 2) / 32.0)
        + 2.0 * np.exp(-((bins - 700) ** 2) / 32.0)
        # Local maximum 15 bins (29 Hz) from the strongest peak
        + 0.5 * np.exp(-((bins - 415) ** 2) / 4.0)
    )
    peaks = find_peaks(_acc(gamma_hat), 5, 50.0)

    assert [round(peak.f_d_hz / BIN_HZ) for peak in peaks] == [400, 700, 100]
    assert [round(peak.f_d_hz / BIN_HZ) for peak in find_peaks(_acc(gamma_hat), 2, 50.0)] == [400, 700]
    assert len(find_peaks(_acc(gamma_hat), 5, 0.0)) == 4


def test_find_peaks_ramp() -> None:
    peaks = find_peaks(_acc(np.arange(100.0)), 3, 50.0)

    assert len(peaks) == 1
    assert peaks[0].f_d_hz == pytest.approx(99 * BIN_HZ)


def test_find_peaks_invalid() -> None:
    with pytest.raises(ValueError, match="max_peaks"):
        find_peaks(_acc(np.arange(10.0)), 0, 50.0)


def test_estimate_cfd_synthetic() -> None:
    cfg = RakeConfig()
    rng = np.random.default_rng(5)
    gamma_prime = -((np.arange(300) - 120.0) ** 2)[None, :] + rng.normal(0, 1e-3, (40, 300))
    winning = np.full((40, 300), 60)
    winning[:, 120] = np.linspace(60, 80, 40).astype(int)

    estimate = estimate_cfd(_slice(gamma_prime, winning, cfg.bin_hz), cfg)

    assert estimate.shift_bin == 120
    assert estimate.f_d_hz == pytest.approx(120 * cfg.bin_hz, abs=0.05)
    assert np.array_equal(estimate.pitch_trace_hz, winning[:, 120] * cfg.bin_hz)
    assert estimate.pitch_variance_hz2 == pytest.approx(np.var(winning[:, 120] * cfg.bin_hz, ddof=1))
    assert estimate.is_speech
    assert estimate.secondary_peaks == ()
    assert len(estimate.frame_energy) == 40

    # A constant offset of the pitch trace keeps the variance and the verdict
    shifted = estimate_cfd(_slice(gamma_prime, winning + 10, cfg.bin_hz), cfg)
    assert shifted.pitch_variance_hz2 == pytest.approx(estimate.pitch_variance_hz2)
    assert shifted.is_speech == estimate.is_speech


def test_estimate_cfd_constant_pitch_trace() -> None:
    cfg = RakeConfig()
    gamma_prime = np.tile(-((np.arange(100) - 40.0) ** 2), (10, 1))
    estimate = estimate_cfd(_slice(gamma_prime, np.full((10, 100), 77), cfg.bin_hz), cfg)

    assert estimate.pitch_variance_hz2 == 0.0
    assert not estimate.is_speech


def test_estimate_cfd_single_frame() -> None:
    cfg = RakeConfig()
    estimate = estimate_cfd(_slice(-((np.arange(20.0) - 8) ** 2)[None, :], np.full((1, 20), 77), cfg.bin_hz), cfg)

    assert estimate.pitch_variance_hz2 == 0.0
    assert estimate.shift_bin == 8


def test_estimate_cfd_empty() -> None:
    with pytest.raises(EmptyInputError):
        estimate_cfd(_slice(np.empty((0, 20)), np.empty((0, 20), dtype=np.int64)), RakeConfig())


def test_argmax_invariance(rng: np.random.Generator) -> None:
    # Every tap of every hypothesis lies inside the spectrum
    cfg = RakeConfig(fft_size=2048, pitch_max_hz=100.0, shift_max_hz=1000.0)
    values = rng.normal(-5.0, 4.0, (8, cfg.num_bins))

    def run(offset: float) -> tuple[AccumulatedEnergy, GammaSlice]:
        spec = LogSpectrogram(values + offset, cfg.frame_shift_s, cfg.bin_hz, cfg.fft_size)
        gamma = gamma_pc(spec, cfg)
        return accumulate(gamma), gamma

    acc, gamma = run(0.0)
    moved_acc, moved_gamma = run(7.5)

    difference = moved_acc.gamma_hat - acc.gamma_hat
    np.testing.assert_allclose(difference, difference[0], atol=1e-8)
    assert np.argmax(moved_acc.gamma_hat) == np.argmax(acc.gamma_hat)
    np.testing.assert_array_equal(moved_gamma.winning_pitch, gamma.winning_pitch)


def test_estimate_segment_engine(cfg_2048: RakeConfig) -> None:
    with pytest.raises(ConfigError, match="unknown engine"):
        estimate_segment(AudioSegment(np.zeros(8000), 8000), cfg_2048, engine="fast")


def test_estimate_segment_silence(cfg_2048: RakeConfig) -> None:
    estimate = estimate_segment(AudioSegment(np.zeros(8000), 8000), cfg_2048)

    assert estimate.flat
    assert estimate.f_d_hz == 0.0


def test_smooth_constant() -> None:
    trace = np.full(50, 150.0)
    np.testing.assert_allclose(smooth_pitch_trace(trace), trace, atol=1e-9)


def test_smooth_outlier() -> None:
    trace = np.full(100, 150.0)
    trace[50] += 200.0

    smoothed = smooth_pitch_trace(trace)
    assert len(smoothed) == 100
    assert abs(smoothed[50] - 150.0) <= 100.0


def test_smooth_ramp() -> None:
    trace = np.linspace(100.0, 200.0, 200)
    smoothed = smooth_pitch_trace(trace)

    assert np.max(np.abs(smoothed[20:] - trace[20:])) < 2.0


def test_smooth_energy_weighting() -> None:
    trace = np.full(100, 150.0)
    trace[50] += 200.0
    energy = np.zeros(100)
    energy[50] = -20.0

    weighted = smooth_pitch_trace(trace, energy)
    plain = smooth_pitch_trace(trace)
    assert abs(weighted[50] - 150.0) < abs(plain[50] - 150.0)


def test_smooth_invalid() -> None:
    with pytest.raises(EmptyInputError):
        smooth_pitch_trace(np.empty(0))

    with pytest.raises(LengthMismatchError):
        smooth_pitch_trace(np.ones(10), np.ones(9))


def test_estimate_glide_shifted(ssb: Callable[..., AudioSegment]) -> None:
    audio = ssb(VoiceSpec.glide(120.0, 180.0, 10.0), cfd_hz=500.0, snr_db=20.0)
    cfg = RakeConfig()
    estimate = estimate_segment(audio, cfg)

    assert abs(estimate.f_d_hz - 500.0) < 5.0
    assert estimate.is_speech
    assert np.all(estimate.pitch_trace_hz >= cfg.pitch_min_hz)
    assert np.all(estimate.pitch_trace_hz <= cfg.pitch_max_hz)


def test_estimate_constant_comb(ssb: Callable[..., AudioSegment]) -> None:
    audio = ssb(VoiceSpec.constant(150.0, 4.0), cfd_hz=300.0)
    cfg = RakeConfig()
    estimate = estimate_segment(audio, cfg)

    assert abs(estimate.f_d_hz - 300.0) < 5.0
    assert estimate.pitch_variance_hz2 < cfg.variance_threshold_hz2
    assert not estimate.is_speech


def test_engines_agree_on_audio(ssb: Callable[..., AudioSegment], cfg_2048: RakeConfig) -> None:
    audio = ssb(VoiceSpec.glide(130.0, 160.0, 3.0), cfd_hz=100.0, snr_db=20.0)

    direct = estimate_segment(audio, cfg_2048, engine="direct")
    fast = estimate_segment(audio, cfg_2048, engine="pc", workers=2)
    assert fast.f_d_hz == pytest.approx(direct.f_d_hz, abs=1e-6)
    np.testing.assert_array_equal(fast.pitch_trace_hz, direct.pitch_trace_hz)


@pytest.mark.slow
def test_crosstalker_secondary_peak(ssb: Callable[..., AudioSegment]) -> None:
    speaker = ssb(VoiceSpec.vibrato(125.0, 15.0, 0.1, 10.0), cfd_hz=100.0, snr_db=30.0, seed=1)
    crosstalker = ssb(VoiceSpec.vibrato(210.0, 15.0, 0.1, 10.0, phase=np.pi), cfd_hz=1098.0, snr_db=30.0, seed=2)

    estimate = estimate_segment(mix(speaker, crosstalker), RakeConfig())
    found = [estimate.f_d_hz, *(peak.f_d_hz for peak in estimate.secondary_peaks)]

    for expected in (100.0, 1098.0):
        assert any(abs(freq - expected) < 5.0 for freq in found)
