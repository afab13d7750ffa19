import numpy as np
import pytest
import scipy.signal

from ssbshift.config import RakeConfig
from ssbshift.exceptions import SampleRateError, SegmentTooShortError
from ssbshift.spectral import AudioSegment, frame_centers_s, num_frames, stft_log_psd


def _tone(bin_index: float, cfg: RakeConfig, duration_s: float = 1.0) -> AudioSegment:
    times = np.arange(round(duration_s * cfg.sample_rate)) / cfg.sample_rate
    return AudioSegment(np.cos(2 * np.pi * bin_index * cfg.bin_hz * times), cfg.sample_rate)


def test_audio_segment() -> None:
    seg = AudioSegment([0, 1, 2, 3] * 2000, 8000)

    assert seg.samples.dtype == np.float64
    assert len(seg) == 8000
    assert seg.duration_s == 1.0
    assert len(seg.slice(0.25, 0.5)) == 2000

    with pytest.raises(ValueError, match="mono"):
        AudioSegment(np.zeros((2, 100)), 8000)


@pytest.mark.parametrize(
    ("num_samples", "expected"),
    [
        (2047, 0),
        (2048, 1),
        (2048 + 159, 1),
        (2048 + 160, 2),
        (8000, 38),
    ],
)
def test_num_frames(num_samples: int, expected: int) -> None:
    assert num_frames(num_samples, 2048, 160) == expected


def test_frame_centers(cfg_2048: RakeConfig) -> None:
    centers = frame_centers_s(3, cfg_2048)

    # Half a 2048 sample frame is 128 ms at 8 kHz
    np.testing.assert_allclose(centers, [0.128, 0.148, 0.168])
    assert len(frame_centers_s(0, cfg_2048)) == 0


def test_silence_floors(cfg_2048: RakeConfig) -> None:
    spec = stft_log_psd(AudioSegment(np.zeros(8000), 8000), cfg_2048)

    assert spec.values.shape == (38, 1025)
    assert spec.num_frames == 38
    assert spec.num_bins == 1025
    assert spec.bin_hz == 3.90625
    assert spec.frame_shift_s == 0.02
    assert np.all(spec.values == cfg_2048.log_floor)


def test_on_bin_tone() -> None:
    cfg = RakeConfig(fft_size=2048, window="boxcar")
    spec = stft_log_psd(_tone(100, cfg), cfg)

    assert np.all(np.argmax(spec.values, axis=1) == 100)
    assert spec.values.min() >= cfg.log_floor


def test_tone_shift_moves_argmax() -> None:
    cfg = RakeConfig(fft_size=2048, window="boxcar")
    low = stft_log_psd(_tone(100, cfg), cfg)
    high = stft_log_psd(_tone(107, cfg), cfg)

    assert np.all(np.argmax(high.values, axis=1) - np.argmax(low.values, axis=1) == 7)


def test_white_noise_matches_direct_dft(rng: np.random.Generator) -> None:
    cfg = RakeConfig(fft_size=4096)
    seg = AudioSegment(rng.normal(0.0, 0.1, 8000), 8000)
    spec = stft_log_psd(seg, cfg)

    # Direct DFT on a subset of bins of every frame
    bins = np.sort(rng.choice(cfg.num_bins, 64, replace=False))
    n = np.arange(cfg.fft_size)
    basis = np.exp(-2j * np.pi * np.outer(n, bins) / cfg.fft_size)
    window = scipy.signal.get_window("hann", cfg.fft_size)

    frames = np.stack([seg.samples[t * cfg.hop : t * cfg.hop + cfg.fft_size] for t in range(spec.num_frames)])
    expected = np.abs((frames * window) @ basis) ** 2

    assert np.mean(np.exp(spec.values[:, bins])) == pytest.approx(np.mean(expected), rel=1e-6)


def test_deterministic(rng: np.random.Generator, cfg_2048: RakeConfig) -> None:
    seg = AudioSegment(rng.normal(size=12000), 8000)

    assert np.array_equal(stft_log_psd(seg, cfg_2048).values, stft_log_psd(seg, cfg_2048).values)
    np.testing.assert_allclose(
        stft_log_psd(seg, cfg_2048, workers=4).values, stft_log_psd(seg, cfg_2048).values, rtol=0, atol=1e-12
    )


def test_trailing_samples_dropped(cfg_2048: RakeConfig) -> None:
    spec = stft_log_psd(AudioSegment(np.ones(2048 + 100), 8000), cfg_2048)
    assert spec.num_frames == 1


def test_sample_rate_mismatch(cfg_2048: RakeConfig) -> None:
    with pytest.raises(SampleRateError, match="16000 Hz"):
        stft_log_psd(AudioSegment(np.zeros(16000), 16000), cfg_2048)


def test_segment_too_short(cfg_2048: RakeConfig) -> None:
    with pytest.raises(SegmentTooShortError):
        stft_log_psd(AudioSegment(np.zeros(2047), 8000), cfg_2048)
