from __future__ import annotations

import math
from typing import Callable

import numpy as np
import pytest

from ssbshift.config import RakeConfig
from ssbshift.simulate import ChannelSpec, VoiceSpec, apply_channel, synth_voice
from ssbshift.spectral import AudioSegment


@pytest.fixture
def cfg_2048() -> RakeConfig:
    return RakeConfig(fft_size=2048)


@pytest.fixture
def ssb() -> Callable[..., AudioSegment]:
    """Render a voice through a single sideband channel."""

    def render(voice: VoiceSpec, cfd_hz: float, snr_db: float = math.inf, seed: int = 0) -> AudioSegment:
        return apply_channel(synth_voice(voice), ChannelSpec(cfd_hz=cfd_hz, snr_db=snr_db), seed=seed)

    return render


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
