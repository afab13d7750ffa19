from ssbshift.config import RakeConfig, load_config
from ssbshift.estimator import CfdEstimate, estimate_cfd, estimate_segment
from ssbshift.rake import gamma_direct, gamma_pc, reduce_max
from ssbshift.spectral import AudioSegment, stft_log_psd

__all__ = [
    "AudioSegment",
    "CfdEstimate",
    "RakeConfig",
    "estimate_cfd",
    "estimate_segment",
    "gamma_direct",
    "gamma_pc",
    "load_config",
    "reduce_max",
    "stft_log_psd",
]
