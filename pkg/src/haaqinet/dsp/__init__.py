from .audio_io import read_wav, write_wav
from .conditions import (
    ProcessingCondition,
    Stage,
    apply_condition,
    default_bank,
    derive_seed,
    unseen_ids,
)
from .filters import FilterSpec, linear_filter, response_db
from .levels import SilentInputError, adjust_spl, measure_spl, rms, snr_db
from .noise import add_noise, babble_noise, ltass_noise
from .nonlinear import SpecSubConfig, WdrcConfig, peak_clip, quantize, spectral_subtract, wdrc

__all__ = [
    "FilterSpec", "ProcessingCondition", "SilentInputError", "SpecSubConfig", "Stage", "WdrcConfig",
    "add_noise", "adjust_spl", "apply_condition", "babble_noise", "default_bank", "derive_seed",
    "linear_filter", "ltass_noise", "measure_spl", "peak_clip", "quantize", "read_wav", "response_db",
    "rms", "snr_db", "spectral_subtract", "unseen_ids", "wdrc", "write_wav",
]
