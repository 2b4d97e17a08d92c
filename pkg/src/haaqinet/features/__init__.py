from .encoder import (
    Adapter,
    EncoderConfig,
    LayerFusion,
    TransformerEncoder,
    count_parameters,
    freeze,
    layer_norm,
    weighted_sum,
)
from .spectral import FeatureShapeError, log_spectrogram, prep_fbank, spectrogram, window_average

__all__ = [
    "Adapter", "EncoderConfig", "FeatureShapeError", "LayerFusion", "TransformerEncoder",
    "count_parameters", "freeze", "layer_norm", "log_spectrogram", "prep_fbank", "spectrogram",
    "weighted_sum", "window_average",
]
