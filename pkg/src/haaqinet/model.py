"""Full models: a feature front end feeding the quality predictor.

Variants differ only in what reaches the predictor:

    spectrogram   log(1 + |STFT|), 257 bins
    last          last encoder layer as is
    last-winavg   last encoder layer, averaged over groups of 3 features
    last-adapter  last encoder layer through the adapter
    ws            softmax-weighted sum of all layers
    ws-adapter    weighted sum through the adapter
    student       3-layer student encoder, fused head output through the adapter

For the frozen-teacher variants the encoder runs once per clip and its
outputs are cached as the model's raw input; only fusion, adapter and the
predictor train.
"""
from __future__ import annotations

from dataclasses import replace

import numpy as np
import torch
import torch.nn as nn

from .distill import StudentConfig, StudentEncoder, transfer_init
from .features.encoder import Adapter, EncoderConfig, LayerFusion, TransformerEncoder, window_average_t
from .features.spectral import log_spectrogram, prep_fbank
from .predictor import PredictorConfig, QualityPrediction, QualityPredictor

VARIANTS = ("spectrogram", "last", "last-winavg", "last-adapter", "ws", "ws-adapter", "student")
ENCODER_VARIANTS = ("last", "last-winavg", "last-adapter", "ws", "ws-adapter")


def feature_dim(variant: str, enc_cfg: EncoderConfig, winavg_k: int = 3) -> int:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; choose from {VARIANTS}")
    if variant in ("spectrogram", "last-adapter", "ws-adapter", "student"):
        return 257
    if variant == "last-winavg":
        return enc_cfg.model_dim // winavg_k
    return enc_cfg.model_dim


class HaaqiNet(nn.Module):
    def __init__(self, variant: str, enc_cfg: EncoderConfig = EncoderConfig(),
                 pred_cfg: PredictorConfig = PredictorConfig(), student_cfg: StudentConfig | None = None,
                 winavg_k: int = 3):
        super().__init__()
        self.variant, self.enc_cfg, self.winavg_k = variant, enc_cfg, winavg_k
        self.fusion = LayerFusion(enc_cfg.num_layers) if variant.startswith("ws") else None
        self.adapter = Adapter(enc_cfg.model_dim) if variant.endswith("adapter") or variant == "student" else None
        self.student = StudentEncoder(enc_cfg, student_cfg or StudentConfig()) if variant == "student" else None
        self.predictor = QualityPredictor(replace(pred_cfg, feature_dim=feature_dim(variant, enc_cfg, winavg_k)))

    def project(self, x):
        """Last front-end step shared by all encoder paths."""
        if self.variant == "last-winavg":
            return window_average_t(x, self.winavg_k)
        return self.adapter(x) if self.adapter is not None else x

    def token_lengths(self, lengths):
        if self.variant != "student":
            return lengths
        c = self.enc_cfg
        return (torch.as_tensor(lengths) // c.patch_frames) * (c.mel_bins // c.patch_bins)

    def features(self, raw, lengths=None):
        """Predictor input; ``lengths`` (in the predictor's frame units) masks student attention."""
        if self.variant == "spectrogram" or self.variant == "last":
            return raw
        if self.variant == "student":
            mask = None
            if lengths is not None:
                t = self.enc_cfg.tokens_for_frames(raw.shape[1])
                mask = torch.arange(t)[None, :] < torch.as_tensor(lengths)[:, None]
            return self.project(self.student(raw, mask)[1])
        if self.fusion is not None:
            raw = self.fusion(raw)
        return self.project(raw)

    def forward(self, raw, hearing_loss, lengths=None, return_attention=False):
        if lengths is not None:
            lengths = self.token_lengths(lengths)
        return self.predictor(self.features(raw, lengths), hearing_loss, lengths, return_attention=return_attention)


def build_model(variant: str, enc_cfg: EncoderConfig, pred_cfg: PredictorConfig, seed: int,
                student_cfg: StudentConfig | None = None, teacher: TransformerEncoder | None = None,
                dtype=torch.float32, winavg_k: int = 3) -> HaaqiNet:
    """Seeded model; the student variant is transfer-initialized from ``teacher`` when given."""
    with torch.random.fork_rng():
        torch.manual_seed(int(seed))
        model = HaaqiNet(variant, enc_cfg, pred_cfg, student_cfg, winavg_k)
    model = model.to(dtype)
    if variant == "student" and teacher is not None:
        model.student = transfer_init(teacher, model.student.cfg, seed)
    return model


def extract_raw(x, variant: str, teacher: TransformerEncoder | None = None, fs: int = 16000) -> np.ndarray:
    """Per-clip model input for ``variant``.

    spectrogram -> (T, 257); student -> normalized fbank (T, mel_bins);
    last* -> last teacher layer (T', D); ws* -> all layers stacked (L, T', D).
    """
    if variant == "spectrogram":
        return log_spectrogram(x, fs)
    fb = prep_fbank(x, fs, teacher.cfg.mel_bins if teacher is not None else 64)
    if variant == "student":
        return fb
    if variant not in ENCODER_VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    if teacher is None:
        raise ValueError(f"variant {variant!r} needs the teacher encoder")
    with torch.no_grad():
        outs = teacher(torch.as_tensor(fb[None], dtype=next(teacher.parameters()).dtype))
    if variant.startswith("ws"):
        return np.stack([o[0].numpy() for o in outs])
    return outs[-1][0].numpy()


def predict(model: HaaqiNet, raw: np.ndarray, hearing_loss, dtype=torch.float32) -> QualityPrediction:
    """Score one clip; raises on non-finite weights."""
    for name, p in model.named_parameters():
        if not torch.isfinite(p).all():
            raise FloatingPointError(f"non-finite weights in {name}")
    model.eval()
    with torch.no_grad():
        r = torch.as_tensor(raw, dtype=dtype)
        r = r[:, None] if r.dim() == 3 else r[None]
        hl = torch.as_tensor(np.asarray(hearing_loss)[None], dtype=dtype)
        clip, frames = model(r, hl)
    return QualityPrediction(float(clip[0]), frames[0].numpy())
