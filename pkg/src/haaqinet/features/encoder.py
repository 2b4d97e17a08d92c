"""A BEATs-shaped transformer encoder at desk scale, plus layer fusion and the adapter.

fbank frames -> patch embedding -> layer norm -> L pre-norm transformer
layers. Every layer's output is returned so downstream code can fuse them.
Tokens are ordered time-major over (time patch, frequency patch).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

LN_EPS = 1e-8
PREDICTOR_FEATURE_DIM = 257


@dataclass(frozen=True)
class EncoderConfig:
    num_layers: int = 12
    model_dim: int = 96
    num_heads: int = 4
    ff_dim: int = 192
    mel_bins: int = 64
    patch_frames: int = 4
    patch_bins: int = 16

    def __post_init__(self):
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if self.model_dim % self.num_heads:
            raise ValueError("model_dim must be divisible by num_heads")
        if self.mel_bins % self.patch_bins:
            raise ValueError("mel_bins must be a multiple of patch_bins")

    def to_dict(self):
        return asdict(self)

    def tokens_for_frames(self, n_frames: int) -> int:
        return (n_frames // self.patch_frames) * (self.mel_bins // self.patch_bins)


class MultiHeadSelfAttention(nn.Module):
    """Scaled dot-product self-attention that can hand back its attention maps."""

    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        if dim % num_heads:
            raise ValueError(f"dim {dim} not divisible by {num_heads} heads")
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x, key_padding_mask=None, return_weights: bool = False):
        b, t, d = x.shape
        qkv = self.qkv(x).view(b, t, 3, self.num_heads, self.head_dim).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        if key_padding_mask is not None:
            scores = scores.masked_fill(key_padding_mask[:, None, None, :], float("-inf"))
        weights = scores.softmax(dim=-1)
        out = (weights @ v).transpose(1, 2).reshape(b, t, d)
        out = self.proj(out)
        return (out, weights) if return_weights else out


class EncoderLayer(nn.Module):
    def __init__(self, dim: int, num_heads: int, ff_dim: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = MultiHeadSelfAttention(dim, num_heads)
        self.norm2 = nn.LayerNorm(dim)
        self.ff = nn.Sequential(nn.Linear(dim, ff_dim), nn.GELU(), nn.Linear(ff_dim, dim))

    def forward(self, x, return_weights=False, key_padding_mask=None):
        a, w = self.attn(self.norm1(x), key_padding_mask=key_padding_mask, return_weights=True)
        x = x + a
        x = x + self.ff(self.norm2(x))
        return (x, w) if return_weights else x


class PatchEmbed(nn.Module):
    """Strided linear map over non-overlapping (frames x bins) patches."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.proj = nn.Conv2d(1, cfg.model_dim, kernel_size=(cfg.patch_frames, cfg.patch_bins),
                              stride=(cfg.patch_frames, cfg.patch_bins))

    def forward(self, fb):
        if fb.dim() != 3 or fb.shape[-1] != self.cfg.mel_bins:
            raise ValueError(f"expected (batch, frames, {self.cfg.mel_bins}) input, got {tuple(fb.shape)}")
        t = (fb.shape[1] // self.cfg.patch_frames) * self.cfg.patch_frames
        if t == 0:
            raise ValueError(f"need at least {self.cfg.patch_frames} frames")
        x = self.proj(fb[:, None, :t, :])            # (B, D, T', F')
        return x.permute(0, 2, 3, 1).flatten(1, 2)   # (B, T'*F', D)


class TransformerEncoder(nn.Module):
    def __init__(self, cfg: EncoderConfig = EncoderConfig()):
        super().__init__()
        self.cfg = cfg
        self.patch_embed = PatchEmbed(cfg)
        self.norm = nn.LayerNorm(cfg.model_dim)
        self.layers = nn.ModuleList(
            EncoderLayer(cfg.model_dim, cfg.num_heads, cfg.ff_dim) for _ in range(cfg.num_layers))

    @classmethod
    def from_seed(cls, cfg: EncoderConfig, seed: int, dtype=torch.float32) -> "TransformerEncoder":
        with torch.random.fork_rng():
            torch.manual_seed(int(seed))
            model = cls(cfg)
        return model.to(dtype)

    def embed(self, fb):
        return self.norm(self.patch_embed(fb))

    def forward(self, fb, num_layers: int | None = None, return_attention: bool = False):
        """All layer outputs (list of (B, T', D) tensors), optionally with attention maps."""
        x = self.embed(fb)
        outs, maps = [], []
        for layer in self.layers[:num_layers]:
            x, w = layer(x, return_weights=True)
            outs.append(x)
            maps.append(w)
        return (outs, maps) if return_attention else outs


def freeze(module: nn.Module) -> nn.Module:
    module.eval()
    for p in module.parameters():
        p.requires_grad_(False)
    return module


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def layer_norm(x):
    """Non-parametric layer norm over the feature axis."""
    return F.layer_norm(x, x.shape[-1:], eps=LN_EPS)


def weighted_sum(layer_outputs, logits):
    """sum_i LN(X_i) * softmax(logits)_i over a list (or stacked tensor) of layer outputs."""
    if isinstance(layer_outputs, (list, tuple)):
        layer_outputs = torch.stack(list(layer_outputs))
    if layer_outputs.shape[0] != logits.shape[0]:
        raise ValueError(f"{layer_outputs.shape[0]} layers but {logits.shape[0]} weights")
    w = logits.softmax(dim=0).to(layer_outputs.dtype)
    return torch.einsum("l,l...->...", w, layer_norm(layer_outputs))


class LayerFusion(nn.Module):
    """Learnable softmax weighting over encoder layers."""

    def __init__(self, num_layers: int):
        super().__init__()
        self.logits = nn.Parameter(torch.zeros(num_layers))

    def forward(self, layer_outputs):
        return weighted_sum(layer_outputs, self.logits)


class Adapter(nn.Linear):
    """Dense projection of encoder features onto the predictor's input width."""

    def __init__(self, in_dim: int, out_dim: int = PREDICTOR_FEATURE_DIM):
        super().__init__(in_dim, out_dim)


def window_average_t(x, k: int = 3):
    f = x.shape[-1]
    if k < 1 or k > f:
        raise ValueError(f"window size {k} invalid for {f} features")
    n = f // k
    return x[..., :n * k].reshape(*x.shape[:-1], n, k).mean(dim=-1)
