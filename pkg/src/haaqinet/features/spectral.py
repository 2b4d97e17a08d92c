"""Frame-level spectral features: STFT magnitude and normalized log-mel filterbanks."""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

SPEC_NFFT = 512
SPEC_HOP = 256
SPEC_BINS = SPEC_NFFT // 2 + 1

FBANK_WIN_MS = 25.0
FBANK_HOP_MS = 10.0
FBANK_NFFT = 512
LOG_FLOOR = 1e-10


class FeatureShapeError(ValueError):
    pass


def _frames(x, win, hop):
    x = np.asarray(x, dtype=np.float64)
    if len(x) < win:
        raise FeatureShapeError(f"input of {len(x)} samples is shorter than one {win}-sample window")
    return sliding_window_view(x, win)[::hop]


def spectrogram(x, fs: int = 16000) -> np.ndarray:
    """Magnitude STFT, 512-point Hamming window, hop 256: shape (T, 257)."""
    if fs != 16000:
        raise ValueError(f"spectrogram expects 16 kHz input, got {fs} Hz")
    frames = _frames(x, SPEC_NFFT, SPEC_HOP) * np.hamming(SPEC_NFFT)
    return np.abs(np.fft.rfft(frames, n=SPEC_NFFT, axis=1))


def log_spectrogram(x, fs: int = 16000) -> np.ndarray:
    """log(1 + |STFT|), the compressed form fed to the quality predictor."""
    return np.log1p(spectrogram(x, fs))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, nfft: int, fs: int, fmin: float = 20.0, fmax: float | None = None) -> np.ndarray:
    """Triangular HTK-style mel filters, shape (n_mels, nfft // 2 + 1)."""
    fmax = fs / 2.0 if fmax is None else fmax
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    bins = np.fft.rfftfreq(nfft, 1.0 / fs)
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (bins - lo) / (mid - lo)
    down = (hi - bins) / (hi - mid)
    return np.maximum(0.0, np.minimum(up, down))


def fbank_frame_count(n_samples: int, fs: int = 16000) -> int:
    win = int(round(FBANK_WIN_MS * fs / 1000.0))
    hop = int(round(FBANK_HOP_MS * fs / 1000.0))
    return 0 if n_samples < win else 1 + (n_samples - win) // hop


def log_mel(x, fs: int = 16000, n_mels: int = 64) -> np.ndarray:
    """Un-normalized log mel energies, shape (T, n_mels)."""
    win = int(round(FBANK_WIN_MS * fs / 1000.0))
    hop = int(round(FBANK_HOP_MS * fs / 1000.0))
    frames = _frames(x, win, hop) * np.hamming(win)
    power = np.abs(np.fft.rfft(frames, n=FBANK_NFFT, axis=1)) ** 2
    energies = power @ mel_filterbank(n_mels, FBANK_NFFT, fs).T
    return np.log(np.maximum(energies, LOG_FLOOR))


def prep_fbank(x, fs: int = 16000, n_mels: int = 64) -> np.ndarray:
    """Per-clip mean/variance normalized log-mel frames (25 ms window, 10 ms hop)."""
    if fs != 16000:
        raise ValueError(f"filterbank front end expects 16 kHz input, got {fs} Hz")
    lm = log_mel(x, fs, n_mels)
    mu = lm.mean(axis=0, keepdims=True)
    sd = lm.std(axis=0, keepdims=True)
    live = sd > 1e-8
    # constant bins (e.g. silence at the floor) normalize to exactly zero
    return np.where(live, (lm - mu) / np.where(live, sd, 1.0), 0.0)


def window_average(x, k: int = 3) -> np.ndarray:
    """Mean over non-overlapping groups of ``k`` features; a trailing remainder is dropped."""
    x = np.asarray(x, dtype=np.float64)
    f = x.shape[-1]
    if k < 1 or k > f:
        raise FeatureShapeError(f"window size {k} invalid for {f} features")
    n = f // k
    return x[..., :n * k].reshape(*x.shape[:-1], n, k).mean(axis=-1)
