"""A built-in intrusive quality proxy for desk-scale labeling.

Both signals are split into log-spaced bands; per-band dB envelopes are
floored at the listener's interpolated threshold and correlated. The
energy-weighted mean correlation passes through a logistic normalized so
that a correlation of 1 maps to exactly 1, and the result is scaled down by
the long-term spectral deviation between the two signals. This is not
HAAQI; it only shares the direction of its judgments.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.signal import butter, sosfiltfilt

from .audiogram import FREQUENCIES
from .dsp.levels import SPL_REF_DB


@dataclass(frozen=True)
class ProxyConfig:
    n_bands: int = 16
    f_lo: float = 125.0
    f_hi: float = 7000.0
    frame_ms: float = 8.0
    slope: float = 6.0
    midpoint: float = 0.5
    max_deviation_db: float = 30.0
    hl_to_spl_db: float = 0.0

    def to_dict(self):
        return asdict(self)


def band_edges(cfg: ProxyConfig) -> np.ndarray:
    return np.geomspace(cfg.f_lo, cfg.f_hi, cfg.n_bands + 1)


def band_envelopes_db(x, fs: int, cfg: ProxyConfig) -> np.ndarray:
    """(n_bands, n_frames) frame RMS levels in dB SPL (65 dB at RMS 1.0)."""
    x = np.asarray(x, dtype=np.float64)
    edges = band_edges(cfg)
    hop = int(round(cfg.frame_ms * fs / 1000.0))
    n = len(x) // hop
    if n < 2:
        raise ValueError("signal too short for envelope analysis")
    out = np.empty((cfg.n_bands, n))
    for b in range(cfg.n_bands):
        sos = butter(4, [edges[b], edges[b + 1]], btype="bandpass", fs=fs, output="sos")
        y = sosfiltfilt(sos, x)[:n * hop].reshape(n, hop)
        out[b] = SPL_REF_DB + 10.0 * np.log10(np.mean(y * y, axis=1) + 1e-20)
    return out


def band_thresholds_db(thresholds, cfg: ProxyConfig) -> np.ndarray:
    centres = np.sqrt(band_edges(cfg)[:-1] * band_edges(cfg)[1:])
    t = np.interp(np.log(centres), np.log(FREQUENCIES), np.asarray(thresholds, dtype=np.float64))
    return t + cfg.hl_to_spl_db


def normalized_logistic(c, slope: float, midpoint: float) -> float:
    """Logistic rescaled so that c = -1 -> 0 and c = 1 -> 1 exactly."""
    if c >= 1.0:
        return 1.0
    f = lambda v: 1.0 / (1.0 + np.exp(-slope * (v - midpoint)))
    lo, hi = f(-1.0), f(1.0)
    return float(np.clip((f(c) - lo) / (hi - lo), 0.0, 1.0))


def _corr(a, b):
    if np.array_equal(a, b):
        return 1.0
    a, b = a - a.mean(), b - b.mean()
    den = np.sqrt(np.sum(a * a) * np.sum(b * b))
    if den == 0.0:
        return 0.0
    return float(np.clip(np.sum(a * b) / den, -1.0, 1.0))


def proxy_score(reference, processed, thresholds=None, fs: int = 16000, cfg: ProxyConfig = ProxyConfig()) -> float:
    """Quality of ``processed`` against ``reference`` in [0, 1]; identical inputs score 1."""
    reference = np.asarray(reference, dtype=np.float64)
    processed = np.asarray(processed, dtype=np.float64)
    if reference.shape != processed.shape:
        raise ValueError(f"length mismatch: {reference.shape} vs {processed.shape}")
    er = band_envelopes_db(reference, fs, cfg)
    ep = band_envelopes_db(processed, fs, cfg)
    floor = band_thresholds_db(np.zeros(len(FREQUENCIES)) if thresholds is None else thresholds, cfg)
    er = np.maximum(er, floor[:, None])
    ep = np.maximum(ep, floor[:, None])
    w = np.mean(10.0 ** (er / 10.0), axis=1)
    w = w / w.sum()
    c = float(np.sum(w * np.array([_corr(er[b], ep[b]) for b in range(cfg.n_bands)])))
    lt_r = 10.0 * np.log10(np.mean(10.0 ** (er / 10.0), axis=1))
    lt_p = 10.0 * np.log10(np.mean(10.0 ** (ep / 10.0), axis=1))
    deviation = float(np.sum(w * np.abs(lt_r - lt_p)))
    factor = max(0.0, 1.0 - deviation / cfg.max_deviation_db)
    return float(np.clip(normalized_logistic(c, cfg.slope, cfg.midpoint) * factor, 0.0, 1.0))
