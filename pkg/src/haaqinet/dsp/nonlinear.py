"""Nonlinear hearing-aid style processing: clipping, quantization, WDRC, spectral subtraction."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.signal import firwin, istft, lfilter, stft

from .filters import fir_zero_phase
from .levels import SPL_REF_DB


def peak_clip(x, threshold: float = 1.0, level: float | None = None) -> np.ndarray:
    """Symmetric instantaneous clipping.

    The clamp is ``threshold * max|x|`` unless an absolute ``level`` is given.
    """
    x = np.asarray(x, dtype=np.float64)
    if level is None:
        if not 0.0 < threshold <= 1.0:
            raise ValueError("threshold must lie in (0, 1]")
        level = threshold * float(np.max(np.abs(x)))
    return np.clip(x, -level, level)


def quantize(x, bits: int) -> np.ndarray:
    """Mid-tread uniform quantizer over [-1, 1]; out-of-range input saturates."""
    if int(bits) != bits or bits < 2:
        raise ValueError("bits must be an integer >= 2")
    steps = 2 ** (int(bits) - 1) - 1
    x = np.clip(np.asarray(x, dtype=np.float64), -1.0, 1.0)
    return np.round(x * steps) / steps


# -- WDRC ------------------------------------------------------------------

@dataclass(frozen=True)
class WdrcConfig:
    channels: int = 6
    ratio: float = 3.0
    knee_db: float = 45.0
    attack_ms: float = 5.0
    release_ms: float = 50.0
    low_crossover_hz: float = 250.0
    high_crossover_hz: float = 4000.0
    numtaps: int = 511

    def validate(self):
        if self.channels < 1 or self.ratio < 1.0 or self.attack_ms <= 0 or self.release_ms <= 0:
            raise ValueError(f"invalid WDRC config: {self}")
        if not np.isfinite(self.knee_db):
            raise ValueError("knee must be finite")

    def to_dict(self):
        return asdict(self)


def crossover_bank(channels: int, fs: int, lo: float, hi: float, numtaps: int) -> list:
    """Complementary FIR bands that sum exactly to a unit impulse."""
    if channels == 1:
        h = np.zeros(numtaps)
        h[(numtaps - 1) // 2] = 1.0
        return [h]
    edges = np.geomspace(lo, hi, channels - 1) if channels > 2 else np.array([np.sqrt(lo * hi)])
    lps = [firwin(numtaps, f, fs=fs) for f in edges]
    delta = np.zeros(numtaps)
    delta[(numtaps - 1) // 2] = 1.0
    bands = [lps[0]]
    bands += [lps[i] - lps[i - 1] for i in range(1, len(lps))]
    bands.append(delta - lps[-1])
    return bands


def _attack_release(level_db, a_att, a_rel):
    out = np.empty_like(level_db)
    e = float(level_db[0]) if len(level_db) else 0.0
    for i, v in enumerate(level_db.tolist()):
        a = a_att if v > e else a_rel
        e = a * e + (1.0 - a) * v
        out[i] = e
    return out


def channel_level_db(band, fs, cfg):
    """Band level trace in dB: symmetric power smoothing, then attack/release on the dB value."""
    a_att = np.exp(-1.0 / (cfg.attack_ms * 1e-3 * fs))
    a_rel = np.exp(-1.0 / (cfg.release_ms * 1e-3 * fs))
    # symmetric pre-smoothing removes carrier ripple without biasing toward peaks
    power = lfilter([1.0 - a_att], [1.0, -a_att], band * band)
    level = SPL_REF_DB + 10.0 * np.log10(np.maximum(power, 1e-20))
    return _attack_release(level, a_att, a_rel)


def compression_gain_db(level_db, ratio, knee_db):
    """Static curve: above the knee, output rises 1/ratio dB per input dB."""
    return -(1.0 - 1.0 / ratio) * np.maximum(0.0, level_db - knee_db)


def wdrc(x, cfg: WdrcConfig = WdrcConfig(), fs: int = 16000) -> np.ndarray:
    """Multi-channel wide dynamic range compression.

    Each channel follows its power envelope with separate attack and
    release time constants; levels use the 65 dB / RMS 1.0 convention.
    """
    cfg.validate()
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    for h in crossover_bank(cfg.channels, fs, cfg.low_crossover_hz, cfg.high_crossover_hz, cfg.numtaps):
        band = fir_zero_phase(x, h) if cfg.channels > 1 else x
        if cfg.ratio == 1.0:
            out += band
            continue
        level = channel_level_db(band, fs, cfg)
        out += band * 10.0 ** (compression_gain_db(level, cfg.ratio, cfg.knee_db) / 20.0)
    return out


# -- spectral subtraction --------------------------------------------------

@dataclass(frozen=True)
class SpecSubConfig:
    alpha: float = 2.0
    beta: float = 0.05
    noise_source: str = "min-stats"  # min-stats | reference | reference-mean | zeros
    percentile: float = 20.0
    nperseg: int = 512
    hop: int = 128

    def validate(self):
        if self.alpha <= 0 or not 0.0 < self.beta < 1.0:
            raise ValueError(f"invalid spectral subtraction config: {self}")
        if self.noise_source not in ("min-stats", "reference", "reference-mean", "zeros"):
            raise ValueError(f"unknown noise source {self.noise_source!r}")

    def to_dict(self):
        return asdict(self)


def subtract_magnitudes(mag, noise_mag, alpha, beta):
    """max(|X| - alpha |N|, beta |X|)."""
    return np.maximum(mag - alpha * noise_mag, beta * mag)


def _rayleigh_mean_over_quantile(p):
    # ratio mean / p-quantile of a Rayleigh variable
    return np.sqrt(np.pi / 2.0) / np.sqrt(-2.0 * np.log(1.0 - p))


def _stft(x, cfg, fs):
    return stft(x, fs=fs, window="hann", nperseg=cfg.nperseg,
                noverlap=cfg.nperseg - cfg.hop, boundary="zeros", padded=True)[2]


def spectral_subtract(x, cfg: SpecSubConfig = SpecSubConfig(), fs: int = 16000, noise=None) -> np.ndarray:
    """STFT-magnitude subtraction keeping the input phase; length-preserving."""
    cfg.validate()
    x = np.asarray(x, dtype=np.float64)
    X = _stft(x, cfg, fs)
    mag = np.abs(X)
    if cfg.noise_source == "zeros":
        nmag = np.zeros_like(mag)
    elif cfg.noise_source == "min-stats":
        q = np.percentile(mag, cfg.percentile, axis=1, keepdims=True)
        nmag = q * _rayleigh_mean_over_quantile(cfg.percentile / 100.0)
    else:
        if noise is None:
            raise ValueError(f"noise source {cfg.noise_source!r} needs a noise reference")
        nmag = np.abs(_stft(np.asarray(noise, dtype=np.float64), cfg, fs))
        if cfg.noise_source == "reference-mean":
            nmag = nmag.mean(axis=1, keepdims=True)
    S = subtract_magnitudes(mag, nmag, cfg.alpha, cfg.beta) * np.exp(1j * np.angle(X))
    y = istft(S, fs=fs, window="hann", nperseg=cfg.nperseg,
              noverlap=cfg.nperseg - cfg.hop, boundary=True)[1]
    if len(y) < len(x):
        y = np.pad(y, (0, len(x) - len(y)))
    return y[:len(x)]
