"""Speech-shaped (LTASS) noise, synthetic babble, and SNR-targeted mixing."""
from __future__ import annotations

import numpy as np

from .levels import SilentInputError, rms

# One-third-octave speech spectrum levels, normal vocal effort (dB per Hz),
# as tabulated in ANSI S3.5-1997 for the speech intelligibility index.
LTASS_BANDS_HZ = (
    160, 200, 250, 315, 400, 500, 630, 800, 1000, 1250,
    1600, 2000, 2500, 3150, 4000, 5000, 6300, 8000,
)
LTASS_LEVELS_DB = (
    32.41, 34.48, 34.75, 33.98, 34.59, 34.27, 32.06, 28.30, 25.01, 23.00,
    20.15, 17.32, 13.18, 11.55, 9.33, 5.31, 2.59, 1.13,
)
# below the table, speech energy falls off at this rate
LTASS_LOW_ROLLOFF_DB_PER_OCT = 12.0

BABBLE_TALKERS = 6
BABBLE_MOD_HZ = 4.0

NOISE_KINDS = ("ltass", "babble")


def ltass_response(freqs) -> np.ndarray:
    """Linear magnitude of the speech spectrum at ``freqs`` (arbitrary scale)."""
    f = np.maximum(np.asarray(freqs, dtype=np.float64), 1.0)
    bands = np.log2(np.asarray(LTASS_BANDS_HZ, dtype=np.float64))
    levels = np.asarray(LTASS_LEVELS_DB)
    lf = np.log2(f)
    db = np.interp(lf, bands, levels)
    below = lf < bands[0]
    db[below] = levels[0] - LTASS_LOW_ROLLOFF_DB_PER_OCT * (bands[0] - lf[below])
    return 10.0 ** (db / 20.0)


def ltass_noise(n: int, fs: int, rng: np.random.Generator) -> np.ndarray:
    """White Gaussian noise shaped to the long-term average speech spectrum, unit RMS."""
    white = rng.standard_normal(n)
    spec = np.fft.rfft(white)
    spec *= ltass_response(np.fft.rfftfreq(n, 1.0 / fs))
    out = np.fft.irfft(spec, n)
    return out / rms(out)


def babble_noise(n: int, fs: int, rng: np.random.Generator,
                 talkers: int = BABBLE_TALKERS, mod_hz: float = BABBLE_MOD_HZ) -> np.ndarray:
    """Sum of ``talkers`` LTASS streams, each fully amplitude-modulated at ``mod_hz``."""
    t = np.arange(n) / fs
    out = np.zeros(n)
    for _ in range(talkers):
        phase = rng.uniform(0.0, 2.0 * np.pi)
        env = 0.5 * (1.0 + np.sin(2.0 * np.pi * mod_hz * t + phase))
        out += env * ltass_noise(n, fs, rng)
    return out / rms(out)


def make_noise(kind: str, n: int, fs: int, rng: np.random.Generator) -> np.ndarray:
    if kind == "ltass":
        return ltass_noise(n, fs, rng)
    if kind == "babble":
        return babble_noise(n, fs, rng)
    raise ValueError(f"unknown noise kind {kind!r}; expected one of {NOISE_KINDS}")


def scale_to_snr(signal, noise, snr_db: float) -> np.ndarray:
    """Scale ``noise`` so that 10 log10(P_signal / P_noise) equals ``snr_db``."""
    if not np.isfinite(snr_db):
        raise ValueError("snr_db must be finite")
    ps = rms(signal)
    if ps <= 0.0:
        raise SilentInputError("cannot set an SNR against a silent signal")
    return noise * (ps / rms(noise)) * 10.0 ** (-snr_db / 20.0)


def add_noise(x, kind: str, snr_db: float, fs: int = 16000, rng=None, return_noise=False):
    """Mix ``kind`` noise into ``x`` at the requested SNR.

    Args:
        x: clean waveform.
        kind: ``"ltass"`` or ``"babble"``.
        snr_db: target signal-to-noise ratio in dB.
        fs: sample rate in Hz.
        rng: ``numpy.random.Generator`` or integer seed.
        return_noise: also return the scaled noise that was added.
    """
    x = np.asarray(x, dtype=np.float64)
    rng = np.random.default_rng(rng)
    noise = scale_to_snr(x, make_noise(kind, len(x), fs, rng), snr_db)
    y = x + noise
    return (y, noise) if return_noise else y
