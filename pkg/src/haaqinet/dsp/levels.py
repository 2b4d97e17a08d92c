"""Level bookkeeping: RMS, SNR and the 65 dB / RMS 1.0 SPL convention."""
from __future__ import annotations

import numpy as np

SPL_REF_DB = 65.0
RMS_REF = 1.0
SPL_SWEEP_LEVELS = (35.0, 45.0, 55.0, 65.0, 75.0, 85.0, 95.0)


class SilentInputError(ValueError):
    """Raised when a level-dependent quantity is requested for a zero-energy signal."""


def rms(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.sqrt(np.mean(x * x)))


def _require_energy(x) -> float:
    r = rms(x)
    if not np.isfinite(r) or r <= 0.0:
        raise SilentInputError("signal has no energy")
    return r


def measure_spl(x) -> float:
    """SPL relative to the convention that RMS 1.0 corresponds to 65 dB."""
    return SPL_REF_DB + 20.0 * np.log10(_require_energy(x) / RMS_REF)


def spl_gain(delta_spl: float) -> float:
    return 10.0 ** (delta_spl / 20.0)


def adjust_spl(x, target_db: float) -> np.ndarray:
    """Scale ``x`` so that ``measure_spl`` of the result equals ``target_db``."""
    x = np.asarray(x, dtype=np.float64)
    delta = float(target_db) - measure_spl(x)
    if delta == 0.0:
        return x.copy()
    return x * spl_gain(delta)


def snr_db(signal, noise) -> float:
    ps = np.mean(np.square(signal, dtype=np.float64))
    pn = np.mean(np.square(noise, dtype=np.float64))
    if ps <= 0 or pn <= 0:
        raise SilentInputError("SNR undefined for a zero-energy component")
    return float(10.0 * np.log10(ps / pn))
