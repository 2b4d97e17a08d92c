"""Linear-phase FIR filters for the linear-processing conditions.

Every filter is an odd-length windowed design applied with its group delay
removed, so the output stays time-aligned with the input.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve, firwin, firwin2

DEFAULT_TAPS = 255
# frequency-sampling grid for firwin2 designs
_GRID_POINTS = 8193

FILTER_KINDS = (
    "lowpass", "highpass", "bandpass", "tilt",
    "resonance", "multi-resonance", "multi-resonance-lowpass",
)


class FilterSpecError(ValueError):
    pass


@dataclass(frozen=True)
class FilterSpec:
    """Declarative filter description.

    ``params`` per kind:
        lowpass / highpass: ``cutoff``
        bandpass: ``low``, ``high``
        tilt: ``slope_db_per_oct`` (positive boosts highs), optional ``ref_hz``
        resonance: ``center``, ``q``, ``gain_db``
        multi-resonance: ``centers`` (3 values), ``q``, ``gain_db``
        multi-resonance-lowpass: as multi-resonance plus ``cutoff``
    """

    kind: str
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"kind": self.kind, **self.params}

    @classmethod
    def from_dict(cls, d: dict) -> "FilterSpec":
        d = dict(d)
        kind = d.pop("kind")
        return cls(kind, d)


def _odd(n: int) -> int:
    n = int(n)
    return n if n % 2 else n + 1


def _check_cutoff(f, fs):
    if not 0.0 < f < fs / 2.0:
        raise FilterSpecError(f"cutoff {f} Hz must lie in (0, {fs / 2.0:g}) Hz")


def peaking_gain_db(freqs, center, q, gain_db, fs):
    """Magnitude (dB) of a peaking-EQ biquad (Audio EQ Cookbook form)."""
    a = 10.0 ** (gain_db / 40.0)
    w0 = 2.0 * math.pi * center / fs
    alpha = math.sin(w0) / (2.0 * q)
    b = np.array([1 + alpha * a, -2 * math.cos(w0), 1 - alpha * a])
    den = np.array([1 + alpha / a, -2 * math.cos(w0), 1 - alpha / a])
    z = np.exp(-1j * 2.0 * np.pi * np.asarray(freqs) / fs)
    h = (b[0] + b[1] * z + b[2] * z * z) / (den[0] + den[1] * z + den[2] * z * z)
    return 20.0 * np.log10(np.abs(h))


def _resonance_taps(centers, q, fs, base):
    # resolve the narrowest peak: bandwidth center/q needs ~8 fs/bw taps
    narrowest = min(centers) / q
    return _odd(max(base, math.ceil(8.0 * fs / narrowest)))


def _design_from_db(gain_db_fn, numtaps, fs):
    grid = np.linspace(0.0, fs / 2.0, _GRID_POINTS)
    mag = 10.0 ** (gain_db_fn(grid) / 20.0)
    return firwin2(numtaps, grid / (fs / 2.0), mag, window="hamming")


def design_filter(spec: FilterSpec, fs: int = 16000, numtaps: int = DEFAULT_TAPS) -> list:
    """Return the FIR stages (list of tap arrays) realizing ``spec``."""
    p = spec.params
    numtaps = _odd(numtaps)
    k = spec.kind
    if k == "lowpass":
        _check_cutoff(p["cutoff"], fs)
        return [firwin(numtaps, p["cutoff"], fs=fs)]
    if k == "highpass":
        _check_cutoff(p["cutoff"], fs)
        return [firwin(numtaps, p["cutoff"], pass_zero=False, fs=fs)]
    if k == "bandpass":
        _check_cutoff(p["low"], fs)
        _check_cutoff(p["high"], fs)
        if p["low"] >= p["high"]:
            raise FilterSpecError("bandpass needs low < high")
        return [firwin(numtaps, [p["low"], p["high"]], pass_zero=False, fs=fs)]
    if k == "tilt":
        slope = float(p["slope_db_per_oct"])
        ref = float(p.get("ref_hz", 1000.0))
        lo, hi = float(p.get("min_hz", 125.0)), min(float(p.get("max_hz", 8000.0)), fs / 2.0)

        def tilt_db(f):
            return slope * np.log2(np.clip(f, lo, hi) / ref)

        return [_design_from_db(tilt_db, numtaps, fs)]
    if k in ("resonance", "multi-resonance", "multi-resonance-lowpass"):
        centers = [p["center"]] if k == "resonance" else list(p["centers"])
        if k != "resonance" and len(centers) != 3:
            raise FilterSpecError("multi-resonance takes exactly 3 centers")
        for c in centers:
            _check_cutoff(c, fs)
        q, g = float(p.get("q", 10.0)), float(p.get("gain_db", 10.0))

        def peaks_db(f):
            return sum(peaking_gain_db(f, c, q, g, fs) for c in centers)

        stages = [_design_from_db(peaks_db, _resonance_taps(centers, q, fs, numtaps), fs)]
        if k == "multi-resonance-lowpass":
            _check_cutoff(p["cutoff"], fs)
            stages.append(firwin(numtaps, p["cutoff"], fs=fs))
        return stages
    raise FilterSpecError(f"unknown filter kind {k!r}; expected one of {FILTER_KINDS}")


def fir_zero_phase(x, h) -> np.ndarray:
    """Convolve with an odd-length linear-phase FIR and remove its delay."""
    d = (len(h) - 1) // 2
    return fftconvolve(x, h)[d:d + len(x)]


def linear_filter(x, spec: FilterSpec, fs: int = 16000, numtaps: int = DEFAULT_TAPS) -> np.ndarray:
    y = np.asarray(x, dtype=np.float64)
    for h in design_filter(spec, fs, numtaps):
        y = fir_zero_phase(y, h)
    return y


def response_db(spec: FilterSpec, freqs, fs: int = 16000, numtaps: int = DEFAULT_TAPS) -> np.ndarray:
    """Magnitude response (dB) of the designed filter at ``freqs``."""
    freqs = np.asarray(freqs, dtype=np.float64)
    total = np.zeros_like(freqs)
    for h in design_filter(spec, fs, numtaps):
        n = np.arange(len(h)) - (len(h) - 1) / 2
        hz = np.exp(-2j * np.pi * np.outer(freqs, n) / fs) @ h
        total += 20.0 * np.log10(np.maximum(np.abs(hz), 1e-12))
    return total
