"""Mono WAV input/output with resampling to the 16 kHz working rate."""
from __future__ import annotations

from math import gcd

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

WORKING_RATE = 16000


def read_wav(path, target_fs: int = WORKING_RATE) -> tuple:
    """Read a WAV as float64 in [-1, 1] (PCM) or as stored (float), mixed to mono.

    Inputs at other rates are resampled to ``target_fs``.
    """
    fs, data = wavfile.read(path)
    if np.issubdtype(data.dtype, np.integer):
        data = data.astype(np.float64) / float(np.iinfo(data.dtype).max)
    else:
        data = data.astype(np.float64)
    if data.ndim > 1:
        data = data.mean(axis=1)
    if target_fs and fs != target_fs:
        g = gcd(fs, target_fs)
        data = resample_poly(data, target_fs // g, fs // g)
        fs = target_fs
    return data, fs


def write_wav(path, x, fs: int = WORKING_RATE, fmt: str = "float32") -> None:
    """Write mono audio. ``fmt`` is ``"float32"`` (level-preserving) or ``"pcm16"`` (clips to +-1)."""
    x = np.asarray(x, dtype=np.float64)
    if fmt == "pcm16":
        data = np.round(np.clip(x, -1.0, 1.0) * 32767.0).astype(np.int16)
    elif fmt == "float32":
        data = x.astype(np.float32)
    else:
        raise ValueError(f"unknown WAV format {fmt!r}")
    wavfile.write(path, fs, data)
