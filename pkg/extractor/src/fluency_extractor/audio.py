"""Audio loading for extraction: mono float32 at 16 kHz."""

from __future__ import annotations

from math import gcd
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

TARGET_SR = 16000


def load_wav_16k(path: str | Path) -> np.ndarray:
    sr, data = wavfile.read(path)
    if data.dtype == np.int16:
        x = data.astype(np.float32) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float32) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        x = data.astype(np.float32)
    elif data.dtype == np.uint8:
        x = (data.astype(np.float32) - 128.0) / 128.0
    else:
        raise ValueError(f"{path}: unsupported sample dtype {data.dtype}")
    if x.ndim == 2:
        x = x.mean(axis=1)
    if sr != TARGET_SR:
        g = gcd(TARGET_SR, int(sr))
        x = resample_poly(x, TARGET_SR // g, int(sr) // g, padtype="antireflect")
    peak = np.abs(x).max() if len(x) else 0.0
    if peak > 0:
        x = x / peak
    return x.astype(np.float32)
