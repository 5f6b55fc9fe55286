"""WAV loading, resampling and peak normalization.

Everything downstream assumes mono float64 samples in [-1, 1]; the helpers
here are the only place sample rates and encodings are dealt with.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from math import gcd
from pathlib import Path

import numpy as np
from scipy.signal import resample_poly


class AudioError(Exception):
    pass


class MissingFile(AudioError):
    pass


class CorruptHeader(AudioError):
    pass


class UnsupportedEncoding(AudioError):
    pass


@dataclass(frozen=True)
class AudioBuffer:
    """Mono PCM samples at a known rate."""

    samples: np.ndarray
    sample_rate: int
    id: str

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def validate(self) -> None:
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("samples contain non-finite values")


_FMT_PCM = 1
_FMT_IEEE_FLOAT = 3
_FMT_EXTENSIBLE = 0xFFFE


def load_wav(path: str | Path) -> AudioBuffer:
    """Read a PCM WAV file (16-bit int or 32-bit float) as a mono buffer.

    Multichannel input is averaged to mono.  16-bit samples are scaled by
    1/32768 so the most negative code maps to exactly -1.0.
    """
    path = Path(path)
    if not path.exists():
        raise MissingFile(f"no such file: {path}")
    data = path.read_bytes()
    if len(data) < 12:
        raise CorruptHeader(f"{path}: too short for a RIFF header")
    if data[0:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise CorruptHeader(f"{path}: not a RIFF/WAVE file")

    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        cid = data[pos : pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8 : pos + 8 + size]
        if cid == b"fmt ":
            if len(body) < 16:
                raise CorruptHeader(f"{path}: fmt chunk truncated")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif cid == b"data":
            if len(body) < size:
                raise CorruptHeader(f"{path}: data chunk shorter than declared")
            payload = body
        pos += 8 + size + (size & 1)  # chunks are word-aligned

    if fmt is None or payload is None:
        raise CorruptHeader(f"{path}: missing fmt or data chunk")
    audio_format, channels, sample_rate, _, _, bits = fmt
    if audio_format == _FMT_EXTENSIBLE:
        raise UnsupportedEncoding(f"{path}: WAVE_FORMAT_EXTENSIBLE not supported")
    if channels < 1 or sample_rate <= 0:
        raise CorruptHeader(f"{path}: invalid channel count or sample rate")

    if audio_format == _FMT_PCM and bits == 16:
        raw = np.frombuffer(payload, dtype="<i2")
        samples = raw.astype(np.float64) / 32768.0
    elif audio_format == _FMT_IEEE_FLOAT and bits == 32:
        samples = np.frombuffer(payload, dtype="<f4").astype(np.float64)
        samples = np.clip(samples, -1.0, 1.0)
    else:
        raise UnsupportedEncoding(
            f"{path}: only 16-bit PCM and 32-bit float supported "
            f"(format={audio_format}, bits={bits})"
        )

    if channels > 1:
        usable = (len(samples) // channels) * channels
        samples = samples[:usable].reshape(-1, channels).mean(axis=1)
    return AudioBuffer(samples=samples, sample_rate=sample_rate, id=path.stem)


def save_wav(buf: AudioBuffer, path: str | Path) -> None:
    """Write a mono 16-bit PCM WAV (used by tests and synthetic corpora)."""
    x = np.clip(buf.samples, -1.0, 1.0)
    pcm = np.round(x * 32767.0).astype("<i2").tobytes()
    hdr = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(pcm), b"WAVE", b"fmt ", 16,
        _FMT_PCM, 1, buf.sample_rate, buf.sample_rate * 2, 2, 16,
        b"data", len(pcm),
    )
    Path(path).write_bytes(hdr + pcm)


def resample(buf: AudioBuffer, target_hz: int) -> AudioBuffer:
    """Band-limited resampling to ``target_hz``; identity when rates match."""
    if target_hz <= 0:
        raise ValueError(f"target_hz must be positive, got {target_hz}")
    if target_hz == buf.sample_rate:
        return buf
    g = gcd(target_hz, buf.sample_rate)
    up, down = target_hz // g, buf.sample_rate // g
    # antireflect padding keeps the edge transient below the passband ripple
    out = resample_poly(buf.samples, up, down, padtype="antireflect")
    return AudioBuffer(samples=out, sample_rate=target_hz, id=buf.id)


def normalize_amplitude(buf: AudioBuffer) -> AudioBuffer:
    """Scale so the peak magnitude is 1.0; all-zero input passes through."""
    peak = np.max(np.abs(buf.samples)) if len(buf.samples) else 0.0
    if peak == 0.0:
        return buf
    return AudioBuffer(samples=buf.samples / peak, sample_rate=buf.sample_rate, id=buf.id)
