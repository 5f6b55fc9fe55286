"""Frame-level embeddings: FEB1 file transport, a deterministic mock
embedder, chunk slicing and mean pooling.

FEB1 layout (little-endian): magic ``FEB1`` | version u32=1 | model_id_len
u32 | model_id UTF-8 | dim u32 | frame_count u32 | hop_us u32 | offset_us
u32 | frame_count*dim float32 row-major.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .audio import AudioBuffer
from .segmentation import Chunk


class EmbeddingError(Exception):
    pass


class BadMagic(EmbeddingError):
    pass


class VersionMismatch(EmbeddingError):
    pass


class TruncatedData(EmbeddingError):
    pass


class NonFiniteValue(EmbeddingError):
    pass


class TooShortInput(EmbeddingError):
    pass


class EmptyChunkFrames(EmbeddingError):
    pass


class DimensionExceedsTarget(EmbeddingError):
    pass


_MAGIC = b"FEB1"
_VERSION = 1


@dataclass(frozen=True)
class FrameEmbedding:
    model_id: str
    hop: float            # seconds per frame
    offset: float         # seconds, center of first frame
    matrix: np.ndarray    # (T, d) float32

    @property
    def frame_count(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def frame_centers(self) -> np.ndarray:
        return self.offset + self.hop * np.arange(self.frame_count)


@dataclass(frozen=True)
class ChunkEmbedding:
    vectors: dict[str, np.ndarray]
    dim: int


def write_feb(path: str | Path, fe: FrameEmbedding) -> None:
    mid = fe.model_id.encode("utf-8")
    m = np.ascontiguousarray(fe.matrix, dtype="<f4")
    header = (
        _MAGIC
        + struct.pack("<II", _VERSION, len(mid))
        + mid
        + struct.pack(
            "<IIII",
            m.shape[1],
            m.shape[0],
            int(round(fe.hop * 1e6)),
            int(round(fe.offset * 1e6)),
        )
    )
    Path(path).write_bytes(header + m.tobytes())


def read_feb(path: str | Path) -> FrameEmbedding:
    data = Path(path).read_bytes()
    if len(data) < 4 or data[:4] != _MAGIC:
        raise BadMagic(f"{path}: not a FEB1 file")
    if len(data) < 12:
        raise TruncatedData(f"{path}: header truncated")
    version, mid_len = struct.unpack_from("<II", data, 4)
    if version != _VERSION:
        raise VersionMismatch(f"{path}: version {version}, expected {_VERSION}")
    pos = 12
    if len(data) < pos + mid_len + 16:
        raise TruncatedData(f"{path}: header truncated")
    model_id = data[pos : pos + mid_len].decode("utf-8")
    pos += mid_len
    dim, frame_count, hop_us, offset_us = struct.unpack_from("<IIII", data, pos)
    pos += 16
    expected = dim * frame_count * 4
    if len(data) - pos != expected:
        raise TruncatedData(
            f"{path}: payload is {len(data) - pos} bytes, header promises {expected}"
        )
    matrix = np.frombuffer(data, dtype="<f4", count=dim * frame_count, offset=pos)
    matrix = matrix.reshape(frame_count, dim).copy()
    if matrix.size and not np.all(np.isfinite(matrix)):
        raise NonFiniteValue(f"{path}: payload contains non-finite values")
    return FrameEmbedding(
        model_id=model_id, hop=hop_us / 1e6, offset=offset_us / 1e6, matrix=matrix
    )


def feb_path(emb_dir: str | Path, model_id: str, utterance_id: str) -> Path:
    return Path(emb_dir) / model_id / f"{utterance_id}.feb"


# --- deterministic generator (fixed algorithms, portable across languages) --

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_U64 = (1 << 64) - 1


def fnv1a64(text: str) -> int:
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & _U64
    return h


def derive_seed(global_seed: int, utterance_id: str) -> int:
    return (global_seed * 1_000_003 + fnv1a64(utterance_id)) % (1 << 63)


class SplitMix64:
    """splitmix64 stream with Box-Muller standard normals."""

    def __init__(self, seed: int):
        self._state = seed & _U64
        self._spare: float | None = None

    def next_u64(self) -> int:
        self._state = (self._state + 0x9E3779B97F4A7C15) & _U64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _U64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _U64
        return z ^ (z >> 31)

    def next_unit(self) -> float:
        # 53-bit mantissa shifted into (0, 1)
        return ((self.next_u64() >> 11) + 0.5) * 2.0**-53

    def next_normal(self) -> float:
        if self._spare is not None:
            v, self._spare = self._spare, None
            return v
        u1, u2 = self.next_unit(), self.next_unit()
        r = math.sqrt(-2.0 * math.log(u1))
        self._spare = r * math.sin(2.0 * math.pi * u2)
        return r * math.cos(2.0 * math.pi * u2)

    def normals(self, shape: tuple[int, ...]) -> np.ndarray:
        out = np.empty(int(np.prod(shape)), dtype=np.float64)
        for i in range(out.size):
            out[i] = self.next_normal()
        return out.reshape(shape)


# --- mock embedder ----------------------------------------------------------

_MOCK_FRAME_S = 0.025
_MOCK_HOP_S = 0.020
_MOCK_BANDS = 40


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def _mel_filterbank(n_bands: int, nfft: int, sr: int) -> np.ndarray:
    pts = _mel_to_hz(np.linspace(0.0, _hz_to_mel(sr / 2.0), n_bands + 2))
    bins = np.floor((nfft + 1) * pts / sr).astype(int)
    fb = np.zeros((n_bands, nfft // 2 + 1))
    for i in range(n_bands):
        lo, mid, hi = bins[i], bins[i + 1], bins[i + 2]
        if mid > lo:
            fb[i, lo:mid] = (np.arange(lo, mid) - lo) / (mid - lo)
        if hi > mid:
            fb[i, mid:hi] = (hi - np.arange(mid, hi)) / (hi - mid)
    return fb


def mock_embed(buf: AudioBuffer, dim: int, seed: int) -> FrameEmbedding:
    """Deterministic stand-in embedder: log-mel energies through a seeded
    random projection, per-utterance standardized.

    Exists so the whole pipeline runs with no model downloads; carries no
    claim about real embedding quality.
    """
    if dim <= 0:
        raise ValueError("dim must be positive")
    sr = buf.sample_rate
    frame = int(round(_MOCK_FRAME_S * sr))
    hop = int(round(_MOCK_HOP_S * sr))
    if len(buf.samples) < frame:
        raise TooShortInput(f"{buf.id}: shorter than one {_MOCK_FRAME_S * 1e3:.0f} ms frame")
    count = (len(buf.samples) - frame) // hop + 1
    idx = np.arange(frame)[None, :] + hop * np.arange(count)[:, None]
    frames = buf.samples[idx] * np.hanning(frame)
    nfft = 1 << (frame - 1).bit_length()
    power = np.abs(np.fft.rfft(frames, nfft, axis=1)) ** 2
    mel = np.log(power @ _mel_filterbank(_MOCK_BANDS, nfft, sr).T + 1e-10)

    proj = SplitMix64(seed).normals((_MOCK_BANDS, dim)) / math.sqrt(_MOCK_BANDS)
    feat = mel @ proj
    mean = feat.mean(axis=0)
    std = feat.std(axis=0)
    out = np.zeros_like(feat)
    # relative epsilon: constant columns can carry ~1 ulp of summation noise
    ok = std > 1e-12 * np.maximum(1.0, np.abs(mean))
    out[:, ok] = (feat[:, ok] - mean[ok]) / std[ok]
    return FrameEmbedding(
        model_id="mock",
        hop=_MOCK_HOP_S,
        offset=_MOCK_FRAME_S / 2.0,
        matrix=out.astype(np.float32),
    )


# --- slicing / pooling / projection -----------------------------------------

def slice_frames(fe: FrameEmbedding, chunk: Chunk) -> FrameEmbedding:
    """Keep frames whose center time falls in [chunk.start, chunk.end)."""
    centers = fe.frame_centers()
    keep = (centers >= chunk.start) & (centers < chunk.end)
    if not keep.any():
        return replace(fe, offset=chunk.start, matrix=fe.matrix[:0])
    first = int(np.argmax(keep))
    return replace(
        fe,
        offset=float(centers[first]),
        matrix=fe.matrix[keep],
    )


def mean_pool(fe: FrameEmbedding) -> np.ndarray:
    """Column-wise mean over frames (float64 accumulation)."""
    if fe.frame_count == 0:
        raise EmptyChunkFrames(f"{fe.model_id}: cannot pool an empty frame matrix")
    return fe.matrix.mean(axis=0, dtype=np.float64)


def project_to_common(vectors: dict[str, np.ndarray], dim: int) -> ChunkEmbedding:
    """Zero-pad each per-model vector at the tail up to ``dim``."""
    out = {}
    for model_id, v in vectors.items():
        v = np.asarray(v, dtype=np.float64)
        if v.shape[0] > dim:
            raise DimensionExceedsTarget(
                f"{model_id}: dim {v.shape[0]} exceeds target {dim}"
            )
        if v.shape[0] < dim:
            v = np.concatenate([v, np.zeros(dim - v.shape[0])])
        out[model_id] = v
    return ChunkEmbedding(vectors=out, dim=dim)
