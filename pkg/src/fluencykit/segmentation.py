"""Energy VAD and breath-group chunking.

Speech/non-speech decisions are made per frame from log-RMS energy; regions
and chunk boundaries always land on the hop grid so results are reproducible
across platforms.  An external VAD can replace the energy detector through
``load_external_vad``; chunking then subdivides those regions at internal
silences of at least ``delta_ms``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import AudioBuffer


class SegmentationError(Exception):
    pass


class TooShortInput(SegmentationError):
    pass


class InvalidThreshold(SegmentationError):
    pass


class MalformedJson(SegmentationError):
    pass


class OverlappingRegions(SegmentationError):
    pass


class NegativeTimestamps(SegmentationError):
    pass


@dataclass(frozen=True)
class SpeechRegion:
    start: float
    end: float


@dataclass(frozen=True)
class Chunk:
    utterance_id: str
    index: int
    start: float
    end: float

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class VadConfig:
    frame_ms: float = 30.0
    hop_ms: float = 10.0
    energy_floor_db: float = -60.0
    relative_threshold_db: float = 12.0
    min_speech_ms: float = 100.0
    bridge_ms: float = 100.0

    def validate(self) -> None:
        if self.hop_ms > self.frame_ms:
            raise ValueError("hop_ms must not exceed frame_ms")
        if min(self.frame_ms, self.hop_ms) <= 0:
            raise ValueError("frame_ms and hop_ms must be positive")


_RMS_FLOOR = 1e-10  # 0 amplitude maps to -200 dBFS
_GRID_EPS = 1e-9


def frame_energies_db(buf: AudioBuffer, cfg: VadConfig) -> np.ndarray:
    """Per-frame log-RMS energy in dBFS."""
    frame = int(round(cfg.frame_ms * buf.sample_rate / 1000.0))
    hop = int(round(cfg.hop_ms * buf.sample_rate / 1000.0))
    n = len(buf.samples)
    if n < frame:
        raise TooShortInput(f"{buf.id}: {n} samples < one {cfg.frame_ms} ms frame")
    count = (n - frame) // hop + 1
    sq = np.concatenate(([0.0], np.cumsum(buf.samples.astype(np.float64) ** 2)))
    starts = hop * np.arange(count)
    rms = np.sqrt((sq[starts + frame] - sq[starts]) / frame)
    return 20.0 * np.log10(np.maximum(rms, _RMS_FLOOR))


def speech_frame_mask(buf: AudioBuffer, cfg: VadConfig) -> np.ndarray:
    """Boolean speech/non-speech decision per frame.

    The threshold is the louder of the absolute floor and the utterance noise
    floor (10th percentile of frame energies) plus the relative offset.
    """
    e = frame_energies_db(buf, cfg)
    noise_floor = float(np.percentile(e, 10.0))
    thr = max(cfg.energy_floor_db, noise_floor + cfg.relative_threshold_db)
    return e > thr


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Maximal [start, end) index runs where mask is True."""
    if len(mask) == 0:
        return []
    padded = np.concatenate(([False], mask, [False]))
    d = np.diff(padded.astype(np.int8))
    starts = np.flatnonzero(d == 1)
    ends = np.flatnonzero(d == -1)
    return list(zip(starts.tolist(), ends.tolist()))


def detect_speech(buf: AudioBuffer, cfg: VadConfig | None = None) -> list[SpeechRegion]:
    """Energy VAD: speech regions on the hop grid.

    Gaps shorter than ``bridge_ms`` are merged, runs shorter than
    ``min_speech_ms`` dropped.
    """
    cfg = cfg or VadConfig()
    cfg.validate()
    mask = speech_frame_mask(buf, cfg)
    runs = _runs(mask)
    if not runs:
        return []
    merged: list[list[int]] = [list(runs[0])]
    for a, b in runs[1:]:
        gap_frames = a - merged[-1][1]
        if gap_frames * cfg.hop_ms < cfg.bridge_ms:
            merged[-1][1] = b
        else:
            merged.append([a, b])
    hop_s = cfg.hop_ms / 1000.0
    out = []
    for a, b in merged:
        if (b - a) * cfg.hop_ms < cfg.min_speech_ms:
            continue
        out.append(SpeechRegion(start=a * hop_s, end=b * hop_s))
    return out


def load_external_vad(path: str | Path) -> dict[str, list[SpeechRegion]]:
    """Read VAD-JSON (one ``{"id", "regions": [...]}`` object per line)."""
    result: dict[str, list[SpeechRegion]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedJson(f"{path}:{lineno}: {exc}") from exc
            if not isinstance(obj, dict) or "id" not in obj or "regions" not in obj:
                raise MalformedJson(f"{path}:{lineno}: expected id and regions keys")
            regions = []
            for r in obj["regions"]:
                try:
                    start, end = float(r["start"]), float(r["end"])
                except (KeyError, TypeError, ValueError) as exc:
                    raise MalformedJson(f"{path}:{lineno}: bad region {r!r}") from exc
                if start < 0 or end < 0:
                    raise NegativeTimestamps(f"{path}:{lineno}: negative timestamp in {r!r}")
                if not start < end:
                    raise MalformedJson(f"{path}:{lineno}: start must be < end in {r!r}")
                regions.append(SpeechRegion(start=start, end=end))
            regions.sort(key=lambda r: r.start)
            for prev, cur in zip(regions, regions[1:]):
                if cur.start < prev.end:
                    raise OverlappingRegions(
                        f"{path}:{lineno}: regions {prev} and {cur} overlap"
                    )
            result[str(obj["id"])] = regions
    return result


def split_speech_frames(
    mask: np.ndarray,
    fa: int,
    fb: int,
    gap_frames: int,
    min_chunk_frames: int,
) -> list[tuple[int, int]]:
    """Split the frame interval [fa, fb) at internal non-speech gaps.

    A maximal run of >= ``gap_frames`` consecutive non-speech frames that does
    not touch either edge of the interval splits it; sub-spans shorter than
    ``min_chunk_frames`` are merged into their earlier neighbour (the later
    one for the first sub-span).  Frames at or beyond ``len(mask)`` count as
    non-speech.  Returns [start, end) frame intervals.
    """
    fa = max(fa, 0)
    if fb <= fa:
        return [(fa, fb)] if fb > fa else [(fa, fa)]
    window = np.zeros(fb - fa, dtype=bool)
    hi = min(fb, len(mask))
    if hi > fa:
        window[: hi - fa] = mask[fa:hi]
    gaps = []
    for a, b in _runs(~window):
        if a == 0 or b == len(window):
            continue  # touches an edge: not an internal gap
        if b - a >= gap_frames:
            gaps.append((a + fa, b + fa))
    spans = []
    cursor = fa
    for ga, gb in gaps:
        spans.append((cursor, ga))
        cursor = gb
    spans.append((cursor, fb))
    # merge under-length sub-spans, preferring the earlier neighbour
    while len(spans) > 1:
        for i, (a, b) in enumerate(spans):
            if b - a < min_chunk_frames:
                if i > 0:
                    spans[i - 1 : i + 1] = [(spans[i - 1][0], b)]
                else:
                    spans[0:2] = [(a, spans[1][1])]
                break
        else:
            break
    return spans


def chunk_breath_groups(
    buf: AudioBuffer,
    regions: list[SpeechRegion],
    delta_ms: float = 300.0,
    cfg: VadConfig | None = None,
) -> list[Chunk]:
    """Subdivide speech regions into breath-group chunks.

    Within each region, internal silences of duration >= ``delta_ms`` (by the
    same frame-energy rule as the VAD) become chunk boundaries; the silences
    themselves belong to no chunk.  A region with no such silence maps to a
    single chunk equal to the region.
    """
    cfg = cfg or VadConfig()
    cfg.validate()
    if delta_ms <= cfg.bridge_ms:
        raise InvalidThreshold(
            f"delta_ms ({delta_ms}) must exceed bridge_ms ({cfg.bridge_ms})"
        )
    if not regions:
        return []
    mask = speech_frame_mask(buf, cfg)
    hop_s = cfg.hop_ms / 1000.0
    gap_frames = math.ceil(delta_ms / cfg.hop_ms - _GRID_EPS)
    min_frames = math.ceil(cfg.min_speech_ms / cfg.hop_ms - _GRID_EPS)
    chunks: list[Chunk] = []
    for region in regions:
        fa = math.ceil(region.start / hop_s - _GRID_EPS)
        fb = math.floor(region.end / hop_s + _GRID_EPS)
        spans = split_speech_frames(mask, fa, fb, gap_frames, min_frames)
        for j, (a, b) in enumerate(spans):
            start = region.start if j == 0 else a * hop_s
            end = region.end if j == len(spans) - 1 else b * hop_s
            if end <= start:
                continue
            chunks.append(Chunk(buf.id, index=len(chunks), start=start, end=end))
    return chunks


@dataclass
class DeltaStats:
    delta_ms: float
    chunk_count: int
    mean_duration: float
    std_duration: float
    per_utterance: dict[str, int] = field(default_factory=dict)
    gap_histogram_ms: dict[float, int] = field(default_factory=dict)


def sweep_delta(
    items: list[tuple[AudioBuffer, list[SpeechRegion]]],
    deltas_ms: list[float],
    cfg: VadConfig | None = None,
) -> dict[float, DeltaStats]:
    """Chunking statistics for each silence threshold in ``deltas_ms``."""
    if not deltas_ms:
        raise ValueError("deltas_ms must be non-empty")
    cfg = cfg or VadConfig()
    out: dict[float, DeltaStats] = {}
    for delta in deltas_ms:
        durations: list[float] = []
        per_utt: dict[str, int] = {}
        gap_hist: dict[float, int] = {}
        for buf, regions in items:
            chunks = chunk_breath_groups(buf, regions, delta, cfg)
            per_utt[buf.id] = len(chunks)
            durations.extend(c.duration for c in chunks)
            for prev, cur in zip(chunks, chunks[1:]):
                gap = cur.start - prev.start - prev.duration
                if gap * 1000.0 >= delta - _GRID_EPS:
                    key = round(gap * 1000.0, 3)
                    gap_hist[key] = gap_hist.get(key, 0) + 1
        out[delta] = DeltaStats(
            delta_ms=delta,
            chunk_count=len(durations),
            mean_duration=float(np.mean(durations)) if durations else 0.0,
            std_duration=float(np.std(durations)) if durations else 0.0,
            per_utterance=per_utt,
            gap_histogram_ms=gap_hist,
        )
    return out


def chunks_to_csv(chunks: list[Chunk]) -> str:
    lines = ["utterance_id,index,start,end"]
    for c in chunks:
        lines.append(f"{c.utterance_id},{c.index},{c.start:.6f},{c.end:.6f}")
    return "\n".join(lines) + "\n"
