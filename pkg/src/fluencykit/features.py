"""Chunk-level fluency markers and voice-quality measurements.

The four markers (speech rate, surrounding pause duration, articulation
rate, n-gram repetition) are cheap text/timing features; voice quality
(F0, shimmer, HNR) comes from autocorrelation-based pitch tracking.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio import AudioBuffer
from .segmentation import Chunk


class FeatureError(Exception):
    pass


class TooShortChunk(FeatureError):
    pass


MARKER_NAMES = ("speech_rate", "pause_duration", "articulation_rate", "ngram_repetition")
VQ_NAMES = ("f0_mean", "f0_std", "shimmer_pct", "hnr_db", "voiced_fraction")


@dataclass(frozen=True)
class Transcript:
    tokens: tuple[str, ...]
    word_times: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self):
        if self.word_times is None:
            return
        if len(self.word_times) != len(self.tokens):
            raise ValueError("word_times must align 1:1 with tokens")
        starts = [s for s, _ in self.word_times]
        if any(b < a for a, b in zip(starts, starts[1:])):
            raise ValueError("word_times starts must be non-decreasing")


@dataclass(frozen=True)
class FluencyMarkers:
    speech_rate: float
    pause_duration: float
    articulation_rate: float
    ngram_repetition: float

    def as_vector(self) -> np.ndarray:
        return np.array(
            [self.speech_rate, self.pause_duration,
             self.articulation_rate, self.ngram_repetition],
            dtype=np.float64,
        )


@dataclass(frozen=True)
class VoiceQuality:
    voiced_fraction: float
    f0_mean: float | None = None
    f0_std: float | None = None
    shimmer_pct: float | None = None
    hnr_db: float | None = None


def assign_words_to_chunks(
    tr: Transcript,
    chunks: list[Chunk],
    utterance_span: tuple[float, float],
) -> list[list[str]]:
    """Distribute transcript words over chunks.

    Timed words go to the chunk containing their midpoint.  Untimed words are
    split proportionally to chunk duration (largest-remainder rounding, ties
    to the longer chunk) and handed out in order.
    """
    if not chunks:
        return []
    if not tr.tokens:
        return [[] for _ in chunks]
    if tr.word_times is not None:
        out: list[list[str]] = [[] for _ in chunks]
        for token, (ws, we) in zip(tr.tokens, tr.word_times):
            mid = 0.5 * (ws + we)
            for i, c in enumerate(chunks):
                if c.start <= mid < c.end:
                    out[i].append(token)
                    break
        return out
    total = sum(c.duration for c in chunks)
    n = len(tr.tokens)
    if total <= 0:
        counts = [n] + [0] * (len(chunks) - 1)
    else:
        quotas = [n * c.duration / total for c in chunks]
        counts = [int(q) for q in quotas]
        order = sorted(
            range(len(chunks)),
            key=lambda i: (quotas[i] - counts[i], chunks[i].duration, -i),
            reverse=True,
        )
        for i in order[: n - sum(counts)]:
            counts[i] += 1
    out = []
    pos = 0
    for c in counts:
        out.append(list(tr.tokens[pos : pos + c]))
        pos += c
    return out


def speech_rate(word_count: int, chunk: Chunk) -> float:
    """Words per second of chunk."""
    if chunk.duration <= 0:
        raise ValueError("chunk duration must be positive")
    return word_count / chunk.duration


def pause_duration(chunks: list[Chunk], i: int, utterance_span: tuple[float, float]) -> float:
    """Mean of the silent gaps before and after chunk ``i``.

    Boundary chunks use the gap to the utterance edge on the missing side.
    """
    c = chunks[i]
    before = c.start - (chunks[i - 1].end if i > 0 else utterance_span[0])
    after = (chunks[i + 1].start if i + 1 < len(chunks) else utterance_span[1]) - c.end
    return 0.5 * (max(before, 0.0) + max(after, 0.0))


_VOWELS = frozenset("aeiouy")


def syllable_estimate(word: str) -> int:
    """Orthographic syllable count: maximal vowel-letter groups, with a
    silent final 'e' dropped when another vowel group exists; minimum 1."""
    letters = [ch for ch in word.lower() if ch.isalpha()]
    groups = 0
    prev_vowel = False
    for ch in letters:
        is_vowel = ch in _VOWELS
        if is_vowel and not prev_vowel:
            groups += 1
        prev_vowel = is_vowel
    if (
        groups >= 2
        and letters
        and letters[-1] == "e"
        and (len(letters) < 2 or letters[-2] not in _VOWELS)
    ):
        groups -= 1
    return max(groups, 1)


def articulation_rate(words: list[str], chunk: Chunk) -> float:
    """Estimated syllables per second of chunk."""
    if chunk.duration <= 0:
        raise ValueError("chunk duration must be positive")
    if not words:
        return 0.0
    return sum(syllable_estimate(w) for w in words) / chunk.duration


def ngram_repetition(tokens: list[str], n: int = 2) -> float:
    """Fraction of n-gram occurrences whose n-gram appeared earlier."""
    if n < 1:
        raise ValueError("n must be >= 1")
    grams = [tuple(t.lower() for t in tokens[i : i + n]) for i in range(len(tokens) - n + 1)]
    seen: set[tuple[str, ...]] = set()
    repeats = 0
    for g in grams:
        if g in seen:
            repeats += 1
        else:
            seen.add(g)
    return repeats / max(1, len(grams))


# --- voice quality ---------------------------------------------------------

_VQ_FRAME_S = 0.040
_VQ_HOP_S = 0.010
_F0_MIN = 50.0
_F0_MAX = 500.0
_VOICING_THRESHOLD = 0.3
# a candidate this close to the global peak wins at the shortest lag,
# which keeps subharmonics of periodic signals from halving the pitch
_PEAK_RATIO = 0.85
_R_CLIP = 1e-12


def _frame_matrix(x: np.ndarray, frame: int, hop: int) -> np.ndarray:
    count = (len(x) - frame) // hop + 1
    if count <= 0:
        return np.empty((0, frame))
    idx = np.arange(frame)[None, :] + hop * np.arange(count)[:, None]
    return x[idx]


def _normalized_autocorr(frames: np.ndarray, max_lag: int) -> np.ndarray:
    """Autocorrelation normalized by the energies of both windowed halves,
    evaluated for lags 0..max_lag (columns)."""
    frames = frames - frames.mean(axis=1, keepdims=True)
    n = frames.shape[1]
    nfft = 1 << (2 * n - 1).bit_length()
    spectrum = np.fft.rfft(frames, nfft, axis=1)
    raw = np.fft.irfft(spectrum.real**2 + spectrum.imag**2, nfft, axis=1)[:, : max_lag + 1]
    sq = np.concatenate(
        [np.zeros((frames.shape[0], 1)), np.cumsum(frames**2, axis=1)], axis=1
    )
    lags = np.arange(max_lag + 1)
    e_head = sq[:, n - lags] - sq[:, 0:1]          # energy of x[0 : n-lag]
    e_tail = sq[:, n : n + 1] - sq[:, lags]        # energy of x[lag : n]
    denom = np.sqrt(e_head * e_tail)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(denom > 0, raw / denom, 0.0)
    return r


def _pick_pitch_lags(r: np.ndarray, lag_min: int, lag_max: int) -> tuple[np.ndarray, np.ndarray]:
    """Per frame: refined pitch lag (nan if none) and its peak value."""
    band = r[:, lag_min : lag_max + 1]
    left = r[:, lag_min - 1 : lag_max]
    right = np.empty_like(band)
    right[:, :-1] = band[:, 1:]
    right[:, -1] = -np.inf
    is_peak = (band >= left) & (band > right)
    n_frames = band.shape[0]
    lag_out = np.full(n_frames, np.nan)
    val_out = np.zeros(n_frames)
    for f in range(n_frames):
        cand = np.flatnonzero(is_peak[f])
        if cand.size == 0:
            continue
        vals = band[f, cand]
        keep = cand[vals >= _PEAK_RATIO * vals.max()]
        lag = int(keep[0]) + lag_min
        val = r[f, lag]
        # parabolic refinement around the integer lag
        if lag_min < lag < lag_max:
            y0, y1, y2 = r[f, lag - 1], r[f, lag], r[f, lag + 1]
            den = y0 - 2.0 * y1 + y2
            if den != 0.0:
                lag = lag + float(np.clip(0.5 * (y0 - y2) / den, -0.5, 0.5))
        lag_out[f] = lag
        val_out[f] = val
    return lag_out, val_out


def voice_quality(buf: AudioBuffer, chunk: Chunk) -> VoiceQuality:
    """F0/shimmer/HNR for one chunk.

    Pitch: normalized autocorrelation on 40 ms frames at 10 ms hop, 50-500 Hz,
    voicing when the peak reaches 0.3.  HNR per voiced frame is
    10*log10(r/(1-r)); shimmer is the mean absolute cycle-to-cycle peak
    amplitude difference over the mean peak amplitude, in percent, with
    cycle peaks taken inside maximal voiced runs.
    """
    sr = buf.sample_rate
    a = int(round(chunk.start * sr))
    b = int(round(chunk.end * sr))
    x = buf.samples[a:b]
    if len(x) < 0.1 * sr:
        raise TooShortChunk(f"{buf.id}[{chunk.index}]: below 100 ms")
    frame = int(round(_VQ_FRAME_S * sr))
    hop = int(round(_VQ_HOP_S * sr))
    lag_min = int(sr // _F0_MAX)
    lag_max = int(sr // _F0_MIN)
    frames = _frame_matrix(x, frame, hop)
    if frames.shape[0] == 0 or frame < 2 * lag_min:
        raise TooShortChunk(f"{buf.id}[{chunk.index}]: too short for pitch analysis")
    r = _normalized_autocorr(frames, min(lag_max, frame - 1))
    lags, peaks = _pick_pitch_lags(r, lag_min, min(lag_max, frame - 1))
    voiced = ~np.isnan(lags) & (peaks >= _VOICING_THRESHOLD)
    voiced_fraction = float(np.mean(voiced))
    if not voiced.any():
        return VoiceQuality(voiced_fraction=0.0)

    f0 = sr / lags[voiced]
    rv = np.clip(peaks[voiced], _R_CLIP, 1.0 - _R_CLIP)
    hnr = float(np.mean(10.0 * np.log10(rv / (1.0 - rv))))

    amp_diffs: list[float] = []
    amps: list[float] = []
    i, n = 0, len(voiced)
    lag_arr = lags.copy()
    while i < n:
        if not voiced[i]:
            i += 1
            continue
        j = i
        while j < n and voiced[j]:
            j += 1
        seg = x[i * hop : (j - 1) * hop + frame]
        t0 = int(round(float(np.median(lag_arr[i:j]))))
        if t0 >= 1:
            cyc = [
                float(np.max(np.abs(seg[k * t0 : (k + 1) * t0])))
                for k in range(len(seg) // t0)
            ]
            amps.extend(cyc)
            amp_diffs.extend(abs(q - p) for p, q in zip(cyc, cyc[1:]))
        i = j
    mean_amp = float(np.mean(amps)) if amps else 0.0
    shimmer = 100.0 * float(np.mean(amp_diffs)) / mean_amp if amp_diffs and mean_amp > 0 else 0.0

    return VoiceQuality(
        voiced_fraction=voiced_fraction,
        f0_mean=float(np.mean(f0)),
        f0_std=float(np.std(f0)),
        shimmer_pct=shimmer,
        hnr_db=hnr,
    )


# --- marker assembly / standardization -------------------------------------

class MarkerScaler:
    """Per-feature mean/std standardization fitted on the training fold.

    A zero-variance feature standardizes to 0.0.
    """

    def __init__(self, mean: np.ndarray, std: np.ndarray):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.std = np.asarray(std, dtype=np.float64)

    @classmethod
    def fit(cls, rows: np.ndarray) -> "MarkerScaler":
        rows = np.asarray(rows, dtype=np.float64)
        return cls(rows.mean(axis=0), rows.std(axis=0))

    def transform(self, rows: np.ndarray) -> np.ndarray:
        rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
        out = np.zeros_like(rows)
        # relative epsilon absorbs summation noise on constant features
        ok = self.std > 1e-12 * np.maximum(1.0, np.abs(self.mean))
        out[:, ok] = (rows[:, ok] - self.mean[ok]) / self.std[ok]
        return out


def assemble_markers(
    speech_rate_val: float,
    pause_duration_val: float,
    articulation_rate_val: float,
    ngram_repetition_val: float,
    vq: VoiceQuality | None = None,
) -> np.ndarray:
    """Raw marker vector in fixed order, optionally extended with the
    voice-quality values (absent ones contribute 0.0)."""
    vec = [speech_rate_val, pause_duration_val, articulation_rate_val, ngram_repetition_val]
    if vq is not None:
        vec.extend(
            0.0 if v is None else float(v)
            for v in (vq.f0_mean, vq.f0_std, vq.shimmer_pct, vq.hnr_db, vq.voiced_fraction)
        )
    return np.array(vec, dtype=np.float64)


def chunk_markers(
    buf: AudioBuffer,
    chunks: list[Chunk],
    tr: Transcript,
    utterance_span: tuple[float, float],
    with_voice_quality: bool = False,
) -> tuple[np.ndarray, list[VoiceQuality | None]]:
    """Raw marker rows (one per chunk) plus per-chunk voice quality.

    Voice quality is computed only when requested or exported; chunks too
    short for pitch analysis get a None entry.
    """
    words_per_chunk = assign_words_to_chunks(tr, chunks, utterance_span)
    rows = []
    vqs: list[VoiceQuality | None] = []
    for i, c in enumerate(chunks):
        words = words_per_chunk[i]
        vq = None
        if with_voice_quality:
            try:
                vq = voice_quality(buf, c)
            except TooShortChunk:
                vq = None
        rows.append(
            assemble_markers(
                speech_rate(len(words), c),
                pause_duration(chunks, i, utterance_span),
                articulation_rate(words, c),
                ngram_repetition(words),
                vq=vq if with_voice_quality else None,
            )
        )
        vqs.append(vq)
    width = (4 + len(VQ_NAMES)) if with_voice_quality else 4
    if not rows:
        return np.zeros((0, width)), []
    return np.vstack(rows), vqs


def features_to_csv(
    utterance_id: str,
    chunks: list[Chunk],
    marker_rows: np.ndarray,
    vqs: list[VoiceQuality | None],
) -> list[str]:
    """CSV rows (no header) for the feature export format."""
    lines = []
    for i, c in enumerate(chunks):
        m = marker_rows[i]
        vq = vqs[i] if i < len(vqs) else None
        def fmt(v):
            return "" if v is None else f"{v:.6f}"
        vq_fields = (
            [fmt(vq.f0_mean), fmt(vq.f0_std), fmt(vq.shimmer_pct), fmt(vq.hnr_db),
             fmt(vq.voiced_fraction)]
            if vq is not None
            else ["", "", "", "", ""]
        )
        lines.append(
            ",".join(
                [utterance_id, str(c.index)]
                + [f"{m[j]:.6f}" for j in range(4)]
                + vq_fields
            )
        )
    return lines


FEATURE_CSV_HEADER = (
    "utterance_id,chunk_index,speech_rate,pause_duration,articulation_rate,"
    "ngram_repetition,f0_mean,f0_std,shimmer_pct,hnr_db,voiced_fraction"
)
