"""Synthetic corpora for pipeline tests.

Utterances are tone bursts separated by silences; the burst/pause timing and
per-burst word counts either encode the class ("markers" mode) or are drawn
identically for every class ("uniform" mode, for embedding-signal tests).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from fluencykit.audio import AudioBuffer, save_wav
from fluencykit.embeddings import FrameEmbedding, write_feb

SR = 16000

_WORDS = (
    "time people water sound music garden window basket yellow river "
    "story travel monkey figure bottle winter summer marble market copper"
).split()

# per-class (burst seconds, gap seconds, words per burst) ranges
_CLASS_TIMING = {
    0: ((0.9, 1.2), (0.55, 0.70), 1),
    1: ((0.6, 0.9), (0.35, 0.45), 2),
    2: ((0.4, 0.6), (0.24, 0.32), 4),
}
_UNIFORM_TIMING = ((0.5, 0.9), (0.35, 0.55), 2)


def tone_burst(duration: float, freq: float, rng: np.random.Generator) -> np.ndarray:
    t = np.arange(int(duration * SR)) / SR
    x = 0.5 * np.sin(2 * np.pi * freq * t)
    fade = int(0.005 * SR)
    env = np.ones_like(x)
    env[:fade] = np.linspace(0, 1, fade)
    env[-fade:] = np.linspace(1, 0, fade)
    return x * env


def build_utterance(uid: str, cls: int, rng: np.random.Generator, mode: str):
    timing = _CLASS_TIMING[cls] if mode == "markers" else _UNIFORM_TIMING
    (bmin, bmax), (gmin, gmax), words_per_burst = timing
    n_bursts = int(rng.integers(2, 9))
    lead = 0.2
    pieces = [np.zeros(int(lead * SR))]
    tokens: list[str] = []
    word_times: list[tuple[float, float]] = []
    cursor = lead
    for i in range(n_bursts):
        dur = float(rng.uniform(bmin, bmax))
        freq = float(rng.uniform(180, 360))
        pieces.append(tone_burst(dur, freq, rng))
        for w in range(words_per_burst):
            ws = cursor + dur * w / words_per_burst
            we = cursor + dur * (w + 1) / words_per_burst
            tokens.append(str(rng.choice(_WORDS)))
            word_times.append((round(ws, 4), round(we, 4)))
        cursor += dur
        gap = float(rng.uniform(gmin, gmax)) if i < n_bursts - 1 else 0.2
        pieces.append(np.zeros(int(gap * SR)))
        cursor += gap
    samples = np.concatenate(pieces)
    return AudioBuffer(samples=samples, sample_rate=SR, id=uid), tokens, word_times, n_bursts


def make_corpus(
    root: Path,
    n_per_class: int,
    seed: int = 0,
    mode: str = "markers",
    split_test_per_class: int = 0,
    score_labels: bool = True,
):
    """Write WAVs and a manifest; returns the manifest path."""
    rng = np.random.default_rng(seed)
    root = Path(root)
    (root / "wav").mkdir(parents=True, exist_ok=True)
    scores = {0: 4, 1: 7, 2: 9}
    names = {0: "low", 1: "medium", 2: "high"}
    lines = []
    for cls in range(3):
        for i in range(n_per_class):
            uid = f"c{cls}u{i:03d}"
            buf, tokens, word_times, _ = build_utterance(uid, cls, rng, mode)
            wav_path = root / "wav" / f"{uid}.wav"
            save_wav(buf, wav_path)
            row = {
                "id": uid,
                "audio": str(wav_path),
                "label": scores[cls] if score_labels else names[cls],
                "transcript": " ".join(tokens),
                "word_times": [[a, b] for a, b in word_times],
            }
            if split_test_per_class:
                row["split"] = "test" if i < split_test_per_class else "train"
            lines.append(json.dumps(row))
    manifest = root / "manifest.jsonl"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def write_feb_corpus(
    emb_dir: Path,
    manifest: Path,
    dim: int = 16,
    informative: int | None = None,
    shift: float = 2.0,
    seed: int = 0,
    models: tuple[str, ...] = ("wav2vec2", "hubert", "wavlm"),
):
    """FEB1 files per (utterance, model); one model optionally carries the
    class signal as a mean shift along a fixed random direction."""
    rng = np.random.default_rng(seed)
    directions = rng.standard_normal((3, dim)) / np.sqrt(dim)
    emb_dir = Path(emb_dir)
    for line in Path(manifest).read_text().splitlines():
        row = json.loads(line)
        uid = row["id"]
        cls = int(uid[1])  # ids are c<cls>u<idx>
        n_samples = (len(Path(row["audio"]).read_bytes()) - 44) // 2  # 16-bit mono
        frames = max(1, (n_samples - int(0.025 * SR)) // int(0.020 * SR) + 1)
        for j, model in enumerate(models):
            mat = rng.standard_normal((frames, dim))
            if informative is not None and j == informative:
                mat = mat + shift * (cls - 1) * directions[j]
            fe = FrameEmbedding(
                model_id=model, hop=0.020, offset=0.0125,
                matrix=mat.astype(np.float32),
            )
            out = emb_dir / model / f"{uid}.feb"
            out.parent.mkdir(parents=True, exist_ok=True)
            write_feb(out, fe)
