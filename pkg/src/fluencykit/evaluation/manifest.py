"""Dataset manifests: JSON Lines with id, audio path, label and transcript."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from ..features import Transcript
from .metrics import bucket_score


class ManifestError(Exception):
    pass


_LABEL_WORDS = {
    "low": 0, "low_fluency": 0,
    "medium": 1, "medium_fluency": 1, "intermediate": 1,
    "high": 2, "high_fluency": 2,
}


def parse_label(label_raw) -> int:
    """Either a 0-10 score (bucketed) or a named level."""
    if isinstance(label_raw, bool):
        raise ManifestError(f"bad label {label_raw!r}")
    if isinstance(label_raw, (int, float)) and float(label_raw).is_integer():
        return bucket_score(int(label_raw))
    if isinstance(label_raw, str):
        key = label_raw.strip().lower()
        if key in _LABEL_WORDS:
            return _LABEL_WORDS[key]
        if key.isdigit():
            return bucket_score(int(key))
    raise ManifestError(f"unparseable label {label_raw!r}")


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    audio_path: str
    label_raw: object
    transcript: Transcript
    split: str | None = None  # "train"/"test" for fixed-split protocols

    @property
    def label(self) -> int:
        return parse_label(self.label_raw)


def load_manifest(path: str | Path) -> list[ManifestEntry]:
    entries: list[ManifestEntry] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}:{lineno}: {exc}") from exc
            try:
                uid = str(obj["id"])
                audio = str(obj["audio"])
                label_raw = obj["label"]
            except KeyError as exc:
                raise ManifestError(f"{path}:{lineno}: missing key {exc}") from exc
            if uid in seen:
                raise ManifestError(f"{path}:{lineno}: duplicate id {uid!r}")
            seen.add(uid)
            tokens = tuple(str(obj.get("transcript", "")).split())
            times = obj.get("word_times")
            word_times = None
            if times is not None:
                word_times = tuple((float(a), float(b)) for a, b in times)
            entry = ManifestEntry(
                id=uid,
                audio_path=audio,
                label_raw=label_raw,
                transcript=Transcript(tokens=tokens, word_times=word_times),
                split=obj.get("split"),
            )
            try:
                entry.label
            except Exception as exc:
                raise ManifestError(f"{path}:{lineno}: {exc}") from exc
            entries.append(entry)
    return entries
