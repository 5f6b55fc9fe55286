"""Extraction runner: manifest in, FEB1 files + VAD-JSON out.

Per-utterance failures go to an errors sidecar and the run continues; all
file writes are atomic (temp + rename).
"""

from __future__ import annotations

import concurrent.futures
import json
from dataclasses import dataclass, field
from pathlib import Path

from .audio import load_wav_16k
from .backends import CHECKPOINTS, InferenceFailure
from .feb import encode_feb, write_feb_atomic


@dataclass(frozen=True)
class ExtractorJob:
    manifest: str
    out_dir: str
    models: tuple[str, ...] = tuple(CHECKPOINTS)
    device: str = "cpu"
    jobs: int = 1

    def validate(self) -> None:
        unknown = [m for m in self.models if m not in CHECKPOINTS]
        if unknown:
            raise ValueError(
                f"unknown models {unknown}; choose from {sorted(CHECKPOINTS)}"
            )
        if not self.models:
            raise ValueError("at least one model required")


@dataclass
class ExtractionResult:
    written: dict[str, list[str]] = field(default_factory=dict)  # id -> model dirs
    vad_regions: dict[str, list[tuple[float, float]]] = field(default_factory=dict)
    errors: list[dict] = field(default_factory=list)

    @property
    def n_ok(self) -> int:
        return len(self.written)


def read_manifest(path: str | Path) -> list[dict]:
    rows = []
    seen = set()
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        row = json.loads(line)
        if "id" not in row or "audio" not in row:
            raise ValueError(f"{path}:{lineno}: manifest rows need id and audio")
        if row["id"] in seen:
            raise ValueError(f"{path}:{lineno}: duplicate id {row['id']!r}")
        seen.add(row["id"])
        rows.append(row)
    return rows


def _validate_regions(regions: list[tuple[float, float]]) -> list[tuple[float, float]]:
    regions = sorted(regions)
    for start, end in regions:
        if start < 0 or not start < end:
            raise InferenceFailure(f"invalid VAD region ({start}, {end})")
    for (_, e1), (s2, _) in zip(regions, regions[1:]):
        if s2 < e1:
            raise InferenceFailure("overlapping VAD regions")
    return regions


def _extract_one(row, job, embed_backends, vad_backend):
    uid = str(row["id"])
    samples = load_wav_16k(row["audio"])
    regions = _validate_regions(vad_backend.detect(samples))
    payloads = {}
    for name in job.models:
        matrix, hop_us, offset_us = embed_backends[name].embed(samples)
        payloads[name] = encode_feb(f"{name}:last", matrix, hop_us, offset_us)
    # encode everything before writing so a failed model leaves no files
    for name, payload in payloads.items():
        write_feb_atomic(Path(job.out_dir) / name / f"{uid}.feb", payload)
    return uid, regions


def run_extraction(
    job: ExtractorJob,
    embed_backends: dict[str, object],
    vad_backend: object,
    vad_out: str | Path | None = None,
    errors_out: str | Path | None = None,
) -> ExtractionResult:
    """Extract every manifest utterance; failures land in ``errors_out``."""
    job.validate()
    missing = [m for m in job.models if m not in embed_backends]
    if missing:
        raise ValueError(f"no backend supplied for {missing}")
    rows = read_manifest(job.manifest)
    result = ExtractionResult()

    def work(row):
        return _extract_one(row, job, embed_backends, vad_backend)

    if job.jobs > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=job.jobs) as pool:
            futures = [(row, pool.submit(work, row)) for row in rows]
            # manifest order keeps the VAD-JSON and sidecar reproducible
            outcomes = [
                (row, f.exception(), f.result() if f.exception() is None else None)
                for row, f in futures
            ]
    else:
        outcomes = []
        for row in rows:
            try:
                outcomes.append((row, None, work(row)))
            except Exception as exc:
                outcomes.append((row, exc, None))

    for row, exc, value in outcomes:
        uid = str(row["id"])
        if exc is not None:
            result.errors.append({"id": uid, "error": f"{type(exc).__name__}: {exc}"})
            continue
        _, regions = value
        result.written[uid] = list(job.models)
        result.vad_regions[uid] = regions

    if vad_out is not None:
        lines = [
            json.dumps(
                {
                    "id": uid,
                    "regions": [
                        {"start": round(s, 6), "end": round(e, 6)}
                        for s, e in result.vad_regions[uid]
                    ],
                }
            )
            for uid in result.vad_regions
        ]
        Path(vad_out).parent.mkdir(parents=True, exist_ok=True)
        Path(vad_out).write_text("\n".join(lines) + ("\n" if lines else ""))

    if errors_out is not None and result.errors:
        Path(errors_out).parent.mkdir(parents=True, exist_ok=True)
        Path(errors_out).write_text(
            "\n".join(json.dumps(e) for e in result.errors) + "\n"
        )
    return result
