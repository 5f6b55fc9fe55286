"""CLI: pull frozen checkpoints, write FEB1 embeddings and VAD-JSON."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .backends import (
    CHECKPOINTS,
    DownloadFailure,
    SileroVadBackend,
    TransformersBackend,
)
from .extract import ExtractorJob, run_extraction

log = logging.getLogger("fluency-extract")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fluency-extract", description=__doc__)
    p.add_argument("--manifest", required=True, help="JSONL with id + audio per line")
    p.add_argument(
        "--emb-dir",
        default=os.environ.get("FLUENCY_EMB_DIR"),
        required=os.environ.get("FLUENCY_EMB_DIR") is None,
        help="output root for <model>/<utterance>.feb (env FLUENCY_EMB_DIR)",
    )
    p.add_argument("--vad-out", help="VAD-JSON path (default <emb-dir>/vad.jsonl)")
    p.add_argument("--errors-out", help="errors sidecar (default <emb-dir>/errors.jsonl)")
    p.add_argument("--models", default=",".join(CHECKPOINTS),
                   help="comma-separated subset of " + ",".join(CHECKPOINTS))
    p.add_argument("--device", default="cpu")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seed", type=int, default=0, help="accepted for interface parity")
    return p


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(message)s")
    args = build_parser().parse_args(argv)
    models = tuple(m.strip() for m in args.models.split(",") if m.strip())
    job = ExtractorJob(
        manifest=args.manifest,
        out_dir=args.emb_dir,
        models=models,
        device=args.device,
        jobs=args.jobs,
    )
    try:
        job.validate()
    except ValueError as exc:
        log.error("error: %s", exc)
        return 2

    try:
        log.info("loading frozen checkpoints (no fine-tuning): %s", ", ".join(models))
        backends = {
            name: TransformersBackend(CHECKPOINTS[name], device=args.device)
            for name in models
        }
        vad = SileroVadBackend(device=args.device)
    except DownloadFailure as exc:
        log.error("download failure: %s", exc)
        return 1

    vad_out = args.vad_out or str(Path(args.emb_dir) / "vad.jsonl")
    errors_out = args.errors_out or str(Path(args.emb_dir) / "errors.jsonl")
    result = run_extraction(job, backends, vad, vad_out=vad_out, errors_out=errors_out)
    log.info(
        "extracted %d utterances (%d failed) into %s",
        result.n_ok, len(result.errors), args.emb_dir,
    )
    return 0 if result.n_ok > 0 or not result.errors else 1


if __name__ == "__main__":
    sys.exit(main())
