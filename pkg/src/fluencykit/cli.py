"""Batch pipeline CLI.

Subcommands: segment, features, train, eval, sweep, ablate,
export-embeddings.  A TOML or JSON config file can pre-set any flag;
explicit flags win.  Logs go to stderr, data to files/stdout.  Exit codes:
0 success, 2 validation error, 1 runtime error.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import logging
import os
import sys
from pathlib import Path

from . import embeddings as emb_mod
from .audio import AudioError
from .evaluation import experiment as exp_mod
from .evaluation.manifest import ManifestError, load_manifest
from .evaluation.metrics import confusion_matrix, macro_f1, micro_f1, pearson
from .features import FEATURE_CSV_HEADER, chunk_markers, features_to_csv
from .model import (
    ModelConfig,
    config_fingerprint,
    load_checkpoint,
    predict,
    save_checkpoint,
    train,
)
from .segmentation import (
    SegmentationError,
    VadConfig,
    chunk_breath_groups,
    chunks_to_csv,
    detect_speech,
    load_external_vad,
    sweep_delta,
)

log = logging.getLogger("fluencykit")

DEFAULT_DELTAS = [200.0, 250.0, 300.0, 350.0]


class UsageError(Exception):
    pass


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML or JSON config file; flags override it")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1, help="per-utterance parallelism")


def _add_vad(p: argparse.ArgumentParser) -> None:
    p.add_argument("--delta-ms", type=float, default=300.0)
    p.add_argument("--frame-ms", type=float, default=30.0)
    p.add_argument("--hop-ms", type=float, default=10.0)
    p.add_argument("--energy-floor-db", type=float, default=-60.0)
    p.add_argument("--relative-threshold-db", type=float, default=12.0)
    p.add_argument("--min-speech-ms", type=float, default=100.0)
    p.add_argument("--bridge-ms", type=float, default=100.0)
    p.add_argument("--vad-json", help="external VAD regions instead of energy VAD")


def _add_embedding(p: argparse.ArgumentParser) -> None:
    p.add_argument("--emb", choices=["mock", "feb"], default="mock")
    p.add_argument(
        "--emb-dir",
        default=os.environ.get("FLUENCY_EMB_DIR"),
        help="FEB1 embedding root (env FLUENCY_EMB_DIR)",
    )
    p.add_argument("--mock-dim", type=int, default=64)


def _add_model(p: argparse.ArgumentParser) -> None:
    p.add_argument("--conv-filters", type=int, default=128)
    p.add_argument("--kernel", type=int, default=3)
    p.add_argument("--lstm-hidden", type=int, default=256)
    p.add_argument("--lstm-layers", type=int, default=2)
    p.add_argument("--dropout", type=float, default=0.3)
    p.add_argument("--learning-rate", type=float, default=1e-4)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--vq-markers", action="store_true",
                   help="append voice-quality values to the markers")
    p.add_argument("--no-markers", action="store_true")
    p.add_argument("--protocol", choices=["auto", "cv", "fixed"], default="auto")
    p.add_argument("--k-folds", type=int, default=5)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fluencykit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("segment", help="chunk CSV + stats from a manifest")
    _add_common(p); _add_vad(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--stats", help="optional JSON stats path")

    p = sub.add_parser("features", help="per-chunk fluency marker CSV")
    _add_common(p); _add_vad(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train a classifier, save a checkpoint")
    _add_common(p); _add_vad(p); _add_embedding(p); _add_model(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    _add_common(p); _add_vad(p); _add_embedding(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--vq-markers", action="store_true")
    p.add_argument("--no-markers", action="store_true")

    p = sub.add_parser("sweep", help="chunking statistics per silence threshold")
    _add_common(p); _add_vad(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--deltas", default=",".join(str(int(d)) for d in DEFAULT_DELTAS),
                   help="comma-separated thresholds in ms")
    p.add_argument("--out", required=True)

    p = sub.add_parser("ablate", help="run the ablation grid")
    _add_common(p); _add_vad(p); _add_embedding(p); _add_model(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("export-embeddings", help="fused utterance embedding CSV")
    _add_common(p); _add_vad(p); _add_embedding(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint", help="use this checkpoint's fusion weights")

    return parser


def _load_config_file(path: str) -> dict:
    text = Path(path).read_bytes()
    if path.endswith(".toml"):
        try:
            import tomllib  # py311+
        except ModuleNotFoundError:
            import tomli as tomllib
        return tomllib.loads(text.decode("utf-8"))
    if path.endswith(".json"):
        return json.loads(text)
    raise UsageError(f"config must be .toml or .json, got {path}")


def _merge_config(args: argparse.Namespace, argv: list[str]) -> argparse.Namespace:
    """Overlay config-file values under explicitly passed flags."""
    if not getattr(args, "config", None):
        return args
    cfg = _load_config_file(args.config)
    valid = set(vars(args))
    unknown = [k for k in cfg if k.replace("-", "_") not in valid]
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    # find flags given explicitly so they keep priority over the file
    explicit = set()
    for tok in argv:
        if tok.startswith("--"):
            explicit.add(tok[2:].split("=")[0].replace("-", "_"))
    for key, value in cfg.items():
        dest = key.replace("-", "_")
        if dest not in explicit:
            setattr(args, dest, value)
    return args


def _vad_config(args) -> VadConfig:
    return VadConfig(
        frame_ms=args.frame_ms,
        hop_ms=args.hop_ms,
        energy_floor_db=args.energy_floor_db,
        relative_threshold_db=args.relative_threshold_db,
        min_speech_ms=args.min_speech_ms,
        bridge_ms=args.bridge_ms,
    )


def _model_config(args) -> ModelConfig:
    return ModelConfig(
        conv_filters=args.conv_filters,
        kernel=args.kernel,
        lstm_hidden=args.lstm_hidden,
        lstm_layers=args.lstm_layers,
        dropout=args.dropout,
        learning_rate=args.learning_rate,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
    )


def _experiment_config(args, model_cfg: ModelConfig | None = None) -> exp_mod.ExperimentConfig:
    return exp_mod.ExperimentConfig(
        model=model_cfg or ModelConfig(seed=args.seed),
        vad=_vad_config(args),
        delta_ms=args.delta_ms,
        emb_source=args.emb,
        emb_dir=args.emb_dir,
        mock_dim=args.mock_dim,
        vq_markers=getattr(args, "vq_markers", False),
        no_markers=getattr(args, "no_markers", False),
        protocol=getattr(args, "protocol", "auto"),
        k_folds=getattr(args, "k_folds", 5),
        seed=args.seed,
        jobs=args.jobs,
    )


def _log_fingerprint(args, model_cfg: ModelConfig | None = None) -> None:
    cfg = model_cfg or ModelConfig(seed=getattr(args, "seed", 0))
    extra = {k: v for k, v in sorted(vars(args).items()) if k not in ("command", "config")}
    log.info("config fingerprint %s", config_fingerprint(cfg, extra))


def _segmentation_inputs(args):
    entries = load_manifest(args.manifest)
    ext = load_external_vad(args.vad_json) if args.vad_json else None
    vad = _vad_config(args)

    def one(entry):
        buf = exp_mod.load_and_condition(entry.audio_path, entry.id)
        if ext is not None:
            regions = ext.get(entry.id, [])
            if not regions:
                log.warning("%s: no external VAD regions, skipping", entry.id)
        else:
            regions = detect_speech(buf, vad)
        return entry, buf, regions

    items = list(_parallel_map(one, entries, args.jobs))
    return items, vad


def _parallel_map(fn, values, jobs: int):
    """Order-preserving map; threads when jobs > 1 (numpy releases the GIL)."""
    if jobs > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, values))
    return [fn(v) for v in values]


def cmd_segment(args) -> int:
    _log_fingerprint(args)
    items, vad = _segmentation_inputs(args)
    all_chunks = []
    for entry, buf, regions in items:
        all_chunks.extend(chunk_breath_groups(buf, regions, args.delta_ms, vad))
    Path(args.out).write_text(chunks_to_csv(all_chunks))
    log.info("wrote %d chunks for %d utterances to %s", len(all_chunks), len(items), args.out)
    if args.stats:
        stats = sweep_delta([(b, r) for _, b, r in items], [args.delta_ms], vad)[args.delta_ms]
        Path(args.stats).write_text(json.dumps({
            "delta_ms": stats.delta_ms,
            "chunk_count": stats.chunk_count,
            "mean_duration": stats.mean_duration,
            "std_duration": stats.std_duration,
            "per_utterance": stats.per_utterance,
        }, indent=2, sort_keys=True))
    return 0


def cmd_features(args) -> int:
    _log_fingerprint(args)
    items, vad = _segmentation_inputs(args)

    def one(item):
        entry, buf, regions = item
        chunks = chunk_breath_groups(buf, regions, args.delta_ms, vad)
        rows, vqs = chunk_markers(
            buf, chunks, entry.transcript, (0.0, buf.duration), with_voice_quality=True
        )
        return features_to_csv(entry.id, chunks, rows, vqs)

    lines = [FEATURE_CSV_HEADER]
    for chunk_lines in _parallel_map(one, items, args.jobs):
        lines.extend(chunk_lines)
    Path(args.out).write_text("\n".join(lines) + "\n")
    log.info("wrote %s", args.out)
    return 0


def cmd_train(args) -> int:
    model_cfg = _model_config(args)
    _log_fingerprint(args, model_cfg)
    cfg = _experiment_config(args, model_cfg)
    cfg.validate()
    entries = load_manifest(args.manifest)
    train_entries = [e for e in entries if e.split != "test"]
    ext = load_external_vad(args.vad_json) if args.vad_json else None
    prepared, skipped = exp_mod.prepare_corpus(train_entries, cfg, ext)
    for uid, reason in skipped.items():
        log.warning("skipping %s: %s", uid, reason)
    samples = [prepared[e.id].to_sample() for e in train_entries if e.id in prepared]
    model, history = train(samples, model_cfg)
    save_checkpoint(model, args.checkpoint)
    log.info(
        "trained on %d utterances (%d skipped); final loss %.4f, train F1 %.4f; saved %s",
        len(samples), len(skipped), history[-1]["loss"], history[-1]["macro_f1"],
        args.checkpoint,
    )
    return 0


def cmd_eval(args) -> int:
    _log_fingerprint(args)
    model = load_checkpoint(args.checkpoint)
    cfg = _experiment_config(args, model.cfg)
    cfg.validate()
    entries = load_manifest(args.manifest)
    ext = load_external_vad(args.vad_json) if args.vad_json else None
    prepared, skipped = exp_mod.prepare_corpus(entries, cfg, ext)
    preds, labels, ids = [], [], []
    for entry in entries:
        pu = prepared.get(entry.id)
        if pu is None:
            continue
        if pu.emb.shape[2] != model.d or pu.markers.shape[1] != model.k:
            raise UsageError(
                f"checkpoint expects d={model.d}, k={model.k} but prepared "
                f"utterances have d={pu.emb.shape[2]}, k={pu.markers.shape[1]}; "
                "match --emb/--mock-dim/--vq-markers to the training run"
            )
        preds.append(predict(model, pu.to_sample())[0])
        labels.append(pu.label)
        ids.append(entry.id)
    if not preds:
        raise UsageError("no utterances survived preparation")
    report = {
        "checkpoint": str(args.checkpoint),
        "n_manifest": len(entries),
        "n_evaluated": len(preds),
        "n_skipped": len(skipped),
        "skipped": skipped,
        "macro_f1": macro_f1(preds, labels),
        "micro_f1": micro_f1(preds, labels),
        "pcc": pearson(preds, labels) if len(preds) >= 2 else None,
        "alpha": [float(a) for a in model.alpha],
        "confusion": confusion_matrix(preds, labels).tolist(),
        "predictions": {i: int(p) for i, p in zip(ids, preds)},
        "reference_targets": exp_mod.REFERENCE_TARGETS,
    }
    Path(args.out).write_text(json.dumps(report, indent=2, sort_keys=True))
    log.info("macro-F1 %.4f, PCC %s -> %s", report["macro_f1"], report["pcc"], args.out)
    return 0


def cmd_sweep(args) -> int:
    _log_fingerprint(args)
    try:
        deltas = [float(d) for d in str(args.deltas).split(",") if d]
    except ValueError as exc:
        raise UsageError(f"bad --deltas: {args.deltas!r}") from exc
    if not deltas:
        raise UsageError("--deltas must name at least one threshold")
    items, vad = _segmentation_inputs(args)
    stats = sweep_delta([(b, r) for _, b, r in items], deltas, vad)
    payload = {
        str(d): {
            "delta_ms": s.delta_ms,
            "chunk_count": s.chunk_count,
            "mean_duration": s.mean_duration,
            "std_duration": s.std_duration,
            "per_utterance": s.per_utterance,
            "gap_histogram_ms": {str(k): v for k, v in sorted(s.gap_histogram_ms.items())},
        }
        for d, s in stats.items()
    }
    Path(args.out).write_text(json.dumps(payload, indent=2, sort_keys=True))
    counts = [stats[d].chunk_count for d in deltas]
    log.info("sweep %s -> chunk counts %s", deltas, counts)
    return 0


def cmd_ablate(args) -> int:
    model_cfg = _model_config(args)
    _log_fingerprint(args, model_cfg)
    cfg = _experiment_config(args, model_cfg)
    cfg.validate()
    entries = load_manifest(args.manifest)
    ext = load_external_vad(args.vad_json) if args.vad_json else None
    reports = exp_mod.run_ablation(entries, cfg, ext)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    for name, rep in reports.items():
        (outdir / f"{name}.json").write_text(json.dumps(rep, indent=2, sort_keys=True))
    (outdir / "summary.csv").write_text(exp_mod.ablation_summary_csv(reports))
    log.info("wrote %d condition reports to %s", len(reports), outdir)
    return 0


def cmd_export_embeddings(args) -> int:
    _log_fingerprint(args)
    cfg = _experiment_config(args)
    cfg.validate()
    entries = load_manifest(args.manifest)
    ext = load_external_vad(args.vad_json) if args.vad_json else None
    alpha = None
    if args.checkpoint:
        alpha = load_checkpoint(args.checkpoint).alpha
    csv = exp_mod.export_embedding_csv(entries, cfg, alpha=alpha, ext_regions=ext)
    Path(args.out).write_text(csv)
    log.info("wrote %s", args.out)
    return 0


_COMMANDS = {
    "segment": cmd_segment,
    "features": cmd_features,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "ablate": cmd_ablate,
    "export-embeddings": cmd_export_embeddings,
}

_VALIDATION_ERRORS = (
    UsageError,
    ManifestError,
    SegmentationError,
    emb_mod.EmbeddingError,
    ValueError,
)


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(message)s")
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args = _merge_config(args, argv)
        return _COMMANDS[args.command](args)
    except _VALIDATION_ERRORS as exc:
        log.error("error: %s", exc)
        return 2
    except (AudioError, OSError, exp_mod.ExperimentError) as exc:
        log.error("runtime error: %s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
