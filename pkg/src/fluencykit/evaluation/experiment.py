"""End-to-end experiment and ablation runners.

Each utterance goes segment -> markers -> embed -> pool; folds then train
the classifier and score the held-out part.  Fold assignment is computed
once from the manifest so every ablation condition sees identical splits.
"""

from __future__ import annotations

import concurrent.futures
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .. import embeddings as emb_mod
from ..audio import load_wav, normalize_amplitude, resample
from ..features import chunk_markers
from ..model import ModelConfig, Sample, SOURCES, config_fingerprint, predict, train
from ..segmentation import Chunk, SpeechRegion, VadConfig, chunk_breath_groups, detect_speech
from .manifest import ManifestEntry
from .metrics import confusion_matrix, kfold_split, macro_f1, micro_f1, pearson

# headline numbers reported for the full-scale corpora; recorded in reports
# for comparison, never asserted at desk scale
REFERENCE_TARGETS = {
    "speechocean762": {"f1": 0.825, "pcc": 0.796},
    "avalinguo": {"f1": 0.969, "pcc": 0.963},
}

TARGET_SAMPLE_RATE = 16000


class ExperimentError(Exception):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    vad: VadConfig = field(default_factory=VadConfig)
    delta_ms: float = 300.0
    emb_source: str = "mock"          # "mock" | "feb"
    emb_dir: str | None = None
    mock_dim: int = 1024
    models: tuple[str, ...] = SOURCES
    vq_markers: bool = False
    no_markers: bool = False
    no_chunking: bool = False
    protocol: str = "auto"            # "auto" | "cv" | "fixed"
    k_folds: int = 5
    seed: int = 0
    jobs: int = 1

    def validate(self) -> None:
        if self.emb_source not in ("mock", "feb"):
            raise ValueError(f"emb_source must be mock or feb, got {self.emb_source!r}")
        if self.emb_source == "feb" and not self.emb_dir:
            raise ValueError("emb_dir is required when emb_source is feb")
        if self.protocol not in ("auto", "cv", "fixed"):
            raise ValueError(f"unknown protocol {self.protocol!r}")
        if len(self.models) != 3:
            raise ValueError("exactly three embedding sources are fused")
        self.model.validate()
        self.vad.validate()


@dataclass
class PreparedUtterance:
    id: str
    label: int
    emb: np.ndarray        # (3, M, d)
    markers: np.ndarray    # (M, k)
    chunks: list[Chunk]

    def to_sample(self) -> Sample:
        return Sample(self.id, self.emb, self.markers, self.label)


def load_and_condition(path: str, utterance_id: str):
    buf = load_wav(path)
    buf = replace(buf, id=utterance_id)
    buf = resample(buf, TARGET_SAMPLE_RATE)
    return normalize_amplitude(buf)


def prepare_utterance(
    entry: ManifestEntry,
    cfg: ExperimentConfig,
    ext_regions: dict[str, list[SpeechRegion]] | None = None,
) -> PreparedUtterance | str:
    """Run the per-utterance pipeline; returns a skip reason string on failure."""
    buf = load_and_condition(entry.audio_path, entry.id)
    span = (0.0, buf.duration)
    if cfg.no_chunking:
        chunks = [Chunk(entry.id, 0, 0.0, buf.duration)]
    else:
        if ext_regions is not None:
            regions = ext_regions.get(entry.id, [])
        else:
            regions = detect_speech(buf, cfg.vad)
        if not regions:
            return "no speech regions"
        chunks = chunk_breath_groups(buf, regions, cfg.delta_ms, cfg.vad)
        if not chunks:
            return "no chunks"

    frame_embs = []
    for j, model_id in enumerate(cfg.models):
        if cfg.emb_source == "mock":
            fe = emb_mod.mock_embed(
                buf, cfg.mock_dim, emb_mod.derive_seed(cfg.seed + j, entry.id)
            )
        else:
            fe = emb_mod.read_feb(emb_mod.feb_path(cfg.emb_dir, model_id, entry.id))
        frame_embs.append(fe)
    d = max(fe.dim for fe in frame_embs)

    marker_rows, _ = chunk_markers(
        buf, chunks, entry.transcript, span, with_voice_quality=cfg.vq_markers
    )
    kept_chunks: list[Chunk] = []
    kept_markers: list[np.ndarray] = []
    pooled: list[np.ndarray] = []  # one (3, d) entry per kept chunk
    for i, chunk in enumerate(chunks):
        sliced = [emb_mod.slice_frames(fe, chunk) for fe in frame_embs]
        if any(s.frame_count == 0 for s in sliced):
            continue  # empty-chunk policy: skip the chunk
        ce = emb_mod.project_to_common(
            {m: emb_mod.mean_pool(s) for m, s in zip(cfg.models, sliced)}, d
        )
        pooled.append(np.stack([ce.vectors[m] for m in cfg.models]))
        kept_chunks.append(chunk)
        kept_markers.append(marker_rows[i])
    if not kept_chunks:
        return "no chunks with embedding frames"

    emb = np.stack(pooled, axis=1)  # (3, M, d)
    markers = np.vstack(kept_markers)
    if cfg.no_markers:
        markers = np.zeros((len(kept_chunks), 0))
    return PreparedUtterance(entry.id, entry.label, emb, markers, kept_chunks)


def _prepare_worker(args):
    entry, cfg, ext_regions = args
    try:
        return entry.id, prepare_utterance(entry, cfg, ext_regions)
    except Exception as exc:  # surfaced as a skip, run continues
        return entry.id, f"error: {exc}"


def prepare_corpus(
    entries: list[ManifestEntry],
    cfg: ExperimentConfig,
    ext_regions: dict[str, list[SpeechRegion]] | None = None,
) -> tuple[dict[str, PreparedUtterance], dict[str, str]]:
    prepared: dict[str, PreparedUtterance] = {}
    skipped: dict[str, str] = {}
    if cfg.jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(_prepare_worker, [(e, cfg, ext_regions) for e in entries]))
    else:
        results = [_prepare_worker((e, cfg, ext_regions)) for e in entries]
    for uid, res in results:
        if isinstance(res, str):
            skipped[uid] = res
        else:
            prepared[uid] = res
    return prepared, skipped


def _resolve_protocol(entries: list[ManifestEntry], cfg: ExperimentConfig) -> str:
    if cfg.protocol != "auto":
        return cfg.protocol
    return "fixed" if all(e.split in ("train", "test") for e in entries) else "cv"


def _fold_plan(entries: list[ManifestEntry], cfg: ExperimentConfig, protocol: str):
    """(train_ids, test_ids) per fold, computed from the manifest alone."""
    if protocol == "fixed":
        train_ids = [e.id for e in entries if e.split == "train"]
        test_ids = [e.id for e in entries if e.split == "test"]
        if not train_ids or not test_ids:
            raise ExperimentError("fixed protocol needs train and test split entries")
        return [(train_ids, test_ids)]
    labels = [e.label for e in entries]
    folds = kfold_split(labels, cfg.k_folds, cfg.seed)
    return [
        ([entries[i].id for i in tr], [entries[i].id for i in te]) for tr, te in folds
    ]


def run_experiment(
    entries: list[ManifestEntry],
    cfg: ExperimentConfig,
    ext_regions: dict[str, list[SpeechRegion]] | None = None,
    condition: str = "fusion_chunking",
    _prepared: tuple[dict, dict] | None = None,
) -> dict:
    """Train/evaluate per the dataset protocol; returns a JSON-ready report."""
    cfg.validate()
    t_start = time.perf_counter()
    protocol = _resolve_protocol(entries, cfg)
    plan = _fold_plan(entries, cfg, protocol)
    prepared, skipped = _prepared if _prepared is not None else prepare_corpus(
        entries, cfg, ext_regions
    )

    folds_out = []
    confusion_total = np.zeros((3, 3), dtype=np.int64)
    for fold_idx, (train_ids, test_ids) in enumerate(plan):
        train_samples = [prepared[i].to_sample() for i in train_ids if i in prepared]
        test_samples = [prepared[i].to_sample() for i in test_ids if i in prepared]
        if not train_samples or not test_samples:
            raise ExperimentError(f"fold {fold_idx}: empty train or test after skips")
        model, history = train(train_samples, cfg.model)
        preds = [predict(model, s)[0] for s in test_samples]
        labels = [s.label for s in test_samples]
        cm = confusion_matrix(preds, labels)
        confusion_total += cm
        folds_out.append(
            {
                "fold": fold_idx,
                "n_train": len(train_samples),
                "n_test": len(test_samples),
                "macro_f1": macro_f1(preds, labels),
                "micro_f1": micro_f1(preds, labels),
                "pcc": pearson(preds, labels),
                "alpha": [float(a) for a in model.alpha],
                "confusion": cm.tolist(),
                "final_train_loss": history[-1]["loss"] if history else None,
                "final_train_macro_f1": history[-1]["macro_f1"] if history else None,
            }
        )

    pccs = [f["pcc"] for f in folds_out if f["pcc"] is not None]
    report = {
        "condition": condition,
        "protocol": protocol,
        "config_fingerprint": config_fingerprint(
            cfg.model,
            {
                "delta_ms": cfg.delta_ms, "emb_source": cfg.emb_source,
                "mock_dim": cfg.mock_dim, "vq_markers": cfg.vq_markers,
                "no_markers": cfg.no_markers, "no_chunking": cfg.no_chunking,
                "protocol": protocol, "k_folds": cfg.k_folds, "seed": cfg.seed,
            },
        ),
        "seed": cfg.seed,
        "emb_source": cfg.emb_source,
        "delta_ms": cfg.delta_ms,
        "n_manifest": len(entries),
        "n_evaluated": len(prepared),
        "n_skipped": len(skipped),
        "skipped": skipped,
        "folds": folds_out,
        "aggregate": {
            "macro_f1": float(np.mean([f["macro_f1"] for f in folds_out])),
            "micro_f1": float(np.mean([f["micro_f1"] for f in folds_out])),
            "pcc": float(np.mean(pccs)) if pccs else None,
        },
        "confusion_total": confusion_total.tolist(),
        "alpha_mean": np.mean([f["alpha"] for f in folds_out], axis=0).tolist(),
        # corpora name class 1 differently (Medium vs Intermediate); one
        # ordinal encoding is used throughout
        "label_names": {"0": "Low", "1": "Medium/Intermediate", "2": "High"},
        "reference_targets": REFERENCE_TARGETS,
        "runtime_seconds": time.perf_counter() - t_start,
    }
    return report


ABLATION_CONDITIONS = (
    "full",
    "single_wav2vec2",
    "single_hubert",
    "single_wavlm",
    "no_chunking",
    "no_markers",
)


def run_ablation(
    entries: list[ManifestEntry],
    cfg: ExperimentConfig,
    ext_regions: dict[str, list[SpeechRegion]] | None = None,
) -> dict[str, dict]:
    """Full model vs single-source, no-chunking and no-marker conditions.

    All conditions share the fold plan and seed.
    """
    cfg.validate()
    base_prepared = prepare_corpus(entries, cfg, ext_regions)
    reports: dict[str, dict] = {}
    reports["full"] = run_experiment(
        entries, cfg, ext_regions, condition="full", _prepared=base_prepared
    )
    for j, model_id in enumerate(cfg.models):
        onehot = tuple(1.0 if i == j else 0.0 for i in range(3))
        c = replace(cfg, model=replace(cfg.model, fixed_alpha=onehot))
        reports[f"single_{model_id}"] = run_experiment(
            entries, c, ext_regions, condition=f"single_{model_id}",
            _prepared=base_prepared,
        )
    c = replace(cfg, no_chunking=True)
    reports["no_chunking"] = run_experiment(
        entries, c, ext_regions, condition="no_chunking",
        _prepared=prepare_corpus(entries, c, ext_regions),
    )
    c = replace(cfg, no_markers=True)
    reports["no_markers"] = run_experiment(
        entries, c, ext_regions, condition="no_markers",
        _prepared=prepare_corpus(entries, c, ext_regions),
    )
    return reports


def ablation_summary_csv(reports: dict[str, dict]) -> str:
    lines = ["condition,macro_f1,micro_f1,pcc,alpha_1,alpha_2,alpha_3"]
    for name, rep in reports.items():
        agg = rep["aggregate"]
        pcc = "" if agg["pcc"] is None else f"{agg['pcc']:.6f}"
        a = rep["alpha_mean"]
        lines.append(
            f"{name},{agg['macro_f1']:.6f},{agg['micro_f1']:.6f},{pcc},"
            f"{a[0]:.6f},{a[1]:.6f},{a[2]:.6f}"
        )
    return "\n".join(lines) + "\n"


def export_embedding_csv(
    entries: list[ManifestEntry],
    cfg: ExperimentConfig,
    alpha: np.ndarray | None = None,
    ext_regions: dict[str, list[SpeechRegion]] | None = None,
) -> str:
    """Per-utterance fused embedding rows for external projection tools."""
    cfg.validate()
    if alpha is None:
        alpha = np.full(3, 1.0 / 3.0)
    prepared, _ = prepare_corpus(entries, cfg, ext_regions)
    lines = []
    for entry in entries:
        pu = prepared.get(entry.id)
        if pu is None:
            continue
        fused = np.einsum("s,smd->md", alpha, pu.emb).mean(axis=0)
        lines.append(
            f"{pu.id},{pu.label}," + ",".join(f"{v:.6f}" for v in fused)
        )
    return "\n".join(lines) + "\n"
