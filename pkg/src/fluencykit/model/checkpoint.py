"""Checkpoint directory format: meta.json + weights.bin (float32 LE)."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .network import ModelConfig
from .training import TrainedModel

FORMAT_VERSION = 1


def config_fingerprint(cfg: ModelConfig, extra: dict | None = None) -> str:
    payload = asdict(cfg)
    if extra:
        payload.update(extra)
    blob = json.dumps(payload, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def save_checkpoint(model: TrainedModel, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = sorted(model.params)
    manifest = []
    offset = 0
    blobs = []
    for name in names:
        arr = np.ascontiguousarray(model.params[name], dtype="<f4")
        blobs.append(arr.tobytes())
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += len(blobs[-1])
    meta = {
        "format_version": FORMAT_VERSION,
        "config": asdict(model.cfg),
        "d": model.d,
        "k": model.k,
        "seed": model.cfg.seed,
        "alpha": [float(a) for a in model.alpha],
        "marker_mean": None if model.marker_mean is None else list(map(float, model.marker_mean)),
        "marker_std": None if model.marker_std is None else list(map(float, model.marker_std)),
        "tensors": manifest,
        "fingerprint": config_fingerprint(model.cfg, {"d": model.d, "k": model.k}),
    }
    (directory / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    (directory / "weights.bin").write_bytes(b"".join(blobs))


def load_checkpoint(directory: str | Path) -> TrainedModel:
    directory = Path(directory)
    meta = json.loads((directory / "meta.json").read_text())
    if meta["format_version"] != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format {meta['format_version']}")
    raw = (directory / "weights.bin").read_bytes()
    cfg_dict = dict(meta["config"])
    if cfg_dict.get("fixed_alpha") is not None:
        cfg_dict["fixed_alpha"] = tuple(cfg_dict["fixed_alpha"])
    cfg = ModelConfig(**cfg_dict)
    params = {}
    for entry in meta["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=entry["offset"])
        params[entry["name"]] = arr.reshape(shape).astype(np.float64)
    return TrainedModel(
        params=params,
        cfg=cfg,
        d=meta["d"],
        k=meta["k"],
        marker_mean=None if meta["marker_mean"] is None else np.array(meta["marker_mean"]),
        marker_std=None if meta["marker_std"] is None else np.array(meta["marker_std"]),
    )
