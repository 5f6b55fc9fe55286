"""Training loop (Adam), gradient verification and prediction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..features import MarkerScaler
from . import network
from .network import (
    ModelConfig,
    ModelError,
    Sample,
    cross_entropy,
    forward,
    init_params,
    make_batch,
    softmax_alpha,
)


class EmptyDataset(ModelError):
    pass


class GradientMismatch(ModelError):
    def __init__(self, message: str, worst: list):
        super().__init__(message)
        self.worst = worst


@dataclass
class TrainedModel:
    params: dict[str, np.ndarray]
    cfg: ModelConfig
    d: int
    k: int
    marker_mean: np.ndarray | None = None
    marker_std: np.ndarray | None = None

    @property
    def alpha(self) -> np.ndarray:
        if self.cfg.fixed_alpha is not None:
            return np.asarray(self.cfg.fixed_alpha, dtype=np.float64)
        return softmax_alpha(self.params["theta"])

    def scaler(self) -> MarkerScaler | None:
        if self.marker_mean is None:
            return None
        return MarkerScaler(self.marker_mean, self.marker_std)

    def standardize(self, sample: Sample) -> Sample:
        sc = self.scaler()
        if sc is None or sample.markers.shape[1] == 0:
            return sample
        return Sample(sample.id, sample.emb, sc.transform(sample.markers), sample.label)


class _Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (self.m[k] / b1c) / (np.sqrt(self.v[k] / b2c) + self.eps)


def _canonicalize(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    # round-trip through float32 so checkpoints reload to identical weights
    return {k: v.astype(np.float32).astype(np.float64) for k, v in params.items()}


def _batch_macro_f1(preds: list[int], labels: list[int]) -> float:
    from ..evaluation.metrics import macro_f1

    return macro_f1(preds, labels)


def train(
    samples: list[Sample],
    cfg: ModelConfig,
) -> tuple[TrainedModel, list[dict]]:
    """Fit the classifier on raw-marker samples.

    Marker standardization stats are computed here, on exactly the samples
    given (the caller passes one training fold).  History records loss and
    training macro-F1 per epoch; the alpha simplex is asserted every epoch.
    """
    cfg.validate()
    if not samples:
        raise EmptyDataset("no training samples")
    d = samples[0].emb.shape[2]
    k = samples[0].markers.shape[1]
    for s in samples:
        if s.emb.shape[0] != 3 or s.emb.shape[2] != d or s.markers.shape[1] != k:
            raise ValueError(f"{s.id}: inconsistent representation shape")
        if s.label is None:
            raise ValueError(f"{s.id}: training sample without label")

    if k > 0:
        scaler = MarkerScaler.fit(np.vstack([s.markers for s in samples]))
        samples = [
            Sample(s.id, s.emb, scaler.transform(s.markers), s.label) for s in samples
        ]
        marker_mean, marker_std = scaler.mean, scaler.std
    else:
        marker_mean = marker_std = None

    params = init_params(cfg, d, k)
    opt = _Adam(params, cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed)
    dropout_rng = np.random.default_rng(cfg.seed + 1)

    history: list[dict] = []
    n = len(samples)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        losses = []
        preds: list[int] = []
        labels: list[int] = []
        for lo in range(0, n, cfg.batch_size):
            chosen = [samples[i] for i in order[lo : lo + cfg.batch_size]]
            batch = make_batch(chosen)
            loss, grads, probs = network.loss_and_grads(
                params, batch, cfg, train_mode=True, dropout_rng=dropout_rng
            )
            opt.step(params, grads)
            losses.append(loss)
            preds.extend(int(np.argmax(p)) for p in probs)
            labels.extend(int(l) for l in batch["labels"])
        alpha = softmax_alpha(params["theta"])
        assert (alpha >= 0).all() and abs(alpha.sum() - 1.0) < 1e-12, "alpha left the simplex"
        history.append(
            {
                "epoch": epoch,
                "loss": float(np.mean(losses)),
                "macro_f1": _batch_macro_f1(preds, labels),
            }
        )

    model = TrainedModel(
        params=_canonicalize(params),
        cfg=cfg,
        d=d,
        k=k,
        marker_mean=marker_mean,
        marker_std=marker_std,
    )
    return model, history


def predict_probs(model: TrainedModel, sample: Sample) -> np.ndarray:
    batch = make_batch([model.standardize(sample)])
    probs, _ = forward(model.params, batch, model.cfg, train_mode=False)
    return probs[0]


def predict(model: TrainedModel, sample: Sample) -> tuple[int, np.ndarray]:
    """Argmax class (ties go to the lower index) and the probabilities."""
    probs = predict_probs(model, sample)
    return int(np.argmax(probs)), probs


@dataclass
class GradCheckReport:
    checked: int
    max_rel_error: float
    tolerance: float
    per_tensor: dict[str, float] = field(default_factory=dict)
    worst: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def grad_check(
    params: dict[str, np.ndarray],
    batch: dict,
    cfg: ModelConfig,
    tolerance: float = 1e-4,
    n_coords: int = 200,
    step: float = 1e-5,
    seed: int = 0,
) -> GradCheckReport:
    """Central finite differences vs analytic gradients, dropout off.

    Samples at least ``n_coords`` coordinates spread over every tensor
    (theta is always checked in full).  Raises GradientMismatch when any
    coordinate exceeds the relative tolerance.
    """
    labels = batch["labels"]
    _, grads, _ = network.loss_and_grads(params, batch, cfg, train_mode=False)

    rng = np.random.default_rng(seed)
    names = sorted(params)
    total = sum(params[n].size for n in names)
    coords: list[tuple[str, int]] = [("theta", i) for i in range(params["theta"].size)]
    for name in names:
        if name == "theta":
            continue
        size = params[name].size
        want = max(2, int(round(n_coords * size / total)))
        picks = rng.choice(size, size=min(want, size), replace=False)
        coords.extend((name, int(i)) for i in picks)
    while len(coords) < n_coords:
        name = names[int(rng.integers(len(names)))]
        coords.append((name, int(rng.integers(params[name].size))))

    results = []
    for name, idx in coords:
        flat = params[name].reshape(-1)
        orig = flat[idx]
        flat[idx] = orig + step
        probs_p, _ = forward(params, batch, cfg, train_mode=False)
        lp = cross_entropy(probs_p, labels)
        flat[idx] = orig - step
        probs_m, _ = forward(params, batch, cfg, train_mode=False)
        lm = cross_entropy(probs_m, labels)
        flat[idx] = orig
        numeric = (lp - lm) / (2.0 * step)
        analytic = grads[name].reshape(-1)[idx]
        # the 1e-6 floor keeps finite-difference noise on near-zero
        # coordinates from registering as a relative error
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6)
        results.append((rel, name, idx, analytic, numeric))

    results.sort(reverse=True)
    per_tensor: dict[str, float] = {}
    for rel, name, _, _, _ in results:
        per_tensor[name] = max(per_tensor.get(name, 0.0), rel)
    report = GradCheckReport(
        checked=len(results),
        max_rel_error=results[0][0],
        tolerance=tolerance,
        per_tensor=per_tensor,
        worst=results[:10],
    )
    if not report.passed:
        bad = ", ".join(
            f"{name}[{idx}] analytic={a:.3e} numeric={n:.3e} rel={rel:.2e}"
            for rel, name, idx, a, n in report.worst
            if rel >= tolerance
        )
        raise GradientMismatch(f"gradient mismatch: {bad}", report.worst)
    return report
