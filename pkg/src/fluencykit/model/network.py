"""Forward/backward pass of the fusion + CNN-BiLSTM network.

Everything runs in float64 numpy so analytic gradients can be verified
against central differences.  Utterances are batched by padding the chunk
axis; a mask keeps padded positions out of the convolution input, the LSTM
recurrence (state passes through unchanged) and the mean pooling, so a
batched forward matches the unpadded single-utterance forward exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

SOURCES = ("wav2vec2", "hubert", "wavlm")


class ModelError(Exception):
    pass


class EmptyUtterance(ModelError):
    pass


class NonFiniteLoss(ModelError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    conv_filters: int = 128
    kernel: int = 3
    stride: int = 1
    lstm_layers: int = 2
    lstm_hidden: int = 256
    dropout: float = 0.3
    classes: int = 3
    learning_rate: float = 1e-4
    epochs: int = 200
    batch_size: int = 16
    seed: int = 0
    fixed_alpha: Optional[tuple[float, float, float]] = None

    def validate(self) -> None:
        positive = {
            "conv_filters": self.conv_filters,
            "kernel": self.kernel,
            "stride": self.stride,
            "lstm_layers": self.lstm_layers,
            "lstm_hidden": self.lstm_hidden,
            "classes": self.classes,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
        }
        for name, v in positive.items():
            if v <= 0:
                raise ValueError(f"{name} must be positive, got {v}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.stride != 1:
            raise ValueError("only stride=1 is supported")
        if self.kernel % 2 != 1:
            raise ValueError("kernel must be odd (same padding)")
        if self.fixed_alpha is not None:
            a = np.asarray(self.fixed_alpha, dtype=np.float64)
            if a.shape != (3,) or (a < 0).any() or abs(a.sum() - 1.0) > 1e-9:
                raise ValueError("fixed_alpha must be 3 non-negative weights summing to 1")


@dataclass
class FusionParams:
    theta: np.ndarray = field(default_factory=lambda: np.zeros(3))


@dataclass(frozen=True)
class Sample:
    """One utterance ready for the classifier."""

    id: str
    emb: np.ndarray       # (3, M, d) per-source pooled chunk embeddings
    markers: np.ndarray   # (M, k), k may be 0
    label: int | None = None

    @property
    def n_chunks(self) -> int:
        return self.emb.shape[1]


def softmax_alpha(theta: np.ndarray) -> np.ndarray:
    z = np.exp(theta - theta.max())
    return z / z.sum()


def fuse(chunk_vectors: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Convex combination of the three per-source vectors, alpha = softmax(theta)."""
    alpha = softmax_alpha(np.asarray(theta, dtype=np.float64))
    return np.tensordot(alpha, np.asarray(chunk_vectors, dtype=np.float64), axes=(0, 0))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def init_params(cfg: ModelConfig, d: int, k: int, seed: int | None = None) -> dict[str, np.ndarray]:
    """Uniform +-1/sqrt(fan_in) weights, zero biases, zero fusion logits."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    D = d + k
    H = cfg.lstm_hidden
    F = cfg.conv_filters

    def uniform(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    params: dict[str, np.ndarray] = {
        "theta": np.zeros(3),
        "conv_w": uniform((cfg.kernel, D, F), cfg.kernel * D),
        "conv_b": np.zeros(F),
    }
    d_in = F
    for layer in range(1, cfg.lstm_layers + 1):
        for direction in ("fw", "bw"):
            params[f"lstm{layer}_{direction}_wx"] = uniform((d_in, 4 * H), d_in)
            params[f"lstm{layer}_{direction}_wh"] = uniform((H, 4 * H), H)
            params[f"lstm{layer}_{direction}_b"] = np.zeros(4 * H)
        d_in = 2 * H
    params["dense_w"] = uniform((2 * H, cfg.classes), 2 * H)
    params["dense_b"] = np.zeros(cfg.classes)
    return params


def make_batch(samples: list[Sample]) -> dict:
    """Pad to the longest chunk sequence; mask marks real positions."""
    if not samples:
        raise EmptyUtterance("empty batch")
    for s in samples:
        if s.n_chunks < 1:
            raise EmptyUtterance(f"{s.id}: utterance has no chunks")
    B = len(samples)
    M = max(s.n_chunks for s in samples)
    d = samples[0].emb.shape[2]
    k = samples[0].markers.shape[1]
    emb = np.zeros((B, 3, M, d))
    markers = np.zeros((B, M, k))
    mask = np.zeros((B, M))
    labels = np.full(B, -1, dtype=np.int64)
    for i, s in enumerate(samples):
        m = s.n_chunks
        emb[i, :, :m] = s.emb
        markers[i, :m] = s.markers
        mask[i, :m] = 1.0
        if s.label is not None:
            labels[i] = s.label
    return {"emb": emb, "markers": markers, "mask": mask, "labels": labels}


def _lstm_dir_forward(x, mask, wx, wh, b):
    B, T, _ = x.shape
    H = wh.shape[0]
    i_a = np.empty((B, T, H)); f_a = np.empty((B, T, H))
    g_a = np.empty((B, T, H)); o_a = np.empty((B, T, H))
    tc_a = np.empty((B, T, H)); c_a = np.empty((B, T, H)); h_a = np.empty((B, T, H))
    h = np.zeros((B, H)); c = np.zeros((B, H))
    for t in range(T):
        z = x[:, t] @ wx + h @ wh + b
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H : 2 * H])
        g = np.tanh(z[:, 2 * H : 3 * H])
        o = _sigmoid(z[:, 3 * H :])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        m = mask[:, t : t + 1]
        c = m * c_new + (1.0 - m) * c
        h = m * h_new + (1.0 - m) * h
        i_a[:, t], f_a[:, t], g_a[:, t], o_a[:, t] = i, f, g, o
        tc_a[:, t], c_a[:, t], h_a[:, t] = tc, c, h
    cache = {"x": x, "mask": mask, "i": i_a, "f": f_a, "g": g_a, "o": o_a,
             "tc": tc_a, "c": c_a, "h": h_a}
    return h_a, cache


def _lstm_dir_backward(d_out, cache, wx, wh):
    x, mask = cache["x"], cache["mask"]
    i_a, f_a, g_a, o_a = cache["i"], cache["f"], cache["g"], cache["o"]
    tc_a, c_a, h_a = cache["tc"], cache["c"], cache["h"]
    B, T, H = d_out.shape
    d_wx = np.zeros_like(wx); d_wh = np.zeros_like(wh); d_b = np.zeros(4 * H)
    dx = np.zeros_like(x)
    dh = np.zeros((B, H)); dc = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        m = mask[:, t : t + 1]
        dht = d_out[:, t] + dh
        dh_new = m * dht
        dh_pass = (1.0 - m) * dht
        dc_pass = (1.0 - m) * dc
        i, f, g, o, tc = i_a[:, t], f_a[:, t], g_a[:, t], o_a[:, t], tc_a[:, t]
        c_prev = c_a[:, t - 1] if t > 0 else np.zeros((B, H))
        h_prev = h_a[:, t - 1] if t > 0 else np.zeros((B, H))
        do = dh_new * tc
        dc_tilde = m * dc + dh_new * o * (1.0 - tc * tc)
        di = dc_tilde * g
        dg = dc_tilde * i
        df = dc_tilde * c_prev
        dz = np.concatenate(
            [di * i * (1.0 - i), df * f * (1.0 - f), dg * (1.0 - g * g), do * o * (1.0 - o)],
            axis=1,
        )
        d_wx += x[:, t].T @ dz
        d_wh += h_prev.T @ dz
        d_b += dz.sum(axis=0)
        dx[:, t] = dz @ wx.T
        dh = dz @ wh.T + dh_pass
        dc = dc_tilde * f + dc_pass
    return dx, d_wx, d_wh, d_b


def forward(
    params: dict[str, np.ndarray],
    batch: dict,
    cfg: ModelConfig,
    train_mode: bool = False,
    dropout_rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, dict]:
    """Class probabilities (B, C) plus the cache needed for backprop."""
    emb, markers, mask = batch["emb"], batch["markers"], batch["mask"]
    B, _, M, d = emb.shape
    if M < 1:
        raise EmptyUtterance("utterance has no chunks")
    if cfg.fixed_alpha is not None:
        alpha = np.asarray(cfg.fixed_alpha, dtype=np.float64)
    else:
        alpha = softmax_alpha(params["theta"])
    fused = np.einsum("s,bsmd->bmd", alpha, emb)
    x = np.concatenate([fused, markers], axis=2) * mask[:, :, None]

    kern = cfg.kernel
    pad = kern // 2
    xp = np.zeros((B, M + 2 * pad, x.shape[2]))
    xp[:, pad : pad + M] = x
    pre = params["conv_b"] + sum(
        xp[:, j : j + M] @ params["conv_w"][j] for j in range(kern)
    )
    conv = np.maximum(pre, 0.0)

    use_dropout = train_mode and cfg.dropout > 0.0
    if use_dropout:
        if dropout_rng is None:
            dropout_rng = np.random.default_rng(cfg.seed)
        keep = 1.0 - cfg.dropout
        drop1 = (dropout_rng.random(conv.shape) < keep) / keep
        conv = conv * drop1
    else:
        drop1 = None
    conv = conv * mask[:, :, None]

    layer_in = conv
    lstm_caches = []
    for layer in range(1, cfg.lstm_layers + 1):
        out_fw, cache_fw = _lstm_dir_forward(
            layer_in, mask,
            params[f"lstm{layer}_fw_wx"], params[f"lstm{layer}_fw_wh"], params[f"lstm{layer}_fw_b"],
        )
        out_bw_rev, cache_bw = _lstm_dir_forward(
            layer_in[:, ::-1], mask[:, ::-1],
            params[f"lstm{layer}_bw_wx"], params[f"lstm{layer}_bw_wh"], params[f"lstm{layer}_bw_b"],
        )
        layer_in = np.concatenate([out_fw, out_bw_rev[:, ::-1]], axis=2)
        lstm_caches.append((cache_fw, cache_bw))

    if use_dropout:
        keep = 1.0 - cfg.dropout
        drop2 = (dropout_rng.random(layer_in.shape) < keep) / keep
        bi_out = layer_in * drop2
    else:
        drop2 = None
        bi_out = layer_in

    counts = mask.sum(axis=1)
    pooled = (bi_out * mask[:, :, None]).sum(axis=1) / counts[:, None]
    logits = pooled @ params["dense_w"] + params["dense_b"]
    z = logits - logits.max(axis=1, keepdims=True)
    ez = np.exp(z)
    probs = ez / ez.sum(axis=1, keepdims=True)

    cache = {
        "alpha": alpha, "emb": emb, "mask": mask, "d": d,
        "x": x, "xp": xp, "pre": pre, "drop1": drop1,
        "conv": conv, "lstm_caches": lstm_caches, "drop2": drop2,
        "bi_out_raw": layer_in, "counts": counts, "pooled": pooled, "probs": probs,
    }
    return probs, cache


def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean -log p[label], probabilities clamped at 1e-12."""
    p = np.clip(probs[np.arange(len(labels)), labels], 1e-12, None)
    return float(np.mean(-np.log(p)))


def loss_and_grads(
    params: dict[str, np.ndarray],
    batch: dict,
    cfg: ModelConfig,
    train_mode: bool = False,
    dropout_rng: np.random.Generator | None = None,
) -> tuple[float, dict[str, np.ndarray], np.ndarray]:
    """Cross-entropy loss, gradients for every parameter, and probabilities."""
    probs, cache = forward(params, batch, cfg, train_mode, dropout_rng)
    labels = batch["labels"]
    loss = cross_entropy(probs, labels)

    B = probs.shape[0]
    mask = cache["mask"]
    onehot = np.zeros_like(probs)
    onehot[np.arange(B), labels] = 1.0
    dlogits = (probs - onehot) / B

    grads: dict[str, np.ndarray] = {}
    grads["dense_w"] = cache["pooled"].T @ dlogits
    grads["dense_b"] = dlogits.sum(axis=0)
    d_pooled = dlogits @ params["dense_w"].T

    d_bi = d_pooled[:, None, :] * (mask / cache["counts"][:, None])[:, :, None]
    if cache["drop2"] is not None:
        d_bi = d_bi * cache["drop2"]

    d_layer = d_bi
    H = cfg.lstm_hidden
    for layer in range(cfg.lstm_layers, 0, -1):
        cache_fw, cache_bw = cache["lstm_caches"][layer - 1]
        d_fw = d_layer[:, :, :H]
        d_bw = d_layer[:, :, H:]
        dx_fw, dwx_f, dwh_f, db_f = _lstm_dir_backward(
            d_fw, cache_fw, params[f"lstm{layer}_fw_wx"], params[f"lstm{layer}_fw_wh"]
        )
        dx_bw_rev, dwx_b, dwh_b, db_b = _lstm_dir_backward(
            d_bw[:, ::-1], cache_bw,
            params[f"lstm{layer}_bw_wx"], params[f"lstm{layer}_bw_wh"],
        )
        grads[f"lstm{layer}_fw_wx"], grads[f"lstm{layer}_fw_wh"], grads[f"lstm{layer}_fw_b"] = dwx_f, dwh_f, db_f
        grads[f"lstm{layer}_bw_wx"], grads[f"lstm{layer}_bw_wh"], grads[f"lstm{layer}_bw_b"] = dwx_b, dwh_b, db_b
        d_layer = dx_fw + dx_bw_rev[:, ::-1]

    d_conv = d_layer * mask[:, :, None]
    if cache["drop1"] is not None:
        d_conv = d_conv * cache["drop1"]
    d_pre = d_conv * (cache["pre"] > 0.0)

    kern = cfg.kernel
    pad = kern // 2
    M = mask.shape[1]
    xp = cache["xp"]
    grads["conv_b"] = d_pre.sum(axis=(0, 1))
    grads["conv_w"] = np.stack(
        [np.einsum("btd,btf->df", xp[:, j : j + M], d_pre) for j in range(kern)]
    )
    dxp = np.zeros_like(xp)
    for j in range(kern):
        dxp[:, j : j + M] += d_pre @ params["conv_w"][j].T
    dx = dxp[:, pad : pad + M] * mask[:, :, None]

    d_fused = dx[:, :, : cache["d"]]
    d_alpha = np.einsum("bmd,bsmd->s", d_fused, cache["emb"])
    if cfg.fixed_alpha is not None:
        grads["theta"] = np.zeros(3)
    else:
        alpha = cache["alpha"]
        grads["theta"] = alpha * (d_alpha - float(alpha @ d_alpha))

    if not np.isfinite(loss):
        raise NonFiniteLoss(f"loss is {loss}")
    return loss, grads, probs
