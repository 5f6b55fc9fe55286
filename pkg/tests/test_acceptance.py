"""Acceptance gate: one test per release criterion, each printing a
pass/fail line.  Run with `pytest tests/test_acceptance.py -v -s`."""

import json
import math
import time

import numpy as np
import pytest

from conftest import SR, bursty_buffer, sine_buffer
from synth import make_corpus, write_feb_corpus
from test_segmentation import oracle_chunks

from fluencykit.audio import AudioBuffer
from fluencykit.cli import main as cli_main
from fluencykit.embeddings import (
    BadMagic,
    FrameEmbedding,
    TruncatedData,
    VersionMismatch,
    mean_pool,
    read_feb,
    slice_frames,
    write_feb,
)
from fluencykit.evaluation.experiment import ExperimentConfig, run_experiment
from fluencykit.evaluation.manifest import load_manifest
from fluencykit.evaluation.metrics import bucket_score, macro_f1, pearson
from fluencykit.features import voice_quality
from fluencykit.model import (
    ModelConfig,
    Sample,
    fuse,
    grad_check,
    init_params,
    load_checkpoint,
    loss_and_grads,
    make_batch,
    predict,
    save_checkpoint,
    softmax_alpha,
    train,
)
from fluencykit.model.training import _Adam
from fluencykit.segmentation import Chunk, SpeechRegion, VadConfig, split_speech_frames, sweep_delta


def report(name: str, ok: bool, detail: str = ""):
    tag = "PASS" if ok else "FAIL"
    suffix = f" ({detail})" if detail else ""
    print(f"[{tag}] {name}{suffix}")
    assert ok, f"{name}{suffix}"


# ---------------------------------------------------------------------------

def test_segmentation_oracle_equivalence():
    cfg = VadConfig()
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    mismatches = 0
    for _ in range(1000):
        n = int(rng.integers(100, 10_001))
        mask = rng.random(n) < rng.uniform(0.3, 0.8)
        regions = [SpeechRegion(0.0, n * 0.01)]
        delta = float(rng.choice([200.0, 250.0, 300.0, 350.0]))
        gap_frames = math.ceil(delta / cfg.hop_ms - 1e-9)
        min_frames = math.ceil(cfg.min_speech_ms / cfg.hop_ms - 1e-9)
        expected = oracle_chunks(mask, regions, cfg, delta)
        spans = split_speech_frames(mask, 0, n, gap_frames, min_frames)
        got = []
        for j, (a, b) in enumerate(spans):
            start = regions[0].start if j == 0 else a * 0.01
            end = regions[0].end if j == len(spans) - 1 else b * 0.01
            if end > start:
                got.append((start, end))
        if got != expected:
            mismatches += 1
    elapsed = time.perf_counter() - t0
    report(
        "segmentation oracle equivalence (1000 sequences)",
        mismatches == 0 and elapsed < 10.0,
        f"{mismatches} mismatches, {elapsed:.1f}s",
    )


def test_delta_sweep_monotonicity():
    rng = np.random.default_rng(7)
    items = []
    for i in range(100):
        n_bursts = int(rng.integers(2, 7))
        bursts = [
            (float(rng.uniform(0.3, 0.8)), float(rng.uniform(0.15, 0.5)))
            for _ in range(n_bursts)
        ]
        buf = bursty_buffer(bursts, uid=f"u{i}")
        items.append((buf, [SpeechRegion(0.2, buf.duration - 0.2)]))
    deltas = [200.0, 250.0, 300.0, 350.0]
    stats = sweep_delta(items, deltas)
    monotone = all(
        all(
            stats[a].per_utterance[buf.id] >= stats[b].per_utterance[buf.id]
            for a, b in zip(deltas, deltas[1:])
        )
        for buf, _ in items
    )
    # gaps of 220 ms and 320 ms: 3 chunks at 200, 2 at 300, 1 at 350
    buf = bursty_buffer([(0.4, 0.22), (0.4, 0.32), (0.4, 0.0)], lead=0.3, uid="g3")
    region = [SpeechRegion(0.3, 0.3 + 0.4 + 0.22 + 0.4 + 0.32 + 0.4)]
    three = sweep_delta([(buf, region)], [200.0, 300.0, 350.0])
    counts = (
        three[200.0].chunk_count, three[300.0].chunk_count, three[350.0].chunk_count
    )
    report(
        "delta-sweep monotonicity on 100 utterances + three-gap example",
        monotone and counts == (3, 2, 1),
        f"three-gap counts {counts}",
    )


def test_pooling_identities():
    rng = np.random.default_rng(3)
    ok = True
    worst = 0.0
    for _ in range(50):
        t = int(rng.integers(2, 200))
        d = int(rng.integers(1, 32))
        fe = FrameEmbedding("mock", 0.02, 0.0125,
                            rng.standard_normal((t, d)).astype(np.float32))
        whole = mean_pool(fe)
        sliced = mean_pool(slice_frames(fe, Chunk("u", 0, 0.0, 1e9)))
        ok &= np.array_equal(whole, sliced)
        cut_idx = int(rng.integers(1, t))
        cut = fe.offset + cut_idx * fe.hop
        a = slice_frames(fe, Chunk("u", 0, 0.0, cut))
        b = slice_frames(fe, Chunk("u", 1, cut, 1e9))
        recomb = (a.frame_count * mean_pool(a) + b.frame_count * mean_pool(b)) / t
        rel = np.abs(recomb - whole) / np.maximum(np.abs(whole), 1e-300)
        worst = max(worst, float(rel.max()))
        ok &= rel.max() < 1e-9
    report("pooling identities (whole-vs-sliced, recombination 1e-9)", bool(ok),
           f"worst rel {worst:.1e}")


def test_fusion_simplex_under_optimization():
    rng = np.random.default_rng(11)
    cfg = ModelConfig(conv_filters=6, lstm_hidden=4, dropout=0.0,
                      learning_rate=1e-2, seed=1)
    d, k = 6, 2
    params = init_params(cfg, d, k)
    samples = [
        Sample(f"s{i}", rng.standard_normal((3, 3, d)),
               rng.standard_normal((3, k)), int(rng.integers(0, 3)))
        for i in range(8)
    ]
    batch = make_batch(samples)
    opt = _Adam(params, cfg.learning_rate)
    ok = True
    for _ in range(1000):
        _, grads, _ = loss_and_grads(params, batch, cfg)
        opt.step(params, grads)
        alpha = softmax_alpha(params["theta"])
        ok &= bool((alpha >= 0).all()) and abs(float(alpha.sum()) - 1.0) < 1e-12
    v = rng.standard_normal((3, 16))
    exact_mean = np.abs(fuse(v, np.zeros(3)) - v.mean(axis=0)).max() < 1e-15
    report("fusion simplex over 1000 Adam steps + exact mean at theta=0",
           ok and exact_mean)


def test_gradient_check():
    rng = np.random.default_rng(13)
    cfg = ModelConfig(conv_filters=32, lstm_hidden=24, dropout=0.0, seed=2)
    d, k = 48, 4
    samples = [
        Sample(f"s{i}", rng.standard_normal((3, int(rng.integers(2, 6)), d)),
               None, int(rng.integers(0, 3)))
        for i in range(3)
    ]
    samples = [Sample(s.id, s.emb, rng.standard_normal((s.emb.shape[1], k)), s.label)
               for s in samples]
    params = init_params(cfg, d, k)
    t0 = time.perf_counter()
    rep = grad_check(params, make_batch(samples), cfg, tolerance=1e-4,
                     n_coords=200, step=1e-5)
    elapsed = time.perf_counter() - t0
    report(
        "gradient check (>=200 coords, all tensors, rel < 1e-4)",
        rep.passed and rep.checked >= 200 and set(rep.per_tensor) == set(params)
        and elapsed < 60.0,
        f"max rel {rep.max_rel_error:.1e}, {rep.checked} coords, {elapsed:.1f}s",
    )


@pytest.fixture(scope="module")
def overfit_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("overfit")
    manifest = make_corpus(root, n_per_class=30, seed=11, mode="markers",
                           split_test_per_class=10)
    return load_manifest(manifest)


def test_end_to_end_overfit(overfit_corpus):
    from fluencykit.evaluation.experiment import prepare_corpus

    cfg = ExperimentConfig(
        model=ModelConfig(conv_filters=16, lstm_hidden=12, dropout=0.1,
                          learning_rate=3e-3, epochs=60, batch_size=16, seed=3),
        mock_dim=8, protocol="fixed", seed=3,
    )
    prepared, skipped = prepare_corpus(overfit_corpus, cfg)
    train_samples = [prepared[e.id].to_sample() for e in overfit_corpus
                     if e.split == "train" and e.id in prepared]
    test_samples = [prepared[e.id].to_sample() for e in overfit_corpus
                    if e.split == "test" and e.id in prepared]
    chunk_counts = [s.n_chunks for s in train_samples + test_samples]
    model, _ = train(train_samples, cfg.model)
    train_f1 = macro_f1([predict(model, s)[0] for s in train_samples],
                        [s.label for s in train_samples])
    test_f1 = macro_f1([predict(model, s)[0] for s in test_samples],
                       [s.label for s in test_samples])
    report(
        "end-to-end overfit (60 train utterances, 2-8 chunks)",
        len(train_samples) == 60 and not skipped
        and min(chunk_counts) >= 2 and max(chunk_counts) <= 8
        and cfg.model.epochs <= 200 and train_f1 >= 0.95 and test_f1 >= 0.9,
        f"train F1 {train_f1:.3f}, held-out F1 {test_f1:.3f}",
    )


def test_informative_source_ablation(tmp_path):
    manifest = make_corpus(tmp_path, n_per_class=16, seed=29, mode="uniform",
                           split_test_per_class=5)
    emb_dir = tmp_path / "emb"
    write_feb_corpus(emb_dir, manifest, dim=12, informative=1, shift=3.0, seed=5)
    entries = load_manifest(manifest)
    details = []
    ok = True
    for seed in (3, 4, 5):
        base = ExperimentConfig(
            model=ModelConfig(conv_filters=12, lstm_hidden=8, dropout=0.1,
                              learning_rate=3e-3, epochs=50, batch_size=16,
                              seed=seed),
            emb_source="feb", emb_dir=str(emb_dir), protocol="fixed", seed=seed,
        )
        fusion = run_experiment(entries, base)
        single_cfg = ExperimentConfig(
            model=ModelConfig(conv_filters=12, lstm_hidden=8, dropout=0.1,
                              learning_rate=3e-3, epochs=50, batch_size=16,
                              seed=seed, fixed_alpha=(0.0, 1.0, 0.0)),
            emb_source="feb", emb_dir=str(emb_dir), protocol="fixed", seed=seed,
        )
        single = run_experiment(entries, single_cfg)
        picked = int(np.argmax(fusion["alpha_mean"]))
        f_fuse = fusion["aggregate"]["macro_f1"]
        f_single = single["aggregate"]["macro_f1"]
        ok &= picked == 1 and f_fuse >= f_single - 0.02
        details.append(f"seed {seed}: argmax {picked}, fusion {f_fuse:.3f} vs single {f_single:.3f}")
    report("informative-source ablation over 3 seeds", ok, "; ".join(details))


def test_metrics_oracles():
    a = macro_f1([0, 1, 0, 1], [0, 0, 1, 1])
    b = macro_f1([0, 0, 0, 0, 0, 0], [0, 0, 1, 1, 2, 2])
    c = pearson([0, 2, 2, 2], [0, 1, 2, 2])
    buckets = (bucket_score(5), bucket_score(6), bucket_score(10))
    report(
        "metrics oracles (0.5; 0.1667; 0.8704; bucket boundaries)",
        abs(a - 0.5) < 1e-9
        and abs(b - 1 / 6) < 1e-9
        and abs(c - 2.5 / math.sqrt(2.75 * 3.0)) < 1e-9
        and buckets == (0, 1, 2),
        f"{a:.4f}, {b:.4f}, {c:.4f}, buckets {buckets}",
    )


def test_voice_quality_criteria():
    sine = voice_quality(sine_buffer(200.0, 1.0), Chunk("s", 0, 0.0, 1.0))
    t = np.arange(SR) / SR
    am = voice_quality(
        AudioBuffer((1 + 0.2 * np.sin(2 * np.pi * 70 * t)) * np.sin(2 * np.pi * 200 * t), SR, "am"),
        Chunk("am", 0, 0.0, 1.0),
    )
    noise = voice_quality(
        AudioBuffer(0.3 * np.random.default_rng(0).standard_normal(SR), SR, "n"),
        Chunk("n", 0, 0.0, 1.0),
    )
    report(
        "voice quality (200 Hz sine, AM shimmer band, noise voicing)",
        abs(sine.f0_mean - 200.0) <= 2.0 and sine.shimmer_pct < 1.0
        and sine.hnr_db > 20.0 and 15.0 <= am.shimmer_pct <= 25.0
        and noise.voiced_fraction < 0.2,
        f"f0 {sine.f0_mean:.2f}, shimmer {sine.shimmer_pct:.2f}%, "
        f"hnr {sine.hnr_db:.1f} dB, AM shimmer {am.shimmer_pct:.1f}%, "
        f"noise voiced {noise.voiced_fraction:.2f}",
    )


def test_format_round_trips(tmp_path):
    rng = np.random.default_rng(17)
    fe = FrameEmbedding("wavlm", 0.02, 0.0125,
                        rng.standard_normal((64, 24)).astype(np.float32))
    p = tmp_path / "x.feb"
    write_feb(p, fe)
    feb_exact = np.array_equal(read_feb(p).matrix, fe.matrix)

    errors_ok = True
    bad = tmp_path / "bad.feb"
    bad.write_bytes(b"XXXX" + b"\x00" * 20)
    try:
        read_feb(bad)
        errors_ok = False
    except BadMagic:
        pass
    raw = bytearray(p.read_bytes())
    truncated = tmp_path / "t.feb"
    truncated.write_bytes(bytes(raw[:-17]))
    try:
        read_feb(truncated)
        errors_ok = False
    except TruncatedData:
        pass
    import struct
    raw2 = bytearray(p.read_bytes())
    raw2[4:8] = struct.pack("<I", 7)
    versioned = tmp_path / "v.feb"
    versioned.write_bytes(bytes(raw2))
    try:
        read_feb(versioned)
        errors_ok = False
    except VersionMismatch:
        pass

    cfg = ModelConfig(conv_filters=8, lstm_hidden=6, dropout=0.0,
                      learning_rate=1e-3, epochs=2, seed=19)
    samples = [
        Sample(f"s{i}", rng.standard_normal((3, 3, 8)),
               rng.standard_normal((3, 4)), int(rng.integers(0, 3)))
        for i in range(6)
    ]
    model, _ = train(samples, cfg)
    d1, d2 = tmp_path / "ck1", tmp_path / "ck2"
    save_checkpoint(model, d1)
    loaded = load_checkpoint(d1)
    save_checkpoint(loaded, d2)
    preds_match = True
    for s in samples:
        ca, pa = predict(model, s)
        cb, pb = predict(loaded, s)
        preds_match &= ca == cb and np.array_equal(pa, pb)
    ck_exact = (
        (d1 / "weights.bin").read_bytes() == (d2 / "weights.bin").read_bytes()
        and preds_match
    )
    report("format round-trips (FEB1 + checkpoint bit-exact, typed errors)",
           feb_exact and errors_ok and ck_exact)


def test_cli_determinism(tmp_path):
    manifest = make_corpus(tmp_path, n_per_class=3, seed=23, mode="markers",
                           split_test_per_class=1)
    fast = ["--mock-dim", "8", "--conv-filters", "8", "--lstm-hidden", "6",
            "--epochs", "3", "--learning-rate", "3e-3"]

    def strip_runtime(text: str) -> str:
        payload = json.loads(text)
        payload.pop("runtime_seconds", None)
        return json.dumps(payload, sort_keys=True)

    outs = []
    for run in (1, 2):
        base = tmp_path / f"run{run}"
        base.mkdir()
        chunks, feats = base / "chunks.csv", base / "features.csv"
        sweep, ck = base / "sweep.json", base / "ck"
        rep, emb, abl = base / "rep.json", base / "emb.csv", base / "ablation"
        assert cli_main(["segment", "--manifest", str(manifest), "--seed", "5",
                         "--out", str(chunks)]) == 0
        assert cli_main(["features", "--manifest", str(manifest), "--seed", "5",
                         "--out", str(feats)]) == 0
        assert cli_main(["sweep", "--manifest", str(manifest), "--seed", "5",
                         "--out", str(sweep)]) == 0
        assert cli_main(["train", "--manifest", str(manifest), "--seed", "5",
                         "--checkpoint", str(ck)] + fast) == 0
        # evaluate both runs against the first checkpoint so the recorded
        # checkpoint path is identical; weight bytes are compared separately
        assert cli_main(["eval", "--manifest", str(manifest), "--seed", "5",
                         "--checkpoint", str(tmp_path / "run1" / "ck"),
                         "--mock-dim", "8", "--out", str(rep)]) == 0
        assert cli_main(["export-embeddings", "--manifest", str(manifest),
                         "--seed", "5", "--mock-dim", "8", "--out", str(emb)]) == 0
        assert cli_main(["ablate", "--manifest", str(manifest), "--seed", "5",
                         "--protocol", "fixed", "--out", str(abl)] + fast) == 0
        outs.append((
            chunks.read_bytes(), feats.read_bytes(), sweep.read_bytes(),
            (ck / "weights.bin").read_bytes(), (ck / "meta.json").read_bytes(),
            rep.read_bytes(), emb.read_bytes(),
            (abl / "summary.csv").read_bytes(),
            tuple(strip_runtime((abl / f"{c}.json").read_text())
                  for c in sorted(p.stem for p in abl.glob("*.json"))),
        ))
    report("CLI determinism (all seven subcommands twice, same seed)",
           outs[0] == outs[1])
