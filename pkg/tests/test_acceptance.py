"""Acceptance criteria 1-12.

Each test prints a single ``[criterion N] PASS|FAIL`` line with the measured
quantity and its tolerance. Criteria 9 and 11 share one toy-scale pretraining
run; criterion 10 runs a reduced-scale ablation sized for a single CPU core.
"""

import itertools
import math
import time
from dataclasses import replace

import numpy as np
import pytest

from cvrl import generate_synthetic_dataset
from cvrl.augment import JitterConfig, apply, draw_params
from cvrl.encoder import R3D50Spec, TinyEncoder, TinyEncoderConfig, load_checkpoint, shape_trace
from cvrl.encoder.layers import BatchStandardize, ChannelStandardize, Conv3d, GlobalAvgPool, Linear, ReLU
from cvrl.harness import (
    DataConfig,
    EvalConfig,
    PretrainConfig,
    consistency_ablation,
    linear_eval,
    pretrain,
    semi_supervised_comparison,
    write_rows_csv,
)
from cvrl.harness.ablation import ABLATION_FIELDS, SEMI_FIELDS, summarize
from cvrl.loss import EmbeddingBatch, info_nce_grad, info_nce_loss
from cvrl.optim import ScheduleConfig, lr_at
from cvrl.temporal import DistributionPreset, discrete_ks_statistic, from_preset, sample_interval
from cvrl.video import Clip

# Committed pilot of criterion 9 (defaults, seed 0). The bar is 0.90 unless the
# pilot landed lower, in which case it is the pilot value minus 2 points.
PILOT_PRETRAINED_PROBE = 0.415
PILOT_RANDOM_PROBE = 0.575
PROBE_BAR = 0.90 if PILOT_PRETRAINED_PROBE is None else min(0.90, PILOT_PRETRAINED_PROBE - 0.02)

SEEDS = (0, 1, 2)


@pytest.fixture
def report(capsys):
    def emit(criterion, passed, detail):
        with capsys.disabled():
            print(f"\n[criterion {criterion}] {'PASS' if passed else 'FAIL'}: {detail}")
        assert passed, detail

    return emit


def rel_err(a, b, floor=1e-12):
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), floor))


# ---------------------------------------------------------------------------
# 1-2: contrastive loss
# ---------------------------------------------------------------------------


def test_criterion_01_info_nce_gradient(report):
    t0 = time.perf_counter()
    combos = list(itertools.product((2, 4, 8), (3, 16), (0.1, 0.5, 1.0)))
    combos += combos[:2]  # 20 batches
    rng = np.random.default_rng(2024)
    h = 1e-5
    worst = 0.0
    for n, d, tau in combos:
        x = rng.normal(size=(2 * n, d))
        analytic = info_nce_grad(EmbeddingBatch(x, tau))
        numeric = np.zeros_like(x)
        for idx in np.ndindex(x.shape):
            xp, xm = x.copy(), x.copy()
            xp[idx] += h
            xm[idx] -= h
            numeric[idx] = (info_nce_loss(EmbeddingBatch(xp, tau)) - info_nce_loss(EmbeddingBatch(xm, tau))) / (2 * h)
        worst = max(worst, rel_err(analytic, numeric))
    elapsed = time.perf_counter() - t0
    report(1, worst < 1e-4 and elapsed < 10,
           f"max relative error {worst:.2e} (< 1e-4) over {len(combos)} batches in {elapsed:.1f}s (< 10s)")


def direct_loss(x, tau):
    """Symmetric InfoNCE by explicit summation over every anchor and candidate."""
    two_n = len(x)
    u = [row / math.sqrt(sum(v * v for v in row)) for row in x]
    sim = lambda a, b: sum(p * q for p, q in zip(u[a], u[b]))  # noqa: E731
    total = 0.0
    for i in range(two_n):
        num = math.exp(sim(i, (i + two_n // 2) % two_n) / tau)
        den = sum(math.exp(sim(i, k) / tau) for k in range(two_n) if k != i)
        total -= math.log(num / den)
    return total / two_n


def test_criterion_02_info_nce_values(report):
    x1 = np.random.default_rng(0).normal(size=(2, 7))
    single = [info_nce_loss(EmbeddingBatch(x1, 0.1), m) for m in ("symmetric", "one_sided")]
    e = np.eye(2)
    ortho = np.vstack([e, e])
    values = [info_nce_loss(EmbeddingBatch(ortho, 1.0), m) for m in ("symmetric", "one_sided")]
    oracle = direct_loss(ortho, 1.0)
    ok = all(v == 0.0 for v in single) and all(abs(v - oracle) < 1e-5 and abs(v - 0.551445) < 1e-5 for v in values)
    report(2, ok, f"N=1 loss {single} (== 0); orthonormal N=2 loss {values} vs oracle {oracle:.6f} (0.551445 +- 1e-5)")


# ---------------------------------------------------------------------------
# 3-4: temporal sampler
# ---------------------------------------------------------------------------

EXPECTED_MEANS = {
    DistributionPreset.DEC_LINEAR: 1 / 3,
    DistributionPreset.UNIFORM: 1 / 2,
    DistributionPreset.INC_LINEAR: 2 / 3,
}


def test_criterion_03_sampler_distribution(report):
    t0 = time.perf_counter()
    T = 218
    rng = np.random.default_rng(3)
    worst_ks, worst_mean, lines = 0.0, 0.0, []
    for preset in DistributionPreset:
        dist = from_preset(preset, T)
        samples = np.array([sample_interval(dist, rng) for _ in range(100_000)])
        ks = discrete_ks_statistic(samples, dist)
        worst_ks = max(worst_ks, ks)
        if preset in EXPECTED_MEANS:
            target = EXPECTED_MEANS[preset] * T
            analytic_err = abs(dist.mean() - target) / target
            empirical_err = abs(samples.mean() - target) / target
            worst_mean = max(worst_mean, analytic_err, empirical_err)
            lines.append(f"{preset.value} mean {samples.mean():.2f}/{target:.2f}")
    elapsed = time.perf_counter() - t0
    report(3, worst_ks < 0.01 and worst_mean < 0.01 and elapsed < 30,
           f"max KS {worst_ks:.4f} (< 0.01); max mean error {worst_mean:.3%} (< 1%) [{'; '.join(lines)}]; "
           f"{elapsed:.1f}s (< 30s)")


def test_criterion_04_inverse_consistency(report):
    bad = [
        (preset.value, t)
        for preset in DistributionPreset
        for dist in [from_preset(preset, 218)]
        for t in range(219)
        if sample_interval(dist, v=dist.cdf(float(t))) != t
    ]
    report(4, not bad, f"{6 * 219 - len(bad)}/{6 * 219} (preset, t) pairs invert exactly; failures: {bad[:5]}")


# ---------------------------------------------------------------------------
# 5: spatial augmentation
# ---------------------------------------------------------------------------


def test_criterion_05_temporal_consistency(report):
    rng = np.random.default_rng(5)
    frame = rng.random((20, 24, 3))
    clip = Clip(np.repeat(frame[None], 4, axis=0), source_video_id=0, start_frame=0)
    inconsistent = 0
    for _ in range(1000):
        out = apply(clip, draw_params(rng, (20, 24), JitterConfig(), (16, 16))).frames
        inconsistent += any(out[k].tobytes() != out[0].tobytes() for k in range(1, len(out)))

    n = 100_000
    draws = [draw_params(rng, (32, 32)) for _ in range(n)]
    freqs = {"flip": 0.5, "jitter": 0.8, "grey": 0.2}
    z = {k: (np.mean([getattr(p, k) for p in draws]) - p0) / math.sqrt(p0 * (1 - p0) / n) for k, p0 in freqs.items()}
    ok = inconsistent == 0 and all(abs(v) < 3 for v in z.values())
    report(5, ok, f"{inconsistent}/1000 clips with differing frames (== 0); flag z-scores "
                  + ", ".join(f"{k} {v:+.2f}" for k, v in z.items()) + " (|z| < 3)")


# ---------------------------------------------------------------------------
# 6-7: encoder
# ---------------------------------------------------------------------------


def test_criterion_06_shape_trace(report):
    trace = [(t, s) for _, t, s in shape_trace(R3D50Spec(), (32, 224))]
    expected = [(16, 224), (8, 112), (8, 56), (8, 56), (8, 28), (8, 14), (8, 7), (1, 1)]
    report(6, trace == expected, f"trace {trace}")


def fd(f, x, h=1e-6):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        fp = f()
        x[idx] = old - h
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def kernel_error(layer, x):
    r = np.random.default_rng(1).normal(size=layer.forward(x).shape)

    def f():
        out = layer.forward(x)
        layer._cache = None
        return float(np.sum(out * r))

    layer._cache = None
    layer.forward(x)
    for p in layer.params.values():
        p.zero_grad()
    errors = [rel_err(layer.backward(r), fd(f, x))]
    errors += [rel_err(p.grad, fd(f, p.value)) for p in layer.params.values()]
    return max(errors)


def test_criterion_07_encoder_gradients(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    x5 = rng.normal(size=(2, 4, 5, 4, 3))
    x5[np.abs(x5) < 1e-3] = 0.5  # keep ReLU inputs off the kink
    conv = Conv3d(3, 2, (3, 3, 3), (2, 2, 1), np.float64)
    lin = Linear(3, 4, np.float64)
    for p in [*conv.params.values(), *lin.params.values()]:
        p.value[...] = rng.normal(size=p.shape)
    kernels = {
        "conv3d": (conv, x5),
        "relu": (ReLU(), x5),
        "channel_standardize": (ChannelStandardize(None), x5),
        "layer_standardize": (ChannelStandardize(1), x5),
        "batch_standardize": (BatchStandardize(3, dtype=np.float64), x5),
        "global_avg_pool": (GlobalAvgPool(), x5),
        "linear": (lin, rng.normal(size=(5, 3))),
    }
    errors = {name: kernel_error(layer, x) for name, (layer, x) in kernels.items()}

    config = TinyEncoderConfig(
        stages=({"out_channels": 4, "temporal_stride": 1}, {"out_channels": 6, "temporal_stride": 2}),
        hidden_layers=1, hidden_dim=5, output_dim=4, dtype="float64",
    )
    enc = TinyEncoder(config, seed=3)
    clips = rng.random((2, 4, 8, 8, 3))
    r = rng.normal(size=(2, 4))

    def loss():
        _, z = enc.forward(clips)
        enc.clear_cache()
        return float(np.sum(z * r))

    enc.zero_grad()
    enc.forward(clips)
    enc.backward(r)
    # biases feeding a standardization have zero true gradient; measure against the network scale
    scale = max(np.abs(p.grad).max() for p in enc.parameters())
    errors["tiny_encoder"] = max(rel_err(p.grad, fd(loss, p.value), floor=scale) for p in enc.parameters())
    elapsed = time.perf_counter() - t0
    worst = max(errors.values())
    report(7, worst < 1e-3 and elapsed < 60,
           "max relative errors " + ", ".join(f"{k} {v:.1e}" for k, v in errors.items())
           + f" (< 1e-3); {elapsed:.1f}s (< 60s)")


# ---------------------------------------------------------------------------
# 8: schedule
# ---------------------------------------------------------------------------


def test_criterion_08_schedule(report):
    cfg = ScheduleConfig(base_lr=0.32, warmup_epochs=5, total_epochs=50, steps_per_epoch=20)
    W = cfg.warmup_epochs * cfg.steps_per_epoch
    junction = abs(lr_at(cfg, W - 1) - lr_at(cfg, W))
    midpoint = lr_at(cfg, W // 2 - 1)
    final_ratios = []
    for decay in (100, 101, 250, 1000):
        c = ScheduleConfig(0.32, 1, 1 + decay, 1)
        final_ratios.append(lr_at(c, c.total_epochs - 1) / 0.32)
    ok = junction <= 1e-12 and abs(midpoint - 0.16) <= 1e-12 and max(final_ratios) < 0.01
    report(8, ok, f"junction gap {junction:.1e} (<= 1e-12); warmup midpoint {midpoint!r} (== 0.16); "
                  f"max final lr/base {max(final_ratios):.2e} (< 0.01)")


# ---------------------------------------------------------------------------
# 9, 11: toy-scale pretraining and evaluation
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def toy_data():
    train = generate_synthetic_dataset(**{k: v for k, v in DataConfig().__dict__.items() if k != "out"})
    test = generate_synthetic_dataset(4, 50, 128, 64, 64, seed=8)
    return train, test


@pytest.fixture(scope="module")
def toy_run(toy_data, tmp_path_factory):
    train, test = toy_data
    config = PretrainConfig()
    out = tmp_path_factory.mktemp("toy")
    t0 = time.perf_counter()
    pretrain(config, dataset=train, out_dir=out)
    pretrain_time = time.perf_counter() - t0
    encoder, _, _ = load_checkpoint(out / "checkpoint.ckpt")
    pretrained = linear_eval(EvalConfig(), encoder, train, test)
    random = linear_eval(EvalConfig(), TinyEncoder(config.encoder, seed=config.seed), train, test)
    return {
        "encoder": encoder,
        "pretrained": pretrained.accuracy,
        "random": random.accuracy,
        "pretrain_time": pretrain_time,
        "total_time": time.perf_counter() - t0,
    }


def test_criterion_09_toy_cvrl_run(report, toy_run):
    gap = toy_run["pretrained"] - toy_run["random"]
    ok = gap >= 0.20 and toy_run["pretrained"] >= PROBE_BAR
    report(9, ok, f"probe pretrained {toy_run['pretrained']:.3f} (>= {PROBE_BAR:.3f}), random {toy_run['random']:.3f}, "
                  f"gap {gap:+.3f} (>= +0.20); pretrain {toy_run['pretrain_time'] / 60:.1f} min, "
                  f"total {toy_run['total_time'] / 60:.1f} min on one core")


def test_criterion_11_semi_supervised_direction(report, toy_run, toy_data, tmp_path):
    train, test = toy_data
    config = EvalConfig(num_dense_clips=3, num_spatial_crops=1)
    rows = semi_supervised_comparison(toy_run["encoder"], config, train, test, SEEDS, fraction=0.01)
    write_rows_csv(rows, SEMI_FIELDS, tmp_path / "semi.csv")
    mean = summarize(rows, SEMI_FIELDS)
    ok = all(r["pretrained"] > r["scratch"] for r in rows)
    report(11, ok, "1% subset, pretrained vs scratch per seed: "
                   + ", ".join(f"{r['pretrained']:.3f}/{r['scratch']:.3f}" for r in rows)
                   + f" (pretrained > scratch every seed); mean {mean['pretrained']:.3f} vs {mean['scratch']:.3f}")


# ---------------------------------------------------------------------------
# 10: augmentation-consistency ablation (reduced scale)
# ---------------------------------------------------------------------------

ABLATION_VIDEOS_PER_CLASS = 50
ABLATION_EPOCHS = 15


def test_criterion_10_consistency_ablation(report, tmp_path):
    train = generate_synthetic_dataset(4, ABLATION_VIDEOS_PER_CLASS, 128, 64, 64, seed=7)
    test = generate_synthetic_dataset(4, 25, 128, 64, 64, seed=8)
    pcfg = PretrainConfig(epochs=ABLATION_EPOCHS)
    ecfg = EvalConfig(num_dense_clips=3, num_spatial_crops=1)
    rows = consistency_ablation(pcfg, ecfg, train, test, SEEDS)
    path = tmp_path / "ablation.csv"
    write_rows_csv(rows, ABLATION_FIELDS, path)
    mean = summarize(rows, ABLATION_FIELDS)
    ok = mean["consistent"] >= mean["per_frame"] and path.read_text().count("\n") == len(SEEDS) + 2
    report(10, ok, f"mean probe consistent {mean['consistent']:.3f} vs per-frame {mean['per_frame']:.3f} "
                   f"(consistent >= per-frame); per seed "
                   + ", ".join(f"{r['consistent']:.3f}/{r['per_frame']:.3f}" for r in rows)
                   + f"; paired CSV with {len(rows)} seed rows + mean")


# ---------------------------------------------------------------------------
# 12: determinism
# ---------------------------------------------------------------------------


def test_criterion_12_determinism(report, tmp_path):
    train = generate_synthetic_dataset(4, 8, 128, 64, 64, seed=7)
    pcfg = PretrainConfig(epochs=3, warmup_epochs=1, batch_size=8)
    ecfg = EvalConfig(num_dense_clips=2, num_spatial_crops=3, classifier_epochs=5)
    artifacts = []
    for run in ("a", "b"):
        out = tmp_path / run
        pretrain(pcfg, dataset=train, out_dir=out)
        encoder, _, _ = load_checkpoint(out / "checkpoint.ckpt")
        result = linear_eval(ecfg, encoder, train, train)
        artifacts.append((
            (out / "metrics.csv").read_bytes(),
            (out / "checkpoint.ckpt").read_bytes(),
            result.accuracy,
            result.probe.coef_.tobytes(),
        ))
    same = [x == y for x, y in zip(*artifacts)]
    report(12, all(same), f"metrics CSV / checkpoint / accuracy / probe weights identical: {same}")
