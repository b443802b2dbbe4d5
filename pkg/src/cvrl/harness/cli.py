"""Command-line entry point: ``cvrl <subcommand> [--config FILE] [--seed N] [--out PATH]``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .. import augment
from ..encoder import R3D50Spec, TinyEncoder, load_checkpoint, save_checkpoint, shape_trace
from ..exceptions import ConfigurationError
from ..loss import l2_normalize
from ..optim import ScheduleConfig
from ..temporal import DistributionPreset, from_preset, interval_histogram
from ..video import extract_clip, generate_synthetic_dataset, load_dataset, save_dataset
from .ablation import ABLATION_FIELDS, SEMI_FIELDS, consistency_ablation, semi_supervised_comparison, write_rows_csv
from .config import DataConfig, EvalConfig, PretrainConfig, config_to_dict, load_config
from .evaluation import dense_predict, fine_tune, linear_eval, semi_subset
from .pretrain import pretrain, sample_rng, steps_per_epoch, write_schedule_csv

log = logging.getLogger("cvrl")


def _write_json(obj, path):
    text = json.dumps(obj, indent=2, sort_keys=True)
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text + "\n")
    print(text)


def _require(value, what):
    if value is None:
        raise ConfigurationError(f"{what} is required (set it in --config or on the command line)")
    return value


def _classifier_tensors(weight, bias):
    return {"classifier.weight": np.asarray(weight, np.float32), "classifier.bias": np.asarray(bias, np.float32)}


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gen_data(args):
    cfg = load_config(DataConfig, args.config, seed=args.seed, out=args.out)
    ds = generate_synthetic_dataset(cfg.num_classes, cfg.videos_per_class, cfg.T_total, cfg.H, cfg.W, cfg.seed)
    save_dataset(ds, _require(cfg.out, "out"))
    print(f"wrote {len(ds)} videos to {cfg.out}")


def cmd_pretrain(args):
    cfg = load_config(PretrainConfig, args.config, seed=args.seed, out=args.out, dataset=args.dataset)
    dataset = load_dataset(_require(cfg.dataset, "dataset"))
    if args.dump_lr:
        sched = ScheduleConfig(cfg.base_lr, cfg.warmup_epochs, cfg.epochs, steps_per_epoch(len(dataset), cfg.batch_size))
        write_schedule_csv(sched, args.dump_lr)
        print(f"wrote {sched.total_steps} scheduled steps to {args.dump_lr}")
        return
    model = pretrain(cfg, dataset=dataset, out_dir=cfg.out or ".")
    print(f"{len(model.metrics_)} steps, final loss {model.metrics_[-1]['loss']:.4f}, "
          f"{model.wall_time_:.0f}s; outputs in {cfg.out or '.'}")


def _eval_inputs(cfg: EvalConfig, random_init: bool = False):
    train = load_dataset(_require(cfg.dataset, "dataset"))
    test = load_dataset(cfg.test_dataset) if cfg.test_dataset else train
    if random_init:
        return train, test, None
    encoder, _, _ = load_checkpoint(_require(cfg.checkpoint, "checkpoint"))
    return train, test, encoder


def cmd_linear_eval(args):
    cfg = load_config(EvalConfig, args.config, seed=args.seed, out=args.out)
    train, test, encoder = _eval_inputs(cfg, args.random_init)
    if encoder is None:
        encoder_cfg = load_config(PretrainConfig, args.pretrain_config).encoder
        encoder = TinyEncoder(encoder_cfg, seed=cfg.seed)
    result = linear_eval(cfg, encoder, train, test)
    summary = {"accuracy": result.accuracy, "train_accuracy": result.train_accuracy,
               "label_fraction": cfg.label_fraction, "random_init": bool(args.random_init)}
    if cfg.out:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(out / "probe.ckpt", encoder, {"classifier": "linear_probe", "eval": config_to_dict(cfg)},
                        _classifier_tensors(*result.probe.folded_coef()))
        _write_json(summary, out / "linear_eval.json")
    else:
        _write_json(summary, None)


def cmd_fine_tune(args):
    cfg = load_config(EvalConfig, args.config, seed=args.seed, out=args.out)
    train, test, encoder = _eval_inputs(cfg, args.scratch)
    subset = semi_subset(train, cfg.label_fraction, cfg.seed) if cfg.label_fraction < 1 else train
    encoder_cfg = None if encoder else load_config(PretrainConfig, args.pretrain_config).encoder
    acc, clf = fine_tune(cfg, subset, test, encoder=encoder, encoder_config=encoder_cfg)
    summary = {"accuracy": acc, "label_fraction": cfg.label_fraction, "train_videos": len(subset),
               "init": "scratch" if args.scratch else "pretrained"}
    if cfg.out:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        head = clf.head_.params
        save_checkpoint(out / "fine_tuned.ckpt", clf.encoder_, {"classifier": "fine_tuned", "eval": config_to_dict(cfg)},
                        _classifier_tensors(head["weight"].value, head["bias"].value))
        _write_json(summary, out / "fine_tune.json")
    else:
        _write_json(summary, None)


def cmd_semi_eval(args):
    cfg = load_config(EvalConfig, args.config, seed=args.seed, out=args.out)
    train, test, encoder = _eval_inputs(cfg)
    seeds = [cfg.seed + i for i in range(args.seeds)]
    rows = []
    for fraction in cfg.fractions:
        rows += semi_supervised_comparison(encoder, cfg, train, test, seeds, fraction)
    out = Path(cfg.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    write_rows_csv(rows, SEMI_FIELDS, out / "semi_eval.csv", with_mean=False)
    for r in rows:
        print(f"fraction {r['fraction']:g} seed {r['seed']}: pretrained {r['pretrained']:.3f} scratch {r['scratch']:.3f}")


def cmd_ablation(args):
    pcfg = load_config(PretrainConfig, args.config, seed=args.seed, dataset=args.dataset)
    ecfg = load_config(EvalConfig, args.eval_config)
    train = load_dataset(_require(pcfg.dataset, "dataset"))
    test = load_dataset(ecfg.test_dataset) if ecfg.test_dataset else train
    seeds = [pcfg.seed + i for i in range(args.seeds)]
    rows = consistency_ablation(pcfg, ecfg, train, test, seeds)
    path = Path(args.out or "ablation.csv")
    path.parent.mkdir(parents=True, exist_ok=True)
    write_rows_csv(rows, ABLATION_FIELDS, path)
    print(path.read_text(), end="")


def cmd_dense_predict(args):
    cfg = load_config(EvalConfig, args.config, seed=args.seed, out=args.out)
    encoder, meta, tensors = load_checkpoint(_require(cfg.checkpoint, "checkpoint"))
    if "classifier.weight" not in tensors:
        raise ConfigurationError("checkpoint has no classifier; produce one with linear-eval or fine-tune --out")
    W, b = tensors["classifier.weight"], tensors["classifier.bias"]
    dataset = load_dataset(_require(cfg.test_dataset or cfg.dataset, "dataset"))

    def model(views):
        return l2_normalize(encoder.features(views)) @ W + b

    video = dataset[args.video]
    logits = dense_predict(model, video, cfg.num_dense_clips, cfg.num_spatial_crops,
                           cfg.clip_length, cfg.temporal_stride, cfg.crop_size)
    _write_json({"video": args.video, "label": video.label, "predicted": int(np.argmax(logits)),
                 "logits": [float(x) for x in logits]}, cfg.out)


def cmd_sample_hist(args):
    dist = from_preset(args.preset, args.T)
    rng = sample_rng(args.seed if args.seed is not None else 0)
    counts = interval_histogram(dist, args.n, rng)
    out = args.out or "hist.csv"
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "count", "analytic_pdf"])
        for t, c in enumerate(counts):
            writer.writerow([t, int(c), repr(float(dist.pdf(float(t))))])
    print(f"wrote {len(counts)} rows to {out}")


def _write_ppm(path, frame):
    data = np.round(np.clip(frame, 0, 1) * 255).astype(np.uint8)
    h, w = data.shape[:2]
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode() + data.tobytes())


def cmd_augment_preview(args):
    cfg = load_config(PretrainConfig, args.config)
    dataset = load_dataset(args.input)
    video = dataset[args.video]
    seed = args.seed if args.seed is not None else cfg.seed
    rng = sample_rng(seed, args.video)
    pair_rng = sample_rng(seed, args.video, 1)
    clip = extract_clip(video, 0, cfg.clip_length, cfg.temporal_stride)
    params = augment.draw_params(rng, clip.frames.shape[1:3], cfg.jitter, cfg.crop_size)
    views = {
        "original": clip.frames,
        "consistent": augment.apply(clip, params).frames,
        "per_frame": augment.apply_per_frame(clip, pair_rng, cfg.jitter, cfg.crop_size).frames,
    }
    out = Path(args.out or "preview")
    out.mkdir(parents=True, exist_ok=True)
    for name, frames in views.items():
        for k, frame in enumerate(frames):
            _write_ppm(out / f"{name}_{k:02d}.ppm", frame)
    (out / "params.json").write_text(json.dumps(params.__dict__, indent=2, default=list) + "\n")
    print(f"wrote {sum(len(f) for f in views.values())} frames to {out}")


def cmd_shape_check(args):
    trace = shape_trace(R3D50Spec(), (args.T, args.S))
    rows = [("stage", "T", "S")] + trace
    for name, t, s in rows:
        print(f"{name:>6}  {t:>4}  {s:>4}")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            csv.writer(fh).writerows(rows)


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cvrl", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.set_defaults(func=func)
        return p

    add("gen-data", cmd_gen_data, "generate the synthetic dataset")
    p = add("pretrain", cmd_pretrain, "contrastive pretraining")
    p.add_argument("--dataset")
    p.add_argument("--dump-lr", metavar="CSV", help="write the (step, lr) schedule and exit")
    p = add("linear-eval", cmd_linear_eval, "linear probe on frozen features")
    p.add_argument("--random-init", action="store_true", help="probe a randomly initialised encoder")
    p.add_argument("--pretrain-config", help="encoder architecture for --random-init")
    p = add("fine-tune", cmd_fine_tune, "fine-tune all layers on a label subset")
    p.add_argument("--scratch", action="store_true", help="start from random init instead of the checkpoint")
    p.add_argument("--pretrain-config", help="encoder architecture for --scratch")
    p = add("semi-eval", cmd_semi_eval, "pretrained vs scratch fine-tuning for each label fraction")
    p.add_argument("--seeds", type=int, default=3)
    p = add("ablation", cmd_ablation, "consistent vs per-frame augmentation, paired over seeds")
    p.add_argument("--dataset")
    p.add_argument("--eval-config")
    p.add_argument("--seeds", type=int, default=3)
    p = add("dense-predict", cmd_dense_predict, "dense multi-clip, multi-crop logits for one video")
    p.add_argument("--video", type=int, default=0)
    p = add("sample-hist", cmd_sample_hist, "histogram of sampled temporal intervals")
    p.add_argument("--preset", default=DistributionPreset.DEC_LINEAR.value,
                   choices=[m.value for m in DistributionPreset])
    p.add_argument("--T", type=int, default=218)
    p.add_argument("--n", type=int, default=100_000)
    p = add("augment-preview", cmd_augment_preview, "write original and augmented frames as PPM")
    p.add_argument("--in", dest="input", required=True, help="dataset file")
    p.add_argument("--video", type=int, default=0)
    p = add("shape-check", cmd_shape_check, "print the R3D-50 stage shapes")
    p.add_argument("--T", type=int, default=32)
    p.add_argument("--S", type=int, default=224)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(asctime)s %(message)s")
    try:
        args.func(args)
    except ConfigurationError as exc:
        print(f"cvrl {args.command}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
