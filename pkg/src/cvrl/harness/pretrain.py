"""Contrastive pretraining loop and its estimator wrapper."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import fields
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ..augment import JitterConfig, augment_clip
from ..encoder.checkpoint import save_checkpoint
from ..encoder.network import TinyEncoder, TinyEncoderConfig
from ..exceptions import BoundsError, TrainingDivergedError
from ..loss import EmbeddingBatch, info_nce_grad, info_nce_loss, l2_normalize, pair_similarity_stats
from ..optim import SGD, ScheduleConfig, lr_at
from ..temporal import from_preset, sample_clip_pair
from ..video import extract_clip, load_dataset
from .config import PretrainConfig, config_to_dict
from .validation import check_videos

log = logging.getLogger(__name__)

METRIC_FIELDS = ("epoch", "step", "loss", "pos_sim", "neg_sim", "lr")


def sample_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent stream for one (seed, epoch, video) work item."""
    return np.random.default_rng(np.random.SeedSequence([seed, *key]))


def make_positive_pair(video, dist, config: PretrainConfig, rng):
    """Two augmented clips of ``video`` whose starts are ``t ~ dist`` frames apart."""
    pair = sample_clip_pair(dist, video.num_frames, config.clip_span, rng)
    consistent = config.consistency == "consistent"
    views = []
    for start in (pair.start1, pair.start2):
        clip = extract_clip(video, start, config.clip_length, config.temporal_stride)
        views.append(augment_clip(clip, rng, config.jitter, config.crop_size, consistent).frames)
    return views[0], views[1], pair


def steps_per_epoch(n_videos: int, batch_size: int) -> int:
    return -(-n_videos // batch_size)


class CVRLPretrainer(TransformerMixin, BaseEstimator):
    """Self-supervised contrastive pretraining of a :class:`TinyEncoder`.

    ``fit`` ignores labels. ``transform`` returns l2-normalized backbone
    features of the centre clip of each video.

    Attributes
    ----------
    encoder_ : TinyEncoder
    metrics_ : list of dict, one per optimisation step
    schedule_ : ScheduleConfig
    """

    def __init__(
        self,
        preset="dec-linear",
        clip_length=16,
        temporal_stride=2,
        crop_size=(32, 32),
        batch_size=32,
        epochs=50,
        tau=0.1,
        base_lr=0.01,
        warmup_epochs=5,
        momentum=0.9,
        weight_decay=0.0,
        encoder=None,
        jitter=None,
        seed=0,
        loss_mode="symmetric",
        consistency="consistent",
        checkpoint_every=0,
        checkpoint_dir=None,
        eval_clip_length=32,
    ):
        self.preset = preset
        self.clip_length = clip_length
        self.temporal_stride = temporal_stride
        self.crop_size = crop_size
        self.batch_size = batch_size
        self.epochs = epochs
        self.tau = tau
        self.base_lr = base_lr
        self.warmup_epochs = warmup_epochs
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.encoder = encoder
        self.jitter = jitter
        self.seed = seed
        self.loss_mode = loss_mode
        self.consistency = consistency
        self.checkpoint_every = checkpoint_every
        self.checkpoint_dir = checkpoint_dir
        self.eval_clip_length = eval_clip_length

    @classmethod
    def from_config(cls, config: PretrainConfig, **kwargs) -> "CVRLPretrainer":
        names = {f.name for f in fields(PretrainConfig)} - {"dataset", "out"}
        params = {name: getattr(config, name) for name in names}
        return cls(**params, **kwargs)

    def to_config(self, dataset=None, out=None) -> PretrainConfig:
        return PretrainConfig(
            dataset=dataset,
            out=out,
            preset=self.preset,
            clip_length=self.clip_length,
            temporal_stride=self.temporal_stride,
            crop_size=tuple(self.crop_size),
            batch_size=self.batch_size,
            epochs=self.epochs,
            tau=self.tau,
            base_lr=self.base_lr,
            warmup_epochs=self.warmup_epochs,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            encoder=self.encoder or TinyEncoderConfig(),
            jitter=self.jitter or JitterConfig(),
            seed=self.seed,
            loss_mode=self.loss_mode,
            consistency=self.consistency,
            checkpoint_every=self.checkpoint_every,
        )

    def fit(self, X, y=None):
        config = self.to_config()
        videos = check_videos(X)
        T_total = videos[0].num_frames
        if T_total < config.clip_span:
            raise BoundsError(f"videos of {T_total} frames cannot hold a clip spanning {config.clip_span}")
        dist = from_preset(config.preset, T_total - config.clip_span)
        n = len(videos)
        sched = ScheduleConfig(
            base_lr=config.base_lr,
            warmup_epochs=config.warmup_epochs,
            total_epochs=config.epochs,
            steps_per_epoch=steps_per_epoch(n, config.batch_size),
        )
        encoder = TinyEncoder(config.encoder, seed=config.seed)
        opt = SGD(encoder.parameters(), config.momentum, config.weight_decay)

        self.metrics_ = []
        self.schedule_ = sched
        self.encoder_ = encoder
        step = 0
        t0 = time.perf_counter()
        for epoch in range(config.epochs):
            order = sample_rng(config.seed, epoch).permutation(n)
            for lo in range(0, n, config.batch_size):
                batch_ids = order[lo : lo + config.batch_size]
                first, second = [], []
                for i in batch_ids:
                    v1, v2, _ = make_positive_pair(videos[i], dist, config, sample_rng(config.seed, epoch, int(i)))
                    first.append(v1)
                    second.append(v2)
                clips = np.stack(first + second)
                lr = lr_at(sched, step)
                record = self._step(encoder, opt, clips, config, lr)
                record.update(epoch=epoch, step=step, lr=lr)
                self.metrics_.append(record)
                step += 1
            epoch_rows = self.metrics_[-steps_per_epoch(n, config.batch_size):]
            log.info(
                "epoch %d mean loss %.4f pos %.3f neg %.3f (%.0fs)",
                epoch,
                *(np.mean([m[k] for m in epoch_rows]) for k in ("loss", "pos_sim", "neg_sim")),
                time.perf_counter() - t0,
            )
            if config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0 and self.checkpoint_dir:
                Path(self.checkpoint_dir).mkdir(parents=True, exist_ok=True)
                save_checkpoint(Path(self.checkpoint_dir) / f"epoch_{epoch + 1:03d}.ckpt", encoder)
        self.wall_time_ = time.perf_counter() - t0
        return self

    @staticmethod
    def _step(encoder, opt, clips, config, lr) -> dict:
        _, z = encoder.forward(clips)
        batch = EmbeddingBatch(z.astype(np.float64), config.tau)
        loss = info_nce_loss(batch, config.loss_mode)
        if not np.isfinite(loss):
            encoder.clear_cache()
            raise TrainingDivergedError(
                f"non-finite loss {loss} at lr={lr}; embedding norms "
                f"min={np.linalg.norm(z, axis=1).min():.3g} max={np.linalg.norm(z, axis=1).max():.3g}"
            )
        grad = info_nce_grad(batch, config.loss_mode)
        pos, neg = pair_similarity_stats(batch)
        opt.zero_grad()
        encoder.backward(grad)
        opt.step(lr)
        return {"loss": loss, "pos_sim": pos, "neg_sim": neg}

    def transform(self, X):
        check_is_fitted(self, "encoder_")
        from .evaluation import center_clip

        videos = check_videos(X)
        clips = np.stack([center_clip(v, self.eval_clip_length, self.temporal_stride, tuple(self.crop_size)) for v in videos])
        return l2_normalize(self.encoder_.features(clips))


def write_metrics_csv(metrics, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRIC_FIELDS)
        for m in metrics:
            writer.writerow([m["epoch"], m["step"], *(repr(float(m[k])) for k in METRIC_FIELDS[2:])])


def write_schedule_csv(schedule: ScheduleConfig, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "lr"])
        for step in range(schedule.total_steps):
            writer.writerow([step, repr(lr_at(schedule, step))])


def pretrain(config: PretrainConfig, dataset=None, out_dir=None) -> CVRLPretrainer:
    """Run pretraining and write ``checkpoint.ckpt``, ``metrics.csv`` and ``config.json``.

    ``dataset`` overrides ``config.dataset`` (a path) when given.
    """
    if dataset is None:
        dataset = load_dataset(config.dataset)
    out_dir = Path(out_dir or config.out or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    model = CVRLPretrainer.from_config(config, checkpoint_dir=out_dir / "checkpoints")
    model.fit(dataset)
    save_checkpoint(out_dir / "checkpoint.ckpt", model.encoder_, extra={"pretrain": config_to_dict(config)})
    write_metrics_csv(model.metrics_, out_dir / "metrics.csv")
    (out_dir / "config.json").write_text(json.dumps(config_to_dict(config), indent=2, sort_keys=True))
    return model
