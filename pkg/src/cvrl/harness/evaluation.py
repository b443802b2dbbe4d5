"""Linear probing, fine-tuning, dense multi-clip testing and label subsets."""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, softmax
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from ..augment import JitterConfig, augment_clip, crop_resize
from ..encoder.layers import Linear
from ..encoder.network import TinyEncoder, TinyEncoderConfig
from ..exceptions import BoundsError, ConfigurationError
from ..loss import l2_normalize
from ..optim import SGD, ScheduleConfig, lr_at, sgd_step
from ..video import Dataset, RawVideo, extract_clip
from .pretrain import sample_rng
from .validation import check_labels, check_videos

log = logging.getLogger(__name__)

# stream tags keep evaluation randomness disjoint from pretraining streams
_PROBE_STREAM = 1_000_001
_FINETUNE_STREAM = 1_000_002
_SUBSET_STREAM = 1_000_003


# ---------------------------------------------------------------------------
# dense sampling
# ---------------------------------------------------------------------------


def dense_clip_starts(num_frames: int, clip_length: int, stride: int, num_clips: int) -> list[int]:
    """Clip starts spaced uniformly over every valid start; a single clip is centred."""
    span = (clip_length - 1) * stride + 1
    max_start = num_frames - span
    if max_start < 0:
        raise BoundsError(f"video of {num_frames} frames is shorter than one clip span ({span})")
    if num_clips == 1:
        return [max_start // 2]
    return [int(round(max_start * i / (num_clips - 1))) for i in range(num_clips)]


def spatial_crops(frames: np.ndarray, num_crops: int, target) -> list[np.ndarray]:
    """Square crops at start/centre/end of the longer spatial axis, resized to ``target``.

    Square frames are first edge-padded to 4:3 (width) so the crops differ.
    """
    H, W = frames.shape[-3], frames.shape[-2]
    if H == W and num_crops > 1:
        pad = int(round(4 * H / 3)) - W
        frames = np.pad(frames, [(0, 0), (0, 0), (pad // 2, pad - pad // 2), (0, 0)], mode="edge")
        W = frames.shape[-2]
    side = min(H, W)
    extent = max(H, W) - side
    if num_crops == 1:
        offsets = [extent // 2]
    else:
        offsets = [int(round(extent * i / (num_crops - 1))) for i in range(num_crops)]
    crops = []
    for off in offsets:
        rect = (off, 0, side, side) if W >= H else (0, off, side, side)
        crops.append(crop_resize(frames, rect, target))
    return crops


def dense_views(video: RawVideo, clip_length, stride, num_clips, num_crops, target) -> np.ndarray:
    """All ``num_clips * num_crops`` test views of one video, stacked."""
    views = []
    for start in dense_clip_starts(video.num_frames, clip_length, stride, num_clips):
        clip = extract_clip(video, start, clip_length, stride)
        views.extend(spatial_crops(clip.frames, num_crops, target))
    return np.stack(views)


def center_clip(video: RawVideo, clip_length, stride, target) -> np.ndarray:
    return dense_views(video, clip_length, stride, 1, 1, target)[0]


def dense_predict(model, video: RawVideo, num_clips=10, num_crops=3, clip_length=32, stride=2, target=(32, 32)):
    """Average ``model(views)`` logits over every clip x crop view of ``video``."""
    views = dense_views(video, clip_length, stride, num_clips, num_crops, target)
    return np.asarray(model(views)).mean(axis=0)


def _batched(fn, x, batch: int):
    return np.concatenate([fn(x[i : i + batch]) for i in range(0, len(x), batch)])


# ---------------------------------------------------------------------------
# subsets
# ---------------------------------------------------------------------------


def semi_subset(dataset: Dataset, fraction: float, seed: int) -> Dataset:
    """Balanced per-class sample of ``round(fraction * count)`` videos."""
    if not 0 < fraction <= 1:
        raise ConfigurationError(f"fraction must lie in (0, 1], got {fraction}")
    rng = sample_rng(seed, _SUBSET_STREAM)
    labels = dataset.labels
    chosen = []
    for c in range(dataset.num_classes):
        members = np.flatnonzero(labels == c)
        k = int(round(fraction * members.size))
        if k < 1:
            raise ConfigurationError(
                f"fraction {fraction} keeps no video of class {c} ({members.size} available)"
            )
        chosen.extend(rng.choice(members, size=k, replace=False).tolist())
    return dataset.subset(sorted(chosen))


# ---------------------------------------------------------------------------
# classifiers
# ---------------------------------------------------------------------------


def softmax_cross_entropy(logits: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient w.r.t. ``logits``."""
    logits = np.asarray(logits, dtype=np.float64)
    n = logits.shape[0]
    loss = float(np.mean(logsumexp(logits, axis=1) - logits[np.arange(n), y]))
    grad = softmax(logits, axis=1)
    grad[np.arange(n), y] -= 1.0
    return loss, grad / n


class LinearProbe(ClassifierMixin, BaseEstimator):
    """Multinomial logistic regression trained with momentum SGD.

    Rows are l2-normalized before use when ``normalize`` is set. With
    ``standardize`` each normalized feature is then shifted and scaled by its
    training mean and standard deviation. That map is affine and invertible,
    so the classifier stays linear in the normalized features
    (:meth:`folded_coef` returns that form); it only conditions SGD, which
    otherwise stalls on nearly collinear rows. The learning rate follows the
    warmup + cosine schedule of pretraining.
    """

    def __init__(
        self,
        epochs=100,
        base_lr=4.0,
        batch_size=64,
        warmup_epochs=5,
        momentum=0.9,
        weight_decay=0.0,
        normalize=True,
        standardize=True,
        seed=0,
    ):
        self.epochs = epochs
        self.base_lr = base_lr
        self.batch_size = batch_size
        self.warmup_epochs = warmup_epochs
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.normalize = normalize
        self.standardize = standardize
        self.seed = seed

    def _normalize(self, X):
        X = check_array(X, dtype=np.float64)
        return l2_normalize(X) if self.normalize else X

    def _prep(self, X):
        return (self._normalize(X) - self.shift_) / self.scale_

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        X = self._normalize(X)
        d = X.shape[1]
        if self.standardize:
            self.shift_ = X.mean(axis=0)
            std = X.std(axis=0)
            self.scale_ = np.where(std > 1e-12, std, 1.0)
        else:
            self.shift_, self.scale_ = np.zeros(d), np.ones(d)
        X = (X - self.shift_) / self.scale_
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        n, d = X.shape
        k = self.classes_.size
        self.coef_ = np.zeros((d, k))
        self.intercept_ = np.zeros(k)
        velocity = [np.zeros_like(self.coef_), np.zeros_like(self.intercept_)]
        sched = ScheduleConfig(
            self.base_lr, min(self.warmup_epochs, self.epochs - 1), self.epochs, -(-n // self.batch_size)
        )
        rng = np.random.default_rng(self.seed)
        step = 0
        for _ in range(self.epochs):
            order = rng.permutation(n)
            for lo in range(0, n, self.batch_size):
                idx = order[lo : lo + self.batch_size]
                self.loss_, g = softmax_cross_entropy(X[idx] @ self.coef_ + self.intercept_, y_idx[idx])
                grads = [X[idx].T @ g, g.sum(axis=0)]
                sgd_step(
                    [self.coef_, self.intercept_], grads, velocity, lr_at(sched, step),
                    self.momentum, self.weight_decay,
                )
                step += 1
        self.n_features_in_ = d
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        return self._prep(X) @ self.coef_ + self.intercept_

    def folded_coef(self) -> tuple[np.ndarray, np.ndarray]:
        """``(W, b)`` acting directly on the (l2-normalized) features."""
        check_is_fitted(self, "coef_")
        W = self.coef_ / self.scale_[:, None]
        return W, self.intercept_ - self.shift_ @ W

    def predict_proba(self, X):
        return softmax(self.decision_function(X), axis=1)

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]


def extract_features(encoder: TinyEncoder, clips: np.ndarray, batch: int = 32, projection: bool = False):
    """Frozen-encoder features for a stack of clips."""

    def run(x):
        return encoder.project(x)[1] if projection else encoder.features(x)

    return _batched(run, clips, batch)


def _train_views(videos, clip_length, stride, target, seed, stream, n_views, epoch=0):
    span = (clip_length - 1) * stride + 1
    jitter = JitterConfig.crop_flip_only()
    views = []
    for v in videos:
        rng = sample_rng(seed, stream, epoch, v.video_id)
        if v.num_frames < span:
            raise BoundsError(f"video {v.video_id} has {v.num_frames} frames, need {span}")
        for _ in range(n_views):
            start = int(rng.integers(0, v.num_frames - span + 1))
            clip = extract_clip(v, start, clip_length, stride)
            views.append(augment_clip(clip, rng, jitter, target).frames)
    return np.stack(views)


class FineTunedClassifier(ClassifierMixin, BaseEstimator):
    """Encoder plus linear head, all layers trained on labeled videos.

    ``encoder`` is the initialization (a :class:`TinyEncoder`, copied on
    fit); ``None`` trains from a fresh random init of ``encoder_config``.
    Prediction averages logits over dense clip x crop views.
    """

    def __init__(
        self,
        encoder=None,
        encoder_config=None,
        epochs=60,
        base_lr=0.2,
        batch_size=16,
        momentum=0.9,
        weight_decay=0.0,
        clip_length=32,
        temporal_stride=2,
        crop_size=(32, 32),
        num_dense_clips=10,
        num_spatial_crops=3,
        batch_clips=32,
        seed=0,
    ):
        self.encoder = encoder
        self.encoder_config = encoder_config
        self.epochs = epochs
        self.base_lr = base_lr
        self.batch_size = batch_size
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.clip_length = clip_length
        self.temporal_stride = temporal_stride
        self.crop_size = crop_size
        self.num_dense_clips = num_dense_clips
        self.num_spatial_crops = num_spatial_crops
        self.batch_clips = batch_clips
        self.seed = seed

    def fit(self, X, y=None):
        videos = check_videos(X)
        labels = check_labels(videos, y)
        self.classes_, y_idx = np.unique(labels, return_inverse=True)
        if self.encoder is not None:
            encoder = copy.deepcopy(self.encoder)
        else:
            encoder = TinyEncoder(self.encoder_config or TinyEncoderConfig(), seed=self.seed)
        encoder.set_requires_grad(True)
        head = Linear(encoder.config.representation_dim, self.classes_.size, np.dtype(encoder.config.dtype))
        bound = np.sqrt(1.0 / head.fan_in)
        rng = sample_rng(self.seed, _FINETUNE_STREAM)
        head.params["weight"].value[...] = rng.uniform(-bound, bound, size=head.params["weight"].shape)

        n = len(videos)
        batch = min(self.batch_size, n)
        sched = ScheduleConfig(self.base_lr, 0, self.epochs, -(-n // batch))
        opt = SGD(encoder.parameters() + list(head.params.values()), self.momentum, self.weight_decay)
        target = tuple(self.crop_size)
        step = 0
        self.loss_curve_ = []
        for epoch in range(self.epochs):
            order = rng.permutation(n)
            for lo in range(0, n, batch):
                idx = order[lo : lo + batch]
                clips = _train_views(
                    [videos[i] for i in idx], self.clip_length, self.temporal_stride, target,
                    self.seed, _FINETUNE_STREAM, 1, epoch,
                )
                rep, _ = encoder.forward(clips)
                rep64 = rep.astype(np.float64)
                norms = np.linalg.norm(rep64, axis=1, keepdims=True)
                feats = rep64 / norms
                logits = head.forward(feats.astype(rep.dtype))
                loss, g = softmax_cross_entropy(logits, y_idx[idx])
                opt.zero_grad()
                g_feat = head.backward(g.astype(rep.dtype)).astype(np.float64)
                g_rep = (g_feat - feats * np.sum(g_feat * feats, axis=1, keepdims=True)) / norms
                encoder.backward(grad_representation=g_rep)
                opt.step(lr_at(sched, step))
                self.loss_curve_.append(loss)
                step += 1
        self.encoder_ = encoder
        self.head_ = head
        return self

    def _logits(self, clips):
        feats = l2_normalize(self.encoder_.features(clips)).astype(self.encoder_.config.dtype)
        logits = self.head_.forward(feats)
        self.head_._cache = None
        return logits

    def decision_function(self, X):
        check_is_fitted(self, "encoder_")
        videos = check_videos(X)
        return np.stack([
            dense_predict(
                lambda v: _batched(self._logits, v, self.batch_clips), video,
                self.num_dense_clips, self.num_spatial_crops, self.clip_length,
                self.temporal_stride, tuple(self.crop_size),
            )
            for video in videos
        ])

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]


# ---------------------------------------------------------------------------
# protocols
# ---------------------------------------------------------------------------


@dataclass
class ProbeResult:
    accuracy: float
    train_accuracy: float
    predictions: np.ndarray
    labels: np.ndarray
    probe: LinearProbe


def _dense_features(encoder, videos, config, projection=False):
    feats = []
    for video in videos:
        views = dense_views(
            video, config.clip_length, config.temporal_stride,
            config.num_dense_clips, config.num_spatial_crops, config.crop_size,
        )
        feats.append(extract_features(encoder, views, config.batch_clips, projection))
    return np.stack(feats)  # (videos, views, dim)


def linear_eval(config, encoder: TinyEncoder, train: Dataset, test: Dataset) -> ProbeResult:
    """Train a linear classifier on frozen, l2-normalized backbone features.

    Training uses ``probe_views`` randomly cropped/flipped clips per video;
    testing averages logits over the dense clip x crop views.
    """
    if train.num_classes != test.num_classes:
        raise ConfigurationError(f"class count mismatch: {train.num_classes} vs {test.num_classes}")
    if config.label_fraction < 1.0:
        train = semi_subset(train, config.label_fraction, config.seed)
    encoder.set_requires_grad(False)
    train_videos = list(train.videos)
    clips = _train_views(
        train_videos, config.clip_length, config.temporal_stride, config.crop_size,
        config.seed, _PROBE_STREAM, config.probe_views,
    )
    X = extract_features(encoder, clips, config.batch_clips, config.probe_projection)
    y = np.repeat(train.labels, config.probe_views)
    probe = LinearProbe(
        epochs=config.classifier_epochs,
        base_lr=config.classifier_lr,
        batch_size=config.classifier_batch_size,
        weight_decay=config.classifier_weight_decay,
        seed=config.seed,
    ).fit(X, y)
    train_acc = float(probe.score(X, y))

    feats = _dense_features(encoder, test.videos, config, config.probe_projection)
    n_test, n_views, dim = feats.shape
    logits = probe.decision_function(feats.reshape(-1, dim)).reshape(n_test, n_views, -1).mean(axis=1)
    pred = probe.classes_[np.argmax(logits, axis=1)]
    acc = float(np.mean(pred == test.labels))
    log.info("linear probe: train %.3f test %.3f", train_acc, acc)
    return ProbeResult(acc, train_acc, pred, test.labels, probe)


def fine_tune(config, subset: Dataset, test: Dataset, encoder: TinyEncoder | None = None,
              encoder_config: TinyEncoderConfig | None = None) -> tuple[float, FineTunedClassifier]:
    """Fine-tune every layer on ``subset`` and return dense test accuracy.

    ``encoder=None`` trains from scratch, for comparison.
    """
    if subset.num_classes != test.num_classes:
        raise ConfigurationError(f"class count mismatch: {subset.num_classes} vs {test.num_classes}")
    clf = FineTunedClassifier(
        encoder=encoder,
        encoder_config=encoder_config,
        epochs=config.fine_tune_epochs,
        base_lr=config.fine_tune_lr,
        batch_size=config.fine_tune_batch_size,
        clip_length=config.clip_length,
        temporal_stride=config.temporal_stride,
        crop_size=config.crop_size,
        num_dense_clips=config.num_dense_clips,
        num_spatial_crops=config.num_spatial_crops,
        batch_clips=config.batch_clips,
        seed=config.seed,
    ).fit(subset)
    acc = float(clf.score(test, test.labels))
    return acc, clf
