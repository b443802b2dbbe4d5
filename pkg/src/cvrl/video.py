"""Videos, clips, and the synthetic moving-rectangle dataset.

Videos are stored as 8-bit RGB and converted to unit-interval floats only
when a clip is extracted.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import BoundsError, ConfigurationError, FormatError

DATASET_MAGIC = b"CVRLDS1\x00"
_HEADER = struct.Struct("<8sIIIIIQ")
_VIDEO_HEADER = struct.Struct("<II")


@dataclass(frozen=True, eq=False)
class RawVideo:
    """A labeled sequence of ``T_total`` frames, each ``H x W x 3`` uint8."""

    frames: np.ndarray
    label: int
    video_id: int

    def __post_init__(self):
        frames = np.asarray(self.frames)
        if frames.ndim != 4 or frames.shape[-1] != 3 or frames.dtype != np.uint8:
            raise ConfigurationError(
                f"frames must be a (T, H, W, 3) uint8 array, got {frames.dtype} {frames.shape}"
            )
        if self.label < 0:
            raise ConfigurationError(f"label must be >= 0, got {self.label}")
        if frames.flags.writeable:
            frames = frames.view()
            frames.flags.writeable = False
        object.__setattr__(self, "frames", frames)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def hw(self) -> tuple[int, int]:
        return self.frames.shape[1], self.frames.shape[2]

    def __eq__(self, other):
        if not isinstance(other, RawVideo):
            return NotImplemented
        return (
            self.label == other.label
            and self.video_id == other.video_id
            and np.array_equal(self.frames, other.frames)
        )


@dataclass(frozen=True)
class Clip:
    """``M x H_c x W_c x 3`` float frames in [0, 1] cut from a source video."""

    frames: np.ndarray
    source_video_id: int
    start_frame: int

    @property
    def length(self) -> int:
        return self.frames.shape[0]


@dataclass(frozen=True, eq=False)
class Dataset:
    videos: list[RawVideo]
    num_classes: int
    generation_seed: int
    geometry: tuple[int, int, int]
    _labels: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        ids = [v.video_id for v in self.videos]
        if sorted(ids) != list(range(len(ids))):
            raise ConfigurationError("video_ids must be unique and dense in [0, len)")
        for v in self.videos:
            if v.frames.shape[:3] != tuple(self.geometry):
                raise ConfigurationError(
                    f"video {v.video_id} has geometry {v.frames.shape[:3]}, expected {self.geometry}"
                )
            if v.label >= self.num_classes:
                raise ConfigurationError(f"video {v.video_id} label {v.label} >= num_classes")
        object.__setattr__(self, "_labels", np.array([v.label for v in self.videos], dtype=np.int64))

    def __len__(self) -> int:
        return len(self.videos)

    def __getitem__(self, idx: int) -> RawVideo:
        return self.videos[idx]

    def __iter__(self):
        return iter(self.videos)

    @property
    def labels(self) -> np.ndarray:
        return self._labels

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.num_classes == other.num_classes
            and self.generation_seed == other.generation_seed
            and tuple(self.geometry) == tuple(other.geometry)
            and len(self.videos) == len(other.videos)
            and all(a == b for a, b in zip(self.videos, other.videos))
        )

    def subset(self, indices) -> "Dataset":
        """Return a new dataset holding ``indices``, with ids renumbered densely."""
        videos = [
            RawVideo(self.videos[i].frames, self.videos[i].label, new_id)
            for new_id, i in enumerate(indices)
        ]
        return Dataset(videos, self.num_classes, self.generation_seed, tuple(self.geometry))


# ---------------------------------------------------------------------------
# synthetic generation
# ---------------------------------------------------------------------------


def _hsv_to_rgb(h, s, v):
    i = int(h * 6.0) % 6
    f = h * 6.0 - int(h * 6.0)
    p, q, t = v * (1 - s), v * (1 - s * f), v * (1 - s * (1 - f))
    return [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)][i]


def _class_archetype(label: int, num_classes: int) -> dict:
    # Motion axis alternates horizontal/vertical so a horizontal flip never
    # changes the class; speed, hue and texture frequency step with the label.
    n_speeds = (num_classes + 1) // 2
    level = label // 2
    speed = 0.75 + 1.5 * level / max(n_speeds - 1, 1)
    return {
        "axis": label % 2,
        "speed": speed,
        "hue": label / num_classes,
        "texture_freq": 2.0 + 4.0 * label / max(num_classes - 1, 1),
    }


def _bounce(p0: float, v: float, t: np.ndarray, span: float) -> np.ndarray:
    if span <= 0:
        return np.zeros_like(t, dtype=np.float64)
    x = np.mod(p0 + v * t, 2 * span)
    return np.where(x > span, 2 * span - x, x)


def _coverage(coord: np.ndarray, lo: np.ndarray, size: float) -> np.ndarray:
    # Fraction of each unit pixel [coord, coord+1) covered by [lo, lo+size).
    lo = lo[:, None]
    return np.clip(np.minimum(coord + 1, lo + size) - np.maximum(coord, lo), 0.0, 1.0)


def _render_video(label: int, num_classes: int, T: int, H: int, W: int, rng) -> np.ndarray:
    arch = _class_archetype(label, num_classes)
    t = np.arange(T, dtype=np.float64)
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)

    # background: per-video base colour plus a static grating
    base = rng.uniform(0.15, 0.65, size=3)
    theta = rng.uniform(0, np.pi)
    freq = arch["texture_freq"] * rng.uniform(0.7, 1.3)
    phase = rng.uniform(0, 2 * np.pi)
    amp = rng.uniform(0.05, 0.15)
    grating = np.sin(2 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)) / max(H, W) + phase)
    background = np.clip(base[None, None, :] + amp * grating[..., None], 0.0, 1.0)

    # moving rectangle
    rw, rh = rng.uniform(W * 0.15, W * 0.32), rng.uniform(H * 0.15, H * 0.32)
    hue = (arch["hue"] + rng.uniform(-0.6, 0.6) / num_classes) % 1.0
    colour = np.array(_hsv_to_rgb(hue, rng.uniform(0.6, 1.0), rng.uniform(0.6, 1.0)))
    speed = arch["speed"] * rng.uniform(0.85, 1.15) * rng.choice([-1.0, 1.0])
    drift = rng.uniform(-0.1, 0.1)
    x0, y0 = rng.uniform(0, W - rw), rng.uniform(0, H - rh)
    if arch["axis"] == 0:
        xs, ys = _bounce(x0, speed, t, W - rw), _bounce(y0, drift, t, H - rh)
    else:
        xs, ys = _bounce(x0, drift, t, W - rw), _bounce(y0, speed, t, H - rh)
    cov_x = _coverage(xx[0], xs, rw)  # (T, W)
    cov_y = _coverage(yy[:, 0], ys, rh)  # (T, H)
    alpha = cov_y[:, :, None, None] * cov_x[:, None, :, None]  # (T, H, W, 1)

    frames = (1.0 - alpha) * background[None] + alpha * colour[None, None, None, :]
    frames += rng.normal(0.0, 0.02, size=frames.shape)
    return np.round(np.clip(frames, 0.0, 1.0) * 255.0).astype(np.uint8)


def generate_synthetic_dataset(
    num_classes: int,
    videos_per_class: int,
    T_total: int,
    H: int,
    W: int,
    seed: int,
) -> Dataset:
    """Generate a balanced dataset of moving-rectangle videos.

    Each class fixes a motion axis, a speed, a colour family and a background
    texture frequency; every video jitters all of them, plus rectangle size,
    start position, background colour and sensor noise. Videos are laid out
    class-interleaved (``video_id % num_classes == label``).
    """
    if num_classes < 2:
        raise ConfigurationError(f"num_classes must be >= 2, got {num_classes}")
    if videos_per_class < 1:
        raise ConfigurationError(f"videos_per_class must be >= 1, got {videos_per_class}")
    if T_total < 64 or H < 32 or W < 32:
        raise ConfigurationError(f"need T_total >= 64 and H, W >= 32, got {(T_total, H, W)}")

    n = num_classes * videos_per_class
    store = np.empty((n, T_total, H, W, 3), dtype=np.uint8)
    videos = []
    for vid in range(n):
        label = vid % num_classes
        rng = np.random.default_rng(np.random.SeedSequence([seed, vid]))
        store[vid] = _render_video(label, num_classes, T_total, H, W, rng)
        videos.append(RawVideo(store[vid], label, vid))
    return Dataset(videos, num_classes, seed, (T_total, H, W))


def extract_clip(video: RawVideo, start: int, length: int, stride: int) -> Clip:
    """Take frames ``start, start + stride, ...`` and rescale them to [0, 1]."""
    if length < 1 or stride < 1:
        raise ConfigurationError(f"length and stride must be >= 1, got {length}, {stride}")
    last = start + (length - 1) * stride
    if start < 0 or last >= video.num_frames:
        raise BoundsError(
            f"clip [{start}, {last}] (length {length}, stride {stride}) "
            f"does not fit a video of {video.num_frames} frames"
        )
    frames = video.frames[start : last + 1 : stride].astype(np.float32) / np.float32(255.0)
    return Clip(frames, video.video_id, start)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def save_dataset(dataset: Dataset, path) -> None:
    T, H, W = dataset.geometry
    with open(path, "wb") as fh:
        fh.write(
            _HEADER.pack(DATASET_MAGIC, dataset.num_classes, len(dataset), T, H, W, dataset.generation_seed)
        )
        for video in dataset.videos:
            fh.write(_VIDEO_HEADER.pack(video.video_id, video.label))
            fh.write(np.ascontiguousarray(video.frames).tobytes())


def load_dataset(path) -> Dataset:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError(f"truncated header: {len(data)} bytes, expected {_HEADER.size}")
    magic, num_classes, num_videos, T, H, W, seed = _HEADER.unpack_from(data, 0)
    if magic != DATASET_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {DATASET_MAGIC!r}")

    frame_bytes = T * H * W * 3
    record = _VIDEO_HEADER.size + frame_bytes
    expected = _HEADER.size + num_videos * record
    if len(data) < expected:
        complete = (len(data) - _HEADER.size) // record
        offset = _HEADER.size + complete * record
        raise FormatError(
            f"truncated file: {len(data)} bytes, expected {expected}; "
            f"video record {complete} at offset {offset} is incomplete"
        )
    if len(data) > expected:
        raise FormatError(f"trailing data: {len(data) - expected} bytes after offset {expected}")

    store = np.frombuffer(data, dtype=np.uint8)
    videos = []
    for i in range(num_videos):
        offset = _HEADER.size + i * record
        video_id, label = _VIDEO_HEADER.unpack_from(data, offset)
        start = offset + _VIDEO_HEADER.size
        frames = store[start : start + frame_bytes].reshape(T, H, W, 3)
        videos.append(RawVideo(frames, label, video_id))
    videos.sort(key=lambda v: v.video_id)
    return Dataset(videos, num_classes, seed, (T, H, W))
