"""Temporally consistent spatial augmentation.

All randomness for a clip is drawn once into an :class:`AugmentParams`; the
kernels below are then applied to every frame with those frozen values. The
kernels operate on arrays shaped ``(..., H, W, 3)`` so a whole clip is
transformed in one call.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv
from scipy.ndimage import correlate1d

from .exceptions import BoundsError, ConfigurationError
from .video import Clip

LUMA_WEIGHTS = (0.299, 0.587, 0.114)
JITTER_OPS = ("brightness", "contrast", "saturation", "hue")


@dataclass(frozen=True)
class JitterConfig:
    """Magnitudes and probabilities for the augmentation draw."""

    max_brightness: float = 0.8
    max_contrast: float = 0.8
    max_saturation: float = 0.8
    max_hue: float = 0.2
    p_flip: float = 0.5
    p_jitter: float = 0.8
    p_grey: float = 0.2
    area_range: tuple[float, float] = (0.3, 1.0)
    aspect_range: tuple[float, float] = (0.5, 2.0)
    blur_sigma_range: tuple[float, float] = (0.1, 2.0)

    def __post_init__(self):
        for name in ("p_flip", "p_jitter", "p_grey"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1], got {p}")
        for name in ("max_brightness", "max_contrast", "max_saturation", "max_hue"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")
        lo, hi = self.area_range
        if not 0 < lo <= hi <= 1:
            raise ConfigurationError(f"bad area_range {self.area_range}")
        lo, hi = self.aspect_range
        if not 0 < lo <= hi:
            raise ConfigurationError(f"bad aspect_range {self.aspect_range}")
        lo, hi = self.blur_sigma_range
        if not 0 <= lo <= hi:
            raise ConfigurationError(f"bad blur_sigma_range {self.blur_sigma_range}")

    @classmethod
    def crop_flip_only(cls) -> "JitterConfig":
        """Cropping, resizing and flipping only; used when training classifiers."""
        return cls(p_jitter=0.0, p_grey=0.0, blur_sigma_range=(0.0, 0.0))


@dataclass(frozen=True)
class AugmentParams:
    crop_rect: tuple[int, int, int, int]  # x, y, w, h
    target_size: tuple[int, int]  # H_c, W_c
    flip: bool
    jitter: bool
    brightness: float
    contrast: float
    saturation: float
    hue: float
    jitter_order: tuple[int, int, int, int]
    grey: bool
    blur_sigma: float


def crop_size(area_fraction: float, aspect: float, source_hw: tuple[int, int]) -> tuple[int, int]:
    """Width and height of a crop covering ``area_fraction`` of the frame at ``aspect`` (w/h)."""
    H, W = source_hw
    area = area_fraction * H * W
    return int(round(math.sqrt(area * aspect))), int(round(math.sqrt(area / aspect)))


def _fallback_rect(source_hw, aspect_range):
    H, W = source_hw
    aspect = min(max(W / H, aspect_range[0]), aspect_range[1])
    w = min(W, int(round(H * aspect)))
    h = min(H, int(round(w / aspect)))
    return (W - w) // 2, (H - h) // 2, w, h


def draw_params(
    rng,
    source_hw: tuple[int, int],
    config: JitterConfig = JitterConfig(),
    target: tuple[int, int] = (32, 32),
) -> AugmentParams:
    H, W = source_hw
    if H < 8 or W < 8:
        raise BoundsError(f"source frame must be at least 8x8, got {source_hw}")

    log_lo, log_hi = math.log(config.aspect_range[0]), math.log(config.aspect_range[1])
    rect = None
    for _ in range(10):
        area_fraction = rng.uniform(*config.area_range)
        aspect = math.exp(rng.uniform(log_lo, log_hi))
        w, h = crop_size(area_fraction, aspect, source_hw)
        if 1 <= w <= W and 1 <= h <= H:
            x = int(rng.integers(0, W - w + 1))
            y = int(rng.integers(0, H - h + 1))
            rect = (x, y, w, h)
            break
    if rect is None:
        rect = _fallback_rect(source_hw, config.aspect_range)

    flip = bool(rng.random() < config.p_flip)
    jitter = bool(rng.random() < config.p_jitter)
    grey = bool(rng.random() < config.p_grey)
    brightness = rng.uniform(-config.max_brightness, config.max_brightness)
    contrast = rng.uniform(max(0.0, 1 - config.max_contrast), 1 + config.max_contrast)
    saturation = rng.uniform(max(0.0, 1 - config.max_saturation), 1 + config.max_saturation)
    hue = rng.uniform(-config.max_hue, config.max_hue)
    order = tuple(int(i) for i in rng.permutation(4))
    blur_sigma = rng.uniform(*config.blur_sigma_range)
    return AugmentParams(
        crop_rect=rect,
        target_size=tuple(target),
        flip=flip,
        jitter=jitter,
        brightness=float(brightness),
        contrast=float(contrast),
        saturation=float(saturation),
        hue=float(hue),
        jitter_order=order,
        grey=grey,
        blur_sigma=float(blur_sigma),
    )


def identity_params(source_hw: tuple[int, int]) -> AugmentParams:
    """Parameters under which :func:`apply` returns its input unchanged."""
    H, W = source_hw
    return AugmentParams((0, 0, W, H), (H, W), False, False, 0.0, 1.0, 1.0, 0.0, (0, 1, 2, 3), False, 0.0)


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------


def _clamp(x):
    return np.clip(x, 0.0, 1.0, out=x)


def _interp_axis(n_out: int, offset: int, length: int):
    # half-pixel centres, edge-clamped inside the crop
    src = (np.arange(n_out) + 0.5) * (length / n_out) - 0.5
    src = np.clip(src, 0.0, length - 1)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, length - 1)
    frac = (src - lo).astype(np.float32)
    return lo + offset, hi + offset, frac


def crop_resize(frames: np.ndarray, rect, target) -> np.ndarray:
    """Bilinear resize of the ``rect = (x, y, w, h)`` region to ``target = (H_c, W_c)``."""
    x, y, w, h = rect
    H, W = frames.shape[-3], frames.shape[-2]
    if w < 1 or h < 1 or x < 0 or y < 0 or x + w > W or y + h > H:
        raise BoundsError(f"crop {rect} does not fit a {H}x{W} frame")
    Hc, Wc = target
    y0, y1, fy = _interp_axis(Hc, y, h)
    x0, x1, fx = _interp_axis(Wc, x, w)
    fy = fy[:, None, None]
    rows = frames[..., y0, :, :] * (1 - fy) + frames[..., y1, :, :] * fy
    fx = fx[:, None]
    out = rows[..., x0, :] * (1 - fx) + rows[..., x1, :] * fx
    return _clamp(out.astype(frames.dtype, copy=False))


def hflip(frames: np.ndarray) -> np.ndarray:
    return frames[..., ::-1, :].copy()


def _luma(frames):
    r, g, b = LUMA_WEIGHTS
    return frames[..., 0] * r + frames[..., 1] * g + frames[..., 2] * b


def greyscale(frames: np.ndarray) -> np.ndarray:
    y = _luma(frames)
    return _clamp(np.repeat(y[..., None], 3, axis=-1))


def adjust_brightness(frames, delta):
    return _clamp(frames + np.float32(delta))


def adjust_contrast(frames, factor):
    mean = _luma(frames).mean(axis=(-2, -1), keepdims=True)[..., None]
    return _clamp((frames - mean) * np.float32(factor) + mean)


def adjust_saturation(frames, factor):
    grey = _luma(frames)[..., None]
    return _clamp(grey + (frames - grey) * np.float32(factor))


def adjust_hue(frames, shift):
    hsv = rgb_to_hsv(frames)
    hsv[..., 0] = np.mod(hsv[..., 0] + np.float32(shift), 1.0)
    return _clamp(hsv_to_rgb(hsv).astype(frames.dtype, copy=False))


def color_jitter(frames, factors, permutation) -> np.ndarray:
    """Apply brightness/contrast/saturation/hue in the given order.

    ``factors`` maps op name to its value; ``permutation`` indexes into
    :data:`JITTER_OPS`.
    """
    ops = {
        "brightness": adjust_brightness,
        "contrast": adjust_contrast,
        "saturation": adjust_saturation,
        "hue": adjust_hue,
    }
    for i in permutation:
        name = JITTER_OPS[i]
        frames = ops[name](frames, factors[name])
    return frames


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = int(math.ceil(3.0 * sigma))
    if radius == 0:
        return np.ones(1)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(frames: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur, radius ``ceil(3 sigma)``, edge-clamped."""
    kernel = gaussian_kernel(sigma).astype(frames.dtype)
    if kernel.size == 1:
        return frames.copy()
    out = correlate1d(frames, kernel, axis=-3, mode="nearest")
    out = correlate1d(out, kernel, axis=-2, mode="nearest")
    return _clamp(out)


def apply_frames(frames: np.ndarray, params: AugmentParams) -> np.ndarray:
    """Run the full pipeline on ``(..., H, W, 3)`` frames with frozen params."""
    out = crop_resize(frames, params.crop_rect, params.target_size)
    if params.flip:
        out = hflip(out)
    if params.jitter:
        factors = {
            "brightness": params.brightness,
            "contrast": params.contrast,
            "saturation": params.saturation,
            "hue": params.hue,
        }
        out = color_jitter(out, factors, params.jitter_order)
    if params.grey:
        out = greyscale(out)
    return gaussian_blur(out, params.blur_sigma)


def apply(clip: Clip, params: AugmentParams) -> Clip:
    """Augment every frame of ``clip`` identically."""
    return replace(clip, frames=apply_frames(clip.frames, params))


def apply_per_frame(
    clip: Clip,
    rng,
    config: JitterConfig = JitterConfig(),
    target: tuple[int, int] = (32, 32),
) -> Clip:
    """Ablation path: redraw parameters for each frame independently."""
    hw = clip.frames.shape[1:3]
    frames = np.stack([apply_frames(f, draw_params(rng, hw, config, target)) for f in clip.frames])
    return replace(clip, frames=frames)


def augment_clip(clip: Clip, rng, config: JitterConfig, target, consistent: bool = True) -> Clip:
    if consistent:
        return apply(clip, draw_params(rng, clip.frames.shape[1:3], config, target))
    return apply_per_frame(clip, rng, config, target)
