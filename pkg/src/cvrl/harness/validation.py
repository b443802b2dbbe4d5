"""Input checks shared by the estimators."""

from __future__ import annotations

import numpy as np

from ..exceptions import ConfigurationError
from ..video import Dataset, RawVideo


def check_videos(X) -> list[RawVideo]:
    """Accept a :class:`Dataset` or a sequence of :class:`RawVideo`."""
    if isinstance(X, Dataset):
        return list(X.videos)
    if isinstance(X, RawVideo):
        raise ConfigurationError("expected a collection of videos, got a single RawVideo")
    videos = list(X)
    if not videos:
        raise ConfigurationError("no videos given")
    for v in videos:
        if not isinstance(v, RawVideo):
            raise ConfigurationError(f"expected RawVideo items, got {type(v).__name__}")
    hw = videos[0].frames.shape[1:3]
    if any(v.frames.shape[1:3] != hw for v in videos):
        raise ConfigurationError("all videos must share the same frame size")
    return videos


def check_labels(videos, y=None) -> np.ndarray:
    labels = np.array([v.label for v in videos]) if y is None else np.asarray(y)
    if labels.shape != (len(videos),):
        raise ConfigurationError(f"got {labels.shape[0]} labels for {len(videos)} videos")
    return labels
