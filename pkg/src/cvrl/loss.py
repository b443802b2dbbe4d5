"""InfoNCE contrastive loss over ``2N`` embeddings and its exact gradient.

Rows ``[0, N)`` hold the first views and rows ``[N, 2N)`` the second views;
the positive of row ``r`` is row ``(r + N) mod 2N``. Everything is reduced in
float64 regardless of the input dtype.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .exceptions import ConfigurationError, DomainError

MODES = ("symmetric", "one_sided")
_EPS = 1e-12


@dataclass(frozen=True)
class EmbeddingBatch:
    vectors: np.ndarray
    tau: float = 0.1

    def __post_init__(self):
        v = np.asarray(self.vectors)
        if v.ndim != 2 or v.shape[0] < 2 or v.shape[0] % 2:
            raise ConfigurationError(f"expected a (2N, D) matrix with N >= 1, got shape {v.shape}")
        if v.shape[1] < 2:
            raise ConfigurationError(f"embedding dimension must be >= 2, got {v.shape[1]}")
        if not self.tau > 0:
            raise ConfigurationError(f"temperature must be > 0, got {self.tau}")
        object.__setattr__(self, "vectors", v)

    @property
    def n_pairs(self) -> int:
        return self.vectors.shape[0] // 2

    @classmethod
    def from_views(cls, first, second, tau: float = 0.1) -> "EmbeddingBatch":
        return cls(np.concatenate([first, second], axis=0), tau)


def l2_normalize(v, axis: int = -1) -> np.ndarray:
    """Scale ``v`` to unit Euclidean norm along ``axis``."""
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v, axis=axis, keepdims=True)
    if np.any(norm <= _EPS):
        raise DomainError("cannot normalize a vector with norm <= 1e-12")
    return v / norm


def positive_index(two_n: int) -> np.ndarray:
    n = two_n // 2
    return (np.arange(two_n) + n) % two_n


def similarity_matrix(batch: EmbeddingBatch | np.ndarray) -> np.ndarray:
    """Cosine similarities between all rows."""
    v = batch.vectors if isinstance(batch, EmbeddingBatch) else np.asarray(batch)
    u = l2_normalize(v)
    sim = u @ u.T
    return np.clip(sim, -1.0, 1.0)


def _anchors(two_n: int, mode: str) -> np.ndarray:
    if mode == "symmetric":
        return np.arange(two_n)
    if mode == "one_sided":
        return np.arange(two_n // 2)
    raise ConfigurationError(f"mode must be one of {MODES}, got {mode!r}")


def _masked_logits(u: np.ndarray, tau: float) -> np.ndarray:
    logits = (u @ u.T) / tau
    np.fill_diagonal(logits, -np.inf)
    return logits


def per_anchor_losses(batch: EmbeddingBatch, mode: str = "symmetric") -> np.ndarray:
    """``-log softmax`` of each anchor's positive among all non-self rows."""
    anchors = _anchors(batch.vectors.shape[0], mode)
    u = l2_normalize(batch.vectors)
    logits = _masked_logits(u, batch.tau)[anchors]
    pos = logits[np.arange(anchors.size), positive_index(u.shape[0])[anchors]]
    return logsumexp(logits, axis=1) - pos


def info_nce_loss(batch: EmbeddingBatch, mode: str = "symmetric") -> float:
    """Mean InfoNCE loss; ``one_sided`` averages over the first views only."""
    return float(per_anchor_losses(batch, mode).mean())


def info_nce_grad(batch: EmbeddingBatch, mode: str = "symmetric") -> np.ndarray:
    """Gradient of :func:`info_nce_loss` w.r.t. the unnormalized rows."""
    x = np.asarray(batch.vectors, dtype=np.float64)
    two_n = x.shape[0]
    anchors = _anchors(two_n, mode)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms <= _EPS):
        raise DomainError("cannot normalize a vector with norm <= 1e-12")
    u = x / norms

    logits = _masked_logits(u, batch.tau)
    # dL/dlogits: softmax minus the one-hot positive, on anchor rows only
    g = np.zeros((two_n, two_n))
    a_logits = logits[anchors]
    g[anchors] = np.exp(a_logits - logsumexp(a_logits, axis=1, keepdims=True))
    g[anchors, positive_index(two_n)[anchors]] -= 1.0
    g /= anchors.size

    grad_u = (g + g.T) @ u / batch.tau
    # through u = x / |x|
    radial = np.sum(grad_u * u, axis=1, keepdims=True)
    return (grad_u - radial * u) / norms


def pair_similarity_stats(batch: EmbeddingBatch) -> tuple[float, float]:
    """Mean positive-pair and mean negative-pair cosine similarity."""
    sim = similarity_matrix(batch)
    two_n = sim.shape[0]
    pos_mask = np.zeros_like(sim, dtype=bool)
    pos_mask[np.arange(two_n), positive_index(two_n)] = True
    neg_mask = ~pos_mask & ~np.eye(two_n, dtype=bool)
    pos = float(sim[pos_mask].mean())
    neg = float(sim[neg_mask].mean()) if neg_mask.any() else float("nan")
    return pos, neg
