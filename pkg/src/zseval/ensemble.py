"""Description-ensemble scoring for the linguistic recognition path.

A pooled vision embedding is compared against each category's sentence
embeddings; per sentence slot, similarities are softmax-normalized over
categories (scaled by logit_scale) and then averaged across slots into one
consolidated per-category score.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

SOFTMAX_AXES = ("per_slot", "mean_then_softmax")


class EnsembleError(Exception):
    pass


class ZeroVector(EnsembleError):
    """Pooled embedding has (near-)zero norm and cannot be renormalized."""


class DimensionMismatch(EnsembleError):
    pass


class RaggedK(EnsembleError):
    """Sentence counts differ across categories in the slot-wise softmax mode."""


@dataclass(frozen=True)
class EnsembleConfig:
    logit_scale: float = 100.0
    softmax_axis: str = "per_slot"
    pooling: str = "mean_renorm"  # only mode implemented

    def __post_init__(self):
        if self.logit_scale <= 0:
            raise ValueError("logit_scale must be positive")
        if self.softmax_axis not in SOFTMAX_AXES:
            raise ValueError(f"softmax_axis must be one of {SOFTMAX_AXES}")
        if self.pooling != "mean_renorm":
            raise ValueError("only mean_renorm pooling is implemented")


@dataclass(frozen=True)
class Prediction:
    """Up to 5 category indices, best first, with optional matching scores."""

    ranked: tuple[int, ...]
    scores: tuple[float, ...] | None = None

    def __post_init__(self):
        if len(set(self.ranked)) != len(self.ranked):
            raise ValueError("ranked indices must be unique")
        if self.scores is not None:
            if len(self.scores) != len(self.ranked):
                raise ValueError("scores must match ranked length")
            if any(a < b for a, b in zip(self.scores, self.scores[1:])):
                raise ValueError("scores must be non-increasing")


def pool_vision_embedding(frames: Sequence[np.ndarray]) -> np.ndarray:
    """Mean of frame/view embeddings, renormalized to unit L2 norm."""
    if len(frames) == 0:
        raise ValueError("cannot pool an empty embedding list")
    dims = {np.asarray(f).shape for f in frames}
    if len(dims) != 1 or len(next(iter(dims))) != 1:
        raise DimensionMismatch(f"embeddings must share one 1-D shape, got {dims}")
    mean = np.asarray(frames, dtype=np.float64).mean(axis=0)
    norm = float(np.linalg.norm(mean))
    if norm < 1e-9:
        raise ZeroVector("mean embedding has near-zero norm")
    return mean / norm


def score_matrix(vision: np.ndarray, text: np.ndarray) -> np.ndarray:
    """Cosine similarities sims[c][k] = dot(vision, text[c][k]).

    `text` has shape (C, K, D); `vision` has shape (D,). Inputs are assumed
    unit-norm, so the dot product is the cosine similarity.
    """
    vision = np.asarray(vision, dtype=np.float64)
    text = np.asarray(text, dtype=np.float64)
    if vision.ndim != 1 or text.ndim != 3 or text.shape[2] != vision.shape[0]:
        raise DimensionMismatch(
            f"expected vision (D,) and text (C, K, D); got {vision.shape} and {text.shape}"
        )
    return text @ vision


def _softmax(x: np.ndarray, axis: int) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def ensemble_scores(
    sims: np.ndarray | Sequence[Sequence[float]], cfg: EnsembleConfig | None = None
) -> np.ndarray:
    """Consolidate a C x K similarity matrix into C scores summing to 1.

    per_slot (default): softmax over categories within each sentence slot,
    then mean over slots. mean_then_softmax: mean similarity per category,
    then one softmax. Ragged sentence counts are only legal in the latter.
    """
    cfg = cfg or EnsembleConfig()
    rows = [np.asarray(r, dtype=np.float64).ravel() for r in sims]
    if not rows:
        raise ValueError("similarity matrix has no categories")
    lengths = {len(r) for r in rows}
    if 0 in lengths:
        raise ValueError("every category needs at least one similarity")
    if len(lengths) > 1:
        if cfg.softmax_axis == "per_slot":
            raise RaggedK(
                f"sentence counts differ across categories ({sorted(lengths)}); "
                "use softmax_axis='mean_then_softmax'"
            )
        means = np.array([r.mean() for r in rows])
        return _softmax(cfg.logit_scale * means, axis=0)

    matrix = np.vstack(rows)
    if cfg.softmax_axis == "mean_then_softmax":
        return _softmax(cfg.logit_scale * matrix.mean(axis=1), axis=0)
    per_slot = _softmax(cfg.logit_scale * matrix, axis=0)
    return per_slot.mean(axis=1)


def top_k(scores: Sequence[float] | np.ndarray, k: int = 5) -> Prediction:
    """Indices of the k largest scores, ties broken by lower category index."""
    arr = np.asarray(scores, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError("scores must be 1-D")
    if not 1 <= k <= arr.shape[0]:
        raise ValueError(f"k={k} out of range for {arr.shape[0]} categories")
    order = np.argsort(-arr, kind="stable")[:k]
    return Prediction(
        tuple(int(i) for i in order), tuple(float(arr[i]) for i in order)
    )
