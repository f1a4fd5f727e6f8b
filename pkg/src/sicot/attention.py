"""Bilinear word attention: turns a bag of title word embeddings into one semantic vector.

Pipeline for a title with word embeddings ``w_1..w_T``::

    g     = mean_j w_j                      (global context)
    F_j   = g * w_j                         (second-order map, Hadamard form)
    s_j   = tanh(mean_k F_jk)               (per-word score)
    alpha = softmax(s)                      (word attention vector)
    x_s   = sum_j alpha_j w_j               (semantic embedding)

Every function accepts a single title (``T x d``) or a padded batch
(``N x T x d`` plus a boolean ``N x T`` mask).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .autodiff import (
    Tensor,
    gather_rows,
    matmul,
    mean_over_axis,
    mul,
    reshape,
    softmax,
    tanh_act,
    tensor_sum,
)
from .errors import DimensionError, EmptyTitleError

MODES = ("bilinear_attention", "mean_pooling")


@dataclass
class SemanticStreamConfig:
    dim: int
    mode: str = "bilinear_attention"
    # optional learned d -> 1 scoring vector replacing the plain mean before tanh
    score_weights: Optional[Tensor] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.dim < 1:
            raise ValueError("dim must be positive")


@dataclass
class AttentionOutput:
    alpha: Tensor
    embedding: Tensor
    scores: Optional[Tensor]


def _mask3(mask: np.ndarray) -> Tensor:
    return Tensor(np.asarray(mask, dtype=np.float64)[..., None])


def global_context(word_embeddings: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    """Average of the (unmasked) word embeddings."""
    W = word_embeddings
    if W.data.ndim == 2 and mask is None:
        if W.shape[0] == 0:
            raise EmptyTitleError("title has no words; drop it before the semantic stream")
        return mean_over_axis(W, 0)
    if W.data.ndim != 3 or mask is None:
        raise DimensionError(f"global_context expects (T, d) or (N, T, d) with mask, got {W.shape}")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != W.shape[:2]:
        raise DimensionError(f"mask shape {mask.shape} does not match embeddings {W.shape}")
    lengths = mask.sum(axis=1)
    if W.shape[1] == 0 or np.any(lengths == 0):
        raise EmptyTitleError("batch contains a title with no words")
    summed = tensor_sum(mul(W, _mask3(mask)), axis=1)
    return mul(summed, Tensor(1.0 / lengths[:, None]))


def bilinear_feature_map(g: Tensor, word_embeddings: Tensor) -> Tensor:
    """``F[j] = g * w_j`` for every word j."""
    W = word_embeddings
    if g.shape[-1] != W.shape[-1] or W.data.ndim != g.data.ndim + 1:
        raise DimensionError(f"bilinear_feature_map: context {g.shape} vs embeddings {W.shape}")
    if g.data.ndim == 2:
        if g.shape[0] != W.shape[0]:
            raise DimensionError(f"bilinear_feature_map: context {g.shape} vs embeddings {W.shape}")
        g = reshape(g, (g.shape[0], 1, g.shape[1]))
    return mul(g, W)


def attention_scores(F: Tensor, score_weights: Optional[Tensor] = None) -> Tensor:
    if score_weights is not None:
        return tanh_act(matmul_last(F, score_weights))
    return tanh_act(mean_over_axis(F, -1))


def matmul_last(F: Tensor, v: Tensor) -> Tensor:
    lead = F.shape[:-1]
    flat = reshape(F, (int(np.prod(lead)), F.shape[-1]))
    return reshape(matmul(flat, v), lead)


def attention_weights(scores: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    return softmax(scores, axis=-1, mask=mask)


def semantic_embedding(alpha: Tensor, word_embeddings: Tensor) -> Tensor:
    """Convex combination ``sum_j alpha_j w_j``."""
    W = word_embeddings
    if alpha.shape != W.shape[:-1]:
        raise DimensionError(f"semantic_embedding: weights {alpha.shape} vs embeddings {W.shape}")
    return tensor_sum(mul(reshape(alpha, alpha.shape + (1,)), W), axis=-2)


def attend(W: Tensor, config: SemanticStreamConfig, mask: Optional[np.ndarray] = None) -> AttentionOutput:
    """Run the stream on already looked-up word embeddings."""
    if W.shape[-1] != config.dim:
        raise DimensionError(f"embedding width {W.shape[-1]} != stream dim {config.dim}")
    if mask is not None:
        W = mul(W, _mask3(mask))
    g = global_context(W, mask)
    if config.mode == "mean_pooling":
        T = W.shape[-2]
        if mask is None:
            alpha = np.full(T, 1.0 / T)
        else:
            alpha = mask / mask.sum(axis=1, keepdims=True)
        return AttentionOutput(Tensor(alpha), g, None)
    F = bilinear_feature_map(g, W)
    s = attention_scores(F, config.score_weights)
    alpha = attention_weights(s, mask)
    return AttentionOutput(alpha, semantic_embedding(alpha, W), s)


def semantic_forward(tokens: Sequence[int], table, config: SemanticStreamConfig) -> AttentionOutput:
    """Semantic embedding of one encoded title (list of vocabulary indices)."""
    if len(tokens) == 0:
        raise EmptyTitleError("title has no in-vocabulary words")
    return attend(gather_rows(table.weight, list(tokens)), config)


def pad_tokens(token_lists: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad with index 0; returns ``(index, mask)`` arrays of shape (N, T_max)."""
    if any(len(t) == 0 for t in token_lists):
        raise EmptyTitleError("batch contains a title with no words")
    T = max(len(t) for t in token_lists)
    index = np.zeros((len(token_lists), T), dtype=np.int64)
    mask = np.zeros((len(token_lists), T), dtype=bool)
    for i, toks in enumerate(token_lists):
        index[i, : len(toks)] = toks
        mask[i, : len(toks)] = True
    return index, mask


def semantic_forward_batch(token_lists: Sequence[Sequence[int]], table, config: SemanticStreamConfig) -> AttentionOutput:
    index, mask = pad_tokens(token_lists)
    return attend(gather_rows(table.weight, index), config, mask)
