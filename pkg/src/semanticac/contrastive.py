"""Cosine similarity matrix, symmetric cross-entropy loss and nearest-label classification."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

MIN_NORM = 1e-12


class DegenerateEmbeddingError(ValueError):
    def __init__(self, msg: str, index=None):
        super().__init__(msg)
        self.index = index


def cosine_similarity(a, t) -> float:
    a = np.asarray(a, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if a.shape != t.shape or a.ndim != 1:
        raise ad.ShapeError("cosine_similarity", a.shape, t.shape)
    na, nt = np.linalg.norm(a), np.linalg.norm(t)
    if na < MIN_NORM or nt < MIN_NORM:
        raise DegenerateEmbeddingError(f"degenerate embedding (norms {na:.3g}, {nt:.3g})")
    return float(a @ t / (na * nt))


def _check_rows(x: np.ndarray, role: str):
    norms = np.sqrt((x.astype(np.float64) ** 2).sum(axis=-1))
    bad = np.flatnonzero(norms < MIN_NORM)
    if bad.size:
        raise DegenerateEmbeddingError(f"degenerate {role} embedding at index {bad[0]}", int(bad[0]))


def similarity_matrix(audio, text) -> Tensor:
    """s_ij = cos(A_i, T_j) for [n, C] audio and text embeddings (differentiable)."""
    audio = audio if isinstance(audio, Tensor) else Tensor(np.asarray(audio, dtype=np.float64))
    text = text if isinstance(text, Tensor) else Tensor(np.asarray(text, dtype=np.float64))
    if audio.ndim != 2 or audio.shape != text.shape:
        raise ad.ShapeError("similarity_matrix", audio.shape, text.shape)
    _check_rows(audio.data, "audio")
    _check_rows(text.data, "text")
    a = ad.l2_normalize(audio, axis=-1)
    t = ad.l2_normalize(text, axis=-1)
    return ad.matmul(a, ad.transpose(t, (1, 0)))


def contrastive_loss(S, scale=1.0) -> Tensor:
    """0.5 * [CE(scale*S, diag) + CE(scale*S^T, diag)], rows averaged.

    ``scale`` is a positive float or a scalar Tensor (learnable logit scale).
    """
    S = S if isinstance(S, Tensor) else Tensor(np.asarray(S, dtype=np.float64))
    n = S.shape[0]
    if S.ndim != 2 or S.shape[1] != n:
        raise ad.ShapeError("contrastive_loss", S.shape)
    logits = ad.mul(S, scale)
    eye = Tensor(np.eye(n, dtype=S.dtype))
    rows = ad.sum_(ad.mul(ad.log_softmax(logits, axis=1), eye))
    cols = ad.sum_(ad.mul(ad.log_softmax(logits, axis=0), eye))
    return ad.mul(ad.add(rows, cols), -0.5 / n)


def classify(a, class_embeddings: Sequence[tuple[int, np.ndarray]]) -> tuple[int, list[float]]:
    """Label with the highest cosine similarity; ties go to the lowest class id."""
    if not class_embeddings:
        raise ValueError("need at least one class embedding")
    scores = [cosine_similarity(a, emb) for _, emb in class_embeddings]
    best = None
    for (cid, _), s in zip(class_embeddings, scores):
        if best is None or s > best[1] or (s == best[1] and cid < best[0]):
            best = (cid, s)
    return best[0], scores


def classify_batch(audio: np.ndarray, class_matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised ``classify`` for [n, C] audio against [K, C] classes in id order."""
    _check_rows(audio, "audio")
    _check_rows(class_matrix, "class")
    a = audio / np.linalg.norm(audio, axis=1, keepdims=True)
    t = class_matrix / np.linalg.norm(class_matrix, axis=1, keepdims=True)
    scores = a @ t.T
    return scores.argmax(axis=1), scores
