"""Cross-modal alignment core: similarity tensors, masks, pooled objects.

Given per-pixel image embeddings V (B, L, C) and caption embeddings
T (B, C), each image/caption pair gets a raw similarity row S[i, j, :]
(one dot product per pixel), a probability map via softmax over pixels,
a binary top-k mask, and a mask-weighted pooled object representation.

Matched pairs (i == j) keep a large fraction of pixels so the pooled
vector covers the described object; unmatched pairs keep a small
fraction, concentrating on the most confusable pixels.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ZeroNormError

MASK_FRACTION_MATCHED = 0.4
MASK_FRACTION_UNMATCHED = 0.05


def cosine(x: np.ndarray, y: np.ndarray) -> float:
    """Cosine similarity of two vectors; zero-norm inputs are an error."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    nx = np.linalg.norm(x)
    ny = np.linalg.norm(y)
    if nx == 0.0 or ny == 0.0:
        raise ZeroNormError("cosine similarity is undefined for a zero-norm vector")
    return float(x @ y / (nx * ny))


def cosine_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """All-pairs cosine matrix (N, M) between rows of a (N, C) and b (M, C)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    if np.any(na == 0.0) or np.any(nb == 0.0):
        raise ZeroNormError("cosine similarity is undefined for a zero-norm row")
    return (a @ b.T) / (na[:, None] * nb[None, :])


def _check_embeddings(pixel_embeddings: np.ndarray, text_embeddings: np.ndarray) -> None:
    if pixel_embeddings.ndim != 3:
        raise ValueError(f"pixel embeddings must be (B, L, C), got {pixel_embeddings.shape}")
    if text_embeddings.ndim != 2:
        raise ValueError(f"text embeddings must be (B, C), got {text_embeddings.shape}")
    if pixel_embeddings.shape[0] != text_embeddings.shape[0]:
        raise ValueError(
            f"batch mismatch: {pixel_embeddings.shape[0]} images vs "
            f"{text_embeddings.shape[0]} captions"
        )
    if pixel_embeddings.shape[2] != text_embeddings.shape[1]:
        raise ValueError(
            f"embedding width mismatch: {pixel_embeddings.shape[2]} vs "
            f"{text_embeddings.shape[1]}"
        )


def similarity(pixel_embeddings: np.ndarray, text_embeddings: np.ndarray) -> np.ndarray:
    """Raw dot-product similarities S (B, B, L): S[i, j, p] = V[i, p] . T[j]."""
    pixel_embeddings = np.asarray(pixel_embeddings, dtype=np.float64)
    text_embeddings = np.asarray(text_embeddings, dtype=np.float64)
    _check_embeddings(pixel_embeddings, text_embeddings)
    return np.einsum("ipc,jc->ijp", pixel_embeddings, text_embeddings)


def prob_map(similarities: np.ndarray) -> np.ndarray:
    """Softmax over the pixel axis (the last axis), numerically shifted."""
    similarities = np.asarray(similarities, dtype=np.float64)
    shifted = similarities - similarities.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def topk_count(fraction: float, num_pixels: int) -> int:
    """Mask size n = ceil(fraction * L), at least 1, at most L.

    The tiny slack keeps float artifacts such as 0.4 * 5 = 2.0000000000000004
    from bumping the ceiling up a step.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    if num_pixels < 1:
        raise ValueError("num_pixels must be >= 1")
    n = math.ceil(fraction * num_pixels - 1e-9)
    return min(max(n, 1), num_pixels)


def topk_mask(prob_row: np.ndarray, area_fraction: float) -> np.ndarray:
    """Binary mask keeping the ceil(area_fraction * L) largest entries.

    Ties at the cut break to the lower pixel index.
    """
    prob_row = np.asarray(prob_row, dtype=np.float64)
    if prob_row.ndim != 1:
        raise ValueError(f"expected a 1-D probability row, got shape {prob_row.shape}")
    n = topk_count(area_fraction, prob_row.size)
    order = np.argsort(-prob_row, kind="stable")
    mask = np.zeros_like(prob_row)
    mask[order[:n]] = 1.0
    return mask


def object_masks_batch(
    prob: np.ndarray,
    fraction_matched: float = MASK_FRACTION_MATCHED,
    fraction_unmatched: float = MASK_FRACTION_UNMATCHED,
) -> np.ndarray:
    """Top-k masks M (B, B, L) from probability maps.

    Pairs on the diagonal use `fraction_matched`, all other pairs use
    `fraction_unmatched`.
    """
    prob = np.asarray(prob, dtype=np.float64)
    if prob.ndim != 3 or prob.shape[0] != prob.shape[1]:
        raise ValueError(f"expected (B, B, L) probability maps, got {prob.shape}")
    batch, _, num_pixels = prob.shape
    n_matched = topk_count(fraction_matched, num_pixels)
    n_unmatched = topk_count(fraction_unmatched, num_pixels)
    order = np.argsort(-prob, axis=-1, kind="stable")
    mask = np.zeros_like(prob)
    np.put_along_axis(mask, order[..., :n_unmatched], 1.0, axis=-1)
    diag = np.arange(batch)
    diag_mask = np.zeros((batch, num_pixels))
    np.put_along_axis(diag_mask, order[diag, diag, :n_matched], 1.0, axis=-1)
    mask[diag, diag] = diag_mask
    return mask


def object_representation(
    pixel_embeddings_i: np.ndarray, prob_row: np.ndarray, mask_row: np.ndarray
) -> np.ndarray:
    """Pooled object vector: V_i^T (prob * mask), shape (C,)."""
    pixel_embeddings_i = np.asarray(pixel_embeddings_i, dtype=np.float64)
    weights = np.asarray(prob_row, dtype=np.float64) * np.asarray(mask_row, dtype=np.float64)
    if pixel_embeddings_i.shape[0] != weights.shape[0]:
        raise ValueError("pixel count mismatch between embeddings and weights")
    return pixel_embeddings_i.T @ weights


def object_representations_batch(
    pixel_embeddings: np.ndarray, prob: np.ndarray, mask: np.ndarray
) -> np.ndarray:
    """All pooled object vectors R (B, B, C): R[i, j] = V_i^T (Prob[i,j] * M[i,j])."""
    pixel_embeddings = np.asarray(pixel_embeddings, dtype=np.float64)
    weighted = np.asarray(prob, dtype=np.float64) * np.asarray(mask, dtype=np.float64)
    return np.einsum("ijp,ipc->ijc", weighted, pixel_embeddings)
