"""Contrastive alignment losses at object, region, and pixel granularity.

All three share one symmetric InfoNCE shape: per batch element, an
image-to-text term and a text-to-image term, each a log-softmax of the
matched pair against the whole batch, averaged as (1/B) * sum of both
directions.  They differ in what embedding plays the "image" role:

* object level: the matched-pair pooled representation against captions,
* region level: the same numerator, but unmatched pairs contribute their
  own pooled representation (pooled under the unmatched caption's
  probability map) to the denominator, mining confusable regions,
* pixel level: single mined pixel similarities; the positive is the r-th
  most similar pixel of the matched pair (a semi-hard positive), each
  negative the single most similar pixel of an unmatched pair.

Image embeddings stay raw (unnormalized) at pixel granularity, so the
pixel loss divides similarities by a width-dependent scale before the
temperature; the pooled levels use cosine similarity instead.

Discrete choices (mask membership, mined indices) are treated as constants
of the current step: gradients flow through the selected values only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .alignment import (
    MASK_FRACTION_MATCHED,
    MASK_FRACTION_UNMATCHED,
    _check_embeddings,
    object_masks_batch,
)
from .autodiff import Tensor
from .errors import ZeroNormError

DEFAULT_TEMPERATURE = 0.07
PIXEL_FRACTION = 0.06
LOSS_COMPONENTS = ("object", "region", "pixel")


def similarity_scale(embed_dim: int) -> float:
    """Scale for raw pixel similarities: 5 * sqrt(embedding width)."""
    if embed_dim < 1:
        raise ValueError("embed_dim must be >= 1")
    return 5.0 * math.sqrt(embed_dim)


@dataclass(frozen=True)
class LossBreakdown:
    """Loss values for one batch; disabled components report 0.0."""

    total: float
    object_level: float
    region_level: float
    pixel_level: float


@dataclass(frozen=True)
class MinedPixelPairs:
    """Pixel indices picked by mining, plus the mined similarity matrix.

    mined[i, j] = S[i, j, hardest_index[i, j]] / scale, where the diagonal
    holds the semi-hard positive (rank `positive_rank` among the matched
    pair's pixels) and off-diagonal entries the single hardest negative.
    """

    positive_rank: int
    positive_index: np.ndarray
    hardest_index: np.ndarray
    mined: np.ndarray
    scale: float


def semi_hard_rank(fraction: float, num_pixels: int) -> int:
    """Positive rank r = round(fraction * L), clamped to [1, L].

    Uses Python's round (ties to even), so fraction 0.5/L picks rank 0 -> 1
    via the clamp rather than rank 1 directly.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must lie in [0, 1], got {fraction}")
    if num_pixels < 1:
        raise ValueError("num_pixels must be >= 1")
    return min(max(round(fraction * num_pixels), 1), num_pixels)


def mine_pixel_pairs(
    similarities: np.ndarray, fraction: float = PIXEL_FRACTION, scale: float = 1.0
) -> MinedPixelPairs:
    """Pick pixel indices for the pixel-level loss from raw similarities.

    Matched pairs take the rank-r pixel (ties keep the lowest index);
    unmatched pairs take the argmax pixel (first occurrence on ties).
    """
    s = np.asarray(similarities, dtype=np.float64)
    if s.ndim != 3 or s.shape[0] != s.shape[1]:
        raise ValueError(f"expected (B, B, L) similarities, got {s.shape}")
    if scale <= 0.0:
        raise ValueError("scale must be positive")
    batch, _, num_pixels = s.shape
    rank = semi_hard_rank(fraction, num_pixels)
    hardest = np.argmax(s, axis=-1)
    positive = np.empty(batch, dtype=np.int64)
    for i in range(batch):
        order = np.argsort(-s[i, i], kind="stable")
        positive[i] = order[rank - 1]
    diag = np.arange(batch)
    hardest[diag, diag] = positive
    mined = np.take_along_axis(s, hardest[:, :, None], axis=2)[:, :, 0] / scale
    return MinedPixelPairs(
        positive_rank=rank,
        positive_index=positive,
        hardest_index=hardest,
        mined=mined,
        scale=scale,
    )


def _require_nonzero(norms: np.ndarray, what: str) -> None:
    if np.any(norms == 0.0):
        raise ZeroNormError(f"zero-norm {what}: cosine similarity is undefined")


def _row_norms(t: Tensor) -> Tensor:
    return ad.sqrt(ad.tsum(t * t, axis=-1))


def _sym_nce(logits_img: Tensor, logits_txt: Tensor) -> Tensor:
    """Symmetric InfoNCE from two (B, B) logit matrices, positives on the
    diagonal: (1/B) * sum_i [(lse_i - pos_i) + (lse_t - pos_t)]."""
    batch = logits_img.shape[0]
    img_terms = ad.logsumexp(logits_img, axis=-1) - ad.take_diag2(logits_img)
    txt_terms = ad.logsumexp(logits_txt, axis=-1) - ad.take_diag2(logits_txt)
    return ad.tsum(img_terms + txt_terms) * (1.0 / batch)


def _object_logits(pooled_diag: Tensor, text: Tensor, temperature: float):
    dots = ad.einsum("ic,jc->ij", pooled_diag, text)
    norm_o = _row_norms(pooled_diag)
    norm_t = _row_norms(text)
    _require_nonzero(norm_o.data, "pooled object representation")
    _require_nonzero(norm_t.data, "text embedding")
    cos = dots / ad.einsum("i,j->ij", norm_o, norm_t)
    inv = 1.0 / temperature
    return cos * inv, ad.transpose(cos) * inv


def _region_logits(pooled: Tensor, text: Tensor, temperature: float):
    norm_r = _row_norms(pooled)
    norm_t = _row_norms(text)
    _require_nonzero(norm_r.data, "pooled region representation")
    _require_nonzero(norm_t.data, "text embedding")
    batch = text.shape[0]
    dots_img = ad.einsum("ijc,jc->ij", pooled, text)
    cos_img = dots_img / (norm_r * ad.reshape(norm_t, (1, batch)))
    pooled_t = ad.transpose(pooled, (1, 0, 2))
    dots_txt = ad.einsum("ijc,ic->ij", pooled_t, text)
    cos_txt = dots_txt / (ad.transpose(norm_r) * ad.reshape(norm_t, (batch, 1)))
    inv = 1.0 / temperature
    return cos_img * inv, cos_txt * inv


def _pixel_logits(similarities: Tensor, pairs: MinedPixelPairs, temperature: float):
    picked = ad.take_along(similarities, pairs.hardest_index[:, :, None], axis=2)
    mined = ad.reshape(picked, pairs.hardest_index.shape)
    logits = mined * (1.0 / (pairs.scale * temperature))
    return logits, ad.transpose(logits)


def _check_components(components) -> tuple[str, ...]:
    ordered = tuple(name for name in LOSS_COMPONENTS if name in components)
    unknown = set(components) - set(LOSS_COMPONENTS)
    if unknown:
        raise ValueError(f"unknown loss components: {sorted(unknown)}")
    if not ordered:
        raise ValueError("at least one loss component must be enabled")
    return ordered


def loss_components_tensors(
    pixel_embeddings,
    text_embeddings,
    components=LOSS_COMPONENTS,
    temperature: float = DEFAULT_TEMPERATURE,
    fraction_matched: float = MASK_FRACTION_MATCHED,
    fraction_unmatched: float = MASK_FRACTION_UNMATCHED,
    pixel_fraction: float = PIXEL_FRACTION,
    scale: float | None = None,
) -> dict[str, Tensor]:
    """Enabled loss components as graph nodes, keyed by component name.

    `pixel_embeddings` is (B, L, C) (decoder output, flattened), and
    `text_embeddings` is (B, C); both may be Tensors to receive gradients.
    """
    v = pixel_embeddings if isinstance(pixel_embeddings, Tensor) else Tensor(pixel_embeddings)
    t = text_embeddings if isinstance(text_embeddings, Tensor) else Tensor(text_embeddings)
    _check_embeddings(v.data, t.data)
    enabled = _check_components(components)
    if temperature <= 0.0:
        raise ValueError("temperature must be positive")
    if scale is None:
        scale = similarity_scale(v.shape[2])
    sims = ad.einsum("ipc,jc->ijp", v, t)
    out: dict[str, Tensor] = {}
    if "object" in enabled or "region" in enabled:
        probs = ad.softmax(sims, axis=-1)
        mask = object_masks_batch(probs.data, fraction_matched, fraction_unmatched)
        pooled = ad.einsum("ijp,ipc->ijc", probs * Tensor(mask), v)
        if "object" in enabled:
            out["object"] = _sym_nce(*_object_logits(ad.take_diag2(pooled), t, temperature))
        if "region" in enabled:
            out["region"] = _sym_nce(*_region_logits(pooled, t, temperature))
    if "pixel" in enabled:
        pairs = mine_pixel_pairs(sims.data, pixel_fraction, scale)
        out["pixel"] = _sym_nce(*_pixel_logits(sims, pairs, temperature))
    return out


def loss_total_tensors(
    pixel_embeddings, text_embeddings, **kwargs
) -> tuple[Tensor, dict[str, Tensor]]:
    """Sum of the enabled components, plus the per-component nodes."""
    parts = loss_components_tensors(pixel_embeddings, text_embeddings, **kwargs)
    total = None
    for name in LOSS_COMPONENTS:
        if name in parts:
            total = parts[name] if total is None else total + parts[name]
    return total, parts


def loss_total(pixel_embeddings, text_embeddings, **kwargs) -> LossBreakdown:
    """Loss values for one batch as plain floats (no gradient tape)."""
    parts = loss_components_tensors(
        np.asarray(pixel_embeddings), np.asarray(text_embeddings), **kwargs
    )
    values = {name: float(node.data) for name, node in parts.items()}
    return LossBreakdown(
        total=sum(values.values()),
        object_level=values.get("object", 0.0),
        region_level=values.get("region", 0.0),
        pixel_level=values.get("pixel", 0.0),
    )


def loss_object(pixel_embeddings, text_embeddings, **kwargs) -> float:
    kwargs["components"] = ("object",)
    return loss_total(pixel_embeddings, text_embeddings, **kwargs).object_level


def loss_region(pixel_embeddings, text_embeddings, **kwargs) -> float:
    kwargs["components"] = ("region",)
    return loss_total(pixel_embeddings, text_embeddings, **kwargs).region_level


def loss_pixel(pixel_embeddings, text_embeddings, **kwargs) -> float:
    kwargs["components"] = ("pixel",)
    return loss_total(pixel_embeddings, text_embeddings, **kwargs).pixel_level
