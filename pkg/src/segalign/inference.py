"""Zero-shot segmentation from pixel embeddings and a class vocabulary.

Instead of classifying every pixel independently, pixels are grouped into
semantic units: a small lattice of meta-points is sampled from the embedding
grid, every pixel joins the meta-point whose embedding it is most similar
to, and each unit is classified once by its mean embedding.  Full images
larger than the training resolution are segmented with a sliding window
whose per-window class scores are averaged where windows overlap.

Label convention: foreground classes are 0..K-1 in vocabulary order; when
background thresholding is enabled, pixels whose best softmax-normalized
class score falls below the threshold get the extra label K.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .alignment import cosine_rows
from .encoders import bilinear_resize, flatten_grid
from .errors import ConfigError, DataError

DEFAULT_PROMPT_TEMPLATES = ("a photo of a {}.",)
DEFAULT_UNIT_COUNT = 36
DEFAULT_BACKGROUND_THRESHOLD = 0.5


@dataclass(frozen=True)
class ClassVocabulary:
    """Per-class text embeddings built from prompted class names."""

    class_names: tuple[str, ...]
    prompt_templates: tuple[str, ...]
    text_matrix: np.ndarray
    has_background: bool = False
    background_threshold: float = DEFAULT_BACKGROUND_THRESHOLD

    def __post_init__(self):
        if len(self.class_names) < 1:
            raise ValueError("vocabulary needs at least one class")
        if self.text_matrix.shape[0] != len(self.class_names):
            raise ValueError("text_matrix rows must match class_names")
        if self.has_background and not 0.0 < self.background_threshold < 1.0:
            raise ValueError(
                f"background_threshold must lie in (0, 1), got {self.background_threshold}"
            )

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def background_index(self) -> int:
        return len(self.class_names)


def build_vocabulary(
    text_encoder,
    class_names,
    prompt_templates=DEFAULT_PROMPT_TEMPLATES,
    has_background: bool = False,
    background_threshold: float = DEFAULT_BACKGROUND_THRESHOLD,
) -> ClassVocabulary:
    """Embed every class name under every template; rows are template means."""
    names = tuple(class_names)
    templates = tuple(prompt_templates)
    if not names:
        raise ConfigError("vocabulary needs at least one class name")
    if not templates:
        raise ConfigError("vocabulary needs at least one prompt template")
    rows = [
        np.mean([text_encoder.encode(t.format(name)) for t in templates], axis=0)
        for name in names
    ]
    return ClassVocabulary(
        class_names=names,
        prompt_templates=templates,
        text_matrix=np.stack(rows),
        has_background=has_background,
        background_threshold=background_threshold,
    )


def _lattice_coords(size: int, per_axis: int) -> np.ndarray:
    centers = (np.arange(per_axis) + 0.5) * size / per_axis - 0.5
    return np.clip(np.rint(centers).astype(np.int64), 0, size - 1)


def sample_meta_points(grid_h: int, grid_w: int, count: int = DEFAULT_UNIT_COUNT) -> np.ndarray:
    """Deterministic uniform meta-point coordinates, shape (count, 2).

    count equal to the cell total selects every pixel (row-major order);
    otherwise count must be a perfect square m*m, giving an m x m lattice
    of rounded cell centers per axis.
    """
    if grid_h < 1 or grid_w < 1:
        raise ConfigError("grid sides must be >= 1")
    cells = grid_h * grid_w
    if count < 1:
        raise ConfigError("meta-point count must be >= 1")
    if count > cells:
        raise ConfigError(f"meta-point count {count} exceeds pixel count {cells}")
    if count == cells:
        rows, cols = np.divmod(np.arange(cells, dtype=np.int64), grid_w)
        return np.stack([rows, cols], axis=1)
    side = math.isqrt(count)
    if side * side != count:
        raise ConfigError(
            f"meta-point count must be a perfect square or the full cell count, got {count}"
        )
    rr = _lattice_coords(grid_h, side)
    cc = _lattice_coords(grid_w, side)
    grid = np.stack(np.meshgrid(rr, cc, indexing="ij"), axis=-1)
    return grid.reshape(count, 2)


@dataclass(frozen=True)
class SemanticUnitMap:
    """Pixel-to-unit assignment with per-unit mean embeddings."""

    meta_points: np.ndarray
    grid_shape: tuple[int, int]
    assignment: np.ndarray
    unit_embeddings: np.ndarray
    unit_member_counts: np.ndarray

    @property
    def num_units(self) -> int:
        return self.meta_points.shape[0]

    @property
    def occupied(self) -> np.ndarray:
        return self.unit_member_counts > 0


def build_semantic_units(
    pixels: np.ndarray,
    meta_points: np.ndarray,
    grid_shape: tuple[int, int] | None = None,
) -> SemanticUnitMap:
    """Assign every pixel to its most cosine-similar meta-point.

    `pixels` is an (h, w, C) grid or an (L, C) matrix with `grid_shape`
    given.  Ties go to the lowest meta-point index; unit embeddings are the
    exact arithmetic means of their member pixels.  Units that attract no
    pixel are kept with a zero embedding and member count 0.
    """
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.ndim == 3:
        grid_shape = pixels.shape[:2]
        flat = flatten_grid(pixels)
    elif pixels.ndim == 2:
        if grid_shape is None:
            raise ValueError("grid_shape is required for flat (L, C) pixel input")
        flat = pixels
    else:
        raise ValueError(f"pixels must be (h, w, C) or (L, C), got {pixels.shape}")
    gh, gw = grid_shape
    if gh * gw != flat.shape[0]:
        raise ValueError(f"grid {gh}x{gw} does not match {flat.shape[0]} pixels")
    meta_points = np.asarray(meta_points, dtype=np.int64)
    if np.any(meta_points < 0) or np.any(meta_points[:, 0] >= gh) or np.any(meta_points[:, 1] >= gw):
        raise ValueError("meta-point coordinates fall outside the grid")
    meta_flat = meta_points[:, 0] * gw + meta_points[:, 1]
    meta_embeddings = flat[meta_flat]
    sims = cosine_rows(flat, meta_embeddings)
    assignment = np.argmax(sims, axis=1)
    num_units = meta_points.shape[0]
    counts = np.bincount(assignment, minlength=num_units)
    sums = np.zeros((num_units, flat.shape[1]))
    np.add.at(sums, assignment, flat)
    embeddings = np.where(counts[:, None] > 0, sums / np.maximum(counts, 1)[:, None], 0.0)
    return SemanticUnitMap(
        meta_points=meta_points,
        grid_shape=(int(gh), int(gw)),
        assignment=assignment,
        unit_embeddings=embeddings,
        unit_member_counts=counts,
    )


def classify_units(units: SemanticUnitMap, vocab: ClassVocabulary) -> np.ndarray:
    """Cosine score of every occupied unit against every class, shape (U, K).

    Empty units get all-zero rows; no pixel is assigned to them, so the
    rows are never consulted downstream.
    """
    scores = np.zeros((units.num_units, vocab.num_classes))
    occ = units.occupied
    if np.any(occ):
        scores[occ] = cosine_rows(units.unit_embeddings[occ], np.asarray(vocab.text_matrix))
    return scores


def apply_background_threshold(logits: np.ndarray, threshold: float) -> np.ndarray:
    """Labels from class scores with a background fallback.

    Scores are softmax-normalized over the class axis; pixels whose best
    probability is below `threshold` get the background label K.
    """
    logits = np.asarray(logits, dtype=np.float64)
    num_classes = logits.shape[-1]
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    probs = e / e.sum(axis=-1, keepdims=True)
    labels = np.argmax(logits, axis=-1)
    return np.where(probs.max(axis=-1) < threshold, num_classes, labels)


def nearest_resize(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbor resize of the two leading axes."""
    h, w = arr.shape[:2]
    rows = np.clip(np.floor((np.arange(out_h) + 0.5) * h / out_h).astype(np.int64), 0, h - 1)
    cols = np.clip(np.floor((np.arange(out_w) + 0.5) * w / out_w).astype(np.int64), 0, w - 1)
    return arr[rows][:, cols]


@dataclass(frozen=True)
class InferenceConfig:
    """Sliding-window geometry and the unit budget."""

    short_side: int = 448
    window_size: int = 224
    window_stride: int = 112
    unit_count: int = DEFAULT_UNIT_COUNT

    def __post_init__(self):
        if self.window_size < 1 or self.short_side < 1:
            raise ConfigError("window_size and short_side must be >= 1")
        if self.short_side < self.window_size:
            raise ConfigError("short_side must be >= window_size")
        if not 1 <= self.window_stride <= self.window_size:
            raise ConfigError("window_stride must lie in [1, window_size]")
        if self.unit_count < 1:
            raise ConfigError("unit_count must be >= 1")


@dataclass(frozen=True)
class SegmentationResult:
    """Dense prediction: labels (H, W) and stitched class scores (H, W, K)."""

    labels: np.ndarray
    logits: np.ndarray

    def __post_init__(self):
        if self.labels.shape != self.logits.shape[:2]:
            raise ValueError("labels and logits disagree on spatial shape")


def _window_starts(size: int, window: int, stride: int) -> list[int]:
    starts = list(range(0, size - window + 1, stride))
    if starts[-1] != size - window:
        starts.append(size - window)
    return starts


def _resized_shape(h: int, w: int, short_side: int) -> tuple[int, int]:
    if h <= w:
        return short_side, max(int(round(w * short_side / h)), short_side)
    return max(int(round(h * short_side / w)), short_side), short_side


def segment_image(
    image: np.ndarray,
    image_encoder,
    decoder,
    vocab: ClassVocabulary,
    config: InferenceConfig = InferenceConfig(),
) -> SegmentationResult:
    """Segment one image against the vocabulary.

    The image is resized so its short side matches the config, scanned by
    overlapping windows (each window: encode, decode, group into semantic
    units, classify units, broadcast unit scores to pixels), the per-pixel
    scores are averaged across overlapping windows, resized back to the
    input resolution by nearest neighbor, and finally thresholded into
    labels when the vocabulary carries a background class.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise DataError(f"expected an HxWx3 image, got shape {image.shape}")
    if image.min() < 0.0 or image.max() > 1.0:
        raise DataError("image values must lie in [0, 1]")
    if config.window_size % image_encoder.patch_size:
        raise ConfigError(
            f"window_size {config.window_size} is not a multiple of the "
            f"encoder patch size {image_encoder.patch_size}"
        )
    orig_h, orig_w = image.shape[:2]
    res_h, res_w = _resized_shape(orig_h, orig_w, config.short_side)
    resized = bilinear_resize(image, res_h, res_w)
    win = config.window_size
    sums: np.ndarray | None = None
    counts = np.zeros((res_h, res_w))
    for top in _window_starts(res_h, win, config.window_stride):
        for left in _window_starts(res_w, win, config.window_stride):
            crop = resized[top : top + win, left : left + win]
            grid = decoder.decode_np(image_encoder.encode(crop))
            gh, gw = grid.shape[:2]
            if win % gh or win % gw:
                raise ConfigError(
                    f"window {win} is not an integer multiple of the {gh}x{gw} embedding grid"
                )
            meta = sample_meta_points(gh, gw, config.unit_count)
            units = build_semantic_units(grid, meta)
            unit_scores = classify_units(units, vocab)
            pixel_scores = unit_scores[units.assignment].reshape(gh, gw, -1)
            if sums is None:
                sums = np.zeros((res_h, res_w, pixel_scores.shape[2]))
            block = np.repeat(np.repeat(pixel_scores, win // gh, axis=0), win // gw, axis=1)
            sums[top : top + win, left : left + win] += block
            counts[top : top + win, left : left + win] += 1.0
    assert sums is not None and counts.min() >= 1.0
    stitched = sums / counts[:, :, None]
    logits = nearest_resize(stitched, orig_h, orig_w)
    if vocab.has_background:
        labels = apply_background_threshold(logits, vocab.background_threshold)
    else:
        labels = np.argmax(logits, axis=-1)
    return SegmentationResult(labels=labels.astype(np.int64), logits=logits)
