"""Synthetic shapes data: generation, caption handling, dataset directory I/O.

Each sample is a textured gray canvas carrying one to a few non-overlapping
filled shapes, every shape in its own color, with a caption enumerating the
(color, shape) concepts present and a ground-truth mask (0 = background,
concept classes numbered from 1 in vocabulary order).  Everything is
deterministic given the seed.

The on-disk layout doubles as the ingestion seam for external data:
`images/` (RGB PNG), `masks/` (8-bit indexed PNG), `classes.txt` (one name
per line, background first), `captions.txt` and `nouns.txt` (tab-separated
id/value lines).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError
from .inference import DEFAULT_PROMPT_TEMPLATES

SHAPES = ("circle", "square", "triangle")
DEFAULT_COLORS = ("red", "green", "blue")
COLOR_VALUES = {
    "red": (0.80, 0.16, 0.16),
    "green": (0.18, 0.65, 0.22),
    "blue": (0.16, 0.30, 0.78),
    "yellow": (0.85, 0.78, 0.16),
    "purple": (0.55, 0.20, 0.70),
    "orange": (0.90, 0.55, 0.12),
}
BACKGROUND_NAME = "background"


@dataclass(frozen=True)
class SyntheticSample:
    """One generated image with caption, dense labels, and its concepts."""

    image: np.ndarray
    caption: str
    gt_mask: np.ndarray
    class_set: tuple[tuple[str, str], ...]  # (shape, color) pairs present


def concept_names(colors=DEFAULT_COLORS, shapes=SHAPES) -> tuple[str, ...]:
    """Concept vocabulary in class-index order (color-major)."""
    return tuple(f"{color} {shape}" for color in colors for shape in shapes)


def class_names(colors=DEFAULT_COLORS, shapes=SHAPES) -> tuple[str, ...]:
    """Full label list: background at index 0, then the concepts."""
    return (BACKGROUND_NAME, *concept_names(colors, shapes))


def _raster_circle(size: int, cy: float, cx: float, radius: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= radius**2


def _raster_square(size: int, cy: float, cx: float, radius: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    return (np.abs(yy - cy) <= radius) & (np.abs(xx - cx) <= radius)


def _raster_triangle(size: int, cy: float, cx: float, radius: float) -> np.ndarray:
    # isoceles: apex (cy - r, cx), base corners (cy + r, cx -/+ r)
    yy, xx = np.mgrid[0:size, 0:size]
    height = yy - (cy - radius)
    return (height >= 0) & (yy <= cy + radius) & (np.abs(xx - cx) <= height / 2.0)


_RASTERIZERS = {"circle": _raster_circle, "square": _raster_square, "triangle": _raster_triangle}


def _caption_for(concepts) -> str:
    parts = [f"a {color} {shape}" for shape, color in concepts]
    return "a photo of " + " and ".join(parts)


def gen_synthetic(
    seed: int,
    n_samples: int,
    image_size: int = 64,
    colors=DEFAULT_COLORS,
    shapes=SHAPES,
    min_shapes: int = 1,
    max_shapes: int = 3,
    area_band: tuple[float, float] = (0.05, 0.6),
    background_level: float = 0.5,
    texture_amplitude: float = 0.04,
    radius_range: tuple[float, float] = (0.17, 0.26),
    max_attempts: int = 200,
) -> list[SyntheticSample]:
    """Generate `n_samples` shape scenes, deterministically from `seed`.

    Shapes in one image carry pairwise distinct colors and do not overlap;
    the total foreground area fraction of every mask lands inside
    `area_band` (enforced by regeneration).
    """
    colors = tuple(colors)
    shapes = tuple(shapes)
    if n_samples < 0:
        raise DataError("n_samples must be >= 0")
    if image_size < 16:
        raise DataError("image_size must be >= 16")
    unknown = [c for c in colors if c not in COLOR_VALUES]
    if unknown:
        raise DataError(f"unknown colors {unknown}; known: {sorted(COLOR_VALUES)}")
    bad_shapes = [s for s in shapes if s not in _RASTERIZERS]
    if bad_shapes:
        raise DataError(f"unknown shapes {bad_shapes}; known: {sorted(_RASTERIZERS)}")
    if not colors or not shapes:
        raise DataError("need at least one color and one shape")
    if not 1 <= min_shapes <= max_shapes:
        raise DataError("need 1 <= min_shapes <= max_shapes")
    if max_shapes > len(colors):
        raise DataError(
            f"vocabulary too small: {max_shapes} shapes per image need "
            f"{max_shapes} distinct colors, only {len(colors)} available"
        )
    if not 0.0 < radius_range[0] <= radius_range[1] < 0.5:
        raise DataError("radius_range must satisfy 0 < lo <= hi < 0.5")
    rng = np.random.default_rng(seed)
    index_of = {name: i + 1 for i, name in enumerate(concept_names(colors, shapes))}
    lo_px = area_band[0] * image_size * image_size
    hi_px = area_band[1] * image_size * image_size
    samples = []
    for _ in range(n_samples):
        for _attempt in range(max_attempts):
            sample = _try_scene(
                rng,
                image_size,
                colors,
                shapes,
                min_shapes,
                max_shapes,
                radius_range,
                background_level,
                texture_amplitude,
                index_of,
            )
            if sample is None:
                continue
            area = int(np.count_nonzero(sample.gt_mask))
            if lo_px <= area <= hi_px:
                samples.append(sample)
                break
        else:
            raise DataError(
                f"could not generate a valid scene in {max_attempts} attempts; "
                "the area band or placement constraints are too tight"
            )
    return samples


def _try_scene(
    rng,
    image_size,
    colors,
    shapes,
    min_shapes,
    max_shapes,
    radius_range,
    background_level,
    texture_amplitude,
    index_of,
):
    n_obj = int(rng.integers(min_shapes, max_shapes + 1))
    color_pick = rng.choice(len(colors), size=n_obj, replace=False)
    shape_pick = rng.integers(0, len(shapes), size=n_obj)
    occupied = np.zeros((image_size, image_size), dtype=bool)
    gt_mask = np.zeros((image_size, image_size), dtype=np.int64)
    noise = rng.standard_normal((image_size, image_size, 1))
    image = np.clip(background_level + texture_amplitude * noise, 0.0, 1.0)
    image = np.repeat(image, 3, axis=2)
    concepts = []
    for ci, si in zip(color_pick, shape_pick):
        color = colors[ci]
        shape = shapes[si]
        placed = False
        for _try in range(50):
            radius = rng.uniform(*radius_range) * image_size
            cy = rng.uniform(radius + 1.0, image_size - radius - 1.0)
            cx = rng.uniform(radius + 1.0, image_size - radius - 1.0)
            mask = _RASTERIZERS[shape](image_size, cy, cx, radius)
            if not np.any(mask & occupied):
                occupied |= mask
                gt_mask[mask] = index_of[f"{color} {shape}"]
                image[mask] = COLOR_VALUES[color]
                concepts.append((shape, color))
                placed = True
                break
        if not placed:
            return None
    return SyntheticSample(
        image=image, caption=_caption_for(concepts), gt_mask=gt_mask, class_set=tuple(concepts)
    )


def augment_captions(caption: str, noun_list, templates=DEFAULT_PROMPT_TEMPLATES) -> list[str]:
    """One prompted caption per (noun, template) pair, in noun-major order."""
    return [template.format(noun) for noun in noun_list for template in templates]


def caption_pool(sample_caption: str, noun_captions) -> list[str]:
    """Candidate captions for batch assembly: the original plus augmentations."""
    return [sample_caption, *noun_captions]


def choose_caption(pool, rng) -> str:
    """Pick one caption uniformly with the run's seeded generator."""
    if not pool:
        raise DataError("caption pool is empty")
    return pool[int(rng.integers(0, len(pool)))]


def sample_nouns(sample: SyntheticSample) -> list[str]:
    """Concept nouns recorded with the sample (no text parsing involved)."""
    return [f"{color} {shape}" for shape, color in sample.class_set]


_MASK_PALETTE = np.array(
    [(40, 40, 40)]
    + [(int(r * 255), int(g * 255), int(b * 255)) for r, g, b in COLOR_VALUES.values()]
    + [(255, 255, 255)] * (256 - len(COLOR_VALUES) - 1),
    dtype=np.uint8,
)


def save_dataset(samples, names, out_dir) -> None:
    """Write the directory layout: images/, masks/, classes.txt, captions.txt,
    nouns.txt.  `names` is the full class list with background at index 0."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    (out / "classes.txt").write_text("".join(f"{n}\n" for n in names))
    caption_lines = []
    noun_lines = []
    for i, sample in enumerate(samples):
        stem = f"{i:05d}"
        img = Image.fromarray(np.round(sample.image * 255.0).astype(np.uint8))
        img.save(out / "images" / f"{stem}.png")
        if sample.gt_mask.max() >= 256:
            raise DataError("mask indices exceed 8-bit range")
        mask = Image.fromarray(sample.gt_mask.astype(np.uint8), mode="P")
        mask.putpalette(_MASK_PALETTE.reshape(-1).tolist())
        mask.save(out / "masks" / f"{stem}.png")
        caption_lines.append(f"{stem}\t{sample.caption}\n")
        noun_lines.append(f"{stem}\t{'|'.join(sample_nouns(sample))}\n")
    (out / "captions.txt").write_text("".join(caption_lines))
    (out / "nouns.txt").write_text("".join(noun_lines))


def _read_tsv(path: Path) -> dict[str, str]:
    table = {}
    if not path.exists():
        return table
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition("\t")
        table[key] = value
    return table


def load_dataset(data_dir) -> tuple[list[SyntheticSample], tuple[str, ...]]:
    """Read a dataset directory back; returns (samples, class names)."""
    root = Path(data_dir)
    classes_file = root / "classes.txt"
    if not classes_file.exists():
        raise DataError(f"not a dataset directory (no classes.txt): {root}")
    names = tuple(line for line in classes_file.read_text().splitlines() if line.strip())
    captions = _read_tsv(root / "captions.txt")
    nouns = _read_tsv(root / "nouns.txt")
    image_files = sorted((root / "images").glob("*.png"))
    if not image_files:
        raise DataError(f"no images found under {root / 'images'}")
    samples = []
    for img_path in image_files:
        stem = img_path.stem
        mask_path = root / "masks" / f"{stem}.png"
        if not mask_path.exists():
            raise DataError(f"missing mask for image {stem}")
        image = np.asarray(Image.open(img_path).convert("RGB"), dtype=np.float64) / 255.0
        gt_mask = np.asarray(Image.open(mask_path), dtype=np.int64)
        if gt_mask.ndim != 2 or gt_mask.shape != image.shape[:2]:
            raise DataError(f"mask shape {gt_mask.shape} does not match image for {stem}")
        if gt_mask.max() >= len(names):
            raise DataError(f"mask {stem} uses label {gt_mask.max()} >= {len(names)} classes")
        noun_items = [n for n in nouns.get(stem, "").split("|") if n]
        class_set = []
        for noun in noun_items:
            color, _, shape = noun.partition(" ")
            class_set.append((shape, color))
        samples.append(
            SyntheticSample(
                image=image,
                caption=captions.get(stem, ""),
                gt_mask=gt_mask,
                class_set=tuple(class_set),
            )
        )
    return samples, names
