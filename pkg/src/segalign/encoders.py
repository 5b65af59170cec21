"""Frozen toy encoders and the trainable pixel decoder.

The image/text towers follow a frozen-encoder contract: deterministic
functions of (input, seed) whose parameters are never touched by training.
The shipped implementations are deliberately tiny stand-ins for a pretrained
dual-encoder; anything exposing the same interface can be plugged in.

The decoder is the only trainable part: a bilinear 2x upsample followed by
two gated convolution blocks, producing one embedding per output pixel.
"""

from __future__ import annotations

import re
import zlib
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Protocol

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

DEFAULT_PATCH_SIZE = 16


@dataclass(frozen=True)
class ImageTextPair:
    """One training example: an image and its caption(s).

    `noun_captions` holds prompted captions generated from the nouns of the
    original caption; the batch sampler picks one of original + generated.
    """

    image: np.ndarray
    caption: str
    noun_captions: list[str] = field(default_factory=list)
    patch_size: int = DEFAULT_PATCH_SIZE

    def __post_init__(self):
        img = np.asarray(self.image)
        if img.ndim != 3 or img.shape[2] != 3:
            raise ValueError(f"image must be HxWx3, got {img.shape}")
        h, w = img.shape[:2]
        if h <= 0 or w <= 0 or h % self.patch_size or w % self.patch_size:
            raise ValueError(
                f"image sides must be positive multiples of {self.patch_size}, got {h}x{w}"
            )
        if img.min() < 0.0 or img.max() > 1.0:
            raise ValueError("image values must lie in [0, 1]")


class FrozenImageEncoder(Protocol):
    """Deterministic, frozen image tower: image -> spatial feature grid."""

    patch_size: int
    embed_dim: int
    seed: int

    def encode(self, image: np.ndarray) -> np.ndarray: ...


class FrozenTextEncoder(Protocol):
    """Deterministic, frozen text tower: caption -> one embedding vector."""

    embed_dim: int
    seed: int

    def encode(self, caption: str) -> np.ndarray: ...


def _axis_codes(n: int, dim: int) -> np.ndarray:
    """Sinusoidal codes for one spatial axis, shape (n, dim)."""
    pos = np.arange(n, dtype=np.float64)[:, None]
    i = np.arange(dim, dtype=np.float64)[None, :]
    angle = pos / np.power(100.0, (2.0 * np.floor(i / 2.0)) / max(dim, 1))
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def sinusoid_grid(grid_h: int, grid_w: int, dim: int) -> np.ndarray:
    """Fixed positional code for any grid size, shape (grid_h, grid_w, dim)."""
    d_row = dim // 2
    d_col = dim - d_row
    rows = _axis_codes(grid_h, d_row)
    cols = _axis_codes(grid_w, d_col)
    out = np.empty((grid_h, grid_w, dim))
    out[:, :, :d_row] = rows[:, None, :]
    out[:, :, d_row:] = cols[None, :, :]
    return out


class ToyImageEncoder:
    """Seeded random linear projection of each patch plus a positional code.

    Frozen by construction: `encode` is a pure function of (image, seed).
    """

    def __init__(self, seed: int = 0, patch_size: int = DEFAULT_PATCH_SIZE, embed_dim: int = 32):
        if patch_size <= 0 or embed_dim <= 0:
            raise ValueError("patch_size and embed_dim must be positive")
        self.seed = seed
        self.patch_size = patch_size
        self.embed_dim = embed_dim
        self.positional_scale = 0.1
        rng = np.random.default_rng(seed)
        flat = patch_size * patch_size * 3
        self.projection = rng.standard_normal((flat, embed_dim)) / np.sqrt(flat)

    def positional_embedding(self, grid_h: int, grid_w: int) -> np.ndarray:
        return self.positional_scale * sinusoid_grid(grid_h, grid_w, self.embed_dim)

    def encode(self, image: np.ndarray) -> np.ndarray:
        """Image (H, W, 3) -> feature grid (H/ps, W/ps, embed_dim)."""
        image = np.asarray(image, dtype=np.float64)
        if image.ndim != 3 or image.shape[2] != 3:
            raise ValueError(f"expected an HxWx3 image, got shape {image.shape}")
        h_px, w_px = image.shape[:2]
        ps = self.patch_size
        if h_px % ps or w_px % ps:
            raise ValueError(f"image sides {h_px}x{w_px} not divisible by patch size {ps}")
        gh, gw = h_px // ps, w_px // ps
        patches = (
            image.reshape(gh, ps, gw, ps, 3).transpose(0, 2, 1, 3, 4).reshape(gh, gw, ps * ps * 3)
        )
        return patches @ self.projection + self.positional_embedding(gh, gw)

    def parameter_bytes(self) -> bytes:
        return self.projection.tobytes()


class ToyTextEncoder:
    """Mean of seeded hash-indexed token embeddings, then a fixed linear map."""

    def __init__(self, seed: int = 0, embed_dim: int = 32, vocab_slots: int = 4096):
        if embed_dim <= 0 or vocab_slots <= 0:
            raise ValueError("embed_dim and vocab_slots must be positive")
        self.seed = seed
        self.embed_dim = embed_dim
        self.vocab_slots = vocab_slots
        rng = np.random.default_rng(seed)
        self.token_table = rng.standard_normal((vocab_slots, embed_dim)) / np.sqrt(embed_dim)
        self.output_map = rng.standard_normal((embed_dim, embed_dim)) / np.sqrt(embed_dim)

    def _tokenize(self, caption: str) -> list[str]:
        return re.findall(r"[a-z0-9]+", caption.lower())

    def token_slot(self, token: str) -> int:
        # process-independent hash; Python's hash() is salted per run
        return zlib.crc32(token.encode("utf-8")) % self.vocab_slots

    def encode(self, caption: str) -> np.ndarray:
        """Caption -> one embedding vector of length embed_dim."""
        tokens = self._tokenize(caption)
        if not tokens:
            raise ValueError("caption is empty")
        idx = [self.token_slot(t) for t in tokens]
        return self.token_table[idx].mean(axis=0) @ self.output_map

    def parameter_bytes(self) -> bytes:
        return self.token_table.tobytes() + self.output_map.tobytes()


def toy_image_encoder(seed: int = 0, patch_size: int = DEFAULT_PATCH_SIZE, embed_dim: int = 32) -> ToyImageEncoder:
    return ToyImageEncoder(seed=seed, patch_size=patch_size, embed_dim=embed_dim)


def toy_text_encoder(seed: int = 0, embed_dim: int = 32, vocab_slots: int = 4096) -> ToyTextEncoder:
    return ToyTextEncoder(seed=seed, embed_dim=embed_dim, vocab_slots=vocab_slots)


@lru_cache(maxsize=64)
def bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Interpolation matrix W (n_out, n_in): out = W @ in, half-pixel centers."""
    w = np.zeros((n_out, n_in))
    src = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    rows = np.arange(n_out)
    np.add.at(w, (rows, lo), 1.0 - frac)
    np.add.at(w, (rows, hi), frac)
    return w


def bilinear_resize(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize an (H, W, C) array with separable bilinear interpolation."""
    wh = bilinear_matrix(image.shape[0], out_h)
    ww = bilinear_matrix(image.shape[1], out_w)
    tmp = np.einsum("Hh,hwc->Hwc", wh, image)
    return np.einsum("Hwc,Ww->HWc", tmp, ww)


def flatten_grid(grid: np.ndarray) -> np.ndarray:
    """Row-major flatten of (..., H, W, C) to (..., H*W, C)."""
    *lead, h, w, c = grid.shape
    return grid.reshape(*lead, h * w, c)


class Decoder:
    """Trainable head: bilinear 2x upsample, then gated convolution blocks.

    Each block computes x + conv_value(x) * sigmoid(conv_gate(x)) with 3x3
    kernels at constant width, so zeroing all convolution weights makes the
    decoder an exact bilinear upsampler.
    """

    def __init__(
        self,
        channels: int,
        seed: int = 0,
        upscale_factor: int = 2,
        num_blocks: int = 2,
        init_scale: float = 0.3,
    ):
        if channels <= 0:
            raise ValueError("channels must be positive")
        if upscale_factor < 1:
            raise ValueError("upscale_factor must be >= 1")
        self.channels = channels
        self.seed = seed
        self.upscale_factor = upscale_factor
        self.num_blocks = num_blocks
        rng = np.random.default_rng(seed)
        fan_in = 9 * channels
        self.params: dict[str, np.ndarray] = {}
        for b in range(num_blocks):
            for path in ("value", "gate"):
                self.params[f"block{b}.{path}.w"] = (
                    init_scale * rng.standard_normal((3, 3, channels, channels)) / np.sqrt(fan_in)
                )
                self.params[f"block{b}.{path}.b"] = np.zeros(channels)

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def zero_parameters(self) -> None:
        """Degenerate parameterization: decoder becomes pure upsampling."""
        for p in self.params.values():
            p[...] = 0.0

    def _conv(self, patches: Tensor, w: Tensor, b: Tensor) -> Tensor:
        return ad.einsum("bhwklc,klcd->bhwd", patches, w) + b

    def decode(self, features, params: dict[str, Tensor] | None = None) -> Tensor:
        """Feature grid (h, w, C) or (B, h, w, C) -> upscaled embedding grid.

        Pass `params` (Tensors sharing names with `self.params`) to make the
        output differentiable with respect to the decoder parameters.
        """
        x = features if isinstance(features, Tensor) else Tensor(features)
        squeeze = x.ndim == 3
        if squeeze:
            x = ad.reshape(x, (1, *x.shape))
        if x.ndim != 4 or x.shape[3] != self.channels:
            raise ValueError(
                f"expected (..., h, w, {self.channels}) features, got shape {features.shape}"
            )
        if params is None:
            params = {k: Tensor(v) for k, v in self.params.items()}
        _, gh, gw, _ = x.shape
        wh = Tensor(bilinear_matrix(gh, gh * self.upscale_factor))
        ww = Tensor(bilinear_matrix(gw, gw * self.upscale_factor))
        x = ad.einsum("Hh,bhwc->bHwc", wh, x)
        x = ad.einsum("bHwc,Ww->bHWc", x, ww)
        for b in range(self.num_blocks):
            patches = ad.extract_patches3x3(x)
            value = self._conv(patches, params[f"block{b}.value.w"], params[f"block{b}.value.b"])
            gate = self._conv(patches, params[f"block{b}.gate.w"], params[f"block{b}.gate.b"])
            x = x + value * ad.sigmoid(gate)
        if squeeze:
            x = ad.reshape(x, x.shape[1:])
        return x

    def decode_np(self, features: np.ndarray) -> np.ndarray:
        """Convenience wrapper returning a plain array (no gradient tape)."""
        return self.decode(features).data
