"""Geometric and photometric tile augmentations, deterministic given a seed."""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .geodata import TileRecord


def flip_pixels(pixels: np.ndarray, horizontal: bool, vertical: bool) -> np.ndarray:
    """Mirror a (C, H, W) array; involutive, preserves the pixel multiset."""
    out = pixels
    if horizontal:
        out = out[:, :, ::-1]
    if vertical:
        out = out[:, ::-1, :]
    return np.ascontiguousarray(out)


def crop_pixels(pixels: np.ndarray, top: int, left: int, size: int) -> np.ndarray:
    c, h, w = pixels.shape
    if top < 0 or left < 0 or top + size > h or left + size > w:
        raise ValueError(f"crop [{top}:{top + size}, {left}:{left + size}] "
                         f"outside tile of size {h}x{w}")
    return pixels[:, top:top + size, left:left + size].copy()


def resize_pixels(pixels: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of a (C, H, W) array (endpoint-aligned sampling)."""
    c, h, w = pixels.shape
    if (h, w) == (out_h, out_w):
        return pixels.copy()
    ys = np.linspace(0.0, h - 1, out_h) if out_h > 1 else np.zeros(1)
    xs = np.linspace(0.0, w - 1, out_w) if out_w > 1 else np.zeros(1)
    y0 = np.minimum(np.floor(ys).astype(int), max(h - 2, 0))
    x0 = np.minimum(np.floor(xs).astype(int), max(w - 2, 0))
    ty = (ys - y0)[None, :, None]
    tx = (xs - x0)[None, None, :]
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    top = (1 - tx) * pixels[:, y0][:, :, x0] + tx * pixels[:, y0][:, :, x1]
    bot = (1 - tx) * pixels[:, y1][:, :, x0] + tx * pixels[:, y1][:, :, x1]
    return (1 - ty) * top + ty * bot


def augment_geometric(tile: TileRecord, crop_size: int, seed: int,
                      out_size: int | None = None) -> TileRecord:
    """Random horizontal/vertical flip (p=0.5 each), then a uniform-random
    crop of `crop_size`, then resize to `out_size` (defaults to crop_size)."""
    c, h, w = tile.pixels.shape
    if crop_size > min(h, w):
        raise ValueError(f"crop size {crop_size} exceeds tile dims {h}x{w}")
    if out_size is None:
        out_size = crop_size
    rng = np.random.default_rng(seed)
    flip_h = bool(rng.random() < 0.5)
    flip_v = bool(rng.random() < 0.5)
    top = int(rng.integers(h - crop_size + 1))
    left = int(rng.integers(w - crop_size + 1))
    out = flip_pixels(tile.pixels, flip_h, flip_v)
    out = crop_pixels(out, top, left, crop_size)
    out = resize_pixels(out, out_size, out_size)
    return replace(tile, pixels=np.clip(out, 0.0, 1.0))


def augment_photometric(tile: TileRecord, jitter: float, mix_strength: float,
                        seed: int) -> TileRecord:
    """Per-channel additive jitter, then random channel mixing, then clamp.

    The mixing matrix is I + mix_strength * R with R uniform in [-1, 1],
    rows renormalized to sum to 1; jitter 0 and mix 0 is the identity.
    """
    if jitter < 0 or mix_strength < 0:
        raise ValueError("jitter and mix strength must be >= 0")
    rng = np.random.default_rng(seed)
    c = tile.pixels.shape[0]
    out = tile.pixels
    shift = rng.uniform(-jitter, jitter, size=c) if jitter > 0 else np.zeros(c)
    out = out + shift[:, None, None]
    if mix_strength > 0:
        mix = np.eye(c) + mix_strength * rng.uniform(-1.0, 1.0, size=(c, c))
        row_sums = mix.sum(axis=1, keepdims=True)
        row_sums = np.where(np.abs(row_sums) < 1e-6, 1.0, row_sums)
        mix = mix / row_sums
        out = np.einsum("dc,chw->dhw", mix, out)
    return replace(tile, pixels=np.clip(out, 0.0, 1.0))


def fit_to_input(tile: TileRecord, size: int) -> TileRecord:
    """Deterministically resize a tile to the model input size."""
    return replace(tile, pixels=np.clip(resize_pixels(tile.pixels, size, size), 0.0, 1.0))
