"""Image ingestion and PNG rendering.

Covers three jobs: turning image files into [4, H, W] float targets,
rendering tissue grids with a fixed type palette, and writing the uint8
arrays the command line emits (state frames, rule maps).
"""

from __future__ import annotations

import numpy as np
from PIL import Image

from .tensor import Tensor

# Fixed render palette, one row per cell type. EMPTY is white so printed
# figures read as tissue on paper; the five types keep these exact colors
# everywhere (tests key on the values).
TISSUE_PALETTE = np.array(
    [
        [255, 255, 255],  # 0 EMPTY   white
        [228, 26, 28],    # 1 STEM    red
        [55, 126, 184],   # 2 INT1    blue
        [77, 175, 74],    # 3 INT2    green
        [152, 78, 163],   # 4 DIFF1   purple
        [255, 127, 0],    # 5 DIFF2   orange
    ],
    dtype=np.uint8,
)


def render_tissue(grid: np.ndarray) -> np.ndarray:
    """Map an [H, W] integer type grid to an [H, W, 3] uint8 image."""
    g = np.asarray(grid)
    if g.ndim != 2:
        raise ValueError(f"expected an [H, W] type grid, got shape {g.shape}")
    if not np.issubdtype(g.dtype, np.integer):
        raise ValueError("type grids are integer valued")
    if g.min() < 0 or g.max() >= len(TISSUE_PALETTE):
        raise ValueError("type ids outside the palette range")
    return TISSUE_PALETTE[g]


def render_rgba(state: np.ndarray) -> np.ndarray:
    """Clamp the first four channels of a [C, H, W] state to [0, 1] and
    quantize to an [H, W, 4] uint8 image."""
    x = np.asarray(state)
    if x.ndim != 3 or x.shape[0] < 4:
        raise ValueError(f"expected a [C, H, W] state with >= 4 channels, got {x.shape}")
    rgba = np.clip(x[:4].astype(np.float64), 0.0, 1.0)
    return np.round(rgba * 255.0).astype(np.uint8).transpose(1, 2, 0)


def render_gray(field: np.ndarray) -> np.ndarray:
    """Quantize an [H, W] field in [0, 1] to uint8 grayscale (rule maps)."""
    f = np.asarray(field, dtype=np.float64)
    if f.ndim != 2:
        raise ValueError(f"expected an [H, W] field, got shape {f.shape}")
    return np.round(np.clip(f, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_png(path, array: np.ndarray):
    """Write an [H, W] / [H, W, 3] / [H, W, 4] uint8 array as PNG."""
    a = np.asarray(array)
    if a.dtype != np.uint8:
        raise ValueError("save_png takes uint8 arrays; render first")
    if a.ndim == 2:
        mode = "L"
    elif a.ndim == 3 and a.shape[2] == 3:
        mode = "RGB"
    elif a.ndim == 3 and a.shape[2] == 4:
        mode = "RGBA"
    else:
        raise ValueError(f"cannot infer PNG mode for shape {a.shape}")
    Image.fromarray(a, mode=mode).save(path, format="PNG")


def load_png(path) -> np.ndarray:
    """Read a PNG back as a uint8 array (shape as stored)."""
    with Image.open(path) as im:
        return np.asarray(im)


def ingest_image(path, target_size: int | None = None, pad_px: int = 0,
                 pad_value: float = 1.0) -> Tensor:
    """Load an image file as a [4, H, W] float32 RGBA tensor in [0, 1].

    Inputs without an alpha channel get alpha 1. `target_size` applies a
    nearest-neighbor resize to target_size x target_size before padding;
    `pad_px` adds a constant border of `pad_value` on every side (all four
    channels, so pad_value 1.0 is opaque white).
    """
    if pad_px < 0:
        raise ValueError("pad_px must be >= 0")
    if target_size is not None and target_size < 1:
        raise ValueError("target_size must be positive")
    try:
        with Image.open(path) as im:
            im = im.convert("RGBA")
            if target_size is not None:
                im = im.resize((target_size, target_size), resample=Image.NEAREST)
            raw = np.asarray(im, dtype=np.uint8)
    except Image.UnidentifiedImageError as e:
        raise OSError(f"cannot read image file {path}: {e}") from e
    x = raw.astype(np.float32) / np.float32(255.0)
    x = x.transpose(2, 0, 1)
    if pad_px:
        x = np.pad(x, ((0, 0), (pad_px, pad_px), (pad_px, pad_px)),
                   constant_values=np.float32(pad_value))
    return Tensor(x)


def synthetic_target(size: int = 40) -> np.ndarray:
    """Deterministic [4, size, size] RGBA test target: a two-tone disk with
    a dark ring, transparent outside. Stands in for the image corpus so the
    pool-training path can run without external files."""
    if size < 4:
        raise ValueError("size must be >= 4")
    c = (size - 1) / 2.0
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    r = np.hypot(yy - c, xx - c) / size
    body = r < 0.42
    ring = (r > 0.28) & (r < 0.36)
    upper = yy < c
    target = np.zeros((4, size, size), dtype=np.float32)
    target[0][body] = 0.85
    target[1][body & upper] = 0.65
    target[1][body & ~upper] = 0.25
    target[2][body & ~upper] = 0.75
    for ch in range(3):
        target[ch][ring] *= 0.35
    target[3][body] = 1.0
    return target
