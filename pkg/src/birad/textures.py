"""Synthetic texture corpus: blockwise color mosaics.

The toy images are piecewise-constant color mosaics whose cells align
with the codec's 8-px analysis grid, so clean content round-trips the
codec exactly and restoration quality is measured against the true
image rather than against codec loss. Cell colors come from a spatially
smoothed Gaussian field, which gives each image large-scale structure
instead of independent confetti.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .images import save_png
from .seeds import derive_seed


def mosaic_image(
    size: int = 64,
    cell: int = 8,
    seed: int = 0,
    smoothness: float = 1.2,
    levels: int | None = None,
) -> np.ndarray:
    """One [3, size, size] mosaic with constant cell x cell color blocks.

    With `levels` set, each channel snaps to that many evenly spaced
    values in [0.1, 0.9], giving a small fixed palette (levels**3 colors).
    Quantized mosaics leave a learnable restoration prior at toy scale;
    continuous ones make restoration pure regression.
    """
    if size % cell:
        raise ValueError(f"size {size} must be a multiple of cell {cell}")
    if levels is not None and levels < 2:
        raise ValueError(f"need at least 2 palette levels, got {levels}")
    n = size // cell
    rng = np.random.default_rng(seed)
    grid = rng.standard_normal((3, n, n))
    grid = gaussian_filter(grid, sigma=(0.0, smoothness, smoothness), mode="reflect")
    lo, hi = float(grid.min()), float(grid.max())
    if hi - lo < 1e-9:
        grid = np.full_like(grid, 0.5)
    else:
        grid = (grid - lo) / (hi - lo) * 0.9 + 0.05
    if levels is not None:
        centers = np.linspace(0.1, 0.9, levels)
        grid = centers[np.abs(grid[..., None] - centers).argmin(axis=-1)]
    img = np.repeat(np.repeat(grid, cell, axis=1), cell, axis=2)
    return img.astype(np.float32)


def write_dataset(
    out_dir: str | Path,
    count: int,
    size: int = 64,
    cell: int = 8,
    seed: int = 0,
    levels: int | None = None,
) -> list[Path]:
    """Write a seeded mosaic corpus with a manifest pinning the order."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(count):
        img = mosaic_image(size, cell, derive_seed(seed, "texture", i), levels=levels)
        path = out / f"tex_{i:04d}.png"
        save_png(path, img)
        paths.append(path)
    (out / "manifest.txt").write_text("".join(p.name + "\n" for p in paths))
    return paths
