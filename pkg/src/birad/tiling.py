"""Overlapping tile decomposition with Gaussian-feathered merging.

Large latents are processed as fixed-size overlapping tiles and blended
back with a Gaussian window centred on each tile. The plan stores the
window weights already normalized per output pixel, so the merge is a
single weighted sum. A plan whose one tile covers the whole input has
unit weight everywhere and merges back bit-identically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

WEIGHT_FLOOR = 1e-3


class TilingError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TilePlan:
    height: int
    width: int
    tile_h: int
    tile_w: int
    stride: int
    offsets: tuple[tuple[int, int], ...]
    weights: torch.Tensor  # [n_tiles, tile_h, tile_w], normalized per pixel

    def __len__(self) -> int:
        return len(self.offsets)


def _axis_offsets(extent: int, tile: int, stride: int) -> list[int]:
    offs = list(range(0, extent - tile + 1, stride))
    if offs[-1] != extent - tile:
        offs.append(extent - tile)  # clamp the last tile to the edge
    return offs


def _gaussian_window(n: int) -> np.ndarray:
    center = (n - 1) / 2.0
    sigma = max(n / 4.0, 1e-6)
    dist = np.arange(n, dtype=np.float64) - center
    win = np.exp(-(dist**2) / (2.0 * sigma**2))
    return np.maximum(win, WEIGHT_FLOOR)


def plan_tiles(height: int, width: int, tile: int, stride: int) -> TilePlan:
    """Row-major overlapping tiles; tile size clamps to small inputs."""
    if height < 1 or width < 1:
        raise TilingError(f"empty input ({height}, {width})")
    if tile < 1 or stride < 1:
        raise TilingError(f"tile and stride must be positive, got {tile}, {stride}")
    if stride > tile:
        raise TilingError(f"stride {stride} > tile {tile} would leave gaps")
    tile_h = min(tile, height)
    tile_w = min(tile, width)
    offsets = [
        (y, x)
        for y in _axis_offsets(height, tile_h, stride)
        for x in _axis_offsets(width, tile_w, stride)
    ]
    window = np.outer(_gaussian_window(tile_h), _gaussian_window(tile_w))
    raw = np.broadcast_to(window, (len(offsets), tile_h, tile_w))
    total = np.zeros((height, width), dtype=np.float64)
    for (y, x), w in zip(offsets, raw):
        total[y : y + tile_h, x : x + tile_w] += w
    norm = np.empty_like(raw)
    for i, (y, x) in enumerate(offsets):
        norm[i] = raw[i] / total[y : y + tile_h, x : x + tile_w]
    return TilePlan(
        height=height,
        width=width,
        tile_h=tile_h,
        tile_w=tile_w,
        stride=stride,
        offsets=tuple(offsets),
        weights=torch.from_numpy(norm.astype(np.float32)),
    )


def split(x: torch.Tensor, plan: TilePlan) -> list[torch.Tensor]:
    if x.shape[-2:] != (plan.height, plan.width):
        raise TilingError(f"input {tuple(x.shape)} does not match plan ({plan.height}, {plan.width})")
    return [
        x[..., y : y + plan.tile_h, x0 : x0 + plan.tile_w].clone()
        for y, x0 in plan.offsets
    ]


def merge(tiles: list[torch.Tensor], plan: TilePlan) -> torch.Tensor:
    if len(tiles) != len(plan.offsets):
        raise TilingError(f"got {len(tiles)} tiles for a {len(plan.offsets)}-tile plan")
    lead = tiles[0].shape[:-2]
    out = torch.zeros(*lead, plan.height, plan.width, dtype=tiles[0].dtype)
    for (y, x), tile, w in zip(plan.offsets, tiles, plan.weights):
        if tile.shape[-2:] != (plan.tile_h, plan.tile_w):
            raise TilingError(f"tile shape {tuple(tile.shape)} does not match plan")
        out[..., y : y + plan.tile_h, x : x + plan.tile_w] += tile * w
    return out
