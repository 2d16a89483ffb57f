"""Latent autoencoder at toy scale.

Encoding folds each f x f pixel block of the 3-channel image into a
3*f*f-vector (space-to-depth) and projects it onto a small fixed
orthonormal basis; decoding applies the transpose and unfolds. The first
three basis vectors are the per-channel block means, so block-constant
content round-trips exactly; remaining channels are seeded random
orthonormal completions. Pixels are centered to mid-gray before
projection so latents are zero-mean on neutral content.

The codec is deterministic, linear up to the final clamp, and strictly
block-local, which makes tiled encode/decode exact whenever tiles align
to the block grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .images import check_image


class CodecError(ValueError):
    pass


def _basis(f: int, c_lat: int, seed: int) -> np.ndarray:
    """Orthonormal [3*f*f, c_lat] projection; columns 0..2 are channel DCs."""
    d = 3 * f * f
    if not 1 <= c_lat <= d:
        raise CodecError(f"c_lat must lie in [1, {d}], got {c_lat}")
    cols = np.zeros((d, min(3, c_lat)))
    for c in range(min(3, c_lat)):
        cols[c * f * f : (c + 1) * f * f, c] = 1.0 / f
    if c_lat > 3:
        rng = np.random.default_rng(seed)
        extra = rng.standard_normal((d, c_lat - 3))
        cols = np.concatenate([cols, extra], axis=1)
        # Gram-Schmidt against the DC columns and each other
        q, _ = np.linalg.qr(cols)
        # qr may flip signs; re-anchor the DC columns
        for c in range(3):
            if q[c * f * f, c] < 0:
                q[:, c] = -q[:, c]
        cols = q[:, :c_lat]
    return cols


@dataclass
class ToyCodec:
    """Fixed invertible-up-to-projection image/latent codec."""

    scale: int = 8
    latent_channels: int = 4
    basis_seed: int = 1234
    latent_scale: float = 1.0
    _proj: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self._proj = _basis(self.scale, self.latent_channels, self.basis_seed).astype(
            np.float32
        )

    def latent_shape(self, h: int, w: int) -> tuple[int, int, int]:
        f = self.scale
        if h % f or w % f:
            raise CodecError(f"image dims ({h}, {w}) not divisible by scale {f}")
        return (self.latent_channels, h // f, w // f)

    def encode(self, img: np.ndarray) -> torch.Tensor:
        check_image(img)
        _, h, w = img.shape
        c_lat, lh, lw = self.latent_shape(h, w)
        f = self.scale
        centered = img.astype(np.float32) - 0.5
        # [3, H, W] -> [lh, lw, 3*f*f] with channel-major block layout
        blocks = (
            centered.reshape(3, lh, f, lw, f)
            .transpose(1, 3, 0, 2, 4)
            .reshape(lh, lw, 3 * f * f)
        )
        lat = (blocks @ self._proj) * self.latent_scale
        return torch.from_numpy(np.ascontiguousarray(lat.transpose(2, 0, 1), dtype=np.float32))

    def decode(self, z: torch.Tensor) -> np.ndarray:
        if z.ndim != 3 or z.shape[0] != self.latent_channels:
            raise CodecError(
                f"expected latent [{self.latent_channels}, h, w], got {tuple(z.shape)}"
            )
        f = self.scale
        _, lh, lw = z.shape
        lat = z.detach().cpu().numpy().astype(np.float32) / self.latent_scale
        blocks = lat.transpose(1, 2, 0) @ self._proj.T
        img = (
            blocks.reshape(lh, lw, 3, f, f)
            .transpose(2, 0, 3, 1, 4)
            .reshape(3, lh * f, lw * f)
        )
        return np.clip(img + 0.5, 0.0, 1.0).astype(np.float32)

    def _tile_grid(self, length: int, tile: int, stride: int) -> list[int]:
        if tile >= length:
            return [0]
        offsets = list(range(0, length - tile + 1, stride))
        if offsets[-1] + tile < length:
            offsets.append(length - tile)
        return offsets

    def _check_tiling(self, tile_px: int, overlap_px: int) -> int:
        f = self.scale
        if tile_px < f:
            raise CodecError(f"tile {tile_px}px smaller than receptive field {f}px")
        if not 0 <= overlap_px < tile_px:
            raise CodecError("need 0 <= overlap < tile")
        if tile_px % f or overlap_px % f:
            raise CodecError(f"tile and overlap must be multiples of scale {f}")
        return tile_px - overlap_px

    def encode_tiled(self, img: np.ndarray, tile_px: int, overlap_px: int = 0) -> torch.Tensor:
        check_image(img)
        stride = self._check_tiling(tile_px, overlap_px)
        _, h, w = img.shape
        c_lat, lh, lw = self.latent_shape(h, w)
        f = self.scale
        acc = torch.zeros((c_lat, lh, lw))
        cnt = torch.zeros((1, lh, lw))
        for y in self._tile_grid(h, min(tile_px, h), stride):
            for x in self._tile_grid(w, min(tile_px, w), stride):
                th, tw = min(tile_px, h), min(tile_px, w)
                z = self.encode(img[:, y : y + th, x : x + tw])
                acc[:, y // f : (y + th) // f, x // f : (x + tw) // f] += z
                cnt[:, y // f : (y + th) // f, x // f : (x + tw) // f] += 1.0
        return acc / cnt

    def decode_tiled(self, z: torch.Tensor, tile_px: int, overlap_px: int = 0) -> np.ndarray:
        stride = self._check_tiling(tile_px, overlap_px)
        f = self.scale
        _, lh, lw = z.shape
        h, w = lh * f, lw * f
        lt, ls = min(tile_px, h) // f, stride // f
        acc = np.zeros((3, h, w), dtype=np.float32)
        cnt = np.zeros((1, h, w), dtype=np.float32)
        for ly in self._tile_grid(lh, min(lt, lh), max(ls, 1)):
            for lx in self._tile_grid(lw, min(lt, lw), max(ls, 1)):
                th, tw = min(lt, lh), min(lt, lw)
                img = self.decode(z[:, ly : ly + th, lx : lx + tw])
                acc[:, ly * f : (ly + th) * f, lx * f : (lx + tw) * f] += img
                cnt[:, ly * f : (ly + th) * f, lx * f : (lx + tw) * f] += 1.0
        return np.clip(acc / cnt, 0.0, 1.0)
