"""Synthetic degradation cascade: blur, downsample, noise, JPEG.

A DegradationSpec is an ordered op list plus the seed that drives its
noise draws, so applying the same spec to the same image is fully
reproducible. The JPEG stage is a self-contained baseline codec round
trip (8x8 DCT, standard quantization tables scaled by quality, 4:2:0
chroma) rather than a platform JPEG library, so outputs are bit-stable
across environments.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.fft
from scipy.ndimage import gaussian_filter1d

from .images import check_image, resize


class DegradeError(ValueError):
    pass


@dataclass(frozen=True)
class GaussianBlur:
    sigma: float

    def __post_init__(self):
        if self.sigma < 0:
            raise DegradeError(f"blur sigma must be >= 0, got {self.sigma}")


@dataclass(frozen=True)
class Downsample:
    factor: int
    kernel: str = "bicubic"

    def __post_init__(self):
        if self.factor < 1:
            raise DegradeError(f"downsample factor must be >= 1, got {self.factor}")
        if self.kernel not in ("bicubic", "bilinear", "area"):
            raise DegradeError(f"unknown downsample kernel {self.kernel!r}")


@dataclass(frozen=True)
class WhiteNoise:
    sigma: float  # std on the 8-bit scale

    def __post_init__(self):
        if self.sigma < 0:
            raise DegradeError(f"noise sigma must be >= 0, got {self.sigma}")


@dataclass(frozen=True)
class Jpeg:
    quality: int

    def __post_init__(self):
        if not 1 <= self.quality <= 100:
            raise DegradeError(f"jpeg quality must lie in [1, 100], got {self.quality}")


Op = GaussianBlur | Downsample | WhiteNoise | Jpeg


@dataclass(frozen=True)
class DegradationSpec:
    ops: tuple[Op, ...] = ()
    seed: int = 0

    def total_downsample(self) -> int:
        total = 1
        for op in self.ops:
            if isinstance(op, Downsample):
                total *= op.factor
        return total


def format_spec(spec: DegradationSpec) -> str:
    """Canonical single-line form, e.g. "blur:2.0|down:4:bicubic|noise:20|jpeg:50"."""
    parts = []
    for op in spec.ops:
        if isinstance(op, GaussianBlur):
            parts.append(f"blur:{op.sigma:g}")
        elif isinstance(op, Downsample):
            parts.append(f"down:{op.factor}:{op.kernel}")
        elif isinstance(op, WhiteNoise):
            parts.append(f"noise:{op.sigma:g}")
        elif isinstance(op, Jpeg):
            parts.append(f"jpeg:{op.quality}")
    return "|".join(parts)


def parse_spec(text: str, seed: int = 0) -> DegradationSpec:
    """Parse the canonical text form; empty string means the identity."""
    ops: list[Op] = []
    text = text.strip()
    if text:
        for token in text.split("|"):
            fields = token.strip().split(":")
            try:
                name = fields[0]
                if name == "blur" and len(fields) == 2:
                    ops.append(GaussianBlur(sigma=float(fields[1])))
                elif name == "down" and len(fields) in (2, 3):
                    kernel = fields[2] if len(fields) > 2 else "bicubic"
                    ops.append(Downsample(factor=int(fields[1]), kernel=kernel))
                elif name == "noise" and len(fields) == 2:
                    ops.append(WhiteNoise(sigma=float(fields[1])))
                elif name == "jpeg" and len(fields) == 2:
                    ops.append(Jpeg(quality=int(fields[1])))
                elif name in ("blur", "down", "noise", "jpeg"):
                    raise DegradeError(f"malformed op {token!r} in spec {text!r}")
                else:
                    raise DegradeError(f"unknown op {name!r} in spec {text!r}")
            except (IndexError, ValueError) as exc:
                if isinstance(exc, DegradeError):
                    raise
                raise DegradeError(f"malformed op {token!r} in spec {text!r}") from exc
    return DegradationSpec(ops=tuple(ops), seed=seed)


def sample_spec(rng: np.random.Generator) -> DegradationSpec:
    """Draw a randomized blur -> down -> noise -> jpeg cascade.

    Each op is included independently with probability 0.8; parameter
    ranges are declared defaults, not reference values.
    """
    ops: list[Op] = []
    if rng.random() < 0.8:
        ops.append(GaussianBlur(sigma=float(rng.uniform(0.2, 3.0))))
    if rng.random() < 0.8:
        ops.append(Downsample(factor=int(rng.choice([1, 2, 4]))))
    if rng.random() < 0.8:
        ops.append(WhiteNoise(sigma=float(rng.uniform(0.0, 50.0))))
    if rng.random() < 0.8:
        ops.append(Jpeg(quality=int(rng.integers(30, 96))))
    return DegradationSpec(ops=tuple(ops), seed=int(rng.integers(0, 2**31 - 1)))


def with_seed(spec: DegradationSpec, seed: int) -> DegradationSpec:
    return replace(spec, seed=seed)


def apply_spec(img: np.ndarray, spec: DegradationSpec) -> np.ndarray:
    """Apply ops in list order; output clamped to [0, 1]."""
    check_image(img)
    _, h, w = img.shape
    total = spec.total_downsample()
    if h % total or w % total:
        raise DegradeError(f"dims ({h}, {w}) not divisible by total downsample {total}")
    rng = np.random.default_rng(spec.seed)
    out = img.astype(np.float32)
    for op in spec.ops:
        if isinstance(op, GaussianBlur):
            out = _gaussian_blur(out, op.sigma)
        elif isinstance(op, Downsample):
            if op.factor > 1:
                _, ch, cw = out.shape
                out = resize(out, (ch // op.factor, cw // op.factor), op.kernel)
        elif isinstance(op, WhiteNoise):
            if op.sigma > 0:
                noise = rng.standard_normal(out.shape).astype(np.float32)
                out = out + (op.sigma / 255.0) * noise
        elif isinstance(op, Jpeg):
            out = jpeg_round_trip(np.clip(out, 0.0, 1.0), op.quality)
    return np.clip(out, 0.0, 1.0)


def _gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    if sigma == 0:
        return img
    # separable kernel truncated at 4 sigma, reflected boundaries
    out = gaussian_filter1d(img, sigma, axis=1, mode="reflect", truncate=4.0)
    out = gaussian_filter1d(out, sigma, axis=2, mode="reflect", truncate=4.0)
    return out.astype(np.float32)


# Baseline JPEG quantization tables (luminance, chrominance).
_Q_LUMA = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.float64,
)
_Q_CHROMA = np.array(
    [
        [17, 18, 24, 47, 99, 99, 99, 99],
        [18, 21, 26, 66, 99, 99, 99, 99],
        [24, 26, 56, 99, 99, 99, 99, 99],
        [47, 66, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
    ],
    dtype=np.float64,
)


def _scaled_table(table: np.ndarray, quality: int) -> np.ndarray:
    if quality < 50:
        scale = 5000.0 / quality
    else:
        scale = 200.0 - 2.0 * quality
    scaled = np.floor((table * scale + 50.0) / 100.0)
    return np.clip(scaled, 1.0, 255.0)


def _quantize_plane(plane: np.ndarray, table: np.ndarray) -> np.ndarray:
    """DCT -> quantize -> dequantize -> inverse DCT per 8x8 block."""
    h, w = plane.shape
    blocks = plane.reshape(h // 8, 8, w // 8, 8).transpose(0, 2, 1, 3) - 128.0
    coefs = scipy.fft.dctn(blocks, axes=(-2, -1), norm="ortho")
    coefs = np.round(coefs / table) * table
    rec = scipy.fft.idctn(coefs, axes=(-2, -1), norm="ortho") + 128.0
    return rec.transpose(0, 2, 1, 3).reshape(h, w)


def jpeg_round_trip(img: np.ndarray, quality: int) -> np.ndarray:
    """Lossy channel of a baseline JPEG encode/decode at the given quality.

    YCbCr conversion, 2x2 chroma subsampling, blockwise DCT quantization,
    replicated chroma upsampling. Edges reflect-pad to a 16px multiple.
    """
    check_image(img)
    _, h, w = img.shape
    ph = (16 - h % 16) % 16
    pw = (16 - w % 16) % 16
    rgb = np.pad(img, ((0, 0), (0, ph), (0, pw)), mode="reflect") * 255.0
    r, g, b = rgb[0].astype(np.float64), rgb[1].astype(np.float64), rgb[2].astype(np.float64)
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = -0.168736 * r - 0.331264 * g + 0.5 * b + 128.0
    cr = 0.5 * r - 0.418688 * g - 0.081312 * b + 128.0

    y = _quantize_plane(y, _scaled_table(_Q_LUMA, quality))
    chroma_table = _scaled_table(_Q_CHROMA, quality)
    planes = []
    for c in (cb, cr):
        sub = c.reshape(c.shape[0] // 2, 2, c.shape[1] // 2, 2).mean(axis=(1, 3))
        sub = _quantize_plane(sub, chroma_table)
        planes.append(np.repeat(np.repeat(sub, 2, axis=0), 2, axis=1))
    cb, cr = planes

    cb_c, cr_c = cb - 128.0, cr - 128.0
    out = np.stack(
        [
            y + 1.402 * cr_c,
            y - 0.344136 * cb_c - 0.714136 * cr_c,
            y + 1.772 * cb_c,
        ]
    )
    out = np.clip(out, 0.0, 255.0)[:, :h, :w] / 255.0
    return out.astype(np.float32)
