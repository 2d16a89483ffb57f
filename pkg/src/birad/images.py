"""Image-space utilities: PNG I/O, resizing, luma, Sobel gradients.

Images are float32 numpy arrays of shape [3, H, W] with values in [0, 1];
8-bit RGB PNG on disk, mapped linearly.
"""

from __future__ import annotations

from pathlib import Path

import cv2
import numpy as np
from PIL import Image


class ImageError(ValueError):
    pass


def check_image(img: np.ndarray) -> np.ndarray:
    if img.ndim != 3 or img.shape[0] != 3:
        raise ImageError(f"expected [3, H, W] image, got {img.shape}")
    if not np.isfinite(img).all():
        raise ImageError("image contains NaN or Inf")
    return img


def load_png(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        rgb = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return rgb.transpose(2, 0, 1)


def save_png(path: str | Path, img: np.ndarray) -> None:
    check_image(img)
    hwc = np.clip(img, 0.0, 1.0).transpose(1, 2, 0)
    data = (hwc * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(path, format="PNG")


_CV2_KERNELS = {
    "bicubic": cv2.INTER_CUBIC,
    "bilinear": cv2.INTER_LINEAR,
    "area": cv2.INTER_AREA,
}


def resize(img: np.ndarray, size_hw: tuple[int, int], kernel: str = "bicubic") -> np.ndarray:
    """Resize to (H, W) with the named interpolation kernel."""
    check_image(img)
    if kernel not in _CV2_KERNELS:
        raise ImageError(f"unknown resize kernel {kernel!r}")
    h, w = size_hw
    hwc = img.transpose(1, 2, 0)
    out = cv2.resize(hwc, (w, h), interpolation=_CV2_KERNELS[kernel])
    return np.ascontiguousarray(out.transpose(2, 0, 1), dtype=np.float32)


def resize_plane(plane: np.ndarray, size_hw: tuple[int, int], kernel: str = "area") -> np.ndarray:
    """Resize a single [H, W] plane."""
    if plane.ndim != 2:
        raise ImageError(f"expected [H, W] plane, got {plane.shape}")
    if kernel not in _CV2_KERNELS:
        raise ImageError(f"unknown resize kernel {kernel!r}")
    h, w = size_hw
    out = cv2.resize(plane.astype(np.float32), (w, h), interpolation=_CV2_KERNELS[kernel])
    return np.ascontiguousarray(out, dtype=np.float32)


def luma(img: np.ndarray) -> np.ndarray:
    """Rec. 601 luma, shape [H, W]."""
    check_image(img)
    return 0.299 * img[0] + 0.587 * img[1] + 0.114 * img[2]


_SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float32)
_SOBEL_Y = _SOBEL_X.T


def sobel_magnitude(channel: np.ndarray) -> np.ndarray:
    """Gradient magnitude of a single [H, W] channel via 3x3 Sobel kernels."""
    if channel.ndim != 2:
        raise ImageError(f"expected [H, W] channel, got {channel.shape}")
    src = channel.astype(np.float32)
    gx = cv2.filter2D(src, -1, _SOBEL_X, borderType=cv2.BORDER_REFLECT)
    gy = cv2.filter2D(src, -1, _SOBEL_Y, borderType=cv2.BORDER_REFLECT)
    return np.sqrt(gx * gx + gy * gy)
