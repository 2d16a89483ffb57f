"""Measurement tools: feature robustness, reference metrics, xi sweeps,
and adapter parameter accounting.

The feature-robustness study compares denoiser hidden states of a clean
image against its degraded version, per block, by cosine similarity.
PSNR and MS-SSIM are the usual reference-based metrics; the sharpness
proxy (mean Sobel gradient magnitude) stands in for learned perceptual
scores and is used only for ordering checks.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from scipy.ndimage import gaussian_filter

from .codec import ToyCodec
from .denoiser import (
    AdapterParams,
    Denoiser,
    DenoiserConfig,
    PromptEmbedding,
    empty_prompt,
    extract_block_features,
    self_attention_channels,
)
from .images import check_image, luma, sobel_magnitude
from .sampler import GuidanceConfig, restore
from .schedule import DiffusionSchedule


class AnalyzeError(ValueError):
    pass


# -- feature robustness ------------------------------------------------------


@dataclass(frozen=True)
class SimilarityEntry:
    label: str  # down0 / mid / up1 ...
    kind: str  # down | mid | up
    cosine: float


@dataclass(frozen=True)
class SimilarityReport:
    entries: tuple[SimilarityEntry, ...]
    spec_text: str

    def as_dict(self) -> dict:
        return {
            "spec": self.spec_text,
            "blocks": [
                {"label": e.label, "kind": e.kind, "cosine": e.cosine}
                for e in self.entries
            ],
        }


def cosine(a: torch.Tensor, b: torch.Tensor) -> float:
    if a.shape != b.shape:
        raise AnalyzeError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    fa = a.detach().double().flatten()
    fb = b.detach().double().flatten()
    na, nb = float(fa.norm()), float(fb.norm())
    if na == 0.0 or nb == 0.0:
        return 1.0 if na == nb else 0.0
    return float(torch.dot(fa, fb) / (na * nb))


def feature_similarity(
    clean: np.ndarray,
    degraded: np.ndarray,
    model: Denoiser,
    codec: ToyCodec,
    t: int = 0,
    spec_text: str = "",
) -> SimilarityReport:
    """Per-block cosine similarity between clean and degraded features.

    Features are extracted at t=0 by default: the comparison is about
    content robustness, not diffusion states.
    """
    check_image(clean)
    check_image(degraded)
    if clean.shape != degraded.shape:
        raise AnalyzeError(
            f"image shapes differ: {clean.shape} vs {degraded.shape}"
        )
    prompt = empty_prompt(model.cfg)
    with torch.no_grad():
        feats_c = extract_block_features(model, codec.encode(clean), t, prompt)
        feats_d = extract_block_features(model, codec.encode(degraded), t, prompt)
    entries = tuple(
        SimilarityEntry(label=fc.label, kind=fc.kind, cosine=cosine(fc.data, fd.data))
        for fc, fd in zip(feats_c, feats_d)
    )
    return SimilarityReport(entries=entries, spec_text=spec_text)


# -- reference metrics --------------------------------------------------------


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio against MAX=1; +inf for identical inputs."""
    if a.shape != b.shape:
        raise AnalyzeError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if mse == 0.0:
        return float("inf")
    return -10.0 * math.log10(mse)


_MSSSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
_SSIM_C1 = 0.01**2
_SSIM_C2 = 0.03**2
_SSIM_SIGMA = 1.5
# 11-tap window: radius 5 at sigma 1.5
_SSIM_TRUNCATE = 5.0 / 1.5


def _blur(x: np.ndarray) -> np.ndarray:
    return gaussian_filter(x, _SSIM_SIGMA, mode="reflect", truncate=_SSIM_TRUNCATE)


def _ssim_maps(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu_a, mu_b = _blur(a), _blur(b)
    var_a = _blur(a * a) - mu_a * mu_a
    var_b = _blur(b * b) - mu_b * mu_b
    cov = _blur(a * b) - mu_a * mu_b
    cs = (2.0 * cov + _SSIM_C2) / (var_a + var_b + _SSIM_C2)
    lum = (2.0 * mu_a * mu_b + _SSIM_C1) / (mu_a * mu_a + mu_b * mu_b + _SSIM_C1)
    return lum * cs, cs


def _halve(x: np.ndarray) -> np.ndarray:
    h, w = x.shape[-2] // 2 * 2, x.shape[-1] // 2 * 2
    x = x[..., :h, :w]
    return (x[..., 0::2, 0::2] + x[..., 0::2, 1::2] + x[..., 1::2, 0::2] + x[..., 1::2, 1::2]) / 4.0


def ms_ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Multi-scale SSIM with the standard 5-scale weighting, channel-averaged."""
    if a.shape != b.shape:
        raise AnalyzeError(f"shape mismatch: {a.shape} vs {b.shape}")
    check_image(a)
    check_image(b)
    if min(a.shape[1], a.shape[2]) < 2 ** (len(_MSSSIM_WEIGHTS) - 1):
        raise AnalyzeError(
            f"images must be at least {2 ** (len(_MSSSIM_WEIGHTS) - 1)} px per side"
        )
    xa = a.astype(np.float64)
    xb = b.astype(np.float64)
    score = 1.0
    for level, weight in enumerate(_MSSSIM_WEIGHTS):
        ssim_map, cs_map = _ssim_maps(xa, xb)
        if level < len(_MSSSIM_WEIGHTS) - 1:
            score *= max(float(cs_map.mean()), 0.0) ** weight
            xa, xb = _halve(xa), _halve(xb)
        else:
            score *= max(float(ssim_map.mean()), 0.0) ** weight
    return score


def sharpness(img: np.ndarray) -> float:
    """Mean Sobel gradient magnitude of the luma plane."""
    check_image(img)
    return float(sobel_magnitude(luma(img)).mean())


# -- xi sweep ------------------------------------------------------------------


XI_SWEEP_HEADER = ["xi", "mean_psnr", "mean_sharpness"]


def xi_sweep(
    pairs: list[tuple[np.ndarray, np.ndarray]],
    xis: list[float],
    model: Denoiser,
    adapter: AdapterParams,
    codec: ToyCodec,
    sched: DiffusionSchedule,
    plan_params: tuple[int, int],
    prompts: tuple[PromptEmbedding, PromptEmbedding],
    steps: int = 20,
    seed: int = 0,
    cfg_weight: float = 9.0,
    upscale: int = 4,
) -> list[dict]:
    """Restore every (clean, degraded) pair at each xi; aggregate metrics.

    The per-image seed does not depend on xi, so the starting noise is
    held fixed across the sweep and xi is the only variable.
    """
    if not pairs:
        raise AnalyzeError("empty evaluation set")
    rows = []
    for xi in xis:
        psnrs, sharps = [], []
        for idx, (clean, degraded) in enumerate(pairs):
            gcfg = GuidanceConfig(xi=xi, cfg_weight=cfg_weight)
            result = restore(
                degraded, model, adapter, codec, sched, plan_params, gcfg,
                prompts, steps=steps, seed=seed + idx, upscale=upscale,
            )
            if result.image.shape != clean.shape:
                raise AnalyzeError(
                    f"restored {result.image.shape} vs clean {clean.shape}: "
                    "pair dims must match after upscaling"
                )
            psnrs.append(psnr(clean, result.image))
            sharps.append(sharpness(result.image))
        rows.append(
            {
                "xi": xi,
                "mean_psnr": float(np.mean(psnrs)),
                "mean_sharpness": float(np.mean(sharps)),
            }
        )
    return rows


def write_xi_sweep_csv(rows: list[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=XI_SWEEP_HEADER)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in XI_SWEEP_HEADER})


# -- parameter accounting -------------------------------------------------------


def count_adapter_params(cfg: DenoiserConfig) -> int:
    """Adapter size by shape arithmetic: 3 square matrices per layer."""
    return sum(3 * ch * ch for ch in self_attention_channels(cfg))
