"""Adapter fine-tuning on a frozen backbone, plus backbone pretraining.

The fine-tuning loop mirrors the usual diffusion recipe: sample a clean
patch, degrade it, encode both to latents, diffuse the clean latent to a
uniform random timestep, and regress the injected noise through the
adapted forward pass with an empty prompt. Only the adapter parameters
receive gradients or optimizer updates; the backbone is frozen and its
archive hash must not move.

The optimizer is the decoupled-weight-decay variant of Adam, written
out from its published update equations rather than taken from a
framework, so the update rule under test is exactly the one documented
here:

    m <- b1 m + (1 - b1) g        v <- b2 v + (1 - b2) g^2
    p <- p - lr (m_hat / (sqrt(v_hat) + eps) + wd p)

with bias-corrected m_hat, v_hat and defaults b1=0.9, b2=0.999,
eps=1e-8.

Everything is seeded per (step, item) so an interrupted run resumed
from a checkpoint replays the identical batch stream.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .codec import ToyCodec
from .degrade import DegradationSpec, apply_spec, parse_spec, sample_spec, with_seed
from .denoiser import (
    AdapterParams,
    Denoiser,
    PromptEmbedding,
    empty_prompt,
    init_adapter_params,
    load_adapter,
    predict_noise_adapted,
    save_adapter,
    save_backbone,
)
from .images import load_png, resize
from .schedule import DiffusionSchedule, forward_diffuse
from .seeds import derive_seed
from . import archive


class TrainError(RuntimeError):
    pass


# Reference-scale settings from the source recipe, kept for documentation;
# the dataclass defaults below are the toy-scale ones actually used here.
PAPER_SCALE = {
    "patch_px": 512,
    "batch_size": 4,
    "accum_steps": 4,
    "lr": 1e-5,
    "weight_decay": 1e-2,
}


@dataclass(frozen=True)
class TrainConfig:
    dataset_root: str
    out_dir: str
    patch_px: int = 64
    batch_size: int = 8
    accum_steps: int = 1
    total_steps: int = 2000
    lr: float = 1e-5
    weight_decay: float = 1e-2
    seed: int = 0
    checkpoint_every: int = 500
    degradation: str | None = None  # fixed spec string; None samples per item
    high_t_bias: float = 0.0  # fraction of items drawn from the top 40% of timesteps

    def __post_init__(self):
        if min(
            self.patch_px, self.batch_size, self.accum_steps,
            self.total_steps, self.checkpoint_every,
        ) < 1:
            raise TrainError("all size/count fields must be positive")
        if self.lr <= 0 or self.weight_decay < 0:
            raise TrainError("need lr > 0 and weight_decay >= 0")
        if not 0.0 <= self.high_t_bias <= 1.0:
            raise TrainError("high_t_bias must lie in [0, 1]")


@dataclass
class TrainItem:
    x0: torch.Tensor
    x_deg: torch.Tensor
    t: int
    eps: torch.Tensor


class AdamW:
    """Decoupled-weight-decay Adam over a named parameter dict."""

    def __init__(
        self,
        params: dict[str, torch.Tensor],
        lr: float,
        weight_decay: float,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps
        self.step_count = 0
        self.m = {n: torch.zeros_like(p) for n, p in params.items()}
        self.v = {n: torch.zeros_like(p) for n, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    @torch.no_grad()
    def step(self) -> None:
        self.step_count += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1**self.step_count
        c2 = 1.0 - b2**self.step_count
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[name].mul_(b1).add_(g, alpha=1.0 - b1)
            self.v[name].mul_(b2).addcmul_(g, g, value=1.0 - b2)
            m_hat = self.m[name] / c1
            v_hat = self.v[name] / c2
            p.sub_(self.lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * p))

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {"step_count": np.array([self.step_count], dtype=np.float32)}
        for name in self.params:
            out[f"m.{name}"] = self.m[name].detach().cpu().numpy().astype(np.float32)
            out[f"v.{name}"] = self.v[name].detach().cpu().numpy().astype(np.float32)
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.step_count = int(arrays["step_count"][0])
        for name in self.params:
            self.m[name] = torch.from_numpy(arrays[f"m.{name}"].copy())
            self.v[name] = torch.from_numpy(arrays[f"v.{name}"].copy())


def adapter_named_tensors(adapter: AdapterParams) -> dict[str, torch.Tensor]:
    """Flat name -> tensor view of the adapter, matching the archive naming."""
    out: dict[str, torch.Tensor] = {}
    for k in sorted(adapter):
        layer = adapter[k]
        out[f"layer{k:03d}.w_k"] = layer.w_k
        out[f"layer{k:03d}.w_v"] = layer.w_v
        out[f"layer{k:03d}.w_o"] = layer.w_o
    return out


def trainable_adapter(model: Denoiser) -> AdapterParams:
    adapter = init_adapter_params(model)
    for layer in adapter.values():
        layer.w_k.requires_grad_(True)
        layer.w_v.requires_grad_(True)
        layer.w_o.requires_grad_(True)
    return adapter


def freeze_backbone(model: Denoiser) -> None:
    for p in model.parameters():
        p.requires_grad_(False)


# -- data ------------------------------------------------------------------


def load_dataset(root: str | Path) -> list[np.ndarray]:
    """All PNGs under the root; a manifest.txt (one relative path per line)
    pins the ordering when present."""
    root = Path(root)
    manifest = root / "manifest.txt"
    if manifest.exists():
        paths = [root / line.strip() for line in manifest.read_text().splitlines() if line.strip()]
    else:
        paths = sorted(root.rglob("*.png"))
    if not paths:
        raise TrainError(f"no PNG images under {root}")
    return [load_png(p) for p in paths]


def make_pair(
    clean_patch: np.ndarray,
    rng: np.random.Generator,
    codec: ToyCodec,
    spec: DegradationSpec | None = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Encode a clean patch and its degraded-then-upsampled counterpart."""
    _, h, w = clean_patch.shape
    if h != w:
        raise TrainError(f"patch must be square, got ({h}, {w})")
    if spec is None:
        spec = sample_spec(rng)
    else:
        spec = with_seed(spec, int(rng.integers(0, 2**31 - 1)))
    degraded = apply_spec(clean_patch, spec)
    if degraded.shape[1:] != (h, w):
        degraded = resize(degraded, (h, w), "bicubic")
    x0 = codec.encode(clean_patch)
    x_deg = codec.encode(degraded)
    return x0, x_deg


def _crop(img: np.ndarray, patch: int, rng: np.random.Generator) -> np.ndarray:
    _, h, w = img.shape
    if h < patch or w < patch:
        raise TrainError(f"image ({h}, {w}) smaller than patch {patch}")
    y = int(rng.integers(0, h - patch + 1))
    x = int(rng.integers(0, w - patch + 1))
    return img[:, y : y + patch, x : x + patch]


def make_batch(
    images: list[np.ndarray],
    cfg: TrainConfig,
    codec: ToyCodec,
    sched: DiffusionSchedule,
    step: int,
) -> list[TrainItem]:
    """Deterministic batch for a given step index (seeded, resume-safe)."""
    fixed = parse_spec(cfg.degradation) if cfg.degradation is not None else None
    items = []
    for i in range(cfg.batch_size * cfg.accum_steps):
        rng = np.random.default_rng(derive_seed(cfg.seed, "batch", step, i))
        img = images[int(rng.integers(0, len(images)))]
        patch = _crop(img, cfg.patch_px, rng)
        x0, x_deg = make_pair(patch, rng, codec, fixed)
        # Image structure is decided at high noise levels; a biased timestep
        # mixture spends more capacity there without abandoning low-t coverage.
        # The short-circuit keeps bias-free batches draw-compatible.
        if cfg.high_t_bias > 0.0 and rng.random() < cfg.high_t_bias:
            t = int(rng.integers(int(0.6 * sched.T), sched.T))
        else:
            t = int(rng.integers(0, sched.T))
        gen = torch.Generator().manual_seed(derive_seed(cfg.seed, "eps", step, i))
        eps = torch.randn(x0.shape, generator=gen)
        items.append(TrainItem(x0=x0, x_deg=x_deg, t=t, eps=eps))
    return items


# -- loss and steps ---------------------------------------------------------


def loss(
    model: Denoiser,
    adapter: AdapterParams,
    x0: torch.Tensor,
    x_deg: torch.Tensor,
    t: int,
    eps: torch.Tensor,
    prompt: PromptEmbedding,
    sched: DiffusionSchedule,
) -> torch.Tensor:
    """Noise-regression MSE through the adapted forward pass."""
    x_t = forward_diffuse(x0, t, eps, sched)
    pred = predict_noise_adapted(model, x_deg, x_t, t, prompt, adapter)
    return ((pred - eps) ** 2).mean()


@dataclass
class TrainState:
    model: Denoiser
    adapter: AdapterParams
    opt: AdamW
    step: int = 0


def train_step(
    state: TrainState,
    batch: list[TrainItem],
    cfg: TrainConfig,
    sched: DiffusionSchedule,
    prompt: PromptEmbedding,
) -> tuple[TrainState, float]:
    """One optimizer step over accum_steps micro-batches."""
    if len(batch) != cfg.batch_size * cfg.accum_steps:
        raise TrainError(
            f"batch of {len(batch)} does not fill {cfg.accum_steps} x {cfg.batch_size}"
        )
    state.opt.zero_grad()
    total = 0.0
    for a in range(cfg.accum_steps):
        chunk = batch[a * cfg.batch_size : (a + 1) * cfg.batch_size]
        chunk_loss = sum(
            loss(state.model, state.adapter, it.x0, it.x_deg, it.t, it.eps, prompt, sched)
            for it in chunk
        ) / len(chunk)
        (chunk_loss / cfg.accum_steps).backward()
        total += float(chunk_loss.detach())
    value = total / cfg.accum_steps
    if not math.isfinite(value):
        raise TrainError(f"non-finite loss {value} at step {state.step}")
    state.opt.step()
    state.step += 1
    return state, value


def _checkpoint(state: TrainState, out_dir: Path, tag: str) -> Path:
    path = out_dir / f"adapter_{tag}.bira"
    save_adapter(state.adapter, path)
    archive.save_archive(out_dir / f"optim_{tag}.bira", state.opt.state_arrays())
    return path


def train_loop(
    cfg: TrainConfig,
    model: Denoiser,
    codec: ToyCodec,
    sched: DiffusionSchedule,
    resume_from: str | Path | None = None,
) -> Path:
    """Run adapter fine-tuning to completion; returns the final checkpoint."""
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    images = load_dataset(cfg.dataset_root)

    freeze_backbone(model)
    save_backbone(model, out_dir / "backbone.bira")

    if resume_from is not None:
        adapter = load_adapter(resume_from)
        for layer in adapter.values():
            layer.w_k.requires_grad_(True)
            layer.w_v.requires_grad_(True)
            layer.w_o.requires_grad_(True)
    else:
        adapter = trainable_adapter(model)

    opt = AdamW(adapter_named_tensors(adapter), cfg.lr, cfg.weight_decay)
    start_step = 0
    if resume_from is not None:
        optim_path = Path(str(resume_from).replace("adapter_", "optim_"))
        if optim_path.exists():
            opt.load_state_arrays(archive.load_archive(optim_path))
            start_step = opt.step_count

    state = TrainState(model=model, adapter=adapter, opt=opt, step=start_step)
    prompt = empty_prompt(model.cfg)

    log_path = out_dir / "log.csv"
    log_mode = "a" if resume_from is not None and log_path.exists() else "w"
    with open(log_path, log_mode, newline="") as fh:
        writer = csv.writer(fh)
        if log_mode == "w":
            writer.writerow(["step", "loss", "lr", "wall_time_ms"])
        for step in range(start_step, cfg.total_steps):
            begin = time.perf_counter()
            batch = make_batch(images, cfg, codec, sched, step)
            state, value = train_step(state, batch, cfg, sched, prompt)
            writer.writerow(
                [step, f"{value:.6f}", cfg.lr, f"{(time.perf_counter() - begin) * 1000.0:.1f}"]
            )
            if state.step % cfg.checkpoint_every == 0:
                _checkpoint(state, out_dir, f"{state.step:06d}")
    return _checkpoint(state, out_dir, "final")


# -- backbone pretraining ----------------------------------------------------


def pretrain_backbone(
    cfg: TrainConfig,
    model: Denoiser,
    codec: ToyCodec,
    sched: DiffusionSchedule,
) -> Path:
    """Plain diffusion training of all backbone parameters on clean patches.

    This builds the frozen starting point that adapter fine-tuning assumes;
    the timestep is shared across a batch so each micro-batch is one
    stacked forward pass.
    """
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    images = load_dataset(cfg.dataset_root)
    for p in model.parameters():
        p.requires_grad_(True)
    opt = AdamW(
        {n: p for n, p in model.named_parameters()}, cfg.lr, cfg.weight_decay
    )
    prompt = empty_prompt(model.cfg)
    model.train()
    log_path = out_dir / "pretrain_log.csv"
    with open(log_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss", "lr", "wall_time_ms"])
        for step in range(cfg.total_steps):
            begin = time.perf_counter()
            rng = np.random.default_rng(derive_seed(cfg.seed, "pre-batch", step))
            x0 = torch.stack(
                [
                    codec.encode(_crop(images[int(rng.integers(0, len(images)))], cfg.patch_px, rng))
                    for _ in range(cfg.batch_size)
                ]
            )
            t = int(rng.integers(0, sched.T))
            gen = torch.Generator().manual_seed(derive_seed(cfg.seed, "pre-eps", step))
            eps = torch.randn(x0.shape, generator=gen)
            x_t = forward_diffuse(x0, t, eps, sched)
            opt.zero_grad()
            pred = model._run(x_t, t, prompt, "plain", None, None, None)
            batch_loss = ((pred - eps) ** 2).mean()
            value = float(batch_loss.detach())
            if not math.isfinite(value):
                raise TrainError(f"non-finite pretraining loss at step {step}")
            batch_loss.backward()
            opt.step()
            writer.writerow(
                [step, f"{value:.6f}", cfg.lr, f"{(time.perf_counter() - begin) * 1000.0:.1f}"]
            )
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    save_backbone(model, out_dir / "backbone.bira")
    return out_dir / "backbone.bira"
