"""Miniature latent U-Net noise predictor with a plug-in adapter path.

The network is a small stand-in for a large pretrained latent-diffusion
backbone: stacked down/mid/up stages, each block a group-norm residual
conv followed by pre-norm self-attention and cross-attention on the
prompt embedding, with a sinusoidal timestep embedding injected per
block.

Three forward modes share one code path:
  plain    - ordinary noise prediction for a single latent.
  adapted  - the degraded latent and the diffused latent run as a
             stacked pair; at every self-attention layer the pair is
             split, the degraded branch gets plain self-attention, and
             the diffused branch gets the extended attention that adds
             the adapter term driven by degraded-feature queries.
  variant  - ablation paths that reuse base weights instead of adapter
             weights (queries swapped in place, or added as a branch).

The adapter owns no backbone parameter: it is a separate per-layer
key/value/output set keyed by self-attention layer index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from . import archive
from .attention import (
    AdapterLayerParams,
    AttentionWeights,
    bir_extended_attention,
    cross_attention_layer,
    init_adapter,
    self_attention_layer,
    variant1_attention,
    variant2_attention,
)

AdapterParams = dict[int, AdapterLayerParams]

PROMPT_TOKENS = 8


class DenoiserError(ValueError):
    pass


@dataclass(frozen=True)
class DenoiserConfig:
    base_channels: int = 32
    channel_multipliers: tuple[int, ...] = (1, 2, 4)
    blocks_per_stage: int = 1
    head_count: int = 4
    context_dim: int = 32
    latent_channels: int = 4

    def __post_init__(self):
        if min(
            self.base_channels,
            self.blocks_per_stage,
            self.head_count,
            self.context_dim,
            self.latent_channels,
        ) < 1:
            raise DenoiserError("all config fields must be positive")
        if not self.channel_multipliers or min(self.channel_multipliers) < 1:
            raise DenoiserError("need at least one positive channel multiplier")
        if self.base_channels % 2:
            raise DenoiserError("base_channels must be even (sinusoidal embedding)")
        for ch in self.stage_channels():
            if ch % self.head_count:
                raise DenoiserError(
                    f"stage width {ch} not divisible by head_count {self.head_count}"
                )

    def stage_channels(self) -> tuple[int, ...]:
        return tuple(self.base_channels * m for m in self.channel_multipliers)

    def spatial_divisor(self) -> int:
        return 2 ** (len(self.channel_multipliers) - 1)


def sd15_attention_config() -> DenoiserConfig:
    """Config whose self-attention widths match the SD-1.5 U-Net."""
    return DenoiserConfig(
        base_channels=320,
        channel_multipliers=(1, 2, 4),
        blocks_per_stage=2,
        head_count=8,
        context_dim=768,
        latent_channels=4,
    )


def self_attention_channels(cfg: DenoiserConfig) -> list[int]:
    """Width of every self-attention layer in forward order.

    Down stages carry blocks_per_stage layers each, the middle one, and
    up stages blocks_per_stage + 1 (they also digest the skip path).
    """
    chans = cfg.stage_channels()
    layers: list[int] = []
    for ch in chans:
        layers.extend([ch] * cfg.blocks_per_stage)
    layers.append(chans[-1])
    for ch in reversed(chans):
        layers.extend([ch] * (cfg.blocks_per_stage + 1))
    return layers


@dataclass(frozen=True)
class PromptEmbedding:
    data: torch.Tensor  # [tokens, context_dim]
    role: str  # positive | negative | empty

    def __post_init__(self):
        if self.data.ndim != 2:
            raise DenoiserError(f"prompt embedding must be rank 2, got {self.data.ndim}")
        if self.role not in ("positive", "negative", "empty"):
            raise DenoiserError(f"unknown prompt role {self.role!r}")
        if not torch.isfinite(self.data).all():
            raise DenoiserError("prompt embedding must be finite")


def empty_prompt(cfg: DenoiserConfig, tokens: int = PROMPT_TOKENS) -> PromptEmbedding:
    return PromptEmbedding(data=torch.zeros(tokens, cfg.context_dim), role="empty")


def prompt_embedding(
    text: str, cfg: DenoiserConfig, role: str, tokens: int = PROMPT_TOKENS
) -> PromptEmbedding:
    """Deterministic stand-in for a text encoder: hash the text to a seed."""
    from .seeds import derive_seed

    rng = np.random.default_rng(derive_seed(0, "prompt", text))
    data = rng.standard_normal((tokens, cfg.context_dim)).astype(np.float32)
    return PromptEmbedding(data=torch.from_numpy(data), role=role)


@dataclass(frozen=True)
class FeatureMap:
    label: str  # e.g. down0, mid, up2
    kind: str  # down | mid | up
    data: torch.Tensor  # [C, h, w]


def _norm_groups(channels: int) -> int:
    # at least two channels per group, or a [1, C, 1, 1] input has a
    # single value per normalization group and torch rejects it
    for g in (8, 4, 2):
        if channels % g == 0 and channels // g >= 2:
            return g
    return 1


class ResBlock(nn.Module):
    def __init__(self, ch_in: int, ch_out: int, time_dim: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(_norm_groups(ch_in), ch_in)
        self.conv1 = nn.Conv2d(ch_in, ch_out, 3, padding=1)
        self.time_proj = nn.Linear(time_dim, ch_out)
        self.norm2 = nn.GroupNorm(_norm_groups(ch_out), ch_out)
        self.conv2 = nn.Conv2d(ch_out, ch_out, 3, padding=1)
        self.skip = nn.Conv2d(ch_in, ch_out, 1) if ch_in != ch_out else nn.Identity()

    def forward(self, x: torch.Tensor, emb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(torch.nn.functional.silu(self.norm1(x)))
        h = h + self.time_proj(torch.nn.functional.silu(emb))[:, :, None, None]
        h = self.conv2(torch.nn.functional.silu(self.norm2(h)))
        return self.skip(x) + h


class SelfAttention(nn.Module):
    """Pre-norm residual self-attention that can host the adapter branch."""

    def __init__(self, channels: int, head_count: int, layer_index: int):
        super().__init__()
        self.layer_index = layer_index
        self.head_count = head_count
        self.norm = nn.LayerNorm(channels)
        self.w_q = nn.Parameter(torch.empty(channels, channels))
        self.w_k = nn.Parameter(torch.empty(channels, channels))
        self.w_v = nn.Parameter(torch.empty(channels, channels))
        self.w_o = nn.Parameter(torch.empty(channels, channels))

    def weights(self) -> AttentionWeights:
        return AttentionWeights(
            w_q=self.w_q, w_k=self.w_k, w_v=self.w_v, w_o=self.w_o,
            head_count=self.head_count,
        )

    def forward(
        self,
        tokens: torch.Tensor,
        mode: str = "plain",
        adapter_layer: AdapterLayerParams | None = None,
        variant: int | None = None,
    ) -> torch.Tensor:
        a = self.norm(tokens)
        w = self.weights()
        if mode == "plain":
            return tokens + self_attention_layer(a, w)
        # paired modes: row 0 is the degraded branch, row 1 the diffused one
        if tokens.shape[0] != 2:
            raise DenoiserError(f"paired attention expects a stacked pair, got batch {tokens.shape[0]}")
        z_deg, z_t = a[0:1], a[1:2]
        out_deg = self_attention_layer(z_deg, w)
        if mode == "adapted":
            out_t = bir_extended_attention(z_t, z_deg, w, adapter_layer)
        elif mode == "variant" and variant == 1:
            out_t = variant1_attention(z_t, z_deg, w)
        elif mode == "variant" and variant == 2:
            out_t = variant2_attention(z_t, z_deg, w)
        else:
            raise DenoiserError(f"unknown attention mode {mode!r} / variant {variant!r}")
        return tokens + torch.cat([out_deg, out_t], dim=0)


class CrossAttention(nn.Module):
    def __init__(self, channels: int, context_dim: int, head_count: int):
        super().__init__()
        self.head_count = head_count
        self.norm = nn.LayerNorm(channels)
        self.w_q = nn.Parameter(torch.empty(channels, channels))
        self.w_k = nn.Parameter(torch.empty(context_dim, channels))
        self.w_v = nn.Parameter(torch.empty(context_dim, channels))
        self.w_o = nn.Parameter(torch.empty(channels, channels))

    def forward(self, tokens: torch.Tensor, ctx: torch.Tensor) -> torch.Tensor:
        w = AttentionWeights(
            w_q=self.w_q, w_k=self.w_k, w_v=self.w_v, w_o=self.w_o,
            head_count=self.head_count,
        )
        ctx_b = ctx.unsqueeze(0).expand(tokens.shape[0], -1, -1)
        return tokens + cross_attention_layer(self.norm(tokens), ctx_b, w)


class Block(nn.Module):
    """ResBlock + self-attention + cross-attention at one width."""

    def __init__(
        self, ch_in: int, ch_out: int, time_dim: int, context_dim: int,
        head_count: int, layer_index: int,
    ):
        super().__init__()
        self.res = ResBlock(ch_in, ch_out, time_dim)
        self.self_attn = SelfAttention(ch_out, head_count, layer_index)
        self.cross_attn = CrossAttention(ch_out, context_dim, head_count)

    def forward(
        self,
        x: torch.Tensor,
        emb: torch.Tensor,
        ctx: torch.Tensor,
        mode: str = "plain",
        adapter_layer: AdapterLayerParams | None = None,
        variant: int | None = None,
    ) -> torch.Tensor:
        h = self.res(x, emb)
        b, c, hh, ww = h.shape
        tokens = h.permute(0, 2, 3, 1).reshape(b, hh * ww, c)
        tokens = self.self_attn(tokens, mode, adapter_layer, variant)
        tokens = self.cross_attn(tokens, ctx)
        return tokens.reshape(b, hh, ww, c).permute(0, 3, 1, 2)


class Denoiser(nn.Module):
    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        self.cfg = cfg
        chans = cfg.stage_channels()
        time_dim = cfg.base_channels * 4
        self.time_dim = time_dim
        self.time_mlp = nn.Sequential(
            nn.Linear(cfg.base_channels, time_dim), nn.SiLU(), nn.Linear(time_dim, time_dim)
        )
        self.time_embed_calls = 0  # instrumented: one embedding per forward

        self.conv_in = nn.Conv2d(cfg.latent_channels, chans[0], 3, padding=1)

        layer_index = 0

        def make_stage(n_blocks: int, ch_in: int, ch: int) -> nn.ModuleList:
            nonlocal layer_index
            blocks = []
            for b in range(n_blocks):
                blocks.append(
                    Block(ch_in if b == 0 else ch, ch, time_dim, cfg.context_dim,
                          cfg.head_count, layer_index)
                )
                layer_index += 1
            return nn.ModuleList(blocks)

        self.down_stages = nn.ModuleList()
        self.downsamples = nn.ModuleList()
        prev = chans[0]
        for i, ch in enumerate(chans):
            self.down_stages.append(make_stage(cfg.blocks_per_stage, prev, ch))
            prev = ch
            if i < len(chans) - 1:
                self.downsamples.append(nn.Conv2d(ch, ch, 3, stride=2, padding=1))

        self.mid_stage = make_stage(1, chans[-1], chans[-1])

        self.up_stages = nn.ModuleList()
        self.upsamples = nn.ModuleList()
        rev = list(reversed(chans))
        for i, ch in enumerate(rev):
            if i > 0:
                self.upsamples.append(nn.Conv2d(rev[i - 1], ch, 3, padding=1))
            self.up_stages.append(make_stage(cfg.blocks_per_stage + 1, ch, ch))

        self.norm_out = nn.GroupNorm(_norm_groups(chans[0]), chans[0])
        self.conv_out = nn.Conv2d(chans[0], cfg.latent_channels, 3, padding=1)

        self.self_attention_layers: list[SelfAttention] = [
            m for m in self.modules() if isinstance(m, SelfAttention)
        ]
        assert [l.layer_index for l in self.self_attention_layers] == list(
            range(len(self.self_attention_layers))
        )

    # -- forward machinery ------------------------------------------------

    def _embed_time(self, t: int, dtype: torch.dtype) -> torch.Tensor:
        self.time_embed_calls += 1
        half = self.cfg.base_channels // 2
        freqs = torch.exp(
            -math.log(10000.0) * torch.arange(half, dtype=dtype) / half
        )
        args = float(t) * freqs
        sin_cos = torch.cat([torch.cos(args), torch.sin(args)])
        return self.time_mlp(sin_cos.unsqueeze(0))

    def _check_input(self, x: torch.Tensor):
        if x.ndim != 3 or x.shape[0] != self.cfg.latent_channels:
            raise DenoiserError(
                f"latent must be [{self.cfg.latent_channels}, h, w], got {tuple(x.shape)}"
            )
        div = self.cfg.spatial_divisor()
        if x.shape[1] % div or x.shape[2] % div:
            raise DenoiserError(f"latent spatial dims must divide by {div}, got {tuple(x.shape[1:])}")

    def _run(
        self,
        x: torch.Tensor,  # [B, C, h, w]
        t: int,
        prompt: PromptEmbedding,
        mode: str,
        adapter: AdapterParams | None,
        variant: int | None,
        features: list[FeatureMap] | None,
    ) -> torch.Tensor:
        emb = self._embed_time(t, x.dtype).expand(x.shape[0], -1)
        ctx = prompt.data.to(x.dtype)

        def run_stage(stage: nn.ModuleList, h: torch.Tensor) -> torch.Tensor:
            for block in stage:
                layer = block.self_attn.layer_index
                ad = adapter[layer] if adapter is not None else None
                h = block(h, emb, ctx, mode, ad, variant)
            return h

        h = self.conv_in(x)
        skips = []
        for i, stage in enumerate(self.down_stages):
            h = run_stage(stage, h)
            if features is not None:
                features.append(FeatureMap(f"down{i}", "down", h[0].detach().clone()))
            skips.append(h)
            if i < len(self.downsamples):
                h = self.downsamples[i](h)
        h = run_stage(self.mid_stage, h)
        if features is not None:
            features.append(FeatureMap("mid", "mid", h[0].detach().clone()))
        for i, stage in enumerate(self.up_stages):
            if i > 0:
                h = torch.nn.functional.interpolate(h, scale_factor=2, mode="nearest")
                h = self.upsamples[i - 1](h)
            h = h + skips.pop()
            h = run_stage(stage, h)
            if features is not None:
                features.append(FeatureMap(f"up{i}", "up", h[0].detach().clone()))
        return self.conv_out(torch.nn.functional.silu(self.norm_out(h)))


def build_denoiser(cfg: DenoiserConfig, seed: int) -> Denoiser:
    """Construct and deterministically initialize from the seed."""
    model = Denoiser(cfg)
    gen = torch.Generator().manual_seed(seed & 0x7FFFFFFFFFFFFFFF)
    with torch.no_grad():
        for name, p in model.named_parameters():
            leaf = name.rsplit(".", 1)[-1]
            if leaf == "bias" or (p.ndim == 1 and leaf != "weight"):
                p.zero_()
            elif p.ndim == 1:  # norm scales
                p.fill_(1.0)
            elif name.endswith("conv_out.weight"):
                p.zero_()  # start as the zero predictor for stable training
            elif p.ndim == 4:
                fan_in = p.shape[1] * p.shape[2] * p.shape[3]
                p.normal_(0.0, 1.0 / math.sqrt(fan_in), generator=gen)
            elif leaf in ("w_q", "w_k", "w_v", "w_o"):
                p.normal_(0.0, 1.0 / math.sqrt(p.shape[0]), generator=gen)
            else:  # nn.Linear weight [out, in]
                p.normal_(0.0, 1.0 / math.sqrt(p.shape[1]), generator=gen)
    model.eval()
    return model


def parameter_manifest(model: Denoiser) -> dict[str, tuple[int, ...]]:
    return {name: tuple(p.shape) for name, p in model.named_parameters()}


def predict_noise(
    model: Denoiser, x_t: torch.Tensor, t: int, prompt: PromptEmbedding
) -> torch.Tensor:
    model._check_input(x_t)
    return model._run(x_t.unsqueeze(0), t, prompt, "plain", None, None, None)[0]


def _check_pair(model: Denoiser, x_deg: torch.Tensor, x_t: torch.Tensor):
    model._check_input(x_deg)
    model._check_input(x_t)
    if x_deg.shape != x_t.shape:
        raise DenoiserError(f"branch shapes differ: {tuple(x_deg.shape)} vs {tuple(x_t.shape)}")


def predict_noise_adapted(
    model: Denoiser,
    x_deg: torch.Tensor,
    x_t: torch.Tensor,
    t: int,
    prompt: PromptEmbedding,
    adapter: AdapterParams,
) -> torch.Tensor:
    """Noise prediction for x_t with degraded-feature injection.

    The pair [x_deg; x_t] runs stacked through every block so the
    degraded branch sees exactly the same timestep embedding; only the
    x_t branch's prediction is returned.
    """
    _check_pair(model, x_deg, x_t)
    n_layers = len(model.self_attention_layers)
    if set(adapter.keys()) != set(range(n_layers)):
        raise DenoiserError(
            f"adapter keys {sorted(adapter.keys())} do not match layers 0..{n_layers - 1}"
        )
    pair = torch.stack([x_deg, x_t])
    return model._run(pair, t, prompt, "adapted", adapter, None, None)[1]


def predict_noise_variant(
    model: Denoiser,
    x_deg: torch.Tensor,
    x_t: torch.Tensor,
    t: int,
    prompt: PromptEmbedding,
    variant: int,
) -> torch.Tensor:
    """Ablation forward: extended attention built from base weights only."""
    _check_pair(model, x_deg, x_t)
    if variant not in (1, 2):
        raise DenoiserError(f"variant must be 1 or 2, got {variant}")
    pair = torch.stack([x_deg, x_t])
    return model._run(pair, t, prompt, "variant", None, variant, None)[1]


def extract_block_features(
    model: Denoiser, x: torch.Tensor, t: int, prompt: PromptEmbedding
) -> list[FeatureMap]:
    model._check_input(x)
    features: list[FeatureMap] = []
    model._run(x.unsqueeze(0), t, prompt, "plain", None, None, features)
    return features


def init_adapter_params(model: Denoiser) -> AdapterParams:
    """Fresh adapter: cloned key/value, zero output projection per layer."""
    return {
        layer.layer_index: init_adapter(layer.weights())
        for layer in model.self_attention_layers
    }


def adapter_param_count(adapter: AdapterParams) -> int:
    return sum(
        p.w_k.numel() + p.w_v.numel() + p.w_o.numel() for p in adapter.values()
    )


# -- checkpoint I/O (named-tensor archive) --------------------------------


def save_backbone(model: Denoiser, path) -> None:
    arrays = {
        name: p.detach().cpu().numpy().astype(np.float32)
        for name, p in model.named_parameters()
    }
    archive.save_archive(path, arrays)


def load_backbone(model: Denoiser, path) -> None:
    arrays = archive.load_archive(path)
    own = dict(model.named_parameters())
    if set(arrays) != set(own):
        raise DenoiserError("backbone archive names do not match the model manifest")
    with torch.no_grad():
        for name, arr in arrays.items():
            if tuple(own[name].shape) != arr.shape:
                raise DenoiserError(f"shape mismatch for {name}: {arr.shape}")
            own[name].copy_(torch.from_numpy(arr))


def save_adapter(adapter: AdapterParams, path) -> None:
    arrays: dict[str, np.ndarray] = {}
    for k in sorted(adapter):
        layer = adapter[k]
        arrays[f"layer{k:03d}.w_k"] = layer.w_k.detach().cpu().numpy().astype(np.float32)
        arrays[f"layer{k:03d}.w_v"] = layer.w_v.detach().cpu().numpy().astype(np.float32)
        arrays[f"layer{k:03d}.w_o"] = layer.w_o.detach().cpu().numpy().astype(np.float32)
    archive.save_archive(path, arrays)


def load_adapter(path) -> AdapterParams:
    arrays = archive.load_archive(path)
    layers: dict[int, dict[str, torch.Tensor]] = {}
    for name, arr in arrays.items():
        prefix, leaf = name.split(".", 1)
        if not prefix.startswith("layer") or leaf not in ("w_k", "w_v", "w_o"):
            raise DenoiserError(f"unexpected adapter entry {name!r}")
        layers.setdefault(int(prefix[5:]), {})[leaf] = torch.from_numpy(arr.copy())
    adapter: AdapterParams = {}
    for k, parts in layers.items():
        if set(parts) != {"w_k", "w_v", "w_o"}:
            raise DenoiserError(f"adapter layer {k} incomplete in archive")
        adapter[k] = AdapterLayerParams(w_k=parts["w_k"], w_v=parts["w_v"], w_o=parts["w_o"])
    return adapter
