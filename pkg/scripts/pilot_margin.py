#!/usr/bin/env python3
"""Calibration run behind the end-to-end acceptance thresholds.

Trains the toy pipeline exactly the way tests/test_acceptance.py does
(same dataset sizes, seeds, steps, and learning rates), then measures:

  * restored-vs-bicubic and restored-vs-zero-adapter PSNR margins,
  * the xi-sweep PSNR/sharpness columns and their ordering,
  * per-block feature similarity under blur vs a shuffled-pixel baseline,
  * codec round-trip PSNR on smooth random images,
  * JPEG Q=100 round-trip error on a mosaic,
  * random-baseline feature cosines,
  * a 20-step DDIM oracle recovery error,

and writes a JSON report. The committed copy of this report is
docs/pilot_margin.json; the margins frozen into the acceptance tests come
from that file.
"""

import argparse
import json
import time
from pathlib import Path

import numpy as np
import torch
from scipy.ndimage import gaussian_filter

from birad.analyze import feature_similarity, ms_ssim, psnr, xi_sweep
from birad.codec import ToyCodec
from birad.degrade import DegradationSpec, GaussianBlur, apply_spec, parse_spec
from birad.denoiser import (
    DenoiserConfig,
    build_denoiser,
    empty_prompt,
    extract_block_features,
    init_adapter_params,
    load_adapter,
)
from birad.images import load_png, resize
from birad.sampler import GuidanceConfig, restore
from birad.schedule import ddim_recombine, estimate_x0, forward_diffuse, inference_timesteps, make_schedule
from birad.seeds import derive_seed
from birad.textures import write_dataset
from birad.train import TrainConfig, pretrain_backbone, train_loop

# Shared toy recipe; tests/test_acceptance.py mirrors these values.
SIZE = 64
CELL = 8
N_TRAIN = 120
N_EVAL = 20
MODEL_SEED = 7
COMBO = "blur:2|down:4:bicubic|noise:20|jpeg:50"
PRETRAIN_STEPS = 1500
PRETRAIN_LR = 1e-3
ADAPT_STEPS = 2000
ADAPT_LR = 1e-3
BATCH = 8
XIS = [0.0, 0.25, 0.5, 0.75, 0.9, 1.0]


def curve_summary(log_path: Path) -> dict:
    rows = log_path.read_text().strip().splitlines()[1:]
    losses = [float(r.split(",")[1]) for r in rows]
    k = max(1, min(50, len(losses) // 4))
    return {
        "steps": len(losses),
        "first": float(np.mean(losses[:k])),
        "last": float(np.mean(losses[-k:])),
    }


def eval_pairs(eval_dir: Path) -> list[tuple[np.ndarray, np.ndarray]]:
    pairs = []
    for i, path in enumerate(sorted(eval_dir.glob("*.png"))):
        clean = load_png(path)
        spec = parse_spec(COMBO, seed=derive_seed(17, "eval-spec", i))
        pairs.append((clean, apply_spec(clean, spec)))
    return pairs


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--work", default="/tmp/birad_pilot", help="scratch directory")
    ap.add_argument("--json-out", default="docs/pilot_margin.json")
    ap.add_argument("--pretrain-steps", type=int, default=PRETRAIN_STEPS)
    ap.add_argument("--adapt-steps", type=int, default=ADAPT_STEPS)
    args = ap.parse_args()

    work = Path(args.work)
    work.mkdir(parents=True, exist_ok=True)
    report: dict = {"recipe": {
        "size": SIZE, "cell": CELL, "n_train": N_TRAIN, "n_eval": N_EVAL,
        "model_seed": MODEL_SEED, "combo": COMBO, "batch": BATCH,
        "pretrain_steps": args.pretrain_steps, "pretrain_lr": PRETRAIN_LR,
        "adapt_steps": args.adapt_steps, "adapt_lr": ADAPT_LR,
    }}
    timings: dict = {}

    torch.manual_seed(0)
    sched = make_schedule()
    codec = ToyCodec()
    cfg = DenoiserConfig()

    # -- DDIM oracle recovery (no training needed) ---------------------------
    gen = torch.Generator().manual_seed(123)
    x0 = torch.randn((4, 8, 8), generator=gen)
    eps_star = torch.randn((4, 8, 8), generator=gen)
    ts = inference_timesteps(sched, 20)
    x = forward_diffuse(x0, ts[0], eps_star, sched)
    for t, t_prev in zip(ts, ts[1:] + [-1]):
        ab = sched.alpha_bars[t]
        eps_oracle = (x - np.sqrt(ab) * x0) / np.sqrt(1.0 - ab)
        x = ddim_recombine(estimate_x0(x, eps_oracle, t, sched), eps_oracle, t_prev, sched)
    report["ddim_oracle_max_abs"] = float((x - x0).abs().max())

    # -- codec round-trip on smooth images ------------------------------------
    # Cell-aligned textures: smooth at the codec's block scale (its design
    # target). Full-contrast generic GRFs recorded alongside for context.
    from birad.textures import mosaic_image as _mosaic
    worst_cells = min(
        psnr(img, codec.decode(codec.encode(img)))
        for img in (_mosaic(SIZE, CELL, seed=derive_seed(5, "smooth", i)) for i in range(20))
    )
    worst_grf = np.inf
    for i in range(20):
        rng = np.random.default_rng(derive_seed(5, "grf", i))
        field = gaussian_filter(rng.standard_normal((3, SIZE, SIZE)), sigma=(0, 20, 20), mode="reflect")
        lo, hi = field.min(), field.max()
        img = ((field - lo) / (hi - lo)).astype(np.float32)
        worst_grf = min(worst_grf, psnr(img, codec.decode(codec.encode(img))))
    report["codec_smooth_min_psnr"] = float(min(worst_cells, 999.0))
    report["codec_generic_grf_min_psnr"] = float(worst_grf)

    # -- JPEG Q=100 near-identity on a mosaic ---------------------------------
    from birad.degrade import Downsample, Jpeg, WhiteNoise
    from birad.textures import mosaic_image
    mos = mosaic_image(SIZE, CELL, seed=3)
    near_identity = DegradationSpec(
        (GaussianBlur(0.0), Downsample(1, "bicubic"), WhiteNoise(0.0), Jpeg(100)), seed=0
    )
    out = apply_spec(mos, near_identity)
    report["jpeg_q100_max_abs_255"] = float(np.abs(out - mos).max() * 255.0)

    # -- datasets --------------------------------------------------------------
    t0 = time.perf_counter()
    train_dir = work / "train"
    eval_dir = work / "eval"
    write_dataset(train_dir, N_TRAIN, size=SIZE, cell=CELL, seed=100)
    write_dataset(eval_dir, N_EVAL, size=SIZE, cell=CELL, seed=200)
    timings["datasets_s"] = time.perf_counter() - t0

    # -- backbone pretraining ---------------------------------------------------
    t0 = time.perf_counter()
    model = build_denoiser(cfg, seed=MODEL_SEED)
    pre_cfg = TrainConfig(
        dataset_root=str(train_dir), out_dir=str(work / "backbone"),
        patch_px=SIZE, batch_size=BATCH, total_steps=args.pretrain_steps,
        lr=PRETRAIN_LR, weight_decay=1e-2, seed=11,
    )
    pretrain_backbone(pre_cfg, model, codec, sched)
    timings["pretrain_s"] = time.perf_counter() - t0
    report["pretrain_curve"] = curve_summary(work / "backbone" / "pretrain_log.csv")

    # -- adapter fine-tuning -----------------------------------------------------
    t0 = time.perf_counter()
    ad_cfg = TrainConfig(
        dataset_root=str(train_dir), out_dir=str(work / "adapter"),
        patch_px=SIZE, batch_size=BATCH, total_steps=args.adapt_steps,
        lr=ADAPT_LR, weight_decay=1e-2, seed=13, checkpoint_every=1000,
        degradation=COMBO,
    )
    ckpt = train_loop(ad_cfg, model, codec, sched)
    timings["adapter_s"] = time.perf_counter() - t0
    report["adapter_curve"] = curve_summary(work / "adapter" / "log.csv")

    adapter = load_adapter(ckpt)
    zero_adapter = init_adapter_params(model)
    prompts = (empty_prompt(cfg), empty_prompt(cfg))

    # -- restoration margins -----------------------------------------------------
    t0 = time.perf_counter()
    pairs = eval_pairs(eval_dir)
    rows = []
    for i, (clean, degraded) in enumerate(pairs):
        gcfg = GuidanceConfig(xi=0.9, cfg_weight=9.0)
        seed = derive_seed(17, "restore", i)
        trained = restore(degraded, model, adapter, codec, sched, (64, 32), gcfg,
                          prompts, steps=20, seed=seed, upscale=4)
        zeroed = restore(degraded, model, zero_adapter, codec, sched, (64, 32), gcfg,
                         prompts, steps=20, seed=seed, upscale=4)
        bicubic = resize(degraded, clean.shape[1:], "bicubic")
        rows.append({
            "trained": psnr(clean, trained.image),
            "zero": psnr(clean, zeroed.image),
            "bicubic": psnr(clean, bicubic),
            "ms_ssim_trained": ms_ssim(clean, trained.image),
            "ms_ssim_bicubic": ms_ssim(clean, bicubic),
            "restore_ms": trained.stats["step_ms"],
        })
    timings["margins_s"] = time.perf_counter() - t0
    mean = lambda key: float(np.mean([r[key] for r in rows]))
    report["margins"] = {
        "mean_trained_psnr": mean("trained"),
        "mean_zero_psnr": mean("zero"),
        "mean_bicubic_psnr": mean("bicubic"),
        "margin_vs_bicubic": mean("trained") - mean("bicubic"),
        "margin_vs_zero": mean("trained") - mean("zero"),
        "mean_ms_ssim_trained": mean("ms_ssim_trained"),
        "mean_ms_ssim_bicubic": mean("ms_ssim_bicubic"),
        "per_image": rows,
    }

    # -- xi sweep -------------------------------------------------------------
    t0 = time.perf_counter()
    sweep = xi_sweep(pairs, XIS, model, adapter, codec, sched, (64, 32),
                     prompts, steps=20, seed=500)
    timings["xi_sweep_s"] = time.perf_counter() - t0
    report["xi_sweep"] = sweep
    psnrs = [r["mean_psnr"] for r in sweep]
    drops = [psnrs[i] - psnrs[i + 1] for i in range(len(psnrs) - 1)]
    report["xi_sweep_checks"] = {
        "non_increasing": all(d >= 0 for d in drops),
        "largest_drop_last": bool(drops and max(drops) == drops[-1]),
        "drops": drops,
    }

    # -- feature-robustness study ----------------------------------------------
    t0 = time.perf_counter()
    sims: dict = {}
    for sigma in (1.0, 2.0):
        per_block: dict = {}
        for i, (clean, _) in enumerate(pairs[:10]):
            blurred = apply_spec(clean, DegradationSpec((GaussianBlur(sigma),), seed=0))
            rep = feature_similarity(clean, blurred, model, codec)
            for e in rep.entries:
                per_block.setdefault(e.label, []).append(e.cosine)
        sims[f"sigma{sigma:g}"] = {k: float(np.mean(v)) for k, v in per_block.items()}
    shuffled: dict = {}
    for i, (clean, _) in enumerate(pairs[:10]):
        rng = np.random.default_rng(derive_seed(23, "shuffle", i))
        flat = clean.reshape(3, -1)
        perm = rng.permutation(flat.shape[1])
        shuf = flat[:, perm].reshape(clean.shape)
        rep = feature_similarity(clean, shuf, model, codec)
        for e in rep.entries:
            shuffled.setdefault(e.label, []).append(e.cosine)
    sims["shuffled"] = {k: float(np.mean(v)) for k, v in shuffled.items()}
    report["feature_similarity"] = sims
    blocks = list(sims["sigma1"])
    report["feature_checks"] = {
        "blur_above_shuffled_all_blocks": all(
            sims[s][b] > sims["shuffled"][b] for s in ("sigma1", "sigma2") for b in blocks
        ),
        "monotone_per_block": {b: sims["sigma1"][b] > sims["sigma2"][b] for b in blocks},
    }
    timings["features_s"] = time.perf_counter() - t0

    # -- random-baseline cosines --------------------------------------------------
    clean = pairs[0][0]
    feats = extract_block_features(model, codec.encode(clean), 0, empty_prompt(cfg))
    rng = np.random.default_rng(42)
    rand_cos = {}
    for f in feats:
        a = f.data.flatten().numpy().astype(np.float64)
        draws = []
        for _ in range(5):
            r = rng.standard_normal(a.shape)
            r -= (r @ a) / (a @ a) * a
            draws.append(abs(float(np.dot(a, r) / (np.linalg.norm(a) * np.linalg.norm(r)))))
        rand_cos[f.label] = max(draws)
    report["random_baseline_abs_cos_max"] = rand_cos

    report["timings_s"] = {k: round(v, 1) for k, v in timings.items()}
    out_path = Path(args.json_out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(json.dumps(report, indent=2))
    print(json.dumps(report, indent=2))


if __name__ == "__main__":
    main()
