"""Fifth calibration pass: generic backbone, task-specific adapter.

Timestep-biased pretraining (fourth pass) did not improve structure
retention at high guidance thresholds, so the zero-vs-trained margin
cannot come from that regime. This pass attacks the low-threshold
regime instead: pretrain the backbone on continuous mosaics only, so
its prior learns block geometry but not the benchmark palette (any
palette in the corpus, even a different granularity, shares the 0.1
and 0.9 anchors and would snap the task colors for free). Palette
statistics then enter solely through the adapter's training set, and
the trained-vs-zero margin measures exactly that learned prior.
"""

from __future__ import annotations

import json
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from birad.analyze import psnr
from birad.codec import ToyCodec
from birad.degrade import apply_spec, parse_spec, with_seed
from birad.denoiser import (
    DenoiserConfig,
    build_denoiser,
    empty_prompt,
    init_adapter_params,
    load_adapter,
)
from birad.images import load_png, resize
from birad.sampler import GuidanceConfig, restore
from birad.schedule import make_schedule
from birad.seeds import derive_seed
from birad.textures import write_dataset
from birad.train import TrainConfig, pretrain_backbone, train_loop

COMBO = "blur:2|down:4:bicubic|noise:20|jpeg:50"
WORK = Path("/tmp/birad_b5")
XIS = [0.0, 0.25, 0.5, 0.75, 0.9, 1.0]
PRETRAIN_STEPS = 20000
ADAPT_STEPS = 2000



def sweep_row(xi, steps, names, eval_dir, model, adapter, zero_adapter, codec,
              sched, prompts, combo, tag):
    t_psnrs, z_psnrs, b_psnrs = [], [], []
    for i, name in enumerate(names):
        clean = load_png(eval_dir / name)
        spec = with_seed(combo, derive_seed(17, "eval-spec", i))
        degraded = apply_spec(clean, spec)
        seed = derive_seed(17, "restore", i)
        gcfg = GuidanceConfig(xi=xi, cfg_weight=9.0)
        t = restore(degraded, model, adapter, codec, sched, (64, 32), gcfg,
                    prompts, steps=steps, seed=seed, upscale=4)
        z = restore(degraded, model, zero_adapter, codec, sched, (64, 32), gcfg,
                    prompts, steps=steps, seed=seed, upscale=4)
        bicubic = resize(degraded, clean.shape[1:], "bicubic")
        t_psnrs.append(psnr(clean, t.image))
        z_psnrs.append(psnr(clean, z.image))
        b_psnrs.append(psnr(clean, bicubic))
    row = {
        "tag": tag,
        "xi": xi,
        "steps": steps,
        "trained": float(np.mean(t_psnrs)),
        "zero": float(np.mean(z_psnrs)),
        "bicubic": float(np.mean(b_psnrs)),
    }
    row["margin_vs_bicubic"] = row["trained"] - row["bicubic"]
    row["margin_vs_zero"] = row["trained"] - row["zero"]
    print(json.dumps(row), flush=True)
    return row


def main() -> None:
    WORK.mkdir(parents=True, exist_ok=True)
    report: dict = {
        "pretrain_steps": PRETRAIN_STEPS,
        "adapt_steps": ADAPT_STEPS,
        "pretrain_corpus": "continuous mosaics, 160 images, seed 301",
        "adapter_corpus": "levels 2, 120 images",
    }
    write_dataset(WORK / "pre", 160, size=64, cell=8, seed=301)
    write_dataset(WORK / "train", 120, size=64, cell=8, seed=101, levels=2)
    write_dataset(WORK / "eval", 20, size=64, cell=8, seed=202, levels=2)

    codec = ToyCodec()
    sched = make_schedule()
    cfg = DenoiserConfig()
    model = build_denoiser(cfg, seed=7)

    t0 = time.time()
    pre_cfg = TrainConfig(
        dataset_root=str(WORK / "pre"), out_dir=str(WORK / "backbone"),
        patch_px=64, batch_size=8, total_steps=PRETRAIN_STEPS, lr=1e-3,
        seed=11, checkpoint_every=PRETRAIN_STEPS,
    )
    pretrain_backbone(pre_cfg, model, codec, sched)
    report["pretrain_s"] = round(time.time() - t0, 1)
    print(json.dumps({"pretrain_s": report["pretrain_s"]}), flush=True)

    adapters = {}
    for tag, lr in [("lr1e-3", 1e-3), ("lr2e-3", 2e-3)]:
        t0 = time.time()
        ad_cfg = TrainConfig(
            dataset_root=str(WORK / "train"), out_dir=str(WORK / f"adapter_{tag}"),
            patch_px=64, batch_size=8, total_steps=ADAPT_STEPS, lr=lr,
            seed=13, checkpoint_every=ADAPT_STEPS, degradation=COMBO,
        )
        ckpt = train_loop(ad_cfg, model, codec, sched)
        adapters[tag] = load_adapter(ckpt)
        report[f"adapter_s_{tag}"] = round(time.time() - t0, 1)
        print(json.dumps({f"adapter_s_{tag}": report[f"adapter_s_{tag}"]}), flush=True)

    zero_adapter = init_adapter_params(model)
    prompts = (empty_prompt(cfg), empty_prompt(cfg))
    eval_dir = WORK / "eval"
    names = sorted(p.name for p in eval_dir.glob("*.png"))
    combo = parse_spec(COMBO)

    t0 = time.time()
    rows = []
    for tag, adapter in adapters.items():
        for xi in XIS:
            rows.append(sweep_row(xi, 20, names, eval_dir, model, adapter,
                                  zero_adapter, codec, sched, prompts, combo, tag))
    for tag, adapter in adapters.items():
        for xi in [0.0, 0.25, 0.5]:
            rows.append(sweep_row(xi, 50, names, eval_dir, model, adapter,
                                  zero_adapter, codec, sched, prompts, combo, tag))
    report["sweep_s"] = round(time.time() - t0, 1)
    report["rows"] = rows

    for tag in adapters:
        curve = [r["trained"] for r in rows if r["tag"] == tag and r["steps"] == 20]
        drops = [curve[i] - curve[i + 1] for i in range(len(curve) - 1)]
        report[f"drops_{tag}"] = drops
        report[f"non_increasing_{tag}"] = bool(all(d >= 0 for d in drops))
        report[f"largest_drop_last_{tag}"] = bool(np.argmax(drops) == len(drops) - 1)

    (WORK / "calibrate5.json").write_text(json.dumps(report, indent=2))
    print(json.dumps({k: v for k, v in report.items() if k != "rows"}, indent=2))


if __name__ == "__main__":
    main()
