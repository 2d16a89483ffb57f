"""Second calibration pass: stronger backbone, dual sweep over xi.

Runs the exact recipe the acceptance suite would run (fresh pretrain, fresh
adapter training, fixed seeds) and reports trained vs zero-init vs bicubic
PSNR at every guidance threshold, plus the drop table for the ordering check.
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
from birad.train import TrainConfig, pretrain_backbone, train_loop

COMBO = "blur:2|down:4:bicubic|noise:20|jpeg:50"
WORK = Path("/tmp/birad_cal2")
DATA = Path("/tmp/birad_pilot")  # reuse pilot datasets
XIS = [0.0, 0.25, 0.5, 0.75, 0.9, 1.0]
PRETRAIN_STEPS = 8000
ADAPT_STEPS = 2000


def main() -> None:
    WORK.mkdir(parents=True, exist_ok=True)
    report: dict = {"pretrain_steps": PRETRAIN_STEPS, "adapt_steps": ADAPT_STEPS}
    codec = ToyCodec()
    sched = make_schedule()
    cfg = DenoiserConfig()
    model = build_denoiser(cfg, seed=7)

    t0 = time.time()
    pre_cfg = TrainConfig(
        dataset_root=str(DATA / "train"), out_dir=str(WORK / "backbone"),
        patch_px=64, batch_size=8, total_steps=PRETRAIN_STEPS, lr=1e-3,
        seed=11, checkpoint_every=PRETRAIN_STEPS,
    )
    pretrain_backbone(pre_cfg, model, codec, sched)
    report["pretrain_s"] = round(time.time() - t0, 1)

    t0 = time.time()
    ad_cfg = TrainConfig(
        dataset_root=str(DATA / "train"), out_dir=str(WORK / "adapter"),
        patch_px=64, batch_size=8, total_steps=ADAPT_STEPS, lr=1e-3,
        seed=13, checkpoint_every=ADAPT_STEPS, degradation=COMBO,
    )
    ckpt = train_loop(ad_cfg, model, codec, sched)
    report["adapter_s"] = round(time.time() - t0, 1)
    adapter = load_adapter(ckpt)
    zero_adapter = init_adapter_params(model)
    prompts = (empty_prompt(cfg), empty_prompt(cfg))

    eval_dir = DATA / "eval"
    names = sorted(p.name for p in eval_dir.glob("*.png"))
    combo = parse_spec(COMBO)

    t0 = time.time()
    rows = []
    for xi in XIS:
        t_psnrs, z_psnrs, b_psnrs = [], [], []
        for i, name in enumerate(names):
            clean = load_png(eval_dir / name)
            spec = with_seed(combo, derive_seed(17, "eval-spec", i))
            degraded = apply_spec(clean, spec)
            seed = derive_seed(17, "restore", i)
            gcfg = GuidanceConfig(xi=xi, cfg_weight=9.0)
            t = restore(degraded, model, adapter, codec, sched, (64, 32), gcfg,
                        prompts, steps=20, seed=seed, upscale=4)
            z = restore(degraded, model, zero_adapter, codec, sched, (64, 32), gcfg,
                        prompts, steps=20, seed=seed, upscale=4)
            bicubic = resize(degraded, clean.shape[1:], "bicubic")
            t_psnrs.append(psnr(clean, t.image))
            z_psnrs.append(psnr(clean, z.image))
            b_psnrs.append(psnr(clean, bicubic))
        row = {
            "xi": xi,
            "trained": float(np.mean(t_psnrs)),
            "zero": float(np.mean(z_psnrs)),
            "bicubic": float(np.mean(b_psnrs)),
        }
        row["margin_vs_bicubic"] = row["trained"] - row["bicubic"]
        row["margin_vs_zero"] = row["trained"] - row["zero"]
        rows.append(row)
        print(json.dumps(row), flush=True)
    report["sweep_s"] = round(time.time() - t0, 1)
    report["rows"] = rows

    trained_curve = [r["trained"] for r in rows]
    drops = [a - b for a, b in zip(trained_curve, trained_curve[1:])]
    report["drops"] = drops
    report["non_increasing"] = all(d >= 0 for d in drops)
    report["largest_drop_last"] = max(drops) == drops[-1]

    (WORK / "calibrate2.json").write_text(json.dumps(report, indent=2))
    print(json.dumps({k: v for k, v in report.items() if k != "rows"}, indent=2))


if __name__ == "__main__":
    main()
