"""Quick probe: trained vs zero-init restoration PSNR across guidance thresholds.

Reuses the pilot run's artifacts in /tmp/birad_pilot to pick the restore
threshold for the frozen toy recipe without retraining.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from birad.analyze import psnr
from birad.codec import ToyCodec
from birad.degrade import apply_spec, parse_spec, with_seed
from birad.denoiser import (
    DenoiserConfig,
    empty_prompt,
    build_denoiser,
    init_adapter_params,
    load_adapter,
    load_backbone,
)
from birad.images import load_png, resize
from birad.sampler import GuidanceConfig, restore
from birad.schedule import make_schedule
from birad.seeds import derive_seed

COMBO = "blur:2|down:4:bicubic|noise:20|jpeg:50"
WORK = Path("/tmp/birad_pilot")


def main() -> None:
    cfg = DenoiserConfig()
    model = build_denoiser(cfg, seed=7)
    load_backbone(model, WORK / "adapter" / "backbone.bira")
    adapter = load_adapter(WORK / "adapter" / "adapter_final.bira")
    zero_adapter = init_adapter_params(model)
    codec = ToyCodec()
    sched = make_schedule()
    prompts = (empty_prompt(cfg), empty_prompt(cfg))

    eval_dir = WORK / "eval"
    names = sorted(p.name for p in eval_dir.glob("*.png"))
    combo = parse_spec(COMBO)

    rows = []
    for xi in [0.0, 0.25, 0.5, 0.75]:
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
        print(json.dumps(row))

    Path("/tmp/probe_xi.json").write_text(json.dumps(rows, indent=2))


if __name__ == "__main__":
    main()
