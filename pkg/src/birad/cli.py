"""Command-line surface: batch degradation, training, restoration, analysis.

Configuration: every sub-command resolves its settings from, in rising
priority, built-in defaults, a JSON config file of flat dotted keys
(--config), repeated --set key=value overrides, and explicit flags.
Each run writes a manifest.json echoing the resolved configuration.

Randomness: one --seed feeds everything; per-image and per-step seeds
are split from it by hashing the base seed with string labels and
counters (see seeds.derive_seed), so outputs are independent of worker
count and iteration order.

A model directory bundles model.json (architecture, codec, schedule,
prompt texts) with backbone.bira weights and optional adapter archives:

    init-model  -> fresh seeded backbone
    train --mode backbone -> pretrained backbone (plain diffusion)
    train --mode adapter  -> adapter fine-tuning on the frozen backbone
    restore / analyze     -> consume the bundle
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .analyze import (
    count_adapter_params,
    feature_similarity,
    ms_ssim,
    psnr,
    write_xi_sweep_csv,
    xi_sweep,
)
from .codec import ToyCodec
from .degrade import apply_spec, format_spec, parse_spec, sample_spec, with_seed
from .denoiser import (
    DenoiserConfig,
    build_denoiser,
    empty_prompt,
    init_adapter_params,
    load_adapter,
    load_backbone,
    prompt_embedding,
    save_backbone,
)
from .images import load_png, save_png
from .sampler import GuidanceConfig, restore
from .schedule import make_schedule
from .seeds import derive_seed
from .train import TrainConfig, pretrain_backbone, train_loop


class CliError(ValueError):
    pass


DEFAULT_POSITIVE = "sharp, clean, detailed, high quality"
DEFAULT_NEGATIVE = "blurry, noisy, compressed, low quality"

MODEL_DEFAULTS = {
    "denoiser.base_channels": 32,
    "denoiser.channel_multipliers": [1, 2, 4],
    "denoiser.blocks_per_stage": 1,
    "denoiser.head_count": 4,
    "denoiser.context_dim": 32,
    "denoiser.latent_channels": 4,
    "codec.scale": 8,
    "codec.basis_seed": 1234,
    "codec.latent_scale": 1.0,
    "schedule.T": 1000,
    "schedule.beta_start": 8.5e-4,
    "schedule.beta_end": 1.2e-2,
    "schedule.kind": "scaled_linear",
    "prompts.positive": DEFAULT_POSITIVE,
    "prompts.negative": DEFAULT_NEGATIVE,
}


# -- config plumbing ---------------------------------------------------------


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _resolve(defaults: dict, args: argparse.Namespace) -> dict:
    cfg = dict(defaults)
    config_path = getattr(args, "config", None)
    if config_path:
        file_cfg = json.loads(Path(config_path).read_text())
        for key, value in file_cfg.items():
            if key not in cfg:
                raise CliError(f"unknown config key {key!r}")
            cfg[key] = value
    for pair in getattr(args, "set", None) or []:
        if "=" not in pair:
            raise CliError(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        if key not in cfg:
            raise CliError(f"unknown config key {key!r}")
        cfg[key] = _parse_value(value)
    for key in defaults:
        flag = key.replace(".", "_")
        value = getattr(args, flag, None)
        if value is not None:
            cfg[key] = value
    missing = [k for k, v in cfg.items() if v is None]
    if missing:
        raise CliError(f"missing required settings: {', '.join(sorted(missing))}")
    return cfg


def _write_manifest(out_dir: Path, command: str, resolved: dict, outputs: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {"command": command, "config": resolved, "outputs": outputs}
    (out_dir / "manifest.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _png_names(directory: str | Path) -> list[Path]:
    paths = sorted(Path(directory).glob("*.png"))
    if not paths:
        raise CliError(f"no PNG files in {directory}")
    return paths


# -- model directory ----------------------------------------------------------


def _model_json(cfg: dict, seed: int) -> dict:
    return {
        "denoiser": {
            "base_channels": cfg["denoiser.base_channels"],
            "channel_multipliers": list(cfg["denoiser.channel_multipliers"]),
            "blocks_per_stage": cfg["denoiser.blocks_per_stage"],
            "head_count": cfg["denoiser.head_count"],
            "context_dim": cfg["denoiser.context_dim"],
            "latent_channels": cfg["denoiser.latent_channels"],
        },
        "codec": {
            "scale": cfg["codec.scale"],
            "latent_channels": cfg["denoiser.latent_channels"],
            "basis_seed": cfg["codec.basis_seed"],
            "latent_scale": cfg["codec.latent_scale"],
        },
        "schedule": {
            "T": cfg["schedule.T"],
            "beta_start": cfg["schedule.beta_start"],
            "beta_end": cfg["schedule.beta_end"],
            "kind": cfg["schedule.kind"],
        },
        "prompts": {
            "positive": cfg["prompts.positive"],
            "negative": cfg["prompts.negative"],
        },
        "seed": seed,
    }


def load_model_dir(model_dir: str | Path):
    """Rebuild (model, codec, schedule, meta) from a model directory."""
    model_dir = Path(model_dir)
    meta_path = model_dir / "model.json"
    if not meta_path.exists():
        raise CliError(f"{model_dir} has no model.json")
    meta = json.loads(meta_path.read_text())
    dcfg = DenoiserConfig(
        base_channels=meta["denoiser"]["base_channels"],
        channel_multipliers=tuple(meta["denoiser"]["channel_multipliers"]),
        blocks_per_stage=meta["denoiser"]["blocks_per_stage"],
        head_count=meta["denoiser"]["head_count"],
        context_dim=meta["denoiser"]["context_dim"],
        latent_channels=meta["denoiser"]["latent_channels"],
    )
    model = build_denoiser(dcfg, meta["seed"])
    backbone = model_dir / "backbone.bira"
    if backbone.exists():
        load_backbone(model, backbone)
    codec = ToyCodec(
        scale=meta["codec"]["scale"],
        latent_channels=meta["codec"]["latent_channels"],
        basis_seed=meta["codec"]["basis_seed"],
        latent_scale=meta["codec"]["latent_scale"],
    )
    sched = make_schedule(
        T=meta["schedule"]["T"],
        beta_start=meta["schedule"]["beta_start"],
        beta_end=meta["schedule"]["beta_end"],
        kind=meta["schedule"]["kind"],
    )
    return model, codec, sched, meta


def _resolve_prompts(meta: dict, mode: str, dcfg: DenoiserConfig):
    if mode == "empty":
        p = empty_prompt(dcfg)
        return p, p
    if mode == "named":
        pos = prompt_embedding(meta["prompts"]["positive"], dcfg, "positive")
        neg = prompt_embedding(meta["prompts"]["negative"], dcfg, "negative")
        return pos, neg
    raise CliError(f"unknown prompt mode {mode!r}")


# -- sub-commands --------------------------------------------------------------


INIT_DEFAULTS = dict(MODEL_DEFAULTS, **{"out_dir": None, "seed": 0})


def cmd_init_model(args: argparse.Namespace) -> int:
    cfg = _resolve(INIT_DEFAULTS, args)
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    meta = _model_json(cfg, cfg["seed"])
    dcfg = DenoiserConfig(
        base_channels=meta["denoiser"]["base_channels"],
        channel_multipliers=tuple(meta["denoiser"]["channel_multipliers"]),
        blocks_per_stage=meta["denoiser"]["blocks_per_stage"],
        head_count=meta["denoiser"]["head_count"],
        context_dim=meta["denoiser"]["context_dim"],
        latent_channels=meta["denoiser"]["latent_channels"],
    )
    model = build_denoiser(dcfg, cfg["seed"])
    (out_dir / "model.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    save_backbone(model, out_dir / "backbone.bira")
    _write_manifest(out_dir, "init-model", cfg, {"model": str(out_dir / "model.json")})
    print(f"initialized model in {out_dir}")
    return 0


DEGRADE_DEFAULTS = {
    "in_dir": None,
    "out_dir": None,
    "spec": "",
    "random": False,
    "seed": 0,
    "jobs": 1,
}


def cmd_degrade(args: argparse.Namespace) -> int:
    cfg = _resolve(DEGRADE_DEFAULTS, args)
    if cfg["random"] and cfg["spec"]:
        raise CliError("--random and --spec are mutually exclusive")
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = _png_names(cfg["in_dir"])

    def run(path: Path) -> str:
        img = load_png(path)
        if cfg["random"]:
            rng = np.random.default_rng(derive_seed(cfg["seed"], "spec", path.name))
            spec = sample_spec(rng)
        else:
            spec = with_seed(
                parse_spec(cfg["spec"]), derive_seed(cfg["seed"], "noise", path.name)
            )
        save_png(out_dir / path.name, apply_spec(img, spec))
        sidecar = {"spec": format_spec(spec), "seed": spec.seed}
        (out_dir / (path.stem + ".spec.json")).write_text(
            json.dumps(sidecar, sort_keys=True) + "\n"
        )
        return path.name

    if cfg["jobs"] > 1:
        with ThreadPoolExecutor(max_workers=cfg["jobs"]) as pool:
            names = list(pool.map(run, paths))
    else:
        names = [run(p) for p in paths]
    _write_manifest(out_dir, "degrade", cfg, {"images": names})
    print(f"degraded {len(names)} images into {out_dir}")
    return 0


TRAIN_DEFAULTS = {
    "model": None,
    "mode": "adapter",
    "dataset_root": None,
    "out_dir": None,
    "patch_px": 64,
    "batch_size": 8,
    "accum_steps": 1,
    "total_steps": 2000,
    "lr": 1e-5,
    "weight_decay": 1e-2,
    "seed": 0,
    "checkpoint_every": 500,
    "degradation": "",
    "high_t_bias": 0.0,
    "resume": "",
}


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _resolve(TRAIN_DEFAULTS, args)
    model, codec, sched, meta = load_model_dir(cfg["model"])
    tcfg = TrainConfig(
        dataset_root=cfg["dataset_root"],
        out_dir=cfg["out_dir"],
        patch_px=cfg["patch_px"],
        batch_size=cfg["batch_size"],
        accum_steps=cfg["accum_steps"],
        total_steps=cfg["total_steps"],
        lr=cfg["lr"],
        weight_decay=cfg["weight_decay"],
        seed=cfg["seed"],
        checkpoint_every=cfg["checkpoint_every"],
        degradation=cfg["degradation"] or None,
        high_t_bias=cfg["high_t_bias"],
    )
    out_dir = Path(cfg["out_dir"])
    if cfg["mode"] == "backbone":
        ckpt = pretrain_backbone(tcfg, model, codec, sched)
    elif cfg["mode"] == "adapter":
        ckpt = train_loop(
            tcfg, model, codec, sched, resume_from=cfg["resume"] or None
        )
    else:
        raise CliError(f"unknown train mode {cfg['mode']!r}")
    # the output directory doubles as a model directory
    (out_dir / "model.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    _write_manifest(out_dir, "train", cfg, {"checkpoint": str(ckpt)})
    print(f"trained ({cfg['mode']}); checkpoint at {ckpt}")
    return 0


RESTORE_DEFAULTS = {
    "in_dir": None,
    "out_dir": None,
    "model": None,
    "adapter": "",
    "init_dir": "",
    "xi": 0.9,
    "steps": 20,
    "cfg": 9.0,
    "tile": 64,
    "stride": 32,
    "upscale": 4,
    "seed": 0,
    "prompt_mode": "empty",
}


def cmd_restore(args: argparse.Namespace) -> int:
    cfg = _resolve(RESTORE_DEFAULTS, args)
    model, codec, sched, meta = load_model_dir(cfg["model"])
    adapter_path = Path(cfg["adapter"]) if cfg["adapter"] else (
        Path(cfg["model"]) / "adapter_final.bira"
    )
    if adapter_path.exists():
        adapter = load_adapter(adapter_path)
    elif cfg["adapter"]:
        raise CliError(f"adapter archive {adapter_path} not found")
    else:
        adapter = init_adapter_params(model)  # no-op adapter: plain backbone
    prompts = _resolve_prompts(meta, cfg["prompt_mode"], model.cfg)
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)

    per_image = {}
    for path in _png_names(cfg["in_dir"]):
        degraded = load_png(path)
        init_image = None
        if cfg["init_dir"]:
            init_path = Path(cfg["init_dir"]) / path.name
            if not init_path.exists():
                raise CliError(f"init image {init_path} not found")
            init_image = load_png(init_path)
        gcfg = GuidanceConfig(
            xi=cfg["xi"], cfg_weight=cfg["cfg"], init_image=init_image
        )
        result = restore(
            degraded, model, adapter, codec, sched,
            (cfg["tile"], cfg["stride"]), gcfg, prompts,
            steps=cfg["steps"],
            seed=derive_seed(cfg["seed"], "restore", path.name),
            upscale=cfg["upscale"],
        )
        save_png(out_dir / path.name, result.image)
        per_image[path.name] = {
            "guided_steps": result.stats["guided_steps"],
            "tiles": result.stats["tiles"],
            "total_ms": round(sum(result.stats["step_ms"]), 1),
        }
    _write_manifest(out_dir, "restore", cfg, {"images": per_image})
    print(f"restored {len(per_image)} images into {out_dir}")
    return 0


ANALYZE_DEFAULTS = {
    "mode": None,
    "out_dir": None,
    "model": "",
    "adapter": "",
    "clean_dir": "",
    "degraded_dir": "",
    "a_dir": "",
    "b_dir": "",
    "t": 0,
    "xis": "0.0,0.25,0.5,0.75,0.9,1.0",
    "steps": 20,
    "cfg": 9.0,
    "tile": 64,
    "stride": 32,
    "upscale": 4,
    "seed": 0,
    "prompt_mode": "empty",
}


def _require(cfg: dict, keys: list[str]) -> None:
    empty = [k for k in keys if not cfg[k]]
    if empty:
        flags = ", ".join("--" + k.replace("_", "-") for k in empty)
        raise CliError(f"mode {cfg['mode']!r} requires {flags}")


def _paired_images(dir_a: str, dir_b: str) -> list[tuple[str, np.ndarray, np.ndarray]]:
    names_a = {p.name: p for p in _png_names(dir_a)}
    names_b = {p.name: p for p in _png_names(dir_b)}
    common = sorted(set(names_a) & set(names_b))
    if not common:
        raise CliError(f"no matching filenames between {dir_a} and {dir_b}")
    return [(n, load_png(names_a[n]), load_png(names_b[n])) for n in common]


def cmd_analyze(args: argparse.Namespace) -> int:
    cfg = _resolve(ANALYZE_DEFAULTS, args)
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    mode = cfg["mode"]

    if mode == "params":
        _require(cfg, ["model"])
        model, _, _, _ = load_model_dir(cfg["model"])
        count = count_adapter_params(model.cfg)
        (out_dir / "params.json").write_text(
            json.dumps({"adapter_params": count}, indent=2) + "\n"
        )
        _write_manifest(out_dir, "analyze", cfg, {"adapter_params": count})
        print(f"adapter parameters: {count}")
        return 0

    if mode == "metrics":
        _require(cfg, ["a_dir", "b_dir"])
        pairs = _paired_images(cfg["a_dir"], cfg["b_dir"])
        rows = []
        for name, a, b in pairs:
            rows.append((name, psnr(a, b), ms_ssim(a, b)))
        with open(out_dir / "metrics.csv", "w") as fh:
            fh.write("image,psnr,ms_ssim\n")
            for name, p, m in rows:
                fh.write(f"{name},{p:.4f},{m:.6f}\n")
        mean_psnr = float(np.mean([r[1] for r in rows]))
        mean_ssim = float(np.mean([r[2] for r in rows]))
        _write_manifest(
            out_dir, "analyze", cfg,
            {"mean_psnr": mean_psnr, "mean_ms_ssim": mean_ssim, "count": len(rows)},
        )
        print(f"metrics over {len(rows)} pairs: PSNR {mean_psnr:.2f} dB, MS-SSIM {mean_ssim:.4f}")
        return 0

    if mode == "similarity":
        _require(cfg, ["model", "clean_dir", "degraded_dir"])
        model, codec, _, _ = load_model_dir(cfg["model"])
        pairs = _paired_images(cfg["clean_dir"], cfg["degraded_dir"])
        reports = {}
        for name, clean, degraded in pairs:
            spec_text = ""
            sidecar = Path(cfg["degraded_dir"]) / (Path(name).stem + ".spec.json")
            if sidecar.exists():
                spec_text = json.loads(sidecar.read_text()).get("spec", "")
            report = feature_similarity(
                clean, degraded, model, codec, t=cfg["t"], spec_text=spec_text
            )
            reports[name] = report.as_dict()
        (out_dir / "similarity.json").write_text(
            json.dumps(reports, indent=2, sort_keys=True) + "\n"
        )
        with open(out_dir / "similarity.csv", "w") as fh:
            fh.write("image,label,kind,cosine\n")
            for name, rep in sorted(reports.items()):
                for entry in rep["blocks"]:
                    fh.write(f"{name},{entry['label']},{entry['kind']},{entry['cosine']:.6f}\n")
        _write_manifest(out_dir, "analyze", cfg, {"images": sorted(reports)})
        print(f"similarity reports for {len(reports)} pairs written to {out_dir}")
        return 0

    if mode == "xi-sweep":
        _require(cfg, ["model", "clean_dir", "degraded_dir"])
        model, codec, sched, meta = load_model_dir(cfg["model"])
        adapter_path = Path(cfg["adapter"]) if cfg["adapter"] else (
            Path(cfg["model"]) / "adapter_final.bira"
        )
        adapter = (
            load_adapter(adapter_path)
            if adapter_path.exists()
            else init_adapter_params(model)
        )
        prompts = _resolve_prompts(meta, cfg["prompt_mode"], model.cfg)
        pairs = _paired_images(cfg["clean_dir"], cfg["degraded_dir"])
        xis = [float(x) for x in str(cfg["xis"]).split(",") if x != ""]
        rows = xi_sweep(
            [(clean, degraded) for _, clean, degraded in pairs],
            xis, model, adapter, codec, sched,
            (cfg["tile"], cfg["stride"]), prompts,
            steps=cfg["steps"], seed=cfg["seed"],
            cfg_weight=cfg["cfg"], upscale=cfg["upscale"],
        )
        write_xi_sweep_csv(rows, out_dir / "xi_sweep.csv")
        _write_manifest(out_dir, "analyze", cfg, {"rows": rows})
        print(f"xi sweep over {len(pairs)} pairs written to {out_dir / 'xi_sweep.csv'}")
        return 0

    raise CliError(f"unknown analyze mode {mode!r}")


# -- parser --------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file of flat dotted keys")
    p.add_argument(
        "--set", action="append", metavar="KEY=VALUE",
        help="override one config key (repeatable; JSON-parsed values)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="birad", description="Adapter-guided blind image restoration toolkit"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init-model", help="create a seeded model directory")
    _add_common(p)
    p.add_argument("--out-dir", help="model directory to create")
    p.add_argument("--seed", type=int, help="weight init seed (default 0)")
    p.set_defaults(func=cmd_init_model)

    p = sub.add_parser("degrade", help="apply a degradation cascade to a folder")
    _add_common(p)
    p.add_argument("--in-dir", help="folder of input PNGs")
    p.add_argument("--out-dir", help="output folder")
    p.add_argument("--spec", help='cascade, e.g. "blur:2|down:4:bicubic|noise:20|jpeg:50"')
    p.add_argument("--random", action="store_const", const=True, default=None,
                   help="sample a random cascade per image")
    p.add_argument("--seed", type=int, help="base seed (default 0)")
    p.add_argument("--jobs", type=int, help="worker threads (default 1)")
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("train", help="train the adapter (or pretrain the backbone)")
    _add_common(p)
    p.add_argument("--model", help="model directory with backbone + model.json")
    p.add_argument("--mode", choices=["adapter", "backbone"], help="what to train (default adapter)")
    p.add_argument("--dataset-root", help="folder of training PNGs")
    p.add_argument("--out-dir", help="checkpoint/log output directory")
    p.add_argument("--patch-px", type=int, help="square patch size (default 64)")
    p.add_argument("--batch-size", type=int, help="items per micro-batch (default 8)")
    p.add_argument("--accum-steps", type=int, help="micro-batches per step (default 1)")
    p.add_argument("--total-steps", type=int, help="optimizer steps (default 2000)")
    p.add_argument("--lr", type=float, help="learning rate (default 1e-5)")
    p.add_argument("--weight-decay", type=float, help="decoupled weight decay (default 1e-2)")
    p.add_argument("--seed", type=int, help="base seed (default 0)")
    p.add_argument("--checkpoint-every", type=int, help="steps between checkpoints (default 500)")
    p.add_argument("--degradation", help="fixed degradation spec (default: random per item)")
    p.add_argument("--high-t-bias", type=float,
                   help="fraction of timesteps drawn from the top noise band (default 0)")
    p.add_argument("--resume", help="adapter checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("restore", help="restore a folder of degraded images")
    _add_common(p)
    p.add_argument("--in-dir", help="folder of degraded PNGs")
    p.add_argument("--out-dir", help="output folder")
    p.add_argument("--model", help="model directory")
    p.add_argument("--adapter", help="adapter archive (default <model>/adapter_final.bira)")
    p.add_argument("--init-dir", help="folder of initial restorations (default: bicubic)")
    p.add_argument("--xi", type=float, help="guidance threshold (default 0.9)")
    p.add_argument("--steps", type=int, help="diffusion steps (default 20)")
    p.add_argument("--cfg", type=float, help="classifier-free guidance weight (default 9.0)")
    p.add_argument("--tile", type=int, help="latent tile size (default 64)")
    p.add_argument("--stride", type=int, help="latent tile stride (default 32)")
    p.add_argument("--upscale", type=int, help="super-resolution factor (default 4)")
    p.add_argument("--seed", type=int, help="base seed (default 0)")
    p.add_argument("--prompt-mode", choices=["empty", "named"],
                   help="conditioning prompts (default empty)")
    p.set_defaults(func=cmd_restore)

    p = sub.add_parser("analyze", help="similarity / metrics / xi-sweep / params")
    _add_common(p)
    p.add_argument("--mode", choices=["similarity", "metrics", "xi-sweep", "params"])
    p.add_argument("--out-dir", help="report output directory")
    p.add_argument("--model", help="model directory")
    p.add_argument("--adapter", help="adapter archive (xi-sweep)")
    p.add_argument("--clean-dir", help="clean references (similarity, xi-sweep)")
    p.add_argument("--degraded-dir", help="degraded inputs (similarity, xi-sweep)")
    p.add_argument("--a-dir", help="first image folder (metrics)")
    p.add_argument("--b-dir", help="second image folder (metrics)")
    p.add_argument("--t", type=int, help="feature extraction timestep (default 0)")
    p.add_argument("--xis", help="comma-separated xi values")
    p.add_argument("--steps", type=int, help="diffusion steps (default 20)")
    p.add_argument("--cfg", type=float, help="guidance weight (default 9.0)")
    p.add_argument("--tile", type=int, help="latent tile size (default 64)")
    p.add_argument("--stride", type=int, help="latent tile stride (default 32)")
    p.add_argument("--upscale", type=int, help="super-resolution factor (default 4)")
    p.add_argument("--seed", type=int, help="base seed (default 0)")
    p.add_argument("--prompt-mode", choices=["empty", "named"],
                   help="conditioning prompts (default empty)")
    p.set_defaults(func=cmd_analyze)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # one-line machine-parsable failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
