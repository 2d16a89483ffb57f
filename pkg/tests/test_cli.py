"""Command-line surface: config resolution, sub-commands, manifests."""

import hashlib
import json

import numpy as np
import pytest

from birad.analyze import count_adapter_params
from birad.archive import archive_hash
from birad.cli import DEFAULT_NEGATIVE, DEFAULT_POSITIVE, load_model_dir, main
from birad.denoiser import DenoiserConfig
from birad.images import load_png
from birad.textures import write_dataset

TINY_SET = [
    "--set", "denoiser.base_channels=8",
    "--set", "denoiser.channel_multipliers=[1,2]",
    "--set", "denoiser.head_count=2",
    "--set", "denoiser.context_dim=8",
]


def file_hash(path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def dir_png_hashes(directory) -> dict:
    return {p.name: file_hash(p) for p in sorted(directory.glob("*.png"))}


@pytest.fixture(scope="module")
def clean_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("clean")
    write_dataset(root, 2, size=16, cell=8, seed=21)
    (root / "manifest.txt").unlink()  # CLI globs PNGs, keep the dir plain
    return root


@pytest.fixture(scope="module")
def model_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("model")
    assert main(["init-model", "--out-dir", str(out), "--seed", "3", *TINY_SET]) == 0
    return out


@pytest.fixture(scope="module")
def trained_dir(model_dir, clean_dir, tmp_path_factory):
    pre = tmp_path_factory.mktemp("pre")
    rc = main([
        "train", "--mode", "backbone", "--model", str(model_dir),
        "--dataset-root", str(clean_dir), "--out-dir", str(pre),
        "--patch-px", "16", "--batch-size", "2", "--total-steps", "3",
        "--lr", "1e-2", "--checkpoint-every", "3", "--seed", "1",
    ])
    assert rc == 0
    ada = tmp_path_factory.mktemp("ada")
    rc = main([
        "train", "--mode", "adapter", "--model", str(pre),
        "--dataset-root", str(clean_dir), "--out-dir", str(ada),
        "--patch-px", "16", "--batch-size", "2", "--total-steps", "3",
        "--lr", "1e-2", "--checkpoint-every", "3", "--seed", "2",
        "--degradation", "blur:1|noise:10",
    ])
    assert rc == 0
    return ada


# -- init-model ------------------------------------------------------------------


def test_init_model_writes_bundle(model_dir):
    meta = json.loads((model_dir / "model.json").read_text())
    assert meta["denoiser"]["base_channels"] == 8
    assert meta["prompts"] == {"positive": DEFAULT_POSITIVE, "negative": DEFAULT_NEGATIVE}
    assert (model_dir / "backbone.bira").exists()
    manifest = json.loads((model_dir / "manifest.json").read_text())
    assert manifest["command"] == "init-model"
    assert manifest["config"]["seed"] == 3
    model, codec, sched, _ = load_model_dir(model_dir)
    assert model.cfg == DenoiserConfig(base_channels=8, channel_multipliers=(1, 2),
                                       head_count=2, context_dim=8)
    assert sched.T == 1000


def test_init_model_deterministic(tmp_path):
    for name in ("a", "b"):
        assert main(["init-model", "--out-dir", str(tmp_path / name), "--seed", "9", *TINY_SET]) == 0
    assert archive_hash(tmp_path / "a" / "backbone.bira") == archive_hash(tmp_path / "b" / "backbone.bira")
    assert (tmp_path / "a" / "model.json").read_text() == (tmp_path / "b" / "model.json").read_text()


def test_config_file_then_set_then_flag_precedence(tmp_path):
    cfg_file = tmp_path / "cfg.json"
    cfg_file.write_text(json.dumps({"seed": 5, "denoiser.base_channels": 8,
                                    "denoiser.channel_multipliers": [1, 2],
                                    "denoiser.head_count": 2, "denoiser.context_dim": 8}))
    out = tmp_path / "m"
    rc = main(["init-model", "--config", str(cfg_file), "--set", "seed=6",
               "--out-dir", str(out), "--seed", "7"])
    assert rc == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["seed"] == 7


def test_unknown_config_key_fails(tmp_path, capsys):
    rc = main(["init-model", "--out-dir", str(tmp_path / "m"), "--set", "bogus.key=1"])
    assert rc == 1
    err = capsys.readouterr().err
    assert err.startswith("error: CliError:") and "bogus.key" in err


def test_missing_required_setting_fails(capsys):
    rc = main(["init-model"])
    assert rc == 1
    assert "missing required settings" in capsys.readouterr().err


# -- degrade -----------------------------------------------------------------------


def test_degrade_identity_spec_copies_images(clean_dir, tmp_path):
    out = tmp_path / "out"
    assert main(["degrade", "--in-dir", str(clean_dir), "--out-dir", str(out), "--spec", ""]) == 0
    for path in clean_dir.glob("*.png"):
        assert np.array_equal(load_png(path), load_png(out / path.name))
        sidecar = json.loads((out / (path.stem + ".spec.json")).read_text())
        assert sidecar["spec"] == ""


def test_degrade_paper_combo_accepted(clean_dir, tmp_path):
    out = tmp_path / "out"
    rc = main(["degrade", "--in-dir", str(clean_dir), "--out-dir", str(out),
               "--spec", "blur:2|down:4:bicubic|noise:20|jpeg:50"])
    assert rc == 0
    sample = load_png(next(iter(sorted(out.glob("*.png")))))
    assert sample.shape == (3, 4, 4)


def test_degrade_seeded_reproducibility(clean_dir, tmp_path):
    spec = ["--spec", "noise:25"]
    hashes = []
    for name, seed in [("r1", "4"), ("r2", "4"), ("r3", "5")]:
        out = tmp_path / name
        assert main(["degrade", "--in-dir", str(clean_dir), "--out-dir", str(out),
                     *spec, "--seed", seed]) == 0
        hashes.append(dir_png_hashes(out))
    assert hashes[0] == hashes[1]
    assert hashes[0] != hashes[2]


def test_degrade_random_mode_reproducible_sidecars(clean_dir, tmp_path):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["degrade", "--in-dir", str(clean_dir), "--out-dir", str(out),
                     "--random", "--seed", "11"]) == 0
        outs.append({p.name: p.read_text() for p in sorted(out.glob("*.spec.json"))})
    assert outs[0] == outs[1]
    assert any(json.loads(text)["spec"] for text in outs[0].values())


def test_degrade_jobs_do_not_change_outputs(clean_dir, tmp_path):
    results = []
    for name, jobs in [("j1", "1"), ("j2", "2")]:
        out = tmp_path / name
        assert main(["degrade", "--in-dir", str(clean_dir), "--out-dir", str(out),
                     "--spec", "noise:15", "--seed", "8", "--jobs", jobs]) == 0
        results.append(dir_png_hashes(out))
    assert results[0] == results[1]


def test_degrade_random_and_spec_conflict(clean_dir, tmp_path, capsys):
    rc = main(["degrade", "--in-dir", str(clean_dir), "--out-dir", str(tmp_path / "x"),
               "--spec", "blur:1", "--random"])
    assert rc == 1
    assert "mutually exclusive" in capsys.readouterr().err


# -- train -------------------------------------------------------------------------


def test_train_backbone_then_adapter_bundle(model_dir, trained_dir):
    # backbone mode rewrote the weights; adapter mode produced a checkpoint
    assert (trained_dir / "adapter_final.bira").exists()
    assert (trained_dir / "model.json").exists()
    assert (trained_dir / "log.csv").read_text().startswith("step,loss,lr,wall_time_ms")
    manifest = json.loads((trained_dir / "manifest.json").read_text())
    assert manifest["command"] == "train"
    assert manifest["outputs"]["checkpoint"].endswith("adapter_final.bira")


def test_train_backbone_changes_weights(model_dir, trained_dir, tmp_path_factory):
    pre_dir = json.loads((trained_dir / "manifest.json").read_text())["config"]["model"]
    from pathlib import Path
    assert archive_hash(Path(pre_dir) / "backbone.bira") != archive_hash(model_dir / "backbone.bira")


def test_train_unknown_mode_fails(model_dir, clean_dir, tmp_path, capsys):
    rc = main(["train", "--model", str(model_dir), "--dataset-root", str(clean_dir),
               "--out-dir", str(tmp_path / "t"), "--set", "mode=finetune"])
    assert rc == 1


def test_train_high_t_bias_recorded_in_manifest(model_dir, clean_dir, tmp_path):
    out = tmp_path / "t"
    rc = main(["train", "--model", str(model_dir), "--dataset-root", str(clean_dir),
               "--out-dir", str(out), "--mode", "backbone", "--total-steps", "2",
               "--patch-px", "16", "--batch-size", "2", "--checkpoint-every", "2",
               "--lr", "1e-3", "--high-t-bias", "0.5"])
    assert rc == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["high_t_bias"] == 0.5


# -- restore ------------------------------------------------------------------------


@pytest.fixture(scope="module")
def degraded_dir(clean_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("degraded")
    assert main(["degrade", "--in-dir", str(clean_dir), "--out-dir", str(out),
                 "--spec", "blur:1|noise:10", "--seed", "6"]) == 0
    return out


def restore_args(trained_dir, degraded_dir, out) -> list:
    return [
        "restore", "--in-dir", str(degraded_dir), "--out-dir", str(out),
        "--model", str(trained_dir), "--steps", "2", "--tile", "8", "--stride", "4",
        "--upscale", "1", "--seed", "5",
    ]


def test_restore_writes_images_and_manifest(trained_dir, degraded_dir, tmp_path):
    out = tmp_path / "restored"
    assert main([*restore_args(trained_dir, degraded_dir, out), "--xi", "1.0"]) == 0
    names = sorted(p.name for p in out.glob("*.png"))
    assert names == sorted(p.name for p in degraded_dir.glob("*.png"))
    assert load_png(out / names[0]).shape == (3, 16, 16)
    manifest = json.loads((out / "manifest.json").read_text())
    per_image = manifest["outputs"]["images"]
    assert all(entry["guided_steps"] == 0 for entry in per_image.values())
    assert manifest["config"]["xi"] == 1.0


def test_restore_deterministic(trained_dir, degraded_dir, tmp_path):
    hashes = []
    for name in ("r1", "r2"):
        out = tmp_path / name
        assert main(restore_args(trained_dir, degraded_dir, out)) == 0
        hashes.append(dir_png_hashes(out))
    assert hashes[0] == hashes[1]


def test_restore_named_prompts_run(trained_dir, degraded_dir, tmp_path):
    out = tmp_path / "named"
    assert main([*restore_args(trained_dir, degraded_dir, out), "--prompt-mode", "named"]) == 0


def test_restore_init_dir_used(trained_dir, degraded_dir, clean_dir, tmp_path):
    out = tmp_path / "guided"
    rc = main([*restore_args(trained_dir, degraded_dir, out),
               "--xi", "0.0", "--init-dir", str(clean_dir)])
    assert rc == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert all(e["guided_steps"] > 0 for e in manifest["outputs"]["images"].values())


def test_restore_missing_adapter_fails(trained_dir, degraded_dir, tmp_path, capsys):
    rc = main([*restore_args(trained_dir, degraded_dir, tmp_path / "x"),
               "--adapter", str(tmp_path / "absent.bira")])
    assert rc == 1
    assert "not found" in capsys.readouterr().err


# -- analyze ------------------------------------------------------------------------


def test_analyze_params_mode(trained_dir, tmp_path):
    out = tmp_path / "params"
    assert main(["analyze", "--mode", "params", "--model", str(trained_dir),
                 "--out-dir", str(out)]) == 0
    payload = json.loads((out / "params.json").read_text())
    model, _, _, _ = load_model_dir(trained_dir)
    assert payload["adapter_params"] == count_adapter_params(model.cfg)


def test_analyze_metrics_mode(clean_dir, degraded_dir, tmp_path):
    out = tmp_path / "metrics"
    assert main(["analyze", "--mode", "metrics", "--a-dir", str(clean_dir),
                 "--b-dir", str(degraded_dir), "--out-dir", str(out)]) == 0
    lines = (out / "metrics.csv").read_text().splitlines()
    assert lines[0] == "image,psnr,ms_ssim"
    assert len(lines) == 3
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["outputs"]["count"] == 2
    assert manifest["outputs"]["mean_psnr"] > 0


def test_analyze_similarity_mode(trained_dir, clean_dir, degraded_dir, tmp_path):
    out = tmp_path / "sim"
    assert main(["analyze", "--mode", "similarity", "--model", str(trained_dir),
                 "--clean-dir", str(clean_dir), "--degraded-dir", str(degraded_dir),
                 "--out-dir", str(out)]) == 0
    reports = json.loads((out / "similarity.json").read_text())
    assert len(reports) == 2
    for rep in reports.values():
        assert rep["spec"] == "blur:1|noise:10"
        assert [b["label"] for b in rep["blocks"]] == ["down0", "down1", "mid", "up0", "up1"]
    rows = (out / "similarity.csv").read_text().splitlines()
    assert rows[0] == "image,label,kind,cosine"
    assert len(rows) == 1 + 2 * 5


def test_analyze_xi_sweep_mode(trained_dir, clean_dir, degraded_dir, tmp_path):
    out = tmp_path / "sweep"
    assert main(["analyze", "--mode", "xi-sweep", "--model", str(trained_dir),
                 "--clean-dir", str(clean_dir), "--degraded-dir", str(degraded_dir),
                 "--out-dir", str(out), "--xis", "0.0,1.0", "--steps", "2",
                 "--tile", "8", "--stride", "4", "--upscale", "1"]) == 0
    lines = (out / "xi_sweep.csv").read_text().splitlines()
    assert lines[0] == "xi,mean_psnr,mean_sharpness"
    assert len(lines) == 3
    manifest = json.loads((out / "manifest.json").read_text())
    assert [row["xi"] for row in manifest["outputs"]["rows"]] == [0.0, 1.0]


def test_analyze_missing_inputs_fail(trained_dir, tmp_path, capsys):
    rc = main(["analyze", "--mode", "similarity", "--model", str(trained_dir),
               "--out-dir", str(tmp_path / "x")])
    assert rc == 1
    assert "requires" in capsys.readouterr().err


def test_analyze_unknown_mode_fails(tmp_path, capsys):
    rc = main(["analyze", "--set", "mode=bogus", "--out-dir", str(tmp_path / "x")])
    assert rc == 1
    assert "unknown analyze mode" in capsys.readouterr().err


# -- help text ---------------------------------------------------------------------


def test_restore_help_lists_paper_defaults(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["restore", "--help"])
    assert exc.value.code == 0
    text = capsys.readouterr().out
    for fragment in ("default 0.9", "default 20", "default 9.0", "default 64", "default 32"):
        assert fragment in text
