import numpy as np
import pytest
import torch

from birad.analyze import psnr
from birad.denoiser import build_denoiser, empty_prompt, init_adapter_params
from birad.images import resize
from birad.sampler import (
    GuidanceConfig,
    RestoreResult,
    SamplerError,
    apply_guidance,
    cfg_combine,
    default_init_restoration,
    guidance_weights,
    restore,
)
from birad.textures import mosaic_image


def rand_image(h: int, w: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.uniform(0.0, 1.0, size=(3, h, w)).astype(np.float32)


@pytest.fixture
def restore_kit(small_cfg, codec, sched):
    model = build_denoiser(small_cfg, seed=21)
    adapter = init_adapter_params(model)
    prompts = (empty_prompt(small_cfg), empty_prompt(small_cfg))
    return model, adapter, prompts


# -- GuidanceConfig ----------------------------------------------------------------


def test_guidance_config_validation():
    GuidanceConfig(xi=0.0)
    GuidanceConfig(xi=1.0)
    with pytest.raises(SamplerError):
        GuidanceConfig(xi=1.5)
    with pytest.raises(SamplerError):
        GuidanceConfig(weight_map=torch.ones(4, 4) * 2.0)
    with pytest.raises(SamplerError):
        GuidanceConfig(weight_map=torch.full((4, 4), float("nan")))
    with pytest.raises(SamplerError):
        GuidanceConfig(weight_map=torch.ones(4))


# -- guidance_weights ----------------------------------------------------------------


def test_constant_image_gives_unit_weights():
    img = np.full((3, 32, 32), 0.6, dtype=np.float32)
    w = guidance_weights(img, (8, 8))
    assert torch.equal(w, torch.ones(8, 8))


def test_vertical_step_edge_zeroes_edge_columns():
    img = np.zeros((3, 32, 32), dtype=np.float32)
    img[:, :, 16:] = 1.0
    w = guidance_weights(img, (8, 8))
    # Sobel fires on pixel columns 15 and 16, which area-average into
    # latent columns 3 and 4 at full strength; everywhere else is flat
    assert torch.equal(w[:, 3], torch.zeros(8))
    assert torch.equal(w[:, 4], torch.zeros(8))
    mask = torch.ones(8, 8, dtype=torch.bool)
    mask[:, 3:5] = False
    assert torch.equal(w[mask], torch.ones(8 * 6))


def test_weights_always_in_unit_range():
    for seed in range(5):
        w = guidance_weights(rand_image(40, 24, seed=seed), (5, 3))
        assert w.shape == (5, 3)
        assert float(w.min()) >= 0.0 and float(w.max()) <= 1.0


def test_weights_reject_degenerate_target():
    with pytest.raises(SamplerError):
        guidance_weights(rand_image(32, 32), (0, 8))


# -- apply_guidance -------------------------------------------------------------------


def test_xi_one_never_guides(sched):
    gen = torch.Generator().manual_seed(1)
    x = torch.randn(4, 8, 8, generator=gen)
    init = torch.randn(4, 8, 8, generator=gen)
    w = torch.rand(8, 8, generator=gen)
    for t in (0, 500, 999):
        assert apply_guidance(x, w, init, t, sched.T, 1.0) is x


def test_full_weight_map_replaces_with_init(sched):
    gen = torch.Generator().manual_seed(2)
    x = torch.randn(4, 8, 8, generator=gen)
    init = torch.randn(4, 8, 8, generator=gen)
    out = apply_guidance(x, torch.ones(8, 8), init, 950, sched.T, 0.0)
    assert torch.equal(out, init)


def test_zero_weight_map_is_identity_values(sched):
    gen = torch.Generator().manual_seed(3)
    x = torch.randn(4, 8, 8, generator=gen)
    init = torch.randn(4, 8, 8, generator=gen)
    out = apply_guidance(x, torch.zeros(8, 8), init, 950, sched.T, 0.0)
    torch.testing.assert_close(out, x, rtol=0, atol=0)


def test_threshold_is_strict(sched):
    x = torch.zeros(4, 8, 8)
    init = torch.ones(4, 8, 8)
    w = torch.ones(8, 8)
    # t/T equal to xi sits outside the active window
    assert apply_guidance(x, w, init, 900, sched.T, 0.9) is x
    assert not torch.equal(apply_guidance(x, w, init, 901, sched.T, 0.9), x)


def test_apply_guidance_shape_checks(sched):
    x = torch.zeros(4, 8, 8)
    with pytest.raises(SamplerError):
        apply_guidance(x, torch.ones(8, 8), torch.zeros(4, 8, 4), 950, sched.T, 0.0)
    with pytest.raises(SamplerError):
        apply_guidance(x, torch.ones(4, 8), x.clone(), 950, sched.T, 0.0)


# -- cfg_combine ------------------------------------------------------------------------


def test_cfg_weight_one_returns_positive_exactly():
    gen = torch.Generator().manual_seed(4)
    pos = torch.randn(4, 8, 8, generator=gen)
    neg = torch.randn(4, 8, 8, generator=gen)
    assert cfg_combine(pos, neg, 1.0) is pos


def test_cfg_equal_branches_any_weight():
    x = torch.randn(4, 8, 8, generator=torch.Generator().manual_seed(5))
    for w in (0.0, 1.0, 9.0, -3.0):
        assert torch.equal(cfg_combine(x, x, w), x)


def test_cfg_scalar_arithmetic():
    pos = torch.full((2, 3, 3), 0.1)
    neg = torch.zeros(2, 3, 3)
    out = cfg_combine(pos, neg, 9.0)
    torch.testing.assert_close(out, torch.full((2, 3, 3), 0.9), rtol=1e-6, atol=1e-7)
    with pytest.raises(SamplerError):
        cfg_combine(pos, torch.zeros(2, 3, 4), 9.0)


# -- default init -------------------------------------------------------------------------


def test_default_init_is_bicubic_upsample():
    deg = rand_image(16, 16, seed=6)
    out = default_init_restoration(deg, (64, 64))
    np.testing.assert_array_equal(out, resize(deg, (64, 64), "bicubic"))


# -- restore -------------------------------------------------------------------------------


def test_restore_is_deterministic(restore_kit, codec, sched):
    model, adapter, prompts = restore_kit
    deg = rand_image(16, 16, seed=7)
    gcfg = GuidanceConfig(xi=0.9, cfg_weight=9.0)
    a = restore(deg, model, adapter, codec, sched, (64, 32), gcfg, prompts, steps=5, seed=3)
    b = restore(deg, model, adapter, codec, sched, (64, 32), gcfg, prompts, steps=5, seed=3)
    np.testing.assert_array_equal(a.image, b.image)
    c = restore(deg, model, adapter, codec, sched, (64, 32), gcfg, prompts, steps=5, seed=4)
    assert np.abs(c.image - a.image).max() > 0


def test_restore_output_shape_and_range(restore_kit, codec, sched):
    model, adapter, prompts = restore_kit
    deg = rand_image(16, 16, seed=8)
    out = restore(
        deg, model, adapter, codec, sched, (64, 32), GuidanceConfig(), prompts, steps=3, seed=0
    )
    assert isinstance(out, RestoreResult)
    assert out.image.shape == (3, 64, 64)
    assert out.image.min() >= 0.0 and out.image.max() <= 1.0


def test_xi_one_matches_ablated_run_bit_identical(restore_kit, codec, sched):
    model, adapter, prompts = restore_kit
    deg = rand_image(16, 16, seed=9)
    on = restore(
        deg, model, adapter, codec, sched, (64, 32), GuidanceConfig(xi=1.0), prompts,
        steps=5, seed=11,
    )
    off = restore(
        deg, model, adapter, codec, sched, (64, 32), GuidanceConfig(xi=1.0), prompts,
        steps=5, seed=11, ablate_guidance=True,
    )
    np.testing.assert_array_equal(on.image, off.image)
    assert off.stats["guidance_ablated"] is True
    assert on.stats["guided_steps"] == off.stats["guided_steps"] == 0


def test_full_guidance_reproduces_init_image(small_cfg, codec, sched):
    # fresh backbone predicts zero noise, so with W == 1 and xi == 0 the
    # loop must hand back the init restoration through the codec round trip
    model = build_denoiser(small_cfg, seed=22)
    adapter = init_adapter_params(model)
    prompts = (empty_prompt(small_cfg), empty_prompt(small_cfg))
    init = mosaic_image(64, 8, seed=23)
    deg = resize(init, (16, 16), "bicubic")
    gcfg = GuidanceConfig(xi=0.0, init_image=init, weight_map=torch.ones(8, 8))
    out = restore(deg, model, adapter, codec, sched, (64, 32), gcfg, prompts, steps=20, seed=5)
    assert psnr(init, out.image) >= 40.0


def test_guided_step_counts_per_threshold(restore_kit, codec, sched):
    model, adapter, prompts = restore_kit
    deg = rand_image(16, 16, seed=10)
    expected = {0.0: 19, 0.25: 14, 0.5: 9, 0.75: 4, 0.9: 1, 1.0: 0}
    counts = {}
    for xi, want in expected.items():
        out = restore(
            deg, model, adapter, codec, sched, (64, 32), GuidanceConfig(xi=xi), prompts,
            steps=20, seed=0,
        )
        counts[xi] = out.stats["guided_steps"]
        assert counts[xi] == want
    ordered = [counts[xi] for xi in sorted(counts)]
    assert ordered == sorted(ordered, reverse=True)


def test_degraded_encoded_once(restore_kit, codec, sched, monkeypatch):
    model, adapter, prompts = restore_kit
    deg = rand_image(16, 16, seed=12)
    calls = {"n": 0}
    real_encode = type(codec).encode

    def counting_encode(self, img):
        calls["n"] += 1
        return real_encode(self, img)

    monkeypatch.setattr(type(codec), "encode", counting_encode)
    restore(
        deg, model, adapter, codec, sched, (64, 32), GuidanceConfig(xi=0.5), prompts,
        steps=10, seed=0,
    )
    guided_total = calls["n"]
    calls["n"] = 0
    restore(
        deg, model, adapter, codec, sched, (64, 32), GuidanceConfig(xi=1.0), prompts,
        steps=10, seed=0,
    )
    unguided_total = calls["n"]
    # conditioning latent once; the guided run adds one init-image encode
    assert unguided_total == 1
    assert guided_total == 2


def test_restore_rejects_mismatched_init(restore_kit, codec, sched):
    model, adapter, prompts = restore_kit
    deg = rand_image(16, 16, seed=13)
    gcfg = GuidanceConfig(init_image=rand_image(32, 32, seed=14))
    with pytest.raises(SamplerError):
        restore(deg, model, adapter, codec, sched, (64, 32), gcfg, prompts, steps=2, seed=0)


def test_restore_aborts_on_non_finite(restore_kit, codec, sched, monkeypatch):
    model, adapter, prompts = restore_kit
    deg = rand_image(16, 16, seed=15)

    def poisoned(model_, x_deg, x_t, t, prompt, adapter_):
        return torch.full_like(x_t, float("nan"))

    monkeypatch.setattr("birad.sampler.predict_noise_adapted", poisoned)
    with pytest.raises(SamplerError, match="step 0"):
        restore(
            deg, model, adapter, codec, sched, (64, 32), GuidanceConfig(), prompts,
            steps=3, seed=0,
        )


def test_restore_multi_tile_runs(restore_kit, codec, sched):
    model, adapter, prompts = restore_kit
    deg = rand_image(32, 32, seed=16)  # 128px target, 16px latent
    out = restore(
        deg, model, adapter, codec, sched, (8, 4), GuidanceConfig(xi=0.5), prompts,
        steps=2, seed=1,
    )
    assert out.image.shape == (3, 128, 128)
    assert np.isfinite(out.image).all()
    assert out.stats["tiles"] == 9


def test_restore_stats_manifest(restore_kit, codec, sched):
    model, adapter, prompts = restore_kit
    deg = rand_image(16, 16, seed=17)
    out = restore(
        deg, model, adapter, codec, sched, (64, 32), GuidanceConfig(), prompts,
        steps=4, seed=42,
    )
    s = out.stats
    assert s["seed"] == 42
    assert s["steps"] == 4
    assert len(s["timesteps"]) == 4
    assert s["xi"] == 0.9
    assert s["cfg_weight"] == 9.0
    assert s["tile"] == 64 and s["stride"] == 32
    assert s["tiles"] == 1
    assert s["upscale"] == 4
    assert len(s["step_ms"]) == 4
    assert s["guidance_ablated"] is False
    assert s["degraded_encode_calls"] == 1
