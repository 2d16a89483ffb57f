"""Metrics and measurement tools: cosine reports, PSNR/MS-SSIM, sweeps,
parameter accounting."""

import numpy as np
import pytest
import torch

from birad.analyze import (
    AnalyzeError,
    count_adapter_params,
    cosine,
    feature_similarity,
    ms_ssim,
    psnr,
    sharpness,
    write_xi_sweep_csv,
    xi_sweep,
)
from birad.degrade import apply_spec, parse_spec
from birad.denoiser import (
    DenoiserConfig,
    empty_prompt,
    init_adapter_params,
    sd15_attention_config,
)
from birad.sampler import restore, GuidanceConfig
from birad.textures import mosaic_image


# -- cosine --------------------------------------------------------------------


def test_cosine_identical_tensors():
    a = torch.randn(5, 7, generator=torch.Generator().manual_seed(0))
    assert cosine(a, a) == pytest.approx(1.0, abs=1e-12)


def test_cosine_orthogonalized_tensor_is_zero():
    gen = torch.Generator().manual_seed(1)
    a = torch.randn(256, generator=gen).double()
    b = torch.randn(256, generator=gen).double()
    b = b - (torch.dot(a, b) / torch.dot(a, a)) * a
    assert abs(cosine(a, b)) < 1e-10


def test_cosine_independent_wide_vectors_near_zero():
    gen = torch.Generator().manual_seed(2)
    a = torch.randn(4096, generator=gen)
    b = torch.randn(4096, generator=gen)
    assert abs(cosine(a, b)) < 0.1


def test_cosine_symmetric_and_bounded():
    gen = torch.Generator().manual_seed(3)
    for _ in range(20):
        a = torch.randn(33, generator=gen)
        b = torch.randn(33, generator=gen)
        c = cosine(a, b)
        assert c == cosine(b, a)
        assert -1.0 - 1e-12 <= c <= 1.0 + 1e-12


def test_cosine_zero_norm_conventions():
    z = torch.zeros(8)
    x = torch.ones(8)
    assert cosine(z, z) == 1.0
    assert cosine(z, x) == 0.0
    assert cosine(x, z) == 0.0


def test_cosine_rejects_shape_mismatch():
    with pytest.raises(AnalyzeError, match="shape mismatch"):
        cosine(torch.zeros(3), torch.zeros(4))


# -- feature similarity ----------------------------------------------------------


def test_feature_similarity_clean_vs_itself(small_model, codec):
    img = mosaic_image(64, 8, seed=10)
    report = feature_similarity(img, img, small_model, codec, spec_text="identity")
    assert [e.label for e in report.entries] == ["down0", "down1", "mid", "up0", "up1"]
    assert [e.kind for e in report.entries] == ["down", "down", "mid", "up", "up"]
    assert all(e.cosine == pytest.approx(1.0, abs=1e-9) for e in report.entries)
    assert report.as_dict()["spec"] == "identity"


def test_feature_similarity_blur_beats_shuffled_baseline(small_model, codec):
    img = mosaic_image(64, 8, seed=11)
    blurred = apply_spec(img, parse_spec("blur:1"))
    perm = np.random.default_rng(0).permutation(64 * 64)
    shuffled = img.reshape(3, -1)[:, perm].reshape(3, 64, 64).copy()
    rep_blur = feature_similarity(img, blurred, small_model, codec)
    rep_shuf = feature_similarity(img, shuffled, small_model, codec)
    for eb, es in zip(rep_blur.entries, rep_shuf.entries):
        assert eb.cosine > es.cosine


def test_feature_similarity_rejects_mismatched_images(small_model, codec):
    a = mosaic_image(64, 8, seed=1)
    b = mosaic_image(32, 8, seed=1)
    with pytest.raises(AnalyzeError, match="differ"):
        feature_similarity(a, b, small_model, codec)


# -- psnr / ms-ssim ----------------------------------------------------------------


def test_psnr_identical_is_infinite():
    a = mosaic_image(32, 8, seed=4)
    assert psnr(a, a) == float("inf")


def test_psnr_constant_offset_is_twenty_db():
    rng = np.random.default_rng(5)
    a = rng.uniform(0.0, 0.8, size=(3, 16, 16))
    assert psnr(a, a + 0.1) == pytest.approx(20.0, abs=1e-9)


def test_psnr_black_vs_white_is_zero():
    a = np.zeros((3, 8, 8), dtype=np.float32)
    b = np.ones((3, 8, 8), dtype=np.float32)
    assert psnr(a, b) == 0.0


def test_psnr_symmetric():
    rng = np.random.default_rng(6)
    a = rng.uniform(size=(3, 12, 12))
    b = rng.uniform(size=(3, 12, 12))
    assert psnr(a, b) == psnr(b, a)


def test_psnr_rejects_shape_mismatch():
    with pytest.raises(AnalyzeError, match="shape mismatch"):
        psnr(np.zeros((3, 8, 8)), np.zeros((3, 8, 9)))


def test_ms_ssim_identical_is_one():
    a = mosaic_image(64, 8, seed=7)
    assert ms_ssim(a, a) == 1.0


def test_ms_ssim_symmetric_and_orders_noise():
    img = mosaic_image(64, 8, seed=8)
    rng = np.random.default_rng(9)
    mild = np.clip(img + rng.normal(0, 0.02, img.shape), 0, 1).astype(np.float32)
    harsh = np.clip(img + rng.normal(0, 0.2, img.shape), 0, 1).astype(np.float32)
    assert ms_ssim(img, mild) == ms_ssim(mild, img)
    assert ms_ssim(img, mild) > ms_ssim(img, harsh)


def test_ms_ssim_rejects_small_images():
    a = np.full((3, 15, 15), 0.5, dtype=np.float32)
    with pytest.raises(AnalyzeError, match="at least"):
        ms_ssim(a, a)


def test_sharpness_zero_on_constant_positive_on_edges():
    flat = np.full((3, 16, 16), 0.5, dtype=np.float32)
    assert sharpness(flat) == 0.0
    edge = np.zeros((3, 16, 16), dtype=np.float32)
    edge[:, :, 8:] = 1.0
    assert sharpness(edge) > 0.1


# -- xi sweep -----------------------------------------------------------------------


@pytest.fixture(scope="module")
def sweep_pair(codec):
    clean = mosaic_image(32, 8, seed=12)
    degraded = apply_spec(clean, parse_spec("blur:1|noise:10"))
    return clean, degraded


def test_xi_sweep_unguided_matches_ablated_restore(small_model, codec, sched, sweep_pair):
    clean, degraded = sweep_pair
    adapter = init_adapter_params(small_model)
    prompts = (empty_prompt(small_model.cfg), empty_prompt(small_model.cfg))
    rows = xi_sweep(
        [sweep_pair], [1.0], small_model, adapter, codec, sched,
        (8, 4), prompts, steps=4, seed=3, upscale=1,
    )
    result = restore(
        degraded, small_model, adapter, codec, sched, (8, 4),
        GuidanceConfig(xi=1.0, cfg_weight=9.0), prompts,
        steps=4, seed=3, upscale=1, ablate_guidance=True,
    )
    assert rows[0]["mean_psnr"] == psnr(clean, result.image)
    assert rows[0]["mean_sharpness"] == sharpness(result.image)


def test_xi_sweep_row_structure_and_determinism(small_model, codec, sched, sweep_pair):
    adapter = init_adapter_params(small_model)
    prompts = (empty_prompt(small_model.cfg), empty_prompt(small_model.cfg))
    kw = dict(steps=2, seed=5, upscale=1)
    a = xi_sweep([sweep_pair], [0.0, 0.9], small_model, adapter, codec, sched, (8, 4), prompts, **kw)
    b = xi_sweep([sweep_pair], [0.0, 0.9], small_model, adapter, codec, sched, (8, 4), prompts, **kw)
    assert a == b
    assert [row["xi"] for row in a] == [0.0, 0.9]
    assert all(set(row) == {"xi", "mean_psnr", "mean_sharpness"} for row in a)


def test_xi_sweep_rejects_empty_set(small_model, codec, sched):
    with pytest.raises(AnalyzeError, match="empty"):
        xi_sweep([], [0.5], small_model, init_adapter_params(small_model), codec, sched,
                 (8, 4), (empty_prompt(small_model.cfg), empty_prompt(small_model.cfg)))


def test_write_xi_sweep_csv_round_trip(tmp_path):
    rows = [
        {"xi": 0.0, "mean_psnr": 30.5, "mean_sharpness": 0.25},
        {"xi": 1.0, "mean_psnr": 12.25, "mean_sharpness": 0.5},
    ]
    path = tmp_path / "sweep.csv"
    write_xi_sweep_csv(rows, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "xi,mean_psnr,mean_sharpness"
    assert lines[1:] == ["0.0,30.5,0.25", "1.0,12.25,0.5"]


# -- parameter accounting --------------------------------------------------------------


def test_count_adapter_params_hand_sum(small_cfg):
    # channels [8, 16, 16, 16, 16, 8, 8]: 3 square matrices per layer
    assert count_adapter_params(small_cfg) == 3 * (64 + 4 * 256 + 2 * 64)


def test_count_adapter_params_sd15_dimension():
    n = count_adapter_params(sd15_attention_config())
    assert n == 37_171_200
    assert abs(n - 37_000_000) <= 0.1 * 37_000_000


def test_count_adapter_params_quadratic_in_width():
    narrow = DenoiserConfig(base_channels=8, channel_multipliers=(1, 2), head_count=2,
                            context_dim=8)
    wide = DenoiserConfig(base_channels=16, channel_multipliers=(1, 2), head_count=2,
                          context_dim=8)
    assert count_adapter_params(wide) == 4 * count_adapter_params(narrow)
