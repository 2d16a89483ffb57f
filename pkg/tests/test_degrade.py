import numpy as np
import pytest

from birad.degrade import (
    DegradationSpec,
    DegradeError,
    Downsample,
    GaussianBlur,
    Jpeg,
    WhiteNoise,
    apply_spec,
    format_spec,
    jpeg_round_trip,
    parse_spec,
    sample_spec,
    with_seed,
)
from birad.textures import mosaic_image


def rand_image(h: int = 64, w: int = 64, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.uniform(0.0, 1.0, size=(3, h, w)).astype(np.float32)


# -- op parameter validation -----------------------------------------------------


def test_op_validation():
    with pytest.raises(DegradeError):
        GaussianBlur(sigma=-0.1)
    with pytest.raises(DegradeError):
        Downsample(factor=0)
    with pytest.raises(DegradeError):
        Downsample(factor=2, kernel="nearest")
    with pytest.raises(DegradeError):
        WhiteNoise(sigma=-1)
    with pytest.raises(DegradeError):
        Jpeg(quality=0)
    with pytest.raises(DegradeError):
        Jpeg(quality=101)


def test_total_downsample():
    spec = DegradationSpec(ops=(Downsample(2), GaussianBlur(1.0), Downsample(4)))
    assert spec.total_downsample() == 8
    assert DegradationSpec().total_downsample() == 1


# -- text form ---------------------------------------------------------------------


def test_format_parse_round_trip():
    text = "blur:2|down:4:bicubic|noise:20|jpeg:50"
    spec = parse_spec(text)
    assert spec.ops == (
        GaussianBlur(2.0),
        Downsample(4, "bicubic"),
        WhiteNoise(20.0),
        Jpeg(50),
    )
    assert format_spec(spec) == text


def test_parse_empty_is_identity_spec():
    assert parse_spec("").ops == ()
    assert parse_spec("  ").ops == ()


def test_parse_defaults_and_seed():
    spec = parse_spec("down:2", seed=99)
    assert spec.ops == (Downsample(2, "bicubic"),)
    assert spec.seed == 99
    assert with_seed(spec, 7).seed == 7
    assert with_seed(spec, 7).ops == spec.ops


@pytest.mark.parametrize("bad", ["blur", "down:x", "noise:", "sharpen:2", "jpeg:1:2:3x"])
def test_parse_rejects_malformed(bad):
    with pytest.raises(DegradeError):
        parse_spec(bad)


# -- apply_spec ----------------------------------------------------------------------


def test_empty_spec_is_identity():
    img = rand_image(seed=1)
    np.testing.assert_array_equal(apply_spec(img, DegradationSpec()), img)


def test_near_identity_spec_within_jpeg_tolerance():
    img = mosaic_image(64, 8, seed=2)
    spec = DegradationSpec(
        ops=(GaussianBlur(0.0), Downsample(1), WhiteNoise(0.0), Jpeg(100))
    )
    out = apply_spec(img, spec)
    assert out.shape == img.shape
    assert float(np.abs(out - img).max()) <= 2.0 / 255.0


def test_reference_pipeline_output_shape():
    img = rand_image(512, 512, seed=3)
    spec = parse_spec("blur:2|down:4:bicubic|noise:20|jpeg:50")
    out = apply_spec(img, spec)
    assert out.shape == (3, 128, 128)
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_apply_rejects_indivisible_dims():
    with pytest.raises(DegradeError):
        apply_spec(rand_image(66, 64), parse_spec("down:4"))


def test_apply_is_deterministic_under_seed():
    img = rand_image(seed=4)
    spec = with_seed(parse_spec("blur:1.5|noise:30|jpeg:60"), 123)
    np.testing.assert_array_equal(apply_spec(img, spec), apply_spec(img, spec))
    other = apply_spec(img, with_seed(spec, 124))
    assert np.abs(other - apply_spec(img, spec)).max() > 0


def test_zero_sigma_ops_are_exact_identity():
    img = rand_image(seed=5)
    np.testing.assert_array_equal(
        apply_spec(img, DegradationSpec(ops=(GaussianBlur(0.0),))), img
    )
    np.testing.assert_array_equal(
        apply_spec(img, DegradationSpec(ops=(WhiteNoise(0.0),))), img
    )
    np.testing.assert_array_equal(
        apply_spec(img, DegradationSpec(ops=(Downsample(1),))), img
    )


def test_downsample_reduces_dims_exactly():
    img = rand_image(64, 128, seed=6)
    for factor in (2, 4):
        out = apply_spec(img, DegradationSpec(ops=(Downsample(factor),)))
        assert out.shape == (3, 64 // factor, 128 // factor)


def test_noise_statistics_match_sigma():
    img = np.full((3, 128, 128), 0.5, dtype=np.float32)
    spec = DegradationSpec(ops=(WhiteNoise(20.0),), seed=7)
    diff = apply_spec(img, spec) - img
    # constant 0.5 keeps clamping out of play at sigma 20/255
    assert float(diff.std()) == pytest.approx(20.0 / 255.0, rel=0.05)
    assert float(diff.mean()) == pytest.approx(0.0, abs=2e-3)


def test_blur_preserves_mean_and_reduces_variance():
    img = rand_image(seed=8)
    out = apply_spec(img, DegradationSpec(ops=(GaussianBlur(2.0),)))
    assert float(out.mean()) == pytest.approx(float(img.mean()), abs=1e-3)
    assert float(out.var()) < float(img.var())


# -- jpeg round trip ------------------------------------------------------------------


def test_jpeg_q100_nearly_lossless_on_block_textures():
    img = mosaic_image(64, 8, seed=9)
    out = jpeg_round_trip(img, 100)
    assert float(np.abs(out - img).max()) <= 2.0 / 255.0


def test_jpeg_quality_orders_error():
    img = mosaic_image(64, 8, seed=10)
    errors = [float(np.mean((jpeg_round_trip(img, q) - img) ** 2)) for q in (10, 50, 95)]
    assert errors[0] > errors[1] > errors[2]


def test_jpeg_handles_non_multiple_of_16():
    img = rand_image(40, 56, seed=11)
    out = jpeg_round_trip(img, 80)
    assert out.shape == img.shape
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_jpeg_deterministic():
    img = rand_image(seed=12)
    np.testing.assert_array_equal(jpeg_round_trip(img, 50), jpeg_round_trip(img, 50))


# -- sample_spec -----------------------------------------------------------------------


def test_sampled_specs_respect_ranges_and_order():
    rng = np.random.default_rng(13)
    order = (GaussianBlur, Downsample, WhiteNoise, Jpeg)
    for _ in range(10_000):
        spec = sample_spec(rng)
        kinds = [type(op) for op in spec.ops]
        assert kinds == [k for k in order if k in kinds]
        for op in spec.ops:
            if isinstance(op, GaussianBlur):
                assert 0.2 <= op.sigma <= 3.0
            elif isinstance(op, Downsample):
                assert op.factor in (1, 2, 4)
            elif isinstance(op, WhiteNoise):
                assert 0.0 <= op.sigma <= 50.0
            elif isinstance(op, Jpeg):
                assert 30 <= op.quality <= 95
        assert 0 <= spec.seed < 2**31 - 1


def test_sample_spec_reproducible():
    a = sample_spec(np.random.default_rng(14))
    b = sample_spec(np.random.default_rng(14))
    assert a == b


def test_sample_spec_inclusion_frequency():
    rng = np.random.default_rng(15)
    counts = {GaussianBlur: 0, Downsample: 0, WhiteNoise: 0, Jpeg: 0}
    n = 10_000
    for _ in range(n):
        for op in sample_spec(rng).ops:
            counts[type(op)] += 1
    for kind, c in counts.items():
        assert abs(c / n - 0.8) <= 0.02, kind
