import numpy as np
import pytest

from utils.config import derive_rng
from utils.errors import ParameterError, ShapeError
from utils.lineproc import (
    BinarizeMethod,
    DegradationParams,
    LineImage,
    LineSample,
    apply_degradation,
    augment_samples,
    binarize,
    degrade,
    normalize_height,
    otsu_threshold,
    preprocess_variants,
    read_raster,
    to_grayscale,
    write_raster,
)
from utils.synth_data import PRINTED_WRITER, render_line


def test_line_image_invariants():
    with pytest.raises(ShapeError):
        LineImage(np.zeros((0, 5)))
    with pytest.raises(ShapeError):
        LineImage(np.full((2, 2), 1.5))


def test_otsu_constant_image_is_background():
    out = binarize(LineImage(np.full((10, 10), 0.5)), "otsu")
    np.testing.assert_array_equal(out.pixels, 1.0)


def test_otsu_two_levels_separated_exactly():
    rng = np.random.default_rng(1)
    pixels = np.where(rng.random((16, 40)) < 0.3, 0.1, 0.9)
    threshold = otsu_threshold(pixels)
    assert 0.1 <= threshold < 0.9
    out = binarize(LineImage(pixels), BinarizeMethod.OTSU)
    np.testing.assert_array_equal(out.pixels, np.where(pixels == 0.1, 0.0, 1.0))


def _brute_sauvola(pixels, window, k, r=0.5):
    half = window // 2
    padded = np.pad(pixels, half, mode="symmetric")
    threshold = np.empty_like(pixels)
    for y in range(pixels.shape[0]):
        for x in range(pixels.shape[1]):
            patch = padded[y:y + window, x:x + window]
            threshold[y, x] = patch.mean() * (1.0 + k * (patch.std() / r - 1.0))
    return threshold


def test_sauvola_matches_per_pixel_formula():
    ramp = np.tile(np.linspace(0.2, 1.0, 60), (20, 1))
    ramp[6:14, 10:13] = 0.0
    ramp[4:16, 40:42] = 0.05
    threshold = _brute_sauvola(ramp, 15, 0.2)
    out = binarize(LineImage(ramp), "sauvola", window=15, k=0.2)
    decided = np.abs(ramp - threshold) > 1e-9
    assert decided.mean() > 0.99
    expected = np.where(ramp < threshold, 0.0, 1.0)
    np.testing.assert_array_equal(out.pixels[decided], expected[decided])


@pytest.mark.parametrize("method", ["otsu", "sauvola", "wolf"])
def test_binary_methods_emit_zero_or_one(method):
    pixels = np.random.default_rng(2).uniform(0.0, 1.0, size=(20, 50))
    out = binarize(LineImage(pixels), method)
    assert set(np.unique(out.pixels)) <= {0.0, 1.0}


def test_graynorm_stretches_percentiles():
    pixels = np.random.default_rng(3).uniform(0.3, 0.7, size=(20, 50))
    out = binarize(LineImage(pixels), "graynorm").pixels
    low, high = np.percentile(pixels, [5, 95])
    assert out.min() == 0.0 and out.max() == 1.0
    np.testing.assert_allclose(out[pixels == pixels.flat[0]], np.clip((pixels.flat[0] - low) / (high - low), 0, 1))


@pytest.mark.parametrize("window", [4, 1])
def test_window_must_be_odd_and_at_least_three(window):
    with pytest.raises(ParameterError):
        binarize(LineImage(np.ones((20, 20))), "sauvola", window=window)


def test_window_larger_than_image():
    with pytest.raises(ParameterError):
        binarize(LineImage(np.ones((10, 20))), "wolf", window=31)


def test_preprocess_variants_keeps_shape():
    img = LineImage(np.random.default_rng(4).uniform(0.0, 1.0, size=(20, 30)))
    variants = preprocess_variants(img, ["otsu", "graynorm"])
    assert len(variants) == 2
    assert all(v.pixels.shape == (20, 30) for v in variants)


@pytest.mark.parametrize(
    "shape, target, expected",
    [((48, 100), 48, (48, 100)), ((96, 200), 48, (48, 100)), ((30, 100), 48, (48, 160))],
)
def test_normalize_height(shape, target, expected):
    img = LineImage(np.random.default_rng(0).uniform(0.0, 1.0, size=shape))
    out = normalize_height(img, target)
    assert out.pixels.shape == expected
    assert 0.0 <= out.pixels.min() and out.pixels.max() <= 1.0


def test_normalize_height_identity_copies():
    img = LineImage(np.random.default_rng(0).uniform(0.0, 1.0, size=(48, 100)))
    np.testing.assert_array_equal(normalize_height(img, 48).pixels, img.pixels)


def test_normalize_height_minimum():
    with pytest.raises(ParameterError):
        normalize_height(LineImage(np.ones((10, 10))), 7)


@pytest.fixture
def rendered_line():
    band = render_line("abc def", "A", PRINTED_WRITER, np.random.default_rng(0))
    return normalize_height(LineImage(band, ("ms", "p", "l")), 48)


def test_zero_degradation_is_identity(rendered_line):
    out = apply_degradation(rendered_line, DegradationParams(), np.random.default_rng(0))
    np.testing.assert_array_equal(out.pixels, rendered_line.pixels)


def test_degrade_is_deterministic(rendered_line):
    first = degrade(rendered_line, derive_rng(11, "aug"))
    second = degrade(rendered_line, derive_rng(11, "aug"))
    assert first.pixels.tobytes() == second.pixels.tobytes()
    assert first.source_id == rendered_line.source_id


def test_degradation_deviation_bound(rendered_line):
    rng = np.random.default_rng(17)
    deviations = []
    for _ in range(1000):
        out = degrade(rendered_line, rng)
        assert 0.0 <= out.pixels.min() and out.pixels.max() <= 1.0
        deviations.append(np.abs(out.pixels - rendered_line.pixels).mean())
    assert np.mean(deviations) <= 0.15


def test_augment_keeps_originals_first(rendered_line):
    samples = [LineSample(rendered_line, "abc def"), LineSample(rendered_line, "x")]
    augmented = augment_samples(samples, 5, np.random.default_rng(0))
    assert len(augmented) == 12
    assert augmented[:2] == samples
    assert [s.text for s in augmented[2:7]] == ["abc def"] * 5


def test_augment_adds_preprocessing_variants(rendered_line):
    variants = tuple(preprocess_variants(rendered_line, ["otsu", "wolf"]))
    samples = [LineSample(rendered_line, "abc def", variants), LineSample(rendered_line, "x")]
    augmented = augment_samples(samples, 2, np.random.default_rng(0))
    assert len(augmented) == 2 + 2 + 2 * 2
    assert [s.image for s in augmented[2:4]] == list(variants)
    assert [s.text for s in augmented[2:4]] == ["abc def"] * 2
    assert all(s.variants == () for s in augmented[2:])


def test_to_grayscale_bt601():
    rgb = np.zeros((1, 3, 3), dtype=np.uint8)
    rgb[0, 0] = (255, 0, 0)
    rgb[0, 1] = (0, 255, 0)
    rgb[0, 2] = (0, 0, 255)
    np.testing.assert_allclose(to_grayscale(rgb)[0], [0.299, 0.587, 0.114])


def test_raster_png_round_trip(tmp_path):
    pixels = np.arange(256, dtype=np.float64).reshape(16, 16) / 255.0
    write_raster(tmp_path / "line.png", pixels)
    np.testing.assert_allclose(read_raster(tmp_path / "line.png"), pixels, atol=1e-12)
