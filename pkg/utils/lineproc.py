"""Line-image preprocessing: binarization variants, height normalization and
degradation-based augmentation.

Pixel convention everywhere: float in [0,1], 0 = ink, 1 = background.
"""

import enum
import logging
import math
from dataclasses import dataclass

import numpy as np
from PIL import Image
from scipy import ndimage
from skimage.filters import threshold_otsu

from utils.errors import ParameterError, ShapeError

logger = logging.getLogger(__name__)

DEFAULT_LINE_HEIGHT = 48
SAUVOLA_R = 0.5
BT601_WEIGHTS = np.array([0.299, 0.587, 0.114])

# upper bounds of the randomized degradation composition
NOISE_SIGMA_MAX = 0.05
BLUR_SIGMA_MAX = 1.0
ROTATION_DEG_MAX = 2.0
HSCALE_MAX = 0.10
INTENSITY_MAX = 0.10


class BinarizeMethod(enum.Enum):
    OTSU = "otsu"
    SAUVOLA = "sauvola"
    WOLF = "wolf"
    GRAYNORM = "graynorm"


@dataclass(frozen=True, eq=False)
class LineImage:
    pixels: np.ndarray
    source_id: tuple = ("", "", "")

    def __post_init__(self):
        if self.pixels.ndim != 2 or self.pixels.shape[0] < 1 or self.pixels.shape[1] < 1:
            raise ShapeError(f"line image must be a non-empty 2D matrix, got shape {self.pixels.shape}")
        if self.pixels.min() < 0.0 or self.pixels.max() > 1.0:
            raise ShapeError(f"line image values must lie in [0,1] (line {self.source_id})")

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]

    def with_pixels(self, pixels):
        return LineImage(pixels, self.source_id)


@dataclass(frozen=True, eq=False)
class LineSample:
    """A line image paired with its ground-truth transcription and optional alternative preprocessings"""
    image: LineImage
    text: str
    variants: tuple = ()

    @property
    def manuscript(self):
        return self.image.source_id[0]

    @property
    def page(self):
        return self.image.source_id[1]

    @property
    def line_id(self):
        return "/".join(str(part) for part in self.image.source_id)


@dataclass(frozen=True)
class DegradationParams:
    noise_sigma: float = 0.0
    blur_sigma: float = 0.0
    rotation_deg: float = 0.0
    hscale: float = 0.0
    intensity: float = 0.0


def to_grayscale(raster):
    """
    Convert a raster to float grayscale in [0,1]

    Parameters:
    raster: 2D array (uint8 or float) or HxWx3 RGB array

    Returns:
    np.ndarray: float64 matrix, RGB reduced with ITU-R BT.601 luma weights
    """
    pixels = np.asarray(raster)
    values = pixels.astype(np.float64)
    if values.ndim == 3:
        values = values[..., :3] @ BT601_WEIGHTS
    if pixels.dtype == np.uint8:
        values = values / 255.0
    return np.clip(values, 0.0, 1.0)


def read_raster(path):
    """Load a PNG page or line image as float grayscale (RGB via BT.601 luma)"""
    with Image.open(path) as image:
        if image.mode not in ("L", "RGB"):
            image = image.convert("RGB")
        return to_grayscale(np.asarray(image))


def write_raster(path, pixels):
    """Store float grayscale pixels as an 8-bit PNG"""
    data = np.floor(np.clip(pixels, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(data, mode="L").save(path, format="PNG")


def otsu_threshold(pixels):
    """Global Otsu threshold; pixels at or below it are ink"""
    return float(threshold_otsu(pixels, nbins=256))


def local_mean_std(pixels, window):
    """
    Windowed mean and (population) standard deviation with reflected borders

    Returns:
    tuple: (mean, std) arrays of the input shape
    """
    mean = ndimage.uniform_filter(pixels, size=window, mode="reflect")
    mean_sq = ndimage.uniform_filter(pixels * pixels, size=window, mode="reflect")
    std = np.sqrt(np.clip(mean_sq - mean * mean, 0.0, None))
    return mean, std


def _check_window(pixels, window):
    if window < 3 or window % 2 == 0:
        raise ParameterError(f"window must be odd and >= 3, got {window}")
    if window > pixels.shape[0] and window > pixels.shape[1]:
        raise ParameterError(f"window {window} larger than both image dimensions {pixels.shape}")


def binarize(img, method=BinarizeMethod.SAUVOLA, window=15, k=None):
    """
    Apply one of the preprocessing variants to a line image

    Parameters:
    img: LineImage to process
    method: BinarizeMethod or its string value
    window: Odd local window size (Sauvola, Wolf)
    k: Sensitivity; defaults to 0.2 for Sauvola and 0.5 for Wolf

    Returns:
    LineImage: Values in {0,1} for the binary methods, contrast-stretched gray for GrayNorm
    """
    method = BinarizeMethod(method)
    pixels = img.pixels.astype(np.float64)

    if method is BinarizeMethod.GRAYNORM:
        low, high = np.percentile(pixels, [5, 95])
        if high - low <= 1e-12:
            return img.with_pixels(np.ones_like(pixels))
        return img.with_pixels(np.clip((pixels - low) / (high - low), 0.0, 1.0))

    if method is BinarizeMethod.OTSU:
        if pixels.max() - pixels.min() <= 1e-12:
            return img.with_pixels(np.ones_like(pixels))
        threshold = otsu_threshold(pixels)
        return img.with_pixels(np.where(pixels <= threshold, 0.0, 1.0))

    _check_window(pixels, window)
    mean, std = local_mean_std(pixels, window)
    if method is BinarizeMethod.SAUVOLA:
        k = 0.2 if k is None else k
        threshold = mean * (1.0 + k * (std / SAUVOLA_R - 1.0))
    else:
        k = 0.5 if k is None else k
        max_std = std.max()
        darkest = pixels.min()
        ratio = std / max_std if max_std > 0 else np.zeros_like(std)
        threshold = mean - k * (1.0 - ratio) * (mean - darkest)
    return img.with_pixels(np.where(pixels < threshold, 0.0, 1.0))


def preprocess_variants(img, methods):
    """Render the same line under several preprocessing methods"""
    return [binarize(img, method) for method in methods]


def normalize_height(img, target_h=DEFAULT_LINE_HEIGHT):
    """
    Rescale a line to a fixed height, preserving the aspect ratio

    Width becomes round(w * target_h / h) (half-up, at least 1); bilinear interpolation.
    """
    if target_h < 8:
        raise ParameterError(f"target height must be >= 8, got {target_h}")
    height, width = img.pixels.shape
    if height == target_h:
        return img.with_pixels(img.pixels.copy())
    new_width = max(1, int(math.floor(width * target_h / height + 0.5)))
    zoomed = ndimage.zoom(
        img.pixels.astype(np.float64),
        (target_h / height, new_width / width),
        order=1,
        mode="nearest",
    )
    if zoomed.shape != (target_h, new_width):
        # guard against float rounding in scipy's output-shape computation
        zoomed = _fit(zoomed, target_h, new_width)
    return img.with_pixels(np.clip(zoomed, 0.0, 1.0))


def _fit(pixels, height, width):
    out = np.ones((height, width))
    h = min(height, pixels.shape[0])
    w = min(width, pixels.shape[1])
    out[:h, :w] = pixels[:h, :w]
    return out


def draw_degradation(rng):
    """Draw the magnitudes of one randomized degradation"""
    def signed(limit):
        return float(rng.uniform(0.0, limit)) * float(rng.choice([-1.0, 1.0]))

    return DegradationParams(
        noise_sigma=float(rng.uniform(0.0, NOISE_SIGMA_MAX)),
        blur_sigma=float(rng.uniform(0.0, BLUR_SIGMA_MAX)),
        rotation_deg=signed(ROTATION_DEG_MAX),
        hscale=signed(HSCALE_MAX),
        intensity=signed(INTENSITY_MAX),
    )


def apply_degradation(img, params, rng):
    """
    Apply a degradation with fixed magnitudes

    Zero magnitudes leave the image untouched. Rotation and horizontal scaling
    act about the image center and keep the canvas size.
    """
    pixels = img.pixels.astype(np.float64)

    if params.rotation_deg != 0.0 or params.hscale != 0.0:
        theta = math.radians(params.rotation_deg)
        forward = np.array([
            [math.cos(theta), -math.sin(theta)],
            [math.sin(theta), math.cos(theta)],
        ]) @ np.diag([1.0, 1.0 + params.hscale])
        inverse = np.linalg.inv(forward)
        center = (np.array(pixels.shape, dtype=np.float64) - 1.0) / 2.0
        pixels = ndimage.affine_transform(
            pixels, inverse, offset=center - inverse @ center, order=1, mode="constant", cval=1.0
        )

    if params.blur_sigma > 0.0:
        pixels = ndimage.gaussian_filter(pixels, params.blur_sigma, mode="nearest")

    if params.intensity != 0.0:
        pixels = 1.0 - (1.0 - pixels) * (1.0 + params.intensity)

    if params.noise_sigma > 0.0:
        pixels = pixels + rng.normal(0.0, params.noise_sigma, size=pixels.shape)

    return img.with_pixels(np.clip(pixels, 0.0, 1.0))


def degrade(img, rng):
    """
    Randomized degradation used for training augmentation

    Composition of noise, blur, small rotation, horizontal scale jitter and
    intensity jitter. A pure function of (img, rng state).
    """
    return apply_degradation(img, draw_degradation(rng), rng)


def augment_samples(samples, factor, rng):
    """
    Keep every sample, add its preprocessing variants and `factor` degraded copies of it

    Returns:
    list: LineSamples, originals first in input order, then the variants, then the copies
    """
    augmented = list(samples)
    augmented.extend(LineSample(variant, sample.text) for sample in samples for variant in sample.variants)
    for sample in samples:
        for _ in range(factor):
            augmented.append(LineSample(degrade(sample.image, rng), sample.text))
    logger.debug(f"Augmented {len(samples)} samples x{factor} -> {len(augmented)}")
    return augmented
