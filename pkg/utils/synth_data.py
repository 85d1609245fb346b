"""
Synthetic manuscript generator

Stand-in for real manuscript corpora: every character is a parametric stroke
glyph drawn with Pillow, two script styles use disjoint glyph designs, and every
manuscript has its own fixed "writer" perturbation plus per-line jitter.
"""

import functools
import logging
import math
from dataclasses import dataclass

import numpy as np
from PIL import Image, ImageDraw

from utils.config import SynthSettings, derive_rng
from utils.errors import InputError
from utils.lineproc import LineImage, LineSample, normalize_height
from utils.pagexml import Corpus, Page, Style, TextLine

logger = logging.getLogger(__name__)

ALPHABET = "abcdefghijklmnopqrstuvwxyzſæœꝛꝯ123456789"
MAX_ALPHABET = 40
GLYPH_BOX = 24
LINE_BAND = 40
TOP = 8
MARGIN = 6
SPACE_ADVANCE = 10
DOT_PROBABILITY = 0.5

STYLE_CODES = {"A": Style.GOTHIC, "B": Style.BASTARDA}

# glyph designs are a property of the script, not of the experiment
_DESIGN_SEED = 20210913


@dataclass(frozen=True)
class GlyphDesign:
    width: float
    strokes: tuple


@dataclass(frozen=True)
class Writer:
    slant: float = 0.0
    xscale: float = 1.0
    thickness: int = 2
    ink: int = 0
    offsets: tuple = ()


def resolve_style(style):
    if isinstance(style, Style):
        return style
    if style in STYLE_CODES:
        return STYLE_CODES[style]
    return Style(style)


def _angular_glyph(rng):
    xs = (0.0, 0.5, 1.0)
    ys = (0.0, 0.25, 0.5, 0.75, 1.0)
    strokes = []
    for _ in range(int(rng.integers(2, 4))):
        points = []
        count = int(rng.integers(2, 4))
        while len(points) < count:
            point = (float(rng.choice(xs)), float(rng.choice(ys)))
            if not points or point != points[-1]:
                points.append(point)
        strokes.append(tuple(points))
    return GlyphDesign(float(rng.choice((0.5, 0.6, 0.7))), tuple(strokes))


def _cursive_glyph(rng):
    strokes = []
    steps = np.linspace(0.0, 1.0, 8)
    for _ in range(2):
        p0, p1, p2 = rng.uniform(0.0, 1.0, size=(3, 2))
        curve = (
            ((1 - steps) ** 2)[:, None] * p0
            + (2 * (1 - steps) * steps)[:, None] * p1
            + (steps ** 2)[:, None] * p2
        )
        # right-leaning hand
        curve[:, 0] = np.clip(curve[:, 0] + 0.25 * (1.0 - curve[:, 1]), 0.0, 1.25)
        strokes.append(tuple((float(x), float(y)) for x, y in curve))
    return GlyphDesign(float(rng.uniform(0.45, 0.8)), tuple(strokes))


@functools.lru_cache(maxsize=None)
def style_glyphs(style):
    """Distinct glyph designs for every alphabet character of a style"""
    style = resolve_style(style)
    rng = derive_rng(_DESIGN_SEED, "glyphs", style.value)
    draw = _angular_glyph if style is Style.GOTHIC else _cursive_glyph
    designs, seen = {}, set()
    for char in ALPHABET:
        design = draw(rng)
        while design.strokes in seen:
            design = draw(rng)
        seen.add(design.strokes)
        designs[char] = design
    return designs


def make_writer(rng, alphabet=ALPHABET):
    """Fixed per-manuscript hand: slant, width, pen and small shape offsets per glyph"""
    offsets = []
    for _ in alphabet:
        offsets.append(rng.normal(0.0, 0.04, size=(4, 8, 2)))
    return Writer(
        slant=float(rng.uniform(-0.15, 0.15)),
        xscale=float(rng.uniform(0.85, 1.15)),
        thickness=int(rng.integers(2, 4)),
        ink=int(rng.integers(0, 50)),
        offsets=tuple(offsets),
    )


PRINTED_WRITER = Writer()


def render_glyph(design, writer, char_index, jitter=None):
    """
    Draw one glyph instance on its own canvas

    Parameters:
    design: GlyphDesign of the character
    writer: Writer applying the manuscript's hand
    char_index: Alphabet index of the character (selects the writer's offsets)
    jitter: Optional per-instance point offsets shaped like the writer offsets

    Returns:
    np.ndarray: LINE_BAND x w float image, 1.0 background
    """
    scale = GLYPH_BOX * writer.xscale
    strokes = []
    for s, stroke in enumerate(design.strokes):
        points = []
        for p, (x, y) in enumerate(stroke):
            dx = dy = 0.0
            if writer.offsets:
                dx, dy = writer.offsets[char_index][s % 4, p % 8]
            if jitter is not None:
                dx += jitter[s % 4, p % 8, 0]
                dy += jitter[s % 4, p % 8, 1]
            px = (x * design.width + dx) * scale + writer.slant * (1.0 - y) * GLYPH_BOX
            py = TOP + (y + dy) * GLYPH_BOX
            points.append((px, py))
        strokes.append(points)

    pad = writer.thickness + 2
    min_x = min(px for stroke in strokes for px, _ in stroke)
    max_x = max(px for stroke in strokes for px, _ in stroke)
    width = int(math.ceil(max_x - min_x)) + 2 * pad
    canvas = Image.new("L", (width, LINE_BAND), 255)
    draw = ImageDraw.Draw(canvas)
    for stroke in strokes:
        shifted = [(px - min_x + pad, min(max(py, 1.0), LINE_BAND - 2.0)) for px, py in stroke]
        draw.line(shifted, fill=writer.ink, width=writer.thickness, joint="curve")
    return np.asarray(canvas, dtype=np.float64) / 255.0


def render_dot(writer):
    """The small end-of-line dot, sitting on the baseline"""
    size = writer.thickness + 2
    canvas = Image.new("L", (size + 2, LINE_BAND), 255)
    baseline = TOP + GLYPH_BOX
    ImageDraw.Draw(canvas).ellipse((1, baseline - size, 1 + size - 1, baseline - 1), fill=writer.ink)
    return np.asarray(canvas, dtype=np.float64) / 255.0


def render_line(text, style, writer, rng, jitter=0.0):
    """
    Render a text line in a style and hand

    Returns:
    np.ndarray: LINE_BAND x w float image in [0,1]
    """
    designs = style_glyphs(resolve_style(style))
    pieces = [np.ones((LINE_BAND, MARGIN))]
    for position, char in enumerate(text):
        if char == " ":
            pieces.append(np.ones((LINE_BAND, SPACE_ADVANCE)))
            continue
        if char == ".":
            pieces.append(render_dot(writer))
            continue
        if char not in designs:
            raise InputError(f"character {char!r} has no glyph")
        offsets = rng.normal(0.0, 0.03 * jitter, size=(4, 8, 2)) if jitter > 0 else None
        glyph = render_glyph(designs[char], writer, ALPHABET.index(char), offsets)
        if position > 0 and text[position - 1] not in " .":
            gap = 1 + (int(round(abs(rng.normal(0.0, jitter)))) if jitter > 0 else 0)
            pieces.append(np.ones((LINE_BAND, gap)))
        pieces.append(glyph)
    pieces.append(np.ones((LINE_BAND, MARGIN)))
    return np.concatenate(pieces, axis=1)


def random_text(rng, alphabet, dot_probability=DOT_PROBABILITY):
    """Random words over the alphabet, optionally ending in a dot"""
    words = []
    for _ in range(int(rng.integers(3, 6))):
        length = int(rng.integers(2, 7))
        words.append("".join(rng.choice(list(alphabet), size=length)))
    text = " ".join(words)
    if rng.random() < dot_probability:
        text += "."
    return text


def manuscript_id(style, index):
    code = "A" if resolve_style(style) is Style.GOTHIC else "B"
    return f"{code}{index:02d}"


def synth_manuscript(settings, style, index, seed):
    """
    One synthetic manuscript keyed by (seed, style, index)

    Returns:
    tuple: (manuscript id, list of Page, dict image_ref -> raster)
    """
    style = resolve_style(style)
    alphabet = ALPHABET[:settings.alphabet_size]
    ms_id = manuscript_id(style, index)
    writer = make_writer(derive_rng(seed, "writer", style.value, index), alphabet)
    rng = derive_rng(seed, "text", style.value, index)

    pages, rasters = [], {}
    for page_index in range(settings.pages_per_ms):
        bands = [
            (text, render_line(text, style, writer, rng, settings.writer_jitter))
            for text in (random_text(rng, alphabet) for _ in range(settings.lines_per_page))
        ]
        width = max(band.shape[1] for _, band in bands) + 2 * MARGIN
        height = len(bands) * LINE_BAND + 2 * MARGIN
        raster = np.ones((height, width))
        lines = []
        for line_index, (text, band) in enumerate(bands):
            y0 = MARGIN + line_index * LINE_BAND
            x0 = MARGIN
            raster[y0:y0 + LINE_BAND, x0:x0 + band.shape[1]] = band
            x1, y1 = x0 + band.shape[1] - 1, y0 + LINE_BAND - 1
            lines.append(TextLine(
                id=f"l{line_index:02d}",
                polygon=((x0, y0), (x1, y0), (x1, y1), (x0, y1)),
                transcription=text,
                reading_order=line_index,
            ))
        image_ref = f"{ms_id}/p{page_index:03d}.png"
        pages.append(Page(image_ref, width, height, tuple(lines)))
        rasters[image_ref] = raster
    return ms_id, pages, rasters


def synth_corpus(settings, style, seed, first_index=0, corpus=None, rasters=None):
    """
    Generate settings.n_manuscripts manuscripts of one style

    Parameters:
    settings: SynthSettings
    style: "A" (Gothic-like, angular) or "B" (Bastarda-like, cursive), or a Style
    seed: Experiment seed; writers are keyed by manuscript index
    first_index: Index of the first manuscript (to extend an existing corpus)
    corpus, rasters: Optional containers to add to

    Returns:
    tuple: (Corpus, dict image_ref -> raster)
    """
    if not 1 <= settings.alphabet_size <= MAX_ALPHABET:
        raise InputError(f"alphabet_size must be in [1, {MAX_ALPHABET}], got {settings.alphabet_size}")
    corpus = corpus if corpus is not None else Corpus()
    rasters = rasters if rasters is not None else {}
    style = resolve_style(style)
    for index in range(first_index, first_index + settings.n_manuscripts):
        ms_id, pages, page_rasters = synth_manuscript(settings, style, index, seed)
        corpus.add_manuscript(ms_id, pages, style)
        rasters.update(page_rasters)
    logger.info(f"Generated {settings.n_manuscripts} style-{style.value} manuscripts")
    return corpus, rasters


def printed_samples(n_lines, rng, alphabet_size=SynthSettings().alphabet_size, input_height=48):
    """
    Jitter-free renderings of both styles in a neutral hand

    Stand-in for printed-type training material used to build a foundation model.
    """
    alphabet = ALPHABET[:alphabet_size]
    samples = []
    for index in range(n_lines):
        style = Style.GOTHIC if index % 2 == 0 else Style.BASTARDA
        text = random_text(rng, alphabet)
        band = render_line(text, style, PRINTED_WRITER, rng, 0.0)
        image = normalize_height(LineImage(band, ("printed", style.value, f"l{index:04d}")), input_height)
        samples.append(LineSample(image, text))
    return samples
