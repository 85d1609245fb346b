"""PAGE XML subset reader/writer and the corpus data model.

Only the elements the pipeline needs are modeled: Page, TextRegion, TextLine,
Coords, TextEquiv/Unicode and ReadingOrder. Everything else is ignored on read
and never emitted.
"""

import enum
import io
import logging
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from utils.errors import BoundsError, PageParseError, PageValidationError
from utils.lineproc import LineImage, to_grayscale

logger = logging.getLogger(__name__)

PAGE_NS_PREFIX = "http://schema.primaresearch.org/PAGE/gts/pagecontent/"
PAGE_NS = PAGE_NS_PREFIX + "2019-07-15"
_READING_ORDER_RE = re.compile(r"readingOrder\s*\{[^}]*index\s*:\s*(\d+)")


class Style(enum.Enum):
    GOTHIC = "Gothic"
    BASTARDA = "Bastarda"
    MIXED = "Mixed"


@dataclass(frozen=True)
class TextLine:
    id: str
    polygon: tuple
    transcription: str = ""
    reading_order: int = 0


@dataclass(frozen=True)
class Page:
    image_ref: str
    width: int
    height: int
    lines: tuple = ()


@dataclass
class Corpus:
    manuscripts: dict = field(default_factory=dict)
    styles: dict = field(default_factory=dict)

    def add_manuscript(self, manuscript_id, pages, style):
        if manuscript_id in self.manuscripts:
            raise PageValidationError(f"duplicate manuscript id '{manuscript_id}'")
        self.manuscripts[manuscript_id] = list(pages)
        self.styles[manuscript_id] = Style(style)


def validate_page(page):
    """
    Check the Page invariants

    Lines are stored in reading order, so reading_order must strictly increase
    along page.lines (gaps are allowed).

    Raises PageValidationError naming the first offending line.
    """
    if page.width <= 0 or page.height <= 0:
        raise PageValidationError(f"page size must be positive, got {page.width}x{page.height}")
    previous = None
    for line in page.lines:
        if len(line.polygon) < 3:
            raise PageValidationError(f"polygon has {len(line.polygon)} points, at least 3 required", line.id)
        for x, y in line.polygon:
            if x < 0 or y < 0 or x >= page.width or y >= page.height:
                raise PageValidationError(
                    f"point ({x},{y}) outside page bounds {page.width}x{page.height}", line.id
                )
        if previous is not None and line.reading_order == previous:
            raise PageValidationError(f"duplicate reading order {line.reading_order}", line.id)
        if previous is not None and line.reading_order < previous:
            raise PageValidationError(
                f"reading order {line.reading_order} stored after {previous}; lines must be in reading order",
                line.id,
            )
        previous = line.reading_order


def _byte_offset(xml, position):
    line_no, column = position
    offset = 0
    for _ in range(line_no - 1):
        newline = xml.find(b"\n", offset)
        if newline < 0:
            break
        offset = newline + 1
    return offset + column


def _parse_points(text, line_id):
    points = []
    for token in (text or "").split():
        try:
            x, y = token.split(",")
            points.append((int(float(x)), int(float(y))))
        except ValueError:
            raise PageValidationError(f"malformed point '{token}'", line_id) from None
    return tuple(points)


def parse_page(xml):
    """
    Parse a PAGE XML document into a Page

    Lines are returned in reading order: explicit region ReadingOrder first,
    then the per-line readingOrder custom index, then document order.

    Parameters:
    xml: The document as bytes

    Returns:
    Page: The parsed page. Per-line indices are kept when every line carries
    one and they increase along the reading order; otherwise lines are
    numbered 0..n-1.
    """
    try:
        root = ET.fromstring(xml)
    except ET.ParseError as e:
        raise PageParseError(f"malformed XML: {e}", _byte_offset(xml, e.position)) from e

    if not root.tag.startswith("{" + PAGE_NS_PREFIX):
        raise PageParseError("root element is not in a PAGE namespace", 0)
    ns = {"pc": root.tag[1:root.tag.index("}")]}

    page_el = root.find("pc:Page", ns)
    if page_el is None:
        raise PageParseError("document has no Page element", 0)
    try:
        width = int(page_el.get("imageWidth", "0"))
        height = int(page_el.get("imageHeight", "0"))
    except ValueError as e:
        raise PageValidationError(f"bad page size: {e}") from e

    region_rank = {}
    for ref in page_el.iterfind("pc:ReadingOrder//pc:RegionRefIndexed", ns):
        region_rank[ref.get("regionRef")] = int(ref.get("index", "0"))

    keyed = []
    regions = list(page_el.iter("{%s}TextRegion" % ns["pc"]))
    for region_pos, region in enumerate(regions):
        rank = region_rank.get(region.get("id"), len(region_rank) + region_pos)
        for line_pos, line_el in enumerate(region.iterfind("pc:TextLine", ns)):
            line_id = line_el.get("id") or f"l{region_pos}_{line_pos}"
            coords = line_el.find("pc:Coords", ns)
            polygon = _parse_points(coords.get("points") if coords is not None else "", line_id)
            if len(polygon) < 3:
                raise PageValidationError(f"polygon has {len(polygon)} points, at least 3 required", line_id)

            unicode_el = line_el.find("pc:TextEquiv/pc:Unicode", ns)
            text = unicode_el.text if unicode_el is not None and unicode_el.text is not None else ""

            match = _READING_ORDER_RE.search(line_el.get("custom", ""))
            explicit = int(match.group(1)) if match else None
            line_index = line_pos if explicit is None else explicit
            keyed.append(((rank, region_pos, line_index, line_pos), explicit, line_id, polygon, text))

    keyed.sort(key=lambda item: item[0])
    explicit = [item[1] for item in keyed]
    if None in explicit or any(a >= b for a, b in zip(explicit, explicit[1:])):
        explicit = range(len(keyed))
    lines = tuple(
        TextLine(id=line_id, polygon=polygon, transcription=text, reading_order=order)
        for order, (_, _, line_id, polygon, text) in zip(explicit, keyed)
    )
    page = Page(image_ref=page_el.get("imageFilename", ""), width=width, height=height, lines=lines)
    validate_page(page)
    logger.debug(f"Parsed PAGE document '{page.image_ref}' with {len(lines)} lines")
    return page


def _points_text(points):
    return " ".join(f"{x},{y}" for x, y in points)


def write_page(page):
    """
    Serialize a Page to UTF-8 PAGE XML (2019-07-15 namespace)

    All lines go into a single TextRegion; line order is carried both by
    element order and by the readingOrder custom attribute.
    """
    validate_page(page)
    ET.register_namespace("", PAGE_NS)

    def tag(name):
        return "{%s}%s" % (PAGE_NS, name)

    root = ET.Element(tag("PcGts"))
    metadata = ET.SubElement(root, tag("Metadata"))
    ET.SubElement(metadata, tag("Creator")).text = "scriptine"
    page_el = ET.SubElement(
        root,
        tag("Page"),
        {"imageFilename": page.image_ref, "imageWidth": str(page.width), "imageHeight": str(page.height)},
    )

    if page.lines:
        reading_order = ET.SubElement(page_el, tag("ReadingOrder"))
        group = ET.SubElement(reading_order, tag("OrderedGroup"), {"id": "ro0"})
        ET.SubElement(group, tag("RegionRefIndexed"), {"index": "0", "regionRef": "r0"})

        xs = [x for line in page.lines for x, _ in line.polygon]
        ys = [y for line in page.lines for _, y in line.polygon]
        box = [(min(xs), min(ys)), (max(xs), min(ys)), (max(xs), max(ys)), (min(xs), max(ys))]
        region = ET.SubElement(page_el, tag("TextRegion"), {"id": "r0"})
        ET.SubElement(region, tag("Coords"), {"points": _points_text(box)})
        for line in page.lines:
            line_el = ET.SubElement(
                region,
                tag("TextLine"),
                {"id": line.id, "custom": f"readingOrder {{index:{line.reading_order};}}"},
            )
            ET.SubElement(line_el, tag("Coords"), {"points": _points_text(line.polygon)})
            equiv = ET.SubElement(line_el, tag("TextEquiv"))
            ET.SubElement(equiv, tag("Unicode")).text = line.transcription

    buffer = io.BytesIO()
    ET.ElementTree(root).write(buffer, encoding="utf-8", xml_declaration=True)
    return buffer.getvalue()


def polygon_mask(polygon, x0, y0, width, height):
    """
    Rasterize a polygon over the integer pixel grid of a box

    A pixel belongs to the polygon when its coordinate lies inside (even-odd
    rule) or exactly on an edge, so degenerate polygons keep their outline.

    Returns:
    numpy.ndarray: Boolean mask of shape (height, width)
    """
    ys, xs = np.mgrid[y0:y0 + height, x0:x0 + width]
    inside = np.zeros(xs.shape, dtype=bool)
    on_edge = np.zeros(xs.shape, dtype=bool)
    n = len(polygon)
    for k in range(n):
        xa, ya = polygon[k]
        xb, yb = polygon[(k + 1) % n]
        crosses = (ya > ys) != (yb > ys)
        if ya != yb:
            x_cross = xa + (ys - ya) * (xb - xa) / (yb - ya)
            inside ^= crosses & (xs < x_cross)
        collinear = (xb - xa) * (ys - ya) - (yb - ya) * (xs - xa) == 0
        within = (
            (xs >= min(xa, xb)) & (xs <= max(xa, xb)) & (ys >= min(ya, yb)) & (ys <= max(ya, yb))
        )
        on_edge |= collinear & within
    return inside | on_edge


def extract_line_image(raster, line, source_id=None):
    """
    Crop a line's bounding box out of a page raster

    Parameters:
    raster: Page image as a 2D array (uint8 or float in [0,1]) or RGB array
    line: The TextLine to extract
    source_id: Optional (manuscript, page, line) triple attached to the result

    Returns:
    LineImage: Bounding-box crop, white outside the polygon
    """
    pixels = to_grayscale(raster)
    xs = [x for x, _ in line.polygon]
    ys = [y for _, y in line.polygon]
    x0, x1, y0, y1 = min(xs), max(xs), min(ys), max(ys)
    height, width = pixels.shape
    if x0 < 0 or y0 < 0 or x1 >= width or y1 >= height:
        raise BoundsError(
            f"polygon of line '{line.id}' spans ({x0},{y0})-({x1},{y1}) outside raster {width}x{height}"
        )

    crop = pixels[y0:y1 + 1, x0:x1 + 1].copy()
    mask = polygon_mask(line.polygon, x0, y0, x1 - x0 + 1, y1 - y0 + 1)
    crop[~mask] = 1.0
    return LineImage(crop, source_id or ("", "", line.id))


def corpus_stats(corpus):
    """
    Count pages, lines and transcribed lines per manuscript

    Returns:
    pd.DataFrame: One row per manuscript (manuscript, style, pages, lines, transcribed)
    """
    rows = []
    for manuscript_id, pages in corpus.manuscripts.items():
        lines = [line for page in pages for line in page.lines]
        rows.append({
            "manuscript": manuscript_id,
            "style": corpus.styles[manuscript_id].value if manuscript_id in corpus.styles else "",
            "pages": len(pages),
            "lines": len(lines),
            "transcribed": sum(1 for line in lines if line.transcription),
        })
    return pd.DataFrame(rows, columns=["manuscript", "style", "pages", "lines", "transcribed"])


def corpus_totals(stats):
    """Sum the numeric columns of a corpus_stats frame"""
    return {column: int(stats[column].sum()) for column in ("pages", "lines", "transcribed")}
