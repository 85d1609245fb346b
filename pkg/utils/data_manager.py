"""Corpus and artifact I/O: PAGE directories, line manifests and prediction files."""

import json
import logging
from pathlib import Path

import pandas as pd

from utils.errors import InputError
from utils.lineproc import (
    BinarizeMethod,
    LineImage,
    LineSample,
    binarize,
    normalize_height,
    preprocess_variants,
    read_raster,
    write_raster,
)
from utils.pagexml import Corpus, Page, Style, extract_line_image, parse_page, write_page
from utils.recognizer import Prediction

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.jsonl"
PREDICTIONS_NAME = "predictions.jsonl"
STYLES_NAME = "styles.json"
MANIFEST_COLUMNS = ["manuscript", "page", "line_id", "image", "text", "height", "width"]

RESULT_COLUMNS = {
    "ita": ["manuscript", "pages", "fs_cer", "pt_cer", "impr_fs", "impr_prev"],
    "confusion": ["GT", "PRED", "CNT", "%"],
    "log": ["epoch", "samples_seen", "val_cer", "best", "stopped"],
    "predictions": ["line_id", "chars", "confidences", "positions"],
}
JSON_KINDS = ("log", "predictions")


def _write_jsonl(path, records):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for record in records:
            handle.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")
    return path


def _read_jsonl(path):
    records = []
    with open(path, encoding="utf-8") as handle:
        for number, line in enumerate(handle, 1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise InputError(f"{path}:{number}: invalid JSON ({e.msg})") from None
    return records


def write_styles(styles, directory):
    """Store the manuscript -> style mapping as styles.json"""
    values = {ms: getattr(style, "value", style) for ms, style in styles.items()}
    path = Path(directory) / STYLES_NAME
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(values, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return path


def load_styles(path):
    """manuscript -> style name from the styles.json of a corpus or manifest directory; empty when absent"""
    path = Path(path)
    directory = path if path.is_dir() else path.parent
    styles_path = directory / STYLES_NAME
    if not styles_path.exists():
        return {}
    styles = json.loads(styles_path.read_text(encoding="utf-8"))
    unknown = sorted(set(styles.values()) - {s.value for s in Style})
    if unknown:
        raise InputError(f"{styles_path}: unknown style(s) {', '.join(unknown)}")
    return styles


def write_corpus(corpus, rasters, directory):
    """
    Store a corpus as PAGE XML plus PNG rasters

    Layout: <directory>/<manuscript>/<page>.xml next to the page image, and a
    styles.json mapping manuscript id to style.
    """
    directory = Path(directory)
    for manuscript, pages in corpus.manuscripts.items():
        for page in pages:
            image_path = directory / page.image_ref
            image_path.parent.mkdir(parents=True, exist_ok=True)
            write_raster(image_path, rasters[page.image_ref])
            image_path.with_suffix(".xml").write_bytes(write_page(page))
    write_styles(corpus.styles, directory)
    logger.info(f"Wrote {sum(len(p) for p in corpus.manuscripts.values())} pages to {directory}")


def load_page_dir(directory, pages=None):
    """
    Load PAGE XML files grouped by manuscript subdirectory

    Parameters:
    directory: Root with one subdirectory per manuscript
    pages: Optional collection of page stems to keep

    Returns:
    tuple: (Corpus, dict image_ref -> raster)
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise InputError(f"not a directory: {directory}")
    styles = load_styles(directory)

    corpus, rasters = Corpus(), {}
    for manuscript_dir in sorted(p for p in directory.iterdir() if p.is_dir()):
        loaded = []
        for xml_path in sorted(manuscript_dir.glob("*.xml")):
            if pages is not None and xml_path.stem not in pages:
                continue
            page = parse_page(xml_path.read_bytes())
            image_ref = f"{manuscript_dir.name}/{Path(page.image_ref).name}"
            raster_path = directory / image_ref
            if not raster_path.exists():
                raise InputError(f"page image missing for {xml_path}: {raster_path}")
            rasters[image_ref] = read_raster(raster_path)
            loaded.append(Page(image_ref, page.width, page.height, page.lines))
        if loaded:
            corpus.add_manuscript(manuscript_dir.name, loaded, styles.get(manuscript_dir.name, Style.MIXED.value))
    if not corpus.manuscripts:
        raise InputError(f"no PAGE XML files found under {directory}")
    return corpus, rasters


def prepare_line(image, input_height, method=None):
    """Binarize (optional) and height-normalize one extracted line"""
    if method is not None:
        image = binarize(image, BinarizeMethod(method))
    return normalize_height(image, input_height)


def corpus_samples(corpus, rasters, input_height=48, method=None, transcribed_only=True, variants=()):
    """
    Cut every line of a corpus into a LineSample

    `variants` names extra binarization methods; each line then also carries
    its height-normalized rendering under every one of them.

    Returns:
    dict: manuscript -> list of LineSamples in page and reading order
    """
    samples = {}
    for manuscript, pages in corpus.manuscripts.items():
        lines = []
        for page in pages:
            page_id = Path(page.image_ref).stem
            for line in page.lines:
                if transcribed_only and not line.transcription:
                    continue
                image = extract_line_image(rasters[page.image_ref], line, (manuscript, page_id, line.id))
                alternatives = tuple(normalize_height(v, input_height) for v in preprocess_variants(image, variants))
                lines.append(LineSample(prepare_line(image, input_height, method), line.transcription, alternatives))
        samples[manuscript] = lines
    return samples


def write_manifest(samples, directory, styles=None):
    """
    Store line images as PNGs and index them in manifest.jsonl

    With `styles` (manuscript -> Style), a styles.json is written next to the manifest.

    Returns:
    Path: The manifest path
    """
    directory = Path(directory)
    records = []
    for sample in samples:
        manuscript, page, line_id = (str(part) for part in sample.image.source_id)
        image_path = Path("lines") / manuscript / page / f"{line_id}.png"
        (directory / image_path).parent.mkdir(parents=True, exist_ok=True)
        write_raster(directory / image_path, sample.image.pixels)
        variant_paths = []
        for k, variant in enumerate(sample.variants):
            variant_path = image_path.with_name(f"{line_id}.v{k}.png")
            write_raster(directory / variant_path, variant.pixels)
            variant_paths.append(variant_path.as_posix())
        records.append({
            "manuscript": manuscript,
            "page": page,
            "line_id": line_id,
            "image": image_path.as_posix(),
            "text": sample.text,
            "height": sample.image.height,
            "width": sample.image.width,
            "variants": variant_paths,
        })
    path = _write_jsonl(directory / MANIFEST_NAME, records)
    if styles:
        write_styles(styles, directory)
    logger.info(f"Wrote manifest with {len(records)} lines to {path}")
    return path


def validate_manifest(frame):
    """
    Check a manifest frame

    Returns:
    tuple: (is_valid, message, frame)
    """
    missing_columns = [col for col in MANIFEST_COLUMNS if col not in frame.columns]
    if missing_columns:
        return False, f"Missing required columns: {', '.join(missing_columns)}", None
    duplicates = frame.duplicated(["manuscript", "page", "line_id"]).sum()
    if duplicates > 0:
        return False, f"Found {duplicates} duplicate line ids", None
    if frame["height"].nunique() > 1:
        return False, f"Lines have different heights: {sorted(frame['height'].unique().tolist())}", None
    return True, "Manifest validated successfully", frame


def _resolve(path, default_name):
    path = Path(path)
    return path / default_name if path.is_dir() else path


def load_manifest(path):
    """
    Load the line samples indexed by a manifest

    Returns:
    list: LineSamples in manifest order
    """
    path = _resolve(path, MANIFEST_NAME)
    if not path.exists():
        raise InputError(f"manifest not found: {path}")
    records = _read_jsonl(path)
    frame = pd.DataFrame(records, columns=MANIFEST_COLUMNS)
    is_valid, message, frame = validate_manifest(frame)
    if not is_valid:
        raise InputError(f"{path}: {message}")
    samples = []
    for record, raw in zip(frame.itertuples(index=False), records):
        source_id = (record.manuscript, record.page, record.line_id)
        image = LineImage(read_raster(path.parent / record.image), source_id)
        variants = tuple(LineImage(read_raster(path.parent / v), source_id) for v in raw.get("variants", ()))
        samples.append(LineSample(image, record.text, variants))
    return samples


def write_predictions(predictions, path):
    return _write_jsonl(path, (p.to_record() for p in predictions))


def load_predictions(path):
    """dict line id -> Prediction"""
    path = _resolve(path, PREDICTIONS_NAME)
    if not path.exists():
        raise InputError(f"predictions not found: {path}")
    predictions = [Prediction.from_record(record) for record in _read_jsonl(path)]
    return {p.line_ref: p for p in predictions}


def load_transcriptions(path):
    """
    dict line id -> text from a manifest or a prediction file

    Directories resolve to their manifest, or their prediction file when no manifest exists.
    """
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME if (path / MANIFEST_NAME).exists() else path / PREDICTIONS_NAME
    if not path.exists():
        raise InputError(f"transcriptions not found: {path}")
    texts = {}
    for record in _read_jsonl(path):
        if "chars" in record:
            texts[record["line_id"]] = record["chars"]
        else:
            key = "/".join(str(record[k]) for k in ("manuscript", "page", "line_id"))
            texts[key] = record.get("text", "")
    return texts


def validate_results(file, kind):
    """
    Validate an uploaded result file for the dashboard

    Parameters:
    file: Uploaded file object (name + buffer) or path
    kind: "ita" (result table TSV), "confusion" (confusion TSV), "log" (training JSON lines)
        or "predictions" (prediction JSON lines)

    Returns:
    tuple: (is_valid, message, data)
    """
    if kind not in RESULT_COLUMNS:
        return False, f"Unknown result type '{kind}'", None
    name = getattr(file, "name", str(file))
    try:
        if kind in JSON_KINDS:
            if not name.endswith((".jsonl", ".json")):
                return False, "Unsupported file type. Please upload a JSON-lines file.", None
            data = pd.read_json(file, lines=True, dtype=False)
        else:
            if not name.endswith((".tsv", ".txt")):
                return False, "Unsupported file type. Please upload a TSV file.", None
            data = pd.read_csv(file, sep="\t", dtype=str, keep_default_na=False)

        missing_columns = [col for col in RESULT_COLUMNS[kind] if col not in data.columns]
        if missing_columns:
            return False, f"Missing required columns: {', '.join(missing_columns)}", None
        if kind == "log" and not pd.api.types.is_numeric_dtype(data["val_cer"]):
            return False, "val_cer column must contain numeric values", None
        return True, "Data validated successfully", data

    except Exception as e:
        return False, f"Error during validation: {str(e)}", None
