"""
Iterative-training simulation

Nested page splits, the from-scratch vs pretrained comparison per training-set
size, result tables in the published layout, and the transfer experiment on the
synthetic corpus.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd

from utils.config import SynthSettings, TrainingSettings, derive_rng
from utils.data_manager import corpus_samples
from utils.ensemble import cross_fold_train, ensemble_recognize
from utils.errors import InputError
from utils.evaluation import cer, confusion_table, format_cer, improvement_rates
from utils.protocol import finetune, group_pages, train_from_scratch, train_stages
from utils.recognizer import recognize_lines
from utils.synth_data import synth_corpus

logger = logging.getLogger(__name__)

DEFAULT_SIZES = (2, 4, 8, 16, 32)
TABLE_COLUMNS = ["manuscript", "pages", "fs_cer", "pt_cer", "impr_fs", "impr_prev"]


@dataclass(frozen=True)
class NestedSplits:
    eval_pages: tuple
    train_sets: dict


@dataclass(frozen=True)
class ItaRow:
    pages: int
    fs_cer: float | None
    pt_cer: float | None
    impr_fs: int | None = None
    impr_prev: int | None = None


@dataclass
class ItaResultTable:
    manuscript: str
    out_of_box: float | None = None
    rows: list = field(default_factory=list)

    def to_frame(self):
        records = []
        if self.out_of_box is not None:
            records.append(ItaRow(0, None, self.out_of_box))
        records.extend(self.rows)
        return pd.DataFrame(
            [
                {
                    "manuscript": self.manuscript,
                    "pages": row.pages,
                    "fs_cer": row.fs_cer,
                    "pt_cer": row.pt_cer,
                    "impr_fs": row.impr_fs,
                    "impr_prev": row.impr_prev,
                }
                for row in records
            ],
            columns=TABLE_COLUMNS,
        )

    def to_tsv(self):
        """UTF-8 TSV; CERs with two decimals, missing entries as "-" """
        frame = self.to_frame()
        lines = ["\t".join(TABLE_COLUMNS)]
        for record in frame.itertuples(index=False):
            lines.append("\t".join([
                str(record.manuscript),
                str(record.pages),
                format_cer(None if pd.isna(record.fs_cer) else record.fs_cer),
                format_cer(None if pd.isna(record.pt_cer) else record.pt_cer),
                "-" if pd.isna(record.impr_fs) else str(int(record.impr_fs)),
                "-" if pd.isna(record.impr_prev) else str(int(record.impr_prev)),
            ]))
        return "\n".join(lines) + "\n"


@dataclass
class ItaResult:
    table: ItaResultTable
    confusions: dict = field(default_factory=dict)


def make_nested_splits(pages, sizes=DEFAULT_SIZES, rng=None):
    """
    Nested training sets plus a fixed evaluation remainder

    max(sizes) pages are drawn at random; every smaller set is a uniform random
    subset of the next larger one. Page lists keep the input order.

    Returns:
    NestedSplits
    """
    pages = list(pages)
    sizes = sorted(set(int(s) for s in sizes))
    if not sizes or sizes[0] < 1:
        raise InputError(f"training-set sizes must be positive, got {sizes}")
    if len(pages) <= sizes[-1]:
        raise InputError(f"{len(pages)} pages cannot provide {sizes[-1]} training pages plus an evaluation set")

    position = {page: i for i, page in enumerate(pages)}
    parent = [pages[int(i)] for i in rng.permutation(len(pages))[:sizes[-1]]]
    train_sets = {}
    for size in reversed(sizes):
        chosen = [parent[int(i)] for i in rng.choice(len(parent), size=size, replace=False)]
        parent = sorted(chosen, key=position.get)
        train_sets[size] = tuple(parent)
    drawn = set(train_sets[sizes[-1]])
    eval_pages = tuple(page for page in pages if page not in drawn)
    return NestedSplits(eval_pages, {size: train_sets[size] for size in sizes})


def _evaluate(model, eval_lines, voters=None):
    images = [s.image for s in eval_lines]
    predictions = ensemble_recognize(voters, images) if voters is not None else recognize_lines(model, images)
    pairs = [(s.text, p.chars) for s, p in zip(eval_lines, predictions)]
    return cer([g for g, _ in pairs], [p for _, p in pairs]), pairs


def _run_arm(job):
    arm, size, base, spec, train_lines, eval_lines, seed, keys, settings, full_ensemble, log_path = job
    rng = derive_rng(seed, *keys)
    if arm == "pt":
        model = finetune(base, train_lines, rng, settings, log_path=log_path)
        value, pairs = _evaluate(model, eval_lines)
    elif full_ensemble and len(train_lines) >= 5:
        voters = cross_fold_train(train_lines, 5, None, rng, spec, settings)
        value, pairs = _evaluate(None, eval_lines, voters)
    else:
        model = train_from_scratch(spec, train_lines, rng, settings, log_path=log_path)
        value, pairs = _evaluate(model, eval_lines)
    logger.info(f"{keys[0]} {arm.upper()} size {size}: CER {value:.2f}")
    return (arm, size), value, pairs


def run_ita(manuscript, lines_by_page, base_model, splits, seed, spec, settings=None,
            full_ensemble=False, jobs=1, log_dir=None, top_k=10):
    """
    Simulate the iterative training approach on one manuscript

    Every pretrained arm starts from the unmodified base model; the from-scratch
    arm trains a fresh model (or a 5-voter ensemble) on the same pages.

    Parameters:
    manuscript: Manuscript id (labels the table and keys the random streams)
    lines_by_page: dict page id -> transcribed LineSamples
    base_model: ModelParams of the mixed model, or None (no PT arm, no row 0)
    splits: NestedSplits over the page ids
    seed: Experiment seed
    spec: Network spec for the from-scratch arm
    settings: TrainingSettings
    full_ensemble: Train the from-scratch arm as a cross-fold ensemble
    jobs: Worker processes for the independent (arm, size) runs
    log_dir: Optional directory for per-arm JSON-lines training logs
    top_k: Rows of each confusion table

    Returns:
    ItaResult: Result table plus confusion tables keyed "oob" and "pt<size>"
    """
    settings = settings or TrainingSettings()
    needed = list(splits.eval_pages) + [p for pages in splits.train_sets.values() for p in pages]
    missing = sorted({p for p in needed if not lines_by_page.get(p)})
    if missing:
        raise InputError(f"missing ground truth for pages: {', '.join(map(str, missing))}")

    eval_lines = [s for page in splits.eval_pages for s in lines_by_page[page]]
    table = ItaResultTable(manuscript)
    confusions = {}
    if base_model is not None:
        table.out_of_box, pairs = _evaluate(base_model, eval_lines)
        confusions["oob"] = confusion_table(pairs, top_k)

    jobs_list = []
    for size, pages in sorted(splits.train_sets.items()):
        train_lines = [s for page in pages for s in lines_by_page[page]]
        arms = ("fs", "pt") if base_model is not None else ("fs",)
        for arm in arms:
            log_path = None if log_dir is None else Path(log_dir) / f"{manuscript}.{arm}{size}.jsonl"
            jobs_list.append((
                arm, size, base_model, spec, train_lines, eval_lines, seed,
                (str(manuscript), arm, size), settings, full_ensemble, log_path,
            ))

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_arm, jobs_list))
    else:
        outcomes = [_run_arm(job) for job in jobs_list]
    results = {key: (value, pairs) for key, value, pairs in outcomes}

    previous = table.out_of_box
    for size in sorted(splits.train_sets):
        fs_value = results[("fs", size)][0]
        pt_value = results[("pt", size)][0] if ("pt", size) in results else None
        impr_fs, impr_prev = improvement_rates(fs_value, pt_value, previous)
        table.rows.append(ItaRow(size, fs_value, pt_value, impr_fs, impr_prev))
        if pt_value is not None:
            confusions[f"pt{size}"] = confusion_table(results[("pt", size)][1], top_k)
        previous = pt_value
    return ItaResult(table, confusions)


def average_ita_tables(tables, label="Avg."):
    """
    Mean CERs per size over several tables; improvement rates are recomputed from the means
    """
    if not tables:
        raise InputError("nothing to average")
    sizes = sorted({row.pages for table in tables for row in table.rows})

    def mean(values):
        values = [v for v in values if v is not None]
        return float(np.mean(values)) if values else None

    averaged = ItaResultTable(label, mean([t.out_of_box for t in tables]))
    previous = averaged.out_of_box
    for size in sizes:
        rows = [row for table in tables for row in table.rows if row.pages == size]
        fs_value = mean([r.fs_cer for r in rows])
        pt_value = mean([r.pt_cer for r in rows])
        impr_fs, impr_prev = improvement_rates(fs_value, pt_value, previous)
        averaged.rows.append(ItaRow(size, fs_value, pt_value, impr_fs, impr_prev))
        previous = pt_value
    return averaged


def samples_by_page(samples):
    """dict page id -> LineSamples for one manuscript's lines"""
    grouped = group_pages(samples)
    return {page: lines for pages in grouped.values() for page, lines in pages.items()}


def run_transfer_experiment(seed, spec, settings=None, synth=None, finetune_pages=2, log_dir=None):
    """
    In-domain vs out-of-domain pretraining against training from scratch

    Style-A and style-B mixed models are trained on synth.n_manuscripts
    manuscripts each. One further style-A manuscript is held out: finetune_pages
    of its pages train every arm, the rest evaluate.

    Returns:
    dict: arm ("in_domain", "out_of_domain", "from_scratch") -> eval CER
    """
    settings = settings or TrainingSettings()
    synth = synth or SynthSettings()
    corpus, rasters = synth_corpus(synth, "A", seed)
    synth_corpus(synth, "B", seed, corpus=corpus, rasters=rasters)
    held_out, held_rasters = synth_corpus(replace(synth, n_manuscripts=1), "A", seed, first_index=synth.n_manuscripts)
    lines = corpus_samples(corpus, rasters, settings.input_height, settings.binarize, variants=settings.variants)
    held_lines = corpus_samples(
        held_out, held_rasters, settings.input_height, settings.binarize, variants=settings.variants
    )
    target = next(iter(held_lines.values()))

    by_style = {"A": [], "B": []}
    for ms, samples in lines.items():
        by_style[ms[0]].extend(samples)
    base_a = train_stages(by_style["A"], spec, derive_rng(seed, "mixed", "A"), None, settings, log_dir, name="mixed_A").stage2
    base_b = train_stages(by_style["B"], spec, derive_rng(seed, "mixed", "B"), None, settings, log_dir, name="mixed_B").stage2

    pages = samples_by_page(target)
    page_ids = list(pages)
    order = derive_rng(seed, "transfer", "pages").permutation(len(page_ids))
    train_ids = {page_ids[int(i)] for i in order[:finetune_pages]}
    train_lines = [s for p in page_ids if p in train_ids for s in pages[p]]
    eval_lines = [s for p in page_ids if p not in train_ids for s in pages[p]]

    outcome = {
        "in_domain": finetune(base_a, train_lines, derive_rng(seed, "transfer", "in"), settings),
        "out_of_domain": finetune(base_b, train_lines, derive_rng(seed, "transfer", "out"), settings),
        "from_scratch": train_from_scratch(spec, train_lines, derive_rng(seed, "transfer", "fs"), settings),
    }
    results = {arm: _evaluate(model, eval_lines)[0] for arm, model in outcome.items()}
    logger.info(f"Transfer experiment (seed {seed}): {results}")
    return results
