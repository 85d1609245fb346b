"""
Training protocols

Balanced page selection, the early-stopping controller, two-stage training of
mixed models, and finetuning of a base model on document-specific ground truth.
"""

import enum
import json
import logging
import math
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from utils.config import TrainingSettings
from utils.errors import InputError
from utils.evaluation import cer
from utils.lineproc import augment_samples
from utils.model import Codec, TrainMeta
from utils.netspec import glorot_rows, instantiate, parse_spec
from utils.recognizer import init_optimizer, recognize_lines, train_step
from utils.synth_data import printed_samples

logger = logging.getLogger(__name__)


class Stage(enum.Enum):
    ALL_PAGES = "AllPages"
    REFINE_SELECTED = "RefineSelected"


@dataclass(frozen=True)
class EarlyStopState:
    best_cer: float = math.inf
    evals_since_best: int = 0
    epoch: int = 0
    eval_every_samples: int = 1000
    stopped: bool = False
    improved: bool = False
    patience: int = 5
    max_epochs: int = 100


@dataclass
class TrainPlan:
    stage: Stage
    train_set: list
    val_set: list
    spec: object
    base_model: object = None

    def __post_init__(self):
        if not self.train_set or not self.val_set:
            raise InputError("a training plan needs non-empty train and validation sets")
        if self.train_set is not self.val_set:
            overlap = {s.line_id for s in self.train_set} & {s.line_id for s in self.val_set}
            if overlap:
                raise InputError(f"{len(overlap)} lines appear in both train and validation sets")


@dataclass
class TwoStageResult:
    stage1: object
    stage2: object
    stage1_val_cer: float
    stage2_val_cer: float
    selected_pages: dict = field(default_factory=dict)


def eval_interval(train_size, settings):
    return max(settings.min_eval_samples, train_size)


def early_stop_update(state, val_cer):
    """
    Register one validation result

    The caller sets state.epoch before calling. Only a strictly lower CER counts
    as an improvement; the run stops after `patience` evaluations without one or
    once the epoch cap is reached.
    """
    if val_cer < 0:
        raise InputError(f"validation CER must be >= 0, got {val_cer}")
    improved = val_cer < state.best_cer
    state = replace(
        state,
        best_cer=val_cer if improved else state.best_cer,
        evals_since_best=0 if improved else state.evals_since_best + 1,
        improved=improved,
    )
    stopped = state.evals_since_best >= state.patience or state.epoch >= state.max_epochs
    return replace(state, stopped=stopped)


def _line_count(page):
    if isinstance(page, int):
        return page
    if hasattr(page, "lines"):
        return len(page.lines)
    return len(page)


def select_balanced_pages(pages, cutoff=150, rng=None, line_count=_line_count):
    """
    Draw whole pages at random until the line cutoff is reached

    Parameters:
    pages: Pages (anything line_count can measure; ints are taken as line counts)
    cutoff: Minimum number of lines to collect
    rng: numpy Generator
    line_count: Maps a page to its number of lines

    Returns:
    list: The drawn pages, in draw order (a prefix of one permutation)
    """
    if cutoff < 1:
        raise InputError(f"cutoff must be >= 1, got {cutoff}")
    order = rng.permutation(len(pages))
    selected, total = [], 0
    for index in order:
        if total >= cutoff:
            break
        selected.append(pages[int(index)])
        total += line_count(pages[int(index)])
    return selected


def group_pages(samples):
    """Group LineSamples by manuscript, then by page, keeping first-seen order"""
    grouped = OrderedDict()
    for sample in samples:
        grouped.setdefault(sample.manuscript, OrderedDict()).setdefault(sample.page, []).append(sample)
    return grouped


def split_validation(samples, fraction, rng):
    """
    Hold out a random fraction of lines for validation

    With fewer than two lines the single line serves as both sets.

    Returns:
    tuple: (train, val), each in input order
    """
    samples = list(samples)
    if not samples:
        raise InputError("cannot split an empty line set")
    if len(samples) < 2:
        logger.warning("Only one line available: validating on the training line")
        return samples, samples
    n_val = min(len(samples) - 1, max(1, int(round(fraction * len(samples)))))
    held = set(int(i) for i in rng.permutation(len(samples))[:n_val])
    train = [s for i, s in enumerate(samples) if i not in held]
    val = [s for i, s in enumerate(samples) if i in held]
    return train, val


def validation_cer(params, samples):
    predictions = recognize_lines(params, [s.image for s in samples], use_ema=True)
    return cer([s.text for s in samples], [p.chars for p in predictions])


def _write_log(handle, record):
    if handle is not None:
        handle.write(json.dumps(record, sort_keys=True) + "\n")
        handle.flush()


def train_model(params, train_set, val_set, rng, settings=None, log_path=None):
    """
    Early-stopped training run

    Every training line is kept and augmented `settings.augment` times. The EMA
    weights are validated every max(min_eval_samples, train size) samples and the
    best snapshot is returned.

    Parameters:
    params: Starting ModelParams; its codec must cover every training label
    train_set: LineSamples to train on
    val_set: LineSamples to validate on
    rng: numpy Generator driving augmentation, shuffling and dropout
    settings: TrainingSettings
    log_path: Optional JSON-lines file receiving one record per evaluation

    Returns:
    tuple: (best ModelParams, list of evaluation records)
    """
    settings = settings or TrainingSettings()
    if not train_set or not val_set:
        raise InputError("training needs non-empty train and validation sets")

    augmented = augment_samples(train_set, settings.augment, rng)
    labels = [params.codec.encode(s.text) for s in augmented]
    state = EarlyStopState(
        eval_every_samples=eval_interval(len(augmented), settings),
        patience=settings.patience,
        max_epochs=settings.max_epochs,
    )
    opt_state = init_optimizer(params)
    best = params
    history = []
    since_eval = 0
    steps = 0
    start_samples = params.train_meta.samples_seen

    handle = None
    if log_path is not None:
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
        handle = open(log_path, "w", encoding="utf-8", newline="\n")

    def evaluate(epoch_done, force_stop=False):
        nonlocal state, best, since_eval
        state = replace(state, epoch=epoch_done)
        value = validation_cer(params, val_set)
        state = early_stop_update(state, value)
        if force_stop:
            state = replace(state, stopped=True)
        if state.improved:
            best = params
        record = {
            "epoch": epoch_done,
            "samples_seen": params.train_meta.samples_seen - start_samples,
            "val_cer": value,
            "best": state.best_cer,
            "stopped": state.stopped,
        }
        history.append(record)
        _write_log(handle, record)
        logger.debug(f"Eval at epoch {epoch_done}: CER {value:.2f} (best {state.best_cer:.2f})")
        since_eval = 0

    try:
        for epoch in range(1, settings.max_epochs + 1):
            order = rng.permutation(len(augmented))
            for begin in range(0, len(order), settings.batch_size):
                batch = [(augmented[i].image, labels[i]) for i in order[begin:begin + settings.batch_size]]
                params, opt_state, _ = train_step(params, batch, opt_state, rng, settings)
                steps += 1
                since_eval += len(batch)
                capped = settings.max_steps is not None and steps >= settings.max_steps
                if since_eval >= state.eval_every_samples or capped:
                    evaluate(epoch - 1 if begin + settings.batch_size < len(order) else epoch, force_stop=capped)
                if state.stopped:
                    break
            if state.stopped:
                break
            params = params.with_tensors(
                params.tensors, train_meta=replace(params.train_meta, epochs=params.train_meta.epochs + 1)
            )
            if epoch == settings.max_epochs and since_eval > 0:
                evaluate(epoch)
    finally:
        if handle is not None:
            handle.close()

    if opt_state.skipped:
        logger.warning(f"Skipped {opt_state.skipped} infeasible samples during training")
    logger.info(f"Training finished after {len(history)} evaluations, best CER {state.best_cer:.2f}")
    return best, history


def adapt_codec(base, texts, rng):
    """
    Extend a model's codec with unseen characters

    New characters are appended; their projection rows are freshly initialized
    while every existing row (raw and EMA) is copied exactly. No character is
    ever removed.
    """
    new_chars = base.codec.missing(texts)
    if not new_chars:
        return base
    codec = base.codec.extended(new_chars)
    weight = base.tensors["proj.weight"]
    features = weight.shape[1]
    fresh = glorot_rows(rng, len(new_chars), features, codec.size + 1, weight.dtype)
    zeros = np.zeros(len(new_chars), dtype=weight.dtype)

    def grow(tensors):
        grown = dict(tensors)
        grown["proj.weight"] = np.concatenate([tensors["proj.weight"], fresh], axis=0)
        grown["proj.bias"] = np.concatenate([tensors["proj.bias"], zeros])
        return grown

    logger.info(f"Codec adapted: added {len(new_chars)} characters ({''.join(new_chars)!r})")
    return replace(base, codec=codec, tensors=grow(base.tensors), ema_tensors=grow(base.ema_tensors))


def _texts(*line_sets):
    return [s.text for lines in line_sets if lines for s in lines]


def finetune(base, gt, rng, settings=None, val_set=None, log_path=None):
    """
    Document-specific training starting from a base model

    Parameters:
    base: ModelParams to start from (never modified)
    gt: LineSamples of the target document
    rng: numpy Generator
    settings: TrainingSettings
    val_set: Validation lines; a random fraction of gt is held out when omitted
    log_path: Optional JSON-lines training log

    Returns:
    ModelParams: The best-validation snapshot
    """
    settings = settings or TrainingSettings()
    if not gt:
        raise InputError("finetuning needs at least one ground-truth line")
    init_rng, split_rng, train_rng = rng.spawn(3)
    adapted = adapt_codec(base, _texts(gt, val_set), init_rng)
    adapted = replace(adapted, train_meta=TrainMeta())
    if val_set is None:
        train_set, val_set = split_validation(gt, settings.val_fraction, split_rng)
    else:
        train_set = list(gt)
    best, _ = train_model(adapted, train_set, val_set, train_rng, settings, log_path)
    return best


def train_from_scratch(spec, gt, rng, settings=None, val_set=None, log_path=None):
    """Fresh model with a codec built from the ground truth, then early-stopped training"""
    settings = settings or TrainingSettings()
    if not gt:
        raise InputError("training needs at least one ground-truth line")
    if isinstance(spec, str):
        spec = parse_spec(spec)
    init_rng, split_rng, train_rng = rng.spawn(3)
    params = instantiate(
        spec,
        settings.input_height,
        Codec.from_texts(_texts(gt, val_set)),
        init_rng,
        dtype=np.dtype(settings.dtype),
    )
    if val_set is None:
        train_set, val_set = split_validation(gt, settings.val_fraction, split_rng)
    else:
        train_set = list(gt)
    best, _ = train_model(params, train_set, val_set, train_rng, settings, log_path)
    return best


def _stage_log(log_dir, name):
    return None if log_dir is None else Path(log_dir) / f"{name}.jsonl"


def train_stages(samples, spec, rng, base_model=None, settings=None, log_dir=None, name="model"):
    """
    Two-stage training on a multi-manuscript line set

    Stage 1 trains on every transcribed line. Stage 2 continues from the stage-1
    model on a balanced subset: per manuscript, whole pages are drawn at random
    until the line cutoff is reached.

    Parameters:
    samples: Transcribed LineSamples (source ids carry manuscript and page)
    spec: NetworkSpec or spec string (used when no base model is given)
    rng: numpy Generator
    base_model: Optional ModelParams to start stage 1 from
    settings: TrainingSettings
    log_dir: Optional directory for the JSON-lines logs of both stages
    name: Prefix of the log file names

    Returns:
    TwoStageResult
    """
    settings = settings or TrainingSettings()
    samples = [s for s in samples if s.text]
    if not samples:
        raise InputError("two-stage training needs at least one transcribed line")
    init_rng, split1_rng, train1_rng, select_rng, split2_rng, train2_rng = rng.spawn(6)

    if base_model is not None:
        start = replace(adapt_codec(base_model, _texts(samples), init_rng), train_meta=TrainMeta())
    else:
        if isinstance(spec, str):
            spec = parse_spec(spec)
        start = instantiate(
            spec, settings.input_height, Codec.from_texts(_texts(samples)), init_rng, dtype=np.dtype(settings.dtype)
        )

    plan1 = TrainPlan(Stage.ALL_PAGES, *split_validation(samples, settings.val_fraction, split1_rng), start.spec, base_model)
    logger.info(f"Stage 1 ({name}): {len(plan1.train_set)} train / {len(plan1.val_set)} val lines")
    stage1, history1 = train_model(start, plan1.train_set, plan1.val_set, train1_rng, settings, _stage_log(log_dir, f"{name}.stage1"))

    selected, refined = {}, []
    for manuscript, pages in group_pages(samples).items():
        page_ids = list(pages)
        chosen = select_balanced_pages(page_ids, settings.cutoff, select_rng, line_count=lambda p: len(pages[p]))
        selected[manuscript] = chosen
        chosen_set = set(chosen)
        refined.extend(s for page_id in page_ids if page_id in chosen_set for s in pages[page_id])

    plan2 = TrainPlan(Stage.REFINE_SELECTED, *split_validation(refined, settings.val_fraction, split2_rng), stage1.spec, stage1)
    logger.info(f"Stage 2 ({name}): {len(plan2.train_set)} train / {len(plan2.val_set)} val lines")
    stage2, history2 = train_model(stage1, plan2.train_set, plan2.val_set, train2_rng, settings, _stage_log(log_dir, f"{name}.stage2"))

    return TwoStageResult(
        stage1=stage1,
        stage2=stage2,
        stage1_val_cer=min(r["val_cer"] for r in history1) if history1 else math.inf,
        stage2_val_cer=min(r["val_cer"] for r in history2) if history2 else math.inf,
        selected_pages=selected,
    )


def two_stage_train(samples, spec, rng, base_model=None, settings=None, log_dir=None):
    """Two-stage training; returns the refined (stage-2) model"""
    return train_stages(samples, spec, rng, base_model, settings, log_dir).stage2


def build_mixed_models(samples_by_style, spec, rng, printed_base=None, settings=None, log_dir=None):
    """
    Mixed-model pipeline

    Starting from a printed-type foundation (or a fresh model), two-stage train a
    combined model on all styles, then refine one model per style starting from
    the combined model.

    Returns:
    dict: "combined" plus one entry per style key of samples_by_style
    """
    settings = settings or TrainingSettings()
    combined_rng, *style_rngs = rng.spawn(1 + len(samples_by_style))
    everything = [s for samples in samples_by_style.values() for s in samples]
    models = {"combined": two_stage_train(everything, spec, combined_rng, printed_base, settings, log_dir)}
    for style_rng, (style, samples) in zip(style_rngs, samples_by_style.items()):
        key = getattr(style, "value", style)
        result = train_stages(samples, spec, style_rng, models["combined"], settings, log_dir, name=f"refine_{key}")
        models[key] = result.stage2
    return models


def pretrain_printed(spec, rng, settings=None, n_lines=200, alphabet_size=20, log_dir=None):
    """Foundation model trained on clean, neutral-hand renderings of both styles"""
    settings = settings or TrainingSettings()
    text_rng, train_rng = rng.spawn(2)
    samples = printed_samples(n_lines, text_rng, alphabet_size, settings.input_height)
    logger.info(f"Pretraining on {len(samples)} printed lines")
    return two_stage_train(samples, spec, train_rng, None, settings, log_dir)
