"""scriptine command line: corpus ingestion, training, recognition, voting, evaluation and ITA runs."""

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from utils.config import BINARIZE_METHODS, RunConfig, configure_logging, derive_rng, load_config
from utils.data_manager import (
    corpus_samples,
    load_manifest,
    load_page_dir,
    load_predictions,
    load_styles,
    load_transcriptions,
    write_corpus,
    write_manifest,
    write_predictions,
)
from utils.ensemble import vote_lines
from utils.errors import ScriptineError, ShapeError
from utils.evaluation import evaluate_lines, format_confusion_table
from utils.harness import average_ita_tables, make_nested_splits, run_ita, samples_by_page
from utils.model_store import load_model, save_model
from utils.netspec import parse_spec
from utils.pagexml import Style
from utils.protocol import build_mixed_models, finetune, pretrain_printed, train_stages
from utils.recognizer import recognize_lines
from utils.synth_data import synth_corpus

logger = logging.getLogger(__name__)

STOCHASTIC_COMMANDS = {"synth", "train", "finetune", "ita"}
PIPELINE_STEPS = ("printed", "combined", "style")


class UsageError(Exception):
    pass


def _int_list(text):
    try:
        return tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of integers, got '{text}'") from None


def _str_list(text):
    return tuple(part.strip() for part in text.split(",") if part.strip())


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI experiment config ([run], [training], [synth])")
    common.add_argument("--seed", type=int, help="global seed; required by stochastic commands")
    common.add_argument("--spec", help="network spec string")
    common.add_argument("--pages", type=_str_list, help="comma-separated page ids to use")
    common.add_argument("--cutoff", type=int, help="line cutoff of balanced page selection (default 150)")
    common.add_argument("--augment", type=int, help="degraded copies per training line (default 5)")
    common.add_argument("--jobs", type=int, help="worker processes (default: available cores)")
    common.add_argument("--binarize", choices=BINARIZE_METHODS, help="preprocessing method (default sauvola)")
    common.add_argument("--variants", type=_str_list, help="extra binarizations used as augmentation, e.g. otsu,wolf")
    common.add_argument("--log-dir", help="directory for JSON-lines training logs")

    parser = argparse.ArgumentParser(prog="scriptine", description=__doc__)
    commands = parser.add_subparsers(dest="command", required=True)

    ingest = commands.add_parser("ingest", parents=[common], help="PAGE directories -> line manifest")
    ingest.add_argument("--input", required=True, help="directory with one subdirectory per manuscript")
    ingest.add_argument("--output", required=True, help="manifest output directory")

    synth = commands.add_parser("synth", parents=[common], help="generate a synthetic PAGE corpus")
    synth.add_argument("--output", required=True)
    synth.add_argument("--styles", type=_str_list, default=("A", "B"), help="styles to generate (A, B)")

    train = commands.add_parser("train", parents=[common], help="two-stage mixed-model training")
    train.add_argument("--input", required=True, help="line manifest")
    train.add_argument("--output", required=True, help="model file")
    train.add_argument("--base", help="model to start stage 1 from")
    train.add_argument(
        "--pipeline", type=_str_list, default=("combined",),
        help="steps out of printed,combined,style (default combined); style refines one model per script style",
    )
    train.add_argument("--printed-lines", type=int, default=200, help="synthetic lines of the printed step")

    tune = commands.add_parser("finetune", parents=[common], help="document-specific finetuning")
    tune.add_argument("--base", required=True)
    tune.add_argument("--input", required=True, help="line manifest of the target document")
    tune.add_argument("--output", required=True)

    recognize = commands.add_parser("recognize", parents=[common], help="model + lines -> predictions")
    recognize.add_argument("--model", required=True)
    recognize.add_argument("--input", required=True, help="line manifest")
    recognize.add_argument("--output", required=True, help="predictions JSON-lines file")
    recognize.add_argument("--raw-weights", action="store_true", help="decode with raw instead of EMA weights")

    vote = commands.add_parser("vote", parents=[common], help="confidence voting of prediction files")
    vote.add_argument("--inputs", nargs="+", required=True)
    vote.add_argument("--output", required=True)

    evaluate = commands.add_parser("evaluate", parents=[common], help="CER and confusion reports")
    evaluate.add_argument("--gt", required=True, help="manifest (or directory) with ground truth")
    evaluate.add_argument("--pred", required=True, help="predictions (or manifest, or directory)")
    evaluate.add_argument("--output", required=True, help="report directory")
    evaluate.add_argument("--top", type=int, default=10)

    ita = commands.add_parser("ita", parents=[common], help="iterative training simulation")
    ita.add_argument("--input", help="PAGE corpus directory (synthetic corpus when omitted)")
    ita.add_argument("--manuscript", type=_str_list, help="comma-separated target manuscript ids (default: last one)")
    ita.add_argument("--average", action="store_true",
                     help="also write the mean table; without --manuscript every manuscript is a target")
    ita.add_argument("--base", help="mixed model; trained on the other manuscripts when omitted")
    ita.add_argument("--sizes", type=_int_list, help="training-set sizes in pages (default 2,4,8)")
    ita.add_argument("--full-ensemble", action="store_true", help="5-voter from-scratch arm")
    ita.add_argument("--output", required=True)
    return parser


def resolve_config(args):
    """Merge defaults, the optional config file and command-line flags"""
    config = load_config(args.config) if args.config else RunConfig()
    training = config.training
    if args.cutoff is not None:
        training = replace(training, cutoff=args.cutoff)
    if args.augment is not None:
        training = replace(training, augment=args.augment)
    if args.binarize is not None:
        training = replace(training, binarize=args.binarize)
    if args.variants:
        unknown = [m for m in args.variants if m not in BINARIZE_METHODS]
        if unknown:
            raise UsageError(f"unknown binarization variant(s): {', '.join(unknown)}")
        training = replace(training, variants=args.variants)
    config = replace(config, training=training)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if args.spec is not None:
        config = replace(config, spec=args.spec)
    if args.jobs is not None:
        config = replace(config, jobs=args.jobs)
    elif not args.config:
        config = replace(config, jobs=os.cpu_count() or 1)
    if getattr(args, "sizes", None):
        config = replace(config, sizes=args.sizes)
    if getattr(args, "full_ensemble", False):
        config = replace(config, full_ensemble=True)

    if args.command in STOCHASTIC_COMMANDS and config.seed is None:
        raise UsageError(f"'{args.command}' needs --seed (or seed in the [run] config section)")
    parse_spec(config.spec)
    return config


def _all_samples(samples_by_ms):
    return [s for samples in samples_by_ms.values() for s in samples]


def cmd_ingest(args, config):
    corpus, rasters = load_page_dir(args.input, args.pages)
    samples = corpus_samples(
        corpus, rasters, config.training.input_height, config.training.binarize, variants=config.training.variants
    )
    write_manifest(_all_samples(samples), args.output, corpus.styles)
    print(f"{sum(len(s) for s in samples.values())} lines from {len(samples)} manuscripts")


def cmd_synth(args, config):
    corpus, rasters = None, None
    for style in args.styles:
        corpus, rasters = synth_corpus(config.synth, style.upper(), config.seed, corpus=corpus, rasters=rasters)
    write_corpus(corpus, rasters, args.output)


def _filter_pages(samples, pages):
    if not pages:
        return samples
    return [s for s in samples if s.page in set(pages)]


def _model_path(output, name):
    output = Path(output)
    return output.with_name(f"{output.stem}.{name}{output.suffix}")


def cmd_train(args, config):
    steps = set(args.pipeline)
    if not steps <= set(PIPELINE_STEPS) or "combined" not in steps:
        raise UsageError(f"--pipeline needs combined plus optional printed and style, got {','.join(args.pipeline)}")
    if "printed" in steps and args.base:
        raise UsageError("--base and the printed step both provide the starting model")

    samples = _filter_pages(load_manifest(args.input), args.pages)
    base = load_model(args.base) if args.base else None
    if "printed" in steps:
        base = pretrain_printed(
            config.spec, derive_rng(config.seed, "printed"), config.training, args.printed_lines,
            config.synth.alphabet_size, Path(args.log_dir) / "printed" if args.log_dir else None,
        )
        save_model(base, _model_path(args.output, "printed"))

    if "style" not in steps:
        result = train_stages(
            samples, config.spec, derive_rng(config.seed, "train"), base, config.training, args.log_dir
        )
        save_model(result.stage2, args.output)
        print(f"stage 1 val CER {result.stage1_val_cer:.2f}, stage 2 val CER {result.stage2_val_cer:.2f}")
        return

    styles = load_styles(args.input)
    by_style = {}
    for sample in samples:
        by_style.setdefault(styles.get(sample.manuscript, Style.MIXED.value), []).append(sample)
    models = build_mixed_models(by_style, config.spec, derive_rng(config.seed, "mixed"), base, config.training,
                                args.log_dir)
    save_model(models.pop("combined"), args.output)
    for style, model in models.items():
        save_model(model, _model_path(args.output, style))
    print(f"combined model plus {len(models)} style models: {', '.join(models)}")


def cmd_finetune(args, config):
    samples = _filter_pages(load_manifest(args.input), args.pages)
    base = load_model(args.base)
    log_path = Path(args.log_dir) / "finetune.jsonl" if args.log_dir else None
    model = finetune(base, samples, derive_rng(config.seed, "finetune"), config.training, log_path=log_path)
    save_model(model, args.output)


def cmd_recognize(args, config):
    model = load_model(args.model)
    samples = _filter_pages(load_manifest(args.input), args.pages)
    heights = {s.image.height for s in samples}
    if heights and heights != {model.input_height}:
        raise ShapeError(f"manifest line height {sorted(heights)} does not match model input height {model.input_height}")
    predictions = recognize_lines(model, [s.image for s in samples], use_ema=not args.raw_weights)
    write_predictions(predictions, args.output)


def cmd_vote(args, config):
    voted = vote_lines([load_predictions(path) for path in args.inputs])
    write_predictions(voted.values(), args.output)


def cmd_evaluate(args, config):
    report = evaluate_lines(load_transcriptions(args.gt), load_transcriptions(args.pred), args.top)
    output = Path(args.output)
    output.mkdir(parents=True, exist_ok=True)
    (output / "cer.tsv").write_text(report.to_tsv(), encoding="utf-8", newline="\n")
    (output / "confusions.tsv").write_text(format_confusion_table(report.confusions), encoding="utf-8", newline="\n")
    print(f"CER {report.cer:.2f}")


def _ita_corpus(args, config):
    if args.input:
        corpus, rasters = load_page_dir(args.input)
    else:
        synth = replace(config.synth, n_manuscripts=config.synth.n_manuscripts + 1)
        corpus, rasters = synth_corpus(synth, "A", config.seed)
    return corpus_samples(
        corpus, rasters, config.training.input_height, config.training.binarize, variants=config.training.variants
    )


def _run_target(args, config, samples, target, output, log_dir):
    if args.base:
        base = load_model(args.base)
    else:
        others = [s for ms, lines in samples.items() if ms != target for s in lines]
        base = train_stages(others, config.spec, derive_rng(config.seed, "mixed", target), None, config.training,
                            log_dir, name="mixed").stage2 if others else None

    lines_by_page = samples_by_page(samples[target])
    pages = [p for p in lines_by_page if not args.pages or p in args.pages]
    splits = make_nested_splits(pages, config.sizes, derive_rng(config.seed, "splits", target))
    result = run_ita(
        target, lines_by_page, base, splits, config.seed, config.spec, config.training,
        config.full_ensemble, config.jobs, log_dir,
    )
    output.mkdir(parents=True, exist_ok=True)
    (output / "ita.tsv").write_text(result.table.to_tsv(), encoding="utf-8", newline="\n")
    for name, table in result.confusions.items():
        (output / f"confusions.{name}.tsv").write_text(format_confusion_table(table), encoding="utf-8", newline="\n")
    print(result.table.to_tsv(), end="")
    return result.table


def cmd_ita(args, config):
    """One target writes into --output; several targets get one subdirectory each"""
    samples = _ita_corpus(args, config)
    if args.manuscript:
        targets = list(args.manuscript)
    elif args.average:
        targets = list(samples)
    else:
        targets = [list(samples)[-1]]
    unknown = [t for t in targets if t not in samples]
    if unknown:
        raise ScriptineError(f"unknown manuscript(s) {', '.join(unknown)}")
    output = Path(args.output)
    output.mkdir(parents=True, exist_ok=True)
    log_root = Path(args.log_dir) if args.log_dir else output / "logs"

    tables = []
    for target in targets:
        if len(targets) == 1:
            tables.append(_run_target(args, config, samples, target, output, log_root))
        else:
            tables.append(_run_target(args, config, samples, target, output / target, log_root / target))
    if args.average:
        averaged = average_ita_tables(tables)
        (output / "ita.avg.tsv").write_text(averaged.to_tsv(), encoding="utf-8", newline="\n")
        print(averaged.to_tsv(), end="")


COMMANDS = {
    "ingest": cmd_ingest,
    "synth": cmd_synth,
    "train": cmd_train,
    "finetune": cmd_finetune,
    "recognize": cmd_recognize,
    "vote": cmd_vote,
    "evaluate": cmd_evaluate,
    "ita": cmd_ita,
}


def dispatch(argv=None):
    """
    Run one command

    Returns:
    int: 0 on success, 1 on a validation error, 2 on a usage error
    """
    configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 2
    try:
        config = resolve_config(args)
        COMMANDS[args.command](args, config)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"scriptine: error: {e}", file=sys.stderr)
        return 2
    except ScriptineError as e:
        logger.error(f"{type(e).__name__}: {e}")
        print(f"scriptine: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
