"""Recognition quality metrics: alignment, CER, improvement rates and confusion analysis."""

import logging
from collections import Counter
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal

import editdistance
import numpy as np
import pandas as pd

from utils.errors import InputError

logger = logging.getLogger(__name__)

MATCH, SUB, DEL, INS = "match", "sub", "del", "ins"
SPACE_MARK = "␣"


@dataclass(frozen=True)
class Alignment:
    """Ops are (kind, gt_char, pred_char); gt_char is None for ins, pred_char None for del"""
    ops: tuple = ()

    @property
    def gt(self):
        return "".join(g for _, g, _ in self.ops if g is not None)

    @property
    def pred(self):
        return "".join(p for _, _, p in self.ops if p is not None)

    @property
    def errors(self):
        return sum(1 for kind, _, _ in self.ops if kind != MATCH)


def edit_distance(gt, pred):
    """
    Unit-cost Levenshtein distance with one optimal alignment

    Backtrace ties prefer match, then substitution, then deletion, then insertion.

    Returns:
    tuple: (distance, Alignment)
    """
    n, m = len(gt), len(pred)
    table = np.zeros((n + 1, m + 1), dtype=np.int64)
    table[:, 0] = np.arange(n + 1)
    table[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            diagonal = table[i - 1, j - 1] + (gt[i - 1] != pred[j - 1])
            table[i, j] = min(diagonal, table[i - 1, j] + 1, table[i, j - 1] + 1)

    ops = []
    i, j = n, m
    while i > 0 or j > 0:
        here = table[i, j]
        if i > 0 and j > 0 and gt[i - 1] == pred[j - 1] and here == table[i - 1, j - 1]:
            ops.append((MATCH, gt[i - 1], pred[j - 1]))
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and here == table[i - 1, j - 1] + 1:
            ops.append((SUB, gt[i - 1], pred[j - 1]))
            i, j = i - 1, j - 1
        elif i > 0 and here == table[i - 1, j] + 1:
            ops.append((DEL, gt[i - 1], None))
            i -= 1
        else:
            ops.append((INS, None, pred[j - 1]))
            j -= 1
    return int(table[n, m]), Alignment(tuple(reversed(ops)))


def _pair_lines(gt_lines, pred_lines):
    if isinstance(gt_lines, dict) or isinstance(pred_lines, dict):
        if not (isinstance(gt_lines, dict) and isinstance(pred_lines, dict)):
            raise InputError("ground truth and predictions must both be keyed by line id")
        unpaired = sorted(set(gt_lines) ^ set(pred_lines))
        if unpaired:
            raise InputError(f"unpaired line ids: {', '.join(map(str, unpaired[:10]))}")
        return [(gt_lines[key], pred_lines[key]) for key in sorted(gt_lines)]
    if len(gt_lines) != len(pred_lines):
        raise InputError(f"{len(gt_lines)} ground-truth lines but {len(pred_lines)} predictions")
    return list(zip(gt_lines, pred_lines))


def cer(gt_lines, pred_lines):
    """
    Pooled character error rate in percent

    Parameters:
    gt_lines: List of GT strings, or dict line id -> GT string
    pred_lines: Predictions in the same form

    Returns:
    float: 100 * total edit distance / total GT characters
    """
    pairs = _pair_lines(gt_lines, pred_lines)
    distance = sum(editdistance.eval(gt, pred) for gt, pred in pairs)
    chars = sum(len(gt) for gt, _ in pairs)
    if chars == 0:
        return 100.0 if distance > 0 else 0.0
    return 100.0 * distance / chars


def round_half_up(value, places=0):
    quantum = Decimal(1).scaleb(-places)
    rounded = Decimal(repr(float(value))).quantize(quantum, rounding=ROUND_HALF_UP)
    return int(rounded) if places == 0 else float(rounded)


def improvement_rates(fs_cer, pt_cer, prev_pt_cer):
    """
    Relative CER reduction of the pretrained arm

    Returns:
    tuple: (over from-scratch, over the previous iteration) as integer percents;
        None where the reference CER is zero or missing
    """
    def rate(reference):
        if reference is None or pt_cer is None or reference == 0:
            return None
        return round_half_up(100.0 * (reference - pt_cer) / reference)

    return rate(fs_cer), rate(prev_pt_cer)


def format_cer(value):
    return "-" if value is None else f"{round_half_up(value, 2):.2f}"


def format_rates(rates):
    return "/".join("-" if r is None else str(r) for r in rates)


@dataclass(frozen=True)
class ConfusionTable:
    rows: tuple = ()
    total_errors: int = 0

    def to_frame(self):
        return pd.DataFrame(
            [{"gt": g, "pred": p, "count": c, "percent": pct} for g, p, c, pct in self.rows],
            columns=["gt", "pred", "count", "percent"],
        )


def _fragments(alignment):
    """Split an alignment's error ops into confusion fragments"""
    fragments = []
    run = []
    for op in alignment.ops + ((MATCH, None, None),):
        if op[0] != MATCH:
            run.append(op)
            continue
        if run:
            kinds = {kind for kind, _, _ in run}
            if SUB in kinds and kinds & {DEL, INS}:
                fragments.append((
                    "".join(g for _, g, _ in run if g is not None),
                    "".join(p for _, _, p in run if p is not None),
                ))
            else:
                fragments.extend((g or "", p or "") for _, g, p in run)
            run = []
    return fragments


def confusion_table(pairs, top_k=10):
    """
    Most frequent confusions over (gt, pred) pairs

    A maximal run of consecutive errors that mixes a substitution with a
    deletion or insertion becomes a single multi-character fragment. Percentages
    are relative to the total number of error operations before merging.

    Returns:
    ConfusionTable: At most top_k rows, by count descending then GT fragment
    """
    counts = Counter()
    total = 0
    for gt, pred in pairs:
        distance, alignment = edit_distance(gt, pred)
        total += distance
        counts.update(_fragments(alignment))
    if total == 0:
        return ConfusionTable()
    ranked = sorted(counts.items(), key=lambda item: (-item[1], item[0][0], item[0][1]))
    if top_k is not None:
        ranked = ranked[:top_k]
    rows = tuple((g, p, c, 100.0 * c / total) for (g, p), c in ranked)
    return ConfusionTable(rows, total)


def _display(fragment):
    return fragment.replace(" ", SPACE_MARK)


def format_confusion_table(table):
    """TSV with columns GT, PRED, CNT, % (one decimal, half-up); spaces shown as a visible mark"""
    lines = ["GT\tPRED\tCNT\t%"]
    for gt, pred, count, percent in table.rows:
        lines.append(f"{_display(gt)}\t{_display(pred)}\t{count}\t{round_half_up(percent, 1):.1f}")
    return "\n".join(lines) + "\n"


def compare_confusions(tables):
    """
    Side-by-side confusion counts of several stages

    Parameters:
    tables: dict stage label -> ConfusionTable, in display order

    Returns:
    pd.DataFrame: Index (gt, pred), one count column per stage, 0 where absent
    """
    frames = []
    for label, table in tables.items():
        frame = table.to_frame().set_index(["gt", "pred"])["count"].rename(label)
        frames.append(frame)
    if not frames:
        return pd.DataFrame()
    merged = pd.concat(frames, axis=1).fillna(0).astype(int)
    return merged.sort_values(list(tables)[0], ascending=False, kind="mergesort")


def line_confidence(pred):
    """Mean per-character confidence; 0 for an empty prediction"""
    if not pred.confidences:
        return 0.0
    return float(np.mean(pred.confidences))


def rank_uncertain_lines(preds, k=10):
    """The k predictions with the lowest line confidence, least confident first"""
    ranked = sorted(preds, key=lambda p: (line_confidence(p), p.line_ref))
    return ranked[:k]


@dataclass
class EvaluationReport:
    cer: float = 0.0
    lines: int = 0
    chars: int = 0
    errors: int = 0
    confusions: ConfusionTable = field(default_factory=ConfusionTable)

    def to_tsv(self):
        return (
            "lines\tchars\terrors\tcer\n"
            f"{self.lines}\t{self.chars}\t{self.errors}\t{format_cer(self.cer)}\n"
        )


def evaluate_lines(gt_by_id, pred_by_id, top_k=10):
    """CER and confusion table of predictions keyed by line id"""
    pairs = _pair_lines(gt_by_id, pred_by_id)
    errors = sum(editdistance.eval(gt, pred) for gt, pred in pairs)
    report = EvaluationReport(
        cer=cer(gt_by_id, pred_by_id),
        lines=len(pairs),
        chars=sum(len(gt) for gt, _ in pairs),
        errors=errors,
        confusions=confusion_table(pairs, top_k),
    )
    logger.info(f"Evaluated {report.lines} lines: CER {report.cer:.2f}%")
    return report
