"""Cross-fold voter training and character-level confidence voting."""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from utils.config import TrainingSettings, spawn_seed
from utils.errors import InputError
from utils.protocol import finetune, split_validation, train_from_scratch
from utils.recognizer import Prediction, recognize_lines

logger = logging.getLogger(__name__)

NEAR_FRAMES = 2
NEAR_COST = 0.0
FAR_COST = 0.5
EDIT_COST = 1.0


@dataclass(frozen=True)
class VoterSet:
    voters: tuple
    fold_assignments: tuple

    @property
    def size(self):
        return len(self.voters)


def assign_folds(count, n, rng):
    """Fold index per line; a random permutation dealt round-robin"""
    folds = np.empty(count, dtype=np.int64)
    for rank, index in enumerate(rng.permutation(count)):
        folds[index] = rank % n
    return tuple(int(f) for f in folds)


def _train_voter(job):
    spec, base, train_set, val_set, seed, settings = job
    rng = np.random.default_rng(seed)
    if base is not None:
        return finetune(base, train_set, rng, settings, val_set=val_set)
    return train_from_scratch(spec, train_set, rng, settings, val_set=val_set)


def cross_fold_train(gt, n=5, base=None, rng=None, spec=None, settings=None, jobs=1):
    """
    Train n voters on rotating validation folds

    Parameters:
    gt: LineSamples of the target document
    n: Number of voters (folds)
    base: Optional ModelParams every voter starts from
    rng: numpy Generator
    spec: Network spec for from-scratch voters (ignored with a base)
    settings: TrainingSettings
    jobs: Worker processes; voters train concurrently when > 1

    Returns:
    VoterSet
    """
    settings = settings or TrainingSettings()
    if n < 1:
        raise InputError(f"need at least one voter, got {n}")
    if len(gt) < n:
        raise InputError(f"{len(gt)} lines cannot be split into {n} folds")
    if base is None and spec is None:
        raise InputError("from-scratch voters need a network spec")

    fold_rng, *voter_rngs = rng.spawn(n + 1)
    if n == 1:
        folds = tuple(0 for _ in gt)
        train_set, val_set = split_validation(gt, settings.val_fraction, fold_rng)
        splits = [(train_set, val_set)]
    else:
        folds = assign_folds(len(gt), n, fold_rng)
        splits = [
            ([s for s, f in zip(gt, folds) if f != i], [s for s, f in zip(gt, folds) if f == i])
            for i in range(n)
        ]

    job_list = [
        (spec, base, train_set, val_set, spawn_seed(voter_rng), settings)
        for voter_rng, (train_set, val_set) in zip(voter_rngs, splits)
    ]
    logger.info(f"Training {n} voters on {len(gt)} lines ({jobs} jobs)")
    if jobs > 1 and n > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, n)) as pool:
            voters = list(pool.map(_train_voter, job_list))
    else:
        voters = [_train_voter(job) for job in job_list]
    return VoterSet(tuple(voters), folds)


class _Column:
    """One aligned position; voters with a gap here have no entry"""

    def __init__(self):
        self.entries = []

    def add(self, rank, voter, char, conf, position):
        self.entries.append((rank, voter, char, conf, position))

    def tally(self, by="voter"):
        """Summed confidence per character and the (index, position) of its first vote"""
        slot = 0 if by == "rank" else 1
        sums, first = {}, {}
        for entry in self.entries:
            char, conf, position = entry[2:]
            sums[char] = sums.get(char, 0.0) + conf
            if char not in first or entry[slot] < first[char][0]:
                first[char] = (entry[slot], position)
        return sums, first

    def leader(self):
        sums, first = self.tally(by="rank")
        best = max(sums, key=lambda c: (sums[c], -first[c][0]))
        return best, first[best][1]


def _processing_order(preds):
    """Voter indices, most confident prediction first; depends only on the predictions themselves"""
    return sorted(
        range(len(preds)),
        key=lambda v: (-sum(preds[v].confidences), preds[v].chars, preds[v].confidences, preds[v].positions),
    )


def _substitution_cost(char, position, column):
    leader, leader_pos = column.leader()
    if char != leader:
        return EDIT_COST
    return NEAR_COST if abs(position - leader_pos) <= NEAR_FRAMES else FAR_COST


def _align(columns, pred):
    """Edit-distance alignment of one prediction against the current columns"""
    n, m = len(columns), len(pred.chars)
    cost = np.zeros((n + 1, m + 1))
    cost[:, 0] = np.arange(n + 1) * EDIT_COST
    cost[0, :] = np.arange(m + 1) * EDIT_COST
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            cost[i, j] = min(
                cost[i - 1, j - 1] + _substitution_cost(pred.chars[j - 1], pred.positions[j - 1], columns[i - 1]),
                cost[i - 1, j] + EDIT_COST,
                cost[i, j - 1] + EDIT_COST,
            )
    pairs = []
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and np.isclose(
            cost[i, j],
            cost[i - 1, j - 1] + _substitution_cost(pred.chars[j - 1], pred.positions[j - 1], columns[i - 1]),
        ):
            pairs.append((i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and np.isclose(cost[i, j], cost[i - 1, j] + EDIT_COST):
            pairs.append((i - 1, None))
            i -= 1
        else:
            pairs.append((None, j - 1))
            j -= 1
    return list(reversed(pairs))


def confidence_vote(preds):
    """
    Combine voter predictions of one line by summed character confidences

    Predictions are aligned one after another against the growing consensus,
    starting from the most confident one, so the alignment does not depend on
    the order the voters are passed in. Characters of the same kind within two
    frames align preferentially. In each column the character with the highest
    confidence sum wins (ties go to the lowest voter index); a column whose best
    sum is zero emits nothing. The output confidence is the winning sum divided
    by the number of voters.

    Parameters:
    preds: Predictions of the same line, in voter order

    Returns:
    Prediction
    """
    if not preds:
        raise InputError("voting needs at least one prediction")

    columns = []
    for rank, voter in enumerate(_processing_order(preds)):
        pred = preds[voter]
        if rank == 0:
            for char, conf, position in zip(pred.chars, pred.confidences, pred.positions):
                column = _Column()
                column.add(rank, voter, char, conf, position)
                columns.append(column)
            continue
        merged = []
        for col_index, char_index in _align(columns, pred):
            column = _Column() if col_index is None else columns[col_index]
            if char_index is not None:
                column.add(
                    rank, voter, pred.chars[char_index], pred.confidences[char_index], pred.positions[char_index]
                )
            merged.append(column)
        columns = merged

    voters = len(preds)
    chars, confidences, positions = [], [], []
    last_position = -1
    for column in columns:
        sums, first = column.tally()
        if not sums:
            continue
        winner = max(sums, key=lambda c: (sums[c], -first[c][0]))
        if sums[winner] <= 0.0:
            continue
        _, by_rank = column.tally(by="rank")
        position = max(by_rank[winner][1], last_position + 1)
        chars.append(winner)
        confidences.append(min(1.0, sums[winner] / voters))
        positions.append(position)
        last_position = position
    return Prediction("".join(chars), tuple(confidences), tuple(positions), preds[0].line_ref)


def vote_lines(predictions_by_voter):
    """
    Vote every line of several prediction sets

    Parameters:
    predictions_by_voter: List (one per voter) of dicts line id -> Prediction

    Returns:
    dict: line id -> voted Prediction, for the line ids all voters share
    """
    if not predictions_by_voter:
        raise InputError("voting needs at least one prediction set")
    shared = set(predictions_by_voter[0])
    for predictions in predictions_by_voter[1:]:
        shared &= set(predictions)
    missing = set().union(*map(set, predictions_by_voter)) - shared
    if missing:
        logger.warning(f"{len(missing)} lines are not predicted by every voter and are skipped")
    return {
        line_id: confidence_vote([predictions[line_id] for predictions in predictions_by_voter])
        for line_id in sorted(shared)
    }


def ensemble_recognize(voter_set, images):
    """Recognize lines with every voter and vote the results"""
    per_voter = [recognize_lines(voter, images) for voter in voter_set.voters]
    return [confidence_vote(list(column)) for column in zip(*per_voter)]
