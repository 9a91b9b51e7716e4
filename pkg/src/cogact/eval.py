"""Evaluation scenarios, leave-one-player-out cross validation and metrics.

Scenarios:

* ``independent``: the test player's windows are excluded from training.
* ``dependent``: the test player's last round of each game and every second
  pause go to test; the rest of that player's session stays in training.
* ``biometric``: binary detection of a positive player against everyone
  else; one negative player is held out entirely for testing.

Predictions of all folds are pooled into one confusion matrix before the
metrics are computed.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from itertools import permutations
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import seeding
from .corpus import GAMES, N_CLASSES, ActivityLabel
from .errors import (
    DataError,
    EmptyMatrix,
    InsufficientRounds,
    SamePlayer,
    SinglePlayerCorpus,
    UnknownPlayer,
)
from .features import HALF, FeatureTable, apply_normalization, fit_subject_stats
from .model import GBTModel, GBTParams, compute_example_weights, labels_from_proba, predict_proba, train

SCENARIOS = ("independent", "dependent", "biometric")
DEFAULT_PAIR_CAP = 100
REPORT_FORMAT = "cogact-report"
METRIC_NAMES = ("balanced_accuracy", "precision", "recall", "f1")
TRACE_COLUMNS = ("player_id", "center_s", *(f"p_{a.name}" for a in ActivityLabel), "label")


def check_scenario(name: str) -> str:
    if name not in SCENARIOS:
        raise ValueError(f"unknown scenario {name!r}; expected one of {', '.join(SCENARIOS)}")
    return name


@dataclass
class ScenarioSplit:
    scenario: str
    train: np.ndarray
    test: np.ndarray
    test_player: str
    negative_player: str | None = None
    # binary targets for the biometric scenario, aligned with train / test
    train_labels: np.ndarray | None = None
    test_labels: np.ndarray | None = None


# --- splits ------------------------------------------------------------------------


def _players(table: FeatureTable, *required: str) -> list[str]:
    players = table.players
    for p in required:
        if p not in players:
            raise UnknownPlayer(f"player {p!r} is not in the corpus")
    return players


def _segments(centers: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Segment id per window (rows sorted by centre): a new segment starts at
    every label change or gap in the window grid."""
    if centers.size == 0:
        return np.zeros(0, dtype=np.int64)
    brk = (np.diff(labels) != 0) | (np.diff(centers) > 1.0 + 1e-9)
    return np.concatenate([[0], np.cumsum(brk)])


def dependent_portions(table: FeatureTable, player: str) -> tuple[np.ndarray, np.ndarray]:
    """(train, test) row indices of ``player`` under the round-level rule.

    Test gets the last round of every game and every second pause in time
    order (the 2nd, 4th, ...). Windows whose span reaches into a segment on
    the other side are dropped from both.
    """
    rows = np.flatnonzero(table.player_ids == player)
    rows = rows[np.argsort(table.centers[rows], kind="stable")]
    centers = table.centers[rows]
    labels = table.labels[rows]
    seg = _segments(centers, labels)
    n_seg = int(seg.max()) + 1 if seg.size else 0
    seg_label = np.array([labels[seg == s][0] for s in range(n_seg)], dtype=np.int64)

    is_test_seg = np.zeros(n_seg, dtype=bool)
    for g in GAMES:
        rounds = np.flatnonzero(seg_label == int(g))
        if rounds.size < 2:
            raise InsufficientRounds(f"player {player}: {rounds.size} round(s) of {g.name}, need at least 2")
        is_test_seg[rounds[-1]] = True
    pauses = np.flatnonzero(seg_label == int(ActivityLabel.Pause))
    is_test_seg[pauses[1::2]] = True

    side = is_test_seg[seg]
    keep = np.ones(rows.size, dtype=bool)
    # a window reaches neighbours whose centres are closer than half its width
    reach = int(np.ceil(HALF)) - 1
    grid = {c: s for c, s in zip(np.rint(centers).astype(np.int64).tolist(), side.tolist())}
    for k, (c, s) in enumerate(zip(np.rint(centers).astype(np.int64).tolist(), side.tolist())):
        for d in range(1, reach + 1):
            if grid.get(c - d, s) != s or grid.get(c + d, s) != s:
                keep[k] = False
                break
    return np.sort(rows[keep & ~side]), np.sort(rows[keep & side])


def split_player_independent(table: FeatureTable, test_player: str) -> ScenarioSplit:
    players = _players(table, test_player)
    if len(players) < 2:
        raise SinglePlayerCorpus("need at least 2 players for cross validation")
    is_test = table.player_ids == test_player
    return ScenarioSplit("independent", np.flatnonzero(~is_test), np.flatnonzero(is_test), test_player)


def split_player_dependent(table: FeatureTable, test_player: str) -> ScenarioSplit:
    _players(table, test_player)
    own_train, own_test = dependent_portions(table, test_player)
    others = np.flatnonzero(table.player_ids != test_player)
    return ScenarioSplit("dependent", np.union1d(others, own_train), own_test, test_player)


def split_biometric(table: FeatureTable, positive_player: str, negative_player: str) -> ScenarioSplit:
    if positive_player == negative_player:
        raise SamePlayer(f"positive and negative player are both {positive_player!r}")
    _players(table, positive_player, negative_player)
    pos_train, pos_test = dependent_portions(table, positive_player)
    rest = np.flatnonzero((table.player_ids != positive_player) & (table.player_ids != negative_player))
    neg_test = np.flatnonzero(table.player_ids == negative_player)
    train = np.union1d(pos_train, rest)
    test = np.union1d(pos_test, neg_test)
    return ScenarioSplit(
        "biometric", train, test, positive_player, negative_player,
        train_labels=(table.player_ids[train] == positive_player).astype(np.int64),
        test_labels=(table.player_ids[test] == positive_player).astype(np.int64),
    )


def biometric_pairs(players: Sequence[str], cap: int | None, seed: int) -> list[tuple[str, str]]:
    """All ordered (positive, negative) pairs, or a seeded sample of ``cap``
    of them kept in canonical order."""
    pairs = list(permutations(players, 2))
    if cap is None or cap >= len(pairs):
        return pairs
    if cap < 1:
        raise ValueError("pair cap must be >= 1")
    pick = seeding.rng(seeding.BIOMETRIC_PAIRS, seed).choice(len(pairs), size=cap, replace=False)
    return [pairs[i] for i in np.sort(pick)]


def make_splits(table: FeatureTable, scenario: str, seed: int = 0, pair_cap: int | None = DEFAULT_PAIR_CAP) -> list[ScenarioSplit]:
    check_scenario(scenario)
    players = table.players
    if len(players) < 2:
        raise SinglePlayerCorpus("need at least 2 players for cross validation")
    if scenario == "independent":
        return [split_player_independent(table, p) for p in players]
    if scenario == "dependent":
        return [split_player_dependent(table, p) for p in players]
    return [split_biometric(table, a, b) for a, b in biometric_pairs(players, pair_cap, seed)]


# --- metrics -----------------------------------------------------------------------


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    return np.bincount(y_true * n_classes + y_pred, minlength=n_classes * n_classes).reshape(n_classes, n_classes)


def compute_metrics(confusion) -> dict[str, float]:
    """Balanced accuracy and macro precision/recall/F1 (rows = true class).

    Classes without test examples are left out of every mean; a class that is
    never predicted has precision 0.
    """
    cm = np.asarray(confusion)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ValueError("confusion matrix must be square")
    if np.any(cm < 0) or np.any(cm != np.round(cm)):
        raise ValueError("confusion matrix must hold non-negative integer counts")
    support = cm.sum(axis=1)
    if support.sum() == 0:
        raise EmptyMatrix("confusion matrix has no test examples")
    present = support > 0
    tp = np.diag(cm).astype(float)
    predicted = cm.sum(axis=0).astype(float)
    recall = tp[present] / support[present]
    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)[present]
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(denom), where=denom > 0)
    rec = float(recall.mean())
    return {"balanced_accuracy": rec, "precision": float(precision.mean()), "recall": rec, "f1": float(f1.mean())}


def random_baseline(y_true, n_classes: int, seed: int) -> dict[str, float]:
    """Metrics of a predictor that outputs a random permutation of the true labels."""
    y_true = np.asarray(y_true, dtype=np.int64)
    shuffled = seeding.rng(seeding.RANDOM_BASELINE, seed).permutation(y_true)
    return compute_metrics(confusion_matrix(y_true, shuffled, n_classes))


# --- cross validation --------------------------------------------------------------


@dataclass
class FoldResult:
    index: int
    test_player: str
    negative_player: str | None
    n_train: int
    n_test: int
    confusion: np.ndarray
    rows: np.ndarray          # test rows in the feature table
    y_true: np.ndarray
    proba: np.ndarray         # (n_test, K) or (n_test, 1) for biometric
    model: GBTModel | None = None


@dataclass
class EvaluationReport:
    scenario: str
    signal_set: str
    n_classes: int
    confusion: np.ndarray
    metrics: dict[str, float]
    baseline: dict[str, float]
    folds: list[FoldResult]
    params: GBTParams
    seed: int
    player_ids: np.ndarray = field(repr=False, default=None)
    centers: np.ndarray = field(repr=False, default=None)

    def trace_rows(self) -> list[tuple]:
        """(player_id, center_s, p_0..p_3, label) for every test window of the
        game scenarios, ordered by player then time."""
        if self.scenario == "biometric":
            raise DataError("probability traces exist only for the game scenarios")
        rows = []
        for f in self.folds:
            for r, y, p in zip(f.rows.tolist(), f.y_true.tolist(), f.proba.tolist()):
                rows.append((str(self.player_ids[r]), float(self.centers[r]), *p, int(y)))
        rows.sort(key=lambda x: (x[0], x[1]))
        return rows

    def to_dict(self) -> dict:
        return {
            "format": REPORT_FORMAT,
            "scenario": self.scenario,
            "signal_set": self.signal_set,
            "seed": self.seed,
            "params": self.params.__dict__,
            "n_classes": self.n_classes,
            "confusion": self.confusion.tolist(),
            "metrics": self.metrics,
            "random_baseline": self.baseline,
            "folds": [
                {
                    "index": f.index,
                    "test_player": f.test_player,
                    "negative_player": f.negative_player,
                    "n_train": f.n_train,
                    "n_test": f.n_test,
                    "confusion": f.confusion.tolist(),
                    "metrics": compute_metrics(f.confusion),
                }
                for f in self.folds
            ],
        }


def _run_fold(table: FeatureTable, split: ScenarioSplit, index: int, params: GBTParams, seed: int, keep_model: bool) -> FoldResult:
    binary = split.scenario == "biometric"
    y_train = split.train_labels if binary else table.labels[split.train]
    y_test = split.test_labels if binary else table.labels[split.test]
    fold_params = replace(params, seed=seeding.derive_seed(seeding.SUBSAMPLE, seed, index))
    model = train(
        table.values[split.train], y_train, compute_example_weights(y_train), fold_params,
        objective="logistic" if binary else "softmax",
        n_classes=2 if binary else N_CLASSES,
        feature_names=table.feature_names,
    )
    proba = predict_proba(model, table.values[split.test])
    y_pred = labels_from_proba(proba, model.objective)
    k = 2 if binary else N_CLASSES
    return FoldResult(
        index, split.test_player, split.negative_player, int(split.train.size), int(split.test.size),
        confusion_matrix(y_test, y_pred, k), split.test, y_test, proba, model if keep_model else None,
    )


def normalize_table(table: FeatureTable) -> FeatureTable:
    """Per-player z-scores from each player's full session (labels unused)."""
    return apply_normalization(table, fit_subject_stats(table))


def run_loocv(
    table: FeatureTable,
    scenario: str,
    params: GBTParams = GBTParams(),
    seed: int = 0,
    threads: int = 1,
    pair_cap: int | None = DEFAULT_PAIR_CAP,
    normalize: bool = True,
    keep_models: bool = False,
    progress: Callable[[FoldResult], None] | None = None,
) -> EvaluationReport:
    """Leave-one-player-out evaluation of ``table`` under ``scenario``.

    Folds run on ``threads`` worker threads; results are combined in fold
    order so the report does not depend on the thread count.
    """
    check_scenario(scenario)
    if normalize:
        table = normalize_table(table)
    splits = make_splits(table, scenario, seed, pair_cap)

    def job(item):
        i, sp = item
        res = _run_fold(table, sp, i, params, seed, keep_models)
        if progress is not None:
            progress(res)
        return res

    items = list(enumerate(splits))
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            folds = list(ex.map(job, items))
    else:
        folds = [job(it) for it in items]

    k = 2 if scenario == "biometric" else N_CLASSES
    pooled = sum((f.confusion for f in folds), np.zeros((k, k), dtype=np.int64))
    y_all = np.concatenate([f.y_true for f in folds])
    return EvaluationReport(
        scenario, table.signal_set, k, pooled, compute_metrics(pooled),
        random_baseline(y_all, k, seed), folds, params, seed, table.player_ids, table.centers,
    )


# --- export ------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, float):
        return "NaN" if v != v else repr(v)
    return str(v)


def export_trace(report: EvaluationReport, player: str) -> list[tuple]:
    """Time-ordered (center_s, p_SpaceInvaders, p_Tetris, p_TowerDefense,
    p_Pause, label) rows for one player's test windows."""
    rows = [r[1:] for r in report.trace_rows() if r[0] == player]
    if not rows:
        raise UnknownPlayer(f"player {player!r} has no test windows in this report")
    return rows


def write_trace_csv(rows: Sequence[tuple], path, with_player: bool = True) -> None:
    cols = TRACE_COLUMNS if with_player else TRACE_COLUMNS[1:]
    lines = [",".join(cols)]
    for r in rows:
        *head, lab = r
        lines.append(",".join([*(_fmt(v) for v in head), ActivityLabel(lab).name]))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def read_trace_csv(path) -> list[tuple]:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split(",")
        if tuple(header) != TRACE_COLUMNS:
            raise DataError(f"{path}: not a trace CSV")
        out = []
        for line in fh:
            cells = line.rstrip("\n").split(",")
            out.append((cells[0], *(float(v) for v in cells[1:-1]), int(ActivityLabel[cells[-1]])))
    return out


def dumps_report(report: EvaluationReport) -> str:
    return json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n"


def save_report(report: EvaluationReport, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(dumps_report(report))


_TABLE_TITLES = {
    "independent": "Player-independent activity recognition",
    "dependent": "Player-dependent activity recognition",
    "biometric": "Biometric player recognition",
}


def format_table(scenario: str, reports: Sequence[EvaluationReport]) -> str:
    """Plain-text results table: a random baseline row, then one row per
    signal set; columns acc. (balanced accuracy), prec., rec., F1."""
    if not reports:
        raise ValueError("no reports to tabulate")
    header = f"{'':<8}{'acc.':>8}{'prec.':>8}{'rec.':>8}{'F1':>8}"
    lines = [_TABLE_TITLES[scenario], header, "-" * len(header)]

    def row(name, m):
        return f"{name:<8}" + "".join(f"{m[k]:>8.2f}" for k in METRIC_NAMES)

    lines.append(row("random", reports[0].baseline))
    for r in reports:
        lines.append(row(r.signal_set, r.metrics))
    lines.append("acc. is the balanced accuracy.")
    return "\n".join(lines) + "\n"
