import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import balanced_accuracy_score, precision_recall_fscore_support

from cogact.errors import DataError, EmptyMatrix, InsufficientRounds, SamePlayer, SinglePlayerCorpus, UnknownPlayer
from cogact.eval import (
    TRACE_COLUMNS,
    biometric_pairs,
    compute_metrics,
    confusion_matrix,
    dumps_report,
    export_trace,
    format_table,
    make_splits,
    random_baseline,
    read_trace_csv,
    run_loocv,
    split_biometric,
    split_player_dependent,
    split_player_independent,
    write_trace_csv,
)
from cogact.features import FeatureTable, extract_corpus
from cogact.model import GBTParams
from cogact.synthetic import SyntheticConfig, generate_corpus

FAST = GBTParams(n_rounds=15, learning_rate=0.3, max_depth=3)


def make_table(n_players=4, rounds=2, round_len=20, pause_len=12, n_features=3, seed=0, value_fn=None):
    """Windows on a contiguous 1 s grid: each game played ``rounds`` times in a
    row, a pause after every round but the last."""
    rng = np.random.default_rng(seed)
    ids, centers, labels = [], [], []
    for p in range(n_players):
        order = rng.permutation(3)
        blocks = []
        for g in order:
            for _ in range(rounds):
                blocks += [(int(g), round_len), (3, pause_len)]
        blocks.pop()
        c = 8.0
        for lab, n in blocks:
            for _ in range(n):
                ids.append(f"P{p:02d}")
                centers.append(c)
                labels.append(lab)
                c += 1.0
    ids, centers, labels = np.array(ids, dtype=object), np.array(centers), np.array(labels)
    if value_fn is None:
        values = rng.normal(size=(len(ids), n_features))
    else:
        values = value_fn(ids, labels, rng)
    names = tuple(f"F{i}" for i in range(values.shape[1]))
    return FeatureTable(ids, centers, labels, values, names, "custom")


# --- splits ----------------------------------------------------------------------


def test_independent_split():
    t = make_table(n_players=5)
    sp = split_player_independent(t, "P02")
    assert set(t.player_ids[sp.test]) == {"P02"}
    assert set(t.player_ids[sp.train]) == {"P00", "P01", "P03", "P04"}
    assert sp.train.size + sp.test.size == len(t)


def test_independent_two_players_and_errors():
    t = make_table(n_players=2)
    sp = split_player_independent(t, "P00")
    assert set(t.player_ids[sp.train]) == {"P01"}
    with pytest.raises(UnknownPlayer):
        split_player_independent(t, "P09")
    with pytest.raises(SinglePlayerCorpus):
        split_player_independent(make_table(n_players=1), "P00")


def _segments_of(t, rows):
    """Map each row to (label, run index within its label) for its player."""
    out = {}
    order = np.argsort(t.centers[rows])
    rows = rows[order]
    prev, seen = None, {}
    for r in rows:
        lab = int(t.labels[r])
        if lab != prev:
            seen[lab] = seen.get(lab, -1) + 1
            prev = lab
        out[int(r)] = (lab, seen[lab])
    return out


def test_dependent_one_round_per_game_in_test():
    t = make_table(n_players=3, rounds=4, round_len=30, pause_len=20)
    sp = split_player_dependent(t, "P01")
    own = np.flatnonzero(t.player_ids == "P01")
    seg = _segments_of(t, own)
    test_segs = {seg[int(r)] for r in sp.test}
    for g in range(3):
        assert {s for s in test_segs if s[0] == g} == {(g, 3)}  # the last of 4 rounds
    pauses = sorted(s[1] for s in test_segs if s[0] == 3)
    assert pauses == [1, 3, 5, 7, 9]  # every second of the 11 pauses
    others = np.flatnonzero(t.player_ids != "P01")
    assert np.isin(others, sp.train).all()
    assert np.intersect1d(sp.train, sp.test).size == 0


def test_dependent_drops_boundary_windows():
    t = make_table(n_players=2, rounds=3, round_len=30, pause_len=20)
    sp = split_player_dependent(t, "P00")
    own = t.player_ids == "P00"
    tr = t.centers[np.intersect1d(sp.train, np.flatnonzero(own))]
    te = t.centers[sp.test]
    assert np.abs(tr[:, None] - te[None, :]).min() >= 8
    dropped = own.sum() - tr.size - te.size
    assert dropped > 0


def test_dependent_needs_two_rounds():
    t = make_table(n_players=2, rounds=1)
    with pytest.raises(InsufficientRounds):
        split_player_dependent(t, "P00")
    with pytest.raises(UnknownPlayer):
        split_player_dependent(make_table(n_players=2), "nobody")


def test_biometric_split():
    t = make_table(n_players=5)
    sp = split_biometric(t, "P01", "P03")
    train_players = set(t.player_ids[sp.train])
    assert "P03" not in train_players
    assert train_players - {"P01"} == {"P00", "P02", "P04"}  # n - 2 negative players
    neg = np.flatnonzero(t.player_ids == "P03")
    assert np.isin(neg, sp.test).all()
    np.testing.assert_array_equal(sp.train_labels, t.player_ids[sp.train] == "P01")
    np.testing.assert_array_equal(sp.test_labels, t.player_ids[sp.test] == "P01")
    pos_train, pos_test = split_player_dependent(t, "P01").train, split_player_dependent(t, "P01").test
    np.testing.assert_array_equal(np.intersect1d(sp.test, np.flatnonzero(t.player_ids == "P01")), pos_test)
    assert np.isin(np.intersect1d(sp.train, np.flatnonzero(t.player_ids == "P01")), pos_train).all()
    with pytest.raises(SamePlayer):
        split_biometric(t, "P01", "P01")
    with pytest.raises(UnknownPlayer):
        split_biometric(t, "P01", "X")


@pytest.mark.parametrize("scenario", ["independent", "dependent", "biometric"])
def test_split_disjointness_and_coverage(scenario):
    t = make_table(n_players=4)
    splits = make_splits(t, scenario, seed=3, pair_cap=None)
    for sp in splits:
        assert np.intersect1d(sp.train, sp.test).size == 0
        assert sp.train.min() >= 0 and max(sp.train.max(), sp.test.max()) < len(t)
    if scenario == "independent":
        tested = np.sort(np.concatenate([sp.test for sp in splits]))
        np.testing.assert_array_equal(tested, np.arange(len(t)))
    if scenario == "biometric":
        assert len(splits) == 12


def test_biometric_pairs():
    players = [f"P{i}" for i in range(6)]
    assert len(biometric_pairs(players, None, 0)) == 30
    a = biometric_pairs(players, 7, 1)
    assert len(a) == 7 and a == biometric_pairs(players, 7, 1)
    assert a == sorted(a)
    assert all(p != n for p, n in a)
    assert biometric_pairs(players, 100, 0) == biometric_pairs(players, None, 0)
    with pytest.raises(ValueError):
        biometric_pairs(players, 0, 0)


def test_unknown_scenario():
    with pytest.raises(ValueError):
        make_splits(make_table(), "transfer")


# --- metrics ---------------------------------------------------------------------


def test_metric_examples():
    assert compute_metrics(np.diag([3, 5, 2, 7])) == {
        "balanced_accuracy": 1.0, "precision": 1.0, "recall": 1.0, "f1": 1.0,
    }
    assert compute_metrics([[8, 2], [4, 6]])["balanced_accuracy"] == pytest.approx(0.7)
    m = compute_metrics(np.full((4, 4), 5))
    assert m["balanced_accuracy"] == pytest.approx(0.25)
    assert m["precision"] == pytest.approx(0.25)


def test_absent_and_unpredicted_classes():
    cm = np.array([[5, 0, 1], [0, 0, 0], [2, 0, 0]])
    m = compute_metrics(cm)
    assert m["balanced_accuracy"] == pytest.approx((5 / 6 + 0.0) / 2)
    assert m["precision"] == pytest.approx((5 / 7 + 0.0) / 2)


def test_metric_errors():
    with pytest.raises(EmptyMatrix):
        compute_metrics(np.zeros((4, 4), dtype=int))
    with pytest.raises(ValueError):
        compute_metrics([[1, -1], [0, 2]])
    with pytest.raises(ValueError):
        compute_metrics([[1, 2, 3]])


@pytest.mark.filterwarnings("ignore::UserWarning")
@settings(max_examples=80, deadline=None)
@given(st.integers(2, 5), st.integers(1, 200), st.integers(0, 10_000))
def test_metrics_match_sklearn(k, n, seed):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, k, n)
    p = np.where(rng.random(n) < 0.4, y, rng.integers(0, k, n))
    m = compute_metrics(confusion_matrix(y, p, k))
    present = np.unique(y)
    pr, rc, f1, _ = precision_recall_fscore_support(y, p, labels=present, average="macro", zero_division=0)
    assert m["balanced_accuracy"] == pytest.approx(balanced_accuracy_score(y, p), abs=1e-12)
    assert m["precision"] == pytest.approx(pr, abs=1e-12)
    assert m["recall"] == pytest.approx(rc, abs=1e-12)
    assert m["f1"] == pytest.approx(f1, abs=1e-12)
    assert all(0.0 <= v <= 1.0 for v in m.values())


def test_random_baseline_levels():
    y4 = np.random.default_rng(0).integers(0, 4, 20000)
    assert random_baseline(y4, 4, 42)["balanced_accuracy"] == pytest.approx(0.25, abs=0.02)
    y2 = np.random.default_rng(1).integers(0, 2, 20000)
    assert random_baseline(y2, 2, 42)["balanced_accuracy"] == pytest.approx(0.5, abs=0.02)
    assert random_baseline(y4, 4, 1) == random_baseline(y4, 4, 1)


# --- cross validation ------------------------------------------------------------


@pytest.fixture(scope="module")
def noisy_table():
    return make_table(n_players=4, rounds=2, round_len=40, pause_len=20, n_features=4, seed=5)


@pytest.fixture(scope="module")
def dependent_report(noisy_table):
    return run_loocv(noisy_table, "dependent", FAST, seed=7)


def test_random_labels_give_chance(noisy_table):
    shuffled = noisy_table.with_labels(np.random.default_rng(2).permutation(noisy_table.labels))
    r = run_loocv(shuffled, "independent", FAST, seed=1)
    assert r.metrics["balanced_accuracy"] == pytest.approx(0.25, abs=0.05)


@pytest.mark.parametrize("scenario", ["independent", "dependent"])
def test_separable_corpus_is_perfect(scenario):
    t = make_table(value_fn=lambda ids, labels, rng: np.column_stack([labels, rng.normal(size=labels.size)]))
    r = run_loocv(t, scenario, FAST, seed=0, normalize=False)
    assert all(v == 1.0 for v in r.metrics.values())


def test_separable_biometric_is_perfect():
    def fn(ids, labels, rng):
        idx = np.array([int(i[1:]) for i in ids])
        return np.column_stack([idx[:, None] == np.arange(4), rng.normal(size=labels.size)]).astype(float)

    r = run_loocv(make_table(value_fn=fn), "biometric", FAST, seed=0, normalize=False, pair_cap=None)
    assert all(v == 1.0 for v in r.metrics.values())
    assert r.n_classes == 2 and len(r.folds) == 12


def test_report_consistency(noisy_table, dependent_report):
    r = dependent_report
    summed = sum(f.confusion for f in r.folds)
    np.testing.assert_array_equal(r.confusion, summed)
    assert compute_metrics(summed) == r.metrics
    y = np.concatenate([f.y_true for f in r.folds])
    np.testing.assert_array_equal(r.confusion.sum(axis=1), np.bincount(y, minlength=4))
    assert all(0.0 <= v <= 1.0 for v in r.metrics.values())
    for f in r.folds:
        assert f.n_test == f.rows.size == f.y_true.size
        np.testing.assert_array_equal(f.y_true, noisy_table.labels[f.rows])


def test_loocv_determinism_and_threads(noisy_table, dependent_report):
    again = run_loocv(noisy_table, "dependent", FAST, seed=7)
    threaded = run_loocv(noisy_table, "dependent", FAST, seed=7, threads=3)
    assert dumps_report(again) == dumps_report(dependent_report) == dumps_report(threaded)
    assert again.trace_rows() == threaded.trace_rows()


def test_biometric_determinism_across_threads(noisy_table):
    a = run_loocv(noisy_table, "biometric", FAST, seed=3, pair_cap=5)
    b = run_loocv(noisy_table, "biometric", FAST, seed=3, pair_cap=5, threads=4)
    assert dumps_report(a) == dumps_report(b)
    assert len(a.folds) == 5


def test_report_json(dependent_report):
    d = json.loads(dumps_report(dependent_report))
    assert d["scenario"] == "dependent" and len(d["folds"]) == 4
    assert set(d["metrics"]) == {"balanced_accuracy", "precision", "recall", "f1"}


# --- traces ----------------------------------------------------------------------


def test_export_trace(noisy_table, dependent_report):
    for p in noisy_table.players:
        rows = export_trace(dependent_report, p)
        probs = np.array([r[1:5] for r in rows])
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)
        c = [r[0] for r in rows]
        assert all(b > a for a, b in zip(c, c[1:]))
        assert len(rows) == split_player_dependent(noisy_table, p).test.size
    with pytest.raises(UnknownPlayer):
        export_trace(dependent_report, "P99")


def test_trace_csv_round_trip(tmp_path, dependent_report):
    rows = dependent_report.trace_rows()
    write_trace_csv(rows, tmp_path / "t.csv")
    assert read_trace_csv(tmp_path / "t.csv") == rows
    head = (tmp_path / "t.csv").read_text().splitlines()[0]
    assert head == ",".join(TRACE_COLUMNS)


def test_biometric_has_no_trace(noisy_table):
    r = run_loocv(noisy_table, "biometric", FAST, seed=0, pair_cap=2)
    with pytest.raises(DataError):
        r.trace_rows()


def test_format_table(dependent_report):
    text = format_table("dependent", [dependent_report])
    lines = text.splitlines()
    assert lines[1].split() == ["acc.", "prec.", "rec.", "F1"]
    assert lines[3].startswith("random") and lines[4].startswith("custom")
    assert "balanced accuracy" in lines[-1]


# --- scenario ordering -----------------------------------------------------------


@pytest.mark.slow
@pytest.mark.parametrize("seed", [1, 2, 3, 4, 5])
def test_dependent_beats_independent(seed):
    cfg = SyntheticConfig(n_players=4, rounds_per_game=2, round_len=60.0, pause_len=30.0, seed=seed)
    table = extract_corpus(generate_corpus(cfg), "SIG-3")
    pi = run_loocv(table, "independent", seed=seed).metrics["balanced_accuracy"]
    pd = run_loocv(table, "dependent", seed=seed).metrics["balanced_accuracy"]
    assert pd >= pi
