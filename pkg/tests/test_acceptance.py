"""Acceptance suite. Every test prints one PASS/FAIL line for its criterion.

The full synthetic run (criteria 4 and 5) takes tens of minutes on one core.
Wall-clock budgets quoted for a 4-core desktop are scaled by 4 / min(cores, 4).
"""
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from cogact import eval as ev
from cogact.cli import main
from cogact.features import ecg_features, extract_corpus, resp_features, window_centers
from cogact.corpus import ActivityLabel, LabelInterval
from cogact.model import (
    GBTParams,
    compute_example_weights,
    labels_from_proba,
    logistic_grad_hess,
    logistic_loss,
    predict_label,
    predict_proba,
    softmax_grad_hess,
    softmax_loss,
    train,
)
from cogact.preprocess import IBISeries, detect_r_peaks, detect_resp_peaks
from cogact.synthetic import SyntheticConfig, generate_corpus

CORES = os.cpu_count() or 1
SCALE = 4 / min(CORES, 4)
SETS = ("SIG-1", "SIG-2", "SIG-3")


@pytest.fixture
def verdict(request):
    reporter = request.config.pluginmanager.getplugin("terminalreporter")

    def emit(criterion: str, checks: dict, detail: str = ""):
        ok = all(checks.values())
        failed = [k for k, v in checks.items() if not v]
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}"
        if failed:
            line += f" | failed: {', '.join(failed)}"
        if reporter is not None:
            reporter.write_line("")
            reporter.write_line(line)
        else:
            print(line)
        assert ok, line

    return emit


# --- 1: feature oracles ------------------------------------------------------------


def _brute_hr(peaks, c):
    ivs = [((peaks[i + 1] - peaks[i]) * 1000.0, peaks[i], peaks[i + 1]) for i in range(len(peaks) - 1)]
    win = [v for v in ivs if v[1] >= c - 7.5 and v[2] <= c + 7.5]
    vals = [v[0] for v in win]
    mean = sum(vals) / len(vals)
    hr = lambda xs: 60000.0 / (sum(xs) / len(xs))
    central = [v[0] for v in win if v[1] >= c - 2.5 and v[2] <= c + 2.5]
    left = [v[0] for v in win if v[2] <= c]
    right = [v[0] for v in win if v[1] >= c]
    return {
        "SDNN": math.sqrt(sum((v - mean) ** 2 for v in vals) / len(vals)),
        "RMSSD": math.sqrt(sum((b - a) ** 2 for a, b in zip(vals, vals[1:])) / (len(vals) - 1)),
        "AVG_HR_15s": hr(vals), "AVG_HR_5s": hr(central),
        "AVG_HR_RATIO": hr(central) / hr(vals), "AVG_HR_DIFF": hr(right) - hr(left),
    }


def _brute_centers(labels, span):
    lo, hi = span
    return [
        float(c) for c in range(math.floor(lo) - 1, math.ceil(hi) + 2)
        if any(iv.start <= c < iv.end for iv in labels) and c - 7.5 >= lo and c + 7.5 <= hi
    ]


def test_criterion_1_feature_oracles(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    sequences = [
        [1000.0] * 20, [800.0, 850.0] * 12, [600.0, 700.0, 800.0, 900.0, 1000.0] * 5,
        [750.0 + 10 * k for k in range(20)], list(rng.integers(500, 1200, 25).astype(float)),
    ]
    worst = 0.0
    for seq in sequences:
        peaks = np.concatenate([[0.0], np.cumsum(seq) / 1000.0])
        for c in (8.0, 9.0, 10.0):
            got = ecg_features(IBISeries(peaks), c)
            for k, v in _brute_hr(peaks.tolist(), c).items():
                worst = max(worst, abs(got[k] - v))
    mismatched = 0
    for _ in range(50):
        t = rng.uniform(0, 5)
        labels = []
        for _ in range(rng.integers(0, 8)):
            t += rng.choice([0.0, rng.uniform(0, 20)])
            d = rng.uniform(0.3, 40)
            labels.append(LabelInterval(t, t + d, ActivityLabel(int(rng.integers(0, 4)))))
            t += d
        span = (rng.uniform(-5, 10), t + rng.uniform(-10, 10))
        mismatched += window_centers(labels, span).tolist() != _brute_centers(labels, span)
    elapsed = time.perf_counter() - t0
    verdict("1", {
        "HRV statistics within 1e-9": worst <= 1e-9,
        "window counts": mismatched == 0,
        "runtime < 1 s": elapsed < 1.0,
    }, f"max HRV error {worst:.1e}, {mismatched}/50 window tracks differ, {elapsed:.2f} s")


# --- 2: peak detection -------------------------------------------------------------


def _match_rate(found, truth, tol=0.020):
    if found.size == 0:
        return 0.0
    idx = np.clip(np.searchsorted(truth, found), 1, truth.size - 1)
    d = np.minimum(np.abs(found - truth[idx - 1]), np.abs(found - truth[idx]))
    return float(np.mean(d <= tol))


def test_criterion_2_peak_detection(verdict):
    t0 = time.perf_counter()
    sessions = generate_corpus(SyntheticConfig(n_players=8, seed=42))
    t_gen = time.perf_counter() - t0
    sens, prec, within, total = [], [], 0, 0
    for s in sessions:
        beats = s.truth["beats"]
        ibi = detect_r_peaks(s.channel("ECG"))
        prec.append(_match_rate(ibi.peak_times, beats))
        sens.append(_match_rate(beats, ibi.peak_times))
        resp = s.channel("RESP")
        pk = detect_resp_peaks(resp)
        breaths = s.truth["breaths"]
        for c in window_centers(s.labels, s.span).tolist():
            n_true = np.count_nonzero((breaths >= c - 7.5) & (breaths < c + 7.5))
            within += abs(resp_features(resp, pk, c)["RESP_PEAKS"] - n_true) <= 1
            total += 1
    elapsed = time.perf_counter() - t0
    sens_min, prec_min, frac = min(sens), min(prec), within / total
    verdict("2", {
        "R-peak sensitivity >= 0.99": sens_min >= 0.99,
        "R-peak precision >= 0.99": prec_min >= 0.99,
        "breath count within 1 in >= 95% of windows": frac >= 0.95,
        "runtime < 30 s": elapsed < 30.0 * SCALE,
    }, f"min sensitivity {sens_min:.4f}, min precision {prec_min:.4f}, breath windows {frac:.4f} "
       f"({total}), {elapsed:.1f} s incl. {t_gen:.1f} s generation (budget {30 * SCALE:.0f} s)")


# --- 3: boosted trees --------------------------------------------------------------


def _rel(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def _fd_check(loss, grad_hess, margins, labels, weights, eps=1e-6):
    total = lambda m: loss(m, labels, weights) * weights.sum()
    g, h = grad_hess(margins, labels, weights)
    gf = np.zeros_like(margins)
    hf = np.zeros_like(margins)
    for idx in np.ndindex(margins.shape):
        up, dn = margins.copy(), margins.copy()
        up[idx] += eps
        dn[idx] -= eps
        gf[idx] = (total(up) - total(dn)) / (2 * eps)
        hf[idx] = (grad_hess(up, labels, weights)[0][idx] - grad_hess(dn, labels, weights)[0][idx]) / (2 * eps)
    return _rel(g, gf), _rel(h, hf)


def test_criterion_3_gbt_correctness(verdict):
    rng = np.random.default_rng(3)
    worst_g = worst_h = 0.0
    for _ in range(10):
        w = rng.uniform(0.2, 2.0, 8)
        eg, eh = _fd_check(softmax_loss, softmax_grad_hess, rng.normal(size=(8, 4)), rng.integers(0, 4, 8), w)
        worst_g, worst_h = max(worst_g, eg), max(worst_h, eh)
        eg, eh = _fd_check(logistic_loss, logistic_grad_hess, rng.normal(size=(8, 1)), rng.integers(0, 2, 8), w)
        worst_g, worst_h = max(worst_g, eg), max(worst_h, eh)

    monotone = True
    for k in range(3):
        X = rng.normal(size=(300, 6))
        X[rng.random(X.shape) < 0.05] = np.nan
        for objective, n_classes in (("softmax", 4), ("logistic", 2)):
            y = rng.integers(0, n_classes, 300)
            m = train(X, y, compute_example_weights(y), GBTParams(n_rounds=200, seed=k),
                      objective=objective, n_classes=n_classes)
            monotone &= bool(np.all(np.diff(m.train_loss) <= 0.0)) and len(m.train_loss) == 201

    Xs = rng.normal(size=(400, 3))
    ys = rng.integers(0, 4, 400)
    Xs[:, 1] = 3.0 * ys + rng.uniform(-1.0, 1.0, 400)
    sep = train(Xs, ys, params=GBTParams(n_rounds=20))
    acc = float(np.mean(predict_label(sep, Xs) == ys))

    P = predict_proba(sep, rng.normal(scale=50.0, size=(1000, 3)))
    sum_err = float(np.abs(P.sum(axis=1) - 1.0).max())
    verdict("3", {
        "gradient rel. err < 1e-5": worst_g < 1e-5,
        "hessian rel. err < 1e-5": worst_h < 1e-5,
        "loss non-increasing over 200 rounds": monotone,
        "separable training accuracy 1.0": acc == 1.0,
        "softmax sums to 1 within 1e-12": sum_err <= 1e-12,
    }, f"grad {worst_g:.1e}, hess {worst_h:.1e}, separable acc {acc:.3f}, max |sum-1| {sum_err:.1e}")


# --- 4 and 5: full synthetic run ---------------------------------------------------


@pytest.fixture(scope="module")
def full_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("full")
    t0 = time.perf_counter()
    rc = main(["evaluate", "--seed", "42", "--out", str(out), "--threads", str(CORES)])
    elapsed = time.perf_counter() - t0
    import json

    reports = {
        (sc, s): json.loads((out / f"report_{sc}_{s}.json").read_text())
        for sc in ev.SCENARIOS for s in SETS
    } if rc == 0 else {}
    return rc, elapsed, reports


def _shuffled_biometric(table, seed, pairs=6):
    """Biometric folds trained on permuted targets, pooled."""
    rng = np.random.default_rng(seed)
    table = ev.normalize_table(table)
    cm = np.zeros((2, 2), dtype=np.int64)
    for sp in ev.make_splits(table, "biometric", seed, pairs):
        y = rng.permutation(sp.train_labels)
        m = train(table.values[sp.train], y, compute_example_weights(y), GBTParams(n_rounds=20),
                  objective="logistic", n_classes=2)
        pred = labels_from_proba(predict_proba(m, table.values[sp.test]), "logistic")
        cm += ev.confusion_matrix(sp.test_labels, pred, 2)
    return ev.compute_metrics(cm)["balanced_accuracy"]


@pytest.mark.slow
def test_criterion_4_random_baselines(verdict, full_run):
    rc, _, reports = full_run
    assert rc == 0
    base4 = [reports[(sc, s)]["random_baseline"]["balanced_accuracy"] for sc in ("independent", "dependent") for s in SETS]
    base2 = [reports[("biometric", s)]["random_baseline"]["balanced_accuracy"] for s in SETS]

    table = extract_corpus(generate_corpus(SyntheticConfig(n_players=5, seed=42)), "SIG-3")
    perm = table.with_labels(np.random.default_rng(4).permutation(table.labels))
    trained4 = ev.run_loocv(perm, "independent", GBTParams(n_rounds=20), seed=4).metrics["balanced_accuracy"]
    trained2 = _shuffled_biometric(table, 4)
    verdict("4", {
        "4-class random row within 0.25 +- 0.05": all(abs(b - 0.25) <= 0.05 for b in base4),
        "biometric random row within 0.5 +- 0.05": all(abs(b - 0.5) <= 0.05 for b in base2),
        "4-class trained on shuffled labels": abs(trained4 - 0.25) <= 0.05,
        "biometric trained on shuffled labels": abs(trained2 - 0.5) <= 0.05,
    }, f"random rows 4-class {min(base4):.3f}..{max(base4):.3f}, biometric {min(base2):.3f}..{max(base2):.3f}; "
       f"shuffled training 4-class {trained4:.3f}, biometric {trained2:.3f}")


@pytest.mark.slow
def test_criterion_5_qualitative_reproduction(verdict, full_run):
    rc, elapsed, reports = full_run
    assert rc == 0
    acc = {k: r["metrics"]["balanced_accuracy"] for k, r in reports.items()}
    checks = {"(a) dependent SIG-3 >= 0.80": acc[("dependent", "SIG-3")] >= 0.80}
    for sc in ("independent", "dependent"):
        checks[f"(b) {sc} SIG-1 <= SIG-2 <= SIG-3 + 0.02"] = (
            acc[(sc, "SIG-1")] <= acc[(sc, "SIG-2")] + 0.02 and acc[(sc, "SIG-2")] <= acc[(sc, "SIG-3")] + 0.02
        )
    for s in SETS:
        checks[f"(c) dependent >= independent {s}"] = acc[("dependent", s)] >= acc[("independent", s)]
        checks[f"(d) biometric {s} > 0.65"] = acc[("biometric", s)] > 0.65
    budget = 600.0 * SCALE
    checks[f"runtime < {budget:.0f} s"] = elapsed < budget
    table = "; ".join(f"{sc[:3]} " + "/".join(f"{acc[(sc, s)]:.3f}" for s in SETS) for sc in ev.SCENARIOS)
    verdict("5", checks, f"{table} (SIG-1/2/3), {elapsed:.0f} s on {CORES} core(s)")


# --- 6: determinism ----------------------------------------------------------------


def _pipeline(root: Path, threads: int) -> dict:
    common = ["--seed", "42", "--threads", str(threads)]
    tiny = ["--players", "3", "--rounds-per-game", "2", "--round-len", "60", "--pause-len", "30"]
    assert main(["generate", *common, *tiny, "--out", str(root / "corpus")]) == 0
    assert main(["features", *common, "--corpus", str(root / "corpus"), "--out", str(root / "features")]) == 0
    assert main(["evaluate", *common, "--features", str(root / "features"), "--out", str(root / "eval"),
                 "--pair-cap", "4", "--save-models"]) == 0
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_6_determinism(verdict, tmp_path):
    n = max(CORES, 4)
    a = _pipeline(tmp_path / "a", 1)
    b = _pipeline(tmp_path / "b", 1)
    c = _pipeline(tmp_path / "c", n)
    kinds = {
        "feature CSVs": lambda k: k.startswith("features/"),
        "model files": lambda k: k.startswith("eval/models/"),
        "reports": lambda k: k.startswith("eval/report_") or k.startswith("eval/table_") or k.startswith("eval/traces_"),
    }
    checks = {}
    for name, sel in kinds.items():
        keys = [k for k in a if sel(k)]
        checks[f"{name} identical across reruns"] = bool(keys) and all(a[k] == b.get(k) for k in keys)
        checks[f"{name} identical at 1 and {n} threads"] = bool(keys) and all(a[k] == c.get(k) for k in keys)
    checks["same file sets"] = a.keys() == b.keys() == c.keys()
    n_models = sum(1 for k in a if k.startswith("eval/models/"))
    verdict("6", checks, f"{len(a)} files compared ({n_models} models) at 1 and {n} threads")
