"""Sliding-window feature extraction and per-subject normalization.

Windows are 15 s wide with centres on integer seconds (1 s step). A window
is emitted when its centre lies in a label interval and the full width lies
inside the recorded span; it carries the label at its centre.

Canonical feature order is ``FEATURES["SIG-3"]``; SIG-1 and SIG-2 are
prefixes of it. Undefined features are NaN.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numba as nb
import numpy as np
from scipy.signal import find_peaks

from .corpus import ActivityLabel, Channel, RecordingSession
from .errors import DataError, UnknownPlayer
from .preprocess import (
    GazeTrack,
    GSRComponents,
    IBISeries,
    clean_gaze,
    decompose_gsr,
    detect_r_peaks,
    detect_resp_peaks,
)

WINDOW_WIDTH = 15.0
WINDOW_STEP = 1.0
HALF = WINDOW_WIDTH / 2
CENTRAL = 5.0

ECG_FEATURES = (
    "AVG_HR_15s", "AVG_HR_5s", "AVG_HR_RATIO", "AVG_HR_DIFF", "SDNN", "RMSSD",
    "LF_POWER", "HF_POWER", "LF_HF_RATIO", "TOTAL_POWER",
)
RESP_FEATURES = ("RESP_AMP", "RESP_DOM_FREQ", "RESP_PEAKS")
_GSR_STATS = ("AVG_GSR_15s", "AVG_GSR_5s", "AVG_GSR_RATIO", "AVG_MEAN_GSR_DIFF", "STD_GSR")
GSR_FEATURES = tuple(f"{s}_{c}" for c in ("TONIC", "PHASIC") for s in _GSR_STATS) + ("GSR_PEAKS",)
GAZE_FEATURES = (
    "BLINKS", "GAZE_OUTSIDE",
    "AVG_POSITION_X", "AVG_POSITION_Y", "STD_POSITION_X", "STD_POSITION_Y",
    "KURT_POSITION_X", "KURT_POSITION_Y",
    "AVG_VELOCITY", "STD_VELOCITY", "KURT_VELOCITY",
)

SIGNAL_SETS = ("SIG-1", "SIG-2", "SIG-3")
FEATURES = {
    "SIG-1": ECG_FEATURES + RESP_FEATURES,
    "SIG-2": ECG_FEATURES + RESP_FEATURES + GSR_FEATURES,
    "SIG-3": ECG_FEATURES + RESP_FEATURES + GSR_FEATURES + GAZE_FEATURES,
}

# IBI spectrum
IBI_RESAMPLE_HZ = 4.0
LF_BAND = (0.04, 0.15)
HF_BAND = (0.15, 0.40)
TOTAL_BAND = (0.003, 0.40)
MIN_INTERVALS = 5

RESP_BAND = (0.05, 1.0)
RESP_NFFT = 4096
GSR_PEAK_PROMINENCE = 0.05  # times the window std
MIN_GAZE_SAMPLES = 10
GAZE_MAX_STEP_S = 0.100


def check_signal_set(signal_set: str) -> str:
    if signal_set not in FEATURES:
        raise DataError(f"unknown signal set {signal_set!r}; expected one of {SIGNAL_SETS}")
    return signal_set


@dataclass(frozen=True)
class Window:
    center: float
    label: ActivityLabel

    @property
    def start(self) -> float:
        return self.center - HALF

    @property
    def end(self) -> float:
        return self.center + HALF


def window_centers(labels, span) -> np.ndarray:
    lo, hi = span
    out = []
    for iv in labels:
        c0 = max(math.ceil(iv.start), math.ceil(lo + HALF))
        c1 = min(math.ceil(iv.end) - 1, math.floor(hi - HALF))
        if c1 >= c0:
            out.append(np.arange(c0, c1 + 1, dtype=float))
    return np.concatenate(out) if out else np.zeros(0)


def slide_windows(session: RecordingSession) -> list[Window]:
    if not session.labels:
        return []
    centers = window_centers(session.labels, session.span)
    return [Window(float(c), session.label_at(c)) for c in centers]


def _ratio(a: float, b: float) -> float:
    # 0/0 is taken as 0 so an all-zero component gives all-zero statistics
    if b == 0:
        return 0.0 if a == 0 else math.nan
    return a / b


# --- ECG ---------------------------------------------------------------------------


def _hr(iv: np.ndarray) -> float:
    return 60000.0 / iv.mean() if iv.size else math.nan


def _band_power(freqs, psd, lo, hi, lo_inclusive=True):
    eps = 1e-12
    sel = (freqs >= lo - eps) if lo_inclusive else (freqs > lo + eps)
    sel &= freqs <= hi + eps
    return float(psd[sel].sum() * (freqs[1] - freqs[0]))


def ibi_spectrum(times: np.ndarray, intervals: np.ndarray, start: float):
    """Periodogram of the IBI series linearly resampled at 4 Hz over one window."""
    n = int(round(WINDOW_WIDTH * IBI_RESAMPLE_HZ))
    grid = start + np.arange(n) / IBI_RESAMPLE_HZ
    x = np.interp(grid, times, intervals)
    x = x - x.mean()
    fx = np.fft.rfft(x)
    psd = (np.abs(fx) ** 2) / (IBI_RESAMPLE_HZ * n)
    psd[1:] *= 2.0
    if n % 2 == 0:
        psd[-1] /= 2.0
    freqs = np.arange(psd.size) * IBI_RESAMPLE_HZ / n
    return freqs, psd


def _ecg_window(ibi: IBISeries, c: float) -> list[float]:
    a, b = c - HALF, c + HALF
    pt = ibi.peak_times
    inside = ibi.valid & (pt[:-1] >= a) & (pt[1:] <= b)
    idx = np.flatnonzero(inside)
    if idx.size < MIN_INTERVALS:
        return [math.nan] * len(ECG_FEATURES)
    iv = ibi.intervals[idx]
    t0, t1 = pt[idx], pt[idx + 1]
    hr15 = _hr(iv)
    hr5 = _hr(iv[(t0 >= c - CENTRAL / 2) & (t1 <= c + CENTRAL / 2)])
    left = _hr(iv[t1 <= c])
    right = _hr(iv[t0 >= c])
    sdnn = float(iv.std())
    adjacent = np.diff(idx) == 1
    rmssd = float(np.sqrt(np.mean(np.diff(iv)[adjacent] ** 2))) if adjacent.any() else math.nan

    freqs, psd = ibi_spectrum(t1, iv, a)
    lf = _band_power(freqs, psd, *LF_BAND)
    hf = _band_power(freqs, psd, *HF_BAND, lo_inclusive=False)
    total = _band_power(freqs, psd, *TOTAL_BAND)
    lf_rel = lf / total if total > 0 else math.nan
    hf_rel = hf / total if total > 0 else math.nan
    lf_hf = lf / hf if hf > 0 else math.nan
    return [hr15, hr5, hr5 / hr15, right - left, sdnn, rmssd, lf_rel, hf_rel, lf_hf, total]


def ecg_features(ibi: IBISeries, window: Window | float) -> dict[str, float]:
    c = window.center if isinstance(window, Window) else float(window)
    return dict(zip(ECG_FEATURES, _ecg_window(ibi, c)))


def ecg_feature_matrix(ibi: IBISeries, centers: np.ndarray) -> np.ndarray:
    return np.array([_ecg_window(ibi, c) for c in centers.tolist()], dtype=float).reshape(-1, len(ECG_FEATURES))


# --- RESP --------------------------------------------------------------------------


def _slice(ch_rate: float, ch_start: float, n_total: int, c: float) -> tuple[int, int]:
    i0 = int(round((c - HALF - ch_start) * ch_rate))
    i1 = i0 + int(round(WINDOW_WIDTH * ch_rate))
    if i0 < 0 or i1 > n_total:
        raise DataError(f"window centred at {c} s is outside the recorded span")
    return i0, i1


def _resp_window(x: np.ndarray, fs: float, start: float, peaks: np.ndarray, c: float) -> list[float]:
    a, b = c - HALF, c + HALF
    pk = peaks[(peaks >= a) & (peaks < b)]
    n_peaks = float(pk.size)
    amp = math.nan
    if pk.size >= 2:
        idx = np.rint((pk - start) * fs).astype(np.int64)
        amps = [
            0.5 * (x[i] + x[j]) - x[i:j + 1].min()
            for i, j in zip(idx[:-1].tolist(), idx[1:].tolist())
        ]
        amp = float(np.mean(amps))
    i0, i1 = _slice(fs, start, x.size, c)
    seg = x[i0:i1] - x[i0:i1].mean()
    power = np.abs(np.fft.rfft(seg, n=max(RESP_NFFT, seg.size))) ** 2
    freqs = np.arange(power.size) * fs / max(RESP_NFFT, seg.size)
    band = (freqs >= RESP_BAND[0]) & (freqs <= RESP_BAND[1])
    if power[band].max(initial=0.0) > 0:
        dom = float(freqs[band][np.argmax(power[band])])
    else:
        dom = math.nan
    return [amp, dom, n_peaks]


def resp_features(resp: Channel, peaks: np.ndarray, window: Window | float) -> dict[str, float]:
    c = window.center if isinstance(window, Window) else float(window)
    return dict(zip(RESP_FEATURES, _resp_window(resp.samples, resp.sample_rate, resp.start_time, np.asarray(peaks), c)))


def resp_feature_matrix(resp: Channel, peaks: np.ndarray, centers: np.ndarray) -> np.ndarray:
    x, fs, st = resp.samples, resp.sample_rate, resp.start_time
    return np.array([_resp_window(x, fs, st, peaks, c) for c in centers.tolist()], dtype=float).reshape(
        -1, len(RESP_FEATURES)
    )


# --- GSR ---------------------------------------------------------------------------


@nb.njit(cache=True)
def _mean(x, a, b):
    s = 0.0
    for i in range(a, b):
        s += x[i]
    return s / (b - a)


@nb.njit(cache=True)
def _std(x, a, b):
    m = _mean(x, a, b)
    s = 0.0
    for i in range(a, b):
        d = x[i] - m
        s += d * d
    return math.sqrt(s / (b - a))


def _component_stats(x: np.ndarray, i0: int, i1: int, fs: float) -> list[float]:
    n = i1 - i0
    mid = i0 + n // 2
    c5 = int(round(CENTRAL * fs))
    j0 = mid - c5 // 2
    avg15 = _mean(x, i0, i1)
    avg5 = _mean(x, j0, j0 + c5)
    diff = _mean(x, mid, i1) - _mean(x, i0, mid)
    return [avg15, avg5, _ratio(avg5, avg15), diff, _std(x, i0, i1)]


def _gsr_window(comp: GSRComponents, raw: np.ndarray, c: float) -> list[float]:
    fs = comp.sample_rate
    i0, i1 = _slice(fs, comp.start_time, raw.size, c)
    out = _component_stats(comp.tonic, i0, i1, fs) + _component_stats(comp.phasic, i0, i1, fs)
    seg = raw[i0:i1]
    sd = seg.std()
    if sd > 0:
        pk, _ = find_peaks(seg, prominence=GSR_PEAK_PROMINENCE * sd, distance=max(int(round(fs)), 1))
        out.append(float(pk.size))
    else:
        out.append(0.0)
    return out


def gsr_features(components: GSRComponents, raw: Channel, window: Window | float) -> dict[str, float]:
    c = window.center if isinstance(window, Window) else float(window)
    return dict(zip(GSR_FEATURES, _gsr_window(components, raw.samples, c)))


def gsr_feature_matrix(components: GSRComponents, raw: Channel, centers: np.ndarray) -> np.ndarray:
    return np.array([_gsr_window(components, raw.samples, c) for c in centers.tolist()], dtype=float).reshape(
        -1, len(GSR_FEATURES)
    )


# --- gaze --------------------------------------------------------------------------


@nb.njit(cache=True)
def _moments(v, n):
    """mean, population std, excess kurtosis of v[:n]; kurtosis NaN for zero variance."""
    m = 0.0
    for i in range(n):
        m += v[i]
    m /= n
    m2 = 0.0
    m4 = 0.0
    for i in range(n):
        d = v[i] - m
        d2 = d * d
        m2 += d2
        m4 += d2 * d2
    m2 /= n
    m4 /= n
    kurt = m4 / (m2 * m2) - 3.0 if m2 > 0 else np.nan
    return m, math.sqrt(m2), kurt


@nb.njit(cache=True)
def _gaze_stats(t, x, y, i0, i1, min_samples, max_step, buf):
    out = np.full(9, np.nan)
    n = i1 - i0
    if n < min_samples:
        return out
    for i in range(n):
        buf[i] = x[i0 + i]
    out[0], out[2], out[4] = _moments(buf, n)
    for i in range(n):
        buf[i] = y[i0 + i]
    out[1], out[3], out[5] = _moments(buf, n)
    k = 0
    for i in range(i0 + 1, i1):
        if t[i] - t[i - 1] < max_step:
            dx = x[i] - x[i - 1]
            dy = y[i] - y[i - 1]
            buf[k] = math.sqrt(dx * dx + dy * dy)
            k += 1
    if k > 0:
        out[6], out[7], out[8] = _moments(buf, k)
    return out


def _gaze_window(track: GazeTrack, c: float, buf: np.ndarray) -> list[float]:
    a, b = c - HALF, c + HALF
    out = [math.nan] * len(GAZE_FEATURES)
    if track.category.size == 0:
        return out
    if track.blinks.size:
        mid = track.blinks.mean(axis=1)
        out[0] = float(np.count_nonzero((mid >= a) & (mid < b)))
    else:
        out[0] = 0.0
    if track.offscreen.size:
        ov = np.clip(np.minimum(track.offscreen[:, 1], b) - np.maximum(track.offscreen[:, 0], a), 0.0, None)
        out[1] = 100.0 * float(ov.sum()) / WINDOW_WIDTH
    else:
        out[1] = 0.0
    i0, i1 = np.searchsorted(track.t, [a, b])
    stats = _gaze_stats(track.t, track.x, track.y, int(i0), int(i1), MIN_GAZE_SAMPLES, GAZE_MAX_STEP_S, buf)
    out[2:] = stats.tolist()
    return out


def gaze_features(track: GazeTrack, window: Window | float, screen=None) -> dict[str, float]:
    c = window.center if isinstance(window, Window) else float(window)
    buf = np.empty(max(track.t.size, 1))
    return dict(zip(GAZE_FEATURES, _gaze_window(track, c, buf)))


def gaze_feature_matrix(track: GazeTrack, centers: np.ndarray) -> np.ndarray:
    buf = np.empty(max(track.t.size, 1))
    return np.array([_gaze_window(track, c, buf) for c in centers.tolist()], dtype=float).reshape(
        -1, len(GAZE_FEATURES)
    )


# --- tables ------------------------------------------------------------------------


@dataclass(frozen=True)
class FeatureVector:
    player_id: str
    window: Window
    values: dict[str, float]
    signal_set: str


@dataclass(eq=False)
class FeatureTable:
    """Feature vectors of many windows, stored column-wise."""

    player_ids: np.ndarray
    centers: np.ndarray
    labels: np.ndarray
    values: np.ndarray
    feature_names: tuple[str, ...]
    signal_set: str

    def __post_init__(self):
        self.player_ids = np.asarray(self.player_ids, dtype=object)
        self.centers = np.asarray(self.centers, dtype=float)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=float).reshape(len(self.centers), len(self.feature_names))
        self.feature_names = tuple(self.feature_names)

    def __len__(self):
        return self.centers.size

    def __getitem__(self, i) -> FeatureVector:
        return FeatureVector(
            str(self.player_ids[i]),
            Window(float(self.centers[i]), ActivityLabel(int(self.labels[i]))),
            dict(zip(self.feature_names, self.values[i].tolist())),
            self.signal_set,
        )

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other):
        if not isinstance(other, FeatureTable):
            return NotImplemented
        return (
            self.signal_set == other.signal_set
            and self.feature_names == other.feature_names
            and np.array_equal(self.player_ids, other.player_ids)
            and np.array_equal(self.centers, other.centers)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.values, other.values, equal_nan=True)
        )

    @property
    def players(self) -> list[str]:
        """Player ids in first-appearance order."""
        return list(dict.fromkeys(self.player_ids.tolist()))

    def take(self, idx) -> "FeatureTable":
        idx = np.asarray(idx)
        return FeatureTable(
            self.player_ids[idx], self.centers[idx], self.labels[idx], self.values[idx],
            self.feature_names, self.signal_set,
        )

    def with_values(self, values: np.ndarray) -> "FeatureTable":
        return FeatureTable(self.player_ids, self.centers, self.labels, values, self.feature_names, self.signal_set)

    def with_labels(self, labels: np.ndarray) -> "FeatureTable":
        return FeatureTable(self.player_ids, self.centers, labels, self.values, self.feature_names, self.signal_set)

    def select(self, signal_set: str) -> "FeatureTable":
        names = FEATURES[check_signal_set(signal_set)]
        missing = [n for n in names if n not in self.feature_names]
        if missing:
            raise DataError(f"table lacks features {missing} needed for {signal_set}")
        cols = [self.feature_names.index(n) for n in names]
        return FeatureTable(self.player_ids, self.centers, self.labels, self.values[:, cols], names, signal_set)

    @classmethod
    def concat(cls, tables: Sequence["FeatureTable"]) -> "FeatureTable":
        if not tables:
            raise DataError("nothing to concatenate")
        names = tables[0].feature_names
        if any(t.feature_names != names for t in tables):
            raise DataError("tables have different feature columns")
        return cls(
            np.concatenate([t.player_ids for t in tables]),
            np.concatenate([t.centers for t in tables]),
            np.concatenate([t.labels for t in tables]),
            np.concatenate([t.values for t in tables]),
            names,
            tables[0].signal_set,
        )

    def to_csv(self, path) -> None:
        header = ["player_id", "center_s", "label", *self.feature_names]
        lines = [",".join(header)]
        vals = self.values.tolist()
        for pid, c, lab, row in zip(self.player_ids.tolist(), self.centers.tolist(), self.labels.tolist(), vals):
            cells = [str(pid), repr(c), ActivityLabel(lab).name]
            cells += ["NaN" if v != v else repr(v) for v in row]
            lines.append(",".join(cells))
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def read_csv(cls, path, signal_set: str | None = None) -> "FeatureTable":
        path = Path(path)
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if not header or header[:3] != ["player_id", "center_s", "label"]:
                raise DataError(f"{path}: not a feature CSV")
            names = tuple(header[3:])
            pids, centers, labels, rows = [], [], [], []
            for lineno, rec in enumerate(reader, start=2):
                if len(rec) != len(header):
                    raise DataError(f"{path}: row {lineno} has {len(rec)} cells, expected {len(header)}")
                try:
                    pids.append(rec[0])
                    centers.append(float(rec[1]))
                    labels.append(int(ActivityLabel[rec[2]]))
                    rows.append([float(v) for v in rec[3:]])
                except (KeyError, ValueError) as exc:
                    raise DataError(f"{path}: row {lineno}: {exc}") from None
        if signal_set is None:
            signal_set = next((s for s in SIGNAL_SETS if FEATURES[s] == names), "custom")
        return cls(np.array(pids, dtype=object), centers, labels, np.array(rows).reshape(-1, len(names)), names, signal_set)


@dataclass
class Preprocessed:
    ibi: IBISeries
    resp_peaks: np.ndarray
    gsr: GSRComponents
    gaze: GazeTrack


def preprocess_session(session: RecordingSession, signal_set: str = "SIG-3") -> Preprocessed:
    check_signal_set(signal_set)
    need_gsr = signal_set != "SIG-1"
    need_gaze = signal_set == "SIG-3"
    return Preprocessed(
        ibi=detect_r_peaks(session.channel("ECG")),
        resp_peaks=detect_resp_peaks(session.channel("RESP")),
        gsr=decompose_gsr(session.channel("GSR")) if need_gsr else None,
        gaze=clean_gaze(session.gaze, session.screen) if need_gaze else None,
    )


def extract_features(session: RecordingSession, signal_set: str = "SIG-3", pre: Preprocessed | None = None) -> FeatureTable:
    check_signal_set(signal_set)
    windows = slide_windows(session)
    centers = np.array([w.center for w in windows], dtype=float)
    labels = np.array([int(w.label) for w in windows], dtype=np.int64)
    if pre is None:
        pre = preprocess_session(session, signal_set)
    blocks = [
        ecg_feature_matrix(pre.ibi, centers),
        resp_feature_matrix(session.channel("RESP"), pre.resp_peaks, centers),
    ]
    if signal_set in ("SIG-2", "SIG-3"):
        blocks.append(gsr_feature_matrix(pre.gsr, session.channel("GSR"), centers))
    if signal_set == "SIG-3":
        blocks.append(gaze_feature_matrix(pre.gaze, centers))
    values = np.hstack(blocks) if centers.size else np.zeros((0, len(FEATURES[signal_set])))
    return FeatureTable(
        np.full(centers.size, session.player_id, dtype=object), centers, labels, values,
        FEATURES[signal_set], signal_set,
    )


def extract_corpus(sessions: Iterable[RecordingSession], signal_set: str = "SIG-3", map_fn=map) -> FeatureTable:
    """Feature table for a whole corpus; ``map_fn`` may be a parallel map
    (output order follows the input order either way)."""
    tables = list(map_fn(lambda s: extract_features(s, signal_set), list(sessions)))
    return FeatureTable.concat(tables)


# --- subject normalization ---------------------------------------------------------


@dataclass
class SubjectStats:
    feature_names: tuple[str, ...]
    mean: dict[str, np.ndarray]
    std: dict[str, np.ndarray]


def fit_subject_stats(table: FeatureTable) -> SubjectStats:
    means, stds = {}, {}
    for pid in table.players:
        rows = table.values[table.player_ids == pid]
        if rows.shape[0] < 2:
            raise DataError(f"player {pid}: need at least 2 windows for normalization stats")
        finite = ~np.isnan(rows)
        cnt = finite.sum(axis=0)
        filled = np.where(finite, rows, 0.0)
        with np.errstate(invalid="ignore", divide="ignore"):
            mu = filled.sum(axis=0) / cnt
            dev = np.where(finite, rows - mu, 0.0)
            sd = np.sqrt((dev * dev).sum(axis=0) / cnt)
        means[pid] = mu
        stds[pid] = sd
    return SubjectStats(table.feature_names, means, stds)


def apply_normalization(table: FeatureTable, stats: SubjectStats) -> FeatureTable:
    if stats.feature_names != table.feature_names:
        raise DataError("normalization stats were fitted on different features")
    out = np.empty_like(table.values)
    for pid in table.players:
        if pid not in stats.mean:
            raise UnknownPlayer(f"no normalization stats for player {pid}")
        sel = table.player_ids == pid
        sd = stats.std[pid]
        sd = np.where(sd == 0, 1.0, sd)
        out[sel] = (table.values[sel] - stats.mean[pid]) / sd
    return table.with_values(out)
