"""Derived series for feature extraction: R-peaks/IBI, breath peaks, GSR
tonic/phasic split and cleaned gaze with blink/off-screen events."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import uniform_filter1d
from scipy.signal import butter, find_peaks, sosfiltfilt

from .corpus import Channel, Gaze
from .errors import DataError, FlatSignal, TooShort

IBI_MIN_MS = 250.0
IBI_MAX_MS = 3000.0
# an interval this far (relative) from the median of its neighbours is an artifact
IBI_MAX_REL_DEVIATION = 0.3
IBI_NEIGHBOURS = 5

BLINK_MIN_S = 0.070
BLINK_MAX_S = 0.500

GSR_TONIC_CUTOFF_HZ = 0.05

KEPT, BLINK, OFFSCREEN, SHORT_GAP = 0, 1, 2, 3


@dataclass
class IBISeries:
    """R-peak times (s) and successive inter-beat intervals (ms).

    ``intervals[i]`` spans ``peak_times[i]`` to ``peak_times[i + 1]``;
    ``valid[i]`` is False for intervals rejected as artifacts.
    """

    peak_times: np.ndarray
    intervals: np.ndarray = field(default=None)
    valid: np.ndarray = field(default=None)

    def __post_init__(self):
        self.peak_times = np.asarray(self.peak_times, dtype=float)
        if self.intervals is None:
            self.intervals = np.diff(self.peak_times) * 1000.0
        self.intervals = np.asarray(self.intervals, dtype=float)
        if self.valid is None:
            self.valid = np.ones(self.intervals.size, dtype=bool)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.intervals.size != max(self.peak_times.size - 1, 0):
            raise ValueError("len(intervals) must equal len(peak_times) - 1")

    @property
    def interval_times(self) -> np.ndarray:
        """Time stamp of each interval: the beat that closes it."""
        return self.peak_times[1:]

    @property
    def clean_intervals(self) -> np.ndarray:
        return self.intervals[self.valid]


def _pan_tompkins_candidates(x: np.ndarray, fs: float):
    sos = butter(3, [5.0, 15.0], btype="bandpass", fs=fs, output="sos")
    bp = sosfiltfilt(sos, x)
    kernel = np.array([1.0, 2.0, 0.0, -2.0, -1.0]) * fs / 8.0  # five-point derivative
    d = np.convolve(bp, kernel, mode="same")
    mwi = uniform_filter1d(d * d, size=max(int(round(0.150 * fs)), 1), mode="nearest")
    cand, _ = find_peaks(mwi, distance=max(int(round(0.2 * fs)), 1))
    return bp, mwi, cand


def _adaptive_threshold(mwi: np.ndarray, cand: np.ndarray, fs: float) -> np.ndarray:
    """Pan-Tompkins dual-threshold classification with RR searchback."""
    if cand.size == 0:
        return cand
    init = mwi[: int(2 * fs)]
    spki = 0.25 * init.max()
    npki = 0.5 * init.mean()
    thr1 = npki + 0.25 * (spki - npki)
    accepted: list[int] = []
    rejected: list[int] = []
    rr_hist: list[float] = []
    for c in cand.tolist():
        peak = mwi[c]
        if peak > thr1:
            accepted.append(c)
            spki = 0.125 * peak + 0.875 * spki
        else:
            rejected.append(c)
            npki = 0.125 * peak + 0.875 * npki
        thr1 = npki + 0.25 * (spki - npki)

        if len(accepted) >= 2 and accepted[-1] == c:
            rr_hist.append(accepted[-1] - accepted[-2])
            rr_hist = rr_hist[-8:]
        if rr_hist and accepted and c - accepted[-1] > 1.66 * np.mean(rr_hist):
            # searchback for a missed beat among the rejected candidates
            lo = accepted[-1] + int(0.2 * fs)
            pool = [r for r in rejected if lo <= r < c and mwi[r] > 0.5 * thr1]
            if pool:
                best = max(pool, key=lambda r: mwi[r])
                accepted.append(best)
                rejected.remove(best)
                spki = 0.25 * mwi[best] + 0.75 * spki
                thr1 = npki + 0.25 * (spki - npki)
                rr_hist.append(best - accepted[-2])
                rr_hist = rr_hist[-8:]
    return np.array(sorted(accepted), dtype=np.int64)


def _refine(bp: np.ndarray, idx: np.ndarray, fs: float) -> np.ndarray:
    """Move each detection to the local band-passed maximum with sub-sample
    (parabolic) interpolation; returns fractional sample positions."""
    half = int(round(0.075 * fs))
    n = bp.size
    out = np.empty(idx.size)
    for k, i in enumerate(idx.tolist()):
        a, b = max(i - half, 0), min(i + half + 1, n)
        j = a + int(np.argmax(bp[a:b]))
        if 0 < j < n - 1:
            y0, y1, y2 = bp[j - 1], bp[j], bp[j + 1]
            den = y0 - 2 * y1 + y2
            shift = 0.5 * (y0 - y2) / den if den < 0 else 0.0
            out[k] = j + float(np.clip(shift, -0.5, 0.5))
        else:
            out[k] = j
    return out


def _drop_close_peaks(pos: np.ndarray, amp: np.ndarray, fs: float) -> np.ndarray:
    """Remove the weaker peak of any pair closer than the minimum IBI,
    re-linking its neighbours."""
    keep = list(range(pos.size))
    min_gap = IBI_MIN_MS / 1000.0 * fs
    i = 1
    while i < len(keep):
        a, b = keep[i - 1], keep[i]
        if pos[b] - pos[a] < min_gap:
            del keep[i if amp[b] < amp[a] else i - 1]
            i = max(i - 1, 1)
        else:
            i += 1
    return np.array(keep, dtype=np.int64)


def ibi_artifacts(intervals: np.ndarray) -> np.ndarray:
    """Validity mask: physiological bounds plus deviation from the local median."""
    iv = np.asarray(intervals, dtype=float)
    valid = (iv >= IBI_MIN_MS) & (iv <= IBI_MAX_MS)
    n = iv.size
    for i in range(n):
        lo, hi = max(i - IBI_NEIGHBOURS, 0), min(i + IBI_NEIGHBOURS + 1, n)
        neigh = np.concatenate([iv[lo:i], iv[i + 1:hi]])
        if neigh.size >= 2:
            med = np.median(neigh)
            if abs(iv[i] - med) > IBI_MAX_REL_DEVIATION * med:
                valid[i] = False
    return valid


def detect_r_peaks(ecg: Channel) -> IBISeries:
    fs = ecg.sample_rate
    x = ecg.samples
    if fs < 100:
        raise DataError(f"ECG sample rate {fs} Hz is below 100 Hz")
    if x.size / fs < 10.0:
        raise TooShort(f"ECG has {x.size / fs:.2f} s, need at least 10 s")
    if np.var(x) == 0:
        raise FlatSignal("ECG has zero variance")
    bp, mwi, cand = _pan_tompkins_candidates(x, fs)
    qrs = _adaptive_threshold(mwi, cand, fs)
    if qrs.size == 0:
        return IBISeries(np.zeros(0))
    pos = _refine(bp, qrs, fs)
    order = np.argsort(pos, kind="stable")
    pos = pos[order]
    amp = bp[np.rint(pos).astype(np.int64).clip(0, bp.size - 1)]
    pos = pos[_drop_close_peaks(pos, amp, fs)]
    times = ecg.start_time + pos / fs
    intervals = np.diff(times) * 1000.0
    return IBISeries(times, intervals, ibi_artifacts(intervals))


def _lowpass(x: np.ndarray, fs: float, cutoff: float, order: int) -> np.ndarray:
    """Zero-phase Butterworth low-pass of the de-meaned signal (the mean is
    passed through exactly, so constants map to themselves)."""
    m = x.mean()
    sos = butter(order, cutoff, btype="lowpass", fs=fs, output="sos")
    padlen = min(x.size - 1, int(round(3.0 / cutoff * fs)))
    return m + sosfiltfilt(sos, x - m, padtype="odd", padlen=padlen)


def detect_resp_peaks(resp: Channel) -> np.ndarray:
    """Breath peak times (s); minimum peak distance 1.5 s."""
    fs = resp.sample_rate
    x = resp.samples
    if x.size / fs < 15.0:
        raise TooShort(f"RESP has {x.size / fs:.2f} s, need at least 15 s")
    if np.ptp(x) == 0:
        return np.zeros(0)
    smooth = _lowpass(x, fs, min(1.0, 0.4 * fs), 2)
    sd = smooth.std()
    if sd == 0:
        return np.zeros(0)
    idx, _ = find_peaks(smooth, distance=max(int(np.ceil(1.5 * fs)), 1), prominence=0.3 * sd)
    return resp.start_time + idx / fs


@dataclass
class GSRComponents:
    tonic: np.ndarray
    phasic: np.ndarray
    sample_rate: float = 1.0
    start_time: float = 0.0


def decompose_gsr(gsr: Channel) -> GSRComponents:
    """Tonic = 0.05 Hz zero-phase order-4 low-pass; phasic = residual."""
    fs = gsr.sample_rate
    x = gsr.samples
    if x.size / fs < 15.0:
        raise TooShort(f"GSR has {x.size / fs:.2f} s, need at least 15 s")
    tonic = _lowpass(x, fs, GSR_TONIC_CUTOFF_HZ, 4)
    return GSRComponents(tonic, x - tonic, fs, gsr.start_time)


@dataclass
class GazeTrack:
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    blinks: np.ndarray       # (n, 2) start/end seconds
    offscreen: np.ndarray    # (n, 2) start/end seconds
    category: np.ndarray     # per input sample: KEPT, BLINK, OFFSCREEN or SHORT_GAP

    @property
    def samples(self) -> Gaze:
        return Gaze(self.t, self.x, self.y, np.ones(self.t.size, dtype=bool))


def clean_gaze(gaze: Gaze, screen) -> GazeTrack:
    w, h = screen
    n = len(gaze)
    empty = np.zeros((0, 2))
    if n == 0:
        return GazeTrack(np.zeros(0), np.zeros(0), np.zeros(0), empty, empty, np.zeros(0, dtype=np.int8))
    t = gaze.t
    with np.errstate(invalid="ignore"):
        inside = (gaze.x >= 0) & (gaze.x < w) & (gaze.y >= 0) & (gaze.y < h)
    kept = gaze.valid & inside
    category = np.full(n, KEPT, dtype=np.int8)

    dt = float(np.median(np.diff(t))) if n > 1 else 0.0
    edges = np.diff(np.concatenate([[0], (~kept).astype(np.int8), [0]]))
    starts = np.flatnonzero(edges == 1)
    stops = np.flatnonzero(edges == -1)
    blinks, offs = [], []
    for i0, i1 in zip(starts.tolist(), stops.tolist()):
        t0 = t[i0]
        t1 = t[i1] if i1 < n else t[i1 - 1] + dt
        dur = t1 - t0
        if not gaze.valid[i0:i1].any():
            if dur < BLINK_MIN_S:
                category[i0:i1] = SHORT_GAP
                continue
            if dur <= BLINK_MAX_S:
                category[i0:i1] = BLINK
                blinks.append((t0, t1))
                continue
        category[i0:i1] = OFFSCREEN
        offs.append((t0, t1))
    return GazeTrack(
        t[kept],
        gaze.x[kept],
        gaze.y[kept],
        np.array(blinks, dtype=float).reshape(-1, 2),
        np.array(offs, dtype=float).reshape(-1, 2),
        category,
    )
