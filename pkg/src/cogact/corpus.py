"""Session data model and the on-disk session format.

A session directory holds::

    manifest.json      player id, screen size, channel list, file names
    ecg.csv resp.csv gsr.csv     t,value
    gaze.csv           t,x,y,valid
    labels.csv         start,end,label
    truth_*.csv        optional ground-truth event times (synthetic data)

All CSVs are UTF-8 with a header row; floats are written with their shortest
round-trip representation so a save/load cycle is bit-exact.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .errors import DataError, MissingChannel, NaNSample, NonUniformSampling, OverlappingLabels

FORMAT_NAME = "cogact-session"
FORMAT_VERSION = 1

CHANNEL_NAMES = ("ECG", "RESP", "GSR")
DEFAULT_RATES = {"ECG": 250.0, "RESP": 25.0, "GSR": 25.0, "GAZE": 60.0}


class ActivityLabel(IntEnum):
    SpaceInvaders = 0
    Tetris = 1
    TowerDefense = 2
    Pause = 3


GAMES = (ActivityLabel.SpaceInvaders, ActivityLabel.Tetris, ActivityLabel.TowerDefense)
N_CLASSES = len(ActivityLabel)


def parse_label(name: str) -> ActivityLabel:
    try:
        return ActivityLabel[name]
    except KeyError:
        raise DataError(f"unknown activity label {name!r}") from None


@dataclass(eq=False)
class Channel:
    name: str
    sample_rate: float
    samples: np.ndarray
    start_time: float = 0.0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.sample_rate <= 0:
            raise DataError(f"{self.name}: sample rate must be positive")
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise DataError(f"{self.name}: samples must be a non-empty 1-D sequence")

    @property
    def times(self) -> np.ndarray:
        return self.start_time + np.arange(self.samples.size) / self.sample_rate

    @property
    def end_time(self) -> float:
        """Exclusive end of the recorded span."""
        return self.start_time + self.samples.size / self.sample_rate

    def index_of(self, t):
        """Sample index of time ``t`` (rounded to the nearest sample)."""
        return np.rint((np.asarray(t, dtype=float) - self.start_time) * self.sample_rate).astype(np.int64)

    def __eq__(self, other):
        if not isinstance(other, Channel):
            return NotImplemented
        return (
            self.name == other.name
            and self.sample_rate == other.sample_rate
            and self.start_time == other.start_time
            and np.array_equal(self.samples, other.samples)
        )


class GazeSample(NamedTuple):
    t: float
    x: float
    y: float
    valid: bool


@dataclass(eq=False)
class Gaze:
    """Columnar gaze track; iterating yields :class:`GazeSample` rows."""

    t: np.ndarray = field(default_factory=lambda: np.zeros(0))
    x: np.ndarray = field(default_factory=lambda: np.zeros(0))
    y: np.ndarray = field(default_factory=lambda: np.zeros(0))
    valid: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        self.valid = np.asarray(self.valid, dtype=bool)
        n = self.t.size
        if not (self.x.size == self.y.size == self.valid.size == n):
            raise DataError("gaze columns differ in length")

    @classmethod
    def from_samples(cls, samples: Sequence[GazeSample]) -> "Gaze":
        if len(samples) == 0:
            return cls()
        t, x, y, v = zip(*samples)
        return cls(np.array(t), np.array(x), np.array(y), np.array(v, dtype=bool))

    def __len__(self):
        return self.t.size

    def __iter__(self) -> Iterator[GazeSample]:
        for row in zip(self.t.tolist(), self.x.tolist(), self.y.tolist(), self.valid.tolist()):
            yield GazeSample(*row)

    def __getitem__(self, i) -> GazeSample:
        return GazeSample(float(self.t[i]), float(self.x[i]), float(self.y[i]), bool(self.valid[i]))

    def __eq__(self, other):
        if not isinstance(other, Gaze):
            return NotImplemented
        return (
            np.array_equal(self.t, other.t)
            and np.array_equal(self.x, other.x, equal_nan=True)
            and np.array_equal(self.y, other.y, equal_nan=True)
            and np.array_equal(self.valid, other.valid)
        )


@dataclass(frozen=True)
class LabelInterval:
    start: float
    end: float
    label: ActivityLabel


def validate_labels(labels: Sequence[LabelInterval], source: str = "labels") -> None:
    prev_end = -np.inf
    for row, iv in enumerate(labels):
        if not iv.end > iv.start:
            raise DataError(f"{source}: interval {row} has end <= start")
        if iv.start < prev_end:
            raise OverlappingLabels(
                f"{source}: interval {row} ({iv.start}, {iv.end}) overlaps or precedes the previous one"
            )
        prev_end = iv.end


@dataclass(eq=False)
class RecordingSession:
    player_id: str
    screen: tuple[int, int]
    channels: dict[str, Channel]
    gaze: Gaze
    labels: list[LabelInterval]
    truth: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.screen = (int(self.screen[0]), int(self.screen[1]))
        self.labels = list(self.labels)
        self.truth = {k: np.asarray(v, dtype=float) for k, v in self.truth.items()}

    def channel(self, name: str) -> Channel:
        try:
            return self.channels[name]
        except KeyError:
            raise MissingChannel(f"session {self.player_id}: no {name} channel") from None

    @property
    def span(self) -> tuple[float, float]:
        """Time range covered by every physiological channel."""
        chans = [self.channels[n] for n in CHANNEL_NAMES if n in self.channels]
        return max(c.start_time for c in chans), min(c.end_time for c in chans)

    def label_at(self, t: float) -> ActivityLabel | None:
        for iv in self.labels:
            if iv.start <= t < iv.end:
                return iv.label
        return None

    def validate(self) -> None:
        for name in CHANNEL_NAMES:
            ch = self.channel(name)
            bad = np.flatnonzero(~np.isfinite(ch.samples))
            if bad.size:
                raise NaNSample(f"session {self.player_id}: {name} sample {bad[0]} is not finite")
        validate_labels(self.labels, f"session {self.player_id}")
        if len(self.gaze) > 1 and np.any(np.diff(self.gaze.t) <= 0):
            raise DataError(f"session {self.player_id}: gaze times not strictly increasing")
        if self.labels:
            lo, hi = self.span
            if self.labels[0].start < lo - 1e-9 or self.labels[-1].end > hi + 1e-9:
                raise DataError(f"session {self.player_id}: channels do not cover the label track")

    def __eq__(self, other):
        if not isinstance(other, RecordingSession):
            return NotImplemented
        return (
            self.player_id == other.player_id
            and self.screen == other.screen
            and self.channels.keys() == other.channels.keys()
            and all(self.channels[k] == other.channels[k] for k in self.channels)
            and self.gaze == other.gaze
            and self.labels == other.labels
            and self.truth.keys() == other.truth.keys()
            and all(np.array_equal(self.truth[k], other.truth[k]) for k in self.truth)
        )


# --- serialization -----------------------------------------------------------------


def _fmt(v: float) -> str:
    return "NaN" if v != v else repr(v)


def write_csv(path: Path, header: Sequence[str], columns: Sequence[np.ndarray]) -> None:
    cols = [np.asarray(c).tolist() for c in columns]
    lines = [",".join(header)]
    for row in zip(*cols):
        lines.append(",".join(str(v) if isinstance(v, (int, str)) else _fmt(v) for v in row))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def _read_numeric(path: Path, ncols: int) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        fh.readline()
        if not fh.readline().strip():
            return np.zeros((0, ncols))
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, dtype=float, ndmin=2, encoding="utf-8")
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    if data.size == 0:
        return np.zeros((0, ncols))
    if data.shape[1] != ncols:
        raise DataError(f"{path}: expected {ncols} columns, found {data.shape[1]}")
    return data


def save_session(session: RecordingSession, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    chans = []
    for name in CHANNEL_NAMES:
        ch = session.channel(name)
        fname = f"{name.lower()}.csv"
        write_csv(path / fname, ("t", "value"), (ch.times, ch.samples))
        chans.append({"name": name, "sample_rate": ch.sample_rate, "file": fname})
    g = session.gaze
    write_csv(path / "gaze.csv", ("t", "x", "y", "valid"), (g.t, g.x, g.y, g.valid.astype(int)))
    with open(path / "labels.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write("start,end,label\n")
        for iv in session.labels:
            fh.write(f"{_fmt(float(iv.start))},{_fmt(float(iv.end))},{iv.label.name}\n")
    truth = {}
    for key in sorted(session.truth):
        fname = f"truth_{key}.csv"
        write_csv(path / fname, ("t",), (session.truth[key],))
        truth[key] = fname
    manifest = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "player_id": session.player_id,
        "screen": list(session.screen),
        "channels": chans,
        "gaze": {"file": "gaze.csv"},
        "labels": {"file": "labels.csv"},
        "truth": truth,
    }
    with open(path / "manifest.json", "w", encoding="utf-8", newline="") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_channel(path: Path, entry: dict) -> Channel:
    name = entry.get("name")
    fpath = path / entry.get("file", f"{str(name).lower()}.csv")
    if not fpath.is_file():
        raise MissingChannel(f"{fpath}: channel {name} listed in manifest but file is missing")
    data = _read_numeric(fpath, 2)
    if data.shape[0] == 0:
        raise DataError(f"{fpath}: channel {name} has no samples")
    t, v = data[:, 0], data[:, 1]
    bad = np.flatnonzero(~np.isfinite(v))
    if bad.size:
        raise NaNSample(f"{fpath}: row {bad[0] + 2} has a non-finite sample")
    fs = entry.get("sample_rate")
    if fs is None:
        if t.size < 2:
            raise NonUniformSampling(f"{fpath}: cannot infer a sample rate from one row")
        fs = 1.0 / float(np.median(np.diff(t)))
    fs = float(fs)
    expected = t[0] + np.arange(t.size) / fs
    off = np.flatnonzero(np.abs(t - expected) > 1e-3 / fs)
    if off.size:
        raise NonUniformSampling(f"{fpath}: row {off[0] + 2} breaks uniform sampling at {fs} Hz")
    return Channel(str(name), fs, v, float(t[0]))


def load_session(path) -> RecordingSession:
    path = Path(path)
    mpath = path / "manifest.json"
    if not mpath.is_file():
        raise DataError(f"{mpath}: manifest not found")
    try:
        with open(mpath, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{mpath}: {exc}") from None

    listed = {c.get("name"): c for c in manifest.get("channels", [])}
    channels = {}
    for name in CHANNEL_NAMES:
        if name not in listed:
            raise MissingChannel(f"{mpath}: channel {name} not listed")
        channels[name] = _load_channel(path, listed[name])

    gpath = path / manifest.get("gaze", {}).get("file", "gaze.csv")
    if gpath.is_file():
        g = _read_numeric(gpath, 4)
        gaze = Gaze(g[:, 0], g[:, 1], g[:, 2], g[:, 3] != 0)
        if len(gaze) > 1:
            bad = np.flatnonzero(np.diff(gaze.t) <= 0)
            if bad.size:
                raise DataError(f"{gpath}: row {bad[0] + 3} time is not strictly increasing")
    else:
        gaze = Gaze()

    lpath = path / manifest.get("labels", {}).get("file", "labels.csv")
    labels = []
    if lpath.is_file():
        with open(lpath, encoding="utf-8", newline="") as fh:
            for row, rec in enumerate(csv.DictReader(fh)):
                try:
                    labels.append(
                        LabelInterval(float(rec["start"]), float(rec["end"]), parse_label(rec["label"].strip()))
                    )
                except (KeyError, TypeError, ValueError) as exc:
                    raise DataError(f"{lpath}: row {row + 2}: {exc}") from None
    validate_labels(labels, str(lpath))

    truth = {}
    for key, fname in sorted(manifest.get("truth", {}).items()):
        tpath = path / fname
        if tpath.is_file():
            truth[key] = _read_numeric(tpath, 1)[:, 0]

    session = RecordingSession(
        player_id=str(manifest["player_id"]),
        screen=tuple(manifest.get("screen", (1920, 1080))),
        channels=channels,
        gaze=gaze,
        labels=labels,
        truth=truth,
    )
    session.validate()
    return session


def save_corpus(sessions: Sequence[RecordingSession], path) -> list[Path]:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    ids = [s.player_id for s in sessions]
    if len(set(ids)) != len(ids):
        raise DataError("player ids must be unique within a corpus")
    out = []
    for s in sessions:
        save_session(s, path / s.player_id)
        out.append(path / s.player_id)
    return out


def load_corpus(path) -> list[RecordingSession]:
    path = Path(path)
    dirs = sorted(p for p in path.iterdir() if (p / "manifest.json").is_file()) if path.is_dir() else []
    if not dirs:
        raise DataError(f"{path}: no session directories found")
    sessions = [load_session(d) for d in dirs]
    ids = [s.player_id for s in sessions]
    if len(set(ids)) != len(ids):
        raise DataError(f"{path}: duplicate player ids")
    return sessions
