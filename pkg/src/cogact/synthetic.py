"""Synthetic corpus generator.

Each player gets a recording that follows the lab protocol: three games,
``rounds_per_game`` consecutive rounds each, with a pause after every round
except the last. Game order is shuffled per player. Signals are simple
generative models driven by a per-player baseline plus per-game responses
that every player scales differently:

* ECG: Gaussian P-QRS-T template placed at beat times obtained by integrating
  the instantaneous heart rate (trend + respiratory sinus arrhythmia + LF
  oscillation), with white noise and baseline wander.
* RESP: sinusoid at the (slowly varying) breath rate.
* GSR: lagged tonic level plus bi-exponential phasic responses at Poisson
  event times.
* Gaze: fixations mostly around a per-player home region; a per-round share
  follows the game's screen layout. Blink gaps and (mostly during pauses)
  off-screen excursions interrupt the track.

True beat and breath times are kept in ``session.truth`` so detectors can be
scored against them.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve, lfilter

from .corpus import (
    DEFAULT_RATES,
    GAMES,
    ActivityLabel,
    Channel,
    Gaze,
    LabelInterval,
    RecordingSession,
)
from . import seeding
from .errors import DataError

SI, TETRIS, TD, PAUSE = (int(a) for a in ActivityLabel)
_REST = PAUSE  # lead-in/out behaves like a pause but is unlabeled

def _per_label(values) -> tuple[float, ...]:
    v = tuple(float(x) for x in values)
    if len(v) != 4:
        raise DataError("per-game parameters need 4 values (SpaceInvaders, Tetris, TowerDefense, Pause)")
    return v


@dataclass(frozen=True)
class SyntheticConfig:
    n_players: int = 20
    rounds_per_game: int = 4
    round_len: float = 90.0
    pause_len: float = 40.0
    seed: int = 0
    lead_in: float = 10.0
    lead_out: float = 10.0
    screen: tuple[int, int] = (1920, 1080)
    ecg_rate: float = DEFAULT_RATES["ECG"]
    resp_rate: float = DEFAULT_RATES["RESP"]
    gsr_rate: float = DEFAULT_RATES["GSR"]
    gaze_rate: float = DEFAULT_RATES["GAZE"]

    # per-player baseline ranges (uniform)
    rest_hr: tuple[float, float] = (60.0, 85.0)          # bpm
    hr_std: tuple[float, float] = (1.5, 4.0)             # bpm, slow HR drift
    breath_rate: tuple[float, float] = (0.20, 0.30)      # Hz
    gsr_tonic: tuple[float, float] = (2.0, 10.0)         # uS
    gaze_noise: tuple[float, float] = (6.0, 20.0)        # px

    # per-label signatures in ActivityLabel order (SpaceInvaders, Tetris, TowerDefense, Pause)
    hr_delta: tuple[float, ...] = (7.0, 5.0, 2.5, 0.0)           # bpm above rest
    breath_shift: tuple[float, ...] = (0.04, 0.07, 0.015, 0.0)   # Hz
    gsr_event_rate: tuple[float, ...] = (5.0, 3.5, 2.0, 1.0)     # events / min
    gsr_tonic_shift: tuple[float, ...] = (0.12, 0.18, 0.06, 0.0)  # fraction of tonic level
    blink_rate: tuple[float, ...] = (12.0, 10.0, 13.0, 16.0)     # blinks / min
    fixation_ms: tuple[float, ...] = (300.0, 340.0, 380.0, 420.0)
    gaze_layout_share: float = 0.25  # mean fraction of fixations that follow the activity's screen layout

    # multiplicative spread of each player's game responses: U(1 - s, 1 + s)
    player_spread: float = 0.6
    ecg_noise: float = 0.05  # white-noise std relative to the R-wave amplitude

    def __post_init__(self):
        for name in ("hr_delta", "breath_shift", "gsr_event_rate", "gsr_tonic_shift", "blink_rate", "fixation_ms"):
            object.__setattr__(self, name, _per_label(getattr(self, name)))
        self.validate()

    def validate(self) -> None:
        if self.n_players < 1:
            raise DataError("n_players must be >= 1")
        if self.rounds_per_game < 1:
            raise DataError("rounds_per_game must be >= 1")
        if self.round_len <= 0 or self.pause_len <= 0:
            raise DataError("round_len and pause_len must be positive")
        if self.lead_in < 0 or self.lead_out < 0:
            raise DataError("lead_in/lead_out must be non-negative")
        for name in ("rest_hr", "hr_std", "breath_rate", "gsr_tonic", "gaze_noise"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise DataError(f"{name}: empty range ({lo}, {hi})")
        if min(self.ecg_rate, self.resp_rate, self.gsr_rate, self.gaze_rate) <= 0:
            raise DataError("sample rates must be positive")
        if not 0 <= self.gaze_layout_share <= 1:
            raise DataError("gaze_layout_share must be in [0, 1]")
        if not 0 <= self.player_spread < 1:
            raise DataError("player_spread must be in [0, 1)")

    @property
    def n_intervals(self) -> int:
        return 2 * 3 * self.rounds_per_game - 1

    @property
    def labeled_duration(self) -> float:
        n_rounds = 3 * self.rounds_per_game
        return n_rounds * self.round_len + (n_rounds - 1) * self.pause_len

    @property
    def session_duration(self) -> float:
        return self.lead_in + self.labeled_duration + self.lead_out


def make_schedule(config: SyntheticConfig, game_order) -> list[LabelInterval]:
    labels = []
    t = config.lead_in
    n_total = 3 * config.rounds_per_game
    k = 0
    for g in game_order:
        for _ in range(config.rounds_per_game):
            labels.append(LabelInterval(t, t + config.round_len, ActivityLabel(int(g))))
            t += config.round_len
            k += 1
            if k < n_total:
                labels.append(LabelInterval(t, t + config.pause_len, ActivityLabel.Pause))
                t += config.pause_len
    return labels


@dataclass
class _Timeline:
    """Label code and time-in-interval on an arbitrary time grid."""

    code: np.ndarray
    elapsed: np.ndarray
    frac: np.ndarray  # elapsed / interval length


def _timeline(t: np.ndarray, labels: list[LabelInterval]) -> _Timeline:
    code = np.full(t.size, _REST, dtype=np.int64)
    elapsed = np.zeros(t.size)
    frac = np.zeros(t.size)
    starts = np.array([iv.start for iv in labels])
    ends = np.array([iv.end for iv in labels])
    idx = np.searchsorted(starts, t, side="right") - 1
    inside = (idx >= 0) & (t < ends[np.clip(idx, 0, None)])
    j = idx[inside]
    code[inside] = [int(labels[i].label) for i in j] if j.size else []
    elapsed[inside] = t[inside] - starts[j]
    frac[inside] = elapsed[inside] / (ends[j] - starts[j])
    return _Timeline(code, elapsed, frac)


def _lag(x: np.ndarray, dt: float, tau: float) -> np.ndarray:
    """First-order low-pass (exponential lag) started at x[0]."""
    a = np.exp(-dt / tau)
    y, _ = lfilter([1 - a], [1, -a], x, zi=[a * x[0]])
    return y


def _drift(rng: np.random.Generator, n: int, dt: float, tau: float, std: float) -> np.ndarray:
    """Stationary AR(1) noise with time constant ``tau`` and marginal std ``std``."""
    a = np.exp(-dt / tau)
    e = rng.normal(0.0, std * np.sqrt(1 - a * a), n)
    e[0] = rng.normal(0.0, std)
    y, _ = lfilter([1.0], [1, -a], e, zi=[0.0])
    return y


def _crossings(phase: np.ndarray, t: np.ndarray, offset: float) -> np.ndarray:
    """Times at which a monotone cumulative phase (in cycles) passes k + offset."""
    k = np.arange(np.ceil(phase[0] - offset), np.floor(phase[-1] - offset) + 1) + offset
    return np.interp(k, phase, t)


@dataclass
class _Player:
    hr0: float
    hr_drift: float
    rsa: float
    lf_amp: float
    br0: float
    resp_amp: float
    gsr0: float
    scr_amp: float
    gaze_noise: float
    ecg_gain: float
    m_hr: np.ndarray = field(default_factory=lambda: np.ones(4))
    m_br: np.ndarray = field(default_factory=lambda: np.ones(4))
    m_amp: np.ndarray = field(default_factory=lambda: np.ones(4))
    m_rsa: np.ndarray = field(default_factory=lambda: np.ones(4))
    m_gsr: np.ndarray = field(default_factory=lambda: np.ones(4))
    m_tonic: np.ndarray = field(default_factory=lambda: np.ones(4))
    m_blink: np.ndarray = field(default_factory=lambda: np.ones(4))
    gaze_offset: np.ndarray = field(default_factory=lambda: np.zeros(2))
    gaze_home: np.ndarray = field(default_factory=lambda: np.full(2, 0.5))
    home_spread: float = 0.12


def _draw_player(rng: np.random.Generator, cfg: SyntheticConfig) -> _Player:
    s = cfg.player_spread

    def mult():
        m = rng.uniform(1 - s, 1 + s, 4)
        m[PAUSE] = 1.0
        return m

    p = _Player(
        hr0=rng.uniform(*cfg.rest_hr),
        hr_drift=rng.uniform(*cfg.hr_std),
        rsa=rng.uniform(1.0, 4.0),
        lf_amp=rng.uniform(0.5, 2.5),
        br0=rng.uniform(*cfg.breath_rate),
        resp_amp=rng.uniform(0.5, 1.5),
        gsr0=rng.uniform(*cfg.gsr_tonic),
        scr_amp=rng.uniform(0.05, 0.4),
        gaze_noise=rng.uniform(*cfg.gaze_noise),
        ecg_gain=rng.uniform(0.8, 1.5),
    )
    p.m_hr, p.m_br, p.m_gsr, p.m_tonic = mult(), mult(), mult(), mult()
    # breathing depth and RSA fall during play, by a player-specific amount
    p.m_amp = np.append(rng.uniform(0.6, 1.0, 3), 1.0)
    p.m_rsa = np.append(rng.uniform(0.4, 0.9, 3), 1.0)
    p.m_blink = rng.uniform(0.6, 1.4, 4)
    p.gaze_offset = rng.normal(0.0, 0.02, 2)
    p.gaze_home = 0.5 + rng.normal(0.0, 0.1, 2)
    p.home_spread = rng.uniform(0.08, 0.2)
    return p


def _hr_target(tl: _Timeline, cfg: SyntheticConfig, p: _Player) -> np.ndarray:
    delta = np.asarray(cfg.hr_delta)[tl.code] * p.m_hr[tl.code]
    dyn = np.zeros(tl.code.size)
    si, te, td = tl.code == SI, tl.code == TETRIS, tl.code == TD
    dyn[si] = 1.5 * np.sin(2 * np.pi * tl.elapsed[si] / 35.0) ** 2   # enemy waves
    dyn[te] = 5.0 * (tl.frac[te] - 0.5)                              # speeds up within the round
    dyn[td] = 1.0 * np.sign(np.sin(2 * np.pi * tl.elapsed[td] / 40.0))  # turns
    return p.hr0 + delta + dyn


def _synth_resp(rng, t_grid, dt, tl, cfg, p):
    rate = p.br0 + np.asarray(cfg.breath_shift)[tl.code] * p.m_br[tl.code]
    rate = _lag(rate, dt, 10.0) + _drift(rng, t_grid.size, dt, 30.0, 0.01)
    rate = np.clip(rate, 0.08, 0.6)
    amp = _lag(p.resp_amp * p.m_amp[tl.code], dt, 10.0)
    phase = np.concatenate([[rng.uniform()], np.cumsum(rate[:-1] * dt)])
    phase[1:] += phase[0]
    return rate, amp, phase


def _synth_ecg(rng, t_grid, dt, tl, cfg, p, resp_phase, T):
    hr = _lag(_hr_target(tl, cfg, p), dt, 8.0) + _drift(rng, t_grid.size, dt, 60.0, p.hr_drift)
    rsa = _lag(p.rsa * p.m_rsa[tl.code], dt, 10.0)
    hr = hr + rsa * np.sin(2 * np.pi * resp_phase) + p.lf_amp * np.sin(2 * np.pi * 0.1 * t_grid + rng.uniform(0, 2 * np.pi))
    hr = np.clip(hr, 40.0, 180.0)
    beat_phase = np.concatenate([[0.0], np.cumsum(hr[:-1] / 60.0 * dt)]) + rng.uniform()
    beats = _crossings(beat_phase, t_grid, 0.0)
    beats = beats + rng.normal(0.0, 0.004, beats.size)
    beats = np.sort(beats[(beats > 0.5) & (beats < T - 0.6)])

    fs = cfg.ecg_rate
    n = int(round(T * fs))
    ecg = np.zeros(n)
    # (offset s, amplitude, width s) for P, Q, R, S, T waves
    waves = ((-0.20, 0.12, 0.025), (-0.03, -0.10, 0.010), (0.0, 1.0, 0.012), (0.03, -0.20, 0.012), (0.25, 0.30, 0.050))
    rel = np.arange(int(-0.35 * fs), int(0.5 * fs) + 1)
    centre = np.rint(beats * fs).astype(np.int64)
    idx = centre[:, None] + rel[None, :]
    tt = idx / fs - beats[:, None]
    shape = np.zeros_like(tt)
    for off, a, w in waves:
        shape += a * np.exp(-0.5 * ((tt - off) / w) ** 2)
    ok = (idx >= 0) & (idx < n)
    np.add.at(ecg, idx[ok], p.ecg_gain * shape[ok])
    t = np.arange(n) / fs
    ecg += 0.08 * p.ecg_gain * np.sin(2 * np.pi * np.interp(t, t_grid, resp_phase))
    ecg += rng.normal(0.0, cfg.ecg_noise * p.ecg_gain, n)
    return ecg, beats


def _synth_gsr(rng, t_grid, dt, tl, cfg, p, T, labels):
    fs = cfg.gsr_rate
    n = int(round(T * fs))
    t = np.arange(n) / fs
    level = p.gsr0 * (1 + np.asarray(cfg.gsr_tonic_shift)[tl.code] * p.m_tonic[tl.code])
    tonic = _lag(level, dt, 30.0) + _drift(rng, t_grid.size, dt, 120.0, 0.05 * p.gsr0)
    tonic = np.interp(t, t_grid, tonic)

    # Poisson events with a piecewise-constant rate (per label interval)
    rate = np.asarray(cfg.gsr_event_rate)[tl.code] * p.m_gsr[tl.code] / 60.0
    cum = np.concatenate([[0.0], np.cumsum(rate[:-1] * dt)])
    n_ev = rng.poisson(cum[-1])
    ev = np.sort(np.interp(rng.uniform(0, cum[-1], n_ev), cum, t_grid))
    impulses = np.zeros(n)
    np.add.at(impulses, np.clip(np.rint(ev * fs).astype(np.int64), 0, n - 1), p.scr_amp * rng.lognormal(0.0, 0.4, n_ev))
    k = np.arange(int(20 * fs)) / fs
    kern = np.exp(-k / 2.0) - np.exp(-k / 0.5)
    kern /= kern.max()
    phasic = fftconvolve(impulses, kern)[:n]
    gsr = tonic + phasic + rng.normal(0.0, 0.002, n)
    return gsr


# Tower Defense layout: cluster centres as screen fractions
_TD_CLUSTERS = np.array([[0.2, 0.25], [0.75, 0.2], [0.5, 0.55], [0.25, 0.8], [0.8, 0.75]])


def _fixation_points(rng, code: int, m: int, w: int, h: int, p: _Player, drift_xy, share: float):
    ox, oy = p.gaze_offset
    if code == SI:
        x = rng.uniform(0.1, 0.9, m) * w
        y = rng.normal(0.78 + oy, 0.05, m) * h
    elif code == TETRIS:
        x = rng.normal(0.5 + ox, 0.06, m) * w
        y = rng.uniform(0.1, 0.9, m) * h
    elif code == TD:
        c = _TD_CLUSTERS[rng.integers(0, len(_TD_CLUSTERS), m)]
        x = (c[:, 0] + ox + rng.normal(0, 0.05, m)) * w
        y = (c[:, 1] + oy + rng.normal(0, 0.05, m)) * h
    else:
        x = (drift_xy[0] + rng.normal(0, 0.08, m)) * w
        y = (drift_xy[1] + rng.normal(0, 0.08, m)) * h
    # the rest of the fixations go to the player's habitual region, whatever the activity
    home = rng.random(m) >= share
    x[home] = (p.gaze_home[0] + rng.normal(0, p.home_spread, home.sum())) * w
    y[home] = (p.gaze_home[1] + rng.normal(0, p.home_spread, home.sum())) * h
    return np.clip(x, 0, w - 1), np.clip(y, 0, h - 1)


def _synth_gaze(rng, cfg, p, T, labels):
    fs = cfg.gaze_rate
    w, h = cfg.screen
    n = int(round(T * fs))
    t = np.arange(n) / fs
    x = np.empty(n)
    y = np.empty(n)
    valid = np.ones(n, dtype=bool)

    # segments: lead-in, labeled intervals, lead-out
    bounds = [(0.0, labels[0].start, _REST)] if labels and labels[0].start > 0 else []
    bounds += [(iv.start, iv.end, int(iv.label)) for iv in labels]
    end = labels[-1].end if labels else 0.0
    if end < T:
        bounds.append((end, T, _REST))

    for a, b, code in bounds:
        i0, i1 = np.searchsorted(t, [a, b])
        if i1 <= i0:
            continue
        seg_t = t[i0:i1] - a
        mean_fix = cfg.fixation_ms[code] / 1000.0
        m = int((b - a) / mean_fix * 1.5) + 10
        dur = rng.gamma(4.0, mean_fix / 4.0, m)
        onsets = np.concatenate([[0.0], np.cumsum(dur)[:-1]])
        drift = 0.5 + rng.normal(0.0, 0.06, 2)  # centre drift for pauses
        # engagement with the layout varies from round to round
        share = min(1.0, cfg.gaze_layout_share * rng.uniform(0.0, 2.0))
        fx, fy = _fixation_points(rng, code, m, w, h, p, drift, share)
        k = np.searchsorted(onsets, seg_t, side="right") - 1
        x[i0:i1] = fx[k] + rng.normal(0, p.gaze_noise, i1 - i0)
        y[i0:i1] = fy[k] + rng.normal(0, p.gaze_noise, i1 - i0)

        def events(rate_per_min, lo, hi):
            cnt = rng.poisson(rate_per_min * (b - a) / 60.0)
            st = rng.uniform(a, b, cnt)
            return st, st + rng.uniform(lo, hi, cnt)

        bs, be = events(cfg.blink_rate[code] * p.m_blink[code], 0.1, 0.3)
        for s0, s1 in zip(bs, be):
            valid[np.searchsorted(t, s0):np.searchsorted(t, s1)] = False

        away_rate = 3.0 if code == PAUSE else 0.3
        os_, oe = events(away_rate, 1.0, 4.0) if code == PAUSE else events(away_rate, 0.6, 1.5)
        for s0, s1 in zip(os_, oe):
            j0, j1 = np.searchsorted(t, s0), np.searchsorted(t, s1)
            if rng.uniform() < 0.5:
                valid[j0:j1] = False  # tracker lost the eyes
            else:
                y[j0:j1] = h + rng.uniform(50, 300)  # looking below the screen

    x[~valid] = np.nan
    y[~valid] = np.nan
    return Gaze(t, x, y, valid)


def player_id(i: int) -> str:
    return f"P{i + 1:02d}"


def generate_session(config: SyntheticConfig, index: int) -> RecordingSession:
    """Generate player ``index`` of the corpus (pure function of config and index)."""
    rng = seeding.rng(seeding.GENERATOR, config.seed, index)
    p = _draw_player(rng, config)
    order = rng.permutation(np.array([int(g) for g in GAMES]))
    labels = make_schedule(config, order)
    T = config.session_duration

    dt = 0.25
    t_grid = np.arange(0.0, T + 1.0, dt)
    tl = _timeline(t_grid, labels)

    _, amp, resp_phase = _synth_resp(rng, t_grid, dt, tl, config, p)
    ecg, beats = _synth_ecg(rng, t_grid, dt, tl, config, p, resp_phase, T)

    fs = config.resp_rate
    tr = np.arange(int(round(T * fs))) / fs
    resp = np.interp(tr, t_grid, amp) * np.sin(2 * np.pi * np.interp(tr, t_grid, resp_phase))
    resp += _drift(rng, tr.size, 1 / fs, 20.0, 0.05) + rng.normal(0.0, 0.02, tr.size)
    breaths = _crossings(resp_phase, t_grid, 0.25)
    breaths = breaths[(breaths >= 0) & (breaths < T)]

    gsr = _synth_gsr(rng, t_grid, dt, tl, config, p, T, labels)
    gaze = _synth_gaze(rng, config, p, T, labels)

    channels = {
        "ECG": Channel("ECG", config.ecg_rate, ecg),
        "RESP": Channel("RESP", config.resp_rate, resp),
        "GSR": Channel("GSR", config.gsr_rate, gsr),
    }
    return RecordingSession(
        player_id=player_id(index),
        screen=config.screen,
        channels=channels,
        gaze=gaze,
        labels=labels,
        truth={"beats": beats, "breaths": breaths},
    )


def generate_corpus(config: SyntheticConfig) -> list[RecordingSession]:
    config.validate()
    return [generate_session(config, i) for i in range(config.n_players)]
