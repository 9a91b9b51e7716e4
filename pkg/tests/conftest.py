import numpy as np
import pytest

from cogact.corpus import ActivityLabel, Channel, Gaze, LabelInterval, RecordingSession
from cogact.synthetic import SyntheticConfig, generate_corpus


def toy_session(duration=20.0, player_id="T01", labels=None, seed=0, gaze=True) -> RecordingSession:
    rng = np.random.default_rng(seed)
    chans = {
        name: Channel(name, fs, rng.normal(size=int(duration * fs)))
        for name, fs in (("ECG", 250.0), ("RESP", 25.0), ("GSR", 25.0))
    }
    if gaze:
        t = np.arange(int(duration * 60)) / 60.0
        valid = rng.random(t.size) > 0.05
        x = np.where(valid, rng.uniform(0, 1920, t.size), np.nan)
        y = np.where(valid, rng.uniform(0, 1080, t.size), np.nan)
        g = Gaze(t, x, y, valid)
    else:
        g = Gaze()
    if labels is None:
        labels = [
            LabelInterval(0.0, duration / 2, ActivityLabel.Tetris),
            LabelInterval(duration / 2, duration, ActivityLabel.Pause),
        ]
    return RecordingSession(player_id, (1920, 1080), chans, g, labels)


SMALL = SyntheticConfig(n_players=3, rounds_per_game=2, round_len=60.0, pause_len=30.0, seed=42)


@pytest.fixture(scope="session")
def small_corpus():
    return generate_corpus(SMALL)


@pytest.fixture(scope="session")
def small_table(small_corpus):
    from cogact.features import extract_corpus

    return extract_corpus(small_corpus, "SIG-3")
