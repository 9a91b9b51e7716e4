"""Experiment configuration: flat ``key = value`` text files.

Lines starting with ``#`` are comments. Precedence is command line, then
file, then the defaults below.
"""
from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

from .errors import DataError
from .eval import DEFAULT_PAIR_CAP, SCENARIOS, check_scenario
from .features import SIGNAL_SETS, WINDOW_STEP, WINDOW_WIDTH, check_signal_set
from .model import GBTParams
from .synthetic import SyntheticConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    corpus: str = ""              # corpus directory; empty means the synthetic corpus
    players: int = 20
    rounds_per_game: int = SyntheticConfig.rounds_per_game
    round_len: float = SyntheticConfig.round_len
    pause_len: float = SyntheticConfig.pause_len
    signals: tuple[str, ...] = SIGNAL_SETS
    scenarios: tuple[str, ...] = SCENARIOS
    n_rounds: int = GBTParams.n_rounds
    learning_rate: float = GBTParams.learning_rate
    max_depth: int = GBTParams.max_depth
    min_child_weight: float = GBTParams.min_child_weight
    lambda_l2: float = GBTParams.lambda_l2
    gamma_min_gain: float = GBTParams.gamma_min_gain
    subsample: float = GBTParams.subsample
    pair_cap: int = DEFAULT_PAIR_CAP  # 0 means all ordered pairs
    window_width: float = WINDOW_WIDTH
    window_step: float = WINDOW_STEP
    out: str = "out"
    seed: int = 0
    threads: int = 1
    save_models: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.players < 1:
            raise ConfigError("players must be >= 1")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.pair_cap < 0:
            raise ConfigError("pair_cap must be >= 0")
        if (self.window_width, self.window_step) != (WINDOW_WIDTH, WINDOW_STEP):
            raise ConfigError(f"only {WINDOW_WIDTH:g} s windows with a {WINDOW_STEP:g} s step are supported")
        try:
            for s in self.signals:
                check_signal_set(s)
            for s in self.scenarios:
                check_scenario(s)
            self.gbt_params()
            self.synthetic()
        except (ValueError, DataError) as exc:
            raise ConfigError(str(exc)) from None

    def gbt_params(self) -> GBTParams:
        return GBTParams(
            n_rounds=self.n_rounds, learning_rate=self.learning_rate, max_depth=self.max_depth,
            min_child_weight=self.min_child_weight, lambda_l2=self.lambda_l2,
            gamma_min_gain=self.gamma_min_gain, subsample=self.subsample, seed=self.seed,
        )

    def synthetic(self) -> SyntheticConfig:
        return SyntheticConfig(
            n_players=self.players, rounds_per_game=self.rounds_per_game,
            round_len=self.round_len, pause_len=self.pause_len, seed=self.seed,
        )

    def updated(self, **overrides) -> "ExperimentConfig":
        """Copy with the given fields replaced (``None`` values are ignored)."""
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})


_FIELDS = {f.name: f for f in fields(ExperimentConfig)}


def _convert(key: str, raw: str):
    default = getattr(ExperimentConfig, key)
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if isinstance(default, tuple):
        items = tuple(s.strip() for s in raw.split(",") if s.strip())
        if items == ("all",):
            return default
        return items
    try:
        return type(default)(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None


def parse_config_text(text: str, source: str = "config") -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _FIELDS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            values[key] = _convert(key, raw)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
    return values


def load_config(path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return (base or ExperimentConfig()).updated(**parse_config_text(text, str(path)))


def dump_config(cfg: ExperimentConfig) -> str:
    lines = []
    for name in _FIELDS:
        v = getattr(cfg, name)
        if isinstance(v, tuple):
            v = ",".join(v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{name} = {v}")
    return "\n".join(lines) + "\n"
