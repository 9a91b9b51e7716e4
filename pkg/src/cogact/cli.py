"""Command-line driver: generate, features, evaluate, trace.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
"""
from __future__ import annotations

import argparse
import sys
import traceback
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import eval as ev
from .config import ConfigError, ExperimentConfig, load_config
from .corpus import load_corpus, save_corpus
from .errors import DataError
from .features import FEATURES, SIGNAL_SETS, FeatureTable, extract_corpus
from .model import save_model
from .synthetic import generate_corpus

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _csv_list(value: str) -> tuple[str, ...]:
    items = tuple(s.strip() for s in value.split(",") if s.strip())
    if not items:
        raise argparse.ArgumentTypeError("empty list")
    return items


def _positive_int(value: str) -> int:
    try:
        v = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid integer {value!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _common() -> argparse.ArgumentParser:
    # defaults are suppressed so flags work before and after the subcommand
    p = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    p.add_argument("--seed", type=int, help="run seed (default 0)")
    p.add_argument("--out", help="output directory (default ./out)")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--threads", type=_positive_int, help="worker threads (default 1)")
    return p


def _synthetic_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--players", type=_positive_int, help="number of synthetic players")
    p.add_argument("--rounds-per-game", type=_positive_int)
    p.add_argument("--round-len", type=float, help="seconds per game round")
    p.add_argument("--pause-len", type=float, help="seconds per pause")


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="cogact", description=__doc__.splitlines()[0], parents=[common])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", parents=[common], help="write a synthetic corpus", argument_default=argparse.SUPPRESS)
    _synthetic_flags(g)

    f = sub.add_parser("features", parents=[common], help="extract feature CSVs", argument_default=argparse.SUPPRESS)
    f.add_argument("--corpus", help="corpus directory (default: synthetic corpus from the config)")
    f.add_argument("--signals", type=_csv_list, help="comma-separated signal sets or 'all'")
    _synthetic_flags(f)

    e = sub.add_parser("evaluate", parents=[common], help="run cross validation and write reports", argument_default=argparse.SUPPRESS)
    src = e.add_mutually_exclusive_group()
    src.add_argument("--corpus", help="corpus directory (default: synthetic corpus from the config)")
    src.add_argument("--features", dest="features_dir", help="directory with features_<SET>.csv files")
    e.add_argument("--scenario", "--scenarios", dest="scenarios", type=_csv_list, help="independent, dependent, biometric or 'all'")
    e.add_argument("--signals", type=_csv_list, help="comma-separated signal sets or 'all'")
    e.add_argument("--rounds", dest="n_rounds", type=int, help="boosting rounds")
    e.add_argument("--learning-rate", type=float)
    e.add_argument("--max-depth", type=int)
    e.add_argument("--pair-cap", type=int, help="biometric pairs to sample (0 = all ordered pairs)")
    e.add_argument("--save-models", action="store_true", help="also write every fold model")
    _synthetic_flags(e)

    t = sub.add_parser("trace", parents=[common], help="export one player's probability trace", argument_default=argparse.SUPPRESS)
    t.add_argument("--player", required=True)
    t.add_argument("--reports", help="directory written by 'evaluate' (default: --out)")
    t.add_argument("--scenario", dest="trace_scenario", default="dependent", choices=("independent", "dependent"))
    t.add_argument("--signals", dest="trace_signals", default="SIG-3", choices=SIGNAL_SETS)
    t.add_argument("--output", help="CSV path (default: <out>/trace_<player>_<scenario>_<signals>.csv)")
    return parser


_CONFIG_KEYS = (
    "seed", "out", "threads", "players", "rounds_per_game", "round_len", "pause_len", "corpus",
    "signals", "scenarios", "n_rounds", "learning_rate", "max_depth", "pair_cap", "save_models",
)


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if getattr(args, "config", None):
        cfg = load_config(args.config, cfg)
    overrides = {k: getattr(args, k) for k in _CONFIG_KEYS if hasattr(args, k)}
    for key in ("signals", "scenarios"):
        if overrides.get(key) == ("all",):
            overrides[key] = getattr(ExperimentConfig, key)
    return cfg.updated(**overrides)


def _log(msg: str) -> None:
    print(msg, flush=True)


def _sessions(cfg: ExperimentConfig):
    if cfg.corpus:
        return load_corpus(cfg.corpus)
    return generate_corpus(cfg.synthetic())


def _feature_tables(cfg: ExperimentConfig, sessions, signals) -> dict[str, FeatureTable]:
    """Extract the richest requested set once and derive the nested ones."""
    top = max(signals, key=SIGNAL_SETS.index)
    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as pool:
            table = extract_corpus(sessions, top, map_fn=pool.map)
    else:
        table = extract_corpus(sessions, top)
    return {s: table.select(s) for s in signals}


def cmd_generate(cfg: ExperimentConfig) -> int:
    sessions = generate_corpus(cfg.synthetic())
    out = Path(cfg.out)
    save_corpus(sessions, out)
    n_labels = sum(len(s.labels) for s in sessions)
    dur = sum(s.span[1] - s.span[0] for s in sessions)
    _log(f"wrote {len(sessions)} sessions to {out} ({n_labels} labeled intervals, {dur:.0f} s of recording)")
    return EXIT_OK


def cmd_features(cfg: ExperimentConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    tables = _feature_tables(cfg, _sessions(cfg), cfg.signals)
    for s, table in tables.items():
        path = out / f"features_{s}.csv"
        table.to_csv(path)
        _log(f"{s}: {len(table)} windows x {len(table.feature_names)} features -> {path}")
    return EXIT_OK


def _load_feature_dir(path: Path, signals) -> dict[str, FeatureTable]:
    tables = {}
    for s in signals:
        own = path / f"features_{s}.csv"
        if own.exists():
            tables[s] = FeatureTable.read_csv(own, s)
            continue
        richer = [r for r in SIGNAL_SETS[SIGNAL_SETS.index(s):] if (path / f"features_{r}.csv").exists()]
        if not richer:
            raise DataError(f"{own}: feature file not found")
        tables[s] = FeatureTable.read_csv(path / f"features_{richer[0]}.csv", richer[0]).select(s)
    return tables


def cmd_evaluate(cfg: ExperimentConfig, features_dir: str | None = None) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    signals = sorted(cfg.signals, key=SIGNAL_SETS.index)
    if features_dir:
        tables = _load_feature_dir(Path(features_dir), signals)
    else:
        tables = _feature_tables(cfg, _sessions(cfg), signals)
    params = cfg.gbt_params()
    pair_cap = cfg.pair_cap or None
    for scenario in cfg.scenarios:
        reports = []
        for s in signals:
            report = ev.run_loocv(tables[s], scenario, params, seed=cfg.seed, threads=cfg.threads,
                                  pair_cap=pair_cap, keep_models=cfg.save_models)
            stem = f"{scenario}_{s}"
            ev.save_report(report, out / f"report_{stem}.json")
            if scenario != "biometric":
                ev.write_trace_csv(report.trace_rows(), out / f"traces_{stem}.csv")
            if cfg.save_models:
                mdir = out / "models" / stem
                mdir.mkdir(parents=True, exist_ok=True)
                for f in report.folds:
                    save_model(f.model, mdir / f"fold{f.index:03d}.json")
            reports.append(report)
        text = ev.format_table(scenario, reports)
        (out / f"table_{scenario}.txt").write_text(text, encoding="utf-8")
        _log(text)
    return EXIT_OK


def cmd_trace(cfg: ExperimentConfig, player: str, scenario: str, signals: str, reports: str | None, output: str | None) -> int:
    src = Path(reports or cfg.out) / f"traces_{scenario}_{signals}.csv"
    if not src.exists():
        raise DataError(f"{src}: not found; run 'evaluate' first")
    rows = [r[1:] for r in ev.read_trace_csv(src) if r[0] == player]
    if not rows:
        raise ev.UnknownPlayer(f"player {player!r} has no test windows in {src}")
    dest = Path(output) if output else Path(cfg.out) / f"trace_{player}_{scenario}_{signals}.csv"
    dest.parent.mkdir(parents=True, exist_ok=True)
    ev.write_trace_csv(rows, dest, with_player=False)
    _log(f"{len(rows)} windows -> {dest}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        cfg = resolve_config(args)
        if args.command == "generate":
            return cmd_generate(cfg)
        if args.command == "features":
            return cmd_features(cfg)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, getattr(args, "features_dir", None))
        return cmd_trace(cfg, args.player, args.trace_scenario, args.trace_signals,
                         getattr(args, "reports", None), getattr(args, "output", None))
    except (ConfigError, UsageError) as exc:
        print(f"cogact: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"cogact: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception:  # noqa: BLE001
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
