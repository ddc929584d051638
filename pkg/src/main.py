import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from pydantic import ValidationError

from audio_notes import extract_voice_notes, session_envelope, write_notes
from baselines import write_predictions
from config import PipelineConfig, SimulatorConfig, load_config, override
from ensemble import feature_importance, load_model, save_model, train_forest
from errors import AnchorError, ConfigError, MissingFileError, read_utf8
from evaluation import (
    METRICS,
    EvalReport,
    evaluate_predictions,
    lopo_cv,
    person_dependent_cv,
    print_report,
    read_report,
    write_report,
)
from models.prediction import Strategy
from passage_features import labelled, read_features, write_features
from pipeline import (
    all_rows,
    analyze_corpus,
    baseline_predictions,
    dump_fixations,
    learned_predictions,
    passage_sizes,
    session_dirs,
)
from session_io import load_session
from simulator import simulate_corpus, write_corpus

logger = logging.getLogger("gaze_anchor")

DATA_DIR = Path("data")
DEFAULT_CORPUS = DATA_DIR / "corpus"
DEFAULT_FEATURES = DATA_DIR / "features.csv"
DEFAULT_MODEL = DATA_DIR / "model.forest"
DEFAULT_REPORT = DATA_DIR / "report.json"
DEFAULT_PREDICTIONS = DATA_DIR / "predictions.csv"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports bad usage as exit status 1."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _metrics(value: str) -> List[str]:
    names = [m.strip() for m in value.split(",") if m.strip()]
    unknown = [m for m in names if m not in METRICS]
    if unknown or not names:
        raise argparse.ArgumentTypeError(f"metrics must be drawn from {','.join(METRICS)}")
    return names


GLOBAL_DEFAULTS = {"config": None, "seed": None, "jobs": -1, "verbose": False}


def _common_flags() -> argparse.ArgumentParser:
    """flags accepted before or after the subcommand name.

    defaults are suppressed so a subcommand never overwrites a value given
    before its name; `parse_args` fills them in afterwards.
    """
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=argparse.SUPPRESS, help="TOML config file")
    common.add_argument(
        "--seed", type=int, default=argparse.SUPPRESS, help="master seed for the forest and the simulator"
    )
    common.add_argument(
        "--jobs", type=int, default=argparse.SUPPRESS, help="worker processes (-1 = all cores)"
    )
    common.add_argument("--verbose", action="store_true", default=argparse.SUPPRESS, help="debug logging")
    return common


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    args = build_parser().parse_args(argv)
    for name, default in GLOBAL_DEFAULTS.items():
        if not hasattr(args, name):
            setattr(args, name, default)
    return args


def build_parser() -> argparse.ArgumentParser:
    common = _common_flags()
    parser = _Parser(
        prog="gaze-anchor",
        description="anchor voice notes to text passages from gaze",
        parents=[common],
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name: str, summary: str) -> argparse.ArgumentParser:
        return sub.add_parser(name, help=summary, parents=[common])

    p = command("segment-audio", "extract voice notes from a session's audio")
    p.add_argument("--session", type=Path, required=True)
    p.add_argument("--out", type=Path, help="notes.csv (default: inside the session)")

    p = command("featurize", "feature rows for every note of every session")
    p.add_argument("--sessions", type=Path, default=DEFAULT_CORPUS)
    p.add_argument("--out", type=Path, default=DEFAULT_FEATURES)
    p.add_argument("--fixations", action="store_true", help="also write fixations.csv into each session")

    p = command("train", "train the forest on labelled feature rows")
    p.add_argument("--features", type=Path, default=DEFAULT_FEATURES)
    p.add_argument("--model", type=Path, default=DEFAULT_MODEL)
    p.add_argument("--trees", type=int, help="override forest.n_trees")

    p = command("predict", "score every candidate passage with a trained model")
    p.add_argument("--model", type=Path, default=DEFAULT_MODEL)
    p.add_argument("--session", type=Path, required=True, help="session directory or corpus")
    p.add_argument("--out", type=Path, default=DEFAULT_PREDICTIONS)

    p = command("evaluate", "cross-validate the learned model and compare baselines")
    p.add_argument("--sessions", type=Path, default=DEFAULT_CORPUS)
    p.add_argument("--cv", choices=["lopo", "loo-note"], default="lopo")
    p.add_argument("--strategy", choices=["learned", "position", "fixation", "all"], default="all")
    p.add_argument("--report", type=Path, default=DEFAULT_REPORT)
    p.add_argument("--metrics", type=_metrics, help="default: evaluation.metrics")
    p.add_argument("--trees", type=int, help="override forest.n_trees")
    p.add_argument(
        "--by-size", action="store_true", help="also report sizes of annotated passages found and missed"
    )

    p = command("baselines", "run the comparison strategies")
    p.add_argument("--sessions", type=Path, default=DEFAULT_CORPUS)
    p.add_argument("--strategy", choices=["position", "fixation", "all"], default="all")
    p.add_argument("--out", type=Path, default=DEFAULT_PREDICTIONS)

    p = command("simulate", "generate a labelled synthetic corpus")
    p.add_argument("--participants", type=int)
    p.add_argument("--notes-per-participant", type=int)
    p.add_argument("--profile", type=Path, help="JSON object of simulator settings")
    p.add_argument("--out", type=Path, default=DEFAULT_CORPUS)
    p.add_argument("--waveform", action="store_true", help="write audio.wav instead of envelope.csv")

    p = command("report", "print a saved report and model importances")
    p.add_argument("--report", type=Path, default=DEFAULT_REPORT)
    p.add_argument("--model", type=Path, help="also list the model's top features")
    p.add_argument("--metrics", type=_metrics, help="default: evaluation.metrics")

    return parser


def _load_profile(path: Path, base: SimulatorConfig) -> SimulatorConfig:
    if not path.is_file():
        raise MissingFileError(path)
    try:
        values = json.loads(read_utf8(path))
        return SimulatorConfig.model_validate({**base.model_dump(), **values})
    except (json.JSONDecodeError, TypeError) as e:
        raise ConfigError(f"{path}: {e}") from e
    except ValidationError as e:
        raise ConfigError(f"{path}: {e}") from e


def _ensure_parent(path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)


def configure(args: argparse.Namespace) -> PipelineConfig:
    cfg = load_config(args.config)
    cfg = override(cfg, "forest", seed=args.seed, n_jobs=args.jobs, n_trees=getattr(args, "trees", None))
    cfg = override(cfg, "simulator", seed=args.seed)
    cfg = override(cfg, "evaluation", n_jobs=args.jobs)
    return cfg


def cmd_segment_audio(args, cfg: PipelineConfig) -> None:
    session = load_session(args.session)
    notes = extract_voice_notes(session_envelope(session, cfg.audio), cfg.audio)
    out = args.out or args.session / "notes.csv"
    _ensure_parent(out)
    write_notes(notes, out)
    print(f"{len(notes)} voice notes written to {out}")


def cmd_featurize(args, cfg: PipelineConfig) -> None:
    analyses = analyze_corpus(args.sessions, cfg, args.jobs)
    rows = all_rows(analyses)
    _ensure_parent(args.out)
    write_features(rows, args.out)
    if args.fixations:
        for analysis, path in zip(analyses, session_dirs(args.sessions)):
            n = dump_fixations(analysis, path / "fixations.csv", cfg)
            logger.debug("%s: %d fixations written", analysis.participant_id, n)
    print(f"{len(rows)} feature rows from {len(analyses)} sessions written to {args.out}")


def cmd_train(args, cfg: PipelineConfig) -> None:
    rows = labelled(read_features(args.features), args.features)
    model = train_forest(rows, cfg.forest)
    _ensure_parent(args.model)
    save_model(model, args.model)
    print(f"trained {len(model.trees)} trees on {len(rows)} rows, saved to {args.model}")


def cmd_predict(args, cfg: PipelineConfig) -> None:
    model = load_model(args.model)
    analyses = analyze_corpus(args.session, cfg, args.jobs)
    predictions = learned_predictions(model, all_rows(analyses), cfg.evaluation.decision_threshold)
    _ensure_parent(args.out)
    write_predictions(predictions, args.out)
    print(f"{len(predictions)} predictions written to {args.out}")


def _strategies(choice: str) -> List[Strategy]:
    if choice == "all":
        return list(Strategy)
    return [Strategy(choice)]


def cmd_evaluate(args, cfg: PipelineConfig) -> None:
    analyses = analyze_corpus(args.sessions, cfg, args.jobs)
    rows = labelled(all_rows(analyses), args.sessions)
    sizes = passage_sizes(analyses) if args.by_size or cfg.evaluation.by_passage_size else None

    reports: List[EvalReport] = []
    for strategy in _strategies(args.strategy):
        if strategy is Strategy.LEARNED:
            cv = lopo_cv if args.cv == "lopo" else person_dependent_cv
            reports.append(cv(rows, cfg.forest, cfg.evaluation, args.jobs, sizes=sizes))
        else:
            predictions = [p for a in analyses for p in baseline_predictions(a, strategy, cfg)]
            reports.append(evaluate_predictions(rows, predictions, strategy.value, args.cv, sizes=sizes))

    _ensure_parent(args.report)
    write_report(reports, args.report)
    print_report(reports, args.metrics or cfg.evaluation.metrics)


def cmd_baselines(args, cfg: PipelineConfig) -> None:
    analyses = analyze_corpus(args.sessions, cfg, args.jobs)
    strategies = [Strategy.POSITION, Strategy.FIXATION] if args.strategy == "all" else [Strategy(args.strategy)]
    predictions = [p for s in strategies for a in analyses for p in baseline_predictions(a, s, cfg)]
    _ensure_parent(args.out)
    write_predictions(predictions, args.out)
    print(f"{len(predictions)} baseline predictions written to {args.out}")


def cmd_simulate(args, cfg: PipelineConfig) -> None:
    sim = cfg.simulator
    if args.profile is not None:
        sim = _load_profile(args.profile, sim)
    updates = {
        "n_participants": args.participants,
        "notes_per_participant": args.notes_per_participant,
        "seed": args.seed,
        "waveform": True if args.waveform else None,
    }
    cfg = override(cfg.model_copy(update={"simulator": sim}), "simulator", **updates)
    corpus = simulate_corpus(cfg.simulator, n_jobs=args.jobs)
    written = write_corpus(corpus, args.out, cfg.simulator)
    print(f"{len(written)} sessions with {corpus.n_notes} notes written to {args.out}")


def cmd_report(args, cfg: PipelineConfig) -> None:
    print_report(read_report(args.report), args.metrics or cfg.evaluation.metrics)
    if args.model is not None:
        model = load_model(args.model)
        top = feature_importance(model)[: cfg.evaluation.top_features]
        print(f"\nTop {len(top)} features by importance:")
        for rank, (name, score) in enumerate(top, start=1):
            print(f"  {rank:>2}. {name:<24} {score:.4f}")


COMMANDS = {
    "segment-audio": cmd_segment_audio,
    "featurize": cmd_featurize,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "baselines": cmd_baselines,
    "simulate": cmd_simulate,
    "report": cmd_report,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """run one subcommand; returns the process exit status.

    0 on success, 1 for bad input or usage, 2 for anything unexpected.
    """
    try:
        args = parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return 1

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = configure(args)
        COMMANDS[args.command](args, cfg)
    except AnchorError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception:
        logger.exception("internal error")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
