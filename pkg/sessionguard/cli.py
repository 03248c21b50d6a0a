"""
SessionGuard Command Line Interface

Reproducible pipelines over agent tool-call sessions:

    sessionguard ingest    --input raw.jsonl --source ras_eval --out runs/demo
    sessionguard featurize --config run.json
    sessionguard train     --config run.json --model logreg --seed 42
    sessionguard evaluate  --config run.json
    sessionguard sweep     --config run.json
    sessionguard report    --config run.json --leakage --per-mode --window

Exit codes: 0 success, 1 unreadable input data, 2 usage, 3 config,
4 missing or unreadable input artifact.
"""

import argparse
import json
import sys
import threading
import time
from pathlib import Path
from typing import Dict, List, Optional, Sequence

# ANSI Color Codes
NEON_BLURPLE = '\033[38;5;99m'
NEON_GREEN = '\033[38;5;46m'
NEON_CYAN = '\033[38;5;51m'
NEON_PINK = '\033[38;5;201m'
WHITE = '\033[97m'
GRAY = '\033[38;5;245m'
BLUE = '\033[38;5;75m'
YELLOW = '\033[38;5;221m'
BOLD = '\033[1m'
RESET = '\033[0m'

ARROW = '▶'
STAR = '✦'
SPARKLE = '✨'
DIV_DOUBLE = '═' * 70
DIV_SINGLE = '─' * 70

# Module imports placed after color constants for code organization
from sessionguard import __version__  # noqa: E402
from sessionguard.contrastive import ContrastiveError  # noqa: E402
from sessionguard.embedding_provider import (  # noqa: E402
    EmbeddingProvider,
    EmbeddingProviderError,
    ProviderConfigError,
    build_provider,
)
from sessionguard.eval_protocol import (  # noqa: E402
    VALID_PROTOCOLS,
    SplitError,
    SplitSpec,
    UndefinedMetricError,
    curve_points,
    fold_partitions,
    partition,
)
from sessionguard.experiments import (  # noqa: E402
    ExperimentError,
    label_efficiency_sweep,
    leakage_gap,
    window_ablation,
)
from sessionguard.feature_extractor import (  # noqa: E402
    VALID_FEATURE_MODES,
    FeatureConfigError,
    FeatureExtractionError,
    featurize_corpus,
    graph_labels,
    save_featurized,
)
from sessionguard.model_store import (  # noqa: E402
    VALID_MODEL_KINDS,
    FeatureDimensionError,
    ModelStoreError,
    load_model,
    save_model,
)
from sessionguard.neural_models import TrainingConfigError  # noqa: E402
from sessionguard.pipeline import (  # noqa: E402
    PipelineError,
    evaluate_model,
    feature_config_for,
    featurize_for_model,
    featurize_split,
    fit_model,
    split_corpus,
)
from sessionguard.run_config import (  # noqa: E402
    CONFIG_NAME,
    MissingInputError,
    RunConfig,
    RunConfigError,
    apply_overrides,
    check_paths,
    collect_run_config,
    config_digest,
    load_run_config,
    provider_config,
    save_run_config,
    ssl_config,
    sweep_settings,
    train_config,
)
from sessionguard.run_log import configure_logging, get_logger, write_event  # noqa: E402
from sessionguard.run_manifest import RunManifestError, build_manifest  # noqa: E402
from sessionguard.session_model import (  # noqa: E402
    VALID_SOURCES,
    NoToolCallsSkip,
    Session,
    SessionModelError,
    adapt_record,
    corpus_stats,
    iter_raw_records,
    merge_corpora,
    read_sessions,
    write_sessions,
)
from sessionguard.statistics import (  # noqa: E402
    StatisticsError,
    format_table,
    generate_statistics,
    write_jsonl,
)
from sessionguard.synthetic_corpus import (  # noqa: E402
    SyntheticCorpusError,
    SyntheticSpec,
    calibrated_mode_spec,
    generate_synthetic_corpus,
    leakage_prone_spec,
)


EXIT_OK = 0
EXIT_DATA = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_MISSING = 4

CORPUS_NAME = "corpus.jsonl"
INGEST_NAME = "00_ingest.json"
FEATURIZED_NAME = "01_featurized.npz"
SWEEP_NAME = "04_sweep.jsonl"
SWEEP_TABLE_NAME = "04_sweep_table.txt"
LEAKAGE_NAME = "05_leakage.json"
PER_MODE_NAME = "05_per_mode.txt"
WINDOW_NAME = "05_window.json"

SYNTHETIC_PRESETS = {
    "default": SyntheticSpec,
    "leakage_prone": leakage_prone_spec,
    "calibrated": calibrated_mode_spec,
}

CONFIG_ERRORS = (
    RunConfigError,
    FeatureConfigError,
    FeatureDimensionError,
    ProviderConfigError,
    TrainingConfigError,
    ContrastiveError,
    SplitError,
    PipelineError,
    ExperimentError,
    SyntheticCorpusError,
)


def split_name(seed: int) -> str:
    return f"01_split_seed{seed}.json"


def model_name(seed: int) -> str:
    return f"02_model_seed{seed}.pt"


def metrics_name(seed: int) -> str:
    return f"03_metrics_seed{seed}.json"


def curves_name(seed: int) -> str:
    return f"03_curves_seed{seed}.json"


class UsageError(Exception):
    """Raised when flags are individually valid but make no sense together"""
    pass


class ProgressSpinner:
    """Animated spinner for showing progress; silent when stdout is not a terminal"""
    def __init__(self, message):
        self.message = message
        self.spinner_chars = ['⠋', '⠙', '⠹', '⠸', '⠼', '⠴', '⠦', '⠧', '⠇', '⠏']
        self.idx = 0
        self.running = False
        self.thread = None
        self.enabled = sys.stdout.isatty()

    def _spin(self):
        while self.running:
            sys.stdout.write(
                f'\r{BLUE}{self.spinner_chars[self.idx]}{RESET} '
                f'{WHITE}{self.message}...{RESET}'
            )
            sys.stdout.flush()
            self.idx = (self.idx + 1) % len(self.spinner_chars)
            time.sleep(0.1)

    def start(self):
        if not self.enabled:
            return
        self.running = True
        self.thread = threading.Thread(target=self._spin, daemon=True)
        self.thread.start()

    def stop(self, final_message=None):
        self.running = False
        if self.thread:
            self.thread.join()
            sys.stdout.write('\r' + ' ' * (len(self.message) + 10) + '\r')
        if final_message:
            print(final_message)
        sys.stdout.flush()


def _paint(color: str, text: str) -> str:
    return f"{color}{text}{RESET}" if sys.stdout.isatty() else text


def _header(title: str) -> None:
    print(_paint(NEON_BLURPLE, DIV_DOUBLE))
    print(_paint(BOLD + NEON_CYAN, f"{STAR} {title}"))
    print(_paint(NEON_BLURPLE, DIV_DOUBLE))


def _ok(text: str) -> None:
    print(_paint(NEON_GREEN, f"{ARROW} {text}"))


def _fail(text: str) -> None:
    print(_paint(NEON_PINK, f"{ARROW} {text}"), file=sys.stderr)


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="run config JSON (keys as in RunConfig)")
    common.add_argument("--seed", type=int, help="run with this single seed")
    common.add_argument("--mode", choices=VALID_FEATURE_MODES, help="feature mode")
    common.add_argument("--model", choices=VALID_MODEL_KINDS, help="model kind")
    common.add_argument("--protocol", choices=VALID_PROTOCOLS, help="split protocol")
    common.add_argument("--out", help="output directory")
    common.add_argument("--corpus", help="normalized corpus file (default: <out>/corpus.jsonl)")

    parser = argparse.ArgumentParser(
        prog="sessionguard",
        description="Detect attacks in agent tool-call sessions.",
    )
    parser.add_argument("--version", action="version", version=f"sessionguard {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    ingest = sub.add_parser("ingest", parents=[common], help="normalize raw trajectories")
    ingest.add_argument("--input", action="append", type=Path, default=[], help="raw file (repeatable)")
    ingest.add_argument("--source", action="append", choices=VALID_SOURCES, default=[],
                        help="source tag, one per --input")
    ingest.add_argument("--skip-bad", action="store_true", help="skip malformed records instead of failing")
    ingest.add_argument("--synthetic", choices=sorted(SYNTHETIC_PRESETS),
                        help="generate a synthetic corpus instead of reading inputs")

    sub.add_parser("featurize", parents=[common], help="featurize the corpus")
    sub.add_parser("train", parents=[common], help="train one model per seed")
    sub.add_parser("evaluate", parents=[common], help="evaluate trained models per seed")
    sub.add_parser("sweep", parents=[common], help="label-efficiency sweep")

    report = sub.add_parser("report", parents=[common], help="leakage, per-mode and window reports")
    report.add_argument("--leakage", action="store_true", help="task-disjoint vs label-stratified gap")
    report.add_argument("--per-mode", action="store_true", help="per-attack-mode table from stats.json")
    report.add_argument("--window", action="store_true", help="prefix-window edge-count ablation")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """File values first (when --config is given), then flag overrides."""
    config = load_run_config(args.config) if args.config else collect_run_config()
    return apply_overrides(
        config,
        seeds=[args.seed] if args.seed is not None else None,
        feature_mode=args.mode,
        model=args.model,
        protocol=args.protocol,
        out_dir=args.out,
        corpus=args.corpus,
    )


def corpus_path(config: RunConfig) -> Path:
    return Path(config.corpus) if config.corpus else Path(config.out_dir) / CORPUS_NAME


def load_corpus(config: RunConfig) -> List[Session]:
    path = corpus_path(config)
    if not path.exists():
        raise MissingInputError(f"corpus not found: {path} (run ingest first or pass --corpus)")
    return read_sessions(path)


def make_provider(config: RunConfig) -> Optional[EmbeddingProvider]:
    settings = provider_config(config)
    return build_provider(settings) if settings is not None else None


def _run_id(command: str, config: RunConfig) -> str:
    return f"{command}-{config_digest(config)[:12]}"


def _write_json(path: Path, data: Dict) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, ensure_ascii=False, sort_keys=True)
    return path


def _read_json(path: Path) -> Dict:
    if not path.exists():
        raise MissingInputError(f"artifact not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _read_inputs(inputs: Sequence[Path], sources: Sequence[str], skip_bad: bool) -> Dict:
    logger = get_logger("cli")
    corpora: List[List[Session]] = []
    skipped: List[Dict] = []
    per_input = []
    for path, source in zip(inputs, sources):
        if not Path(path).exists():
            raise MissingInputError(f"input not found: {path}")
        sessions: List[Session] = []
        for line_no, record in iter_raw_records(path):
            try:
                if isinstance(record, Exception):
                    raise record
                sessions.append(adapt_record(record, source))
            except NoToolCallsSkip as e:
                skipped.append({"input": str(path), "line": line_no, "reason": f"no tool calls: {e}"})
            except SessionModelError as e:
                if not skip_bad:
                    raise SessionModelError(f"{path} line {line_no}: {e}")
                logger.warning("skipping %s line %d: %s", path, line_no, e)
                skipped.append({"input": str(path), "line": line_no, "reason": str(e)})
        corpora.append(sessions)
        per_input.append({"path": str(path), "source": source, "n_sessions": len(sessions)})
    merged = corpora[0] if len(corpora) == 1 else merge_corpora(corpora)
    return {"sessions": merged, "skipped": skipped, "per_input": per_input}


def cmd_ingest(args: argparse.Namespace, config: RunConfig) -> int:
    out_dir = Path(config.out_dir)
    run_id = _run_id("ingest", config)
    logger = get_logger("cli", run_id)
    _header("Ingest")

    if not args.input:
        check_paths(config, need_corpus=False)
    inputs = list(args.input) or [Path(d["path"]) for d in config.datasets]
    sources = list(args.source) or [d["source"] for d in config.datasets]
    if args.synthetic:
        if inputs:
            raise UsageError("--synthetic cannot be combined with --input")
        spec = SYNTHETIC_PRESETS[args.synthetic]()
        sessions = generate_synthetic_corpus(spec, seed=config.seeds[0])
        result = {"sessions": sessions, "skipped": [], "per_input": [
            {"synthetic": args.synthetic, "spec": spec.to_dict(), "seed": config.seeds[0],
             "n_sessions": len(sessions)}
        ]}
    else:
        if not inputs:
            raise UsageError("ingest needs --input/--source pairs, datasets in the config, or --synthetic")
        if len(inputs) != len(sources):
            raise UsageError(f"got {len(inputs)} --input but {len(sources)} --source values")
        result = _read_inputs(inputs, sources, args.skip_bad)

    sessions = result["sessions"]
    target = corpus_path(config)
    written = write_sessions(target, sessions)
    stats = corpus_stats(sessions).to_dict()
    _write_json(out_dir / INGEST_NAME, {
        "corpus": str(target),
        "n_written": written,
        "n_skipped": len(result["skipped"]),
        "skipped": result["skipped"],
        "inputs": result["per_input"],
        "stats": stats,
    })
    write_event(out_dir, {"event": "ingest", "n_written": written, "n_skipped": len(result["skipped"])}, run_id)
    logger.info("wrote %d sessions to %s", written, target)

    _ok(f"{written} sessions written to {target}")
    print(_paint(GRAY, f"  skipped: {len(result['skipped'])}"))
    print(f"  benign: {stats['by_label']['benign']}  attack: {stats['by_label']['attack']}"
          f"  tasks: {stats['n_tasks']}  tools: {stats['n_tools']}")
    for mode, count in stats["by_attack_mode"].items():
        print(f"  mode {mode}: {count}")
    return EXIT_OK


def cmd_featurize(args: argparse.Namespace, config: RunConfig) -> int:
    out_dir = Path(config.out_dir)
    run_id = _run_id("featurize", config)
    sessions = load_corpus(config)
    provider = make_provider(config)
    _header("Featurize")

    # Vocabulary from the training part of the first seed's split, as train sees it
    seed = config.seeds[0]
    spec = split_corpus(sessions, config.protocol, seed)
    if spec.is_kfold:
        spec = fold_partitions(spec, sessions, 0)
    train_part, _, _ = partition(spec, sessions)
    feature_config = feature_config_for(train_part, config.feature_mode, provider)
    spinner = ProgressSpinner(f"Featurizing {len(sessions)} sessions")
    spinner.start()
    try:
        graphs = featurize_corpus(sessions, feature_config, provider, config.prefix_window)
    finally:
        spinner.stop()
    path = save_featurized(out_dir / FEATURIZED_NAME, graphs, feature_config)
    write_event(out_dir, {"event": "featurize", "mode": config.feature_mode, "n_graphs": len(graphs),
                          "node_dim": feature_config.node_dim, "vocab_seed": seed,
                          "n_tools": feature_config.vocab.n_tools}, run_id)
    _ok(f"{len(graphs)} graphs, node dim {feature_config.node_dim} -> {path}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace, config: RunConfig) -> int:
    out_dir = Path(config.out_dir)
    run_id = _run_id("train", config)
    logger = get_logger("cli", run_id)
    if config.protocol in ("kfold_task", "kfold_label"):
        raise RunConfigError(f"train needs a train/val/test protocol, got: {config.protocol} (use sweep)")
    sessions = load_corpus(config)
    provider = make_provider(config)
    _header(f"Train {config.model} ({config.feature_mode}, {config.protocol})")

    save_run_config(config, out_dir / CONFIG_NAME)
    produced = [CONFIG_NAME]
    for seed in config.seeds:
        spec = split_corpus(sessions, config.protocol, seed)
        _write_json(out_dir / split_name(seed), spec.to_dict())
        split = featurize_split(sessions, spec, config.feature_mode, provider, config.prefix_window)
        spinner = ProgressSpinner(f"Training {config.model} seed {seed}")
        spinner.start()
        try:
            model = fit_model(config.model, split, seed, train_config(config, seed), ssl_config(config))
        finally:
            spinner.stop()
        save_model(model, out_dir / model_name(seed))
        produced += [split_name(seed), model_name(seed)]
        write_event(out_dir, {"event": "train", "seed": seed, "model": config.model,
                              "n_train": len(split.train), "n_features": model.n_features}, run_id)
        logger.info("seed %d: trained %s on %d sessions", seed, config.model, len(split.train))
        _ok(f"seed {seed}: {model_name(seed)}")

    manifest = build_manifest(out_dir, "train", config_digest(config), config.seeds,
                              inputs=[corpus_path(config)], required=produced)
    _ok(f"manifest {manifest['status']}")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace, config: RunConfig) -> int:
    out_dir = Path(config.out_dir)
    run_id = _run_id("evaluate", config)
    sessions = load_corpus(config)
    provider = make_provider(config)
    _header("Evaluate")

    rows = []
    produced = []
    for seed in config.seeds:
        model_path = out_dir / model_name(seed)
        if not model_path.exists():
            raise MissingInputError(f"model artifact not found: {model_path}")
        spec = SplitSpec.from_dict(_read_json(out_dir / split_name(seed)))
        model = load_model(model_path)
        _, _, test = partition(spec, sessions)
        graphs = featurize_for_model(test, model, provider, config.prefix_window)
        report, scores = evaluate_model(model, graphs, seed=seed, protocol=spec.protocol.value)
        _write_json(out_dir / metrics_name(seed), report.to_dict())
        produced.append(metrics_name(seed))
        try:
            _write_json(out_dir / curves_name(seed), curve_points(scores, graph_labels(graphs)))
            produced.append(curves_name(seed))
        except UndefinedMetricError:
            get_logger("cli", run_id).warning("seed %d: curves undefined on a single-class test part", seed)
        write_event(out_dir, {"event": "evaluate", "seed": seed, "auroc": report.auroc, "n": report.n}, run_id)
        rows.append({"seed": seed, **report.to_dict()})

    stats = generate_statistics(out_dir, config.seeds)
    rows.append({"seed": "mean±sd", **{k: stats[k] for k in ("auroc", "auprc", "macro_f1", "precision",
                                                           "recall", "fpr")}})
    print(_paint(GRAY, DIV_SINGLE))
    print(format_table(rows, ["seed", "auroc", "auprc", "macro_f1", "precision", "recall", "fpr"]))
    manifest = build_manifest(out_dir, "evaluate", config_digest(config), config.seeds,
                              inputs=[corpus_path(config)] + [out_dir / model_name(s) for s in config.seeds],
                              required=produced + ["stats.json"])
    print(_paint(NEON_GREEN, f"{SPARKLE} stats.json written; manifest {manifest['status']}"))
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace, config: RunConfig) -> int:
    out_dir = Path(config.out_dir)
    run_id = _run_id("sweep", config)
    sessions = load_corpus(config)
    provider = make_provider(config)
    settings = sweep_settings(config)
    seed = config.seeds[0]
    _header(f"Label-efficiency sweep ({settings['folds']} folds, seed {seed})")

    spinner = ProgressSpinner("Sweeping label fractions")
    spinner.start()
    try:
        result = label_efficiency_sweep(
            sessions, config.feature_mode, provider,
            fractions=settings["fractions"], folds=settings["folds"], methods=settings["methods"],
            seed=seed, train_config=train_config(config, seed), ssl_config=ssl_config(config),
        )
    finally:
        spinner.stop()
    write_jsonl(out_dir / SWEEP_NAME, result["cells"])
    flagged = sum(1 for c in result["cells"] if c["flag"])
    if flagged:
        print(_paint(YELLOW, f"{ARROW} {flagged} cells flagged (see {SWEEP_NAME})"))
    table = format_table(
        result["summary"],
        ["method", "fraction", "auroc", "n_folds", "n_flagged", "fraction_of_full"],
        ["method", "labels", "auroc", "folds", "flagged", "of_full"],
    )
    (out_dir / SWEEP_TABLE_NAME).write_text(table + "\n", encoding="utf-8")
    print(table)
    write_event(out_dir, {"event": "sweep", "n_cells": len(result["cells"])}, run_id)
    build_manifest(out_dir, "sweep", config_digest(config), [seed], inputs=[corpus_path(config)],
                   required=[SWEEP_NAME, SWEEP_TABLE_NAME])
    return EXIT_OK


def cmd_report(args: argparse.Namespace, config: RunConfig) -> int:
    if not (args.leakage or args.per_mode or args.window):
        raise UsageError("report needs at least one of --leakage, --per-mode, --window")
    out_dir = Path(config.out_dir)
    run_id = _run_id("report", config)
    produced = []

    if args.per_mode:
        _header("Per-mode detection")
        stats = _read_json(out_dir / "stats.json")
        rows = [{"mode": mode, **values} for mode, values in stats.get("per_mode", {}).items()]
        table = format_table(rows, ["mode", "n_total", "recall", "auroc"])
        (out_dir / PER_MODE_NAME).write_text(table + "\n", encoding="utf-8")
        produced.append(PER_MODE_NAME)
        print(table)

    if args.leakage or args.window:
        sessions = load_corpus(config)

    if args.leakage:
        _header(f"Leakage gap ({config.model}, {config.feature_mode})")
        spinner = ProgressSpinner("Training under both protocols")
        spinner.start()
        try:
            result = leakage_gap(sessions, config.model, config.feature_mode, config.seeds,
                                 make_provider(config), train_config(config))
        finally:
            spinner.stop()
        _write_json(out_dir / LEAKAGE_NAME, result)
        produced.append(LEAKAGE_NAME)
        print(format_table(
            [{"model": result["model"], "mode": result["mode"], "task": result["task_stratified"],
              "random": result["label_stratified"], "gap": result["gap"]}],
            ["model", "mode", "task", "random", "gap"],
            ["model", "mode", "task_disjoint", "label_stratified", "gap"],
        ))

    if args.window:
        _header("Prefix-window ablation")
        result = window_ablation(sessions)
        _write_json(out_dir / WINDOW_NAME, result)
        produced.append(WINDOW_NAME)
        columns = [k for k in result["rows"][0] if k != "n_graphs"] if result["rows"] else ["window"]
        print(format_table(result["rows"], columns))
        print(f"  identical edge counts: {'yes' if result['identical_edge_counts'] else 'no'}")

    write_event(out_dir, {"event": "report", "outputs": produced}, run_id)
    return EXIT_OK


COMMANDS = {
    "ingest": cmd_ingest,
    "featurize": cmd_featurize,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "report": cmd_report,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Parse, dispatch and map failures onto the exit-code contract."""
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging()
    try:
        config = resolve_config(args)
        return COMMANDS[args.command](args, config)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        _fail(f"usage error: {e}")
        return EXIT_USAGE
    except (MissingInputError, RunManifestError, StatisticsError) as e:
        _fail(f"missing input: {e}")
        return EXIT_MISSING
    except CONFIG_ERRORS as e:
        _fail(f"config error: {e}")
        return EXIT_CONFIG
    except ModelStoreError as e:
        _fail(f"unreadable artifact: {e}")
        return EXIT_MISSING
    except (SessionModelError, FeatureExtractionError, EmbeddingProviderError) as e:
        _fail(f"input error: {e}")
        return EXIT_DATA
    except KeyboardInterrupt:
        _fail("interrupted")
        return 130


def run_cli():
    """Entry point for CLI"""
    sys.exit(main())


if __name__ == "__main__":
    run_cli()
