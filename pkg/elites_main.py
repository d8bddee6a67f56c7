# elites_main.py: single entry point: reference store, runs, analyses, corpus
import argparse
import difflib
import logging
import re
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from core.engine import Engine
from core.evaluation import MockEvaluator
from core.features import SPECTRAL_NAMES
from core.refdb import KnnParams, ingest, load_store, save_store
from modules.analysis import (
    compare,
    dataset_projection_coverage,
    goal_switch_table,
    rank_features,
    read_elites,
    read_metrics,
    remap_projector,
    remap_to_manual,
    write_rows_csv,
)
from modules.plots import write_heatmap_png, write_metric_charts
from modules.synthetic_corpus import FAMILIES, synth_corpus
from utils.config import config_from_dict, env_log_level, load_config
from utils.errors import ElitesError, UsageError
from utils.manifest import load_manifest
from utils.run_logger import setup_logging

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


# ---------- parser ----------

class ElitesArgumentParser(argparse.ArgumentParser):
    """argparse with usage errors raised (exit code 1) and a close-match hint."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}{_suggestion(self, message)}")


def _known_words(parser: argparse.ArgumentParser) -> List[str]:
    words = []
    for action in parser._actions:
        words.extend(action.option_strings)
        if isinstance(action, argparse._SubParsersAction):
            for name, sub in action.choices.items():
                words.append(name)
                words.extend(_known_words(sub))
    return words


def _suggestion(parser: argparse.ArgumentParser, message: str) -> str:
    bad = re.findall(r"invalid choice: '([^']+)'", message)
    if not bad:
        unrecognized = re.search(r"unrecognized arguments: (.+)$", message)
        bad = unrecognized.group(1).split() if unrecognized else []
    for word in bad:
        match = difflib.get_close_matches(word, _known_words(parser), n=1)
        if match:
            return f" (did you mean '{match[0]}'?)"
    return ""


def _bd_pair(value: str):
    names = [v.strip() for v in value.split(",") if v.strip()]
    if len(names) != 2:
        raise argparse.ArgumentTypeError(f"expected two comma-separated feature names, got '{value}'")
    for name in names:
        if name not in SPECTRAL_NAMES:
            close = difflib.get_close_matches(name, SPECTRAL_NAMES, n=1)
            hint = f" (did you mean '{close[0]}'?)" if close else ""
            raise argparse.ArgumentTypeError(f"unknown spectral feature '{name}'{hint}")
    return names[0], names[1]


def build_parser() -> ElitesArgumentParser:
    parser = ElitesArgumentParser(prog="elites", description="Quality-diversity sound discovery.")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING (default: ELITES_LOG_LEVEL or INFO)")
    commands = parser.add_subparsers(dest="command", metavar="command")
    commands.required = True

    # refdb
    refdb = commands.add_parser("refdb", help="reference store management")
    refdb_cmds = refdb.add_subparsers(dest="refdb_command", metavar="action")
    refdb_cmds.required = True
    p = refdb_cmds.add_parser("ingest", help="extract features from a WAV directory and build the store")
    p.add_argument("dir", help="directory scanned recursively for .wav files")
    p.add_argument("--out", required=True, help="store output directory")
    p.add_argument("--m", type=int, default=KnnParams.m)
    p.add_argument("--ef-construction", type=int, default=KnnParams.ef_construction)
    p.add_argument("--ef-search", type=int, default=KnnParams.ef_search)
    p.add_argument("--knn-seed", type=int, default=KnnParams.seed)

    # run / resume
    p = commands.add_parser("run", help="start a run from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--output-dir", default=None, help="overrides [run] output_dir")
    p.add_argument("--until", type=int, default=None, help="stop after this generation (checkpoint written)")
    p.add_argument("--mock", action="store_true", help="hash-derived features and fitness, no audio")

    p = commands.add_parser("resume", help="continue a run from a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--until", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--mock", action="store_true")

    # analyze
    analyze = commands.add_parser("analyze", help="post-run analyses")
    an = analyze.add_subparsers(dest="analyze_command", metavar="analysis")
    an.required = True
    p = an.add_parser("metrics", help="final metrics and line charts")
    p.add_argument("run_dir")
    p = an.add_parser("remap", help="project final elites into a manual behaviour space")
    p.add_argument("run_dir")
    p.add_argument("--bd", type=_bd_pair, required=True, help="e.g. slope,rolloff")
    p.add_argument("--grid", type=int, default=None, help="manual grid size (default: run grid size)")
    p.add_argument("--refdb", default=None, help="calibrate on this store (default: the run's refdb, else the elites)")
    p = an.add_parser("rank-features", help="rank spectral features of a reference store")
    p.add_argument("store")
    p.add_argument("--lam", type=float, default=0.5, help="correlation penalty weight")
    p.add_argument("--out", default=None)
    p = an.add_parser("dataset-coverage", help="coverage of a store projected into a manual space")
    p.add_argument("store")
    p.add_argument("--bd", type=_bd_pair, required=True)
    p.add_argument("--grid", type=int, default=100)
    p = an.add_parser("goal-switches", help="per-cell new elites and cross-cell descendants")
    p.add_argument("run_dir")
    p = an.add_parser("compare", help="mean/std of final metrics per configuration label")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--out", default=None)

    # corpus
    corpus = commands.add_parser("corpus", help="synthetic reference corpus")
    cc = corpus.add_subparsers(dest="corpus_command", metavar="action")
    cc.required = True
    p = cc.add_parser("synth", help=f"write seeded {', '.join(FAMILIES)} sounds")
    p.add_argument("dir")
    p.add_argument("--count", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--duration", type=float, default=4.0)
    p.add_argument("--sample-rate", type=int, default=16000)
    return parser


# ---------- commands ----------

def cmd_refdb_ingest(args) -> int:
    knn = KnnParams(args.m, args.ef_construction, args.ef_search, args.knn_seed)
    store = ingest(args.dir, knn=knn)
    out = save_store(store, args.out)
    print(f"store: {out} ({store.size} sounds, {len(store.skipped)} skipped)")
    return EXIT_OK


def _store_for(config):
    return load_store(config.fitness.refdb) if config.fitness.refdb else None


def _print_report(report):
    print(f"generations: {report.generations}  evaluations: {report.evaluations}  invalid: {report.invalid}")
    print(f"coverage: {report.coverage:.4f}  diversity: {report.diversity:.4f}  "
          f"grid mean fitness: {report.grid_mean_fitness:.4f}  goal switches: {report.goal_switches}")
    if report.run_dir is not None:
        print(f"run dir: {report.run_dir}")


def cmd_run(args) -> int:
    config = load_config(args.config)
    overrides = {}
    if args.workers is not None:
        overrides["workers"] = args.workers
    if args.output_dir is not None:
        overrides["output_dir"] = args.output_dir
    if overrides:
        config = config.with_overrides(run=overrides)
    evaluator = MockEvaluator(config.run.seed) if args.mock else None
    engine = Engine(config, _store_for(config), evaluator)
    _print_report(engine.run(args.until))
    return EXIT_OK


def cmd_resume(args) -> int:
    evaluator = MockEvaluator() if args.mock else None
    engine = Engine.from_checkpoint(args.checkpoint, evaluator=evaluator, workers=args.workers)
    if args.mock:
        evaluator.seed = engine.config.run.seed
    _print_report(engine.run(args.until))
    return EXIT_OK


def _analysis_dir(run_dir) -> Path:
    out = Path(run_dir) / "analysis"
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_analyze_metrics(args) -> int:
    metrics = read_metrics(args.run_dir)
    if not metrics:
        raise ElitesError(f"{args.run_dir}/metrics.csv has no rows")
    retrains = [row["generation"] for row in metrics if row["retrained"]]
    charts = write_metric_charts(metrics, _analysis_dir(args.run_dir), retrains)
    last = metrics[-1]
    for key, value in last.items():
        print(f"{key}: {value}")
    print(f"charts: {', '.join(str(p) for p in charts.values())}")
    return EXIT_OK


def cmd_analyze_remap(args) -> int:
    fx, fy = args.bd
    grid_size, elites = read_elites(args.run_dir)
    config = config_from_dict(load_manifest(args.run_dir)["config"])
    projector = remap_projector(args.run_dir, config, fx, fy, elites, args.refdb)
    manual_grid = args.grid or grid_size
    result = remap_to_manual(elites, projector, manual_grid,
                             (config.render.duration, config.render.sample_rate, config.render.pitch),
                             native_grid_size=grid_size)

    out = _analysis_dir(args.run_dir)
    name = f"remap_{fx}_{fy}"
    rows = [{"row": r, "col": c, "count": int(result.counts[r, c])}
            for r, c in zip(*np.nonzero(result.counts))]
    write_rows_csv(out / f"{name}.csv", rows)
    grid = np.where(result.counts > 0, result.counts, np.nan).astype(np.float64)
    write_heatmap_png(grid, out / f"{name}.png")
    write_rows_csv(out / f"{name}_coverage.csv", [{
        "space": f"{fx},{fy}", "native_coverage": result.native_coverage,
        "remapped_coverage": result.coverage, "skipped": result.skipped,
    }])
    print(f"native coverage: {result.native_coverage:.4f}  remapped coverage ({fx},{fy}): {result.coverage:.4f}")
    return EXIT_OK


def cmd_analyze_rank(args) -> int:
    store = load_store(args.store)
    ranks = rank_features(store.spectral, lam=args.lam)
    out = Path(args.out) if args.out else Path(args.store) / "feature_ranking.csv"
    write_rows_csv(out, [{"feature": r.name, "variance": r.variance, "max_abs_corr": r.max_abs_corr,
                          "score": r.score, "lambda": args.lam} for r in ranks])
    for i, r in enumerate(ranks, 1):
        print(f"{i:2d}. {r.name:<10} variance {r.variance:.4f}  max|corr| {r.max_abs_corr:.4f}  score {r.score:.4f}")
    return EXIT_OK


def cmd_analyze_dataset_coverage(args) -> int:
    fx, fy = args.bd
    store = load_store(args.store)
    cov, density = dataset_projection_coverage(store, fx, fy, args.grid)
    path = Path(args.store) / f"dataset_coverage_{fx}_{fy}.png"
    write_heatmap_png(np.where(density > 0, density, np.nan).astype(np.float64), path)
    print(f"dataset coverage ({fx},{fy}) on {args.grid}x{args.grid}: {cov:.4f}")
    return EXIT_OK


def cmd_analyze_goal_switches(args) -> int:
    rows = goal_switch_table(args.run_dir)
    out = _analysis_dir(args.run_dir)
    write_rows_csv(out / "goal_switches.csv", rows)
    grid_size, _ = read_elites(args.run_dir)
    grid = np.full((grid_size, grid_size), np.nan)
    for row in rows:
        if row["cross_cell"]:
            grid[row["row"], row["col"]] = row["cross_cell"]
    write_heatmap_png(grid, out / "goal_switches.png")
    print(f"cells: {len(rows)}  goal switches: {sum(r['cross_cell'] for r in rows)}")
    return EXIT_OK


def cmd_analyze_compare(args) -> int:
    rows = compare(args.run_dirs)
    if args.out:
        write_rows_csv(args.out, rows)
    for row in rows:
        print(", ".join(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items()))
    return EXIT_OK


def cmd_corpus_synth(args) -> int:
    paths = synth_corpus(args.dir, args.count, args.seed, args.duration, args.sample_rate)
    print(f"{len(paths)} sounds written to {args.dir}")
    return EXIT_OK


HANDLERS = {
    ("refdb", "ingest"): cmd_refdb_ingest,
    ("run", None): cmd_run,
    ("resume", None): cmd_resume,
    ("analyze", "metrics"): cmd_analyze_metrics,
    ("analyze", "remap"): cmd_analyze_remap,
    ("analyze", "rank-features"): cmd_analyze_rank,
    ("analyze", "dataset-coverage"): cmd_analyze_dataset_coverage,
    ("analyze", "goal-switches"): cmd_analyze_goal_switches,
    ("analyze", "compare"): cmd_analyze_compare,
    ("corpus", "synth"): cmd_corpus_synth,
}


# ---------- dispatch ----------

def dispatch(argv: Optional[Sequence[str]] = None) -> int:
    """Exit codes: 0 success, 1 usage error, 2 runtime error."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:
        # --help
        return int(e.code or 0)

    setup_logging(args.log_level or env_log_level())
    sub = getattr(args, f"{args.command}_command", None)
    handler = HANDLERS[(args.command, sub)]
    try:
        return handler(args)
    except ElitesError as e:
        logging.error(f"[CLI] {type(e).__name__}: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as e:
        logging.error(f"[CLI] {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(dispatch())
