# scripts/desk_acceptance.py: desk-scale directional comparison across regimes
"""
Runs five configurations (manual BD, static PCA, dynamic PCA, dynamic PCA
with multi-reference fitness, dynamic PCA with reference-free fitness) for
several seeds on a synthetic reference corpus and checks the expected
orderings and thresholds of the final metrics on the mean over repeats:

  diversity(PCA)             > 1.5 x diversity(manual)
  goal switches(dynamic PCA) > 2 x goal switches(static PCA)
  coverage(static PCA)       > coverage(dynamic PCA)
  diversity(multi-ref k=15)  > diversity(single-ref)
  diversity(ref-free)        > 0
  coverage(ref-free)         > 0.05

Usage: python3 scripts/desk_acceptance.py [--repeats 3] [--workers N] [--out runs/acceptance]
"""
import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from core.engine import Engine  # noqa: E402
from core.refdb import ingest, load_store, save_store  # noqa: E402
from modules.analysis import compare, write_rows_csv  # noqa: E402
from modules.synthetic_corpus import synth_corpus  # noqa: E402
from utils.config import load_config  # noqa: E402
from utils.run_logger import setup_logging  # noqa: E402

CONFIGS = {
    "manual": {"projection": {"regime": "manual"}, "fitness": {"regime": "single_ref"}},
    "pca_static": {"projection": {"regime": "pca_static"}, "fitness": {"regime": "single_ref"}},
    "pca_dynamic": {"projection": {"regime": "pca_dynamic"}, "fitness": {"regime": "single_ref"}},
    "pca_dynamic_multi": {"projection": {"regime": "pca_dynamic"}, "fitness": {"regime": "multi_ref", "k": 15}},
    "ref_free": {"projection": {"regime": "pca_dynamic"}, "fitness": {"regime": "ref_free"}},
}

REF_FREE_MIN_COVERAGE = 0.05


def prepare_store(root: Path, count: int, duration: float):
    store_dir = root / "refdb"
    if (store_dir / "manifest.json").is_file():
        return load_store(store_dir), store_dir
    corpus = root / "corpus"
    if not corpus.is_dir():
        synth_corpus(corpus, count, seed=0, duration=duration)
    store = ingest(corpus)
    save_store(store, store_dir)
    return store, store_dir


def run_all(args) -> dict:
    root = Path(args.out)
    root.mkdir(parents=True, exist_ok=True)
    base = load_config(args.config)
    store, store_dir = prepare_store(root, args.corpus_size, base.render.duration)

    finals = {}
    for label, sections in CONFIGS.items():
        finals[label] = []
        for repeat in range(args.repeats):
            overrides = {k: dict(v) for k, v in sections.items()}
            overrides["run"] = {"seed": repeat, "label": label, "output_dir": str(root / f"{label}_r{repeat}"),
                                "workers": args.workers or base.run.workers}
            refs = overrides["fitness"]["regime"] != "ref_free"
            if refs:
                overrides["fitness"].update({"refdb": str(store_dir), "reference_id": store.ids[0]})
            config = base.with_overrides(**overrides)
            started = time.time()
            report = Engine(config, store if refs else None).run()
            logging.info(f"[Acceptance] {label} repeat {repeat}: coverage {report.coverage:.4f}, "
                         f"diversity {report.diversity:.4f}, goal switches {report.goal_switches} "
                         f"({time.time() - started:.0f}s)")
            finals[label].append(report)
    return finals


def check(finals: dict) -> bool:
    def mean(label, key):
        return float(np.mean([getattr(r, key) for r in finals[label]]))

    pca_div = np.mean([mean("pca_static", "diversity"), mean("pca_dynamic", "diversity")])
    checks = [
        ("diversity(PCA) > 1.5 x diversity(manual)", pca_div, 1.5 * mean("manual", "diversity")),
        ("goal switches(dynamic) > 2 x goal switches(static)",
         mean("pca_dynamic", "goal_switches"), 2 * mean("pca_static", "goal_switches")),
        ("coverage(static) > coverage(dynamic)", mean("pca_static", "coverage"), mean("pca_dynamic", "coverage")),
        ("diversity(multi-ref) > diversity(single-ref)",
         mean("pca_dynamic_multi", "diversity"), mean("pca_dynamic", "diversity")),
        ("diversity(ref-free) > 0", mean("ref_free", "diversity"), 0.0),
        ("coverage(ref-free) > 0.05", mean("ref_free", "coverage"), REF_FREE_MIN_COVERAGE),
    ]
    ok = True
    for name, lhs, rhs in checks:
        passed = lhs > rhs
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'}  {name}: {lhs:.4f} vs {rhs:.4f}")
    return ok


def main():
    parser = argparse.ArgumentParser(description="Desk-scale directional comparison")
    parser.add_argument("--config", default="data/desk_run.cfg")
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--workers", type=int, default=0)
    parser.add_argument("--corpus-size", type=int, default=500)
    parser.add_argument("--out", default="runs/acceptance")
    args = parser.parse_args()
    setup_logging("INFO")

    finals = run_all(args)
    run_dirs = [r.run_dir for reports in finals.values() for r in reports]
    write_rows_csv(Path(args.out) / "comparison.csv", compare(run_dirs))
    sys.exit(0 if check(finals) else 1)


if __name__ == "__main__":
    main()
