"""
Command-line entry point

    python -m src.cli ingest --config run.json
    python -m src.cli train  --config run.json [--mode o_dbtm] [--no-meta] [--fresh] [--seed N]
    python -m src.cli eval   --config run.json [--same-slice]
    python -m src.cli report --config run.json --brand NAME

Exit codes: 0 success, 1 internal failure, 2 usage or input error.
"""

import argparse
import dataclasses
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor, as_completed
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import pandas as pd

from src.analyst.evaluation import (ground_truth_rating, metric_report, ranking_correlation, topic_coherence,
                                    topic_npmi, topic_uniqueness, write_metric_report)
from src.analyst.timeseries import plot_rating_series, rating_time_series
from src.analyst.topics import save_topic_table, topic_top_words
from src.config import RunConfig, load_echo
from src.corpus.run import ingest_corpus, load_ingested
from src.corpus.slicing import vectorize
from src.errors import CorpusError
from src.model.btm import topic_means
from src.model.dynamics import TrainedTimeline, load_timeline, timing_frame, train_stream

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

TRAIN_DIR = "train"
EVAL_DIR = "eval"
REPORT_DIR = "report"
EVAL_WORKERS = 4

LOG = logging.getLogger(__name__)


def _apply_overrides(config: RunConfig, args: argparse.Namespace) -> RunConfig:
    changes = {}
    if getattr(args, "mode", None):
        changes["mode"] = args.mode
    if getattr(args, "no_meta", False):
        changes["no_meta"] = True
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "same_slice", False):
        changes["same_slice"] = True
    return dataclasses.replace(config, **changes) if changes else config


def cmd_ingest(config: RunConfig, args: argparse.Namespace) -> int:
    ingest_corpus(config)
    return EXIT_OK


def cmd_train(config: RunConfig, args: argparse.Namespace) -> int:
    ingested = load_ingested(config.output_dir, ngram_max=config.ngram_max)
    run_dir = Path(config.output_dir) / TRAIN_DIR
    config.write_echo(run_dir)
    timeline = train_stream(ingested.slices, ingested.vocab, config, splits=ingested.splits,
                            run_dir=run_dir, fresh=args.fresh)
    timing_frame(timeline).to_csv(run_dir / "timing.csv", index=False, float_format="%.3f")

    print(f"\n{'=' * 60}")
    print("Training summary")
    print(f"{'=' * 60}")
    for result in timeline.slices:
        print(f"  ✓ slice {result.slice_id:02d}: {result.steps} steps, {result.wall_clock:.1f}s")
    if timeline.failure is not None:
        print(f"  ✗ slice {timeline.failure['slice_id']:02d}: {timeline.failure['message']}")
        return EXIT_FAILURE
    print(f"\n✓ {len(timeline)} slice(s) saved to {run_dir}")
    return EXIT_OK


def _load_run(config: RunConfig) -> TrainedTimeline:
    run_dir = Path(config.output_dir) / TRAIN_DIR
    trained = load_echo(run_dir)
    if trained is None:
        raise FileNotFoundError(f"No trained run in {run_dir}; run train first")
    changed = config.changed_fields(trained)
    if changed:
        LOG.warning("%s was trained with a different config (%s); using the trained model as stored",
                    run_dir, ", ".join(changed))
    timeline = load_timeline(run_dir, trained.digest())
    if not timeline.slices:
        raise FileNotFoundError(f"No trained slices in {run_dir}; run train first")
    return timeline


def _evaluate_slice(result, ingested, config: RunConfig, out_dir: Path) -> Tuple[Optional[dict], str]:
    """Topic tables, coherence, uniqueness and ranking for one trained slice."""
    t = result.slice_id
    beta, eta = topic_means(result.state)
    table = topic_top_words(beta, eta, config.polarity_grid, config.top_n)
    save_topic_table(table, ingested.vocab, out_dir, f"topics_slice_{t:02d}")
    topics = table.neutral_topics()
    coherence_fn = topic_coherence if config.coherence == "log_conditional" else topic_npmi
    coherence, _, _ = coherence_fn(topics, vectorize(ingested.splits[t][0], ingested.vocab))
    uniqueness = topic_uniqueness(topics)

    if config.same_slice:
        target = ingested.splits[t][1]
    elif t + 1 < len(ingested.slices):
        target = ingested.slices[t + 1]
    else:
        return None, f"  ○ slice {t:02d}: no successor slice, not ranked"
    truth = ground_truth_rating(target)
    corr, p_value = float("nan"), float("nan")
    if len(truth) >= 2:
        corr, p_value = ranking_correlation(result.scores["raw"], truth, config.p_value_method)
        message = f"  ✓ slice {t:02d}: corr={corr:.3f} p={p_value:.3g} coh={coherence:.3f} uni={uniqueness:.3f}"
    else:
        message = f"  ○ slice {t:02d}: fewer than 2 brands to rank, marked NA"
    return {"slice": t, "corr": corr, "p_value": p_value, "coherence": coherence, "uniqueness": uniqueness}, message


def cmd_eval(config: RunConfig, args: argparse.Namespace) -> int:
    """Score every trained slice; slices are evaluated concurrently and reported in slice order."""
    ingested = load_ingested(config.output_dir, ngram_max=config.ngram_max)
    timeline = _load_run(config)
    out_dir = Path(config.output_dir) / EVAL_DIR
    config.write_echo(out_dir)

    print(f"\n{'=' * 60}")
    print(f"Evaluating {len(timeline)} slice(s) ({'same slice' if config.same_slice else 'next slice'})")
    print(f"{'=' * 60}")
    outcomes = {}
    with ThreadPoolExecutor(max_workers=EVAL_WORKERS) as executor:
        futures = {executor.submit(_evaluate_slice, result, ingested, config, out_dir): result.slice_id
                   for result in timeline.slices}
        for future in as_completed(futures):
            outcomes[futures[future]] = future.result()
    rows = []
    for t in sorted(outcomes):
        row, message = outcomes[t]
        print(message)
        if row is not None:
            rows.append(row)

    report = metric_report(rows)
    paths = write_metric_report(report, out_dir)
    series = pd.concat([rating_time_series(timeline, brand, _slice_truths(ingested)).assign(brand=brand)
                        for brand in timeline.brand_names], ignore_index=True)
    series.to_csv(out_dir / "rating_series.csv", index=False, float_format="%.6f", na_rep="NA")
    print(f"\n{report.round(3).to_string()}")
    print(f"\n✓ Metrics written to {paths['csv']}")
    return EXIT_OK


def _slice_truths(ingested) -> List[pd.Series]:
    return [ground_truth_rating(corpus) for corpus in ingested.slices]


def cmd_report(config: RunConfig, args: argparse.Namespace) -> int:
    if not args.brand:
        raise ValueError("report needs --brand")
    ingested = load_ingested(config.output_dir, ngram_max=config.ngram_max)
    timeline = _load_run(config)
    series = rating_time_series(timeline, args.brand, _slice_truths(ingested))

    out_dir = Path(config.output_dir) / REPORT_DIR
    out_dir.mkdir(parents=True, exist_ok=True)
    safe = "".join(c if c.isalnum() or c in "_-" else "_" for c in args.brand)
    series.to_csv(out_dir / f"{safe}_series.csv", index=False, float_format="%.6f", na_rep="NA")
    plot_rating_series(series, args.brand, out_dir / f"{safe}_series.png")
    for result in timeline.slices:
        beta, eta = topic_means(result.state)
        table = topic_top_words(beta, eta, config.polarity_grid, config.top_n)
        save_topic_table(table, ingested.vocab, out_dir, f"topics_slice_{result.slice_id:02d}")
    print(f"✓ Report for {args.brand} written to {out_dir}")
    return EXIT_OK


COMMANDS = {"ingest": cmd_ingest, "train": cmd_train, "eval": cmd_eval, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Dynamic brand-topic modelling of timestamped reviews")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="Path to the JSON/YAML run config")
        p.add_argument("--seed", type=int, default=None, help="Override the config seed")
        if name == "train":
            p.add_argument("--mode", choices=["dbtm", "o_dbtm"], default=None)
            p.add_argument("--no-meta", action="store_true", help="Disable the meta-learned beta initialisation")
            p.add_argument("--fresh", action="store_true", help="Ignore completed slices and retrain")
        if name == "eval":
            p.add_argument("--same-slice", action="store_true", help="Evaluate on in-slice validation data")
        if name == "report":
            p.add_argument("--brand", default=None, help="Brand to report on")
    return parser


def _fail(code: int, error: BaseException) -> int:
    print(f"✗ {error}", file=sys.stderr)
    print(json.dumps({"error": type(error).__name__, "message": str(error)}), file=sys.stderr)
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        config = _apply_overrides(RunConfig.load(args.config), args)
        return COMMANDS[args.command](config, args)
    except (FileNotFoundError, CorpusError, ValueError) as e:
        return _fail(EXIT_USAGE, e)
    except Exception as e:  # noqa: BLE001
        LOG.exception("Unhandled failure")
        return _fail(EXIT_FAILURE, e)


if __name__ == "__main__":
    sys.exit(main())
