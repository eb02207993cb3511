"""Command line interface: index, run, analyze, trace-show.

Exit codes: 0 on success, 1 on user error (bad arguments, bad inputs,
inconsistent config), 2 on internal error.
"""

from __future__ import annotations

import argparse
import sys
import traceback
from pathlib import Path

from .config import load_run_config
from .errors import AgenticQppError, ConfigurationError, IngestError
from .evaluation import analyze_run
from .qpp import PREDICTOR_ORDER
from .reports import write_reports
from .runner import run_batch
from .retrieval import build_lexical_index
from .serialize import (
    read_corpus,
    read_eval_log,
    read_trace_log,
    save_lexical_index,
)
from .types import Termination


class UsageError(Exception):
    """Bad command line usage; reported as a user error."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="agentic-qpp",
        description="Run search-enhanced reasoning episodes with per-iteration "
        "query performance prediction, and analyze the results.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    index = sub.add_parser("index", help="build and persist a lexical index")
    index.add_argument("corpus", type=Path, help="corpus JSONL ({docno, title, text})")
    index.add_argument("out", type=Path, help="output index file")
    index.set_defaults(func=cmd_index)

    run = sub.add_parser("run", help="run every QA item through a reasoning episode")
    run.add_argument("config", type=Path, help="TOML run config")
    run.set_defaults(func=cmd_run)

    analyze = sub.add_parser("analyze", help="emit report tables and figures for runs")
    analyze.add_argument("run_dirs", nargs="+", type=Path, help="run output directories")
    analyze.add_argument(
        "--out", type=Path, default=Path("analysis"), help="report output directory"
    )
    analyze.set_defaults(func=cmd_analyze)

    show = sub.add_parser("trace-show", help="print one episode's transcript and QPP values")
    show.add_argument("traces", type=Path, help="traces.jsonl file")
    show.add_argument("question_id", help="question id to display")
    show.set_defaults(func=cmd_trace_show)
    return parser


def cmd_index(args) -> int:
    documents = read_corpus(args.corpus)
    index = build_lexical_index(documents)
    save_lexical_index(index, args.out)
    print(f"indexed {index.doc_count} documents")
    return 0


def cmd_run(args) -> int:
    config = load_run_config(args.config)
    traces_path, evals_path = run_batch(config)
    print(f"wrote {traces_path}")
    print(f"wrote {evals_path}")
    return 0


def cmd_analyze(args) -> int:
    analyses = {}
    for run_dir in args.run_dirs:
        traces_path = run_dir / "traces.jsonl"
        evals_path = run_dir / "evals.jsonl"
        if not traces_path.exists() or not evals_path.exists():
            raise IngestError(f"run directory {run_dir} lacks traces.jsonl/evals.jsonl")
        rows = read_trace_log(traces_path)
        evals = read_eval_log(evals_path)
        if not rows:
            raise IngestError(f"run directory {run_dir} has no traces")
        name = run_dir.name or str(run_dir)
        analyses[name] = analyze_run([row.trace for row in rows], evals=evals)
    written = write_reports(analyses, args.out)
    for path in written:
        print(f"wrote {path}")
    return 0


def cmd_trace_show(args) -> int:
    rows = read_trace_log(args.traces)
    matches = [row for row in rows if row.trace.question_id == args.question_id]
    if not matches:
        raise IngestError(f"question id {args.question_id!r} not found in {args.traces}")
    row = matches[0]
    trace = row.trace
    from .agent import render_prompt

    print(f"=== {trace.question_id} (em={row.em} f1={row.f1:.4f}) ===")
    print(render_prompt(trace.input_question))
    for record in trace.iterations:
        print()
        print(record.raw_text)
        print(record.information_text)
        if record.qpp_estimates:
            values = " ".join(
                f"{name}={record.qpp_estimates[name]:.6f}"
                for name in PREDICTOR_ORDER
                if name in record.qpp_estimates
            )
            print(f"[qpp iteration {record.index}] {values}")
    if trace.final_raw_text is not None:
        print()
        print(trace.final_raw_text)
    if trace.termination is Termination.BUDGET_EXHAUSTED:
        print()
        print("BUDGET EXHAUSTED")
    elif trace.termination is Termination.MALFORMED_OUTPUT:
        if trace.note:
            print()
            print(f"note: {trace.note}")
        print("MALFORMED OUTPUT")
    return 0


def main(argv=None) -> int:
    try:
        parser = build_parser()
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (ConfigurationError, IngestError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except AgenticQppError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 2
    except Exception:
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
