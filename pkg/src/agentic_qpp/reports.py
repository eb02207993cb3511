"""Report emission: delimited tables plus rendered figures.

CSV is the canonical output and is byte-deterministic for fixed inputs; the
SVG figures rendered next to them are a convenience view of the same data.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Mapping

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .evaluation import RunAnalysis
from .qpp import PREDICTOR_ORDER

plt.rcParams["svg.hashsalt"] = "agentic-qpp"

_SVG_METADATA = {"Date": None, "Creator": None}

TABLE1_HEADER = ["run", "questions", "mean_em", "mean_f1", "mean_iter"]
TABLE2_HEADER = ["run", "spearman_iter_f1"]
TABLE3_HEADER = ["run", *PREDICTOR_ORDER]
QPP_BY_ITERATION_HEADER = ["run", "predictor", "iteration", "mean_zscore", "count"]
ITER_HISTOGRAM_HEADER = ["run", "iter", "correct", "incorrect"]
REPETITION_HEADER = ["run", "repeated", "total", "question_ids"]

CORRECT_COLOR = "#1f5f8b"
INCORRECT_COLOR = "#a8cbe3"


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(cell) for cell in row])


def write_reports(analyses: Mapping[str, RunAnalysis], out_dir) -> list[Path]:
    """Emit every report file for the given runs; returns the written paths.

    Runs are ordered by name so the byte content is independent of the
    caller's ordering.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    runs = sorted(analyses)
    written: list[Path] = []

    table1 = [
        [run, analyses[run].question_count, analyses[run].mean_em,
         analyses[run].mean_f1, analyses[run].mean_iter]
        for run in runs
    ]
    written.append(out / "table1.csv")
    _write_csv(written[-1], TABLE1_HEADER, table1)

    table2 = [[run, analyses[run].rho_iter_f1] for run in runs]
    written.append(out / "table2.csv")
    _write_csv(written[-1], TABLE2_HEADER, table2)

    table3 = []
    for run in runs:
        correlations = analyses[run].rho_first_qpp_f1
        table3.append([run, *[correlations.get(name) for name in PREDICTOR_ORDER]])
    written.append(out / "table3.csv")
    _write_csv(written[-1], TABLE3_HEADER, table3)

    qpp_rows = []
    for run in runs:
        analysis = analyses[run]
        for predictor, by_iteration in analysis.qpp_by_iteration.items():
            counts = analysis.qpp_iteration_counts[predictor]
            for iteration in sorted(by_iteration):
                qpp_rows.append(
                    [run, predictor, iteration, by_iteration[iteration], counts[iteration]]
                )
    written.append(out / "qpp_by_iteration.csv")
    _write_csv(written[-1], QPP_BY_ITERATION_HEADER, qpp_rows)

    histogram_rows = []
    for run in runs:
        histogram = analyses[run].iter_histogram
        for iteration in sorted(histogram):
            correct, incorrect = histogram[iteration]
            histogram_rows.append([run, iteration, correct, incorrect])
    written.append(out / "iter_histogram.csv")
    _write_csv(written[-1], ITER_HISTOGRAM_HEADER, histogram_rows)

    repetition_rows = []
    for run in runs:
        repetition = analyses[run].repetition
        repetition_rows.append(
            [run, repetition["count"], repetition["total"], ";".join(repetition["question_ids"])]
        )
    written.append(out / "repetition.csv")
    _write_csv(written[-1], REPETITION_HEADER, repetition_rows)

    written.append(_plot_qpp_by_iteration(analyses, runs, out / "qpp_by_iteration.svg"))
    written.append(_plot_iter_histogram(analyses, runs, out / "iter_histogram.svg"))
    return written


def _plot_qpp_by_iteration(analyses, runs, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for run in runs:
        for predictor, by_iteration in analyses[run].qpp_by_iteration.items():
            iterations = sorted(by_iteration)
            values = [by_iteration[i] for i in iterations]
            label = predictor if len(runs) == 1 else f"{run}:{predictor}"
            ax.plot(iterations, values, marker="o", label=label)
    ax.set_xlabel("iteration")
    ax.set_ylabel("mean z-scored estimate")
    ax.set_title("Predictor estimates by reasoning iteration")
    if ax.lines:
        ax.legend(fontsize=8)
        ax.xaxis.get_major_locator().set_params(integer=True)
    fig.tight_layout()
    fig.savefig(path, metadata=_SVG_METADATA)
    plt.close(fig)
    return path


def _plot_iter_histogram(analyses, runs, path: Path) -> Path:
    fig, axes = plt.subplots(
        1, len(runs), figsize=(4.0 * len(runs), 3.5), squeeze=False, sharey=True
    )
    for ax, run in zip(axes[0], runs):
        histogram = analyses[run].iter_histogram
        iterations = sorted(histogram)
        correct = [histogram[i][0] for i in iterations]
        incorrect = [histogram[i][1] for i in iterations]
        ax.bar(iterations, correct, color=CORRECT_COLOR, label="correct (EM=1)")
        ax.bar(iterations, incorrect, bottom=correct, color=INCORRECT_COLOR, label="incorrect")
        ax.set_title(run)
        ax.set_xlabel("iterations")
        ax.xaxis.get_major_locator().set_params(integer=True)
    axes[0][0].set_ylabel("questions")
    axes[0][-1].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, metadata=_SVG_METADATA)
    plt.close(fig)
    return path
