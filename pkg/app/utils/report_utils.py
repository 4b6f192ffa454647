"""
Report writers for DeepNTK experiments

This module is responsible for:
1. Text summaries of criteria checks and depth sweeps
2. CSV files (kernel matrices, traces, criteria, predictions, checks)
3. SVG line plots of depth traces

All writers create parent directories and raise OutputError on failure.
Floats are written with 17 significant digits so files round-trip exactly.
"""

import csv
import logging
import math
import os
from typing import Iterable, List, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from app.core.analysis import DepthTrace  # noqa: E402
from app.core.errors import OutputError  # noqa: E402
from app.core.kernels import CriteriaReport  # noqa: E402

logger = logging.getLogger(__name__)

SINGULAR = "singular"

TRACE_COLUMNS = ["kind", "i", "j", "L", "value"]
CRITERIA_COLUMNS = ["L", "dominance_violation", "smallest_eigenvalue",
                    "positive_definite", "logdet_sign", "logdet"]

# Fixed ids and no timestamp keep the SVG output identical between runs
PLOT_STYLE = {
    "svg.hashsalt": "deepntk",
    "svg.fonttype": "path",
    "font.size": 9,
    "font.family": "DejaVu Sans",
    "figure.figsize": [6.0, 3.7],
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.0,
}


def format_float(value: float) -> str:
    """Formats a float with round-trip precision"""
    return format(float(value), ".17g")


def _open_for_write(path: str):
    directory = os.path.dirname(os.path.abspath(path))
    try:
        os.makedirs(directory, exist_ok=True)
        return open(path, "w", newline="", encoding="utf-8")
    except OSError as e:
        raise OutputError(f"cannot write {path}: {e}") from e


def write_rows(path: str, header: Sequence[str], rows: Iterable[Sequence]) -> str:
    """
    Writes a CSV file

    Args:
        path: Target file
        header: Column names
        rows: Row values; floats are formatted with format_float

    Returns:
        The path written
    """
    handle = _open_for_write(path)
    try:
        with handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([format_float(v) if isinstance(v, (float, np.floating)) else v
                                 for v in row])
    except OSError as e:
        raise OutputError(f"cannot write {path}: {e}") from e
    logger.debug("Wrote %s", path)
    return path


def write_matrix_csv(path: str, matrix: np.ndarray) -> str:
    """Writes a kernel matrix, one CSV row per matrix row, columns c0..c{n-1}"""
    matrix = np.atleast_2d(matrix)
    header = [f"c{k}" for k in range(matrix.shape[1])]
    return write_rows(path, header, ([float(v) for v in row] for row in matrix))


def trace_rows(trace: DepthTrace) -> List[list]:
    """
    Rows of the trace CSV

    One row per (pair, L), followed by the logdet and coeffnorm rows of each
    depth. Coefficient norms of singular depths read "singular".
    """
    rows = []
    for (i, j), values in trace.pair_values.items():
        for L, value in zip(trace.depths, values):
            rows.append(["kernel", i, j, L, value])
    for L, (sign, value) in zip(trace.depths, trace.logdet):
        rows.append(["logdet", -1, -1, L, value if sign > 0 else SINGULAR])
    for L, norm in zip(trace.depths, trace.coeff_norms):
        rows.append(["coeffnorm", -1, -1, L, SINGULAR if norm is None else norm])
    return rows


def write_trace_csv(path: str, trace: DepthTrace) -> str:
    return write_rows(path, TRACE_COLUMNS, trace_rows(trace))


def criteria_rows(report: CriteriaReport) -> List[list]:
    rows = []
    for row in report.rows:
        rows.append([
            row.depth,
            row.dominance_violation,
            row.smallest_eigenvalue,
            "yes" if row.positive_definite else SINGULAR,
            row.logdet_sign,
            row.logdet,
        ])
    return rows


def write_criteria_csv(path: str, report: CriteriaReport) -> str:
    return write_rows(path, CRITERIA_COLUMNS, criteria_rows(report))


def render_criteria_text(report: CriteriaReport) -> str:
    """Human-readable summary of a criteria check"""
    lines = [f"Kernel {report.name} on n={report.n}"]
    lines.append(f"{'L':>4}  {'dominance':>12}  {'min eig':>12}  {'logdet':>12}  PD")
    for row in report.rows:
        lines.append(
            f"{row.depth:>4}  {row.dominance_violation:>12.4e}  "
            f"{row.smallest_eigenvalue:>12.4e}  {row.logdet:>12.6g}  "
            f"{'yes' if row.positive_definite else SINGULAR}"
        )
    lines.append(f"L_hat: {report.l_hat if report.l_hat is not None else 'none'}")
    return "\n".join(lines)


def render_trace_text(trace: DepthTrace) -> str:
    """Short summary of a depth sweep: spread of kernel values and coefficient norms"""
    lines = [f"Sweep of {trace.name} over L={trace.depths[0]}..{trace.depths[-1]}"]
    for index, L in enumerate(trace.depths):
        values = [v[index] for v in trace.pair_values.values()]
        norm = trace.coeff_norms[index]
        lines.append(
            f"  L={L:>3}  min={min(values):.6f}  max={max(values):.6f}  "
            f"|v|={SINGULAR if norm is None else format(norm, '.6g')}"
        )
    singular = trace.singular_depths
    if singular:
        lines.append(f"  singular depths: {', '.join(str(L) for L in singular)}")
    return "\n".join(lines)


def criteria_report_render(report: CriteriaReport, trace: Optional[DepthTrace],
                           output_dir: str) -> str:
    """
    Renders a criteria report (and optionally a sweep) as text and CSV

    Args:
        report: Criteria check result
        trace: Depth sweep of the same kernel, or None
        output_dir: Directory receiving <name>_criteria.csv and <name>_trace.csv

    Returns:
        Text summary

    Raises:
        OutputError: If a file cannot be written
    """
    write_criteria_csv(os.path.join(output_dir, f"{report.name}_criteria.csv"), report)
    text = render_criteria_text(report)
    if trace is not None:
        write_trace_csv(os.path.join(output_dir, f"{trace.name}_trace.csv"), trace)
        text += "\n" + render_trace_text(trace)
    return text


def _save_figure(fig, path: str) -> str:
    try:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        fig.savefig(path, format="svg", metadata={"Date": None})
    except OSError as e:
        raise OutputError(f"cannot write {path}: {e}") from e
    finally:
        plt.close(fig)
    logger.debug("Wrote %s", path)
    return path


def plot_trace(trace: DepthTrace, output_dir: str) -> List[str]:
    """
    Line plots of a depth sweep, L on the horizontal axis

    Writes <name>_pairs.svg (one line per pair), <name>_logdet.svg and
    <name>_coeffnorm.svg (singular depths left as gaps).

    Returns:
        Paths of the written files
    """
    paths = []
    with plt.rc_context(PLOT_STYLE):
        fig, ax = plt.subplots()
        for (i, j), values in trace.pair_values.items():
            style = "--" if j == trace.n else "-"
            ax.plot(trace.depths, values, style, color="tab:red" if j == trace.n else "tab:blue",
                    alpha=0.7)
        ax.set_xlabel("L")
        ax.set_ylabel("kernel value")
        ax.set_title(f"{trace.name}: pairs of X (solid) and with x (dashed)")
        paths.append(_save_figure(fig, os.path.join(output_dir, f"{trace.name}_pairs.svg")))

        fig, ax = plt.subplots()
        logdets = [value if sign > 0 else math.nan for sign, value in trace.logdet]
        ax.plot(trace.depths, logdets, "o-", markersize=3)
        ax.set_xlabel("L")
        ax.set_ylabel("log det")
        ax.set_title(f"{trace.name}: log-determinant")
        paths.append(_save_figure(fig, os.path.join(output_dir, f"{trace.name}_logdet.svg")))

        fig, ax = plt.subplots()
        norms = [math.nan if norm is None else norm for norm in trace.coeff_norms]
        ax.plot(trace.depths, norms, "o-", markersize=3)
        ax.set_xlabel("L")
        ax.set_ylabel("||v||")
        ax.set_title(f"{trace.name}: coefficient norm")
        paths.append(_save_figure(fig, os.path.join(output_dir, f"{trace.name}_coeffnorm.svg")))
    return paths


def write_checks_csv(path: str, results: Sequence) -> str:
    """Writes verification results, one row per check"""
    rows = ([r.name, "pass" if r.passed else "fail", r.value, r.tolerance, r.detail]
            for r in results)
    return write_rows(path, ["check", "status", "value", "tolerance", "detail"], rows)


def render_checks_text(results: Sequence) -> str:
    lines = []
    for r in results:
        status = "ok" if r.passed else "FAILED"
        lines.append(f"{r.name:<20} {status:<7} {r.value:.4e} (tolerance {r.tolerance:.1e})  {r.detail}")
    return "\n".join(lines)
