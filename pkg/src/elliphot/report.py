"""Summaries and figures from recorded experiment trials.

All plotting is non-interactive: figures render straight to files in a
chosen directory, alongside a per-condition summary CSV.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .experiment import METHODS, TrialRecord

SUMMARY_COLUMNS = ("condition", "method", "trials", "converged",
                   "error_median", "error_q1", "error_q3", "runtime_ms_median")

_PARAMS = ("A", "B", "H", "K", "tau")
_METHOD_COLORS = {"def-gradient": "#d08a2e", "def-points": "#4878b0", "ml": "#3d9152"}


@dataclass(frozen=True)
class SummaryRow:
    condition: str
    method: str
    trials: int
    converged: int
    error_median: float
    error_q1: float
    error_q3: float
    runtime_ms_median: float


def _conditions_in_order(records: list[TrialRecord]) -> list[str]:
    seen: dict[str, None] = {}
    for r in records:
        seen.setdefault(r.condition, None)
    return list(seen)


def _cell(records, condition, method):
    return [r for r in records if r.condition == condition and r.method == method]


def summarize(records: list[TrialRecord]) -> list[SummaryRow]:
    """One row per (condition, method); medians over converged trials."""
    if not records:
        raise ValueError("no records to summarise")
    out = []
    for condition in _conditions_in_order(records):
        for method in METHODS:
            cell = _cell(records, condition, method)
            if not cell:
                continue
            good = [r.algebraic_error for r in cell
                    if r.converged and math.isfinite(r.algebraic_error)]
            if good:
                med = float(np.median(good))
                q1, q3 = (float(q) for q in np.percentile(good, [25.0, 75.0]))
            else:
                med = q1 = q3 = math.nan
            runtimes = [r.runtime_ms for r in cell if math.isfinite(r.runtime_ms)]
            rt = float(np.median(runtimes)) if runtimes else math.nan
            out.append(SummaryRow(condition, method, len(cell),
                                  sum(r.converged for r in cell),
                                  med, q1, q3, rt))
    return out


def write_summary_csv(path, rows: list[SummaryRow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_COLUMNS)
        for r in rows:
            writer.writerow([r.condition, r.method, r.trials, r.converged,
                             repr(r.error_median), repr(r.error_q1),
                             repr(r.error_q3), repr(r.runtime_ms_median)])


def _truth_from_meta(meta: dict[str, str], condition: str) -> dict[str, float]:
    out = {}
    for name in _PARAMS:
        key = f"condition.{condition}.{name}"
        if key in meta:
            out[name] = float(meta[key])
    return out


def _grouped_positions(n_conditions: int, n_methods: int):
    width = 0.8 / n_methods
    for mi in range(n_methods):
        yield width, [ci + (mi - (n_methods - 1) / 2.0) * width
                      for ci in range(n_conditions)]


def _error_figure(records, conditions, path):
    fig, ax = plt.subplots(figsize=(1.8 + 1.4 * len(conditions), 4.2))
    pos_iter = _grouped_positions(len(conditions), len(METHODS))
    for method, (width, positions) in zip(METHODS, pos_iter):
        data, used = [], []
        for cond, x in zip(conditions, positions):
            vals = [r.algebraic_error for r in _cell(records, cond, method)
                    if r.converged and math.isfinite(r.algebraic_error)
                    and r.algebraic_error > 0.0]
            if vals:
                data.append(vals)
                used.append(x)
        if not data:
            continue
        boxes = ax.boxplot(data, positions=used, widths=width * 0.85,
                           patch_artist=True, manage_ticks=False,
                           medianprops={"color": "black"})
        for box in boxes["boxes"]:
            box.set_facecolor(_METHOD_COLORS[method])
            box.set_alpha(0.75)
        ax.plot([], [], color=_METHOD_COLORS[method], label=method, linewidth=6)
    ax.set_yscale("log")
    ax.set_xticks(range(len(conditions)))
    ax.set_xticklabels(conditions, rotation=20)
    ax.set_ylabel("algebraic error")
    ax.set_title("estimate error by condition and method")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def _convergence_figure(summary_rows, conditions, path):
    fig, ax = plt.subplots(figsize=(1.8 + 1.4 * len(conditions), 3.4))
    pos_iter = _grouped_positions(len(conditions), len(METHODS))
    lookup = {(s.condition, s.method): s for s in summary_rows}
    for method, (width, positions) in zip(METHODS, pos_iter):
        rates, used = [], []
        for cond, x in zip(conditions, positions):
            row = lookup.get((cond, method))
            if row is not None and row.trials:
                rates.append(row.converged / row.trials)
                used.append(x)
        ax.bar(used, rates, width=width * 0.85, label=method,
               color=_METHOD_COLORS[method], alpha=0.85)
    ax.set_ylim(0.0, 1.05)
    ax.set_xticks(range(len(conditions)))
    ax.set_xticklabels(conditions, rotation=20)
    ax.set_ylabel("converged fraction")
    ax.set_title("convergence by condition and method")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def _parameter_figure(records, conditions, meta, path):
    fig, axes = plt.subplots(len(_PARAMS), 1, sharex=True,
                             figsize=(1.8 + 1.4 * len(conditions),
                                      2.2 * len(_PARAMS)))
    for ax, param in zip(axes, _PARAMS):
        pos_iter = _grouped_positions(len(conditions), len(METHODS))
        for method, (width, positions) in zip(METHODS, pos_iter):
            data, used = [], []
            for cond, x in zip(conditions, positions):
                vals = [getattr(r, param) for r in _cell(records, cond, method)
                        if r.converged and math.isfinite(getattr(r, param))]
                if vals:
                    data.append(vals)
                    used.append(x)
            if not data:
                continue
            boxes = ax.boxplot(data, positions=used, widths=width * 0.85,
                               patch_artist=True, manage_ticks=False,
                               medianprops={"color": "black"})
            for box in boxes["boxes"]:
                box.set_facecolor(_METHOD_COLORS[method])
                box.set_alpha(0.75)
        if meta is not None:
            for ci, cond in enumerate(conditions):
                truth = _truth_from_meta(meta, cond)
                if param in truth:
                    ax.hlines(truth[param], ci - 0.42, ci + 0.42,
                              colors="black", linestyles="dotted", linewidth=1)
        ax.set_ylabel(param)
    axes[-1].set_xticks(range(len(conditions)))
    axes[-1].set_xticklabels(conditions, rotation=20)
    axes[0].set_title("estimates by condition (dotted line: truth)")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_report(records: list[TrialRecord], out_dir,
                  meta: dict[str, str] | None = None) -> list[Path]:
    """Summary CSV plus three figures; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    conditions = _conditions_in_order(records)
    summary_rows = summarize(records)

    paths = [out / "summary.csv", out / "error_boxplot.png",
             out / "convergence_rates.png", out / "parameters.png"]
    write_summary_csv(paths[0], summary_rows)
    _error_figure(records, conditions, paths[1])
    _convergence_figure(summary_rows, conditions, paths[2])
    _parameter_figure(records, conditions, meta, paths[3])
    return paths
