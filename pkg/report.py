"""
Output files: trace and plot-data CSVs, summary documents and text tables.
"""
from __future__ import annotations

import csv
import json
from collections import defaultdict
from dataclasses import asdict
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from analysis import (
    CHANNELS,
    Criterion,
    HullReport,
    MetricsReport,
    StabilityMap,
    normalize_tgo,
)
from simengine import SimTrace

ABSENT = "-"


def fmt(value: float | None) -> str:
    """
    >>> fmt(None), fmt(0.1 + 0.2), fmt(3)
    ('-', '0.3', '3')
    """
    if value is None:
        return ABSENT
    return f"{value:.9g}"


def _write_rows(path: Path, header: Sequence[str], rows: Iterable[Sequence[str]]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    return path


def trace_header(trace: SimTrace) -> list[str]:
    labels = trace.variant.labels
    return [
        "t",
        *labels,
        *(f"xhat_{label}" for label in labels),
        "u_raw",
        "u_sat",
        "meas_applied",
        "status",
    ]


def emit_trace(trace: SimTrace, path: Path) -> Path:
    """One row per step; `meas_applied` holds a 0/1 flag per sensor channel."""
    statuses = trace.row_status()

    def rows() -> Iterable[list[str]]:
        for k, t in enumerate(trace.t):
            yield [
                fmt(t),
                *map(fmt, trace.states[k]),
                *map(fmt, trace.estimates[k]),
                fmt(trace.u_raw[k]),
                fmt(trace.u_sat[k]),
                "".join("1" if flag else "0" for flag in trace.applied[k]),
                statuses[k].value,
            ]

    return _write_rows(path, trace_header(trace), rows())


def emit_normalized(traces: Mapping[str, SimTrace], path: Path) -> Path:
    """Errors over initial error against normalised time-to-go, one series per run."""

    def rows() -> Iterable[list[str]]:
        for series, trace in traces.items():
            tgo, values, normalized = normalize_tgo(trace)
            flags = "".join("1" if n else "0" for n in normalized)
            for k in range(len(tgo)):
                yield [series, fmt(tgo[k]), *map(fmt, values[k]), flags]

    return _write_rows(path, ["series", "tgo", *CHANNELS, "normalized"], rows())


def emit_map(smap: StabilityMap, path: Path, cap: float | None = None) -> Path:
    """
    Per-cell tallies and mean criterion values of a stability scan. `cap` clips
    the criterion values for display.
    """
    cells: dict[tuple[int, int], list] = defaultdict(list)
    for sample in smap.samples:
        cells[smap.cell(sample.xdot0, sample.thetadot0)].append(sample)
    tally = smap.tally()

    def rows() -> Iterable[list[str]]:
        for (i, j), samples in sorted(cells.items()):
            left, right, bottom, top = smap.cell_bounds(i, j)
            values = [float(np.mean([s.value(c) for s in samples])) for c in Criterion]
            if cap is not None:
                values = [min(v, cap) for v in values]
            yield [
                str(i),
                str(j),
                fmt((left + right) / 2),
                fmt((bottom + top) / 2),
                str(int(tally[i, j])),
                str(len(samples)),
                *map(fmt, values),
            ]

    header = ["xdot_bin", "thetadot_bin", "xdot", "thetadot", "tally", "samples"]
    return _write_rows(path, header + [c.value for c in Criterion], rows())


def format_table(headers: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    """
    >>> print(format_table(["rho", "t_s"], [[1.0, "9.45"], [0.05, "-"]]))
    rho  | t_s
    -----+-----
    1.0  | 9.45
    0.05 | -
    """
    cells = [[str(h) for h in headers], *[[str(c) for c in row] for row in rows]]
    widths = [max(len(row[i]) for row in cells) for i in range(len(headers))]
    lines = [" | ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in cells]
    lines.insert(1, "-+-".join("-" * w for w in widths))
    return "\n".join(lines)


def metrics_document(report: MetricsReport) -> dict[str, Any]:
    document = asdict(report)
    document["status"] = report.status.value
    return document


def transient_rows(label: Sequence[Any], report: MetricsReport) -> list[list[Any]]:
    """Position and angle sub-rows of a transient-response table."""
    return [
        [
            *label,
            name,
            fmt(report.channel(name).t_p),
            fmt(report.channel(name).t_tr),
            fmt(report.channel(name).t_s),
            fmt(report.u_sat_pct),
            fmt(report.U_tot),
        ]
        for name in CHANNELS
    ]


TRANSIENT_HEADERS = ["channel", "t_p", "t_tr", "t_s", "u_sat_pct", "U_tot"]
INTEGRAL_HEADERS = ["channel", "IAE", "ITAE", "e_ss"]


def integral_rows(label: Sequence[Any], report: MetricsReport) -> list[list[Any]]:
    return [
        [
            *label,
            name,
            fmt(report.channel(name).iae),
            fmt(report.channel(name).itae),
            fmt(report.channel(name).e_ss),
        ]
        for name in CHANNELS
    ]


def stability_rows(
    reports: Mapping[str, Mapping[str, HullReport]], baseline: str = "ipoc"
) -> list[list[Any]]:
    """Hull area against the baseline variant and the sample space, then crash and failure rates."""
    rows = []
    for variant, per_criterion in reports.items():
        for criterion, hull in per_criterion.items():
            reference = reports.get(baseline, {}).get(criterion)
            ratio = hull.area / reference.area if reference and reference.area > 0 else None
            rows.append(
                [
                    variant,
                    criterion,
                    fmt(ratio),
                    fmt(hull.area_ratio),
                    fmt(hull.crash_rate),
                    fmt(hull.failure_rate),
                ]
            )
    return rows


STABILITY_HEADERS = [
    "variant",
    "criterion",
    "S/S_ipoc",
    "S/Gamma0",
    "crash_rate",
    "failure_rate",
]


def hull_document(hull: HullReport) -> dict[str, Any]:
    return {
        "criterion": hull.criterion.value if hull.criterion else "combined",
        "area": hull.area,
        "area_ratio": hull.area_ratio,
        "crash_rate": hull.crash_rate,
        "failure_rate": hull.failure_rate,
        "cells": hull.cells,
        "hull": [list(p) for p in hull.hull],
    }


def emit_summary(document: Mapping[str, Any], table: str, out: Path) -> tuple[Path, Path]:
    """Write `summary.json` and the aligned `summary.txt` table."""
    out.mkdir(parents=True, exist_ok=True)
    machine = out / "summary.json"
    machine.write_text(json.dumps(document, indent=2) + "\n")
    human = out / "summary.txt"
    human.write_text(table + "\n")
    return machine, human
