"""Deterministic JSON/CSV emission for the command-line workflows.

Reruns with identical inputs must produce byte-identical files: keys are
sorted, floats go through Python's shortest round-trip repr, and rows use
plain "\n" terminators with RFC-4180-style quoting.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .dataset import Dataset
from .linear import TrialStatistics
from .scalar import RemovalTrace, ScmResult, SensitivityReport
from .tradeoff import TradeoffScan
from .vector import VcmResult

__all__ = [
    "write_json",
    "write_csv",
    "scm_report",
    "sensitivity_rows",
    "vcm_report",
    "relaxation_rows",
    "iterate_report",
    "tradeoff_rows",
    "trial_rows",
    "histogram_rows",
]


def _py(value):
    """Recursively convert numpy scalars/arrays for json.dump."""
    if isinstance(value, np.ndarray):
        return [_py(v) for v in value.tolist()]
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, float) and math.isnan(value):
        return None
    if isinstance(value, dict):
        return {k: _py(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_py(v) for v in value]
    return value


def write_json(path, payload: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_py(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _cell(value):
    if isinstance(value, (np.floating,)):
        value = float(value)
    if isinstance(value, float):
        if math.isnan(value):
            return ""
        return repr(value)
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, (np.integer,)):
        return str(int(value))
    return value


def write_csv(path, header: list[str], rows: list[tuple]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])


def scm_report(dataset: Dataset, result: ScmResult, seed: int, starts: int) -> dict:
    return {
        "dataset": dataset.name,
        "gamma_lower": result.gamma_lower,
        "gamma_upper": result.gamma_upper,
        "consistent": result.consistent,
        "x_witness": result.x_witness,
        "status_lower": result.status_lower,
        "status_upper": result.status_upper,
        "seed": seed,
        "starts": starts,
    }


def sensitivity_rows(report: SensitivityReport) -> list[tuple]:
    return [(s.kind, s.name, float(s.sensitivity)) for s in report.ranked]


def vcm_report(dataset: Dataset, result: VcmResult, seed: int, starts: int,
               warnings: list[str] | None = None) -> dict:
    return {
        "dataset": dataset.name,
        "value_lower": result.value_lower,
        "value_upper": result.value_upper,
        "x_witness": result.x_witness,
        "status_lower_bound": result.status_lower,
        "relaxations": {
            "qoi_lower": {q.name: float(result.delta_L[e])
                          for e, q in enumerate(dataset.qois)},
            "qoi_upper": {q.name: float(result.delta_U[e])
                          for e, q in enumerate(dataset.qois)},
            "param_lower": {nm: float(result.delta_l[i])
                            for i, nm in enumerate(dataset.param_names)},
            "param_upper": {nm: float(result.delta_u[i])
                            for i, nm in enumerate(dataset.param_names)},
            "facet": {str(j): float(result.delta_facets[j])
                      for j in range(dataset.n_facets)},
        },
        "seed": seed,
        "starts": starts,
        "warnings": warnings or [],
    }


def relaxation_rows(dataset: Dataset, result: VcmResult) -> list[tuple]:
    """(kind, name, relaxation, coefficient, effective_expansion, percent_of_width)."""
    scheme = result.scheme
    rows = []

    def add(kind, name, delta, coef, width):
        eff = coef * delta
        pct = 100.0 * eff / width if (width and math.isfinite(width) and width > 0) else math.nan
        rows.append((kind, name, float(delta), float(coef), float(eff), pct))

    for e, q in enumerate(dataset.qois):
        add("qoi_lower", q.name, result.delta_L[e], scheme.R_L[e], q.width)
        add("qoi_upper", q.name, result.delta_U[e], scheme.R_U[e], q.width)
    for i, nm in enumerate(dataset.param_names):
        width = float(dataset.box.width[i])
        add("param_lower", nm, result.delta_l[i], scheme.r_l[i], width)
        add("param_upper", nm, result.delta_u[i], scheme.r_u[i], width)
    for j in range(dataset.n_facets):
        add("facet", str(j), result.delta_facets[j], scheme.r_facets[j], math.nan)
    return rows


def iterate_report(trace: RemovalTrace) -> dict:
    return {
        "rounds": [
            {"removed": r.removed, "gamma_lower": r.gamma_lower,
             "gamma_upper": r.gamma_upper}
            for r in trace.rounds
        ],
        "removed": trace.removed,
        "consistent": trace.consistent,
        "remaining_qois": [q.name for q in trace.final.qois],
    }


def tradeoff_rows(scan: TradeoffScan) -> list[tuple]:
    return [(p.r1, p.r2, p.d1, p.d2, p.eff1, p.eff2, p.rvcm_lower, p.feasible)
            for p in scan.points]


def trial_rows(stats: TrialStatistics) -> list[tuple]:
    return [(r.trial, r.phi_E, r.phi_delta, r.alpha, r.skipped) for r in stats.rows]


def histogram_rows(stats: TrialStatistics, which: str) -> list[tuple]:
    counts = stats.hist_phi_E if which == "phi_E" else stats.hist_phi_delta
    edges = stats.bin_edges
    return [(float(lo), float(hi), int(c))
            for lo, hi, c in zip(edges[:-1], edges[1:], counts)]
