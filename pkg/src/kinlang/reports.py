"""Delimited report files.

All CSVs use ',' separators, '.' decimal points and shortest round-tripping
float representations, so re-reading a report recovers the exact doubles that
were written.
"""

from __future__ import annotations

import csv
import math

import numpy as np

from .analysis import ErrorReport, GeneratorCheckReport
from .sampler import EnsembleResult


def fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def read_csv(path):
    """Read back (header, rows); numeric cells are parsed to float, 'NA' and
    non-numeric cells stay strings."""
    with open(path, newline="", encoding="utf-8") as f:
        r = csv.reader(f)
        header = next(r)
        rows = []
        for raw in r:
            row = []
            for cell in raw:
                try:
                    row.append(float(cell))
                except ValueError:
                    row.append(cell)
            rows.append(row)
    return header, rows


def write_samples_csv(path, result: EnsembleResult, potential, observables):
    header = ["chain", "step", "H"] + [o.name for o in observables]
    rows = []
    for c in range(result.n_chains):
        X = result.records_x[c]
        Y = result.records_y[c]
        if X.shape[0] == 0:
            continue
        h = potential.energy_many(X) + 0.5 * np.sum(Y * Y, axis=-1)
        obs_vals = [o.evaluate_many(X, Y) for o in observables]
        for r in range(X.shape[0]):
            rows.append(
                [c, int(result.record_steps[r]), h[r]] + [v[r] for v in obs_vals]
            )
    write_csv(path, header, rows)


def write_ensemble_csv(path, result: EnsembleResult):
    header = [
        "observable",
        "mean",
        "variance",
        "ci95",
        "n_effective",
        "rejection_rate",
        "escape_count",
    ]
    rows = [
        [name, s.mean, s.variance, s.ci_halfwidth, s.n_effective,
         result.rejection_rate, result.escape_count]
        for name, s in result.stats.items()
    ]
    write_csv(path, header, rows)


def write_weak_error_csv(path, report: ErrorReport):
    header = ["delta", "n_steps", "estimate", "reference", "error", "ci95"]
    rows = [
        [report.delta_grid[i], report.n_steps[i], report.estimates[i],
         report.references[i], report.errors[i], report.error_cis[i]]
        for i in range(len(report.delta_grid))
    ]
    write_csv(path, header, rows)


def write_order_fit_csv(path, entries):
    """entries: list of (quantity, OrderFit | None, points_used)."""
    header = ["quantity", "order", "coefficient", "points_used"]
    rows = []
    for quantity, fit, points_used in entries:
        if fit is None:
            rows.append([quantity, "NA", "NA", points_used])
        else:
            rows.append([quantity, fit.order, fit.coefficient, points_used])
    write_csv(path, header, rows)


def write_richardson_csv(path, report: ErrorReport):
    header = ["delta_pair", "combined", "error", "ci95"]
    rows = [
        [f"{fmt(r.delta_coarse)}/{fmt(r.delta_fine)}", r.combined, r.error, r.ci]
        for r in report.richardson_rows
    ]
    write_csv(path, header, rows)


def write_stationarity_csv(path, reports: list[GeneratorCheckReport]):
    header = ["observable", "estimate", "ci95", "verdict"]
    rows = [[r.observable, r.estimate, r.ci, r.verdict] for r in reports]
    write_csv(path, header, rows)


def write_lyapunov_csv(path, rows):
    """rows: (probe_label, Vb, EVb1, ci95); the stored ratio is the
    CI-discounted contraction factor (EVb1 - ci) / Vb."""
    header = ["probe", "Vb", "EVb1", "ci95", "ratio"]
    out = [[label, vb, ev, ci, (ev - ci) / vb] for label, vb, ev, ci in rows]
    write_csv(path, header, out)


def result_has_nan(result: EnsembleResult) -> bool:
    for s in result.stats.values():
        if math.isnan(s.mean) or math.isnan(s.variance) or math.isnan(s.ci_halfwidth):
            return True
    return math.isnan(result.rejection_rate) or math.isnan(result.max_h)


def report_has_nan(report: ErrorReport) -> bool:
    arrays = [report.estimates, report.references, report.errors, report.error_cis]
    return any(np.any(np.isnan(a)) for a in arrays)
