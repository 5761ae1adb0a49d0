"""Figure rendering for the report-writing commands.

Every figure lands next to its CSV so a run directory is self-describing.
Rendering is headless (Agg) and deliberately plain: log-log error curves with
their fitted slope, energy traces, and drift-contraction ratios.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .analysis import ErrorReport


def save_error_curve(report: ErrorReport, path, title: str):
    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    d = report.delta_grid
    ax.errorbar(
        d, np.abs(report.errors), yerr=report.error_cis,
        fmt="ko", ms=5.0, capsize=3.0, label="|error|",
    )
    if report.fit is not None:
        line = abs(report.fit.coefficient) * d ** report.fit.order
        ax.loglog(d, line, "k--", label=f"slope {report.fit.order:.2f}")
    if report.richardson_rows:
        rd = [r.delta_coarse for r in report.richardson_rows]
        re_ = [abs(r.error) for r in report.richardson_rows]
        ax.loglog(rd, re_, "rs", ms=5.0, label="Richardson |error|")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel(r"$\delta$")
    ax.set_ylabel("absolute error")
    ax.set_title(title)
    ax.grid(True, which="both", alpha=0.4)
    ax.legend()
    fig.savefig(path, bbox_inches="tight", dpi=120)
    plt.close(fig)


def save_energy_traces(record_steps, h_per_chain, path, max_chains: int = 4):
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for c, h in enumerate(h_per_chain[:max_chains]):
        ax.plot(record_steps[: len(h)], h, lw=0.8, label=f"chain {c}")
    ax.set_xlabel("step")
    ax.set_ylabel("H")
    ax.grid(True, alpha=0.4)
    if len(h_per_chain) > 0:
        ax.legend(loc="best", fontsize=8)
    fig.savefig(path, bbox_inches="tight", dpi=120)
    plt.close(fig)


def save_drift_ratios(labels, ratios, path):
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    xs = np.arange(len(labels))
    ax.plot(xs, ratios, "ko")
    ax.axhline(1.0, color="r", ls="--", lw=1.0, label="no contraction")
    ax.set_xticks(xs)
    ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=7)
    ax.set_ylabel(r"$(E[V_1] - \mathrm{ci}) / V_0$")
    ax.grid(True, alpha=0.4)
    ax.legend()
    fig.savefig(path, bbox_inches="tight", dpi=120)
    plt.close(fig)
