"""Config-driven experiment runner.

Subcommands: simulate, weak-error, invariant-bias, check-potential,
lyapunov-probe. Every run writes its CSV reports, a rendered figure and a
manifest into the output directory.

Exit codes: 0 success, 2 configuration or validation error, 3 the whole
ensemble escaped the domain, 4 internal numerical failure (NaN in an
aggregate or an unexpected fault).
"""

from __future__ import annotations

import argparse
import math
import os
import sys
import traceback

import numpy as np

from . import __version__, plots, reports
from .analysis import ReferenceSolution, invariant_bias_curve, weak_error_curve
from .config import (
    ExperimentConfig,
    ManifestTimer,
    build_lyapunov_params,
    build_potential,
    build_run_spec,
    build_scheme_params,
    parse_config,
)
from .errors import (
    ConfigError,
    DomainError,
    EscapedEnsembleError,
    InvalidInputError,
)
from .observables import make_observable
from .potentials import State, assumption_diagnostics, hamiltonian, probe_ladder
from .sampler import derive_stream, run_ensemble
from .scheme import lyapunov, lyapunov_drift_probe, probe_states, threshold

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ESCAPED = 3
EXIT_NUMERICAL = 4


def _build_observables(cfg: ExperimentConfig, potential):
    names = [n.strip() for n in cfg.get_str("observables", "hamiltonian").split(",") if n.strip()]
    return [make_observable(n, potential) for n in names]


def _require_out(out_dir: str | None) -> str:
    if not out_dir:
        raise ConfigError("this command requires --out <directory>")
    os.makedirs(out_dir, exist_ok=True)
    return out_dir


def cmd_simulate(cfg: ExperimentConfig, out_dir: str, seed, threads) -> int:
    timer = ManifestTimer()
    out_dir = _require_out(out_dir)
    potential = build_potential(cfg)
    params = build_scheme_params(cfg)
    spec = build_run_spec(cfg, potential, seed, threads)
    scheme_kind = cfg.get_str("scheme.kind", "stopped")
    observables = _build_observables(cfg, potential)

    result = run_ensemble(spec, potential, params, observables, scheme=scheme_kind, record=True)
    if reports.result_has_nan(result):
        print("numerical failure: NaN in ensemble aggregates", file=sys.stderr)
        return EXIT_NUMERICAL

    samples_path = os.path.join(out_dir, "samples.csv")
    ensemble_path = os.path.join(out_dir, "ensemble.csv")
    fig_path = os.path.join(out_dir, "samples.png")
    reports.write_samples_csv(samples_path, result, potential, observables)
    reports.write_ensemble_csv(ensemble_path, result)
    h_traces = [
        potential.energy_many(result.records_x[c]) + 0.5 * np.sum(result.records_y[c] ** 2, axis=-1)
        for c in range(min(result.n_chains, 4))
    ]
    plots.save_energy_traces(result.record_steps, h_traces, fig_path)

    manifest = timer.build(
        cfg, spec.master_seed, ["samples.csv", "ensemble.csv", "samples.png"], __version__
    )
    manifest.write(os.path.join(out_dir, "manifest.json"))
    return EXIT_OK


def _delta_grid(cfg: ExperimentConfig) -> list[float]:
    grid = cfg.get_float_list("analysis.delta_grid")
    if len(grid) < 3:
        raise ConfigError("analysis.delta_grid needs at least 3 step sizes for an order fit")
    return grid


def _scaled_chains(cfg: ExperimentConfig, spec, grid):
    """Chain counts per delta: n_chains at the smallest step, scaled by
    (delta_min/delta)^2 so error/CI stays roughly flat across the grid."""
    if not cfg.get_bool("analysis.scale_chains", True):
        return [spec.n_chains] * len(grid)
    dmin = min(grid)
    return [max(1000, int(round(spec.n_chains * (dmin / d) ** 2))) for d in grid]


def cmd_weak_error(cfg: ExperimentConfig, out_dir: str, seed, threads) -> int:
    timer = ManifestTimer()
    out_dir = _require_out(out_dir)
    potential = build_potential(cfg)
    base = build_scheme_params(cfg)
    spec = build_run_spec(cfg, potential, seed, threads)
    grid = _delta_grid(cfg)
    t = cfg.get_float("analysis.t", 1.0)
    for d in grid:
        if abs(t / d - round(t / d)) > 1e-9:
            raise ConfigError(f"horizon t={t} is not an integer multiple of delta={d}")
    ref_kind = cfg.get_str("analysis.reference", "analytic-linear")
    if ref_kind == "analytic-linear":
        reference = ReferenceSolution(
            kind="analytic-linear", stiffness=cfg.get_float("potential.stiffness", 1.0)
        )
    elif ref_kind == "fine-step":
        reference = ReferenceSolution(kind="fine-step", delta_ref=min(grid) / 16.0)
    else:
        raise ConfigError(f"unknown analysis.reference: {ref_kind!r}")
    f = make_observable(cfg.get_str("analysis.observable", "first-coordinate"), potential)

    report = weak_error_curve(
        f, t, grid, spec, potential, base, reference,
        chains_per_delta=_scaled_chains(cfg, spec, grid),
        allow_rounding=False,
        scheme=cfg.get_str("scheme.kind", "stopped"),
    )
    if reports.report_has_nan(report):
        print("numerical failure: NaN in weak-error report", file=sys.stderr)
        return EXIT_NUMERICAL

    reports.write_weak_error_csv(os.path.join(out_dir, "weak_error.csv"), report)
    reports.write_order_fit_csv(
        os.path.join(out_dir, "order_fit.csv"),
        [
            ("weak_error", report.fit, report.fit_points_used),
            ("richardson", report.richardson_fit, report.richardson_points_used),
        ],
    )
    reports.write_richardson_csv(os.path.join(out_dir, "richardson.csv"), report)
    plots.save_error_curve(
        report, os.path.join(out_dir, "weak_error.png"), f"weak error of {f.name} at t={t}"
    )
    manifest = timer.build(
        cfg,
        spec.master_seed,
        ["weak_error.csv", "order_fit.csv", "richardson.csv", "weak_error.png"],
        __version__,
    )
    manifest.write(os.path.join(out_dir, "manifest.json"))
    return EXIT_OK


def cmd_invariant_bias(cfg: ExperimentConfig, out_dir: str, seed, threads) -> int:
    timer = ManifestTimer()
    out_dir = _require_out(out_dir)
    potential = build_potential(cfg)
    base = build_scheme_params(cfg)
    spec = build_run_spec(cfg, potential, seed, threads)
    if spec.n_chains != 1:
        raise ConfigError("invariant-bias runs use run.n_chains = 1 (one long chain per delta)")
    grid = _delta_grid(cfg)
    f = make_observable(cfg.get_str("analysis.observable", "y-squared"), potential)
    mu_ref = (
        cfg.get_float("analysis.mu_reference") if "analysis.mu_reference" in cfg.values else None
    )

    report = invariant_bias_curve(
        f, grid, spec, potential, base, mu_reference=mu_ref,
        scheme=cfg.get_str("scheme.kind", "stopped"),
    )
    if reports.report_has_nan(report):
        print("numerical failure: NaN in invariant-bias report", file=sys.stderr)
        return EXIT_NUMERICAL

    reports.write_weak_error_csv(os.path.join(out_dir, "invariant_bias.csv"), report)
    reports.write_order_fit_csv(
        os.path.join(out_dir, "order_fit.csv"),
        [
            ("invariant_bias", report.fit, report.fit_points_used),
            ("richardson", report.richardson_fit, report.richardson_points_used),
        ],
    )
    reports.write_richardson_csv(os.path.join(out_dir, "richardson.csv"), report)
    plots.save_error_curve(
        report,
        os.path.join(out_dir, "invariant_bias.png"),
        f"stationary bias of {f.name}",
    )
    manifest = timer.build(
        cfg,
        spec.master_seed,
        ["invariant_bias.csv", "order_fit.csv", "richardson.csv", "invariant_bias.png"],
        __version__,
    )
    manifest.write(os.path.join(out_dir, "manifest.json"))
    return EXIT_OK


def cmd_check_potential(cfg: ExperimentConfig) -> int:
    potential = build_potential(cfg)
    n_probes = cfg.get_int("potential.probe_count", 8)
    probes = probe_ladder(potential, n_probes) if n_probes > 0 else []
    report = assumption_diagnostics(potential, probes)
    cols = ["U", "|grad|^2", "|hess|", "|hess|/|grad|^2", "lower_q", "upper_q"]
    print(("{:>14}" * len(cols)).format(*cols))
    for row in report.rows:
        print(
            "{:>14.5g}{:>14.5g}{:>14.5g}{:>14.5g}{:>14.5g}{:>14.5g}".format(
                row.energy, row.grad_norm_sq, row.hessian_norm,
                row.ratio, row.lower_q, row.upper_q,
            )
        )
    return EXIT_OK


def cmd_lyapunov_probe(cfg: ExperimentConfig, out_dir: str, seed, threads) -> int:
    timer = ManifestTimer()
    out_dir = _require_out(out_dir)
    potential = build_potential(cfg)
    params = build_scheme_params(cfg)
    lyap = build_lyapunov_params(cfg, params.beta)
    spec = build_run_spec(cfg, potential, seed, threads)
    n_samples = cfg.get_int("lyapunov.n_samples", 100_000)
    thr = threshold(params)

    probes: list[State] = []
    if "lyapunov.probe_x" in cfg.values:
        x = np.array(cfg.get_float_list("lyapunov.probe_x"))
        y = np.array(cfg.get_float_list("lyapunov.probe_y", "0," * (len(x) - 1) + "0"))
        probes.append(State(x, y))
    else:
        n_probes = cfg.get_int("lyapunov.n_probes", 10)
        h_lo = cfg.get_float("lyapunov.h_lo", 0.5) * thr
        h_hi = cfg.get_float("lyapunov.h_hi", 0.8) * thr
        x0 = potential.minimum()
        u0 = potential.energy(x0)
        if h_lo <= u0:
            raise ConfigError(
                f"probe energies start at {h_lo:.4g} but the minimum already has U={u0:.4g}"
            )
        probes = probe_states(potential, x0, u0, h_lo, h_hi, n_probes)

    rows = []
    ratios = []
    labels = []
    for i, probe in enumerate(probes):
        vb = lyapunov(probe, potential, params, lyap)
        stream = derive_stream(spec.master_seed, i, substream=spec.substream)
        mean, ci = lyapunov_drift_probe(probe, n_samples, stream, potential, params, lyap)
        label = f"H={hamiltonian(potential, probe):.3f}"
        rows.append((label, vb, mean, ci))
        ratios.append((mean - ci) / vb)
        labels.append(label)

    if any(math.isnan(v) for _, vb, m, c in rows for v in (vb, m, c)):
        print("numerical failure: NaN in drift probe", file=sys.stderr)
        return EXIT_NUMERICAL

    reports.write_lyapunov_csv(os.path.join(out_dir, "lyapunov_drift.csv"), rows)
    plots.save_drift_ratios(labels, ratios, os.path.join(out_dir, "lyapunov_drift.png"))
    manifest = timer.build(
        cfg, spec.master_seed, ["lyapunov_drift.csv", "lyapunov_drift.png"], __version__
    )
    manifest.write(os.path.join(out_dir, "manifest.json"))
    return EXIT_OK


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kinlang",
        description="thresholded kinetic Langevin sampling and weak-error studies",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, needs_out in [
        ("simulate", True),
        ("weak-error", True),
        ("invariant-bias", True),
        ("check-potential", False),
        ("lyapunov-probe", True),
    ]:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment config file")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override run.seed")
        p.add_argument("--threads", type=int, default=None, help="override run.threads")
        p.set_defaults(needs_out=needs_out)
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = parse_config(args.config)
        if args.command == "simulate":
            return cmd_simulate(cfg, args.out, args.seed, args.threads)
        if args.command == "weak-error":
            return cmd_weak_error(cfg, args.out, args.seed, args.threads)
        if args.command == "invariant-bias":
            return cmd_invariant_bias(cfg, args.out, args.seed, args.threads)
        if args.command == "check-potential":
            return cmd_check_potential(cfg)
        if args.command == "lyapunov-probe":
            return cmd_lyapunov_probe(cfg, args.out, args.seed, args.threads)
        raise ConfigError(f"unknown command: {args.command!r}")
    except (ConfigError, InvalidInputError, DomainError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EscapedEnsembleError as exc:
        print(
            f"escaped ensemble: {exc.escape_count}/{exc.n_chains} chains left the "
            f"domain (earliest at step {exc.first_escape_step})",
            file=sys.stderr,
        )
        return EXIT_ESCAPED
    except Exception as exc:  # pragma: no cover - safety net for exit-code contract
        traceback.print_exc()
        print(f"internal numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
