"""Weak-error curves, order fits, Richardson combination, invariant-measure
bias and generator-based stationarity checks.

Conventions
-----------
Observable expectations at a finite horizon t are estimated over independent
ensembles; one ensemble per step size, with substreams derived from the same
master seed so no randomness is shared across step sizes. Whenever t is not
an integer multiple of a step size, the chain runs round(t/delta) steps and
the reference is evaluated at the realised horizon n*delta, which keeps every
error a true same-time comparison. Richardson combinations are only formed
for halving pairs whose realised horizons agree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InsufficientSignalError, InvalidInputError
from .observables import Observable, PolynomialObservable
from .potentials import HarmonicPotential, Potential, State
from .sampler import RunSpec, ergodic_average, run_ensemble
from .scheme import SchemeParams

_GRID_SUBSTREAM = 1  # substream offsets reserved per delta level
_REF_SUBSTREAM = 101  # offsets for fine-step reference ensembles


# ---------------------------------------------------------------------------
# references


@dataclass(frozen=True)
class ReferenceSolution:
    """What the scheme estimates are compared against.

    kind "analytic-linear": exact mean of the linear dynamics (quadratic
    potential, linear observable); contributes zero uncertainty.
    kind "fine-step": the same scheme at a much smaller step, used as a
    self-consistent stand-in; contributes Monte Carlo uncertainty.
    """

    kind: str
    stiffness: float | None = None
    delta_ref: float | None = None
    n_chains: int | None = None

    def __post_init__(self):
        if self.kind not in ("analytic-linear", "fine-step"):
            raise InvalidInputError(f"unknown reference kind: {self.kind!r}")
        if self.kind == "fine-step" and (self.delta_ref is None or self.delta_ref <= 0):
            raise InvalidInputError("fine-step reference needs a positive delta_ref")


def expm_kinetic_block(stiffness: float, gamma: float, t: float) -> np.ndarray:
    """Closed-form exp(t. M) for M = [[0, 1], [-stiffness, -gamma]].

    Uses the eigendecomposition of the 2x2 block, with the defective
    (repeated-root) case handled by the Jordan form.
    """
    M = np.array([[0.0, 1.0], [-stiffness, -gamma]])
    disc = complex(gamma * gamma - 4.0 * stiffness)
    root = np.sqrt(disc)
    lp = (-gamma + root) / 2.0
    lm = (-gamma - root) / 2.0
    eye = np.eye(2)
    scale = max(1.0, abs(lp), abs(lm))
    if abs(lp - lm) > 1e-12 * scale:
        E = (np.exp(lp * t) * (M - lm * eye) - np.exp(lm * t) * (M - lp * eye)) / (lp - lm)
    else:
        lam = -gamma / 2.0
        E = np.exp(lam * t) * (eye + t * (M - lam * eye))
    return np.real(E)


def analytic_mean_linear(init: State, t: float, gamma: float, stiffness: float) -> State:
    """Exact mean state of the continuous dynamics for a quadratic potential.

    Coordinates decouple into (x_i, y_i) pairs sharing one 2x2 matrix
    exponential; the additive noise does not move the mean.
    """
    if t < 0:
        raise InvalidInputError("time must be >= 0")
    if stiffness < 0:
        raise InvalidInputError("quadratic stiffness must be >= 0")
    if t == 0:
        return init.copy()
    E = expm_kinetic_block(stiffness, gamma, t)
    x = E[0, 0] * init.x + E[0, 1] * init.y
    y = E[1, 0] * init.x + E[1, 1] * init.y
    return State(x, y)


# ---------------------------------------------------------------------------
# report containers


@dataclass
class OrderFit:
    order: float
    coefficient: float
    points_used: int


@dataclass
class RichardsonRow:
    delta_coarse: float
    delta_fine: float
    combined: float
    error: float
    ci: float


@dataclass
class ErrorReport:
    observable: str
    t: float | None
    delta_grid: np.ndarray
    n_steps: list[int]
    horizons: list[float]
    estimates: np.ndarray
    estimate_cis: np.ndarray
    references: np.ndarray
    reference_cis: np.ndarray
    errors: np.ndarray
    error_cis: np.ndarray
    fit: OrderFit | None = None
    fit_points_used: int = 0
    richardson_rows: list[RichardsonRow] = field(default_factory=list)
    richardson_fit: OrderFit | None = None
    richardson_points_used: int = 0


# ---------------------------------------------------------------------------
# fitting and Richardson combination


def fit_order(deltas, errors, cis) -> OrderFit:
    """Least-squares slope of log|error| against log delta.

    Grid points whose error does not rise above its own confidence half-width
    carry no usable signal and are dropped; fewer than three usable points
    raise InsufficientSignalError.
    """
    deltas = np.asarray(deltas, dtype=np.float64)
    errors = np.asarray(errors, dtype=np.float64)
    cis = np.asarray(cis, dtype=np.float64)
    usable = np.abs(errors) > cis
    n_used = int(np.count_nonzero(usable))
    if n_used < 3:
        raise InsufficientSignalError(n_used)
    d = deltas[usable]
    e = np.abs(errors[usable])
    slope, intercept = np.polyfit(np.log(d), np.log(e), 1)
    smallest = int(np.argmin(d))
    sign = math.copysign(1.0, errors[usable][smallest])
    return OrderFit(order=float(slope), coefficient=sign * math.exp(intercept), points_used=n_used)


def richardson(estimate_at_delta: float, estimate_at_half_delta: float) -> float:
    """First-order-cancelling combination 2 A(delta/2) - A(delta)."""
    return 2.0 * estimate_at_half_delta - estimate_at_delta


def _fit_into(report: ErrorReport):
    try:
        report.fit = fit_order(report.delta_grid, report.errors, report.error_cis)
        report.fit_points_used = report.fit.points_used
    except InsufficientSignalError as exc:
        report.fit = None
        report.fit_points_used = exc.points_used
    if report.richardson_rows:
        rd = [r.delta_coarse for r in report.richardson_rows]
        re_ = [r.error for r in report.richardson_rows]
        rc = [r.ci for r in report.richardson_rows]
        try:
            report.richardson_fit = fit_order(rd, re_, rc)
            report.richardson_points_used = report.richardson_fit.points_used
        except InsufficientSignalError as exc:
            report.richardson_fit = None
            report.richardson_points_used = exc.points_used


def _validate_grid(delta_grid):
    grid = np.asarray(delta_grid, dtype=np.float64)
    if grid.ndim != 1 or grid.shape[0] < 1:
        raise InvalidInputError("delta grid must be a non-empty 1-d sequence")
    if np.any(grid <= 0) or np.any(np.diff(grid) >= 0):
        raise InvalidInputError("delta grid must be positive and strictly decreasing")
    return grid


def steps_for_horizon(t: float, delta: float, allow_rounding: bool = True) -> int:
    ratio = t / delta
    n = int(round(ratio))
    if abs(ratio - n) > 1e-9:
        if not allow_rounding:
            raise InvalidInputError(
                f"horizon {t} is not an integer multiple of delta {delta}"
            )
        n = int(round(ratio))
    return max(n, 1)


def _halving_pairs(grid, horizons):
    pairs = []
    for i in range(len(grid) - 1):
        if abs(grid[i] - 2.0 * grid[i + 1]) <= 1e-9 * grid[i] and (
            horizons is None or abs(horizons[i] - horizons[i + 1]) <= 1e-9
        ):
            pairs.append(i)
    return pairs


# ---------------------------------------------------------------------------
# weak error at a finite horizon


def weak_error_curve(
    f: Observable,
    t: float,
    delta_grid,
    spec: RunSpec,
    potential: Potential,
    base: SchemeParams,
    reference: ReferenceSolution,
    chains_per_delta=None,
    allow_rounding: bool = True,
    scheme: str = "stopped",
) -> ErrorReport:
    """Estimate E[f] at time t for every step size and compare to the reference."""
    grid = _validate_grid(delta_grid)
    if reference.kind == "fine-step" and reference.delta_ref > grid.min() / 16:
        raise InvalidInputError("fine-step reference must refine the smallest delta 16x")
    if reference.kind == "analytic-linear":
        if not isinstance(potential, HarmonicPotential):
            raise InvalidInputError("analytic-linear reference requires a quadratic potential")
        if f.name != "first-coordinate":
            raise InvalidInputError(
                "analytic-linear reference covers the mean state; use the "
                "first-coordinate observable"
            )
        if not isinstance(spec.init, State):
            raise InvalidInputError("analytic-linear reference needs a fixed initial state")
    if chains_per_delta is not None and len(chains_per_delta) != len(grid):
        raise InvalidInputError("chains_per_delta must match the delta grid")

    n_steps, horizons = [], []
    est = np.empty(len(grid))
    est_ci = np.empty(len(grid))
    ref = np.empty(len(grid))
    ref_ci = np.empty(len(grid))
    for i, delta in enumerate(grid):
        n = steps_for_horizon(t, delta, allow_rounding)
        horizon = n * delta
        n_steps.append(n)
        horizons.append(horizon)
        params = replace(base, delta=float(delta))
        spec_i = replace(
            spec,
            n_chains=int(chains_per_delta[i]) if chains_per_delta is not None else spec.n_chains,
            n_steps=n,
            burn_in=0,
            substream=spec.substream + _GRID_SUBSTREAM + i,
        )
        res = run_ensemble(spec_i, potential, params, [f], scheme=scheme)
        est[i] = res.stats[f.name].mean
        est_ci[i] = res.stats[f.name].ci_halfwidth

        if reference.kind == "analytic-linear":
            mean_state = analytic_mean_linear(
                spec.init, horizon, base.gamma, reference.stiffness or potential.stiffness
            )
            ref[i] = mean_state.x[0]
            ref_ci[i] = 0.0
        else:
            n_ref = steps_for_horizon(horizon, reference.delta_ref, allow_rounding=True)
            params_ref = replace(base, delta=reference.delta_ref)
            spec_ref = replace(
                spec,
                n_chains=reference.n_chains or spec.n_chains,
                n_steps=n_ref,
                burn_in=0,
                substream=spec.substream + _REF_SUBSTREAM + i,
            )
            res_ref = run_ensemble(spec_ref, potential, params_ref, [f], scheme=scheme)
            ref[i] = res_ref.stats[f.name].mean
            ref_ci[i] = res_ref.stats[f.name].ci_halfwidth

    errors = est - ref
    error_cis = np.sqrt(est_ci**2 + ref_ci**2)
    report = ErrorReport(
        observable=f.name,
        t=t,
        delta_grid=grid,
        n_steps=n_steps,
        horizons=horizons,
        estimates=est,
        estimate_cis=est_ci,
        references=ref,
        reference_cis=ref_ci,
        errors=errors,
        error_cis=error_cis,
    )
    for i in _halving_pairs(grid, horizons):
        combined = richardson(est[i], est[i + 1])
        err = combined - ref[i]
        ci = math.sqrt(4.0 * est_ci[i + 1] ** 2 + est_ci[i] ** 2 + ref_ci[i] ** 2)
        report.richardson_rows.append(
            RichardsonRow(float(grid[i]), float(grid[i + 1]), combined, err, ci)
        )
    _fit_into(report)
    return report


# ---------------------------------------------------------------------------
# invariant-measure bias


def gibbs_moment(potential: Potential, f: Observable, beta: float) -> float:
    """Analytic stationary expectation for quadratic potentials and catalog
    observables; raises for anything without a closed form."""
    if not isinstance(potential, HarmonicPotential):
        raise InvalidInputError("analytic stationary values exist only for quadratic potentials")
    k = potential.stiffness
    d = potential.dim
    name = f.name
    if name == "x-squared":
        return 1.0 / (beta * k)
    if name == "y-squared":
        return 1.0 / beta
    if name in ("xy", "first-coordinate"):
        return 0.0
    if name == "hamiltonian":
        return d / beta
    if name in ("kinetic-energy", "potential-energy"):
        return d / (2.0 * beta)
    if name.startswith("exp-bh:"):
        b = float(name.split(":", 1)[1])
        if not 0 < b < beta:
            raise InvalidInputError("exp-bh moment needs 0 < b < beta")
        return (beta / (beta - b)) ** d
    raise InvalidInputError(f"no analytic stationary value for observable {name!r}")


def invariant_bias_curve(
    f: Observable,
    delta_grid,
    spec: RunSpec,
    potential: Potential,
    base: SchemeParams,
    mu_reference: float | None = None,
    scheme: str = "stopped",
) -> ErrorReport:
    """Long-run averages per step size minus the continuous stationary value."""
    grid = _validate_grid(delta_grid)
    if spec.n_chains != 1:
        raise InvalidInputError("invariant-bias runs use a single chain per delta")
    mu_ref = gibbs_moment(potential, f, base.beta) if mu_reference is None else float(mu_reference)

    est = np.empty(len(grid))
    est_ci = np.empty(len(grid))
    for i, delta in enumerate(grid):
        params = replace(base, delta=float(delta))
        spec_i = replace(spec, substream=spec.substream + _GRID_SUBSTREAM + i)
        est[i], est_ci[i] = ergodic_average(spec_i, potential, params, f, scheme=scheme)

    errors = est - mu_ref
    report = ErrorReport(
        observable=f.name,
        t=None,
        delta_grid=grid,
        n_steps=[spec.n_steps] * len(grid),
        horizons=[math.nan] * len(grid),
        estimates=est,
        estimate_cis=est_ci,
        references=np.full(len(grid), mu_ref),
        reference_cis=np.zeros(len(grid)),
        errors=errors,
        error_cis=est_ci.copy(),
    )
    for i in _halving_pairs(grid, None):
        combined = richardson(est[i], est[i + 1])
        err = combined - mu_ref
        ci = math.sqrt(4.0 * est_ci[i + 1] ** 2 + est_ci[i] ** 2)
        report.richardson_rows.append(
            RichardsonRow(float(grid[i]), float(grid[i + 1]), combined, err, ci)
        )
    _fit_into(report)
    return report


# ---------------------------------------------------------------------------
# generator and stationarity


def apply_generator(
    f: Observable,
    state: State,
    potential: Potential,
    params: SchemeParams,
) -> float:
    """Pointwise L f = y.grad_x f - grad U.grad_y f - gamma y.grad_y f
    + (gamma/beta) lap_y f, the generator of the continuous dynamics."""
    if not isinstance(f, PolynomialObservable):
        raise InvalidInputError(
            f"observable {f.name!r} has no registered derivatives; "
            "generator application needs a polynomial observable"
        )
    grad_u = potential.gradient(state.x)
    gx = f.grad_x(state)
    gy = f.grad_y(state)
    lap = f.laplacian_y(state)
    return float(
        state.y @ gx
        - grad_u @ gy
        - params.gamma * (state.y @ gy)
        + params.gamma / params.beta * lap
    )


def generator_values(
    f: PolynomialObservable,
    X: np.ndarray,
    Y: np.ndarray,
    potential: Potential,
    params: SchemeParams,
) -> np.ndarray:
    """Vectorised L f over rows of (X, Y)."""
    grad_u = potential.gradient_many(X)
    gx = f.grad_x_many(X, Y)
    gy = f.grad_y_many(X, Y)
    lap = f.laplacian_y_many(X, Y)
    return (
        np.sum(Y * gx, axis=-1)
        - np.sum(grad_u * gy, axis=-1)
        - params.gamma * np.sum(Y * gy, axis=-1)
        + params.gamma / params.beta * lap
    )


@dataclass
class GeneratorCheckReport:
    observable: str
    estimate: float
    ci: float
    passed: bool

    @property
    def verdict(self) -> str:
        return "pass" if self.passed else "fail"


def sample_gibbs_quadratic(
    potential: HarmonicPotential, beta: float, n: int, rng
) -> tuple[np.ndarray, np.ndarray]:
    """Exact draws from the stationary law of a quadratic potential:
    independent Gaussians with Var(x_i) = 1/(beta k), Var(y_i) = 1/beta."""
    if not isinstance(potential, HarmonicPotential):
        raise InvalidInputError("exact stationary sampling exists only for quadratic potentials")
    X = rng.standard_normal((n, potential.dim)) / math.sqrt(beta * potential.stiffness)
    Y = rng.standard_normal((n, potential.dim)) / math.sqrt(beta)
    return X, Y


def stationarity_check(
    f: Observable,
    gibbs_samples,
    potential: Potential,
    params: SchemeParams,
) -> GeneratorCheckReport:
    """Sample mean of L f over stationary draws; passes when it is zero
    within three confidence half-widths."""
    if isinstance(gibbs_samples, tuple):
        X, Y = gibbs_samples
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    else:
        states = list(gibbs_samples)
        if not states:
            raise InvalidInputError("stationarity check needs at least one sample")
        X = np.stack([s.x for s in states])
        Y = np.stack([s.y for s in states])
    if X.shape[0] == 0:
        raise InvalidInputError("stationarity check needs at least one sample")
    if not isinstance(f, PolynomialObservable):
        raise InvalidInputError(
            f"observable {f.name!r} has no registered derivatives; "
            "generator application needs a polynomial observable"
        )
    vals = generator_values(f, X, Y, potential, params)
    n = vals.shape[0]
    mean = float(np.mean(vals))
    ci = 1.96 * float(np.std(vals, ddof=1)) / math.sqrt(n) if n > 1 else 0.0
    return GeneratorCheckReport(f.name, mean, ci, passed=abs(mean) <= 3.0 * ci)
