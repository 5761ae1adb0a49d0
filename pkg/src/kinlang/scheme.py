"""One-step maps of the energy-thresholded symplectic scheme.

The proposal map updates velocity first, then position with the fresh
velocity:

    y' = y - delta * grad U(x) - delta * gamma * y + sqrt(2 gamma delta / beta) g
    x' = x + delta * y'

The thresholded ("stopped") variant accepts the proposal only while its total
energy H = U + |y|^2/2 stays below delta^(-l); otherwise the chain keeps its
current state for that step. The plain variant accepts unconditionally and
signals an escape once a proposal stops being numerically meaningful.

Every step consumes exactly d standard normal draws from its stream whether
or not the proposal is accepted, so trajectories are reproducible from seeds
alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, EscapedDomain, InvalidInputError
from .potentials import Potential, State, hamiltonian

# Potential energies above this value have left the regime where double
# precision dynamics mean anything; the plain scheme treats them as having
# escaped the domain. Exact +inf is unreachable in floating point even for
# trajectories that are already physically meaningless, so the ceiling is the
# practical realisation of "outside the domain".
DEFAULT_ESCAPE_ENERGY = 1e9


@dataclass(frozen=True)
class SchemeParams:
    """Time step, friction, inverse temperature and threshold exponent.

    gamma = 0 turns both friction and noise off, giving the deterministic
    Hamiltonian map (useful for energy-conservation checks).
    """

    delta: float
    gamma: float
    beta: float
    l: float = 0.1

    def __post_init__(self):
        if self.delta <= 0:
            raise InvalidInputError("delta must be positive")
        if self.gamma < 0:
            raise InvalidInputError("gamma must be non-negative")
        if self.beta <= 0:
            raise InvalidInputError("beta must be positive")
        if not 0 < self.l <= 0.5:
            raise InvalidInputError("threshold exponent l must lie in (0, 0.5]")
        if self.delta * self.gamma >= 1:
            raise InvalidInputError("need delta * gamma < 1 for a contractive friction update")


@dataclass(frozen=True)
class LyapunovParams:
    """Exponent and cutoff radii of the drift-diagnostic function."""

    b: float
    r1: float = 10.0
    r2: float = 20.0

    def __post_init__(self):
        if self.b <= 0:
            raise InvalidInputError("b must be positive")
        if not 0 < self.r1 < self.r2:
            raise InvalidInputError("need 0 < r1 < r2")


@dataclass(frozen=True)
class StepOutcome:
    state: State
    accepted: bool


def threshold(params: SchemeParams) -> float:
    """Energy ceiling delta^(-l) of the acceptance region."""
    return params.delta ** (-params.l)


def noise_coefficient(params: SchemeParams) -> float:
    """Prefactor sqrt(2 gamma delta / beta) of the Gaussian kick."""
    return math.sqrt(2.0 * params.gamma * params.delta / params.beta)


def propose(state: State, gaussian, potential: Potential, params: SchemeParams) -> State:
    """The proposal map applied to one state with a given normal draw."""
    g = np.asarray(gaussian, dtype=np.float64)
    if g.shape != (state.dim,):
        raise InvalidInputError(f"need {state.dim} gaussian draws, got shape {g.shape}")
    grad = potential.gradient(state.x)  # raises DomainError outside the domain
    delta, gamma = params.delta, params.gamma
    sq = noise_coefficient(params)
    y_new = state.y - delta * grad - delta * gamma * state.y + sq * g
    x_new = state.x + delta * y_new
    return State(x_new, y_new)


def step_stopped(
    state: State,
    rng_stream,
    potential: Potential,
    params: SchemeParams,
) -> StepOutcome:
    """One thresholded step; on rejection the input state is returned unchanged."""
    if not math.isfinite(potential.energy(state.x)):
        raise DomainError("chain state lies outside the potential domain")
    g = rng_stream.standard_normal(state.dim)
    prop = propose(state, g, potential, params)
    if hamiltonian(potential, prop) <= threshold(params):
        return StepOutcome(prop, True)
    return StepOutcome(state, False)


def step_unstopped(
    state: State,
    rng_stream,
    potential: Potential,
    params: SchemeParams,
    escape_energy: float = DEFAULT_ESCAPE_ENERGY,
) -> State:
    """One unconditional step.

    Raises EscapedDomain (carrying the pre-step state) when the proposal is
    non-finite or its potential energy exceeds ``escape_energy``.
    """
    if not math.isfinite(potential.energy(state.x)):
        raise DomainError("chain state lies outside the potential domain")
    g = rng_stream.standard_normal(state.dim)
    prop = propose(state, g, potential, params)
    u = potential.energy(prop.x)
    if not (u <= escape_energy) or not (
        np.all(np.isfinite(prop.x)) and np.all(np.isfinite(prop.y))
    ):
        raise EscapedDomain(state)
    return prop


def smooth_cutoff(theta, r1: float, r2: float):
    """C^2 ramp: 0 below r1, 1 above r2, quintic smoothstep in between."""
    u = np.clip((np.asarray(theta, dtype=np.float64) - r1) / (r2 - r1), 0.0, 1.0)
    return u * u * u * (u * (6.0 * u - 15.0) + 10.0)


def coupling_zeta(dim: int, params: SchemeParams) -> float:
    """Coupling constant 4 d gamma / beta of the velocity-gradient correction."""
    return 4.0 * dim * params.gamma / params.beta


def lyapunov(
    state: State,
    potential: Potential,
    params: SchemeParams,
    lyap: LyapunovParams,
) -> float:
    """exp(b (H + zeta h(U) y.grad U / (1 + |grad U|^2))), the drift diagnostic."""
    if lyap.b >= params.beta:
        raise InvalidInputError("lyapunov exponent b must be below beta")
    u = potential.energy(state.x)
    if not math.isfinite(u):
        raise DomainError("lyapunov function requested outside the potential domain")
    grad = potential.gradient(state.x)
    h = u + 0.5 * float(np.sum(state.y * state.y))
    corr = (
        coupling_zeta(state.dim, params)
        * float(smooth_cutoff(u, lyap.r1, lyap.r2))
        * float(state.y @ grad)
        / (1.0 + float(grad @ grad))
    )
    return math.exp(lyap.b * (h + corr))


def _lyapunov_many(X, Y, potential, params, lyap):
    u = potential.energy_many(X)
    grad = potential.gradient_many(X)
    h = u + 0.5 * np.sum(Y * Y, axis=-1)
    g2 = np.sum(grad * grad, axis=-1)
    corr = (
        coupling_zeta(X.shape[-1], params)
        * smooth_cutoff(u, lyap.r1, lyap.r2)
        * np.sum(Y * grad, axis=-1)
        / (1.0 + g2)
    )
    return np.exp(lyap.b * (h + corr))


def probe_states(
    potential: Potential,
    x0: np.ndarray,
    u0: float,
    h_lo: float,
    h_hi: float,
    n_probes: int,
) -> list[State]:
    """Kinetic-heavy probe states with energies spanning [h_lo, h_hi].

    Velocities point along soft curvature directions: at finite delta, a
    velocity into a direction where |hess U| is large picks up a positive
    delta^2 |hess U| |y|^2 energy term that can mask the order-delta
    contraction. For the confined pair potential the stiff directions are the
    separation coordinates of the dimer minimum (every space_dim-th axis), so
    those are skipped when alternatives exist.
    """
    from .potentials import LennardJonesConfined

    if h_lo <= u0:
        raise InvalidInputError("probe energies must exceed the potential minimum")
    axes = list(range(potential.dim))
    if isinstance(potential, LennardJonesConfined) and potential.space_dim > 1:
        axes = [i for i in axes if i % potential.space_dim != 0]
    probes = []
    for i in range(n_probes):
        h_target = h_lo + (h_hi - h_lo) * (i / max(n_probes - 1, 1))
        speed = math.sqrt(2.0 * (h_target - u0))
        y = np.zeros(potential.dim)
        axis = axes[i % len(axes)]
        y[axis] = speed if (i // len(axes)) % 2 == 0 else -speed
        probes.append(State(x0.copy(), y))
    return probes


def lyapunov_drift_probe(
    state: State,
    n_samples: int,
    rng_stream,
    potential: Potential,
    params: SchemeParams,
    lyap: LyapunovParams,
) -> tuple[float, float]:
    """Monte Carlo estimate of E[V(Z_1)] after one thresholded step from ``state``.

    Returns (mean, 95% confidence half-width). Rejected proposals contribute
    V(state) itself, mirroring the frozen chain.
    """
    if n_samples < 2:
        raise InvalidInputError("need at least 2 samples for a drift probe")
    if lyap.b >= params.beta:
        raise InvalidInputError("lyapunov exponent b must be below beta")
    u0 = potential.energy(state.x)
    if not math.isfinite(u0):
        raise DomainError("drift probe requested outside the potential domain")

    g = np.asarray(rng_stream.standard_normal((n_samples, state.dim)))
    delta, gamma = params.delta, params.gamma
    grad0 = potential.gradient(state.x)
    yp = state.y - delta * grad0 - delta * gamma * state.y + noise_coefficient(params) * g
    xp = state.x + delta * yp
    h_prop = potential.energy_many(xp) + 0.5 * np.sum(yp * yp, axis=-1)
    accepted = h_prop <= threshold(params)

    values = np.full(
        n_samples, lyapunov(state, potential, params, lyap), dtype=np.float64
    )
    if np.any(accepted):
        values[accepted] = _lyapunov_many(xp[accepted], yp[accepted], potential, params, lyap)
    if np.ptp(values) == 0.0:  # degenerate stream: exactly zero spread
        return float(values[0]), 0.0
    mean = float(np.mean(values))
    ci = 1.96 * float(np.std(values, ddof=1)) / math.sqrt(n_samples)
    return mean, ci
