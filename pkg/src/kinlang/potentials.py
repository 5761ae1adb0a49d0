"""Potential energy surfaces, phase-space states and growth diagnostics.

All potentials map positions to [0, inf]; +inf marks configurations outside
the open domain where the dynamics make sense (for Lennard-Jones pairs, any
coincident particles). Energies and gradients never return NaN: singular
input either yields the +inf sentinel (energy) or raises DomainError
(gradient).

Potential objects are immutable after construction and all evaluation methods
are pure, so they can be shared freely between threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from . import kernels
from .errors import DomainError, InvalidInputError


@dataclass(frozen=True, eq=False)
class State:
    """A phase-space point: position x and velocity y of equal dimension."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=np.float64))
        object.__setattr__(self, "y", np.asarray(self.y, dtype=np.float64))
        if self.x.ndim != 1 or self.y.ndim != 1:
            raise InvalidInputError("state vectors must be one-dimensional")
        if self.x.shape[0] != self.y.shape[0]:
            raise InvalidInputError(
                f"position has length {self.x.shape[0]} but velocity has length {self.y.shape[0]}"
            )
        if self.x.shape[0] < 1:
            raise InvalidInputError("state must have dimension >= 1")

    @property
    def dim(self) -> int:
        return self.x.shape[0]

    def copy(self) -> "State":
        return State(self.x.copy(), self.y.copy())


class Potential:
    """Base class; concrete potentials fill in the kernel encoding and formulas."""

    kind: str = ""
    dim: int = 0
    # kernel encoding; None for potentials the compiled kernels cannot run
    kind_code: int | None = None
    kernel_params: np.ndarray | None = None

    def _check_dim(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.dim,):
            raise InvalidInputError(
                f"{self.kind} potential has dimension {self.dim}, got position of shape {x.shape}"
            )
        return x

    def energy(self, x) -> float:
        """U(x); +inf when x lies outside the domain."""
        x = self._check_dim(x)
        u = float(kernels.energy_point(self.kind_code, self.kernel_params, x))
        if math.isnan(u):
            raise DomainError("energy evaluation produced NaN")
        return u

    def gradient(self, x) -> np.ndarray:
        x = self._check_dim(x)
        if not math.isfinite(kernels.energy_point(self.kind_code, self.kernel_params, x)):
            raise DomainError("gradient requested outside the potential domain")
        out = np.empty(self.dim)
        kernels.gradient_point(self.kind_code, self.kernel_params, x, out)
        return out

    def energy_many(self, X: np.ndarray) -> np.ndarray:
        """Vectorised U over rows of X, shape (m, dim) -> (m,)."""
        raise NotImplementedError

    def gradient_many(self, X: np.ndarray) -> np.ndarray:
        """Vectorised gradient over rows of X; rows must lie inside the domain."""
        raise NotImplementedError

    def minimum(self) -> np.ndarray:
        """A global minimiser of the potential."""
        raise NotImplementedError


class HarmonicPotential(Potential):
    """U(x) = stiffness * |x|^2 / 2 on all of R^d."""

    kind = "harmonic"

    def __init__(self, dim: int, stiffness: float = 1.0):
        if dim < 1:
            raise InvalidInputError("dimension must be >= 1")
        if stiffness <= 0:
            raise InvalidInputError("stiffness must be positive")
        self.dim = int(dim)
        self.stiffness = float(stiffness)
        self.kind_code = kernels.KIND_HARMONIC
        self.kernel_params = np.array([self.stiffness])

    def energy_many(self, X):
        X = np.asarray(X, dtype=np.float64)
        return 0.5 * self.stiffness * np.sum(X * X, axis=-1)

    def gradient_many(self, X):
        return self.stiffness * np.asarray(X, dtype=np.float64)

    def minimum(self):
        return np.zeros(self.dim)


class DoubleWellPotential(Potential):
    """U(x) = sum_i well_scale * (x_i^2 - 1)^2, wells at every x_i = +-1."""

    kind = "double-well"

    def __init__(self, dim: int, well_scale: float = 1.0):
        if dim < 1:
            raise InvalidInputError("dimension must be >= 1")
        if well_scale <= 0:
            raise InvalidInputError("well_scale must be positive")
        self.dim = int(dim)
        self.well_scale = float(well_scale)
        self.kind_code = kernels.KIND_DOUBLE_WELL
        self.kernel_params = np.array([self.well_scale])

    def energy_many(self, X):
        X = np.asarray(X, dtype=np.float64)
        q = X * X - 1.0
        return self.well_scale * np.sum(q * q, axis=-1)

    def gradient_many(self, X):
        X = np.asarray(X, dtype=np.float64)
        return 4.0 * self.well_scale * X * (X * X - 1.0)

    def minimum(self):
        return np.ones(self.dim)


class LennardJonesConfined(Potential):
    """N particles with pairwise Lennard-Jones repulsion/attraction in a
    quadratic confining trap.

    Each unordered pair contributes 4*eps*((sigma/r)^12 - (sigma/r)^6) + eps;
    the +eps shift lifts the pair minimum to zero so the total potential is
    non-negative without touching the forces. Confinement adds
    confinement_stiffness * |x|^2 / 2 over all coordinates. The domain
    excludes coincident particles, where the energy is +inf.
    """

    kind = "lennard-jones-confined"

    def __init__(
        self,
        n_particles: int,
        space_dim: int,
        confinement_stiffness: float = 1.0,
        epsilon: float = 1.0,
        sigma: float = 1.0,
    ):
        if n_particles < 2:
            raise InvalidInputError("need at least 2 particles for pair interactions")
        if space_dim < 1:
            raise InvalidInputError("space dimension must be >= 1")
        if confinement_stiffness <= 0 or epsilon <= 0 or sigma <= 0:
            raise InvalidInputError("confinement stiffness, epsilon and sigma must be positive")
        self.n_particles = int(n_particles)
        self.space_dim = int(space_dim)
        self.confinement_stiffness = float(confinement_stiffness)
        self.epsilon = float(epsilon)
        self.sigma = float(sigma)
        self.dim = self.n_particles * self.space_dim
        self.kind_code = kernels.KIND_LJ_CONFINED
        self.kernel_params = np.array(
            [
                float(self.n_particles),
                float(self.space_dim),
                self.confinement_stiffness,
                self.epsilon,
                self.sigma,
            ]
        )

    def _pair_r2(self, X):
        """Squared pair distances; X shaped (m, dim) -> (m, n_pairs)."""
        m = X.shape[0]
        P = X.reshape(m, self.n_particles, self.space_dim)
        out = []
        for i in range(self.n_particles):
            for j in range(i + 1, self.n_particles):
                diff = P[:, i, :] - P[:, j, :]
                out.append(np.sum(diff * diff, axis=-1))
        return np.stack(out, axis=-1)

    def energy_many(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        conf = 0.5 * self.confinement_stiffness * np.sum(X * X, axis=-1)
        r2 = self._pair_r2(X)
        sig2 = self.sigma * self.sigma
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            inv6 = np.where(r2 > 0.0, (sig2 / r2) ** 3, np.inf)
            pair = 4.0 * self.epsilon * (inv6 * inv6 - inv6) + self.epsilon
        pair = np.where(np.isinf(inv6), np.inf, pair)
        return conf + np.sum(pair, axis=-1)

    def gradient_many(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        m = X.shape[0]
        P = X.reshape(m, self.n_particles, self.space_dim)
        out = self.confinement_stiffness * P.copy()
        sig2 = self.sigma * self.sigma
        for i in range(self.n_particles):
            for j in range(i + 1, self.n_particles):
                diff = P[:, i, :] - P[:, j, :]
                r2 = np.sum(diff * diff, axis=-1)
                inv6 = (sig2 / r2) ** 3
                coef = 24.0 * self.epsilon * (inv6 - 2.0 * inv6 * inv6) / r2
                out[:, i, :] += coef[:, None] * diff
                out[:, j, :] -= coef[:, None] * diff
        return out.reshape(m, self.dim)

    def pair_separation_at_minimum(self) -> float:
        """Dimer distance minimising pair energy plus confinement."""

        def total(r):
            s6 = (self.sigma / r) ** 6
            return (
                0.25 * self.confinement_stiffness * r * r
                + 4.0 * self.epsilon * (s6 * s6 - s6)
                + self.epsilon
            )

        res = optimize.minimize_scalar(
            total, bounds=(0.5 * self.sigma, 3.0 * self.sigma), method="bounded"
        )
        return float(res.x)

    def minimum(self):
        if self.n_particles == 2:
            r = self.pair_separation_at_minimum()
            x = np.zeros(self.dim)
            x[0] = 0.5 * r
            x[self.space_dim] = -0.5 * r
            return x
        # seed particles on a ring (first two coordinates), then polish
        x0 = np.zeros((self.n_particles, self.space_dim))
        radius = self.sigma * max(1.0, self.n_particles / 4.0)
        for i in range(self.n_particles):
            ang = 2.0 * np.pi * i / self.n_particles
            x0[i, 0] = radius * np.cos(ang)
            x0[i, min(1, self.space_dim - 1)] = radius * np.sin(ang)
        res = optimize.minimize(
            lambda v: self.energy_many(v[None, :])[0],
            x0.ravel(),
            jac=lambda v: self.gradient_many(v[None, :])[0],
            method="L-BFGS-B",
        )
        return np.asarray(res.x)


class CompositePotential(Potential):
    """Pointwise sum of several potentials of equal dimension.

    Composite surfaces have no compiled-kernel encoding; samplers fall back to
    the slower per-step Python path for them.
    """

    kind = "composite"

    def __init__(self, parts):
        parts = list(parts)
        if not parts:
            raise InvalidInputError("composite potential needs at least one part")
        dims = {p.dim for p in parts}
        if len(dims) != 1:
            raise InvalidInputError(f"composite parts disagree on dimension: {sorted(dims)}")
        self.parts = parts
        self.dim = parts[0].dim
        self.kind_code = None
        self.kernel_params = None

    def energy(self, x) -> float:
        x = self._check_dim(x)
        u = 0.0
        for p in self.parts:
            u += p.energy(x)
            if u == np.inf:
                return np.inf
        if math.isnan(u):
            raise DomainError("energy evaluation produced NaN")
        return float(u)

    def gradient(self, x) -> np.ndarray:
        x = self._check_dim(x)
        if not math.isfinite(self.energy(x)):
            raise DomainError("gradient requested outside the potential domain")
        g = np.zeros(self.dim)
        for p in self.parts:
            g += p.gradient(x)
        return g

    def energy_many(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return sum(p.energy_many(X) for p in self.parts)

    def gradient_many(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return sum(p.gradient_many(X) for p in self.parts)

    def minimum(self):
        res = optimize.minimize(
            lambda v: self.energy_many(v[None, :])[0],
            self.parts[0].minimum(),
            jac=lambda v: self.gradient_many(v[None, :])[0],
            method="L-BFGS-B",
        )
        return np.asarray(res.x)


def make_potential(kind: str, **params) -> Potential:
    """Build a potential from its config-file name and parameters."""
    if kind == "harmonic":
        return HarmonicPotential(
            dim=params.get("n_particles", 1) * params.get("space_dim", 1),
            stiffness=params.get("stiffness", 1.0),
        )
    if kind == "double-well":
        return DoubleWellPotential(
            dim=params.get("n_particles", 1) * params.get("space_dim", 1),
            well_scale=params.get("well_scale", 1.0),
        )
    if kind == "lennard-jones-confined":
        return LennardJonesConfined(
            n_particles=params.get("n_particles", 2),
            space_dim=params.get("space_dim", 2),
            confinement_stiffness=params.get("confinement_stiffness", 1.0),
            epsilon=params.get("lj_epsilon", 1.0),
            sigma=params.get("lj_sigma", 1.0),
        )
    raise InvalidInputError(f"unknown potential kind: {kind!r}")


def hamiltonian(potential: Potential, state: State) -> float:
    """H(x, y) = U(x) + |y|^2 / 2, +inf exactly when U(x) is."""
    if state.dim != potential.dim:
        raise InvalidInputError(
            f"state dimension {state.dim} does not match potential dimension {potential.dim}"
        )
    u = potential.energy(state.x)
    kin = 0.5 * float(np.sum(state.y * state.y))
    return u + kin


def hamiltonian_many(potential: Potential, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    return potential.energy_many(X) + 0.5 * np.sum(Y * Y, axis=-1)


@dataclass
class DiagnosticRow:
    """Growth-condition quantities at one probe point.

    ratio       |hessian| / |grad|^2, which should fall toward the singularity
    lower_q     |grad|^2 / U^(2 - 2/eta_inf)  (bounded below when U is large)
    upper_q     |grad|^2 / U^(2 + 2/eta_0)    (bounded above when U is large)
    """

    energy: float
    grad_norm_sq: float
    hessian_norm: float
    ratio: float
    lower_q: float
    upper_q: float


@dataclass
class DiagnosticsReport:
    eta0: float
    eta_inf: float
    rows: list[DiagnosticRow] = field(default_factory=list)


def hessian_fd(potential: Potential, x, h: float = 1e-4) -> np.ndarray:
    """Hessian by central differences of the analytic gradient."""
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[0]
    H = np.empty((d, d))
    for j in range(d):
        xp = x.copy()
        xm = x.copy()
        xp[j] += h
        xm[j] -= h
        H[:, j] = (potential.gradient(xp) - potential.gradient(xm)) / (2.0 * h)
    return 0.5 * (H + H.T)


def assumption_diagnostics(
    potential: Potential,
    probe_points,
    eta0: float = 12.0,
    eta_inf: float = 2.0,
) -> DiagnosticsReport:
    """Evaluate the singularity-growth quantities at each probe point.

    Probe points should lie inside the domain, ordered by increasing energy,
    so the ratio column can be read as an approach to the singular set. The
    report makes no pass/fail decision.
    """
    report = DiagnosticsReport(eta0=eta0, eta_inf=eta_inf)
    for x in probe_points:
        u = potential.energy(x)
        if not math.isfinite(u):
            raise DomainError("probe point lies outside the potential domain")
        g = potential.gradient(x)
        g2 = float(g @ g)
        hn = float(np.linalg.norm(hessian_fd(potential, x), 2))
        ratio = hn / g2 if g2 > 0 else math.inf
        if u > 0:
            lower_q = g2 / u ** (2.0 - 2.0 / eta_inf)
            upper_q = g2 / u ** (2.0 + 2.0 / eta0)
        else:
            lower_q = math.nan
            upper_q = math.nan
        report.rows.append(DiagnosticRow(u, g2, hn, ratio, lower_q, upper_q))
    return report


def probe_ladder(potential: Potential, n_probes: int = 8) -> list[np.ndarray]:
    """Default probe points of increasing energy for growth diagnostics.

    For pair potentials the ladder shrinks a dimer toward collision; for the
    single-well kinds it walks out along the first axis.
    """
    probes = []
    if isinstance(potential, LennardJonesConfined):
        # start one rung below the minimum separation; at the minimum itself
        # the gradient vanishes and the ratio column is meaningless
        r_star = potential.pair_separation_at_minimum()
        for k in range(n_probes):
            r = r_star * 0.92 ** (k + 1)
            x = np.zeros(potential.dim)
            x[0] = 0.5 * r
            x[potential.space_dim] = -0.5 * r
            probes.append(x)
    else:
        base = potential.minimum()
        for k in range(n_probes):
            x = base.copy()
            x[0] += 0.75 * (k + 1)
            probes.append(x)
    return probes
