"""Phase-space observables: the built-in catalog plus polynomial observables
with analytic derivatives (needed to apply the process generator pointwise).

Catalog names accepted by :func:`make_observable`:

    hamiltonian, potential-energy, kinetic-energy, first-coordinate,
    x-squared, y-squared, xy, exp-bh:<b>, poly:<expression>

Polynomial expressions are sums of terms like ``2.5 x1^2 y1`` joined by '+',
with variables x1..xd and y1..yd (1-based coordinate indices).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .potentials import Potential, State


class Observable:
    """A named real function of phase-space states."""

    def __init__(self, name: str):
        self.name = name

    def __call__(self, state: State) -> float:
        return float(self.evaluate_many(state.x[None, :], state.y[None, :])[0])

    def evaluate_many(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class FunctionObservable(Observable):
    def __init__(self, name: str, fn_many):
        super().__init__(name)
        self._fn_many = fn_many

    def evaluate_many(self, X, Y):
        return self._fn_many(X, Y)


@dataclass(frozen=True)
class Monomial:
    """coeff * prod x_i^p * prod y_j^q with 0-based coordinate indices."""

    coeff: float
    x_powers: tuple[tuple[int, int], ...] = ()
    y_powers: tuple[tuple[int, int], ...] = ()


class PolynomialObservable(Observable):
    """Polynomial in the coordinates of (x, y) with analytic derivatives."""

    def __init__(self, name: str, terms):
        super().__init__(name)
        self.terms = tuple(terms)

    def evaluate_many(self, X, Y):
        X = np.atleast_2d(X)
        Y = np.atleast_2d(Y)
        total = np.zeros(X.shape[0])
        for t in self.terms:
            v = np.full(X.shape[0], t.coeff)
            for i, p in t.x_powers:
                v = v * X[:, i] ** p
            for j, q in t.y_powers:
                v = v * Y[:, j] ** q
            total += v
        return total

    def _partial(self, t: Monomial, wrt_y: bool, k: int) -> Monomial | None:
        powers = dict(t.y_powers if wrt_y else t.x_powers)
        p = powers.get(k, 0)
        if p == 0:
            return None
        coeff = t.coeff * p
        if p == 1:
            del powers[k]
        else:
            powers[k] = p - 1
        if wrt_y:
            return Monomial(coeff, t.x_powers, tuple(sorted(powers.items())))
        return Monomial(coeff, tuple(sorted(powers.items())), t.y_powers)

    def _eval_terms(self, terms, x, y):
        total = 0.0
        for t in terms:
            v = t.coeff
            for i, p in t.x_powers:
                v *= x[i] ** p
            for j, q in t.y_powers:
                v *= y[j] ** q
            total += v
        return total

    def grad_x(self, state: State) -> np.ndarray:
        out = np.zeros(state.dim)
        for k in range(state.dim):
            parts = [d for t in self.terms if (d := self._partial(t, False, k))]
            out[k] = self._eval_terms(parts, state.x, state.y)
        return out

    def grad_y(self, state: State) -> np.ndarray:
        out = np.zeros(state.dim)
        for k in range(state.dim):
            parts = [d for t in self.terms if (d := self._partial(t, True, k))]
            out[k] = self._eval_terms(parts, state.x, state.y)
        return out

    def laplacian_y(self, state: State) -> float:
        total = 0.0
        for k in range(state.dim):
            first = [d for t in self.terms if (d := self._partial(t, True, k))]
            second = [d for t in first if (d := self._partial(t, True, k))]
            total += self._eval_terms(second, state.x, state.y)
        return total

    @staticmethod
    def _eval_terms_many(terms, X, Y):
        total = np.zeros(X.shape[0])
        for t in terms:
            v = np.full(X.shape[0], t.coeff)
            for i, p in t.x_powers:
                v = v * X[:, i] ** p
            for j, q in t.y_powers:
                v = v * Y[:, j] ** q
            total += v
        return total

    def grad_x_many(self, X, Y):
        out = np.zeros_like(X)
        for k in range(X.shape[1]):
            parts = [d for t in self.terms if (d := self._partial(t, False, k))]
            out[:, k] = self._eval_terms_many(parts, X, Y)
        return out

    def grad_y_many(self, X, Y):
        out = np.zeros_like(Y)
        for k in range(Y.shape[1]):
            parts = [d for t in self.terms if (d := self._partial(t, True, k))]
            out[:, k] = self._eval_terms_many(parts, X, Y)
        return out

    def laplacian_y_many(self, X, Y):
        total = np.zeros(X.shape[0])
        for k in range(Y.shape[1]):
            first = [d for t in self.terms if (d := self._partial(t, True, k))]
            second = [d for t in first if (d := self._partial(t, True, k))]
            total += self._eval_terms_many(second, X, Y)
        return total


_TERM_FACTOR = re.compile(r"^([xy])(\d+)(?:\^(\d+))?$")


def parse_polynomial(name: str, expression: str) -> PolynomialObservable:
    """Parse e.g. '2 x1^2 + -1.5 x1 y1' into a polynomial observable."""
    terms = []
    for raw in expression.split("+"):
        raw = raw.strip()
        if not raw:
            raise InvalidInputError(f"empty term in polynomial {expression!r}")
        coeff = 1.0
        xp: dict[int, int] = {}
        yp: dict[int, int] = {}
        for tok in raw.replace("*", " ").split():
            m = _TERM_FACTOR.match(tok)
            if m:
                idx = int(m.group(2)) - 1
                if idx < 0:
                    raise InvalidInputError(f"coordinate indices are 1-based: {tok!r}")
                pow_ = int(m.group(3) or 1)
                target = xp if m.group(1) == "x" else yp
                target[idx] = target.get(idx, 0) + pow_
            else:
                try:
                    coeff *= float(tok)
                except ValueError:
                    raise InvalidInputError(f"cannot parse polynomial factor {tok!r}") from None
        terms.append(Monomial(coeff, tuple(sorted(xp.items())), tuple(sorted(yp.items()))))
    return PolynomialObservable(name, terms)


def make_observable(name: str, potential: Potential) -> Observable:
    """Build a catalog observable bound to a potential (for energy terms)."""
    name = name.strip()
    if name == "hamiltonian":
        return FunctionObservable(
            name, lambda X, Y: potential.energy_many(X) + 0.5 * np.sum(Y * Y, axis=-1)
        )
    if name == "potential-energy":
        return FunctionObservable(name, lambda X, Y: potential.energy_many(X))
    if name == "kinetic-energy":
        return FunctionObservable(name, lambda X, Y: 0.5 * np.sum(Y * Y, axis=-1))
    if name == "first-coordinate":
        return FunctionObservable(name, lambda X, Y: np.atleast_2d(X)[:, 0].copy())
    if name == "x-squared":
        return PolynomialObservable(name, [Monomial(1.0, ((0, 2),), ())])
    if name == "y-squared":
        return PolynomialObservable(name, [Monomial(1.0, (), ((0, 2),))])
    if name == "xy":
        return PolynomialObservable(name, [Monomial(1.0, ((0, 1),), ((0, 1),))])
    if name.startswith("exp-bh:"):
        b = float(name.split(":", 1)[1])
        return FunctionObservable(
            name,
            lambda X, Y: np.exp(b * (potential.energy_many(X) + 0.5 * np.sum(Y * Y, axis=-1))),
        )
    if name.startswith("poly:"):
        return parse_polynomial(name, name.split(":", 1)[1])
    raise InvalidInputError(f"unknown observable: {name!r}")


def constant_observable(value: float, name: str = "constant") -> Observable:
    return FunctionObservable(name, lambda X, Y: np.full(np.atleast_2d(X).shape[0], value))
