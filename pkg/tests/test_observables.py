import numpy as np
import pytest

from kinlang import HarmonicPotential, InvalidInputError, State, make_observable
from kinlang.observables import PolynomialObservable, constant_observable, parse_polynomial


@pytest.fixture
def pot():
    return HarmonicPotential(2)


class TestCatalog:
    def test_hamiltonian(self, pot):
        f = make_observable("hamiltonian", pot)
        assert f(State([1.0, 0.0], [0.0, 2.0])) == pytest.approx(0.5 + 2.0)

    def test_energy_split(self, pot):
        s = State([1.0, 1.0], [3.0, 0.0])
        assert make_observable("potential-energy", pot)(s) == pytest.approx(1.0)
        assert make_observable("kinetic-energy", pot)(s) == pytest.approx(4.5)

    def test_first_coordinate(self, pot):
        assert make_observable("first-coordinate", pot)(State([3.0, 1.0], [0.0, 0.0])) == 3.0

    def test_named_polynomials(self, pot):
        s = State([2.0, 0.0], [5.0, 0.0])
        assert make_observable("x-squared", pot)(s) == 4.0
        assert make_observable("y-squared", pot)(s) == 25.0
        assert make_observable("xy", pot)(s) == 10.0

    def test_exp_bh(self, pot):
        f = make_observable("exp-bh:0.5", pot)
        s = State([0.0, 0.0], [2.0, 0.0])
        assert f(s) == pytest.approx(np.exp(0.5 * 2.0))

    def test_unknown_name(self, pot):
        with pytest.raises(InvalidInputError):
            make_observable("momentum", pot)

    def test_vectorised_evaluation_matches_scalar(self, pot):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((40, 2))
        Y = rng.standard_normal((40, 2))
        for name in ["hamiltonian", "kinetic-energy", "x-squared", "xy", "exp-bh:0.3"]:
            f = make_observable(name, pot)
            many = f.evaluate_many(X, Y)
            single = [f(State(X[i], Y[i])) for i in range(40)]
            np.testing.assert_allclose(many, single, rtol=1e-12)


class TestPolynomialParsing:
    def test_simple_terms(self, pot):
        f = parse_polynomial("p", "2 x1^2 + -1.5 x1 y1 + 3")
        s = State([2.0, 0.0], [4.0, 0.0])
        assert f(s) == pytest.approx(2 * 4 - 1.5 * 8 + 3)

    def test_star_separator_and_higher_index(self):
        f = parse_polynomial("p", "0.5*x2^3*y1")
        s = State([0.0, 2.0], [3.0, 0.0])
        assert f(s) == pytest.approx(0.5 * 8 * 3)

    def test_bad_factor(self):
        with pytest.raises(InvalidInputError):
            parse_polynomial("p", "2 q1")

    def test_zero_based_index_rejected(self):
        with pytest.raises(InvalidInputError):
            parse_polynomial("p", "x0")


class TestDerivatives:
    def test_grad_x(self):
        f = parse_polynomial("p", "x1^2 y1 + 2 x2")
        s = State([3.0, 1.0], [5.0, 0.0])
        np.testing.assert_allclose(f.grad_x(s), [2 * 3 * 5, 2.0])

    def test_grad_y_and_laplacian(self):
        f = parse_polynomial("p", "y1^2 + y2^4 + x1 y1")
        s = State([2.0, 0.0], [1.0, 2.0])
        np.testing.assert_allclose(f.grad_y(s), [2 * 1 + 2, 4 * 8])
        assert f.laplacian_y(s) == pytest.approx(2 + 12 * 4)

    def test_derivatives_match_finite_differences(self):
        rng = np.random.default_rng(1)
        f = parse_polynomial("p", "2 x1^2 y2 + x2 y1^3 + 0.5 y2^2")
        h = 1e-6
        for _ in range(20):
            x = rng.uniform(-2, 2, 2)
            y = rng.uniform(-2, 2, 2)
            s = State(x, y)
            for k in range(2):
                yp, ym = y.copy(), y.copy()
                yp[k] += h
                ym[k] -= h
                fd = (f(State(x, yp)) - f(State(x, ym))) / (2 * h)
                assert f.grad_y(s)[k] == pytest.approx(fd, rel=1e-6, abs=1e-6)
                xp, xm = x.copy(), x.copy()
                xp[k] += h
                xm[k] -= h
                fd = (f(State(xp, y)) - f(State(xm, y))) / (2 * h)
                assert f.grad_x(s)[k] == pytest.approx(fd, rel=1e-6, abs=1e-6)

    def test_vectorised_derivatives_match_scalar(self):
        rng = np.random.default_rng(2)
        f = parse_polynomial("p", "x1^2 y1 + 3 y2^2 + x2")
        X = rng.standard_normal((30, 2))
        Y = rng.standard_normal((30, 2))
        gx = f.grad_x_many(X, Y)
        gy = f.grad_y_many(X, Y)
        lap = f.laplacian_y_many(X, Y)
        for i in range(30):
            s = State(X[i], Y[i])
            np.testing.assert_allclose(gx[i], f.grad_x(s), rtol=1e-12)
            np.testing.assert_allclose(gy[i], f.grad_y(s), rtol=1e-12)
            assert lap[i] == pytest.approx(f.laplacian_y(s), rel=1e-12)


def test_constant_observable():
    f = constant_observable(2.5)
    assert f(State([1.0], [1.0])) == 2.5
    assert isinstance(parse_polynomial("c", "2.5"), PolynomialObservable)
