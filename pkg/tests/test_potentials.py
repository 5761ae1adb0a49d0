import math

import numpy as np
import pytest

from kinlang import (
    CompositePotential,
    DomainError,
    DoubleWellPotential,
    HarmonicPotential,
    InvalidInputError,
    LennardJonesConfined,
    State,
    assumption_diagnostics,
    hamiltonian,
    make_potential,
)
from kinlang.potentials import probe_ladder


def lj_dimer(r, space_dim=2):
    """Positions of two particles separated by r along the first axis."""
    x = np.zeros(2 * space_dim)
    x[0] = 0.5 * r
    x[space_dim] = -0.5 * r
    return x


def fd_gradient(pot, x, h=1e-5):
    g = np.empty_like(x)
    for i in range(len(x)):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (pot.energy(xp) - pot.energy(xm)) / (2 * h)
    return g


class TestEnergy:
    def test_harmonic_minimum_is_zero(self):
        pot = HarmonicPotential(3)
        assert pot.energy(np.zeros(3)) == 0.0

    def test_lj_pair_term_vanishes_at_unit_separation(self):
        # raw pair term 4(r^-12 - r^-6) is 0 at r=1; the stored energy adds
        # the +eps shift and the confinement
        pot = LennardJonesConfined(2, 2)
        x = lj_dimer(1.0)
        conf = 0.5 * np.sum(x * x)
        assert pot.energy(x) - conf - pot.epsilon == pytest.approx(0.0, abs=1e-12)

    def test_lj_pair_term_at_well_bottom(self):
        # 4(2^-2 - 2^-1) = -1, lifted to 0 by the +eps shift
        pot = LennardJonesConfined(2, 2)
        x = lj_dimer(2.0 ** (1.0 / 6.0))
        conf = 0.5 * np.sum(x * x)
        assert pot.energy(x) - conf == pytest.approx(-1.0 + pot.epsilon, abs=1e-12)

    def test_coincident_particles_are_infinite(self):
        pot = LennardJonesConfined(2, 2)
        assert pot.energy(np.zeros(4)) == math.inf
        assert pot.energy(lj_dimer(0.0)) == math.inf

    def test_near_singular_separations_never_nan(self):
        pot = LennardJonesConfined(2, 2)
        for r in [1e-3, 1e-10, 1e-30, 1e-60, 1e-120, 1e-200]:
            u = pot.energy(lj_dimer(r))
            assert not math.isnan(u)
            assert u > 0
        many = pot.energy_many(np.stack([lj_dimer(r) for r in [1e-30, 1e-120, 0.0]]))
        assert not np.any(np.isnan(many))

    def test_dimension_mismatch(self):
        pot = HarmonicPotential(2)
        with pytest.raises(InvalidInputError):
            pot.energy([1.0, 2.0, 3.0])

    def test_non_negativity_on_random_states(self):
        rng = np.random.default_rng(0)
        pot = LennardJonesConfined(2, 2)
        X = rng.uniform(-2, 2, size=(500, 4))
        assert np.all(pot.energy_many(X) >= 0.0)
        dw = DoubleWellPotential(3)
        assert np.all(dw.energy_many(rng.uniform(-3, 3, size=(200, 3))) >= 0.0)

    def test_translation_invariance_of_pair_sum(self):
        rng = np.random.default_rng(1)
        pot = LennardJonesConfined(3, 2)
        x = rng.uniform(-1, 1, size=6)
        shift = np.tile(rng.uniform(-5, 5, size=2), 3)

        def pair_part(v):
            return pot.energy(v) - 0.5 * pot.confinement_stiffness * np.sum(v * v)

        assert pair_part(x + shift) == pytest.approx(pair_part(x), rel=1e-9)

    def test_energy_many_matches_pointwise(self):
        rng = np.random.default_rng(2)
        for pot in [HarmonicPotential(3), DoubleWellPotential(2), LennardJonesConfined(2, 2)]:
            X = rng.uniform(-2, 2, size=(50, pot.dim))
            many = pot.energy_many(X)
            single = np.array([pot.energy(x) for x in X])
            np.testing.assert_allclose(many, single, rtol=1e-12)


class TestGradient:
    def test_harmonic_gradient_is_identity_times_x(self):
        pot = HarmonicPotential(2)
        np.testing.assert_allclose(pot.gradient([1.0, 2.0]), [1.0, 2.0])

    def test_lj_radial_derivative_at_unit_separation(self):
        # d/dr 4(r^-12 - r^-6) at r=1 is 4(-12 + 6) = -24; the gradient of
        # the dimer energy along the separation axis adds the confinement pull
        pot = LennardJonesConfined(2, 2)
        x = lj_dimer(1.0)
        g = pot.gradient(x)
        pair_force = g[0] - pot.confinement_stiffness * x[0]
        # particle 1 sits at +r/2: moving it outward increases r, and
        # dU_pair/dx1 = u'(r) * (x1 - x2)/r = -24
        assert pair_force == pytest.approx(-24.0, rel=1e-12)

    def test_gradient_outside_domain_raises(self):
        pot = LennardJonesConfined(2, 2)
        with pytest.raises(DomainError):
            pot.gradient(lj_dimer(0.0))

    def test_gradient_dimension_mismatch_distinct_error(self):
        pot = LennardJonesConfined(2, 2)
        with pytest.raises(InvalidInputError):
            pot.gradient(np.zeros(5))

    @pytest.mark.parametrize(
        "pot",
        [
            HarmonicPotential(3, stiffness=2.5),
            DoubleWellPotential(2, well_scale=0.7),
            LennardJonesConfined(2, 2),
            LennardJonesConfined(3, 3, confinement_stiffness=0.5, epsilon=2.0, sigma=1.2),
        ],
        ids=["harmonic", "double-well", "lj-2p", "lj-3p"],
    )
    def test_gradient_matches_finite_differences(self, pot):
        rng = np.random.default_rng(3)
        checked = 0
        while checked < 100:
            x = rng.uniform(-1.5, 1.5, size=pot.dim)
            if isinstance(pot, LennardJonesConfined):
                r2 = pot._pair_r2(x[None, :])[0]
                if np.any(r2 < (0.5 + 0.1) ** 2):
                    continue
            ga = pot.gradient(x)
            gn = fd_gradient(pot, x)
            assert np.linalg.norm(ga - gn) <= 1e-5 * max(1.0, np.linalg.norm(ga))
            checked += 1

    def test_gradient_many_matches_pointwise(self):
        rng = np.random.default_rng(4)
        pot = LennardJonesConfined(2, 2)
        X = rng.uniform(0.5, 2.0, size=(20, 4))
        many = pot.gradient_many(X)
        single = np.stack([pot.gradient(x) for x in X])
        np.testing.assert_allclose(many, single, rtol=1e-12)


class TestHamiltonian:
    def test_zero_state(self):
        pot = HarmonicPotential(2)
        assert hamiltonian(pot, State([0.0, 0.0], [0.0, 0.0])) == 0.0

    def test_kinetic_only(self):
        pot = HarmonicPotential(2)
        assert hamiltonian(pot, State([0.0, 0.0], [2.0, 0.0])) == 2.0

    def test_singular_configuration(self):
        pot = LennardJonesConfined(2, 2)
        assert hamiltonian(pot, State(np.zeros(4), np.ones(4))) == math.inf

    def test_dimension_check(self):
        with pytest.raises(InvalidInputError):
            hamiltonian(HarmonicPotential(3), State([1.0], [1.0]))


class TestState:
    def test_mismatched_lengths(self):
        with pytest.raises(InvalidInputError):
            State([1.0, 2.0], [1.0])

    def test_empty_state(self):
        with pytest.raises(InvalidInputError):
            State([], [])


class TestComposite:
    def test_sum_of_parts(self):
        parts = [HarmonicPotential(2, stiffness=0.5), DoubleWellPotential(2)]
        comp = CompositePotential(parts)
        x = np.array([0.3, -1.2])
        assert comp.energy(x) == pytest.approx(sum(p.energy(x) for p in parts))
        np.testing.assert_allclose(
            comp.gradient(x), parts[0].gradient(x) + parts[1].gradient(x)
        )

    def test_dimension_agreement_required(self):
        with pytest.raises(InvalidInputError):
            CompositePotential([HarmonicPotential(1), HarmonicPotential(2)])

    def test_infinite_part_dominates(self):
        comp = CompositePotential([LennardJonesConfined(2, 2), HarmonicPotential(4)])
        assert comp.energy(np.zeros(4)) == math.inf


class TestFactoryAndMinimum:
    def test_factory_kinds(self):
        assert make_potential("harmonic", space_dim=3).dim == 3
        assert make_potential("double-well").dim == 1
        lj = make_potential("lennard-jones-confined", n_particles=2, space_dim=3)
        assert lj.dim == 6
        with pytest.raises(InvalidInputError):
            make_potential("unknown-kind")

    def test_lj_minimum_is_locally_minimal(self):
        pot = LennardJonesConfined(2, 2)
        x0 = pot.minimum()
        u0 = pot.energy(x0)
        rng = np.random.default_rng(5)
        for _ in range(50):
            assert pot.energy(x0 + 0.01 * rng.standard_normal(4)) >= u0 - 1e-12

    def test_lj_minimum_separation_below_pair_optimum(self):
        # confinement squeezes the dimer below the free pair optimum 2^(1/6)
        pot = LennardJonesConfined(2, 2)
        r = pot.pair_separation_at_minimum()
        assert 0.9 < r < 2.0 ** (1.0 / 6.0)


class TestDiagnostics:
    def test_harmonic_ratio_value(self):
        # U'' = 1 and U' = x, so the ratio at x=10 is 1/100
        pot = HarmonicPotential(1)
        report = assumption_diagnostics(pot, [np.array([10.0])])
        assert report.rows[0].ratio == pytest.approx(0.01, rel=1e-6)

    def test_lj_ratio_decreases_toward_singularity(self):
        pot = LennardJonesConfined(2, 2)
        report = assumption_diagnostics(pot, [lj_dimer(0.9), lj_dimer(0.8)])
        assert report.rows[1].ratio < report.rows[0].ratio

    def test_empty_probe_list(self):
        report = assumption_diagnostics(HarmonicPotential(1), [])
        assert report.rows == []

    def test_probe_outside_domain(self):
        pot = LennardJonesConfined(2, 2)
        with pytest.raises(DomainError):
            assumption_diagnostics(pot, [lj_dimer(0.0)])

    def test_default_ladder_monotone_energy(self):
        for pot in [HarmonicPotential(2), LennardJonesConfined(2, 2)]:
            probes = probe_ladder(pot, 6)
            energies = [pot.energy(p) for p in probes]
            assert all(a < b for a, b in zip(energies, energies[1:]))
