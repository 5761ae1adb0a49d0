import math

import numpy as np
import pytest

from kinlang import (
    CloudInit,
    EscapedEnsembleError,
    HarmonicPotential,
    InvalidInputError,
    LennardJonesConfined,
    RunSpec,
    SchemeParams,
    State,
    derive_stream,
    ergodic_average,
    exp_moment,
    log_trend,
    make_observable,
    run_ensemble,
    tail_probability,
    threshold,
)
from kinlang.observables import constant_observable
from kinlang.sampler import StreamPool
from kinlang.scheme import step_stopped


@pytest.fixture
def pot1d():
    return HarmonicPotential(1)


@pytest.fixture
def params(pot1d):
    return SchemeParams(delta=0.01, gamma=1.0, beta=1.0, l=0.5)


class TestStreams:
    def test_same_key_same_sequence(self):
        a = derive_stream(123, 5).standard_normal(100)
        b = derive_stream(123, 5).standard_normal(100)
        np.testing.assert_array_equal(a, b)

    def test_distinct_chains_differ(self):
        a = derive_stream(123, 0).standard_normal(1000)
        b = derive_stream(123, 1).standard_normal(1000)
        assert np.any(a != b)

    def test_distinct_substreams_differ(self):
        a = derive_stream(123, 0, substream=0).standard_normal(1000)
        b = derive_stream(123, 0, substream=1).standard_normal(1000)
        assert np.any(a != b)

    def test_moment_sanity(self):
        draws = derive_stream(2024, 17).standard_normal(100_000)
        assert abs(draws.mean()) < 0.02
        assert abs(draws.var() - 1.0) < 0.05

    def test_pool_matches_fresh_streams(self):
        pool = StreamPool(master_seed=77, substream=3)
        for chain in [0, 5, 12345]:
            got = pool.generator_for(chain).standard_normal((7, 3))
            want = derive_stream(77, chain, substream=3).standard_normal((7, 3))
            np.testing.assert_array_equal(got, want)

    def test_pool_reset_clears_carryover(self):
        pool = StreamPool(master_seed=9)
        pool.generator_for(0).standard_normal(13)  # odd count leaves buffer state
        got = pool.generator_for(1).standard_normal(8)
        want = derive_stream(9, 1).standard_normal(8)
        np.testing.assert_array_equal(got, want)

    def test_block_draws_match_stepwise_draws(self):
        block = derive_stream(4, 2).standard_normal((50, 3))
        g = derive_stream(4, 2)
        rows = np.stack([g.standard_normal(3) for _ in range(50)])
        np.testing.assert_array_equal(block, rows)


class TestRunEnsemble:
    def test_constant_observable_exact(self, pot1d, params):
        spec = RunSpec(n_chains=32, n_steps=50, master_seed=1, init=State([1.0], [0.0]))
        res = run_ensemble(spec, pot1d, params, [constant_observable(2.5)])
        s = res.stats["constant"]
        assert s.mean == 2.5 and s.variance == 0.0 and s.ci_halfwidth == 0.0

    def test_zero_steps_evaluates_init(self, pot1d, params):
        spec = RunSpec(n_chains=1, n_steps=0, master_seed=1, init=State([2.0], [1.0]))
        res = run_ensemble(spec, pot1d, params, [make_observable("hamiltonian", pot1d)])
        assert res.stats["hamiltonian"].mean == pytest.approx(2.0 + 0.5)

    def test_gibbs_second_moment(self, pot1d, params):
        # E[x^2] = 1/beta under the stationary law, up to O(delta) bias
        spec = RunSpec(n_chains=4000, n_steps=2000, master_seed=42, init=State([1.0], [0.0]))
        res = run_ensemble(spec, pot1d, params, [make_observable("x-squared", pot1d)])
        s = res.stats["x-squared"]
        assert s.mean == pytest.approx(1.0, abs=3 * s.ci_halfwidth + 0.03)

    def test_reruns_bit_identical(self, pot1d, params):
        spec = RunSpec(n_chains=200, n_steps=100, master_seed=3, init=State([1.0], [0.0]))
        obs = [make_observable("hamiltonian", pot1d)]
        a = run_ensemble(spec, pot1d, params, obs)
        b = run_ensemble(spec, pot1d, params, obs)
        assert a.stats["hamiltonian"].mean == b.stats["hamiltonian"].mean
        assert a.stats["hamiltonian"].variance == b.stats["hamiltonian"].variance

    def test_thread_count_does_not_change_results(self, pot1d, params):
        obs = [make_observable("hamiltonian", pot1d), make_observable("x-squared", pot1d)]
        results = []
        for threads in [1, 2, 7]:
            spec = RunSpec(
                n_chains=500, n_steps=60, master_seed=11, init=State([1.0], [0.5]),
                threads=threads,
            )
            results.append(run_ensemble(spec, pot1d, params, obs))
        for r in results[1:]:
            for name in ("hamiltonian", "x-squared"):
                assert r.stats[name].mean == results[0].stats[name].mean
                assert r.stats[name].ci_halfwidth == results[0].stats[name].ci_halfwidth

    def test_matches_stepwise_scheme_ops(self, params):
        # the compiled driver reproduces the one-step API exactly, draw for draw
        pot = LennardJonesConfined(2, 2)
        init = State(pot.minimum(), np.zeros(4))
        spec = RunSpec(n_chains=3, n_steps=40, master_seed=6, init=init)
        res = run_ensemble(spec, pot, params, [make_observable("first-coordinate", pot)], record=True)
        for chain in range(3):
            stream = derive_stream(6, chain)
            state = init
            for _ in range(40):
                state = step_stopped(state, stream, pot, params).state
            np.testing.assert_array_equal(res.records_x[chain][-1], state.x)
            np.testing.assert_array_equal(res.records_y[chain][-1], state.y)

    def test_composite_fallback_matches_compiled_path(self, params):
        from kinlang import CompositePotential

        compiled = HarmonicPotential(2, stiffness=1.0)
        composite = CompositePotential(
            [HarmonicPotential(2, stiffness=0.5), HarmonicPotential(2, stiffness=0.5)]
        )
        init = State([1.0, -0.5], [0.0, 0.5])
        obs_name = "first-coordinate"
        spec = RunSpec(n_chains=4, n_steps=30, master_seed=13, init=init)
        a = run_ensemble(spec, compiled, params, [make_observable(obs_name, compiled)])
        b = run_ensemble(spec, composite, params, [make_observable(obs_name, composite)])
        assert a.stats[obs_name].mean == b.stats[obs_name].mean

    def test_cloud_init_spreads_chains(self, pot1d, params):
        spec = RunSpec(
            n_chains=64, n_steps=0, master_seed=5,
            init=CloudInit(State([1.0], [0.0]), sigma=0.1),
        )
        res = run_ensemble(spec, pot1d, params, [make_observable("first-coordinate", pot1d)])
        s = res.stats["first-coordinate"]
        assert s.variance > 0.0
        assert s.mean == pytest.approx(1.0, abs=0.1)

    def test_containment_with_init_inside(self, params):
        pot = LennardJonesConfined(2, 2)
        spec = RunSpec(n_chains=4, n_steps=20_000, master_seed=8,
                       init=State(pot.minimum(), np.zeros(4)))
        res = run_ensemble(spec, pot, params, [make_observable("hamiltonian", pot)])
        assert res.max_h <= threshold(params)

    def test_init_outside_ceiling_warns(self, pot1d):
        tight = SchemeParams(delta=0.9, gamma=0.5, beta=1.0, l=0.5)  # ceiling ~1.054
        spec = RunSpec(n_chains=2, n_steps=5, master_seed=1, init=State([2.0], [0.0]))
        with pytest.warns(UserWarning, match="ceiling"):
            run_ensemble(spec, pot1d, tight, [constant_observable(1.0)])


class TestEscapes:
    @staticmethod
    def collision_spec(n_chains=16, n_steps=200, seed=4):
        center = State([0.15, 0.0, -0.15, 0.0], [-1.0, 0.0, 1.0, 0.0])
        return RunSpec(n_chains=n_chains, n_steps=n_steps, master_seed=seed,
                       init=CloudInit(center, sigma=0.01))

    def test_all_escaped_raises(self, params):
        pot = LennardJonesConfined(2, 2)
        big_delta = SchemeParams(delta=0.05, gamma=1.0, beta=1.0, l=0.5)
        with pytest.raises(EscapedEnsembleError) as e:
            run_ensemble(self.collision_spec(), pot, big_delta,
                         [constant_observable(1.0)], scheme="unstopped")
        assert e.value.escape_count == 16

    def test_escape_count_monotone_in_steps(self):
        # milder collision so chains fail at different times
        pot = LennardJonesConfined(2, 2)
        p = SchemeParams(delta=0.03, gamma=1.0, beta=1.0, l=0.5)
        center = State([0.35, 0.0, -0.35, 0.0], [-2.0, 0.0, 2.0, 0.0])
        counts = []
        for n_steps in [3, 30, 300]:
            spec = RunSpec(n_chains=32, n_steps=n_steps, master_seed=10,
                           init=CloudInit(center, sigma=0.05),
                           escape_energy=1e6)
            try:
                res = run_ensemble(spec, pot, p, [constant_observable(1.0)],
                                   scheme="unstopped")
                counts.append(res.escape_count)
            except EscapedEnsembleError as e:
                counts.append(e.escape_count)
        assert counts == sorted(counts)

    def test_stopped_scheme_never_escapes(self, params):
        pot = LennardJonesConfined(2, 2)
        res = run_ensemble(self.collision_spec(n_steps=50), pot, params,
                           [constant_observable(1.0)], scheme="stopped")
        assert res.escape_count == 0


class TestErgodicAverage:
    def test_constant_observable(self, pot1d, params):
        spec = RunSpec(n_chains=1, n_steps=5000, master_seed=2, init=State([1.0], [0.0]),
                       burn_in=500)
        mean, ci = ergodic_average(spec, pot1d, params, constant_observable(3.25))
        assert mean == 3.25 and ci == 0.0

    def test_velocity_second_moment(self, pot1d, params):
        spec = RunSpec(n_chains=1, n_steps=400_000, master_seed=14, init=State([1.0], [0.0]),
                       burn_in=40_000)
        mean, ci = ergodic_average(spec, pot1d, params, make_observable("y-squared", pot1d))
        assert mean == pytest.approx(1.0, abs=3 * ci + 0.01)

    def test_position_velocity_cross_moment(self, pot1d, params):
        spec = RunSpec(n_chains=1, n_steps=400_000, master_seed=15, init=State([1.0], [0.0]),
                       burn_in=40_000)
        mean, ci = ergodic_average(spec, pot1d, params, make_observable("xy", pot1d))
        assert mean == pytest.approx(0.0, abs=3 * ci + 0.01)

    def test_burn_in_consistency(self, pot1d, params):
        results = []
        for burn in [20_000, 60_000]:
            spec = RunSpec(n_chains=1, n_steps=300_000, master_seed=16,
                           init=State([1.0], [0.0]), burn_in=burn)
            results.append(ergodic_average(spec, pot1d, params,
                                           make_observable("x-squared", pot1d)))
        (m1, c1), (m2, c2) = results
        assert abs(m1 - m2) < 3 * (c1 + c2)

    def test_requires_single_chain(self, pot1d, params):
        spec = RunSpec(n_chains=2, n_steps=100, master_seed=1, init=State([1.0], [0.0]))
        with pytest.raises(InvalidInputError):
            ergodic_average(spec, pot1d, params, constant_observable(1.0))


class TestExpMoment:
    def test_zero_steps_exact(self, pot1d, params):
        spec = RunSpec(n_chains=8, n_steps=0, master_seed=1, init=State([1.0], [1.0]))
        curve = exp_moment(spec, pot1d, params, b=0.5)
        h0 = 0.5 + 0.5
        assert curve.steps.tolist() == [0]
        assert curve.mean[0] == pytest.approx(math.exp(0.5 * h0), rel=1e-12)
        assert curve.ci[0] == 0.0

    def test_harmonic_equilibrium_value(self, pot1d, params):
        # E_mu[exp(H/2)] = (beta/(beta-b))^d = 2 in one dimension
        spec = RunSpec(n_chains=512, n_steps=4000, master_seed=23, init=State([1.0], [0.0]))
        curve = exp_moment(spec, pot1d, params, b=0.5)
        assert curve.mean[-1] == pytest.approx(2.0, abs=3 * curve.ci[-1] + 0.1)

    def test_two_step_sizes_bounded_together(self, pot1d):
        maxima = []
        for delta in [0.02, 0.01]:
            p = SchemeParams(delta=delta, gamma=1.0, beta=1.0, l=0.5)
            spec = RunSpec(n_chains=256, n_steps=int(40 / delta), master_seed=31,
                           init=State([1.0], [0.0]))
            curve = exp_moment(spec, pot1d, p, b=0.5)
            slope, se = log_trend(curve)
            assert abs(slope) <= 3 * se
            maxima.append(float(curve.mean.max()))
        assert 0.5 <= maxima[0] / maxima[1] <= 2.0

    def test_exponent_validation(self, pot1d, params):
        spec = RunSpec(n_chains=2, n_steps=10, master_seed=1, init=State([1.0], [0.0]))
        with pytest.raises(InvalidInputError):
            exp_moment(spec, pot1d, params, b=1.0)  # b must stay below beta


class TestTailProbability:
    def test_level_zero_is_certain(self, pot1d, params):
        spec = RunSpec(n_chains=100, n_steps=50, master_seed=2, init=State([1.0], [0.0]))
        p, ci = tail_probability(spec, pot1d, params, a=0.0)
        assert p == 1.0

    def test_above_ceiling_is_impossible(self, pot1d, params):
        spec = RunSpec(n_chains=100, n_steps=200, master_seed=3, init=State([1.0], [0.0]))
        p, _ = tail_probability(spec, pot1d, params, a=threshold(params) + 1.0)
        assert p == 0.0

    def test_log_slope_negative_across_levels(self, pot1d, params):
        spec = RunSpec(n_chains=20_000, n_steps=600, master_seed=5, init=State([1.0], [0.0]))
        levels = np.array([0.5, 1.5, 2.5])
        probs = np.array([tail_probability(spec, pot1d, params, a)[0] for a in levels])
        assert np.all(probs > 0)
        slope = np.polyfit(levels, np.log(probs), 1)[0]
        assert slope < 0
