import numpy as np
import pytest

from mfbridge.errors import InputError
from mfbridge.exact import multistate_distribution
from mfbridge.game import CallbackPayoff, CallbackTransition, GameSpec, PayoffSpec, TransitionSpec
from mfbridge.ng import PolicyProfile, ng_trajectory
from mfbridge.presets import chain_logits, pricing_preset, tiny_game
from mfbridge.prohorov import dkw_threshold, prohorov
from mfbridge.sim import (
    SimConfig,
    check_leave_one_out,
    leave_one_out_env,
    resemblance_probability,
    simulate_batch,
    simulate_trajectory,
)
from mfbridge.spaces import Dist, FiniteMetricSpace, PolicyKernel

S2 = FiniteMetricSpace(("s0", "s1"))
X2 = FiniteMetricSpace(("a", "b"))


def chain_game(rows, horizon=2, sigma=(0.5, 0.5)):
    f = PayoffSpec(np.array([[1.0, 0.0], [0.0, 1.0]]))
    g = TransitionSpec(chain_logits(rows, 2))
    return GameSpec(S2, X2, horizon, (f,) * horizon, (g,) * horizon, Dist(S2, sigma))


def deterministic_game(horizon=3):
    # state flips whenever action b is played, stays otherwise
    logits = np.full((2, 2, 2), -40.0)
    logits[0, 0, 0] = logits[1, 0, 1] = 40.0
    logits[0, 1, 1] = logits[1, 1, 0] = 40.0
    f = PayoffSpec(np.array([[1.0, 0.0], [0.5, 0.2]]))
    g = TransitionSpec(logits)
    return GameSpec(S2, X2, horizon, (f,) * horizon, (g,) * horizon, Dist.dirac(S2, "s0"))


def callback_copy(game):
    """The same game through the generic (callback) code path."""
    f = [CallbackPayoff(lambda s, x, tau, p=p: float(p.table(tau)[s, x]), p.bound, p.lipschitz(), (3, 2))
         for p in game.payoffs]
    g = [CallbackTransition(lambda s, x, tau, q=q: q.table(tau)[s, x], q.lipschitz(), (3, 2))
         for q in game.transitions]
    return GameSpec(game.S, game.X, game.horizon, tuple(f), tuple(g), game.initial_sigma)


class TestConfig:
    def test_n_at_least_two(self):
        with pytest.raises(InputError):
            SimConfig(1)

    def test_initial_length(self):
        with pytest.raises(InputError):
            SimConfig(3, initial=("s0", "s1"))


class TestTrajectory:
    def test_deterministic_map(self):
        g = deterministic_game()
        chi = PolicyKernel.deterministic(S2, X2, [1, 0])
        prof = PolicyProfile.constant(chi, 3)
        recs = [simulate_trajectory(g, prof, SimConfig(4, 1, seed), 0) for seed in range(5)]
        # s0 -b-> s1 -a-> s1 -a-> s1
        for r in recs:
            assert [row[0] for row in r.states] == ["s0", "s1", "s1", "s1"]
            assert np.array_equal(r.state_idx, recs[0].state_idx)
            assert np.array_equal(r.payoffs, recs[0].payoffs)

    def test_independent_chains(self):
        rows = np.array([[0.7, 0.3], [0.2, 0.8]])
        g = chain_game(rows, 2, (0.6, 0.4))
        b = simulate_batch(g, PolicyProfile.uniform(g), SimConfig(2, 10_000, 7))
        law = np.array([0.6, 0.4])
        for t in range(3):
            freq = (b.states[t] == 0).mean(axis=0)
            se = np.sqrt(law[0] * (1 - law[0]) / 10_000)
            assert np.all(np.abs(freq - law[0]) <= 3 * se)
            law = law @ rows

    def test_pricing_n50(self, pricing, pricing_solution):
        prof = pricing_solution.profile
        traj = pricing_solution.trajectory
        res = resemblance_probability(pricing, prof, traj, 50, 0.2, 200, seed=11)
        assert all(r.fraction >= 0.8 for r in res)

    def test_record_views(self, pricing):
        rec = simulate_trajectory(pricing, PolicyProfile.uniform(pricing), SimConfig(5, 3, 1), 2)
        for t, (sig, tau) in enumerate(zip(rec.empirical_sigmas, rec.empirical_taus)):
            assert np.allclose(tau.weights.sum(axis=1), sig.weights)
        assert len(rec.empirical_sigmas) == 4 and len(rec.empirical_taus) == 3
        assert check_leave_one_out(rec)

    def test_explicit_initial(self, pricing):
        rec = simulate_trajectory(pricing, PolicyProfile.uniform(pricing), SimConfig(3, 1, 0, (0, 2, 2)), 0)
        assert rec.states[0] == (0, 2, 2)


class TestReproducibility:
    def test_workers_do_not_matter(self, pricing):
        prof = PolicyProfile.uniform(pricing)
        cfg = SimConfig(20, 30, 99)
        a = simulate_batch(pricing, prof, cfg, workers=1)
        b = simulate_batch(pricing, prof, cfg, workers=3)
        assert np.array_equal(a.states, b.states) and np.array_equal(a.payoffs, b.payoffs)

    def test_single_replication_matches_batch(self, pricing):
        prof = PolicyProfile.uniform(pricing)
        cfg = SimConfig(7, 10, 5)
        b = simulate_batch(pricing, prof, cfg)
        rec = simulate_trajectory(pricing, prof, cfg, 6)
        assert np.array_equal(rec.state_idx, b.states[:, 6])
        assert np.array_equal(rec.payoffs, b.payoffs[:, 6])

    def test_fast_path_matches_generic(self, pricing):
        prof = PolicyProfile.uniform(pricing)
        cfg = SimConfig(6, 20, 3)
        fast = simulate_batch(pricing, prof, cfg)
        slow = simulate_batch(callback_copy(pricing), prof, cfg)
        assert np.array_equal(fast.states, slow.states)
        assert np.allclose(fast.payoffs, slow.payoffs, atol=1e-14, rtol=0)

    def test_payoffs_bounded(self, pricing):
        b = simulate_batch(pricing, PolicyProfile.uniform(pricing), SimConfig(10, 50, 0))
        assert np.abs(b.payoffs).max() <= pricing.fbar


class TestLeaveOneOut:
    def test_two_players(self):
        j = leave_one_out_env(["s0", "s1"], ["a", "b"], 0, tiny_game())
        assert j.weights.tolist() == [[0, 0], [0, 1]]

    def test_identical_players(self):
        g = tiny_game()
        envs = [leave_one_out_env(["s1"] * 4, ["a"] * 4, l, g).weights for l in range(4)]
        assert all(np.array_equal(e, envs[0]) for e in envs)

    def test_mixed(self):
        j = leave_one_out_env(["s0", "s1", "s0"], ["a", "b", "b"], 0, tiny_game())
        assert j.weights.tolist() == [[0, 0.5], [0, 0.5]]

    def test_range(self):
        with pytest.raises(InputError):
            leave_one_out_env(["s0", "s1"], ["a", "b"], 2, tiny_game())


class TestAgainstExact:
    @pytest.mark.slow
    @pytest.mark.parametrize("n", [2, 3])
    def test_terminal_multistate(self, n):
        g = tiny_game()
        rng = np.random.default_rng(n)
        prof = [PolicyKernel(S2, X2, rng.dirichlet(np.ones(2), 2)) for _ in range(2)]
        R = 100_000
        b = simulate_batch(g, prof, SimConfig(n, R, 21))
        cells = np.ravel_multi_index(tuple(b.states[-1].T), (2,) * n)
        freq = np.bincount(cells, minlength=2**n) / R
        exact = multistate_distribution(g, n, 3, None, prof).weights.ravel()
        se = np.sqrt(exact * (1 - exact) / R)
        assert np.all(np.abs(freq - exact) <= 3 * se + 1e-12)


class TestResemblance:
    def test_dkw_at_t1(self, pricing):
        eps = 0.2
        n = dkw_threshold(eps)
        prof = PolicyProfile.uniform(pricing)
        traj = ng_trajectory(pricing, pricing.initial_sigma, prof)
        res = resemblance_probability(pricing, prof, traj, n, eps, 200, seed=4)
        assert res[0].fraction > 1 - eps

    def test_deterministic_game(self):
        g = deterministic_game()
        prof = PolicyProfile.constant(PolicyKernel.deterministic(S2, X2, [1, 0]), 3)
        traj = ng_trajectory(g, g.initial_sigma, prof)
        for r in resemblance_probability(g, prof, traj, 5, 0.01, 20, seed=0):
            assert r.fraction == 1.0 and r.ci_lo <= 1.0 <= r.ci_hi

    def test_epsilon_domain(self, pricing):
        prof = PolicyProfile.uniform(pricing)
        with pytest.raises(InputError):
            resemblance_probability(pricing, prof, ng_trajectory(pricing, pricing.initial_sigma, prof), 5, 0.0, 5, 0)

    def test_fraction_matches_direct_count(self, pricing):
        prof = PolicyProfile.uniform(pricing)
        traj = ng_trajectory(pricing, pricing.initial_sigma, prof)
        res = resemblance_probability(pricing, prof, traj, 12, 0.15, 40, seed=8)
        b = simulate_batch(pricing, prof, SimConfig(12, 40, 8))
        for t, r in enumerate(res):
            hits = sum(prohorov(Dist(pricing.S, np.bincount(b.states[t, i], minlength=3) / 12), traj.sigmas[t]).value < 0.15
                       for i in range(40))
            assert r.fraction == hits / 40
