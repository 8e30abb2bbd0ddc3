import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfbridge.errors import BoundViolation, InputError, ScenarioParseError, SchemaViolation
from mfbridge.game import (
    CallbackPayoff,
    CallbackTransition,
    GameSpec,
    PayoffSpec,
    TauTerm,
    TransitionSpec,
    eval_payoff,
    eval_transition,
    games_equal,
    load_scenario,
    logit_gap,
    save_scenario,
    scenario_from_dict,
    scenario_to_dict,
)
from mfbridge.ng import PolicyProfile, ng_equilibrium_residual, ng_trajectory
from mfbridge.presets import BUILTIN, builtin_game, builtin_path, pricing_preset
from mfbridge.spaces import Dist, FiniteMetricSpace, JointDist

S2 = FiniteMetricSpace(("s0", "s1"))
X2 = FiniteMetricSpace(("a", "b"))


def simple_game(payoff=None, transition=None, horizon=1):
    payoff = payoff or PayoffSpec(np.array([[1.0, 2.0], [3.0, 4.0]]))
    transition = transition or TransitionSpec(np.zeros((2, 2, 2)))
    return GameSpec(S2, X2, horizon, (payoff,) * horizon, (transition,) * horizon)


def minimal_doc():
    return {
        "spaces": {"S": {"labels": ["s0", "s1"]}, "X": {"labels": ["a", "b"]}},
        "horizon": 1,
        "payoffs": [{"base": [[0.0, 1.0], [1.0, 0.0]]}],
        "transitions": [{"base_logits": [[[0, 0], [0, 0]], [[0, 0], [0, 0]]]}],
        "initial_sigma": [0.5, 0.5],
    }


def random_tau(rng):
    return JointDist(S2, X2, rng.dirichlet(np.ones(4)).reshape(2, 2))


class TestPayoff:
    def test_no_terms(self, rng):
        g = simple_game()
        assert eval_payoff(g, 1, "s1", "a", random_tau(rng)) == 3.0

    def test_all_ones_feature(self, rng):
        f = PayoffSpec(np.array([[1.0, 2.0], [3.0, 4.0]]), (TauTerm(np.ones((2, 2)), np.full((2, 2), 0.25)),))
        assert eval_payoff(simple_game(f), 1, "s0", "b", random_tau(rng)) == pytest.approx(2.25, abs=1e-15)

    def test_bound_certified(self):
        f = PayoffSpec(np.array([[1.0, -2.0], [0.5, 0.0]]), (TauTerm(np.full((2, 2), 3.0), np.full((2, 2), -0.5)),))
        assert f.certified_bound() == 3.5
        with pytest.raises(BoundViolation):
            PayoffSpec(f.base, f.tau_terms, bound=3.0)

    def test_period_out_of_range(self):
        with pytest.raises(InputError):
            eval_payoff(simple_game(), 2, "s0", "a", np.full((2, 2), 0.25))

    def test_pricing_rival_prices(self):
        g = pricing_preset()
        high = np.zeros((3, 2))
        high[:, 1] = 1 / 3
        low = np.zeros((3, 2))
        low[:, 0] = 1 / 3
        assert eval_payoff(g, 1, 2, 1.0, high) > eval_payoff(g, 1, 2, 1.0, low)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0, 1))
    def test_linear_in_tau(self, seed, lam):
        rng = np.random.default_rng(seed)
        g = pricing_preset()
        a, b = (rng.dirichlet(np.ones(6)).reshape(3, 2) for _ in range(2))
        for s in g.S.labels:
            for x in g.X.labels:
                mix = eval_payoff(g, 1, s, x, lam * a + (1 - lam) * b)
                assert mix == pytest.approx(lam * eval_payoff(g, 1, s, x, a) + (1 - lam) * eval_payoff(g, 1, s, x, b),
                                            abs=1e-12)

    def test_payoffs_within_bound(self, rng):
        for name in BUILTIN:
            g = builtin_game(name)
            f = g.payoff(1)
            for _ in range(200):
                tau = rng.dirichlet(np.ones(g.S.size * g.X.size)).reshape(g.S.size, g.X.size)
                assert np.abs(f.table(tau)).max() <= g.fbar + 1e-12


class TestTransition:
    def test_saturated(self):
        logits = np.zeros((2, 2, 2))
        logits[:, :, 1] = 30.0
        d = eval_transition(simple_game(transition=TransitionSpec(logits)), 1, "s0", "a", np.full((2, 2), 0.25))
        assert abs(d["s1"] - 1) < 1e-9

    def test_equal_logits_uniform(self):
        d = eval_transition(simple_game(), 1, "s1", "b", np.full((2, 2), 0.25))
        assert np.array_equal(d.weights, [0.5, 0.5])

    def test_target_rows(self):
        logits = np.zeros((2, 2, 2))
        for s, p in enumerate([0.5, 1.0]):
            logits[s, :, 0] = logit_gap(p)
        g = simple_game(transition=TransitionSpec(logits))
        for s, row in zip(("s0", "s1"), ([0.5, 0.5], [1.0, 0.0])):
            assert np.allclose(eval_transition(g, 1, s, "a", np.full((2, 2), 0.25)).weights, row, atol=1e-6)

    def test_valid_dists(self, rng):
        g = pricing_preset()
        for _ in range(200):
            tau = rng.dirichlet(np.ones(6)).reshape(3, 2)
            tab = g.transition(1).table(tau)
            assert np.all(tab >= 0) and np.allclose(tab.sum(axis=2), 1, atol=1e-12)


def lipschitz_ratios(game, n=10_000, seed=0):
    """Empirical sup of rho(g(tau), g(tau')) / rho(tau, tau') over random (s, x, tau, tau')."""
    rng = np.random.default_rng(seed)
    ns, nx = game.S.size, game.X.size
    T = game.transition(1)
    tau = rng.dirichlet(np.full(ns * nx, 0.5), n)
    i, j = rng.integers(0, ns * nx, (2, n))
    far = rng.dirichlet(np.ones(ns * nx), n)
    near = tau.copy()
    d = np.minimum(tau[np.arange(n), i], 1e-4)
    near[np.arange(n), i] -= d
    near[np.arange(n), j] += d
    tau2 = np.where((np.arange(n) % 2 == 0)[:, None], near, far)
    s, x = rng.integers(0, ns, n), rng.integers(0, nx, n)
    # discrete metrics: Prohorov equals total variation below d_min = 1
    tv = 0.5 * np.abs(tau - tau2).sum(axis=1)
    keep = tv > 1e-12
    p1 = T.probs(s, x, tau.reshape(n, ns, nx))
    p2 = T.probs(s, x, tau2.reshape(n, ns, nx))
    return (0.5 * np.abs(p1 - p2).sum(axis=1))[keep] / tv[keep]


class TestLipschitz:
    @pytest.mark.parametrize("name", ["pricing", "tiny", "x_independent", "dominant"])
    def test_bound_is_sound(self, name):
        g = builtin_game(name)
        r = lipschitz_ratios(g)
        assert np.isfinite(r).all()
        assert r.max() <= g.transition(1).lipschitz() + 1e-9

    @pytest.mark.parametrize("name", [
        "tiny",
        "x_independent",
        pytest.param("pricing", marks=pytest.mark.xfail(
            strict=True, reason="reachable logits never balance two levels exactly; sup 0.589 vs bound 1.2")),
    ])
    def test_bound_within_factor_two(self, name):
        g = builtin_game(name)
        assert lipschitz_ratios(g).max() >= g.transition(1).lipschitz() / 2


class TestScenarioFiles:
    def test_minimal(self, tmp_path):
        p = tmp_path / "m.json"
        p.write_text(json.dumps(minimal_doc()))
        g = load_scenario(p)
        assert g.horizon == 1 and g.S.size == 2

    def test_stationary_needs_discount(self):
        doc = minimal_doc()
        doc["horizon"] = "infinite"
        with pytest.raises(SchemaViolation) as exc:
            scenario_from_dict(doc)
        assert exc.value.path == "discount"

    def test_parse_error(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        with pytest.raises(ScenarioParseError):
            load_scenario(p)
        with pytest.raises(ScenarioParseError):
            load_scenario(tmp_path / "missing.json")

    def test_schema_error_names_field(self):
        doc = minimal_doc()
        doc["payoffs"][0]["base"] = [[0.0, 1.0]]
        with pytest.raises(SchemaViolation) as exc:
            scenario_from_dict(doc)
        assert exc.value.path == "payoffs[0].base"

    def test_bound_violation_names_field(self):
        doc = minimal_doc()
        doc["payoffs"][0]["bound"] = 0.5
        with pytest.raises(BoundViolation) as exc:
            scenario_from_dict(doc)
        assert exc.value.path == "payoffs[0].bound"

    def test_error_kinds_distinct(self):
        assert not issubclass(SchemaViolation, BoundViolation)
        assert not issubclass(BoundViolation, ScenarioParseError)

    @pytest.mark.parametrize("name", BUILTIN)
    def test_shipped_fixture_matches_generator(self, name):
        assert games_equal(load_scenario(builtin_path(name)), builtin_game(name))

    @pytest.mark.parametrize("name", BUILTIN)
    def test_round_trip_bitwise(self, name, tmp_path):
        g = builtin_game(name)
        save_scenario(g, tmp_path / "g.json")
        assert games_equal(load_scenario(tmp_path / "g.json"), g)

    def test_callback_games_not_serialized(self):
        f = CallbackPayoff(lambda s, x, tau: 0.0, 1.0, 0.0, (2, 2))
        g = GameSpec(S2, X2, 1, (f,), (TransitionSpec(np.zeros((2, 2, 2))),))
        with pytest.raises(InputError):
            scenario_to_dict(g)


class TestPricingPreset:
    def test_zero_sensitivity(self):
        g = pricing_preset(sensitivity=0.0)
        assert g.payoff(1).tau_terms == () and g.transition(1).tau_terms == ()

    def test_single_price(self):
        g = pricing_preset(prices=(1.5,))
        profile = PolicyProfile.uniform(g)
        assert ng_equilibrium_residual(g, g.initial_sigma, profile)[0] == 0.0

    def test_default_shape(self):
        g = pricing_preset()
        assert (g.S.size, g.X.size, g.horizon) == (3, 2, 3)
        assert g.fbar == pytest.approx(2.3)

    @pytest.mark.parametrize("kw", [dict(prices=()), dict(sensitivity=-1.0), dict(concentration=0.0),
                                    dict(horizon=None), dict(inventory_levels=(1, 1))])
    def test_domain(self, kw):
        with pytest.raises(InputError):
            pricing_preset(**kw)


class TestCallbacks:
    def test_callback_game_runs(self):
        f = CallbackPayoff(lambda s, x, tau: float(s == x) - tau[0, 0], 2.0, 1.0, (2, 2))
        g_ = CallbackTransition(lambda s, x, tau: np.array([0.5, 0.5]), 0.0, (2, 2))
        g = GameSpec(S2, X2, 2, (f, f), (g_, g_), Dist(S2, [0.5, 0.5]))
        traj = ng_trajectory(g, g.initial_sigma, PolicyProfile.uniform(g))
        assert np.allclose(traj.sigmas[-1].weights, [0.5, 0.5])
        assert g.fbar == 2.0
