"""Built-in games: the dynamic-pricing preset and small fixtures with known answers."""

from __future__ import annotations

from importlib import resources

import numpy as np

from .errors import InputError
from .game import GameSpec, PayoffSpec, TauTerm, TransitionSpec, logit_gap
from .spaces import Dist, FiniteMetricSpace

BUILTIN = ("pricing", "pricing_stationary", "dominant", "dominant_stationary",
           "x_independent", "x_independent_stationary", "tiny")


def pricing_preset(
    inventory_levels=(0, 1, 2),
    prices=(1.0, 2.0),
    sensitivity: float = 0.5,
    replenishment: float = 0.6,
    horizon: int | None = 3,
    discount: float | None = None,
    base_demand: float = 0.9,
    price_slope: float = 0.15,
    rival_weight: float = 0.2,
    concentration: float = 2.0,
    initial_sigma=None,
) -> GameSpec:
    """Firms holding inventory choose a unit price each period.

    Expected demand for a firm charging ``p`` is

        D = base_demand - price_slope * p + sensitivity * (rival_weight * (P - mean(prices)) - share(p))

    where ``P`` is the average price charged across the population and ``share(p)``
    is the fraction of firms charging ``p``.  Demand rises with rivals' prices and
    falls when many firms crowd the same price.  A firm with stock sells ``D`` in
    expectation and earns ``p * D``; next period's inventory concentrates around
    ``level - D + replenishment`` on the inventory grid.
    """
    levels = np.array(inventory_levels, dtype=float)
    p = np.array(prices, dtype=float)
    if levels.size == 0 or p.size == 0:
        raise InputError("inventory and price grids must be nonempty")
    if len(set(inventory_levels)) != levels.size or len(set(prices)) != p.size:
        raise InputError("grid entries must be distinct")
    if sensitivity < 0:
        raise InputError("sensitivity must be nonnegative")
    if concentration <= 0:
        raise InputError("concentration must be positive")
    if replenishment < 0:
        raise InputError("replenishment must be nonnegative")
    if (horizon is None) == (discount is None):
        raise InputError("give a horizon for a transient game or a discount for a stationary one")

    S = FiniteMetricSpace(tuple(inventory_levels))
    X = FiniteMetricSpace(tuple(prices))
    ns, nx = S.size, X.size
    stock = (levels > 0).astype(float)

    demand0 = base_demand - price_slope * p
    base = stock[:, None] * p[None, :] * demand0[None, :]
    mean_price = p - p.mean()
    price_feature = np.broadcast_to(mean_price, (ns, nx))

    pay_terms = []
    drift_terms = []  # (feature over S x X, coefficient of demand per (s, x))
    if sensitivity > 0:
        revenue = stock[:, None] * p[None, :]
        coef = sensitivity * rival_weight * revenue
        pay_terms.append(TauTerm(price_feature, coef))
        drift_terms.append((price_feature, sensitivity * rival_weight * np.ones((ns, nx))))
        for j in range(nx):
            share = np.zeros((ns, nx))
            share[:, j] = 1.0
            own = np.zeros((ns, nx))
            own[:, j] = 1.0
            pay_terms.append(TauTerm(share, -sensitivity * revenue * own))
            drift_terms.append((share, -sensitivity * own))
    payoff = PayoffSpec(base, tuple(pay_terms))

    # logits -k (L' - m)^2 with m = L - stock * D + r; only the s'-dependent part matters
    m0 = levels[:, None] - stock[:, None] * demand0[None, :] + replenishment
    base_logits = -concentration * (levels[None, None, :] - m0[:, :, None]) ** 2
    trans_terms = []
    for feature, dcoef in drift_terms:
        weights = levels[:, None, None] * feature[None, :, :]
        trans_terms.append(TauTerm(weights, -2.0 * concentration * stock[:, None] * dcoef))
    transition = TransitionSpec(base_logits, tuple(trans_terms))

    if initial_sigma is None:
        initial_sigma = Dist.uniform(S)
    if horizon is None:
        return GameSpec(S, X, None, (payoff,), (transition,), initial_sigma, discount, "pricing_stationary")
    return GameSpec(S, X, horizon, (payoff,) * horizon, (transition,) * horizon, initial_sigma, None, "pricing")


def _two_state_spaces():
    return FiniteMetricSpace(("s0", "s1")), FiniteMetricSpace(("a", "b"))


def chain_logits(rows, n_actions=1) -> np.ndarray:
    """Base logits reproducing a two-state transition matrix for every action."""
    rows = np.asarray(rows, dtype=float)
    out = np.zeros((2, n_actions, 2))
    for s in range(2):
        out[s, :, 0] = logit_gap(rows[s, 0])
    return out


def dominant_game(horizon: int | None = 2, gap: float = 1.0, discount: float | None = None) -> GameSpec:
    """Action ``a`` beats ``b`` by ``gap`` in every state; transitions ignore the action."""
    S, X = _two_state_spaces()
    base = np.array([[gap, 0.0], [0.5 * gap, -0.5 * gap]])
    payoff = PayoffSpec(base)
    transition = TransitionSpec(chain_logits([[0.7, 0.3], [0.4, 0.6]], 2))
    k = 1 if horizon is None else horizon
    return GameSpec(S, X, horizon, (payoff,) * k, (transition,) * k, None, discount, "dominant")


def x_independent_game(horizon: int | None = 2, discount: float | None = None) -> GameSpec:
    """Payoffs and transitions depend on the state and on the state marginal of tau, never on x."""
    S, X = _two_state_spaces()
    crowd = np.array([[1.0, 1.0], [0.0, 0.0]])  # mass of players at s0
    payoff = PayoffSpec(np.array([[0.3, 0.3], [0.8, 0.8]]),
                        (TauTerm(crowd, np.array([[-0.4, -0.4], [0.2, 0.2]])),))
    logits = chain_logits([[0.6, 0.4], [0.3, 0.7]], 2)
    weights = np.stack([crowd, np.zeros((2, 2))])
    transition = TransitionSpec(logits, (TauTerm(weights, np.full((2, 2), -0.8)),))
    k = 1 if horizon is None else horizon
    sigma = Dist(S, [0.5, 0.5])
    return GameSpec(S, X, horizon, (payoff,) * k, (transition,) * k, sigma, discount, "x_independent")


def tiny_game(horizon: int = 2) -> GameSpec:
    """Two states, two actions, with both payoffs and transitions moved by the environment."""
    S, X = _two_state_spaces()
    base = np.array([[0.2, 0.5], [0.6, 0.1]])
    share_a = np.array([[1.0, 0.0], [1.0, 0.0]])
    share_b = np.array([[0.0, 1.0], [0.0, 1.0]])
    payoff = PayoffSpec(base, (
        TauTerm(share_a, np.array([[-0.3, 0.0], [-0.3, 0.0]])),
        TauTerm(share_b, np.array([[0.0, -0.3], [0.0, -0.3]])),
    ))
    logits = np.array([[[0.4, 0.0], [-0.5, 0.0]], [[0.0, 0.3], [0.8, 0.0]]])
    at_s0 = np.array([[1.0, 1.0], [0.0, 0.0]])
    weights = np.stack([at_s0, np.zeros((2, 2))])
    transition = TransitionSpec(logits, (TauTerm(weights, np.array([[-1.0, 0.5], [1.2, -0.6]])),))
    return GameSpec(S, X, horizon, (payoff,) * horizon, (transition,) * horizon,
                    Dist(S, [0.6, 0.4]), None, "tiny")


def builtin_game(name: str) -> GameSpec:
    """Generate a built-in game from its parameters (the shipped JSON files are snapshots of these)."""
    makers = {
        "pricing": lambda: pricing_preset(),
        "pricing_stationary": lambda: pricing_preset(horizon=None, discount=0.8),
        "dominant": lambda: dominant_game(),
        "dominant_stationary": lambda: dominant_game(None, discount=0.8),
        "x_independent": lambda: x_independent_game(),
        "x_independent_stationary": lambda: x_independent_game(None, discount=0.8),
        "tiny": lambda: tiny_game(),
    }
    if name not in makers:
        raise InputError(f"unknown built-in scenario {name!r}; choose from {', '.join(BUILTIN)}")
    game = makers[name]()
    object.__setattr__(game, "name", name)
    return game


def builtin_path(name: str):
    if name not in BUILTIN:
        raise InputError(f"unknown built-in scenario {name!r}; choose from {', '.join(BUILTIN)}")
    return resources.files("mfbridge") / "scenarios" / f"{name}.json"
