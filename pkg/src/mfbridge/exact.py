"""Exact n-player computations by dense enumeration of multi-states and multi-actions.

Player 0 plays the role of the deviating player; multi-state arrays use C order
with player 0 as the most significant coordinate, matching ``MultiDist``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import CapacityError, InputError
from .game import GameSpec
from .ng import profile_array
from .sim import leave_one_out_counts
from .spaces import ENUMERATION_CAP, MultiDist


@dataclass(frozen=True, eq=False)
class PeriodTables:
    payoff0: np.ndarray   # (k^n, m^n) player 0's payoff
    kernel: np.ndarray    # (k^n, m^n, k^n) next multi-state law


class DenseGame:
    """Per-period payoff and transition tables of the n-player game over all multi-states."""

    def __init__(self, game: GameSpec, n: int, cap: int = ENUMERATION_CAP):
        if n < 2:
            raise InputError("the n-player game needs n >= 2")
        k, m = game.S.size, game.X.size
        count = n * k**n * m**n * k**n
        if count > cap:
            raise CapacityError(f"dense {n}-player tables need {count} entries (cap {cap})", count)
        self.game, self.n, self.k, self.m = game, n, k, m
        self.states = np.indices((k,) * n).reshape(n, -1).T      # (k^n, n)
        self.actions = np.indices((m,) * n).reshape(n, -1).T     # (m^n, n)
        self._tables = {}

    def tables(self, t: int) -> PeriodTables:
        key = 0 if self.game.stationary else t
        if key not in self._tables:
            self._tables[key] = self._build(t)
        return self._tables[key]

    def _build(self, t: int) -> PeriodTables:
        game, n, k, m = self.game, self.n, self.k, self.m
        S, A = self.states, self.actions
        NS, NA = len(S), len(A)
        s = np.repeat(S, NA, axis=0)             # (NS*NA, n)
        x = np.tile(A, (NS, 1))
        taus = leave_one_out_counts(s * m + x, k * m) / (n - 1)
        B = NS * NA
        flat_tau = taus.reshape(B * n, k, m)
        pay = game.payoff(t).values(s.ravel(), x.ravel(), flat_tau).reshape(B, n)
        g = game.transition(t).probs(s.ravel(), x.ravel(), flat_tau).reshape(B, n, k)
        P = np.ones((B, 1))
        for player in range(n):
            P = (P[:, :, None] * g[:, player, None, :]).reshape(B, -1)
        return PeriodTables(pay[:, 0].reshape(NS, NA), P.reshape(NS, NA, NS))

    def policy_weights(self, chi: np.ndarray, players) -> np.ndarray:
        """Probability of each multi-action at each multi-state, over the listed players only."""
        w = np.ones((len(self.states), len(self.actions)))
        for p in players:
            w = w * chi[self.states[:, p]][:, self.actions[:, p]]
        return w


@lru_cache(maxsize=16)
def _dense_cached(game, n):
    return DenseGame(game, n)


def dense(game: GameSpec, n: int) -> DenseGame:
    return _dense_cached(game, n)


def _multi_weights(game, n, initial) -> np.ndarray:
    if isinstance(initial, MultiDist):
        if initial.base_space != game.S or initial.n != n:
            raise InputError("initial multi-state law does not match the game and n")
        return initial.weights.ravel()
    return MultiDist.power(game.initial_sigma, n).weights.ravel()


def multistate_distribution(game: GameSpec, n: int, t: int, initial: MultiDist | None, profile) -> MultiDist:
    """Exact law of the period-t multi-state when every player follows ``profile`` from ``initial`` (period 1)."""
    T = None if game.stationary else game.horizon
    chis = profile_array(game, profile)
    if T is not None and not 1 <= t <= T + 1:
        raise InputError(f"period {t} out of range 1..{T + 1}")
    if chis.shape[0] < t - 1:
        raise InputError("profile is shorter than the requested period")
    d = dense(game, n)
    pi = _multi_weights(game, n, initial)
    everyone = range(n)
    for u in range(1, t):
        w = d.policy_weights(chis[u - 1], everyone)
        pi = np.einsum("i,ij,ijk->k", pi, w, d.tables(u).kernel)
    return MultiDist(game.S, n, pi)


def multistate_path(game: GameSpec, n: int, profile, initial=None):
    """Exact multi-state laws for periods 1..T+1."""
    chis = profile_array(game, profile, game.horizon)
    d = dense(game, n)
    pi = _multi_weights(game, n, initial)
    out = [pi]
    for u in range(1, game.horizon + 1):
        w = d.policy_weights(chis[u - 1], range(n))
        pi = np.einsum("i,ij,ijk->k", pi, w, d.tables(u).kernel)
        out.append(pi)
    return [MultiDist(game.S, n, p) for p in out]


def value_tables(game: GameSpec, n: int, t: int, deviations: np.ndarray, chis: np.ndarray,
                 discount: float | None = None) -> np.ndarray:
    """Player 0's value from period t at every multi-state, one row per deviation.

    ``deviations`` has shape (D, L, S, X) and ``chis`` (L, S, X) for periods t..t+L-1.
    With ``discount`` the period-u payoff is scaled by discount**(u - t).
    """
    d = dense(game, n)
    D, L = deviations.shape[:2]
    W = np.zeros((D, len(d.states)))
    s0, a0 = d.states[:, 0], d.actions[:, 0]
    for u in range(L - 1, -1, -1):
        tab = d.tables(t + u)
        others = d.policy_weights(chis[u], range(1, d.n))            # (NS, NA)
        own = deviations[:, u][:, s0][:, :, a0]                       # (D, NS, NA)
        cont = np.einsum("ijk,dk->dij", tab.kernel, W)
        if discount is not None:
            cont = discount * cont
        W = np.einsum("ij,dij,dij->di", others, own, tab.payoff0[None] + cont)
    return W


def _others_weights(game, n, others) -> np.ndarray:
    """Law of players 1..n-1 as a flat vector over S^(n-1)."""
    k = game.S.size
    if isinstance(others, MultiDist):
        if others.n != n - 1 or others.base_space != game.S:
            raise InputError("others' law must be over S^(n-1)")
        return others.weights.ravel()
    idx = game.S.indices(others)
    if len(idx) != n - 1:
        raise InputError(f"explicit others must list {n - 1} states")
    w = np.zeros(k ** (n - 1))
    w[np.ravel_multi_index(tuple(idx), (k,) * (n - 1))] = 1.0
    return w


def exact_finite_value(game: GameSpec, n: int, t: int, s1, deviation, others, profile_suffix) -> float:
    """Player 1's expected total payoff from period t, averaged over the others' multi-state law."""
    T = game.horizon
    if not 1 <= t <= T + 1:
        raise InputError(f"period {t} out of range 1..{T + 1}")
    L = T - t + 1
    if L == 0:
        return 0.0
    xi = profile_array(game, deviation, L)
    chis = profile_array(game, profile_suffix, L)
    W = value_tables(game, n, t, xi[None], chis)[0]
    k = game.S.size
    row = W.reshape(k, -1)[game.S.index(s1)]
    return float(row @ _others_weights(game, n, others))
