"""Monte Carlo simulation of the n-player game under a shared policy profile."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import rng
from .errors import InputError
from .game import GameSpec
from .ng import EnvTrajectory, profile_array
from .prohorov import prohorov_batch
from .spaces import Dist, JointDist, contaminate, empirical_from_indices


@dataclass(frozen=True)
class SimConfig:
    """``initial`` is ``"iid"`` (players drawn from the game's initial law) or a tuple of state labels."""

    n: int
    replications: int = 1
    seed: int = 0
    initial: object = "iid"

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise InputError("the n-player game needs n >= 2")
        if self.replications < 1:
            raise InputError("replications must be positive")
        if not isinstance(self.initial, str):
            if len(self.initial) != self.n:
                raise InputError(f"explicit initial multi-state must have {self.n} entries")
        elif self.initial != "iid":
            raise InputError("initial must be 'iid' or an explicit multi-state")


@dataclass(frozen=True, eq=False)
class TrajectoryRecord:
    """One replication: index arrays plus the spaces that label them."""

    game: GameSpec
    state_idx: np.ndarray    # (T+1, n)
    action_idx: np.ndarray   # (T, n)
    payoffs: np.ndarray      # (T, n)

    @property
    def states(self):
        return [tuple(self.game.S.labels[i] for i in row) for row in self.state_idx]

    @property
    def actions(self):
        return [tuple(self.game.X.labels[i] for i in row) for row in self.action_idx]

    @property
    def empirical_sigmas(self):
        return [empirical_from_indices(row, self.game.S) for row in self.state_idx]

    @property
    def empirical_taus(self):
        out = []
        nx = self.game.X.size
        for s, x in zip(self.state_idx, self.action_idx):
            d = empirical_from_indices(s * nx + x, self.game.SX)
            out.append(JointDist(self.game.S, self.game.X, d.weights.reshape(self.game.S.size, nx)))
        return out


@dataclass(frozen=True, eq=False)
class Batch:
    """Replications stacked along axis 1: states (L+1, R, n), actions and payoffs (L, R, n)."""

    states: np.ndarray
    actions: np.ndarray
    payoffs: np.ndarray | None


def sample_categorical(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw per row of ``probs`` using the matching uniform."""
    cum = np.cumsum(probs, axis=-1)
    idx = (u[..., None] >= cum).sum(axis=-1)
    return np.minimum(idx, probs.shape[-1] - 1)


def leave_one_out_counts(pairs: np.ndarray, n_cells: int) -> np.ndarray:
    """Per-player counts of the other players' (state, action) cells: shape (R, n, cells)."""
    R, n = pairs.shape
    flat = (np.arange(R)[:, None] * n_cells + pairs).ravel()
    counts = np.bincount(flat, minlength=R * n_cells).reshape(R, 1, n_cells)
    return counts - (pairs[:, :, None] == np.arange(n_cells))


def leave_one_out_env(states, actions, player: int, game: GameSpec) -> JointDist:
    """Empirical law of the other players' (state, action) pairs."""
    s = game.S.indices(states)
    x = game.X.indices(actions)
    n = len(s)
    if n < 2:
        raise InputError("leave-one-out needs at least two players")
    if not 0 <= player < n:
        raise InputError(f"player {player} out of range")
    keep = np.arange(n) != player
    d = empirical_from_indices(s[keep] * game.X.size + x[keep], game.SX)
    return JointDist(game.S, game.X, d.weights.reshape(game.S.size, game.X.size))


def initial_states(game: GameSpec, config: SimConfig, reps: np.ndarray, seed=None) -> np.ndarray:
    n = config.n
    if isinstance(config.initial, str):
        u = rng.uniforms(config.seed if seed is None else seed, reps[:, None], 0, np.arange(n)[None, :], rng.INIT)
        return sample_categorical(np.broadcast_to(game.initial_sigma.weights, u.shape + (game.S.size,)), u)
    idx = game.S.indices(config.initial)
    return np.broadcast_to(idx, (len(reps), n)).copy()


def run_batch(game: GameSpec, chis: np.ndarray, init: np.ndarray, reps: np.ndarray, seed: int,
              t0: int = 1, deviation: np.ndarray | None = None, payoffs: str = "all") -> Batch:
    """Simulate periods t0..t0+L-1 from multi-states ``init`` (R, n).

    Everybody follows ``chis`` (L, S, X) except player 0, who follows ``deviation``
    when given.  ``payoffs`` is "all", "deviator" (player 0 only) or "none".
    Draws are keyed by (seed, replication, period, player), so any deviation sees
    the same uniforms as the on-policy run.
    """
    L = chis.shape[0]
    R, n = init.shape
    ns, nx = game.S.size, game.X.size
    players = np.arange(n)[None, :]
    rep_col = reps[:, None]
    states = np.empty((L + 1, R, n), dtype=np.int64)
    actions = np.empty((L, R, n), dtype=np.int64)
    pay = None if payoffs == "none" else np.zeros((L, R, n if payoffs == "all" else 1))
    states[0] = init
    for k in range(L):
        t = t0 + k
        s = states[k]
        probs = chis[k][s]
        if deviation is not None:
            probs = probs.copy()
            probs[:, 0] = deviation[k][s[:, 0]]
        x = sample_categorical(probs, rng.uniforms(seed, rep_col, t, players, rng.ACTION))
        actions[k] = x
        pairs = s * nx + x
        f_t, g_t = game.payoff(t), game.transition(t)
        if hasattr(f_t, "loo_table") and hasattr(g_t, "loo_table"):
            counts = np.bincount((np.arange(R)[:, None] * ns * nx + pairs).ravel(),
                                 minlength=R * ns * nx).reshape(R, ns * nx)
            rows = np.arange(R)[:, None]
            if payoffs == "all":
                pay[k] = f_t.loo_table(counts, n)[rows, pairs]
            elif payoffs == "deviator":
                pay[k, :, 0] = f_t.loo_table(counts, n)[np.arange(R), pairs[:, 0]]
            g = g_t.loo_table(counts, n)[rows, pairs]
        else:
            taus = (leave_one_out_counts(pairs, ns * nx) / (n - 1)).reshape(R * n, ns, nx)
            if payoffs == "all":
                pay[k] = f_t.values(s.ravel(), x.ravel(), taus).reshape(R, n)
            elif payoffs == "deviator":
                pay[k, :, 0] = f_t.values(s[:, 0], x[:, 0], taus.reshape(R, n, ns, nx)[:, 0])
            g = g_t.probs(s.ravel(), x.ravel(), taus).reshape(R, n, ns)
        states[k + 1] = sample_categorical(g, rng.uniforms(seed, rep_col, t, players, rng.TRANSITION))
    return Batch(states, actions, pay)


def _chunks(reps: np.ndarray, workers: int):
    workers = max(1, min(workers, len(reps)))
    return np.array_split(reps, workers)


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("MFBRIDGE_WORKERS", "1")))
    except ValueError:
        raise InputError("MFBRIDGE_WORKERS must be an integer") from None


def parallel_map(fn, chunks, workers: int):
    """Apply ``fn`` to each chunk, in a process pool when ``workers > 1``; order is preserved."""
    if workers <= 1 or len(chunks) <= 1:
        return [fn(c) for c in chunks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, chunks))


class _SimJob:
    def __init__(self, game, chis, config):
        self.game, self.chis, self.config = game, chis, config

    def __call__(self, reps):
        init = initial_states(self.game, self.config, reps)
        return run_batch(self.game, self.chis, init, reps, self.config.seed)


def simulate_batch(game: GameSpec, profile, config: SimConfig, workers: int = 1, reps=None) -> Batch:
    """All replications of ``config``; the result does not depend on ``workers``."""
    if game.stationary:
        raise InputError("simulate a transient game, or truncate the stationary one first")
    chis = profile_array(game, profile, game.horizon)
    reps = np.arange(config.replications) if reps is None else np.asarray(reps)
    parts = parallel_map(_SimJob(game, chis, config), _chunks(reps, workers), workers)
    return Batch(np.concatenate([p.states for p in parts], axis=1),
                 np.concatenate([p.actions for p in parts], axis=1),
                 np.concatenate([p.payoffs for p in parts], axis=1))


def simulate_trajectory(game: GameSpec, profile, config: SimConfig, replication_index: int) -> TrajectoryRecord:
    """A single replication, identical to row ``replication_index`` of any batch run."""
    b = simulate_batch(game, profile, config, reps=[replication_index])
    return TrajectoryRecord(game, b.states[:, 0], b.actions[:, 0], b.payoffs[:, 0])


def check_leave_one_out(record: TrajectoryRecord) -> bool:
    """Adding each player's own pair back to its leave-one-out law recovers the full empirical law."""
    game = record.game
    n = record.state_idx.shape[1]
    for s, x in zip(record.state_idx, record.action_idx):
        full = empirical_from_indices(s * game.X.size + x, game.SX)
        for player in range(n):
            loo = leave_one_out_env([game.S.labels[i] for i in s], [game.X.labels[i] for i in x], player, game)
            own = game.SX.labels[s[player] * game.X.size + x[player]]
            if not np.array_equal(contaminate(own, loo.flat(), n).weights, full.weights):
                return False
    return True


@dataclass(frozen=True)
class Resemblance:
    period: int
    fraction: float
    ci_lo: float
    ci_hi: float
    replications: int


def wilson_interval(k: int, total: int, confidence: float = 0.95):
    ci = stats.binomtest(int(k), int(total)).proportion_ci(confidence_level=confidence, method="wilson")
    return float(ci.low), float(ci.high)


def resemblance_probability(game: GameSpec, profile, sigma_trajectory: EnvTrajectory, n: int, epsilon: float,
                            replications: int, seed: int, workers: int = 1, initial="iid"):
    """Per period, the share of replications whose empirical state law is within ``epsilon`` of sigma_t."""
    if not 0 < epsilon < 1:
        raise InputError("epsilon must lie in (0, 1)")
    config = SimConfig(n, replications, seed, initial)
    batch = simulate_batch(game, profile, config, workers)
    out = []
    ns = game.S.size
    for t, sigma in enumerate(sigma_trajectory.sigmas, start=1):
        counts = np.zeros((replications, ns))
        np.add.at(counts, (np.repeat(np.arange(replications), n), batch.states[t - 1].ravel()), 1)
        rho = prohorov_batch(game.S, counts / n, np.asarray(sigma.weights))
        k = int((rho < epsilon).sum())
        lo, hi = wilson_interval(k, replications)
        out.append(Resemblance(t, k / replications, lo, hi, replications))
    return out
