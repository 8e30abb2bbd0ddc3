"""Regret of a shared profile in the n-player game, exactly for tiny n and by simulation at scale."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace

import numpy as np

from . import rng
from .errors import CapacityError, DegenerateConditionError, InputError
from .exact import dense, multistate_path, value_tables
from .game import GameSpec
from .ng import ng_trajectory, profile_array
from .prohorov import prohorov
from .sim import SimConfig, initial_states, parallel_map, run_batch, sample_categorical, _chunks
from .spaces import Dist, MultiDist, condition_first, is_symmetric
from .stationary import truncation_error, truncation_horizon

PREDICTORS = ("lazy", "marginal", "bayes")
REGRET_COLUMNS = ("n", "t", "s1", "predictor", "mode", "regret", "stderr", "deviation_policy_id",
                  "truncation_bound")


@dataclass(frozen=True)
class RegretRow:
    n: int
    t: int
    s1: object
    predictor: str
    mode: str            # exact | mc
    regret: float
    stderr: float | None
    deviation_policy_id: str
    truncation_bound: float = 0.0
    search: str = "exhaustive"   # exhaustive | greedy-backward (lower bound)
    realization: str = "exact"   # how the predictor was realised

    def as_csv(self):
        return [self.n, self.t, self.s1, self.predictor, self.mode, repr(float(self.regret)),
                "" if self.stderr is None else repr(float(self.stderr)), self.deviation_policy_id,
                repr(float(self.truncation_bound))]


@dataclass(frozen=True)
class RegretReport:
    rows: tuple

    def max_regret(self):
        """Row with the largest regret over (t, s1)."""
        return max(self.rows, key=lambda r: r.regret)

    @property
    def lower_bound_only(self) -> bool:
        return any(r.search != "exhaustive" for r in self.rows)


def policy_id(game: GameSpec, xi: np.ndarray) -> str:
    """Readable encoding of a deviation: per period, each state's action label (or 'mix')."""
    parts = []
    for period in xi:
        cells = []
        for s in range(game.S.size):
            row = period[s]
            j = int(row.argmax())
            cells.append(str(game.X.labels[j]) if row[j] == 1.0 else "mix")
        parts.append(",".join(cells))
    return "|".join(parts)


def dirac_deviations(nx: int, ns: int, L: int) -> np.ndarray:
    """All deterministic Markov plans as a (D, L, S, X) array in lexicographic order."""
    codes = np.array(list(itertools.product(range(nx), repeat=L * ns)), dtype=np.int64).reshape(-1, L, ns)
    out = np.zeros(codes.shape + (nx,))
    np.put_along_axis(out, codes[..., None], 1.0, axis=-1)
    return out


# --- predictors -----------------------------------------------------------------


def predictor_law(game: GameSpec, n: int, t: int, s1, kind: str, sigma_t: Dist, pi_t: MultiDist | None):
    """Dense law of players 2..n at period t for a predictor kind.  Returns (law, realisation label)."""
    if kind == "lazy":
        return MultiDist.power(sigma_t, n - 1), "product"
    if pi_t is None:
        raise CapacityError("dense multi-state law unavailable; use the lazy predictor")
    if kind == "marginal":
        return pi_t.rest_marginal(), "dense"
    if kind == "bayes":
        try:
            return condition_first(pi_t, s1), "dense"
        except DegenerateConditionError:
            return pi_t.rest_marginal(), "dense-marginal-fallback"
    raise InputError(f"unknown predictor {kind!r}")


# --- exact ------------------------------------------------------------------------


def exact_regret(game: GameSpec, n: int, profile, predictor: str = "lazy", budget: int = 1 << 16,
                 periods=None) -> RegretReport:
    """Regret per (t, s1) by enumerating every deterministic Markov deviation.

    The value is multilinear in the deviation's rows, so the maximum over
    randomised Markov plans is attained at a deterministic one.
    """
    if game.stationary:
        raise InputError("exact regret needs a transient game")
    T, ns, nx = game.horizon, game.S.size, game.X.size
    chis = profile_array(game, profile, T)
    traj = ng_trajectory(game, game.initial_sigma, chis)
    path = multistate_path(game, n, chis) if predictor != "lazy" else None
    rows = []
    for t in periods or range(1, T + 1):
        L = T - t + 1
        D = nx ** (ns * L)
        if D > budget:
            raise CapacityError(f"{D} deterministic deviations exceed the budget {budget}", D)
        devs = dirac_deviations(nx, ns, L)
        W = value_tables(game, n, t, np.concatenate([chis[None, t - 1:], devs]), chis[t - 1:])
        W = W.reshape(len(devs) + 1, ns, -1)
        for s in range(ns):
            s1 = game.S.labels[s]
            law, real = predictor_law(game, n, t, s1, predictor, traj.sigmas[t - 1],
                                      path[t - 1] if path else None)
            vals = W[:, s] @ law.weights.ravel()
            best = int(np.argmax(vals[1:]))
            rows.append(RegretRow(n, t, s1, predictor, "exact", float(vals[1 + best] - vals[0]), None,
                                  policy_id(game, devs[best]), 0.0, "exhaustive", real))
    return RegretReport(tuple(rows))


# --- Monte Carlo ------------------------------------------------------------------


class _OthersSampler:
    """Draws the other n-1 players' period-t states for each replication."""

    def __init__(self, game, n, t, s1, kind, sigma_t, chis, seed, store_reps, dense_law=None):
        self.game, self.n, self.t, self.kind = game, n, t, kind
        self.s1 = game.S.index(s1)
        self.sigma_t = np.asarray(sigma_t.weights)
        self.seed = seed
        self.dense_law = dense_law
        self.realization = "product"
        self.store = None
        if kind == "lazy":
            return
        if dense_law is not None:
            self.realization = "dense"
            return
        # on-policy runs supply the surrogate for the exact multi-state law
        store_seed = rng.derive_seed(seed, 2)
        reps = np.arange(store_reps)
        init = initial_states(game, SimConfig(n, store_reps, store_seed), reps)
        states = run_batch(game, chis[: t - 1], init, reps, store_seed, payoffs="none").states[-1]
        self.store = states
        self.realization = "resampled"
        if kind == "bayes":
            hits = np.argwhere(states == self.s1)
            if len(hits) == 0:
                self.kind = "marginal"
                self.realization = "resampled-marginal-fallback"
            else:
                self.hits = hits

    def __call__(self, reps: np.ndarray) -> np.ndarray:
        n, R = self.n, len(reps)
        seed = rng.derive_seed(self.seed, 3, self.t, self.s1)
        out = np.empty((R, n), dtype=np.int64)
        out[:, 0] = self.s1
        if self.kind == "lazy":
            u = rng.uniforms(seed, reps[:, None], self.t, np.arange(1, n)[None, :], rng.INIT)
            out[:, 1:] = sample_categorical(np.broadcast_to(self.sigma_t, u.shape + (len(self.sigma_t),)), u)
            return out
        u = rng.uniforms(seed, reps, self.t, 0, rng.RESAMPLE)
        if self.dense_law is not None:
            cells = sample_categorical(np.broadcast_to(self.dense_law, (R, len(self.dense_law))), u)
            out[:, 1:] = np.array(np.unravel_index(cells, (self.game.S.size,) * (n - 1))).T
            return out
        if self.kind == "marginal":
            rows = np.minimum((u * len(self.store)).astype(np.int64), len(self.store) - 1)
            out[:, 1:] = self.store[rows, 1:]
            return out
        pick = np.minimum((u * len(self.hits)).astype(np.int64), len(self.hits) - 1)
        r, p = self.hits[pick].T
        full = self.store[r]
        mask = np.ones_like(full, dtype=bool)
        mask[np.arange(R), p] = False
        out[:, 1:] = full[mask].reshape(R, n - 1)
        return out


class _ValueJob:
    def __init__(self, game, chis, devs, t, sampler, seed, discount=None):
        self.game, self.chis, self.devs, self.t, self.sampler, self.seed = game, chis, devs, t, sampler, seed
        L = len(chis)
        self.weights = np.ones(L) if discount is None else discount ** np.arange(L)

    def __call__(self, reps):
        init = self.sampler(reps)
        out = []
        for dev in self.devs:
            b = run_batch(self.game, self.chis, init, reps, self.seed, self.t, dev, payoffs="deviator")
            out.append(self.weights @ b.payoffs[:, :, 0])
        return np.stack(out)


def _totals(game, chis, devs, t, sampler, reps, seed, workers, discount=None):
    """Per-replication (discounted) totals of player 0 for each candidate plan, with common random numbers."""
    job = _ValueJob(game, chis, devs, t, sampler, seed, discount)
    return np.concatenate(parallel_map(job, _chunks(reps, workers), workers), axis=1)


def _sampler(game, n, t, s1, predictor, profile, seed, replications):
    chis = profile_array(game, profile, game.horizon)
    traj = ng_trajectory(game, game.initial_sigma, chis)
    dense_law = None
    if predictor != "lazy" and n <= 4:
        try:
            path = multistate_path(game, n, chis)
            law, _ = predictor_law(game, n, t, s1, predictor, traj.sigmas[t - 1], path[t - 1])
            dense_law = law.weights.ravel()
        except CapacityError:
            dense_law = None
    return _OthersSampler(game, n, t, s1, predictor, traj.sigmas[t - 1], chis, seed, replications, dense_law)


def mc_finite_value(game: GameSpec, n: int, t: int, s1, deviation, predictor: str, profile,
                    replications: int, seed: int, workers: int = 1):
    """Unbiased estimate of player 1's predictor-averaged value and its standard error."""
    if predictor not in PREDICTORS:
        raise InputError(f"unknown predictor {predictor!r}")
    T = game.horizon
    if not 1 <= t <= T:
        raise InputError(f"period {t} out of range 1..{T}")
    chis = profile_array(game, profile, T)
    xi = profile_array(game, deviation, T - t + 1)
    sampler = _sampler(game, n, t, s1, predictor, chis, seed, replications)
    totals = _totals(game, chis[t - 1:], [xi], t, sampler, np.arange(replications),
                     rng.derive_seed(seed, 1), workers)[0]
    return float(totals.mean()), float(totals.std(ddof=1) / np.sqrt(replications))


def mc_regret(game: GameSpec, n: int, profile, predictor: str = "lazy", replications: int = 4000,
              seed: int = 0, workers: int = 1, search: str = "greedy-backward", budget: int = 64,
              search_replications: int | None = None, periods=None, states=None) -> RegretReport:
    """Simulated regret per (t, s1).

    A deviation is chosen on one set of replications (exhaustively when the
    number of deterministic plans fits ``budget`` and ``search`` allows it,
    otherwise by greedy backward improvement) and then re-evaluated as a paired
    difference against the profile on fresh replications.  The estimate is
    therefore an unbiased value for a specific plan, i.e. a lower bound on regret.
    """
    if predictor not in PREDICTORS:
        raise InputError(f"unknown predictor {predictor!r}")
    T, ns, nx = game.horizon, game.S.size, game.X.size
    chis = profile_array(game, profile, T)
    R_search = search_replications or replications
    rows = []
    for t in periods or range(1, T + 1):
        L = T - t + 1
        suffix = chis[t - 1:]
        for s in states if states is not None else range(ns):
            s1 = game.S.labels[s]
            sampler = _sampler(game, n, t, s1, predictor, chis, seed, max(replications, R_search))
            search_seed = rng.derive_seed(seed, 4, t, s)
            search_reps = np.arange(R_search)
            D = nx ** (ns * L)
            if search == "dirac-profiles" and D <= budget:
                devs = dirac_deviations(nx, ns, L)
                totals = _totals(game, suffix, list(devs), t, sampler, search_reps, search_seed, workers)
                xi = devs[int(np.argmax(totals.mean(axis=1)))]
                kind = "exhaustive-search"
            else:
                xi = suffix.copy()
                for u in range(L - 1, -1, -1):
                    for st in ([s] if u == 0 else range(ns)):
                        cands = []
                        for y in range(nx):
                            c = xi.copy()
                            c[u, st] = 0.0
                            c[u, st, y] = 1.0
                            cands.append(c)
                        totals = _totals(game, suffix, cands, t, sampler, search_reps, search_seed, workers)
                        xi = cands[int(np.argmax(totals.mean(axis=1)))]
                kind = "greedy-backward"
            eval_seed = rng.derive_seed(seed, 5, t, s)
            reps = np.arange(R_search, R_search + replications)
            totals = _totals(game, suffix, [xi, suffix], t, sampler, reps, eval_seed, workers)
            diff = totals[0] - totals[1]
            rows.append(RegretRow(n, t, s1, predictor, "mc", float(diff.mean()),
                                  float(diff.std(ddof=1) / np.sqrt(replications)), policy_id(game, xi),
                                  0.0, kind, sampler.realization))
    return RegretReport(tuple(rows))


def best_deviation(game: GameSpec, n: int, s1, predictor: str, profile, search: str = "dirac-profiles",
                   budget: int = 1 << 16, mode: str = "exact", **mc_options) -> RegretReport:
    """Regret rows for one starting state across all periods."""
    if mode == "exact":
        try:
            rep = exact_regret(game, n, profile, predictor, budget)
        except CapacityError:
            if search == "dirac-profiles":
                mode = "mc"
            else:
                raise
        else:
            return RegretReport(tuple(r for r in rep.rows if r.s1 == s1))
    s = game.S.index(s1)
    return mc_regret(game, n, profile, predictor, search=search, budget=budget, states=[s], **mc_options)


# --- symmetry experiment --------------------------------------------------------


@dataclass(frozen=True)
class SymmetryRow:
    n: int
    t: int
    symmetric: bool
    state_gaps: tuple        # |pi_nt|_S(s) - sigma_t(s)| per state
    marginal_gap: float      # Prohorov distance of one player's marginal to sigma_t
    conditional_gap: float   # worst Prohorov distance of another player's conditional law to sigma_t


def symmetric_conditioning_experiment(game: GameSpec, n: int, t: int, profile, initial: MultiDist | None = None,
                                      tol: float = 1e-12) -> SymmetryRow:
    """Exact check that the multi-state law is exchangeable and that conditioning on one player's
    state leaves another player's law close to sigma_t."""
    if initial is not None and not is_symmetric(initial, tol):
        raise InputError("initial multi-state law is not symmetric")
    chis = profile_array(game, profile, game.horizon)
    path = multistate_path(game, n, chis, initial)
    if not 1 <= t <= len(path):
        raise InputError(f"period {t} out of range")
    pi = path[t - 1]
    sigma = ng_trajectory(game, game.initial_sigma if initial is None else initial.coordinate_marginal(0),
                          chis).sigmas[t - 1]
    marg = pi.first_marginal()
    gaps = tuple(float(v) for v in np.abs(marg.weights - sigma.weights))
    marginal_gap = prohorov(marg, sigma).value
    cond = 0.0
    for s in range(game.S.size):
        if sigma.weights[s] <= 0 or marg.weights[s] <= 0:
            continue
        c = condition_first(pi, game.S.labels[s])
        cond = max(cond, prohorov(c.coordinate_marginal(0), sigma).value)
    return SymmetryRow(n, t, is_symmetric(pi, tol), gaps, marginal_gap, cond)


def stationary_regret(game: GameSpec, n: int, chi, sigma, replications: int = 4000, seed: int = 0,
                      workers: int = 1, epsilon: float = 0.05, search_replications: int | None = None,
                      states=None) -> RegretReport:
    """Regret of the stationary policy chi in the discounted n-player game, per starting state.

    The others start iid from ``sigma`` (the product predictor) and the game is
    truncated at ``truncation_horizon(epsilon)``.  Candidates are every stationary
    Dirac plan and every one-shot Dirac deviation followed by chi; the best on
    search replications is re-evaluated as a paired difference on fresh ones, so
    ``regret`` is a lower bound for the truncated game.  ``truncation_bound`` is
    2 alpha^t fbar / (1 - alpha), the most truncation can move a regret.
    """
    if not game.stationary:
        raise InputError("a stationary (discounted) game is required")
    alpha = game.discount
    L = truncation_horizon(epsilon, alpha, game.fbar)
    ns, nx = game.S.size, game.X.size
    c = profile_array(game, chi)[0]
    sig = sigma if isinstance(sigma, Dist) else Dist(game.S, np.asarray(sigma, dtype=float))
    chis = np.broadcast_to(c, (L,) + c.shape).copy()
    bound = 2 * truncation_error(L, alpha, game.fbar)
    R_search = search_replications or replications
    stationary_plans = [np.broadcast_to(d[0], chis.shape).copy() for d in dirac_deviations(nx, ns, 1)]
    rows = []
    for s in states if states is not None else range(ns):
        s1 = game.S.labels[s]
        sampler = _OthersSampler(game, n, 1, s1, "lazy", sig, chis, seed, 0)
        cands = list(stationary_plans)
        for y in range(nx):
            xi = chis.copy()
            xi[0, s] = 0.0
            xi[0, s, y] = 1.0
            cands.append(xi)
        search_seed = rng.derive_seed(seed, 6, s)
        totals = _totals(game, chis, cands, 1, sampler, np.arange(R_search), search_seed, workers, alpha)
        xi = cands[int(np.argmax(totals.mean(axis=1)))]
        reps = np.arange(R_search, R_search + replications)
        totals = _totals(game, chis, [xi, chis], 1, sampler, reps, rng.derive_seed(seed, 7, s), workers, alpha)
        diff = totals[0] - totals[1]
        rows.append(RegretRow(n, 1, s1, "product-sigma", "mc", float(diff.mean()),
                              float(diff.std(ddof=1) / np.sqrt(replications)), policy_id(game, xi[:1]),
                              bound, "stationary-dirac", "product-sigma"))
    return RegretReport(tuple(rows))
