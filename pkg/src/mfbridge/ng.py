"""Nonatomic game: environment dynamics, value recursion and equilibrium search."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .errors import InputError
from .game import GameSpec, softmax
from .spaces import Dist, JointDist, PolicyKernel

TIE_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class PolicyProfile:
    """One policy kernel per period."""

    kernels: tuple

    def __post_init__(self):
        object.__setattr__(self, "kernels", tuple(self.kernels))

    def __len__(self):
        return len(self.kernels)

    def __getitem__(self, i):
        return self.kernels[i]

    def __iter__(self):
        return iter(self.kernels)

    @property
    def array(self) -> np.ndarray:
        if not self.kernels:
            return np.zeros((0, 0, 0))
        return np.stack([k.rows for k in self.kernels])

    @classmethod
    def from_array(cls, game: GameSpec, arr) -> "PolicyProfile":
        arr = np.asarray(arr, dtype=float)
        return cls(tuple(PolicyKernel(game.S, game.X, a) for a in arr))

    @classmethod
    def uniform(cls, game: GameSpec, length: int | None = None) -> "PolicyProfile":
        k = game.horizon if length is None else length
        return cls((PolicyKernel.uniform(game.S, game.X),) * k)

    @classmethod
    def constant(cls, kernel: PolicyKernel, length: int) -> "PolicyProfile":
        return cls((kernel,) * length)


@dataclass(frozen=True, eq=False)
class EnvTrajectory:
    sigmas: tuple
    taus: tuple

    @property
    def sigma_array(self) -> np.ndarray:
        return np.stack([s.weights for s in self.sigmas])


@dataclass(frozen=True, eq=False)
class ValueTable:
    """``values[t - 1, s]`` for periods 1..horizon+1."""

    values: np.ndarray

    def __call__(self, t: int, s: int) -> float:
        return float(self.values[t - 1, s])


def profile_array(game: GameSpec, profile, length: int | None = None) -> np.ndarray:
    """Normalise a profile given as PolicyProfile, kernels, or an array into shape (L, |S|, |X|)."""
    if isinstance(profile, PolicyKernel):
        profile = [profile]
    if isinstance(profile, (PolicyProfile, list, tuple)):
        kernels = list(profile)
        for k in kernels:
            if not isinstance(k, PolicyKernel):
                raise InputError("profile entries must be policy kernels")
            if k.state_space != game.S or k.action_space != game.X:
                raise InputError("policy kernel spaces do not match the game")
        arr = np.stack([k.rows for k in kernels]) if kernels else np.zeros((0, game.S.size, game.X.size))
    else:
        arr = np.asarray(profile, dtype=float)
        if arr.ndim == 2:
            arr = arr[None]
    if arr.shape[1:] != (game.S.size, game.X.size):
        raise InputError(f"profile has shape {arr.shape}")
    if length is not None and arr.shape[0] != length:
        raise InputError(f"profile has {arr.shape[0]} periods, expected {length}")
    return arr


def _sigma_array(game, sigma) -> np.ndarray:
    if isinstance(sigma, Dist):
        if sigma.space != game.S:
            raise InputError("distribution is not over S")
        return np.asarray(sigma.weights)
    return np.asarray(sigma, dtype=float)


def step_arrays(game: GameSpec, t: int, sigma: np.ndarray, chi: np.ndarray):
    """One period from pre-action environment ``sigma``: (tau, payoff table, transition table, next sigma)."""
    tau = sigma[:, None] * chi
    f = game.payoff(t).table(tau)
    g = game.transition(t).table(tau)
    nxt = np.einsum("sx,sxy->y", tau, g)
    return tau, f, g, nxt


def env_arrays(game: GameSpec, t0: int, sigma, chis: np.ndarray):
    """Forward pass for periods t0, t0+1, ... driven by ``chis``.

    Returns sigmas (L+1, S), taus (L, S, X), payoff tables (L, S, X) and
    transition tables (L, S, X, S).
    """
    sig = [np.asarray(sigma, dtype=float)]
    taus, fs, gs = [], [], []
    for k, chi in enumerate(chis):
        tau, f, g, nxt = step_arrays(game, t0 + k, sig[-1], chi)
        taus.append(tau)
        fs.append(f)
        gs.append(g)
        sig.append(nxt)
    L, ns, nx = len(chis), game.S.size, game.X.size
    return (np.stack(sig), np.array(taus).reshape(L, ns, nx), np.array(fs).reshape(L, ns, nx),
            np.array(gs).reshape(L, ns, nx, ns))


def backward(fs: np.ndarray, gs: np.ndarray, policy: np.ndarray, discount: np.ndarray | None = None):
    """Backward recursion ``V_t = sum_x policy_t(x|s) (f_t + sum_s' g_t V_{t+1})``.

    ``discount[k]`` multiplies the continuation at step k (ones for transient games).
    Returns V (L+1, S) with a zero terminal row and Q (L, S, X).
    """
    L, ns, nx = fs.shape
    V = np.zeros((L + 1, ns))
    Q = np.zeros((L, ns, nx))
    for k in range(L - 1, -1, -1):
        cont = gs[k] @ V[k + 1]
        if discount is not None:
            cont = discount[k] * cont
        Q[k] = fs[k] + cont
        V[k] = (policy[k] * Q[k]).sum(axis=1)
    return V, Q


def ng_step(game: GameSpec, t: int, sigma: Dist, chi_t: PolicyKernel) -> Dist:
    """Pre-action environment of period t+1 when everyone follows ``chi_t`` from ``sigma``."""
    chi = profile_array(game, chi_t)[0]
    _, _, _, nxt = step_arrays(game, t, _sigma_array(game, sigma), chi)
    return Dist(game.S, nxt)


def ng_trajectory(game: GameSpec, sigma1, profile) -> EnvTrajectory:
    chis = profile_array(game, profile, None if game.stationary else game.horizon)
    sig, taus, _, _ = env_arrays(game, 1, _sigma_array(game, sigma1), chis)
    return EnvTrajectory(tuple(Dist(game.S, s) for s in sig),
                         tuple(JointDist(game.S, game.X, t) for t in taus))


def _check_suffix(game, t, length):
    if game.stationary:
        raise InputError("use the stationary engine for discounted games")
    if not 1 <= t <= game.horizon + 1:
        raise InputError(f"period {t} out of range 1..{game.horizon + 1}")
    if length != game.horizon - t + 1:
        raise InputError(f"suffix from period {t} must have {game.horizon - t + 1} entries, got {length}")


def ng_value(game: GameSpec, t: int, s, deviation, sigma_t, chi_suffix) -> float:
    """Value from period t at state ``s`` playing ``deviation`` while the population follows ``chi_suffix``.

    The environment evolves under the population policy, never under the deviation.
    """
    L = game.horizon - t + 1 if not game.stationary else None
    xi = profile_array(game, deviation) if L != 0 else np.zeros((0, game.S.size, game.X.size))
    chis = profile_array(game, chi_suffix) if L != 0 else np.zeros((0, game.S.size, game.X.size))
    _check_suffix(game, t, xi.shape[0])
    _check_suffix(game, t, chis.shape[0])
    if xi.shape[0] == 0:
        return 0.0
    _, _, fs, gs = env_arrays(game, t, _sigma_array(game, sigma_t), chis)
    V, _ = backward(fs, gs, xi)
    return float(V[0, game.S.index(s)])


def ng_values(game: GameSpec, sigma1, profile) -> ValueTable:
    """On-policy values v_t(s) for every period along the profile's own trajectory."""
    chis = profile_array(game, profile, game.horizon)
    _, _, fs, gs = env_arrays(game, 1, _sigma_array(game, sigma1), chis)
    V, _ = backward(fs, gs, chis)
    return ValueTable(V)


def best_action_set(game: GameSpec, t: int, s, sigma_t, chi_suffix, tol: float = TIE_TOL):
    """Actions whose one-shot Dirac deviation attains the best value, with every action's value.

    Returns ``(actions, values)``; ``actions`` is ordered by action index.
    """
    chis = profile_array(game, chi_suffix)
    _check_suffix(game, t, chis.shape[0])
    if chis.shape[0] == 0:
        raise InputError("no decision at the terminal period")
    _, _, fs, gs = env_arrays(game, t, _sigma_array(game, sigma_t), chis)
    _, Q = backward(fs, gs, chis)
    q = Q[0, game.S.index(s)]
    best = q.max()
    actions = [game.X.labels[j] for j in range(game.X.size) if q[j] >= best - tol]
    return actions, {game.X.labels[j]: float(q[j]) for j in range(game.X.size)}


def residual_arrays(game: GameSpec, sigma1: np.ndarray, chis: np.ndarray):
    """Per-(t, s) gain of the best one-shot Dirac deviation along the profile's own trajectory."""
    sig, _, fs, gs = env_arrays(game, 1, sigma1, chis)
    V, Q = backward(fs, gs, chis)
    table = Q.max(axis=2) - V[:-1]
    return np.maximum(table, 0.0), Q, sig


def ng_equilibrium_residual(game: GameSpec, sigma1, profile):
    """Overall residual (max over periods and states) and the per-(t, s) table."""
    chis = profile_array(game, profile, game.horizon)
    table, _, _ = residual_arrays(game, _sigma_array(game, sigma1), chis)
    return float(table.max()), table


@dataclass(frozen=True)
class SolverOptions:
    max_iters: int = 500
    damping: float = 0.3
    temp_start: float = 1.0
    temp_end: float = 0.01
    anneal_iters: int = 200
    tol: float = 1e-9
    polish: bool = True

    def temperature(self, it: int) -> float:
        frac = min(1.0, (it - 1) / max(1, self.anneal_iters - 1))
        return self.temp_start * (self.temp_end / self.temp_start) ** frac


@dataclass(frozen=True, eq=False)
class NGSolution:
    profile: PolicyProfile
    trajectory: EnvTrajectory
    residual: float
    table: np.ndarray
    iterations: int
    status: str
    history: tuple = field(default=(), repr=False)


def _hx_values(game, sigs, chis):
    """Q_t(s, y) evaluated from each iterate sigma_t forward under the iterate policy."""
    T = chis.shape[0]
    Q = np.zeros_like(chis)
    for t in range(1, T + 1):
        _, _, fs, gs = env_arrays(game, t, sigs[t - 1], chis[t - 1:])
        _, q = backward(fs, gs, chis[t - 1:])
        Q[t - 1] = q[0]
    return Q


def _structural_ties(game, sigma1, rng):
    """(t, s) cells whose action values coincide whatever the population does."""
    T, ns, nx = game.horizon, game.S.size, game.X.size
    tied = np.ones((T, ns), dtype=bool)
    for _ in range(3):
        chis = rng.dirichlet(np.ones(nx), size=(T, ns))
        sig = rng.dirichlet(np.ones(ns))
        _, Q, _ = residual_arrays(game, sig, chis)
        tied &= (Q.max(axis=2) - Q.min(axis=2)) < 1e-13
    return tied


def _solve_support(game, sigma1, chis, tied, support):
    """Least-squares solve of the indifference equations for a fixed support per (t, s)."""
    T, ns, nx = chis.shape
    base = chis.copy()
    cells = []
    for t in range(T):
        for s in range(ns):
            if tied[t, s]:
                continue
            sup = support[t][s]
            if len(sup) >= 2:
                cells.append((t, s, sup))
            base[t, s] = 0.0
            base[t, s, sup[0]] = 1.0
    if not cells:
        return base

    def unpack(z):
        out = base.copy()
        k = 0
        for t, s, sup in cells:
            out[t, s] = 0.0
            free = z[k:k + len(sup) - 1]
            out[t, s, sup[:-1]] = free
            out[t, s, sup[-1]] = 1.0 - free.sum()
            k += len(sup) - 1
        return out

    def equations(z):
        _, q, _ = residual_arrays(game, sigma1, unpack(z))
        return np.concatenate([q[t, s, sup[:-1]] - q[t, s, sup[-1]] for t, s, sup in cells])

    z0 = np.concatenate([chis[t, s, sup[:-1]] for t, s, sup in cells])
    # least squares copes with the rank-deficient systems that arise when several
    # states face identical incentives
    sol = optimize.least_squares(equations, np.clip(z0, 0.0, 1.0), bounds=(0.0, 1.0),
                                 xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=2000)
    out = np.clip(unpack(sol.x), 0.0, 1.0)
    return out / out.sum(axis=2, keepdims=True)


def _refine_support(game, sigma1, chis, tied, support, rounds):
    best, best_res = None, np.inf
    T, ns, nx = chis.shape
    current = chis
    for _ in range(rounds):
        current = _solve_support(game, sigma1, current, tied, support)
        table, Q, _ = residual_arrays(game, sigma1, current)
        r = float(table.max())
        if r < best_res:
            best, best_res = current, r
        new = []
        for t in range(T):
            row = []
            for s in range(ns):
                top = Q[t, s].max()
                keep = [x for x in support[t][s] if current[t, s, x] > 1e-9]
                add = [x for x in range(nx) if Q[t, s, x] >= top - 1e-12 and x not in keep]
                row.append(sorted(keep + add) or [int(Q[t, s].argmax())])
            new.append(row)
        if new == support:
            break
        support = new
    return best, best_res


def _polish(game, sigma1, chis, rounds=6, target=1e-12):
    """Support enumeration around the iterate, solving indifference equations on each guess.

    Initial supports come from several value-gap thresholds; within a run, actions
    whose weight collapses are dropped and actions that become profitable are
    added until the support stabilises.  Returns the best profile seen.
    """
    T, ns, nx = chis.shape
    tied = _structural_ties(game, sigma1, np.random.default_rng(0))
    _, Q, _ = residual_arrays(game, sigma1, chis)
    gaps = Q.max(axis=2, keepdims=True) - Q
    guesses = []
    for delta in (3e-2, 1e-2, 3e-3, 1e-3, 1e-4):
        for mass in (0.0, 1e-2):
            sup = [[[x for x in range(nx) if gaps[t, s, x] <= delta and chis[t, s, x] > mass]
                    or [int(Q[t, s].argmax())] for s in range(ns)] for t in range(T)]
            if sup not in guesses:
                guesses.append(sup)
    best, best_res = None, np.inf
    for sup in guesses:
        cand, r = _refine_support(game, sigma1, chis, tied, sup, rounds)
        if r < best_res:
            best, best_res = cand, r
        if best_res <= target:
            break
    return best


def solve_ng_equilibrium(game: GameSpec, sigma1=None, options: SolverOptions | None = None, initial=None) -> NGSolution:
    """Damped smoothed best-response iteration on (sigma_2..T, chi_1..T).

    Each iteration maps the iterate through the trajectory operator and an
    annealed softmax of one-shot deviation values, then mixes with weight
    ``damping``.  Every iterate, and its purified argmax profile, is certified by
    its exact residual; the best one found is returned.  A final root-finding
    polish on the indifference equations of the detected support usually removes
    the smoothing bias.
    """
    if game.stationary:
        raise InputError("solve_ng_equilibrium needs a transient game")
    opts = options or SolverOptions()
    sigma1 = _sigma_array(game, game.initial_sigma if sigma1 is None else sigma1)
    T, ns, nx = game.horizon, game.S.size, game.X.size
    chis = np.full((T, ns, nx), 1.0 / nx) if initial is None else profile_array(game, initial, T).copy()
    sigs, _, _, _ = env_arrays(game, 1, sigma1, chis)
    lam = opts.damping

    best_res, best_chis = np.inf, chis
    history = []
    it = 0
    for it in range(1, opts.max_iters + 1):
        Q = _hx_values(game, sigs, chis)
        br = softmax(Q / opts.temperature(it), axis=2)
        hs = sigs.copy()
        for t in range(1, T):
            hs[t] = step_arrays(game, t, sigs[t - 1], chis[t - 1])[3]
        chis = (1 - lam) * chis + lam * br
        sigs = (1 - lam) * sigs + lam * hs

        table, Qc, _ = residual_arrays(game, sigma1, chis)
        pure = np.zeros_like(chis)
        pure[np.arange(T)[:, None], np.arange(ns)[None, :], Qc.argmax(axis=2)] = 1.0
        ptable, _, _ = residual_arrays(game, sigma1, pure)
        for cand, tab in ((chis, table), (pure, ptable)):
            r = float(tab.max())
            if r < best_res:
                best_res, best_chis = r, cand.copy()
        history.append(best_res)
        if best_res <= opts.tol:
            break

    if best_res > opts.tol and opts.polish:
        polished = _polish(game, sigma1, best_chis)
        if polished is not None:
            r = float(residual_arrays(game, sigma1, polished)[0].max())
            if r < best_res:
                best_res, best_chis = r, polished
                history.append(r)

    table, _, _ = residual_arrays(game, sigma1, best_chis)
    profile = PolicyProfile.from_array(game, best_chis)
    traj = ng_trajectory(game, Dist(game.S, sigma1), profile)
    status = "converged" if best_res <= opts.tol else "residual_above_tol"
    return NGSolution(profile, traj, float(table.max()), table, it, status, tuple(history))
