"""Discounted infinite-horizon games: invariant environments, truncated values and equilibrium search."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .errors import CapacityError, InputError
from .exact import dense
from .game import GameSpec, softmax
from .ng import backward, env_arrays, profile_array, step_arrays
from .prohorov import prohorov
from .spaces import Dist, MultiDist, PolicyKernel

VALUE_EPS = 1e-10


def truncation_horizon(epsilon: float, alpha: float, fbar: float) -> int:
    """Smallest t >= ln(6 fbar / (epsilon (1 - alpha))) / ln(1/alpha) + 1, and at least 1."""
    if not epsilon > 0:
        raise InputError("epsilon must be positive")
    if not 0 <= alpha < 1:
        raise InputError("discount must lie in [0, 1)")
    if not fbar > 0:
        raise InputError("payoff bound must be positive")
    if alpha == 0:
        return 1
    x = math.log(6 * fbar / (epsilon * (1 - alpha))) / math.log(1 / alpha) + 1
    return max(1, math.ceil(x - 1e-12))


def truncation_error(t: int, alpha: float, fbar: float) -> float:
    """Distance between v^t and v^infinity for any plan: alpha^t fbar / (1 - alpha)."""
    return alpha**t * fbar / (1 - alpha)


def _require_stationary(game):
    if not game.stationary:
        raise InputError("a stationary (discounted) game is required")


def _chi(game, chi) -> np.ndarray:
    return profile_array(game, chi)[0]


def _sigma(game, sigma) -> np.ndarray:
    if isinstance(sigma, Dist):
        return np.asarray(sigma.weights)
    return np.asarray(sigma, dtype=float)


def apply_T(game: GameSpec, chi: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    return step_arrays(game, 1, sigma, chi)[3]


def invariance_gap(game: GameSpec, chi, sigma) -> float:
    """Prohorov distance between sigma and its image under one period of chi."""
    c, s = _chi(game, chi), _sigma(game, sigma)
    return prohorov(Dist(game.S, s / s.sum()), Dist(game.S, apply_T(game, c, s))).value


@dataclass(frozen=True, eq=False)
class InvariantResult:
    sigma: Dist
    gap: float
    success: bool
    fixed_points: tuple   # every distinct invariant law found (pairwise > 10 tol apart)


def _iterate(game, chi, sigma, max_iters, tol, damping):
    for _ in range(max_iters):
        nxt = apply_T(game, chi, sigma)
        if np.abs(nxt - sigma).max() <= tol * 1e-3:
            return nxt
        sigma = (1 - damping) * sigma + damping * nxt if damping < 1 else nxt
    return sigma


def _newton_invariant(game, chi, sigma):
    k = len(sigma)

    def eq(z):
        s = np.append(z, 1 - z.sum())
        return (apply_T(game, chi, s) - s)[:-1]

    sol = optimize.root(eq, sigma[:-1], method="hybr", options={"xtol": 1e-15})
    s = np.append(sol.x, 1 - sol.x.sum())
    if np.all(s >= -1e-12):
        s = np.clip(s, 0, None)
        return s / s.sum()
    return None


def invariant_distribution(game: GameSpec, chi, sigma0=None, max_iters: int = 10000, tol: float = 1e-10,
                           restarts: bool = True) -> InvariantResult:
    """Fixed points of sigma -> T(chi) sigma by iteration from several starting laws.

    Starts are ``sigma0`` (when given), the uniform law and every Dirac law.  Plain
    iteration is tried first, then a damped variant (which has the same fixed
    points and handles periodic dynamics), then a Newton polish.  The returned law
    has the smallest gap; ``success`` reports whether that gap is within ``tol``.
    """
    _require_stationary(game)
    c = _chi(game, chi)
    k = game.S.size
    starts = []
    if sigma0 is not None:
        starts.append(_sigma(game, sigma0))
    if restarts or not starts:
        starts.append(np.full(k, 1.0 / k))
        if restarts:
            starts.extend(np.eye(k))
    found = []
    for s0 in starts:
        best_s, best_gap = None, np.inf
        for damping in (1.0, 0.5):
            s = _iterate(game, c, s0.copy(), max_iters, tol, damping)
            gap = invariance_gap(game, c, s)
            if gap < best_gap:
                best_s, best_gap = s, gap
            if gap <= tol:
                break
        if best_gap > tol:
            s = _newton_invariant(game, c, best_s)
            if s is not None:
                gap = invariance_gap(game, c, s)
                if gap < best_gap:
                    best_s, best_gap = s, gap
        found.append((best_gap, best_s))
    gap, sigma = min(found, key=lambda p: p[0])
    distinct = []
    for g_, s in found:
        if g_ <= tol and all(np.abs(s - d).max() > 10 * tol for d in distinct):
            distinct.append(s)
    return InvariantResult(Dist(game.S, sigma / sigma.sum()), float(gap), bool(gap <= tol),
                           tuple(Dist(game.S, d / d.sum()) for d in distinct))


def discounted_values(game: GameSpec, sigma, chi, deviation, horizon: int):
    """v^horizon under a deviation plan (L' <= horizon periods, then chi) against chi from sigma.

    Returns (V (horizon+1, S), Q (horizon, S, X)).
    """
    c = _chi(game, chi)
    chis = np.broadcast_to(c, (horizon,) + c.shape)
    xi = np.array(chis)
    if deviation is not None:
        dev = profile_array(game, deviation)
        m = min(len(dev), horizon)
        xi[:m] = dev[:m]
    _, _, fs, gs = env_arrays(game, 1, _sigma(game, sigma), chis)
    return backward(fs, gs, xi, np.full(horizon, game.discount))


@dataclass(frozen=True)
class StationaryValue:
    value: float
    horizon: int
    error_bound: float
    sigma_invariant: bool


def stationary_value(game: GameSpec, s, deviation_prefix, sigma, chi, epsilon: float = 1e-6,
                     invariance_tol: float = 1e-9) -> StationaryValue:
    """v^t at the truncation horizon for ``epsilon``; within ``epsilon / 6`` of v^infinity.

    ``deviation_prefix`` is a (possibly empty) list of kernels followed by chi forever.
    """
    if game.discount is None:
        raise InputError("a discount factor is required")
    _require_stationary(game)
    t = truncation_horizon(epsilon, game.discount, game.fbar)
    prefix = profile_array(game, deviation_prefix) if deviation_prefix is not None and len(deviation_prefix) else None
    V, _ = discounted_values(game, sigma, chi, prefix, t)
    invariant = invariance_gap(game, chi, sigma) <= invariance_tol
    if not invariant:
        warnings.warn("sigma is not invariant for chi; the value refers to a moving environment", stacklevel=2)
    return StationaryValue(float(V[0, game.S.index(s)]), t, truncation_error(t, game.discount, game.fbar), invariant)


def stationary_residual(game: GameSpec, chi, sigma, epsilon: float = VALUE_EPS) -> np.ndarray:
    """Per state, the gain of the best one-shot Dirac deviation followed by chi forever."""
    _require_stationary(game)
    t = truncation_horizon(epsilon, game.discount, game.fbar)
    V, Q = discounted_values(game, sigma, chi, None, t)
    return np.maximum(Q[0].max(axis=1) - V[0], 0.0)


def _q_values(game, sigma, chi, t):
    V, Q = discounted_values(game, sigma, chi, None, t)
    return V[0], Q[0]


@dataclass(frozen=True)
class StationaryOptions:
    max_iters: int = 2000
    damping: float = 0.3
    temp_start: float = 1.0
    temp_end: float = 0.01
    anneal_iters: int = 300
    tol: float = 1e-6
    epsilon: float = VALUE_EPS
    polish: bool = True

    def temperature(self, it: int) -> float:
        frac = min(1.0, (it - 1) / max(1, self.anneal_iters - 1))
        return self.temp_start * (self.temp_end / self.temp_start) ** frac


@dataclass(frozen=True, eq=False)
class StationaryEquilibrium:
    chi: PolicyKernel
    sigma: Dist
    residual: float
    invariance_gap: float
    table: np.ndarray
    iterations: int
    status: str


def _score(game, chi, sigma, t):
    V, Q = _q_values(game, sigma, chi, t)
    res = float(np.maximum(Q.max(axis=1) - V, 0).max())
    gap = float(np.abs(apply_T(game, chi, sigma) - sigma).sum() / 2)
    return max(res, gap), res, gap


def _polish_stationary(game, chi, sigma, t, tol):
    """Least squares on invariance plus indifference, over supports guessed from value gaps."""
    k, m = chi.shape
    V, Q = _q_values(game, sigma, chi, t)
    gaps = Q.max(axis=1, keepdims=True) - Q
    tied = np.zeros(k, dtype=bool)
    rng = np.random.default_rng(0)
    tied[:] = True
    for _ in range(3):
        c = rng.dirichlet(np.ones(m), size=k)
        s = rng.dirichlet(np.ones(k))
        _, q = _q_values(game, s, c, t)
        tied &= (q.max(axis=1) - q.min(axis=1)) < 1e-13
    best = (np.inf, chi, sigma)
    for delta in (3e-2, 1e-2, 3e-3, 1e-3, 1e-4):
        support = [[x for x in range(m) if gaps[s, x] <= delta] or [int(Q[s].argmax())] for s in range(k)]
        for _ in range(6):
            cells = [(s, sup) for s, sup in enumerate(support) if len(sup) >= 2 and not tied[s]]
            base = chi.copy()
            for s, sup in enumerate(support):
                if not tied[s] and len(sup) == 1:
                    base[s] = 0.0
                    base[s, sup[0]] = 1.0

            def unpack(z):
                c = base.copy()
                j = k - 1
                for s, sup in cells:
                    c[s] = 0.0
                    free = z[j:j + len(sup) - 1]
                    c[s, sup[:-1]] = free
                    c[s, sup[-1]] = 1 - free.sum()
                    j += len(sup) - 1
                sg = np.append(z[:k - 1], 1 - z[:k - 1].sum())
                return c, sg

            def eqs(z):
                c, sg = unpack(z)
                out = [(apply_T(game, c, sg) - sg)[:-1]]
                _, q = _q_values(game, sg, c, t)
                out += [q[s, sup[:-1]] - q[s, sup[-1]] for s, sup in cells]
                return np.concatenate(out)

            z0 = np.concatenate([sigma[:-1]] + [chi[s, sup[:-1]] for s, sup in cells])
            sol = optimize.least_squares(eqs, np.clip(z0, 0, 1), bounds=(0.0, 1.0),
                                         xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=500)
            c, sg = unpack(sol.x)
            c = np.clip(c, 0, 1)
            c = c / c.sum(axis=1, keepdims=True)
            if np.any(sg < -1e-12):
                break
            sg = np.clip(sg, 0, None)
            sg = sg / sg.sum()
            score = _score(game, c, sg, t)[0]
            if score < best[0]:
                best = (score, c, sg)
            _, q = _q_values(game, sg, c, t)
            new = []
            for s in range(k):
                keep = [x for x in support[s] if c[s, x] > 1e-9]
                add = [x for x in range(m) if q[s, x] >= q[s].max() - 1e-12 and x not in keep]
                new.append(sorted(keep + add) or [int(q[s].argmax())])
            if new == support:
                break
            support = new
        if best[0] <= tol * 1e-3:
            break
    return best


def solve_stationary_equilibrium(game: GameSpec, options: StationaryOptions | None = None) -> StationaryEquilibrium:
    """Damped smoothed best response on (sigma, chi) with an invariance-plus-indifference polish.

    The returned pair is the best found by max(residual, invariance gap); the
    reported gap is the Prohorov distance between sigma and T(chi) sigma.
    """
    _require_stationary(game)
    opts = options or StationaryOptions()
    k, m = game.S.size, game.X.size
    t = truncation_horizon(opts.epsilon, game.discount, game.fbar)
    chi = np.full((k, m), 1.0 / m)
    sigma = np.asarray(game.initial_sigma.weights, dtype=float).copy()
    lam = opts.damping
    best = (np.inf, chi, sigma)
    it = 0
    for it in range(1, opts.max_iters + 1):
        _, Q = _q_values(game, sigma, chi, t)
        br = softmax(Q / opts.temperature(it), axis=1)
        new_sigma = apply_T(game, chi, sigma)
        chi = (1 - lam) * chi + lam * br
        sigma = (1 - lam) * sigma + lam * new_sigma
        pure = np.zeros_like(chi)
        pure[np.arange(k), Q.argmax(axis=1)] = 1.0
        for cand in (chi, pure):
            inv = invariant_distribution(game, cand, sigma, max_iters=200, tol=1e-12, restarts=False).sigma.weights \
                if cand is pure else sigma
            score = _score(game, cand, np.asarray(inv), t)[0]
            if score < best[0]:
                best = (score, cand.copy(), np.asarray(inv).copy())
        if best[0] <= opts.tol * 1e-3:
            break
        if opts.polish and it >= opts.anneal_iters and (it - opts.anneal_iters) % 200 == 0:
            pol = _polish_stationary(game, best[1], best[2], t, opts.tol)
            if pol[0] < best[0]:
                best = pol
            if best[0] <= opts.tol * 1e-3:
                break
    if best[0] > opts.tol * 1e-3 and opts.polish:
        pol = _polish_stationary(game, best[1], best[2], t, opts.tol)
        if pol[0] < best[0]:
            best = pol
    _, chi, sigma = best
    kernel = PolicyKernel(game.S, game.X, chi)
    table = stationary_residual(game, chi, sigma, opts.epsilon)
    gap = invariance_gap(game, chi, sigma)
    res = float(table.max())
    status = "converged" if max(res, gap) <= opts.tol else "residual_above_tol"
    return StationaryEquilibrium(kernel, Dist(game.S, sigma), res, gap, table, it, status)


def finite_invariant(game: GameSpec, n: int, chi, max_iters: int = 100000, tol: float = 1e-13) -> MultiDist:
    """Invariant multi-state law of the n-player chain when all follow chi (dense, n <= 4)."""
    _require_stationary(game)
    if n > 4:
        raise CapacityError("the finite-n invariant equation is only solved densely for n <= 4", n)
    c = _chi(game, chi)
    d = dense(game, n)
    w = d.policy_weights(c, range(n))
    M = np.einsum("ij,ijk->ik", w, d.tables(1).kernel)
    pi = MultiDist.power(game.initial_sigma, n).weights.ravel()
    for _ in range(max_iters):
        nxt = 0.5 * pi + 0.5 * (pi @ M)
        if np.abs(nxt - pi).max() <= tol:
            pi = nxt
            break
        pi = nxt
    return MultiDist(game.S, n, pi / pi.sum())
