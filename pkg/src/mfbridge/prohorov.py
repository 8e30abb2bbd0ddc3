"""Prohorov distance on finite metric spaces and executable lemma checks.

The distance is ``inf{e > 0 : mu(A) <= nu(A^e) + e for every subset A}`` with the
open enlargement ``A^e = {x : d(x, A) < e}``.  On a finite space ``A^e`` only
changes when ``e`` crosses one of the pairwise distances ``0 = d_0 < d_1 < ...``,
so for ``e`` in ``(d_r, d_{r+1}]`` the condition reads ``G_r <= e`` with

    G_r = max_A  mu(A) - nu({x : d(x, A) <= d_r}),

and the distance is ``min(1, min_r max(d_r, G_r))``.  Each ``G_r`` is found by
enumerating all ``2^|A|`` subsets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import CapacityError, InputError
from .spaces import (
    Dist,
    FiniteMetricSpace,
    JointDist,
    contaminate,
    empirical,
    empirical_from_indices,
    marginal,
)

EXACT_CAP = 20
BISECTION_CAP = 64
CHECK_SLACK = 1e-9
_CACHE_POINTS = 12

EXACT = "exact-enumeration"
BISECTION = "bisection-feasibility"
TV = "tv-shortcut"


@dataclass(frozen=True)
class ProhorovResult:
    value: float
    method: str
    certificate: tuple | None = None

    def __float__(self):
        return self.value


def _subset_sums(weights: np.ndarray) -> np.ndarray:
    """Mass of every subset mask; ``weights`` is (k,) or (k, B)."""
    k = weights.shape[0]
    out = np.zeros((1 << k,) + weights.shape[1:])
    for i in range(k):
        lo = 1 << i
        out[lo : 2 * lo] = out[:lo] + weights[i]
    return out


def _subset_or(ball_masks: np.ndarray) -> np.ndarray:
    """Union of ball masks for every subset mask."""
    k = ball_masks.shape[0]
    out = np.zeros(1 << k, dtype=np.int64)
    for i in range(k):
        lo = 1 << i
        out[lo : 2 * lo] = out[:lo] | ball_masks[i]
    return out


def _radii(space: FiniteMetricSpace) -> np.ndarray:
    return np.unique(np.concatenate([[0.0], space.dist.ravel()]))


def _ball_masks(space: FiniteMetricSpace, radius: float) -> np.ndarray:
    inside = space.dist <= radius
    bits = (1 << np.arange(space.size, dtype=np.int64))
    return (inside * bits[None, :]).sum(axis=1)


@lru_cache(maxsize=256)
def _enlargements(space: FiniteMetricSpace):
    radii = _radii(space)
    return radii, [_subset_or(_ball_masks(space, r)) for r in radii]


def _enlargement_iter(space):
    if space.size <= _CACHE_POINTS:
        radii, enl = _enlargements(space)
        yield from zip(radii, enl)
    else:
        for r in _radii(space):
            yield r, _subset_or(_ball_masks(space, r))


def _exact_batch(space, mu: np.ndarray, nu: np.ndarray):
    """Exact distances for a batch; ``mu`` and ``nu`` are (B, k) arrays."""
    mass_mu = _subset_sums(mu.T)
    mass_nu = _subset_sums(nu.T)
    best = np.ones(mu.shape[0])
    best_mask = np.zeros(mu.shape[0], dtype=np.int64)
    prev_arg = best_mask
    for radius, enl in _enlargement_iter(space):
        gaps = mass_mu - mass_nu[enl]
        arg = gaps.argmax(axis=0)
        g = gaps[arg, np.arange(mu.shape[0])]
        cand = np.maximum(radius, g)
        better = cand < best
        best = np.where(better, cand, best)
        # when the radius binds, the witness is the subset violating just below it
        witness = np.where(radius > g, prev_arg, arg)
        best_mask = np.where(better, witness, best_mask)
        prev_arg = arg
    return np.clip(best, 0.0, 1.0), best_mask


def _mask_labels(space, mask):
    return tuple(lab for i, lab in enumerate(space.labels) if (int(mask) >> i) & 1)


def one_sided_gap(mu: np.ndarray, nu: np.ndarray) -> np.ndarray:
    """``max_A mu(A) - nu(A)``, i.e. the total-variation distance."""
    return np.clip(mu - nu, 0.0, None).sum(axis=-1)


def _feasible(space, mu, nu, eps, masks):
    members = ((masks[:, None] >> np.arange(space.size)) & 1).astype(bool)
    near = space.dist < eps
    enl = (members[:, :, None] & near[None, :, :]).any(axis=1)
    gaps = members @ mu - enl @ nu
    return gaps.max() <= eps


def _bisection(space, mu, nu, samples=4096, seed=0):
    k = space.size
    rng = np.random.default_rng(seed)
    eye = np.eye(k, dtype=bool)
    family = [eye, ~eye] + [space.dist <= r for r in _radii(space)]
    family.append(rng.integers(0, 2, size=(samples, k)).astype(bool))
    members = np.unique(np.concatenate(family), axis=0)

    def feasible(eps):
        near = space.dist < eps
        enl = (members[:, :, None] & near[None, :, :]).any(axis=1)
        return (members @ mu - enl @ nu).max() <= eps

    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            hi = mid
        else:
            lo = mid
    return hi


def prohorov(mu: Dist, nu: Dist, mode: str = "auto") -> ProhorovResult:
    """Prohorov distance between two distributions on the same finite space.

    ``mode`` is ``"exact"``, ``"tv"`` or ``"auto"``.  Auto returns the total-variation
    gap when it is below the minimum distance (where the two coincide), enumerates
    subsets up to 20 points, and falls back to a bisection over a sampled subset
    family (a lower bound, flagged in ``method``) up to 64 points.
    """
    if mu.space != nu.space:
        raise InputError("distributions live on different spaces")
    space = mu.space
    if mode not in ("auto", "exact", "tv"):
        raise InputError(f"unknown mode {mode!r}")
    if mode in ("auto", "tv"):
        tv = float(one_sided_gap(mu.weights, nu.weights))
        if mode == "tv" or tv < space.d_min:
            return ProhorovResult(tv, TV)
    if space.size <= EXACT_CAP:
        vals, masks = _exact_batch(space, mu.weights[None, :], nu.weights[None, :])
        return ProhorovResult(float(vals[0]), EXACT, _mask_labels(space, masks[0]))
    if mode == "auto" and space.size <= BISECTION_CAP:
        return ProhorovResult(_bisection(space, mu.weights, nu.weights), BISECTION)
    raise CapacityError(f"exact Prohorov distance over {space.size} points", space.size)


def prohorov_batch(space: FiniteMetricSpace, mus: np.ndarray, nu: np.ndarray) -> np.ndarray:
    """Distances from each row of ``mus`` to ``nu`` (auto mode, exact paths only)."""
    mus = np.atleast_2d(np.asarray(mus, dtype=float))
    nus = np.broadcast_to(np.asarray(nu, dtype=float), mus.shape)
    out = one_sided_gap(mus, nus)
    todo = out >= space.d_min
    if todo.any():
        if space.size > EXACT_CAP:
            raise CapacityError(f"exact Prohorov distance over {space.size} points", space.size)
        out = out.copy()
        out[todo] = _exact_batch(space, mus[todo], np.ascontiguousarray(nus[todo]))[0]
    return out


def is_feasible(mu: Dist, nu: Dist, eps: float) -> bool:
    """Does ``mu(A) <= nu(A^eps) + eps`` hold for every subset ``A``?"""
    k = mu.space.size
    if k > EXACT_CAP:
        raise CapacityError(f"subset enumeration over {k} points", k)
    masks = np.arange(1 << k, dtype=np.int64)
    return bool(_feasible(mu.space, mu.weights, nu.weights, eps, masks))


# --- lemma checks ----------------------------------------------------------


def dkw_threshold(epsilon: float) -> int:
    """Smallest sample size strictly above ln(3/e) / (2 e^2)."""
    if not 0.0 < epsilon < 1.0:
        raise InputError("epsilon must lie in (0, 1)")
    bound = math.log(3.0 / epsilon) / (2.0 * epsilon**2)
    return math.floor(bound) + 1


def check_lemma_newlemma(a, a_prime, space: FiniteMetricSpace) -> bool:
    """rho(emp(a), emp(a')) <= max_m d(a_m, a'_m)."""
    if len(a) != len(a_prime):
        raise InputError("tuples must have equal length")
    ia, ib = space.indices(a), space.indices(a_prime)
    lhs = prohorov(empirical_from_indices(ia, space), empirical_from_indices(ib, space), "exact").value
    rhs = float(space.dist[ia, ib].max())
    return lhs <= rhs + CHECK_SLACK


def check_lemma_pmc8(a, p: Dist, n: int) -> bool:
    """Moving 1/n of the mass onto one point moves the law by at most 1/n."""
    q = contaminate(a, p, n)
    return prohorov(q, p, "exact").value <= 1.0 / n + CHECK_SLACK


def marginal_contraction(mu: JointDist, nu: JointDist) -> bool:
    """The row marginal is no farther apart than the joint laws."""
    if mu.row_space != nu.row_space or mu.col_space != nu.col_space:
        raise InputError("joint laws live on different spaces")
    joint = prohorov(mu.flat(), nu.flat(), "exact").value
    rows = prohorov(marginal(mu, "row"), marginal(nu, "row"), "exact").value
    return rows <= joint + CHECK_SLACK


def resemblance_indicator(sample, p: Dist, epsilon: float) -> bool:
    return prohorov(empirical(sample, p.space), p).value < epsilon


def check_lemma_dprob(sample, p: Dist, epsilon: float) -> bool:
    """If the full tuple resembles p at e, the tuple minus its first entry does at 2e + 1/n."""
    n = len(sample)
    if n < 2:
        raise InputError("need at least two sample points")
    if not resemblance_indicator(sample, p, epsilon):
        return True
    return resemblance_indicator(list(sample)[1:], p, 2 * epsilon + 1.0 / n)


# --- randomised sweeps -------------------------------------------------------


def random_space(rng, k, prefix="a") -> FiniteMetricSpace:
    """Points in the unit square with Euclidean distances (a genuine metric)."""
    pts = rng.random((k, 2))
    d = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1))
    return FiniteMetricSpace(tuple(f"{prefix}{i}" for i in range(k)), d)


def random_dist(rng, space, granularity=None) -> Dist:
    if granularity:
        counts = rng.multinomial(granularity, np.full(space.size, 1.0 / space.size))
        return Dist(space, counts / granularity)
    w = rng.dirichlet(np.ones(space.size))
    return Dist(space, w / w.sum())


def random_joint(rng, rows, cols) -> JointDist:
    w = rng.dirichlet(np.ones(rows.size * cols.size)).reshape(rows.size, cols.size)
    return JointDist(rows, cols, w / w.sum())


def run_lemma_suite(seed: int = 0, cases: int = 1000, checks=None) -> dict:
    """Run each proven property on ``cases`` random instances.

    Returns ``{name: (passed, failed)}``.  ``checks`` lets a harness swap in
    alternative implementations (used for the negative-control test).
    """
    if cases < 1:
        raise InputError("cases must be positive")
    checks = {
        "newlemma": check_lemma_newlemma,
        "pmc8": check_lemma_pmc8,
        "marginal_contraction": marginal_contraction,
        "dprob": check_lemma_dprob,
        **(checks or {}),
    }
    rng = np.random.default_rng(seed)
    results = {}

    ok = 0
    for _ in range(cases):
        space = random_space(rng, 4)
        a = rng.choice(space.labels, size=6).tolist()
        b = rng.choice(space.labels, size=6).tolist()
        ok += bool(checks["newlemma"](a, b, space))
    results["newlemma"] = (ok, cases - ok)

    ok = 0
    tight = FiniteMetricSpace(("a", "b"))
    ok += bool(checks["pmc8"]("a", Dist.dirac(tight, "b"), 2))
    for _ in range(cases - 1):
        space = random_space(rng, int(rng.integers(2, 6)))
        n = int(rng.integers(2, 9))
        p = random_dist(rng, space, granularity=n - 1)
        ok += bool(checks["pmc8"](rng.choice(space.labels), p, n))
    results["pmc8"] = (ok, cases - ok)

    ok = 0
    for i in range(cases):
        rows = random_space(rng, 2 if i % 2 == 0 else 3, "s")
        cols = random_space(rng, 2, "x")
        ok += bool(checks["marginal_contraction"](random_joint(rng, rows, cols), random_joint(rng, rows, cols)))
    results["marginal_contraction"] = (ok, cases - ok)

    ok = 0
    for _ in range(cases):
        space = random_space(rng, 4)
        p = random_dist(rng, space)
        n = int(rng.integers(2, 40))
        sample = rng.choice(space.labels, size=n, p=p.weights).tolist()
        eps = float(rng.uniform(0.05, 0.6))
        ok += bool(checks["dprob"](sample, p, eps))
    results["dprob"] = (ok, cases - ok)
    return results
