"""Finite metric spaces, distributions over them, kernels and the measure algebra.

Everything here is immutable: arrays are copied on construction and flagged
read-only, so objects can be shared freely between workers.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Hashable, Sequence

import numpy as np

from .errors import CapacityError, DegenerateConditionError, InputError

PROB_TOL = 1e-12
EMPIRICAL_TOL = 1e-9
ENUMERATION_CAP = 10**7


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class FiniteMetricSpace:
    """A labelled finite point set with a symmetric distance matrix.

    When ``dist`` is omitted the discrete metric (all off-diagonal distances 1)
    is used.
    """

    labels: tuple
    dist: np.ndarray = None
    _index: dict = field(default=None, repr=False)

    def __post_init__(self):
        labels = tuple(self.labels)
        if not labels:
            raise InputError("a space needs at least one point")
        if len(set(labels)) != len(labels):
            raise InputError("duplicate point labels")
        k = len(labels)
        if self.dist is None:
            d = np.ones((k, k)) - np.eye(k)
        else:
            d = np.array(self.dist, dtype=float)
        if d.shape != (k, k):
            raise InputError(f"distance matrix must be {k}x{k}, got {d.shape}")
        if not np.all(np.isfinite(d)):
            raise InputError("distances must be finite")
        if np.any(np.diag(d) != 0.0):
            raise InputError("distance matrix must be zero on the diagonal")
        if not np.array_equal(d, d.T):
            raise InputError("distance matrix must be symmetric")
        off = d[~np.eye(k, dtype=bool)]
        if off.size and off.min() <= 0.0:
            raise InputError("off-diagonal distances must be strictly positive")
        # triangle inequality, d[i,j] <= d[i,m] + d[m,j]
        if k > 2 and np.any(d[:, None, :] > d[:, :, None] + d[None, :, :] + 1e-12):
            raise InputError("distance matrix violates the triangle inequality")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "dist", _frozen(d))
        object.__setattr__(self, "_index", {lab: i for i, lab in enumerate(labels)})

    @classmethod
    def discrete(cls, labels: Sequence[Hashable]) -> "FiniteMetricSpace":
        return cls(tuple(labels))

    @property
    def size(self) -> int:
        return len(self.labels)

    def __len__(self):
        return len(self.labels)

    @property
    def d_min(self) -> float:
        if self.size == 1:
            return float("inf")
        return float(self.dist[~np.eye(self.size, dtype=bool)].min())

    def index(self, label) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise InputError(f"unknown point {label!r}") from None

    def indices(self, labels) -> np.ndarray:
        return np.array([self.index(lab) for lab in labels], dtype=np.int64)

    def product(self, other: "FiniteMetricSpace") -> "FiniteMetricSpace":
        """Product space in row-major order with the max-coordinate metric."""
        labels = tuple(itertools.product(self.labels, other.labels))
        d = np.maximum(self.dist[:, None, :, None], other.dist[None, :, None, :])
        k = self.size * other.size
        return FiniteMetricSpace(labels, d.reshape(k, k))

    def _key(self):
        return (self.labels, self.dist.tobytes())

    def __eq__(self, other):
        if self is other:
            return True
        if not isinstance(other, FiniteMetricSpace):
            return NotImplemented
        return self._key() == other._key()

    def __hash__(self):
        return hash(self._key())


def _check_prob_vector(w, what="weights"):
    if not np.all(np.isfinite(w)):
        raise InputError(f"{what} must be finite")
    if np.any(w < -PROB_TOL) or np.any(w > 1 + PROB_TOL):
        raise InputError(f"{what} must lie in [0, 1]")
    total = float(w.sum())
    if abs(total - 1.0) > PROB_TOL * max(1, w.size) ** 0.5 + PROB_TOL:
        raise InputError(f"{what} must sum to 1 (got {total!r})")


@dataclass(frozen=True, eq=False)
class Dist:
    """Probability vector over a finite space."""

    space: FiniteMetricSpace
    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.shape != (self.space.size,):
            raise InputError(
                f"distribution has {w.shape} weights for a space of {self.space.size} points"
            )
        _check_prob_vector(w)
        object.__setattr__(self, "weights", _frozen(np.clip(w, 0.0, None)))

    @classmethod
    def dirac(cls, space, label) -> "Dist":
        w = np.zeros(space.size)
        w[space.index(label)] = 1.0
        return cls(space, w)

    @classmethod
    def uniform(cls, space) -> "Dist":
        return cls(space, np.full(space.size, 1.0 / space.size))

    def __getitem__(self, label) -> float:
        return float(self.weights[self.space.index(label)])

    def __eq__(self, other):
        if not isinstance(other, Dist):
            return NotImplemented
        return self.space == other.space and np.array_equal(self.weights, other.weights)

    __hash__ = None

    def allclose(self, other: "Dist", atol=1e-12) -> bool:
        return self.space == other.space and np.allclose(self.weights, other.weights, atol=atol, rtol=0)


@dataclass(frozen=True, eq=False)
class JointDist:
    """Probability matrix over ``row_space x col_space``."""

    row_space: FiniteMetricSpace
    col_space: FiniteMetricSpace
    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.shape != (self.row_space.size, self.col_space.size):
            raise InputError(f"joint weights have shape {w.shape}")
        _check_prob_vector(w.ravel())
        object.__setattr__(self, "weights", _frozen(np.clip(w, 0.0, None)))

    def flat(self) -> Dist:
        """The same measure viewed as a Dist on the product space."""
        return Dist(self.row_space.product(self.col_space), self.weights.ravel())


@dataclass(frozen=True, eq=False)
class PolicyKernel:
    """One distribution over actions per state; ``rows[s, x]`` is the chance of x at s."""

    state_space: FiniteMetricSpace
    action_space: FiniteMetricSpace
    rows: np.ndarray

    def __post_init__(self):
        r = np.array(self.rows, dtype=float)
        if r.shape != (self.state_space.size, self.action_space.size):
            raise InputError(f"kernel rows have shape {r.shape}")
        for i in range(r.shape[0]):
            _check_prob_vector(r[i], what=f"kernel row {self.state_space.labels[i]!r}")
        object.__setattr__(self, "rows", _frozen(np.clip(r, 0.0, None)))

    def row(self, label) -> Dist:
        return Dist(self.action_space, self.rows[self.state_space.index(label)])

    @classmethod
    def uniform(cls, state_space, action_space) -> "PolicyKernel":
        k = action_space.size
        return cls(state_space, action_space, np.full((state_space.size, k), 1.0 / k))

    @classmethod
    def deterministic(cls, state_space, action_space, choice) -> "PolicyKernel":
        """``choice`` maps each state index to an action index."""
        r = np.zeros((state_space.size, action_space.size))
        r[np.arange(state_space.size), np.asarray(choice)] = 1.0
        return cls(state_space, action_space, r)


@dataclass(frozen=True, eq=False)
class MultiDist:
    """Dense law of an n-tuple of points, stored as an n-dimensional array."""

    base_space: FiniteMetricSpace
    n: int
    weights: np.ndarray
    cap: int = ENUMERATION_CAP

    def __post_init__(self):
        k = self.base_space.size
        count = self.n * k**self.n
        if count > self.cap:
            raise CapacityError(f"{self.n}-tuples over {k} points need {count} entries", count)
        w = np.array(self.weights, dtype=float)
        if w.size != k**self.n:
            raise InputError(f"expected {k ** self.n} weights, got {w.size}")
        w = w.reshape((k,) * self.n)
        _check_prob_vector(w.ravel())
        object.__setattr__(self, "weights", _frozen(w))

    @classmethod
    def power(cls, p: Dist, n: int, cap: int = ENUMERATION_CAP) -> "MultiDist":
        """The product law p x ... x p."""
        k = p.space.size
        if n * k**n > cap:
            raise CapacityError(f"{n}-fold product over {k} points exceeds cap", n * k**n)
        w = np.ones(())
        for _ in range(n):
            w = np.multiply.outer(w, p.weights)
        return cls(p.space, n, w, cap)

    @classmethod
    def dirac(cls, space, labels) -> "MultiDist":
        n = len(labels)
        w = np.zeros((space.size,) * n)
        w[tuple(space.indices(labels))] = 1.0
        return cls(space, n, w)

    def first_marginal(self) -> Dist:
        return Dist(self.base_space, self.weights.reshape(self.base_space.size, -1).sum(axis=1))

    def rest_marginal(self) -> "MultiDist":
        """Law of coordinates 2..n."""
        return MultiDist(self.base_space, self.n - 1, self.weights.sum(axis=0), self.cap)

    def coordinate_marginal(self, m: int) -> Dist:
        axes = tuple(i for i in range(self.n) if i != m)
        return Dist(self.base_space, self.weights.sum(axis=axes))


# --- operations -----------------------------------------------------------


def empirical(points, space: FiniteMetricSpace) -> Dist:
    """Empirical distribution of a tuple of point labels."""
    points = list(points)
    if not points:
        raise InputError("empirical distribution of an empty tuple")
    idx = space.indices(points)
    return empirical_from_indices(idx, space)


def empirical_from_indices(idx, space: FiniteMetricSpace) -> Dist:
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size == 0:
        raise InputError("empirical distribution of an empty tuple")
    if idx.min() < 0 or idx.max() >= space.size:
        raise InputError("point index out of range")
    counts = np.bincount(idx, minlength=space.size)
    return Dist(space, counts / idx.size)


def _require_kernel_on(p: Dist, kappa: PolicyKernel):
    if p.space != kappa.state_space:
        raise InputError("distribution and kernel live on different spaces")


def product(p: Dist, kappa: PolicyKernel) -> JointDist:
    """Joint law of (a, b) when a ~ p and b ~ kappa(a)."""
    _require_kernel_on(p, kappa)
    return JointDist(p.space, kappa.action_space, p.weights[:, None] * kappa.rows)


def push(p: Dist, kappa: PolicyKernel) -> Dist:
    """Law of b when a ~ p and b ~ kappa(a)."""
    _require_kernel_on(p, kappa)
    return Dist(kappa.action_space, (p.weights[:, None] * kappa.rows).sum(axis=0))


def marginal(j: JointDist, axis: str) -> Dist:
    if axis == "row":
        return Dist(j.row_space, j.weights.sum(axis=1))
    if axis == "col":
        return Dist(j.col_space, j.weights.sum(axis=0))
    raise InputError(f"axis must be 'row' or 'col', not {axis!r}")


def contaminate(a, p: Dist, n: int) -> Dist:
    """Add a 1/n atom at ``a`` to an (n-1)-point empirical law, scaling the rest by (n-1)/n."""
    if n < 2:
        raise InputError("contamination needs n >= 2")
    scaled = p.weights * (n - 1)
    if np.any(np.abs(scaled - np.round(scaled)) > EMPIRICAL_TOL):
        raise InputError(f"weights are not multiples of 1/{n - 1}")
    counts = np.round(scaled)
    counts[p.space.index(a)] += 1
    return Dist(p.space, counts / n)


def condition_first(pi: MultiDist, a) -> MultiDist:
    """Law of coordinates 2..n given that coordinate 1 equals ``a``."""
    if pi.n < 2:
        raise InputError("conditioning needs at least two coordinates")
    slab = pi.weights[pi.base_space.index(a)]
    mass = float(slab.sum())
    if mass <= 0.0:
        raise DegenerateConditionError(f"first coordinate has zero mass at {a!r}")
    return MultiDist(pi.base_space, pi.n - 1, slab / mass, pi.cap)


def is_symmetric(pi: MultiDist, tol: float = 1e-12) -> bool:
    """True iff the law is invariant under every permutation of coordinates."""
    w = pi.weights
    if pi.n <= 6:
        perms = itertools.permutations(range(pi.n))
    else:
        # adjacent transpositions generate the symmetric group
        perms = []
        for i in range(pi.n - 1):
            perm = list(range(pi.n))
            perm[i], perm[i + 1] = perm[i + 1], perm[i]
            perms.append(perm)
    return all(np.allclose(w, np.transpose(w, perm), atol=tol, rtol=0) for perm in perms)

