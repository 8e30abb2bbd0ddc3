"""Declarative game specifications.

Payoffs are linear in the in-action environment tau and transitions are a
softmax of logits linear in tau, so both are uniformly Lipschitz in tau by
construction.  Every tau-dependence is a ``TauTerm``: a feature array paired
with a coefficient that may vary with the player's own (state, action).

Periods are numbered from 1, as are the public period arguments everywhere in
the package.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import jsonschema
import numpy as np

from .errors import BoundViolation, InputError, ScenarioParseError, SchemaViolation
from .spaces import Dist, FiniteMetricSpace, JointDist, _frozen

BOUND_SLACK = 1e-12


def softmax(z: np.ndarray, axis=-1) -> np.ndarray:
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


@dataclass(frozen=True, eq=False)
class TauTerm:
    """``coef[s, x] * <weights, tau>``; for transitions ``weights`` has a leading destination axis."""

    weights: np.ndarray
    coef: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "weights", _frozen(self.weights))
        object.__setattr__(self, "coef", _frozen(self.coef))


def _coef_array(coef, shape, path):
    c = np.array(coef, dtype=float)
    if c.ndim == 0:
        c = np.full(shape, float(c))
    if c.shape != shape:
        raise SchemaViolation(f"coefficient must be a number or a {shape} matrix", path)
    return c


@dataclass(frozen=True, eq=False)
class PayoffSpec:
    """``f(s, x, tau) = base[s, x] + sum_j coef_j[s, x] * <W_j, tau>`` with ``|f| <= bound``."""

    base: np.ndarray
    tau_terms: tuple = ()
    bound: float = None

    def __post_init__(self):
        base = np.array(self.base, dtype=float)
        terms = tuple(self.tau_terms)
        for j, term in enumerate(terms):
            if term.weights.shape != base.shape or term.coef.shape != base.shape:
                raise InputError(f"payoff tau term {j} has the wrong shape")
        object.__setattr__(self, "base", _frozen(base))
        object.__setattr__(self, "tau_terms", terms)
        certified = self.certified_bound()
        bound = certified if self.bound is None else float(self.bound)
        if not bound > 0:
            raise BoundViolation("payoff bound must be positive", "bound")
        if certified > bound + BOUND_SLACK:
            raise BoundViolation(f"payoff can reach {certified!r}, above the declared bound {bound!r}", "bound")
        object.__setattr__(self, "bound", bound)

    def certified_bound(self) -> float:
        """``max_{s,x} |base| + sum_j |coef_j| * max|W_j|``, a bound valid for every tau."""
        total = np.abs(self.base).copy()
        for term in self.tau_terms:
            total += np.abs(term.coef) * np.abs(term.weights).max()
        return max(float(total.max()), 0.0)

    def table(self, tau: np.ndarray) -> np.ndarray:
        """Payoff for every (s, x) against the environment ``tau`` (an |S| x |X| array)."""
        out = self.base.copy()
        for term in self.tau_terms:
            out += term.coef * float((term.weights * tau).sum())
        return out

    def values(self, s, x, taus: np.ndarray) -> np.ndarray:
        """Batched payoffs; ``taus`` has shape (B, |S|, |X|).

        Row-wise reductions (no BLAS) keep each row's rounding independent of the batch size.
        """
        out = self.base[s, x].astype(float)
        flat = taus.reshape(taus.shape[0], -1)
        for term in self.tau_terms:
            out = out + term.coef[s, x] * (flat * term.weights.ravel()).sum(axis=1)
        return out

    def loo_table(self, counts, n) -> np.ndarray:
        """Payoff of a player in each cell against the other n-1 players, per replication.

        ``counts`` (R, |S||X|) holds each replication's cell counts over all n players;
        the result (R, |S||X|) is indexed by the player's own cell.
        """
        out = np.broadcast_to(self.base.ravel(), counts.shape).astype(float)
        for term in self.tau_terms:
            w = term.weights.ravel()
            full = (counts * w).sum(axis=1)
            out = out + term.coef.ravel() * ((full[:, None] - w[None, :]) / (n - 1))
        return out

    def lipschitz(self) -> float:
        """Sup of |f(tau) - f(tau')| / TV(tau, tau') over (s, x)."""
        if not self.tau_terms:
            return 0.0
        k = self.base.size
        best = 0.0
        for idx in np.ndindex(self.base.shape):
            m = sum(t.coef[idx] * t.weights.ravel() for t in self.tau_terms)
            best = max(best, float(np.abs(m[:, None] - m[None, :]).max()) if k > 1 else 0.0)
        return best


@dataclass(frozen=True, eq=False)
class TransitionSpec:
    """``g(s, x, tau) = softmax_{s'}(base_logits[s, x, s'] + sum_k coef_k[s, x] * <W_k[s'], tau>)``."""

    base_logits: np.ndarray
    tau_terms: tuple = ()

    def __post_init__(self):
        base = np.array(self.base_logits, dtype=float)
        if base.ndim != 3:
            raise InputError("base_logits must be an |S| x |X| x |S| array")
        terms = tuple(self.tau_terms)
        for j, term in enumerate(terms):
            if term.weights.shape != (base.shape[2],) + base.shape[:2]:
                raise InputError(f"transition tau term {j} weights have the wrong shape")
            if term.coef.shape != base.shape[:2]:
                raise InputError(f"transition tau term {j} coefficient has the wrong shape")
        if not np.all(np.isfinite(base)):
            raise InputError("logits must be finite")
        object.__setattr__(self, "base_logits", _frozen(base))
        object.__setattr__(self, "tau_terms", terms)

    def logits(self, tau: np.ndarray) -> np.ndarray:
        out = self.base_logits.copy()
        for term in self.tau_terms:
            psi = (term.weights * tau[None]).sum(axis=(1, 2))
            out += term.coef[:, :, None] * psi[None, None, :]
        return out

    def table(self, tau: np.ndarray) -> np.ndarray:
        """Next-state law for every (s, x): an |S| x |X| x |S| array."""
        return softmax(self.logits(tau))

    def probs(self, s, x, taus: np.ndarray) -> np.ndarray:
        """Batched next-state laws, shape (B, |S|)."""
        z = self.base_logits[s, x].astype(float)
        flat = taus.reshape(taus.shape[0], -1)
        for term in self.tau_terms:
            w = term.weights.reshape(term.weights.shape[0], -1)
            psi = (flat[:, None, :] * w[None]).sum(axis=2)
            z = z + term.coef[s, x][:, None] * psi
        return softmax(z)

    def loo_table(self, counts, n) -> np.ndarray:
        """Next-state laws (R, |S||X|, |S|) of a player in each cell; see ``PayoffSpec.loo_table``."""
        ns, nx, _ = self.base_logits.shape
        z = np.broadcast_to(self.base_logits.reshape(ns * nx, ns), (counts.shape[0], ns * nx, ns)).astype(float)
        for term in self.tau_terms:
            w = term.weights.reshape(term.weights.shape[0], -1)
            full = (counts[:, None, :] * w[None]).sum(axis=2)
            psi = (full[:, None, :] - w.T[None]) / (n - 1)
            z = z + term.coef.ravel()[None, :, None] * psi
        return softmax(z)

    def lipschitz(self) -> float:
        """Bound on TV(g(tau), g(tau')) / TV(tau, tau') uniform in (s, x).

        The softmax Jacobian maps a logit shift v to a change of total variation at
        most osc(v)/4, and tau -> logits is linear, so the worst case is a shift of
        mass between two environment cells.
        """
        if not self.tau_terms:
            return 0.0
        n_s, n_x, _ = self.base_logits.shape
        best = 0.0
        for s in range(n_s):
            for x in range(n_x):
                m = sum(t.coef[s, x] * t.weights.reshape(t.weights.shape[0], -1) for t in self.tau_terms)
                diff = m[:, :, None] - m[:, None, :]
                osc = diff.max(axis=0) - diff.min(axis=0)
                best = max(best, 0.25 * float(osc.max()))
        return best


class CallbackPayoff:
    """Extension point for payoffs outside the linear class.

    ``fn(s, x, tau)`` takes state and action indices and an |S| x |X| array.  The
    caller certifies ``bound`` and ``lipschitz``; nothing here can verify them.
    """

    def __init__(self, fn: Callable, bound: float, lipschitz: float, shape):
        self.fn = fn
        self.bound = float(bound)
        self._lipschitz = float(lipschitz)
        self.shape = tuple(shape)

    def certified_bound(self):
        return self.bound

    def lipschitz(self):
        return self._lipschitz

    def table(self, tau):
        return np.array([[self.fn(s, x, tau) for x in range(self.shape[1])] for s in range(self.shape[0])])

    def values(self, s, x, taus):
        s, x = np.broadcast_arrays(np.asarray(s), np.asarray(x))
        return np.array([self.fn(int(a), int(b), t) for a, b, t in zip(s, x, taus)])


class CallbackTransition:
    """Extension point for transitions; ``fn(s, x, tau)`` returns a probability vector over S."""

    def __init__(self, fn: Callable, lipschitz: float, shape):
        self.fn = fn
        self._lipschitz = float(lipschitz)
        self.shape = tuple(shape)

    def lipschitz(self):
        return self._lipschitz

    def table(self, tau):
        n_s, n_x = self.shape
        return np.array([[self.fn(s, x, tau) for x in range(n_x)] for s in range(n_s)], dtype=float)

    def probs(self, s, x, taus):
        s, x = np.broadcast_arrays(np.asarray(s), np.asarray(x))
        return np.array([self.fn(int(a), int(b), t) for a, b, t in zip(s, x, taus)], dtype=float)


@dataclass(frozen=True, eq=False)
class GameSpec:
    """A transient (finite horizon) or stationary (discounted, infinite horizon) game."""

    S: FiniteMetricSpace
    X: FiniteMetricSpace
    horizon: int | None
    payoffs: tuple
    transitions: tuple
    initial_sigma: Dist = None
    discount: float | None = None
    name: str = "game"
    SX: FiniteMetricSpace = field(default=None, repr=False)

    def __post_init__(self):
        payoffs, transitions = tuple(self.payoffs), tuple(self.transitions)
        if self.horizon is None:
            if self.discount is None or not 0.0 <= self.discount < 1.0:
                raise InputError("a stationary game needs a discount in [0, 1)")
            if len(payoffs) != 1 or len(transitions) != 1:
                raise InputError("a stationary game has exactly one payoff and one transition")
        else:
            if int(self.horizon) != self.horizon or self.horizon < 1:
                raise InputError("horizon must be a positive integer")
            if len(payoffs) != self.horizon or len(transitions) != self.horizon:
                raise InputError("a transient game needs one payoff and one transition per period")
        for t, (f, g) in enumerate(zip(payoffs, transitions), start=1):
            if getattr(f, "base", None) is not None and f.base.shape != (self.S.size, self.X.size):
                raise InputError(f"period {t} payoff has shape {f.base.shape}")
            if isinstance(g, TransitionSpec) and g.base_logits.shape != (self.S.size, self.X.size, self.S.size):
                raise InputError(f"period {t} transition has shape {g.base_logits.shape}")
        sigma = self.initial_sigma
        if sigma is None:
            sigma = Dist.uniform(self.S)
        elif not isinstance(sigma, Dist):
            sigma = Dist(self.S, sigma)
        if sigma.space != self.S:
            raise InputError("initial distribution is not over S")
        object.__setattr__(self, "payoffs", payoffs)
        object.__setattr__(self, "transitions", transitions)
        object.__setattr__(self, "initial_sigma", sigma)
        object.__setattr__(self, "SX", self.S.product(self.X))

    @property
    def stationary(self) -> bool:
        return self.horizon is None

    @property
    def fbar(self) -> float:
        """Largest per-period payoff bound."""
        return max(f.certified_bound() if isinstance(f, PayoffSpec) else f.bound for f in self.payoffs)

    def check_period(self, t: int):
        if self.stationary:
            if t < 1:
                raise InputError(f"period {t} out of range")
        elif not 1 <= t <= self.horizon:
            raise InputError(f"period {t} out of range 1..{self.horizon}")

    def payoff(self, t: int):
        self.check_period(t)
        return self.payoffs[0 if self.stationary else t - 1]

    def transition(self, t: int):
        self.check_period(t)
        return self.transitions[0 if self.stationary else t - 1]

    def with_initial(self, sigma) -> "GameSpec":
        return GameSpec(self.S, self.X, self.horizon, self.payoffs, self.transitions,
                        sigma, self.discount, self.name)


def _tau_array(game, tau) -> np.ndarray:
    if isinstance(tau, JointDist):
        if tau.row_space != game.S or tau.col_space != game.X:
            raise InputError("environment is not over S x X")
        return np.asarray(tau.weights)
    return np.asarray(tau, dtype=float).reshape(game.S.size, game.X.size)


def eval_payoff(game: GameSpec, t: int, s, x, tau) -> float:
    """Period-t payoff of a player at state ``s`` playing ``x`` in environment ``tau``."""
    f = game.payoff(t)
    i, j = game.S.index(s), game.X.index(x)
    return float(f.table(_tau_array(game, tau))[i, j])


def eval_transition(game: GameSpec, t: int, s, x, tau) -> Dist:
    g = game.transition(t)
    i, j = game.S.index(s), game.X.index(x)
    return Dist(game.S, g.table(_tau_array(game, tau))[i, j])


# --- scenario files ---------------------------------------------------------------

_MATRIX = {"type": "array", "items": {"type": "array", "items": {"type": "number"}}}
_TENSOR = {"type": "array", "items": _MATRIX}
_SPACE = {
    "type": "object",
    "required": ["labels"],
    "properties": {"labels": {"type": "array", "minItems": 1}, "dist": _MATRIX},
}
_COEF = {"oneOf": [{"type": "number"}, _MATRIX]}

SCENARIO_SCHEMA = {
    "type": "object",
    "required": ["spaces", "horizon", "payoffs", "transitions"],
    "properties": {
        "name": {"type": "string"},
        "spaces": {
            "type": "object",
            "required": ["S", "X"],
            "properties": {"S": _SPACE, "X": _SPACE},
        },
        "horizon": {"oneOf": [{"type": "integer", "minimum": 1}, {"const": "infinite"}]},
        "discount": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "payoffs": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["base"],
                "properties": {
                    "base": _MATRIX,
                    "bound": {"type": "number", "exclusiveMinimum": 0},
                    "tau_terms": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "required": ["weights", "coef"],
                            "properties": {"weights": _MATRIX, "coef": _COEF},
                        },
                    },
                },
            },
        },
        "transitions": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["base_logits"],
                "properties": {
                    "base_logits": _TENSOR,
                    "tau_terms": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "required": ["weights", "coef"],
                            "properties": {"weights": _TENSOR, "coef": _COEF},
                        },
                    },
                },
            },
        },
        "initial_sigma": {"type": "array", "items": {"type": "number"}},
    },
    "if": {"properties": {"horizon": {"const": "infinite"}}},
    "then": {"required": ["discount"]},
}


def _json_path(parts) -> str:
    out = ""
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out


def _array(value, shape, path):
    try:
        a = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise SchemaViolation("ragged or non-numeric array", path) from None
    if a.shape != shape:
        raise SchemaViolation(f"expected shape {shape}, got {a.shape}", path)
    if not np.all(np.isfinite(a)):
        raise SchemaViolation("entries must be finite", path)
    return a


def _space_from(doc, path):
    labels = doc["labels"]
    if any(isinstance(lab, (list, dict)) for lab in labels):
        raise SchemaViolation("labels must be scalars", f"{path}.labels")
    dist = doc.get("dist")
    if dist is not None:
        dist = _array(dist, (len(labels), len(labels)), f"{path}.dist")
    try:
        return FiniteMetricSpace(tuple(labels), dist)
    except InputError as exc:
        raise SchemaViolation(str(exc), path) from None


def scenario_from_dict(doc: dict) -> GameSpec:
    """Validate a parsed scenario document and build the game."""
    validator = jsonschema.Draft202012Validator(SCENARIO_SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        path = _json_path(err.absolute_path)
        if err.validator == "required" and "discount" in err.message:
            path = "discount"
        raise SchemaViolation(err.message, path or "$")
    S = _space_from(doc["spaces"]["S"], "spaces.S")
    X = _space_from(doc["spaces"]["X"], "spaces.X")
    ns, nx = S.size, X.size
    stationary = doc["horizon"] == "infinite"
    horizon = None if stationary else int(doc["horizon"])
    expected = 1 if stationary else horizon
    for key in ("payoffs", "transitions"):
        if len(doc[key]) != expected:
            raise SchemaViolation(f"expected {expected} entries, got {len(doc[key])}", key)

    payoffs = []
    for t, entry in enumerate(doc["payoffs"]):
        path = f"payoffs[{t}]"
        base = _array(entry["base"], (ns, nx), f"{path}.base")
        terms = []
        for j, term in enumerate(entry.get("tau_terms", [])):
            tp = f"{path}.tau_terms[{j}]"
            terms.append(TauTerm(_array(term["weights"], (ns, nx), f"{tp}.weights"),
                                 _coef_array(term["coef"], (ns, nx), f"{tp}.coef")))
        bound = entry.get("bound")
        try:
            payoffs.append(PayoffSpec(base, tuple(terms), bound))
        except BoundViolation as exc:
            raise BoundViolation(str(exc).split(": ", 1)[-1], f"{path}.bound") from None

    transitions = []
    for t, entry in enumerate(doc["transitions"]):
        path = f"transitions[{t}]"
        base = _array(entry["base_logits"], (ns, nx, ns), f"{path}.base_logits")
        terms = []
        for j, term in enumerate(entry.get("tau_terms", [])):
            tp = f"{path}.tau_terms[{j}]"
            terms.append(TauTerm(_array(term["weights"], (ns, ns, nx), f"{tp}.weights"),
                                 _coef_array(term["coef"], (ns, nx), f"{tp}.coef")))
        transitions.append(TransitionSpec(base, tuple(terms)))

    sigma = None
    if "initial_sigma" in doc:
        w = _array(doc["initial_sigma"], (ns,), "initial_sigma")
        try:
            sigma = Dist(S, w)
        except InputError as exc:
            raise SchemaViolation(str(exc), "initial_sigma") from None
    elif not stationary:
        raise SchemaViolation("'initial_sigma' is a required property", "initial_sigma")

    return GameSpec(S, X, horizon, tuple(payoffs), tuple(transitions), sigma,
                    float(doc["discount"]) if "discount" in doc else None,
                    doc.get("name", "scenario"))


def load_scenario(path) -> GameSpec:
    """Read and validate a scenario JSON file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioParseError(f"cannot read scenario: {exc.strerror}", str(path)) from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise SchemaViolation("scenario must be a JSON object", "$")
    return scenario_from_dict(doc)


def _coef_json(c: np.ndarray):
    flat = c.ravel()
    if np.all(flat == flat[0]):
        return float(flat[0])
    return c.tolist()


def scenario_to_dict(game: GameSpec) -> dict:
    for f, g in zip(game.payoffs, game.transitions):
        if not isinstance(f, PayoffSpec) or not isinstance(g, TransitionSpec):
            raise InputError("callback games cannot be serialized")

    def space(sp):
        return {"labels": list(sp.labels), "dist": sp.dist.tolist()}

    doc = {
        "name": game.name,
        "spaces": {"S": space(game.S), "X": space(game.X)},
        "horizon": "infinite" if game.stationary else game.horizon,
    }
    if game.discount is not None:
        doc["discount"] = game.discount
    doc["payoffs"] = [
        {
            "base": f.base.tolist(),
            "tau_terms": [{"weights": t.weights.tolist(), "coef": _coef_json(t.coef)} for t in f.tau_terms],
            "bound": f.bound,
        }
        for f in game.payoffs
    ]
    doc["transitions"] = [
        {
            "base_logits": g.base_logits.tolist(),
            "tau_terms": [{"weights": t.weights.tolist(), "coef": _coef_json(t.coef)} for t in g.tau_terms],
        }
        for g in game.transitions
    ]
    doc["initial_sigma"] = game.initial_sigma.weights.tolist()
    return doc


def save_scenario(game: GameSpec, path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(game), indent=1) + "\n", encoding="utf-8")


def games_equal(a: GameSpec, b: GameSpec) -> bool:
    """Bit-for-bit comparison of every numeric field."""
    if (a.S, a.X, a.horizon, a.discount) != (b.S, b.X, b.horizon, b.discount):
        return False
    if not np.array_equal(a.initial_sigma.weights, b.initial_sigma.weights):
        return False
    for f, g in zip(a.payoffs + a.transitions, b.payoffs + b.transitions):
        fb = f.base if isinstance(f, PayoffSpec) else f.base_logits
        gb = g.base if isinstance(g, PayoffSpec) else g.base_logits
        if not np.array_equal(fb, gb) or len(f.tau_terms) != len(g.tau_terms):
            return False
        if isinstance(f, PayoffSpec) and f.bound != g.bound:
            return False
        for s, t in zip(f.tau_terms, g.tau_terms):
            if not (np.array_equal(s.weights, t.weights) and np.array_equal(s.coef, t.coef)):
                return False
    return True


def logit_gap(p: float, cap: float = 40.0) -> float:
    """Logit difference giving a two-point softmax probability ``p``, capped for p in {0, 1}."""
    if p <= 0.0:
        return -cap
    if p >= 1.0:
        return cap
    return max(-cap, min(cap, math.log(p / (1.0 - p))))
