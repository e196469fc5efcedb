"""Finite boxes of population states and truncated generator matrices.

A :class:`StateBox` is the set of integer vectors ``lower <= x <= upper``,
optionally cut down by one linear invariant ``w . x == total``.  States are
enumerated in lexicographic order (first species varies slowest).

Generators are substochastic: a transition whose target lies outside the
box is dropped, but its rate still counts towards the diagonal.  The
transient solution ``p0 expm(A t)`` of such a generator is therefore the
probability of being at a state *and* never having left the box.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .errors import DimensionError, ResourceError

DEFAULT_MAX_STATES = 5_000_000


@dataclass(frozen=True)
class StateBox:
    upper: tuple
    lower: tuple | None = None
    invariant: tuple | None = None  # (weights, total)

    def __post_init__(self):
        upper = tuple(int(u) for u in self.upper)
        lower = (0,) * len(upper) if self.lower is None else tuple(int(v) for v in self.lower)
        if len(lower) != len(upper):
            raise DimensionError("lower and upper bounds differ in length")
        if any(lo > hi for lo, hi in zip(lower, upper)) or any(lo < 0 for lo in lower):
            raise ValueError(f"malformed box lower={lower} upper={upper}")
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "lower", lower)
        if self.invariant is not None:
            w, total = self.invariant
            w = tuple(int(x) for x in w)
            if len(w) != len(upper):
                raise DimensionError("invariant weights have the wrong length")
            object.__setattr__(self, "invariant", (w, int(total)))

    @property
    def shape(self):
        return tuple(hi - lo + 1 for lo, hi in zip(self.lower, self.upper))

    def size(self):
        """Number of integer points in the box (honouring the invariant)."""
        if self.invariant is None:
            return int(np.prod(self.shape, dtype=object))
        w, total = self.invariant
        if any(x < 0 for x in w):
            return int(self._points().shape[0])
        # count solutions of sum w_i x_i = total by dynamic programming
        counts = {0: 1}
        for wi, lo, hi in zip(w, self.lower, self.upper):
            nxt = {}
            for partial, c in counts.items():
                for x in range(lo, hi + 1):
                    v = partial + wi * x
                    if v <= total:
                        nxt[v] = nxt.get(v, 0) + c
            counts = nxt
        return counts.get(total, 0)

    def _points(self):
        grid = np.indices(self.shape).reshape(len(self.shape), -1).T
        pts = grid + np.asarray(self.lower, dtype=np.int64)
        if self.invariant is not None:
            w, total = self.invariant
            pts = pts[pts @ np.asarray(w, dtype=np.int64) == total]
        return pts.astype(np.int64)

    def contains(self, states):
        states = np.atleast_2d(np.asarray(states))
        ok = np.all((states >= self.lower) & (states <= self.upper), axis=1)
        if self.invariant is not None:
            w, total = self.invariant
            ok &= states @ np.asarray(w) == total
        return ok


class StateSpace:
    """Enumerated box with a state <-> index bijection."""

    def __init__(self, box, states):
        self.box = box
        self.states = states
        self.states.setflags(write=False)
        shape = np.asarray(box.shape, dtype=np.int64)
        self._strides = np.concatenate([np.cumprod(shape[::-1])[::-1][1:], [1]]).astype(np.int64)
        self._lower = np.asarray(box.lower, dtype=np.int64)
        self._codes = (states - self._lower) @ self._strides
        self._structure = {}

    def __len__(self):
        return self.states.shape[0]

    @property
    def n_species(self):
        return self.states.shape[1]

    def index(self, states):
        """Positions of ``states`` in the enumeration; -1 for states outside."""
        states = np.asarray(states, dtype=np.int64)
        single = states.ndim == 1
        states = np.atleast_2d(states)
        if states.shape[1] != self.n_species:
            raise DimensionError(f"state has {states.shape[1]} components, space has {self.n_species}")
        if len(self) == 0:
            out = np.full(states.shape[0], -1)
            return int(out[0]) if single else out
        inside = self.box.contains(states)
        codes = (states - self._lower) @ self._strides
        pos = np.searchsorted(self._codes, codes)
        pos = np.minimum(pos, len(self) - 1)
        found = inside & (self._codes[pos] == codes)
        out = np.where(found, pos, -1)
        return int(out[0]) if single else out

    def __contains__(self, state):
        return self.index(state) >= 0

    def structure(self, model):
        """Theta-independent sparsity data for ``model`` on this space."""
        key = model
        if key not in self._structure:
            self._structure[key] = _Structure(self, model)
        return self._structure[key]


class _Structure:
    """Per-reaction rho values and in-box targets, laid out as a CSR pattern."""

    def __init__(self, space, model):
        n = len(space)
        rho = model.rho(space.states) if n else np.zeros((0, model.n_reactions))
        self.rho = rho
        rows, cols, rids = [], [], []
        for i, r in enumerate(model.reactions):
            tgt = space.index(space.states + np.asarray(r.update, dtype=np.int64)) if n else np.zeros(0, int)
            keep = (tgt >= 0) & (rho[:, i] > 0)
            src = np.nonzero(keep)[0]
            rows.append(src)
            cols.append(tgt[keep])
            rids.append(np.full(src.shape[0], i))
        rows, cols, rids = (np.concatenate(a) if a else np.zeros(0, int) for a in (rows, cols, rids))
        # diagonal slots carry reaction id -1
        rows = np.concatenate([rows, np.arange(n)])
        cols = np.concatenate([cols, np.arange(n)])
        rids = np.concatenate([rids, np.full(n, -1)])
        order = np.lexsort((cols, rows))
        self.rows, self.cols, self.rids = rows[order], cols[order], rids[order]
        self.indptr = np.searchsorted(self.rows, np.arange(n + 1)).astype(np.int32)
        self.indices = self.cols.astype(np.int32)
        self.is_diag = self.rids < 0
        self.offdiag_rho = np.where(self.is_diag, 0.0, rho[self.rows, np.maximum(self.rids, 0)])
        self.param_of = model.param_of_reaction
        self.shape = (n, n)

    def matrix(self, theta):
        theta = np.asarray(theta, dtype=float)
        rates = self.rho * theta[self.param_of]
        exit_rates = rates.sum(axis=1)
        data = np.where(self.is_diag, 0.0, self.offdiag_rho * theta[self.param_of[np.maximum(self.rids, 0)]])
        data[self.is_diag] = -exit_rates
        return sp.csr_matrix((data, self.indices, self.indptr), shape=self.shape), exit_rates


@lru_cache(maxsize=512)
def _enumerate_cached(box, max_states):
    size = box.size()
    if size > max_states:
        raise ResourceError(f"state box {box.upper} would hold {size} states (cap {max_states})")
    return StateSpace(box, box._points())


def enumerate_box(box, max_states=DEFAULT_MAX_STATES):
    """Enumerate ``box`` in lexicographic order.

    Results are cached per box, so repeated truncations at the same level
    share one :class:`StateSpace` and its generator sparsity patterns.
    """
    return _enumerate_cached(box, int(max_states))


@dataclass(frozen=True)
class Generator:
    space: StateSpace
    matrix: sp.csr_matrix
    exit_rates: np.ndarray
    model: object
    theta: np.ndarray

    @property
    def n(self):
        return len(self.space)

    def leak(self):
        """Rate at which each state leaves the box (zero for interior states)."""
        return -np.asarray(self.matrix.sum(axis=1)).ravel()


def build_generator(space, model, theta):
    """Substochastic rate matrix of ``model`` restricted to ``space``."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (model.n_params,):
        raise DimensionError(f"expected {model.n_params} parameters, got {theta.shape}")
    if np.any(theta <= 0):
        raise ValueError("all parameters must be positive")
    if space.n_species != model.n_species:
        raise DimensionError("state space and model disagree on the number of species")
    A, exits = space.structure(model).matrix(theta)
    return Generator(space, A, exits, model, theta)


def truncation_from_observations(observations, margin, invariant=None):
    """Box with upper bound = per-species observed maximum + ``margin``."""
    states = np.atleast_2d(np.asarray(getattr(observations, "states", observations)))
    if states.shape[0] == 0:
        raise ValueError("need at least one observation")
    if margin < 0:
        raise ValueError("margin must be non-negative")
    upper = states.max(axis=0) + int(margin)
    return StateBox(tuple(int(u) for u in upper), invariant=invariant)


def conservation_invariant(model, state):
    """Linear invariant (weights, total) implied by ``model`` at ``state``, or None."""
    w = model.conservation_weights()
    if w is None:
        return None
    return (w, int(np.dot(w, state)))
