"""Transient probabilities on truncated state spaces.

``transient_distribution`` evaluates ``p0 expm(A t)`` with the
uniformisation series

    p0 expm(A t) = sum_k Poisson(k; gamma t) p0 B^k,   B = I + A / gamma,

cut where the remaining Poisson tail drops below ``tol``.  Only sparse
matrix-vector products are used.  ``f_n`` and ``p_n_term`` build the
likelihood expansion for one observation interval: ``f_n`` is the
probability of moving from ``s`` to ``s_prime`` while no species ever
exceeds ``max(s, s_prime) + N``, and ``p_n_term`` is its increment in N.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.stats import poisson

from .statespace import DEFAULT_MAX_STATES, StateBox, build_generator, enumerate_box

DEFAULT_TOL = 1e-13
_DENSE_LIMIT = 96


def poisson_weights(mu, tol=DEFAULT_TOL):
    """Poisson(mu) pmf on 0..K with tail mass beyond K below ``tol``."""
    if mu <= 0:
        return np.ones(1)
    right = int(poisson.isf(tol, mu)) + 2
    return poisson.pmf(np.arange(right + 1), mu)


def _as_matrix(A):
    return A.matrix if hasattr(A, "matrix") else sp.csr_matrix(A)


def uniformised_series(p0, A, t, gamma=None, tol=DEFAULT_TOL):
    """Apply expm(A t) to row vector(s) ``p0`` by uniformisation.

    ``p0`` is a vector of length n or an (k, n) stack of row vectors.
    """
    A = _as_matrix(A)
    p0 = np.asarray(p0, dtype=float)
    if t < 0:
        raise ValueError(f"time must be non-negative, got {t}")
    if t == 0:
        return p0.copy()
    diag = -A.diagonal()
    if gamma is None:
        gamma = float(diag.max()) if diag.size else 0.0
    if gamma <= 0:
        return p0.copy()
    if gamma < diag.max() * (1 - 1e-12):
        raise ValueError("uniformisation rate is below the largest exit rate")
    n = A.shape[0]
    BT = (A.T / gamma + sp.identity(n, format="csr")).tocsr()
    if n <= _DENSE_LIMIT:
        BT = BT.toarray()
    w = poisson_weights(gamma * t, tol)
    v = p0.T.copy()
    out = w[0] * v
    for wk in w[1:]:
        v = BT @ v
        out += wk * v
    np.maximum(out, 0.0, out=out)
    return out.T


def transient_distribution(p0, A, t, tol=DEFAULT_TOL, gamma=None):
    """Distribution at time ``t`` started from ``p0`` under generator ``A``."""
    return uniformised_series(p0, A, t, gamma=gamma, tol=tol)


def dense_transient(p0, A, t):
    """Reference ``p0 expm(A t)`` by dense scaling and squaring (small n only)."""
    A = _as_matrix(A).toarray()
    if A.shape[0] > 200:
        raise ValueError("dense reference is limited to 200 states")
    return np.asarray(p0, dtype=float) @ scipy.linalg.expm(A * t)


def dispersal_box(s, s_prime, N, invariant=None):
    """Box whose upper bound is max(s, s_prime) + N in every species."""
    upper = np.maximum(np.asarray(s), np.asarray(s_prime)) + int(N)
    return StateBox(tuple(int(u) for u in upper), invariant=invariant)


def f_n(s, s_prime, t, N, model, theta, invariant=None, max_states=DEFAULT_MAX_STATES, tol=DEFAULT_TOL):
    """P(reach s_prime at t from s without any species exceeding max(s, s')+N)."""
    if N < 0:
        return 0.0
    space = enumerate_box(dispersal_box(s, s_prime, N, invariant), max_states)
    i, j = space.index(np.asarray(s)), space.index(np.asarray(s_prime))
    if i < 0 or j < 0:
        return 0.0
    A = build_generator(space, model, theta)
    p0 = np.zeros(len(space))
    p0[i] = 1.0
    return float(min(transient_distribution(p0, A, t, tol=tol)[j], 1.0))


def f_n_series(s, s_prime, t, n_max, model, theta, invariant=None, n_min=0,
               max_states=DEFAULT_MAX_STATES, tol=DEFAULT_TOL):
    """``[f_n(N) for N in n_min..n_max]`` in a single uniformisation pass.

    The truncated generators are stacked block-diagonally and share one
    uniformisation rate, so the series is summed once for all levels.
    """
    levels = range(max(n_min, 0), n_max + 1)
    if not levels:
        return np.zeros(0)
    blocks, starts, targets, ok, offset = [], [], [], [], 0
    for N in levels:
        space = enumerate_box(dispersal_box(s, s_prime, N, invariant), max_states)
        i, j = space.index(np.asarray(s)), space.index(np.asarray(s_prime))
        blocks.append(build_generator(space, model, theta).matrix)
        ok.append(i >= 0 and j >= 0)
        starts.append(offset + i)
        targets.append(offset + j)
        offset += len(space)
    ok, starts, targets = np.array(ok), np.array(starts), np.array(targets)
    out = np.zeros(len(levels))
    if t == 0:
        same = bool(np.all(np.asarray(s) == np.asarray(s_prime)))
        return np.where(ok & same, 1.0, 0.0)
    rows = np.nonzero(ok)[0]
    if rows.size:
        A = sp.block_diag(blocks, format="csr")
        # blocks evolve independently, so one vector carries every start state
        p0 = np.zeros(A.shape[0])
        p0[starts[rows]] = 1.0
        pt = transient_distribution(p0, A, t, tol=tol)
        out[rows] = np.minimum(pt[targets[rows]], 1.0)
    return out


def p_n_term(s, s_prime, t, N, model, theta, invariant=None, **kwargs):
    """Increment f_n(N) - f_n(N-1), clamped to [0, f_n(N)]."""
    fn = f_n(s, s_prime, t, N, model, theta, invariant, **kwargs)
    prev = f_n(s, s_prime, t, N - 1, model, theta, invariant, **kwargs) if N > 0 else 0.0
    return float(min(max(fn - prev, 0.0), fn))


def increments(f_values):
    """p-terms from a sequence f(0), f(1), ...; negative round-off is clamped."""
    f = np.asarray(f_values, dtype=float)
    d = np.diff(np.concatenate([[0.0], f]))
    return np.clip(d, 0.0, f)
