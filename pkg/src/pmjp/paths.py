"""Uniformisation, conditioned path sampling and path probabilities.

A truncated generator ``A`` is embedded in a discrete chain with common
event rate ``gamma`` and transition matrix ``B = I + A / gamma``.  Rows of
``B`` for states that can leave the box sum to less than one; the deficit
is the probability of jumping out, which observations inside the box rule
out.  Paths are resampled with the auxiliary-grid scheme of Rao and Teh:
the grid is the current path's jump times plus thinning events of rate
``gamma - r(s)``, and the discrete chain on that grid is resampled by
filtering backwards from each observation and sampling forwards.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import InfeasibleError
from .statespace import Generator
from .trajectory import ObservationSet, Trajectory, reaction_labels, trajectory_log_likelihood
from .transient import transient_distribution

__all__ = [
    "ObservationSet", "Trajectory", "UniformisedChain", "uniformise", "ffbs_sample",
    "ffbs_grid_sample", "grid_path_probability", "path_probability", "log_path_probability",
    "evidence", "log_evidence", "thinning_grid",
]

_DENSE_LIMIT = 160


@dataclass(frozen=True)
class UniformisedChain:
    gamma: float
    B: sp.csr_matrix
    generator: Generator

    @property
    def space(self):
        return self.generator.space

    def leak(self):
        """Probability of leaving the box at an event, per state."""
        return 1.0 - np.asarray(self.B.sum(axis=1)).ravel()

    def exit_rates(self, states):
        """Full exit rates r(s), valid for states inside or outside the box."""
        g = self.generator
        return g.model.propensities(states, g.theta).sum(axis=1)


def uniformise(A, multiplier=2.0, min_rate=0.0):
    """Uniformised chain with gamma = max(multiplier * max exit rate, min_rate)."""
    if multiplier < 1:
        raise ValueError("uniformisation multiplier must be at least 1")
    top = float(A.exit_rates.max()) if A.exit_rates.size else 0.0
    gamma = max(multiplier * top, float(min_rate))
    if gamma <= 0:
        gamma = 1.0  # every state absorbing: B is the identity
    n = A.n
    B = (sp.identity(n, format="csr") + A.matrix / gamma).tocsr()
    B.data[np.abs(B.data) < 1e-15 * max(1.0, np.abs(B.data).max(initial=0))] = 0.0
    B.eliminate_zeros()
    return UniformisedChain(gamma, B, A)


# ---------------------------------------------------------------------------
# grids

def thinning_grid(current, chain, rng, t_start=None, t_end=None):
    """Current jump times plus Poisson(gamma - r(s)) virtual events along ``current``."""
    t_start = current.t_start if t_start is None else t_start
    t_end = current.t_end if t_end is None else t_end
    rates = np.maximum(chain.gamma - chain.exit_rates(current.states), 0.0)
    seg_start = current.times
    seg_end = np.append(current.times[1:], current.t_end)
    lo = np.maximum(seg_start, t_start)
    hi = np.minimum(seg_end, t_end)
    lengths = np.maximum(hi - lo, 0.0)
    counts = rng.poisson(rates * lengths)
    virtual = np.concatenate([rng.uniform(a, b, size=c) for a, b, c in zip(lo, hi, counts)]) if counts.sum() else np.zeros(0)
    jumps = current.times[1:]
    jumps = jumps[(jumps > t_start) & (jumps <= t_end)]
    grid = np.unique(np.concatenate([jumps, virtual]))
    return grid[grid > t_start]


def _observation_slots(event_times, observations):
    return np.searchsorted(event_times, observations.times, side="right")


def _transition_operator(chain):
    B = chain.B
    return B.toarray() if B.shape[0] <= _DENSE_LIMIT else B


def _backward(Bop, target, n_steps, n):
    """Scaled beta_j = B^(n_steps - j) e_target for j = 0..n_steps, plus log scales."""
    beta = np.zeros((n_steps + 1, n))
    logscale = np.zeros(n_steps + 1)
    beta[n_steps, target] = 1.0
    for j in range(n_steps - 1, -1, -1):
        v = Bop @ beta[j + 1]
        m = v.max()
        if m <= 0:
            beta[j] = 0.0
            logscale[j] = -np.inf
            continue
        beta[j] = v / m
        logscale[j] = logscale[j + 1] + math.log(m)
    return beta, logscale


def _observed_indices(observations, chain):
    idx = chain.space.index(observations.states)
    if np.any(idx < 0):
        bad = observations.states[int(np.nonzero(idx < 0)[0][0])]
        raise InfeasibleError(f"observed state {bad.tolist()} lies outside the state space")
    return idx


def ffbs_grid_sample(event_times, observations, chain, rng):
    """Sample the discrete chain on a fixed event grid given exact observations.

    Returns state indices for slot 0 (the first observation time) and after
    each event.  Raises :class:`InfeasibleError` when no path on this grid
    connects the observations.
    """
    event_times = np.asarray(event_times, dtype=float)
    obs_idx = _observed_indices(observations, chain)
    slots = _observation_slots(event_times, observations)
    B = chain.B
    Bop = _transition_operator(chain)
    n = chain.space.states.shape[0]
    path = np.empty(event_times.size + 1, dtype=np.int64)
    path[: slots[0] + 1] = obs_idx[0]
    for i in range(len(observations) - 1):
        a, b = slots[i], slots[i + 1]
        if a == b:
            if obs_idx[i] != obs_idx[i + 1]:
                raise InfeasibleError(f"no events between observations {i} and {i + 1} but the state changes")
            continue
        beta, _ = _backward(Bop, obs_idx[i + 1], b - a, n)
        if beta[0, obs_idx[i]] <= 0:
            raise InfeasibleError(f"observations {i} and {i + 1} cannot be connected on this grid")
        s = obs_idx[i]
        path[a] = s
        u = rng.random(b - a)
        for j in range(1, b - a + 1):
            lo, hi = B.indptr[s], B.indptr[s + 1]
            cols = B.indices[lo:hi]
            w = B.data[lo:hi] * beta[j, cols]
            c = np.cumsum(w)
            s = cols[min(int(np.searchsorted(c, u[j - 1] * c[-1], side="right")), cols.size - 1)]
            path[a + j] = s
    path[slots[-1]:] = obs_idx[-1]
    return path


def grid_path_probability(path, event_times, observations, chain):
    """Probability that :func:`ffbs_grid_sample` returns ``path`` on this grid."""
    path = np.asarray(path, dtype=np.int64)
    event_times = np.asarray(event_times, dtype=float)
    if path.size != event_times.size + 1:
        raise ValueError("path needs one slot per event plus the initial slot")
    try:
        obs_idx = _observed_indices(observations, chain)
    except InfeasibleError:
        return 0.0
    slots = _observation_slots(event_times, observations)
    if np.any(path[slots] != obs_idx) or np.any(path[: slots[0] + 1] != obs_idx[0]) or np.any(path[slots[-1]:] != obs_idx[-1]):
        return 0.0
    Bop = _transition_operator(chain)
    B = chain.B
    n = chain.space.states.shape[0]
    logp = 0.0
    for i in range(len(observations) - 1):
        a, b = slots[i], slots[i + 1]
        if a == b:
            continue
        beta, logscale = _backward(Bop, obs_idx[i + 1], b - a, n)
        z = beta[0, obs_idx[i]]
        if z <= 0:
            return 0.0
        logz = math.log(z) + logscale[0]
        for j in range(a, b):
            bij = B[path[j], path[j + 1]]
            if bij <= 0:
                return 0.0
            logp += math.log(bij)
        logp -= logz
    return math.exp(logp)


def _grid_to_trajectory(path, event_times, observations, chain):
    states = chain.space.states[path]
    times = np.concatenate([[observations.times[0]], event_times])
    return Trajectory(states, times, float(observations.times[-1])).without_self_jumps()


def ffbs_sample(current, observations, chain, rng):
    """One auxiliary-grid resampling step of the path given exact observations.

    The returned trajectory starts at the first observation time, ends at the
    last, and passes through every observed state exactly.
    """
    grid = thinning_grid(current, chain, rng, observations.times[0], observations.times[-1])
    path = ffbs_grid_sample(grid, observations, chain, rng)
    return _grid_to_trajectory(path, grid, observations, chain)


# ---------------------------------------------------------------------------
# evidence and path probabilities

def log_evidence(observations, space, model, theta, gamma_multiplier=None, generator=None):
    """log P(y_2..y_N | y_1) on the truncated space (killed outside the box).

    Forward messages a^(i), the joint of earlier observations and the state
    at t_i, are propagated interval by interval; the backward sweep then
    collects the probability of each observation from its message.
    """
    from .statespace import build_generator

    A = generator if generator is not None else build_generator(space, model, theta)
    idx = space.index(observations.states)
    if idx[0] < 0:
        return -math.inf
    gamma = None
    if gamma_multiplier is not None:
        gamma = gamma_multiplier * float(A.exit_rates.max()) if A.exit_rates.size else None
    n = len(space)
    messages = [None] * len(observations)
    first = np.zeros(n)
    first[idx[0]] = 1.0
    messages[0] = first
    dts = np.diff(observations.times)
    # batch intervals of equal length into a single stacked solve
    by_dt = {}
    for i, dt in enumerate(dts):
        by_dt.setdefault(float(dt), []).append(i)
    for dt, members in by_dt.items():
        starts = np.zeros((len(members), n))
        ok = [idx[i] >= 0 for i in members]
        for r, i in enumerate(members):
            if ok[r]:
                starts[r, idx[i]] = 1.0
        out = transient_distribution(starts, A, dt, gamma=gamma)
        for r, i in enumerate(members):
            messages[i + 1] = out[r]
    log_p = 0.0
    for i in range(len(observations) - 1, 0, -1):
        if idx[i] < 0:
            return -math.inf
        b = messages[i][idx[i]]
        if b <= 0:
            return -math.inf
        log_p += math.log(b)
    return log_p


def evidence(observations, space, model, theta, gamma_multiplier=None):
    """Probability of the observed series given its first state, inside ``space``."""
    return math.exp(log_evidence(observations, space, model, theta, gamma_multiplier))


def log_path_probability(trajectory, observations, chain, log_z=None):
    """Log of the conditional path density p(trajectory | observations) in the chain's space.

    This is the density that the auxiliary-grid sampler leaves invariant:
    the path likelihood restricted to the box, divided by the evidence.  It
    is -inf for paths that leave the box or miss an observation.
    """
    g = chain.generator
    space = g.space
    if np.any(space.index(trajectory.states) < 0):
        return -math.inf
    if not _matches(trajectory, observations):
        return -math.inf
    try:
        reaction_labels(trajectory, g.model)
    except ValueError:
        return -math.inf
    log_l = trajectory_log_likelihood(trajectory, g.model, g.theta)
    if log_z is None:
        log_z = log_evidence(observations, space, g.model, g.theta, chain.gamma / max(g.exit_rates.max(), 1e-300), g)
    if log_z == -math.inf:
        return -math.inf
    return log_l - log_z


def path_probability(trajectory, observations, chain):
    return math.exp(log_path_probability(trajectory, observations, chain))


def _matches(trajectory, observations):
    if trajectory.t_start > observations.times[0] or trajectory.t_end < observations.times[-1]:
        return False
    return bool(np.all(trajectory.value_at(observations.times) == observations.states))
