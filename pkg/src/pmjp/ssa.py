"""Gillespie direct-method simulation and noiseless observation."""

from __future__ import annotations

import numpy as np

from .errors import ResourceError
from .trajectory import ObservationSet, Trajectory

DEFAULT_MAX_JUMPS = 10_000_000


def gillespie(model, theta, init, t_end, rng, t_start=0.0, max_jumps=DEFAULT_MAX_JUMPS):
    """Exact sample path of ``model`` on [t_start, t_end] from state ``init``."""
    theta = np.asarray(theta, dtype=float)
    state = np.asarray(init, dtype=np.int64).copy()
    if np.any(state < 0):
        raise ValueError("initial counts must be non-negative")
    if np.any(theta <= 0):
        raise ValueError("parameters must be positive")
    if t_end <= t_start:
        raise ValueError("t_end must exceed the start time")
    stoich = model.stoichiometry
    param_of = model.param_of_reaction
    laws = [r.law for r in model.reactions]
    rate_consts = theta[param_of]
    states, times = [state.copy()], [float(t_start)]
    t = float(t_start)
    while True:
        props = np.array([law.evaluate(state) for law in laws]) * rate_consts
        total = props.sum()
        if total <= 0:
            break
        t += rng.exponential(1.0 / total)
        if t >= t_end:
            break
        if len(times) > max_jumps:
            raise ResourceError(f"simulation exceeded {max_jumps} jumps before t={t_end}")
        k = int(np.searchsorted(np.cumsum(props), rng.random() * total, side="right"))
        k = min(k, len(props) - 1)
        state = state + stoich[k]
        if np.any(state < 0):
            raise RuntimeError(f"reaction {model.reactions[k].name} drove a count negative")
        states.append(state.copy())
        times.append(t)
    return Trajectory(np.array(states), np.array(times), float(t_end))


def observe(trajectory, times, species=None):
    """Exact observations of ``trajectory`` at ``times`` (right-continuous)."""
    times = np.asarray(times, dtype=float)
    if times.size and (times[0] < trajectory.t_start or times[-1] > trajectory.t_end):
        raise ValueError("observation times must lie within the trajectory span")
    return ObservationSet(times, trajectory.value_at(times), species)
