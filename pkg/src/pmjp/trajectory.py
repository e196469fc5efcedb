"""Piecewise-constant trajectories and exact observation sets."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ObservationSet:
    """Noiseless observations ``(times[i], states[i])``; times strictly increasing."""

    times: np.ndarray
    states: np.ndarray
    species: tuple | None = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).ravel()
        states = np.atleast_2d(np.asarray(self.states, dtype=np.int64))
        if states.shape[0] != times.shape[0]:
            raise ValueError("need one state per observation time")
        if times.size and np.any(np.diff(times) <= 0):
            raise ValueError("observation times must be strictly increasing")
        if np.any(states < 0):
            raise ValueError("observed counts must be non-negative")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)

    def __len__(self):
        return self.times.shape[0]

    @property
    def n_species(self):
        return self.states.shape[1]

    def intervals(self):
        """Consecutive (s, s_prime, dt) triples."""
        for k in range(len(self) - 1):
            yield self.states[k], self.states[k + 1], float(self.times[k + 1] - self.times[k])

    def to_csv(self, species=None):
        names = species or self.species or tuple(f"x{i}" for i in range(self.n_species))
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time", *names])
        for t, s in zip(self.times, self.states):
            w.writerow([repr(float(t)), *map(int, s)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text, species=None):
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0][0].strip() != "time":
            raise ValueError("observation CSV must start with a 'time,<species...>' header")
        header = [h.strip() for h in rows[0][1:]]
        body = [r for r in rows[1:] if r]
        try:
            times = [float(r[0]) for r in body]
            states = [[int(v) for v in r[1:]] for r in body]
        except ValueError as exc:
            raise ValueError(f"malformed observation row: {exc}") from None
        if any(len(s) != len(header) for s in states):
            raise ValueError("observation rows have the wrong number of columns")
        if species is not None:
            if set(header) != set(species):
                raise ValueError(f"observation columns {header} do not match species {list(species)}")
            order = [header.index(n) for n in species]
            states = [[s[i] for i in order] for s in states]
            header = list(species)
        return cls(np.array(times), np.array(states, dtype=np.int64).reshape(len(times), len(header)),
                   tuple(header))


@dataclass(frozen=True)
class Trajectory:
    """Step function: ``states[k]`` holds on ``[times[k], times[k+1])``; ends at ``t_end``."""

    states: np.ndarray
    times: np.ndarray
    t_end: float

    def __post_init__(self):
        states = np.atleast_2d(np.asarray(self.states, dtype=np.int64))
        times = np.asarray(self.times, dtype=float).ravel()
        if states.shape[0] != times.shape[0] or times.size == 0:
            raise ValueError("need one time per state and at least one state")
        if np.any(np.diff(times) <= 0):
            raise ValueError("jump times must be strictly increasing")
        if self.t_end < times[-1]:
            raise ValueError("trajectory ends before its last jump")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "t_end", float(self.t_end))

    @property
    def t_start(self):
        return float(self.times[0])

    @property
    def n_jumps(self):
        return self.states.shape[0] - 1

    def holding_times(self):
        return np.diff(np.append(self.times, self.t_end))

    def value_at(self, t):
        """Right-continuous evaluation; ``t`` may be a scalar or array."""
        t = np.asarray(t, dtype=float)
        if np.any(t < self.times[0]) or np.any(t > self.t_end):
            raise ValueError(f"time outside trajectory span [{self.times[0]}, {self.t_end}]")
        k = np.searchsorted(self.times, t, side="right") - 1
        return self.states[k]

    def without_self_jumps(self):
        keep = np.ones(self.states.shape[0], dtype=bool)
        keep[1:] = np.any(self.states[1:] != self.states[:-1], axis=1)
        return Trajectory(self.states[keep], self.times[keep], self.t_end)

    def to_csv(self, species=None):
        names = species or tuple(f"x{i}" for i in range(self.states.shape[1]))
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time", *names])
        for t, s in zip(self.times, self.states):
            w.writerow([repr(float(t)), *map(int, s)])
        w.writerow([repr(self.t_end), *map(int, self.states[-1])])
        return buf.getvalue()


def reaction_labels(trajectory, model):
    """Index of the reaction behind each jump; raises if a jump matches none."""
    deltas = np.diff(trajectory.states, axis=0)
    labels = np.array([model.reaction_for_update(d) for d in deltas], dtype=np.int64)
    if np.any(labels < 0):
        k = int(np.nonzero(labels < 0)[0][0])
        raise ValueError(f"jump {k} (change {deltas[k].tolist()}) matches no reaction update")
    return labels


def trajectory_statistics(trajectory, model):
    """Per-parameter jump counts and integrated rho, sum_k dt_k rho_i(s_k).

    The last holding interval runs to ``t_end``.
    """
    labels = reaction_labels(trajectory, model)
    param_of = model.param_of_reaction
    counts = np.bincount(param_of[labels], minlength=model.n_params).astype(float)
    exposure_by_reaction = trajectory.holding_times() @ model.rho(trajectory.states)
    exposure = np.bincount(param_of, weights=exposure_by_reaction, minlength=model.n_params)
    return counts, exposure


def trajectory_log_likelihood(trajectory, model, theta):
    """Log density of a fully observed path: sum log(theta_u rho_u(s_k)) - sum dt_k r(s_k)."""
    theta = np.asarray(theta, dtype=float)
    labels = reaction_labels(trajectory, model)
    rho = model.rho(trajectory.states)
    rates = rho * theta[model.param_of_reaction]
    survival = float(trajectory.holding_times() @ rates.sum(axis=1))
    jump_rates = rates[np.arange(labels.size), labels]
    with np.errstate(divide="ignore"):
        return float(np.sum(np.log(jump_rates)) - survival)
