"""Russian-roulette estimates of transition probabilities and likelihoods.

The transition probability over one observation interval is the series
``sum_N p_N`` of dispersal increments (see :mod:`pmjp.transient`).  A
random number of terms ``K`` is drawn, with term ``n`` reached with
probability ``prod_{j<=n} (1 - q_j)``, and each retained term is divided
by that probability.  Every term is non-negative, so the estimate is
non-negative and unbiased.

With ``q_n = 1 - a (1 - q_{n-1})`` and ``q_0 = 0`` the continuation
probability at step ``j`` is ``a**j``, giving the closed forms

    P(K > N) = a ** (N (N + 1) / 2),    E[K] = sum_{n>=0} a ** (n (n + 1) / 2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .statespace import DEFAULT_MAX_STATES, conservation_invariant
from .transient import f_n_series, increments


@dataclass(frozen=True)
class StoppingSchedule:
    """Geometric-decay stopping rule with continuation decay ``a`` in (0, 1)."""

    a: float = 0.95

    def __post_init__(self):
        if not 0 < self.a < 1:
            raise ValueError(f"schedule parameter a must lie in (0, 1), got {self.a}")

    def stop_probability(self, n):
        """q_n, the chance of stopping at term n (q_0 = 0)."""
        return 1.0 - self.a ** n

    def inclusion_probabilities(self, n_terms):
        """P(K > N) for N = 0..n_terms-1, as a running product of 1 - q_j = a**j."""
        cont = np.concatenate([[1.0], self.a ** np.arange(1, n_terms, dtype=float)])
        return np.cumprod(cont)[:n_terms]

    def inclusion_probability(self, N):
        return self.a ** (N * (N + 1) / 2)

    def expected_terms(self):
        n = np.arange(0, 2000)
        return float(np.sum(self.a ** (n * (n + 1) / 2)))

    @classmethod
    def for_expected_terms(cls, target):
        """Schedule whose mean number of terms equals ``target`` (> 1)."""
        if target <= 1:
            raise ValueError("expected number of terms must exceed 1")
        return cls(brentq(lambda a: cls(a).expected_terms() - target, 1e-12, 1 - 1e-12, xtol=1e-14))

    def sample_stop(self, rng):
        k = 1
        while rng.random() < self.a ** k:
            k += 1
        return k


@dataclass(frozen=True)
class FixedStop:
    """Deterministic schedule that always takes ``level`` terms (biased; for testing)."""

    level: int = 1

    def __post_init__(self):
        if self.level < 1:
            raise ValueError("level must be at least 1")

    def inclusion_probabilities(self, n_terms):
        return np.where(np.arange(n_terms) < self.level, 1.0, 0.0)

    def expected_terms(self):
        return float(self.level)

    def sample_stop(self, rng):
        return self.level


def sample_stop(schedule, rng):
    """Number of series terms K >= 1 to retain."""
    return schedule.sample_stop(rng)


class IntervalSeries:
    """Lazily computed truncation levels f(0), f(1), ... for one interval at fixed theta."""

    def __init__(self, s, s_prime, dt, model, theta, invariant=None, max_states=DEFAULT_MAX_STATES):
        self.s, self.s_prime, self.dt = np.asarray(s), np.asarray(s_prime), float(dt)
        self.model, self.theta = model, np.asarray(theta, dtype=float)
        self.invariant, self.max_states = invariant, max_states
        self._f = np.zeros(0)

    def f(self, upto):
        have = self._f.shape[0]
        if upto >= have:
            more = f_n_series(self.s, self.s_prime, self.dt, upto, self.model, self.theta,
                              self.invariant, n_min=have, max_states=self.max_states)
            self._f = np.concatenate([self._f, more])
        return self._f[: upto + 1]

    def terms(self, n_terms):
        return increments(self.f(n_terms - 1))


def interval_estimate(s, s_prime, dt, model, theta, schedule, rng, invariant=None, series=None):
    """Unbiased, non-negative roulette estimate of P(state s_prime after dt | s)."""
    if dt <= 0:
        raise ValueError("interval length must be positive")
    if series is None:
        series = IntervalSeries(s, s_prime, dt, model, theta, invariant)
    K = schedule.sample_stop(rng)
    weights = schedule.inclusion_probabilities(K)
    terms = series.terms(K)
    return float(np.sum(terms[weights > 0] / weights[weights > 0]))


@dataclass
class LikelihoodEstimate:
    log_value: float
    interval_values: list = field(default_factory=list)
    terms_taken: list = field(default_factory=list)

    @property
    def value(self):
        return math.exp(self.log_value) if self.log_value > -np.inf else 0.0


def _interval_rngs(rng, n):
    if isinstance(rng, np.random.Generator):
        return [rng] * n
    rngs = list(rng)
    if len(rngs) != n:
        raise ValueError(f"need {n} interval streams, got {len(rngs)}")
    return rngs


def resolve_invariant(invariant, model, observations):
    if isinstance(invariant, str) and invariant == "auto":
        return conservation_invariant(model, observations.states[0])
    return invariant


def log_likelihood_estimate(observations, model, theta, schedule, rng, invariant="auto", cache=None):
    """Product of independent interval estimates over consecutive observations.

    ``rng`` is one Generator shared by all intervals or a sequence holding one
    stream per interval.  ``cache`` (a list of :class:`IntervalSeries`) lets
    repeated estimates at the same theta reuse solved truncation levels.
    """
    if len(observations) < 2:
        raise ValueError("need at least two observations")
    invariant = resolve_invariant(invariant, model, observations)
    intervals = list(observations.intervals())
    rngs = _interval_rngs(rng, len(intervals))
    if cache is None:
        cache = [IntervalSeries(s, s2, dt, model, theta, invariant) for s, s2, dt in intervals]
    est = LikelihoodEstimate(0.0)
    # draw all stopping levels first so the random stream is independent of solver work
    ks = [schedule.sample_stop(r) for r in rngs]
    for series, K in zip(cache, ks):
        w = schedule.inclusion_probabilities(K)
        terms = series.terms(K)
        v = float(np.sum(terms[w > 0] / w[w > 0]))
        est.interval_values.append(v)
        est.terms_taken.append(K)
        est.log_value += math.log(v) if v > 0 else -math.inf
    return est


@dataclass
class CVReport:
    mean: float
    variance: float
    cv: float
    n_zero: int
    log_estimates: np.ndarray


def cv_diagnostic(observations, model, theta, schedule, n_reps, rng, invariant="auto"):
    """Mean, variance and coefficient of variation of repeated log-likelihood estimates.

    Zero estimates are counted and excluded from the statistics rather than
    turning them into -inf.
    """
    if n_reps < 2:
        raise ValueError("need at least two replicates for a variance")
    invariant = resolve_invariant(invariant, model, observations)
    cache = [IntervalSeries(s, s2, dt, model, theta, invariant) for s, s2, dt in observations.intervals()]
    logs = np.array([log_likelihood_estimate(observations, model, theta, schedule, rng, invariant, cache).log_value
                     for _ in range(n_reps)])
    finite = logs[np.isfinite(logs)]
    n_zero = int(logs.size - finite.size)
    if finite.size < 2:
        return CVReport(float("nan"), float("nan"), float("nan"), n_zero, logs)
    mean = float(finite.mean())
    var = 0.0 if np.ptp(finite) == 0 else float(finite.var(ddof=1))
    cv = math.sqrt(var) / abs(mean) if mean != 0 else float("inf")
    return CVReport(mean, var, cv, n_zero, logs)
