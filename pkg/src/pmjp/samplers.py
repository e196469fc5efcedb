"""Posterior samplers for kinetic parameters and latent paths.

Three transition kernels are provided:

* :func:`gibbs_step_finite` alternates exact Gamma draws of the parameters
  with auxiliary-grid path resampling on a fixed finite state space.
* :func:`pm_mh_step` is pseudo-marginal Metropolis-Hastings on the
  parameters, using roulette likelihood estimates.  The estimate for the
  current point is stored and reused, never refreshed.
* :func:`algorithm2_step` draws a random truncation level with every
  update, resamples the path inside the matching box and corrects for the
  truncation with a Metropolis acceptance step.

:func:`run_chain` and :func:`run_chains` drive these kernels from a
:class:`SamplerConfig` with all randomness derived from one integer seed.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InfeasibleError, ResourceError
from .paths import ffbs_sample, log_evidence, uniformise
from .roulette import FixedStop, StoppingSchedule, log_likelihood_estimate
from .ssa import gillespie
from .statespace import (build_generator, conservation_invariant, enumerate_box,
                         truncation_from_observations, StateBox)
from .trajectory import Trajectory, trajectory_log_likelihood, trajectory_statistics

log = logging.getLogger(__name__)

ALGORITHMS = ("gibbs", "pm-mh", "trunc-gibbs")

__all__ = [
    "ChainState", "SamplerConfig", "ChainResult", "trajectory_log_likelihood", "gamma_posterior",
    "gamma_conditional_update", "gibbs_step_finite", "pm_mh_step", "algorithm2_step",
    "initial_trajectory", "run_chain", "run_chains", "pilot_tune",
]


@dataclass
class ChainState:
    theta: np.ndarray
    trajectory: Trajectory | None = None
    m: int | None = None
    log_lik: float | None = None
    accepted: bool = True
    terms: int | None = None
    note: str | None = None


@dataclass
class SamplerConfig:
    algorithm: str = "gibbs"
    iterations: int = 1000
    burn_in: int = 0
    thin: int = 1
    proposal_sd: tuple | None = None
    log_proposal: bool = False
    schedule_a: float = 0.95
    fixed_level: int | None = None
    gamma_multiplier: float = 2.0
    seed: int = 0
    chains: int = 1
    workers: int = 1
    box_upper: tuple | None = None
    box_margin: int = 10
    init_theta: tuple | None = None
    keep_trajectories: int = 0

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; choose from {', '.join(ALGORITHMS)}")
        if not self.iterations > self.burn_in >= 0:
            raise ValueError("need iterations > burn-in >= 0")
        if self.thin < 1 or self.chains < 1:
            raise ValueError("thin and chains must be at least 1")
        if self.proposal_sd is not None and any(s <= 0 for s in self.proposal_sd):
            raise ValueError("proposal standard deviations must be positive")
        if self.gamma_multiplier < 1:
            raise ValueError("gamma multiplier must be at least 1")
        if self.fixed_level is None:
            StoppingSchedule(self.schedule_a)

    @property
    def schedule(self):
        if self.fixed_level is not None:
            return FixedStop(self.fixed_level)
        return StoppingSchedule(self.schedule_a)

    def to_dict(self):
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}


# ---------------------------------------------------------------------------
# conjugate parameter update

def gamma_posterior(trajectory, priors, model):
    """Shapes a_i + N_i and rates b_i + sum_k dt_k rho_i(s_k) given a full path."""
    counts, exposure = trajectory_statistics(trajectory, model)
    shape = np.array([p.shape for p in priors]) + counts
    rate = np.array([p.rate for p in priors]) + exposure
    return shape, rate


def gamma_conditional_update(trajectory, priors, model, rng):
    shape, rate = gamma_posterior(trajectory, priors, model)
    theta = rng.gamma(shape, 1.0 / rate)
    # a draw can round to zero for tiny shapes; keep it in the support
    return np.maximum(theta, np.finfo(float).tiny)


# ---------------------------------------------------------------------------
# kernels

def _path_gamma_floor(trajectory, model, theta, multiplier):
    rates = model.propensities(trajectory.states, theta).sum(axis=1)
    return multiplier * float(rates.max())


def gibbs_step_finite(state, observations, space, model, rng, gamma_multiplier=2.0):
    """Exact Gibbs sweep: theta | path, then path | theta, observations."""
    theta = gamma_conditional_update(state.trajectory, model.priors, model, rng)
    chain = uniformise(build_generator(space, model, theta), gamma_multiplier)
    path = ffbs_sample(state.trajectory, observations, chain, rng)
    return ChainState(theta, path, state.m, accepted=True)


def _log_prior(model, theta):
    return model.log_prior(theta)


def pm_mh_step(state, observations, model, schedule, proposal_sd, rng, interval_rngs=None,
               invariant="auto", log_proposal=False):
    """Pseudo-marginal random-walk Metropolis update of theta.

    ``interval_rngs`` supplies one stream per observation interval (defaults
    to ``rng``).  Proposals outside the positive orthant and zero likelihood
    estimates are rejected.
    """
    if state.log_lik is None:
        raise ValueError("chain state carries no likelihood estimate")
    theta = np.asarray(state.theta, dtype=float)
    sd = np.broadcast_to(np.asarray(proposal_sd, dtype=float), theta.shape)
    z = rng.standard_normal(theta.shape)
    if log_proposal:
        prop = theta * np.exp(sd * z)
        log_jac = float(np.sum(np.log(prop) - np.log(theta)))
    else:
        prop = theta + sd * z
        log_jac = 0.0
    u = rng.random()
    if np.any(prop <= 0):
        return ChainState(theta, state.trajectory, state.m, state.log_lik, accepted=False, note="outside support")
    if len(observations) < 2:
        est_log, terms = 0.0, 0
    else:
        est = log_likelihood_estimate(observations, model, prop, schedule,
                                      interval_rngs if interval_rngs is not None else rng, invariant)
        est_log, terms = est.log_value, int(sum(est.terms_taken))
    if est_log == -math.inf:
        return ChainState(theta, state.trajectory, state.m, state.log_lik, accepted=False,
                          terms=terms, note="zero estimate")
    log_alpha = (_log_prior(model, prop) + est_log + log_jac) - (_log_prior(model, theta) + state.log_lik)
    if math.log(u) < log_alpha:
        return ChainState(prop, state.trajectory, state.m, est_log, accepted=True, terms=terms)
    return ChainState(theta, state.trajectory, state.m, state.log_lik, accepted=False, terms=terms)


def _box(observations, m, invariant):
    return enumerate_box(truncation_from_observations(observations, m, invariant))


def algorithm2_step(state, observations, model, schedule, rng, gamma_multiplier=2.0, invariant="auto"):
    """Truncation-augmented Metropolised Gibbs update of (theta, path, m) as one block.

    The proposal draws theta* | path, a truncation level m* from the stopping
    schedule, and a path inside the box (observed maxima + m*).  Each path
    probability is the conditional path density in the stated box; the
    acceptance ratio is

        p_new(S*) p_new(S_t) / (p_old(S_t) p_old(S*)).

    If the current path leaves the new box the move is rejected; otherwise,
    if the proposed path leaves the old box, it is accepted.
    """
    if isinstance(invariant, str) and invariant == "auto":
        invariant = conservation_invariant(model, observations.states[0])
    theta_new = gamma_conditional_update(state.trajectory, model.priors, model, rng)
    m_new = int(schedule.sample_stop(rng))
    new_space = _box(observations, m_new, invariant)
    old_space = new_space if m_new == state.m else _box(observations, state.m, invariant)

    A_new = build_generator(new_space, model, theta_new)
    floor = _path_gamma_floor(state.trajectory, model, theta_new, gamma_multiplier)
    chain_new = uniformise(A_new, gamma_multiplier, min_rate=floor)
    u = rng.random()
    try:
        path_new = ffbs_sample(state.trajectory, observations, chain_new, rng)
    except InfeasibleError as exc:
        log.info("proposal grid cannot connect observations in box m=%d: %s", m_new, exc)
        return ChainState(state.theta, state.trajectory, state.m, accepted=False, note="infeasible grid")

    A_old = A_new if old_space is new_space else build_generator(old_space, model, theta_new)
    loglik_new = trajectory_log_likelihood(path_new, model, theta_new)
    loglik_cur = trajectory_log_likelihood(state.trajectory, model, theta_new)
    cur_in_new = bool(np.all(new_space.index(state.trajectory.states) >= 0))
    new_in_old = bool(np.all(old_space.index(path_new.states) >= 0))
    if not cur_in_new:
        log.debug("current path leaves the proposed box (m=%d); rejecting", m_new)
        return ChainState(state.theta, state.trajectory, state.m, accepted=False, note="current outside new box")
    if not new_in_old:
        log.debug("proposed path leaves the current box (m=%d); accepting", state.m)
        return ChainState(theta_new, path_new, m_new, accepted=True, note="proposal outside old box")
    logz_new = log_evidence(observations, new_space, model, theta_new, generator=A_new)
    logz_old = logz_new if A_old is A_new else log_evidence(observations, old_space, model, theta_new, generator=A_old)
    p_new_star = loglik_new - logz_new
    p_new_cur = loglik_cur - logz_new
    p_old_cur = loglik_cur - logz_old
    p_old_star = loglik_new - logz_old
    log_alpha = (p_new_star + p_new_cur) - (p_old_cur + p_old_star)
    if log_alpha >= 0 or math.log(u) < log_alpha:
        return ChainState(theta_new, path_new, m_new, accepted=True)
    return ChainState(state.theta, state.trajectory, state.m, accepted=False)


# ---------------------------------------------------------------------------
# initialisation and chain driver

def initial_trajectory(model, theta, observations, space, rng, gamma_multiplier=2.0, attempts=8):
    """A path through every observation, for starting the path-based samplers.

    An unconditioned simulation from the first observation seeds the event
    grid; if it wanders outside ``space`` a constant path is used instead.
    One resampling pass then forces the path through the observations.
    """
    t0, t1 = float(observations.times[0]), float(observations.times[-1])
    y0 = observations.states[0]
    if t1 <= t0:
        return Trajectory(y0[None, :], [t0], t0)
    constant = Trajectory(y0[None, :], [t0], t1)
    try:
        current = gillespie(model, theta, y0, t1, rng, t_start=t0, max_jumps=100_000)
        if np.any(space.index(current.states) < 0):
            current = constant
    except (ResourceError, RuntimeError):
        current = constant
    A = build_generator(space, model, theta)
    k = gamma_multiplier
    for _ in range(attempts):
        chain = uniformise(A, k, min_rate=_path_gamma_floor(current, model, theta, k))
        try:
            return ffbs_sample(current, observations, chain, rng)
        except InfeasibleError:
            current, k = constant, 2 * k
    raise InfeasibleError("could not build an initial path through the observations")


@dataclass
class ChainResult:
    chain: int
    samples: np.ndarray
    accepted: np.ndarray
    levels: np.ndarray
    wall_ms: np.ndarray
    iterations: np.ndarray
    acceptance_rate: float
    trajectories: list = field(default_factory=list)
    notes: dict = field(default_factory=dict)

    @property
    def wall_minutes(self):
        return float(self.wall_ms.sum()) / 60000.0


def _fixed_space(config, model, observations, invariant):
    if config.box_upper is not None:
        box = StateBox(tuple(config.box_upper), invariant=invariant)
        if not np.all(box.contains(observations.states)):
            raise InfeasibleError("configured box does not contain every observation")
        return enumerate_box(box)
    return _box(observations, config.box_margin, invariant)


def _draw_prior(model, rng):
    return np.array([rng.gamma(p.shape, 1.0 / p.rate) for p in model.priors])


def run_chain(config, model, observations, chain_index=0):
    """Run one chain; deterministic given ``config.seed`` and ``chain_index``."""
    root = np.random.SeedSequence(config.seed).spawn(max(config.chains, chain_index + 1))[chain_index]
    main_ss, init_ss, interval_ss = root.spawn(3)
    rng = np.random.default_rng(main_ss)
    init_rng = np.random.default_rng(init_ss)
    n_intervals = max(len(observations) - 1, 0)
    interval_rngs = [np.random.default_rng(s) for s in interval_ss.spawn(n_intervals)] if n_intervals else None
    invariant = conservation_invariant(model, observations.states[0])
    schedule = config.schedule
    k = config.gamma_multiplier

    theta0 = np.asarray(config.init_theta, dtype=float) if config.init_theta is not None else _draw_prior(model, init_rng)
    state = ChainState(theta0)
    space = None
    if config.algorithm == "gibbs":
        space = _fixed_space(config, model, observations, invariant)
        state.trajectory = initial_trajectory(model, theta0, observations, space, init_rng, k)
    elif config.algorithm == "trunc-gibbs":
        state.m = int(math.ceil(3 * schedule.expected_terms()))
        state.trajectory = initial_trajectory(model, theta0, observations,
                                              _box(observations, state.m, invariant), init_rng, k)
    else:
        if config.proposal_sd is None:
            raise ValueError("pm-mh needs proposal standard deviations")
        state.log_lik = -math.inf
        for _ in range(100):
            if len(observations) < 2:
                state.log_lik = 0.0
                break
            est = log_likelihood_estimate(observations, model, state.theta, schedule, interval_rngs, invariant)
            state.log_lik = est.log_value
            if est.log_value > -math.inf:
                break
            state.theta = _draw_prior(model, init_rng)
        if state.log_lik == -math.inf:
            raise InfeasibleError("no initial parameter gave a positive likelihood estimate")

    kept_theta, kept_acc, kept_m, kept_ms, kept_it, trajs = [], [], [], [], [], []
    n_acc, notes = 0, {}
    for it in range(config.iterations):
        start = time.perf_counter()
        try:
            if config.algorithm == "gibbs":
                state = gibbs_step_finite(state, observations, space, model, rng, k)
            elif config.algorithm == "trunc-gibbs":
                state = algorithm2_step(state, observations, model, schedule, rng, k, invariant)
            else:
                state = pm_mh_step(state, observations, model, schedule, config.proposal_sd, rng,
                                   interval_rngs, invariant, config.log_proposal)
        except Exception as exc:
            raise RuntimeError(f"chain {chain_index} failed at iteration {it}: {exc}") from exc
        elapsed = (time.perf_counter() - start) * 1000.0
        n_acc += state.accepted
        if state.note:
            notes[state.note] = notes.get(state.note, 0) + 1
        if it >= config.burn_in and (it - config.burn_in) % config.thin == 0:
            kept_theta.append(np.array(state.theta, dtype=float))
            kept_acc.append(state.accepted)
            kept_m.append(-1 if state.m is None else state.m)
            kept_ms.append(elapsed)
            kept_it.append(it)
            if config.keep_trajectories and state.trajectory is not None \
                    and (len(kept_it) - 1) % config.keep_trajectories == 0:
                trajs.append((it, state.trajectory))
    return ChainResult(chain_index, np.array(kept_theta), np.array(kept_acc, dtype=bool),
                       np.array(kept_m, dtype=np.int64), np.array(kept_ms), np.array(kept_it),
                       n_acc / config.iterations, trajs, notes)


def _run_one(args):
    return run_chain(*args)


def run_chains(config, model, observations):
    """Run ``config.chains`` independent chains, in worker processes when ``workers > 1``."""
    jobs = [(config, model, observations, c) for c in range(config.chains)]
    if config.workers > 1 and config.chains > 1:
        with ProcessPoolExecutor(max_workers=min(config.workers, config.chains)) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    return sorted(results, key=lambda r: r.chain)


def pilot_tune(config, model, observations, n_pilot=100, rounds=4, target=(0.2, 0.4)):
    """Scale pm-mh proposal sds over short pilot runs towards the target acceptance band."""
    sd = np.asarray(config.proposal_sd, dtype=float)
    for r in range(rounds):
        cfg = SamplerConfig(**{**config.to_dict(), "proposal_sd": tuple(sd), "iterations": n_pilot,
                               "burn_in": 0, "chains": 1, "seed": config.seed + 7919 * (r + 1)})
        rate = run_chain(cfg, model, observations).acceptance_rate
        if target[0] <= rate <= target[1]:
            break
        sd = sd * (0.5 if rate < target[0] else 1.6)
    return tuple(float(s) for s in sd)
