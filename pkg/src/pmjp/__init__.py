"""Bayesian inference for population Markov jump processes.

Exact Gibbs sampling on finite state spaces, pseudo-marginal
Metropolis-Hastings with unbiased random-truncation likelihood estimates,
and a truncation-augmented Gibbs sampler for unbounded state spaces.
"""

from .diagnostics import ess, mcse, psrf, relative_error, summarize
from .errors import DimensionError, InfeasibleError, ModelError, ResourceError
from .model import GammaPrior, KineticLaw, Model, Reaction, builtin_model, load_model, parse_model
from .paths import ffbs_sample, log_evidence, path_probability, uniformise
from .roulette import FixedStop, StoppingSchedule, cv_diagnostic, interval_estimate, log_likelihood_estimate
from .samplers import SamplerConfig, run_chain, run_chains
from .ssa import gillespie, observe
from .statespace import StateBox, StateSpace, build_generator, enumerate_box
from .trajectory import ObservationSet, Trajectory, trajectory_log_likelihood
from .transient import f_n, p_n_term, transient_distribution

__version__ = "0.1.0"
