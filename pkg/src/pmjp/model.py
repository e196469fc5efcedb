"""Population Markov jump process models.

A model is a list of species and a list of reaction channels.  Every
channel carries an integer update vector and a kinetic law of the form
``theta[i] * rho(n)``, where ``rho`` is drawn from a small closed grammar:
numeric or named constants, species counts and their integer powers,
falling factorials ``ff(X, k)``, and ``exp`` of a linear form in the
counts.  Models are immutable and hashable so that state-space structures
can be cached against them.

Model files hold one declaration per line::

    # SIR with a closed population
    species S
    species I
    species R
    reaction infect: S:-1 I:+1 @ theta[0] * S * I
    reaction recover: I:-1 R:+1 @ theta[1] * I
    prior theta[0] ~ Gamma(2, 40)
    prior theta[1] ~ Gamma(2, 4)
    init S=10 I=5 R=0
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DimensionError, ModelError


class Species(NamedTuple):
    name: str
    index: int


# ---------------------------------------------------------------------------
# kinetic-law grammar

@dataclass(frozen=True)
class Const:
    value: float
    label: str | None = None

    def evaluate(self, states):
        return np.full(states.shape[0], self.value, dtype=float)

    def to_text(self, names):
        return self.label if self.label is not None else _fmt(self.value)


@dataclass(frozen=True)
class Count:
    species: int
    power: int = 1

    def evaluate(self, states):
        x = states[:, self.species].astype(float)
        return x if self.power == 1 else x ** self.power

    def to_text(self, names):
        name = names[self.species]
        return name if self.power == 1 else f"{name}^{self.power}"


@dataclass(frozen=True)
class Falling:
    """Falling factorial X (X-1) ... (X-k+1); zero whenever X < k."""

    species: int
    k: int

    def evaluate(self, states):
        x = states[:, self.species].astype(float)
        out = np.ones_like(x)
        for j in range(self.k):
            out *= np.maximum(x - j, 0.0)
        return out

    def to_text(self, names):
        return f"ff({names[self.species]}, {self.k})"


@dataclass(frozen=True)
class ExpLinear:
    """exp(c0 + sum_j c_j X_j); ``terms`` holds (coefficient, label, species)."""

    terms: tuple

    def evaluate(self, states):
        z = np.zeros(states.shape[0])
        for coef, _, species in self.terms:
            z = z + (coef if species is None else coef * states[:, species])
        return np.exp(z)

    def to_text(self, names):
        parts = []
        for coef, label, species in self.terms:
            c = label if label is not None else _fmt(coef)
            parts.append(c if species is None else f"{c}*{names[species]}")
        return "exp(" + " + ".join(parts) + ")"


@dataclass(frozen=True)
class KineticLaw:
    """Product of factors giving the dimensionless count function rho."""

    factors: tuple = ()

    def evaluate(self, states):
        states = np.asarray(states)
        single = states.ndim == 1
        states = np.atleast_2d(states)
        out = np.ones(states.shape[0])
        for f in self.factors:
            out = out * f.evaluate(states)
        return float(out[0]) if single else out

    def to_text(self, names):
        if not self.factors:
            return "1"
        return " * ".join(f.to_text(names) for f in self.factors)

    def species_used(self):
        used = set()
        for f in self.factors:
            if isinstance(f, ExpLinear):
                used.update(s for _, _, s in f.terms if s is not None)
            elif not isinstance(f, Const):
                used.add(f.species)
        return used


def _fmt(x):
    return repr(float(x)) if not float(x).is_integer() else str(int(x))


_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*)|(?P<op>\*\*|[*^(),+\-]))"
)


def _tokenize(text):
    pos, out = 0, []
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            raise ModelError(f"unexpected character {text[pos:].strip()[:1]!r} in expression")
        pos = m.end()
        kind = m.lastgroup
        out.append((kind, m.group(kind)))
    return out


class _LawParser:
    def __init__(self, text, species, constants):
        self.tokens = _tokenize(text)
        self.i = 0
        self.species = species
        self.constants = constants

    def peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else (None, None)

    def take(self, value=None):
        tok = self.peek()
        if tok[0] is None or (value is not None and tok[1] != value):
            raise ModelError(f"expected {value or 'token'}, got {tok[1]!r}")
        self.i += 1
        return tok

    def parse(self):
        factors = self.product()
        if self.peek()[0] is not None:
            raise ModelError(f"unexpected token {self.peek()[1]!r}")
        # a bare "1" is the empty product
        factors = tuple(f for f in factors if not (isinstance(f, Const) and f.value == 1 and f.label is None))
        return KineticLaw(factors)

    def product(self):
        factors = list(self.factor())
        while self.peek()[1] == "*":
            self.take("*")
            factors.extend(self.factor())
        return factors

    def integer(self):
        kind, val = self.take()
        if kind != "num" or not float(val).is_integer():
            raise ModelError(f"expected a non-negative integer, got {val!r}")
        return int(float(val))

    def factor(self):
        kind, val = self.take()
        if kind == "num":
            return [Const(float(val))]
        if val == "(":
            inner = self.product()
            self.take(")")
            return inner
        if kind != "name":
            raise ModelError(f"unexpected token {val!r}")
        if val == "ff":
            self.take("(")
            sp = self.species_ref(self.take()[1])
            self.take(",")
            k = self.integer()
            self.take(")")
            return [Falling(sp, k)]
        if val == "exp":
            self.take("(")
            terms = self.linear()
            self.take(")")
            return [ExpLinear(terms)]
        if val in self.constants:
            c = self.constants[val]
            if c < 0:
                raise ModelError(f"constant {val} is negative inside a product")
            return [Const(c, val)]
        sp = self.species_ref(val)
        power = 1
        if self.peek()[1] in ("^", "**"):
            self.take()
            power = self.integer()
        return [Count(sp, power)]

    def species_ref(self, name):
        if name not in self.species:
            raise ModelError(f"unknown species {name!r}")
        return self.species[name]

    def linear(self):
        terms = []
        sign = 1.0
        if self.peek()[1] == "-":
            self.take()
            sign = -1.0
        while True:
            coef, label, sp = sign, None if sign > 0 else "-1", None
            parts = [self.take()]
            while self.peek()[1] == "*":
                self.take("*")
                parts.append(self.take())
            labels = []
            for kind, val in parts:
                if kind == "num":
                    coef *= float(val)
                    labels.append(val)
                elif val in self.constants:
                    coef *= self.constants[val]
                    labels.append(val)
                elif kind == "name" and sp is None:
                    sp = self.species_ref(val)
                else:
                    raise ModelError(f"exp() takes a linear form, got {val!r}")
            if labels:
                label = ("-" if sign < 0 else "") + "*".join(labels)
            elif sign > 0:
                label = None
            terms.append((coef, label, sp))
            nxt = self.peek()[1]
            if nxt not in ("+", "-"):
                return tuple(terms)
            self.take()
            sign = 1.0 if nxt == "+" else -1.0
            if self.peek()[1] == "-":
                self.take()
                sign = -sign


def parse_law(text, species_names, constants=None):
    """Parse a rho expression such as ``"X * Y"`` or ``"G1on * exp(r*P2)"``."""
    index = {n: i for i, n in enumerate(species_names)}
    return _LawParser(text, index, dict(constants or {})).parse()


# ---------------------------------------------------------------------------
# model types

@dataclass(frozen=True)
class GammaPrior:
    shape: float
    rate: float

    def __post_init__(self):
        for v in (self.shape, self.rate):
            if not (math.isfinite(v) and v > 0):
                raise ModelError(f"Gamma prior needs positive finite shape and rate, got ({self.shape}, {self.rate})")

    @property
    def mean(self):
        return self.shape / self.rate

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = (self.shape * math.log(self.rate) - math.lgamma(self.shape)
                   + (self.shape - 1) * np.log(x) - self.rate * x)
        return np.where(x > 0, out, -np.inf)


@dataclass(frozen=True)
class Reaction:
    name: str
    update: tuple
    law: KineticLaw
    parameter_index: int


@dataclass(frozen=True)
class Model:
    species: tuple
    reactions: tuple
    priors: tuple
    constants: tuple = ()
    init: tuple | None = None
    name: str = "model"
    default_theta: tuple | None = field(default=None, compare=False)

    def __post_init__(self):
        names = [s.name for s in self.species]
        if len(set(names)) != len(names):
            raise ModelError("species names must be unique")
        if [s.index for s in self.species] != list(range(len(names))):
            raise ModelError("species indices must be contiguous from 0")
        if not self.reactions:
            raise ModelError("model has no reactions")
        seen = {}
        for r in self.reactions:
            if len(r.update) != len(names):
                raise ModelError(f"reaction {r.name}: update has wrong length")
            if not any(r.update):
                raise ModelError(f"reaction {r.name}: update vector is zero")
            if r.update in seen:
                raise ModelError(f"reactions {seen[r.update]} and {r.name} share an update vector")
            seen[r.update] = r.name
            if not 0 <= r.parameter_index < len(self.priors):
                raise ModelError(f"reaction {r.name}: theta[{r.parameter_index}] has no prior")
            if any(s >= len(names) for s in r.law.species_used()):
                raise ModelError(f"reaction {r.name}: law references an unknown species")
        if self.init is not None and len(self.init) != len(names):
            raise ModelError("init state has wrong length")

    @property
    def n_species(self):
        return len(self.species)

    @property
    def n_reactions(self):
        return len(self.reactions)

    @property
    def n_params(self):
        return len(self.priors)

    @property
    def species_names(self):
        return tuple(s.name for s in self.species)

    @property
    def stoichiometry(self):
        return np.array([r.update for r in self.reactions], dtype=np.int64)

    @property
    def param_of_reaction(self):
        return np.array([r.parameter_index for r in self.reactions], dtype=np.int64)

    def rho(self, states):
        """Matrix of rho_i(n) with shape (n_states, n_reactions)."""
        states = np.atleast_2d(np.asarray(states))
        if states.shape[1] != self.n_species:
            raise DimensionError(f"state has {states.shape[1]} components, model has {self.n_species} species")
        return np.column_stack([r.law.evaluate(states) for r in self.reactions])

    def propensities(self, states, theta):
        theta = np.asarray(theta, dtype=float)
        return self.rho(states) * theta[self.param_of_reaction]

    def exit_rate(self, state, theta):
        return float(self.propensities(state, theta).sum())

    def reaction_for_update(self, delta):
        """Index of the reaction whose update equals ``delta``, or -1."""
        return self._update_index.get(tuple(int(d) for d in delta), -1)

    @property
    def _update_index(self):
        cache = self.__dict__.get("_upd")
        if cache is None:
            cache = {r.update: i for i, r in enumerate(self.reactions)}
            object.__setattr__(self, "_upd", cache)
        return cache

    def conservation_weights(self):
        """All-ones vector if every reaction preserves the total count, else None."""
        if np.all(self.stoichiometry.sum(axis=1) == 0):
            return (1,) * self.n_species
        return None

    def log_prior(self, theta):
        return float(sum(p.logpdf(t) for p, t in zip(self.priors, theta)))

    def to_text(self):
        names = self.species_names
        lines = [f"# model {self.name}"]
        lines += [f"species {n}" for n in names]
        lines += [f"const {k} = {_fmt(v)}" for k, v in self.constants]
        for r in self.reactions:
            upd = " ".join(f"{names[j]}:{d:+d}" for j, d in enumerate(r.update) if d)
            law = r.law.to_text(names)
            rhs = f"theta[{r.parameter_index}]" + ("" if law == "1" else f" * {law}")
            lines.append(f"reaction {r.name}: {upd} @ {rhs}")
        lines += [f"prior theta[{i}] ~ Gamma({_fmt(p.shape)}, {_fmt(p.rate)})" for i, p in enumerate(self.priors)]
        if self.init is not None:
            lines.append("init " + " ".join(f"{n}={c}" for n, c in zip(names, self.init)))
        return "\n".join(lines) + "\n"


def evaluate_propensity(reaction, state, theta):
    """Rate theta * rho(state) of a single reaction at one state."""
    if theta <= 0:
        raise ValueError("theta must be positive")
    state = np.asarray(state)
    if state.ndim != 1:
        raise DimensionError("state must be a vector")
    if reaction.law.species_used() and max(reaction.law.species_used()) >= state.shape[0]:
        raise DimensionError("state is shorter than the species referenced by the law")
    if len(reaction.update) != state.shape[0]:
        raise DimensionError(f"state has {state.shape[0]} components, reaction expects {len(reaction.update)}")
    rho = reaction.law.evaluate(state)
    return 0.0 if rho == 0 else theta * rho


def exit_rate(model, state, theta):
    return model.exit_rate(state, theta)


# ---------------------------------------------------------------------------
# model file format

_REACTION = re.compile(r"^reaction\s+([A-Za-z_][\w]*)\s*:\s*(.*?)\s*@\s*theta\[(\d+)\]\s*(?:\*\s*(.+))?$")
_PRIOR = re.compile(r"^prior\s+theta\[(\d+)\]\s*~\s*Gamma\(\s*([^,]+?)\s*,\s*([^)]+?)\s*\)$")
_CONST = re.compile(r"^const\s+([A-Za-z_]\w*)\s*=\s*(\S+)$")


def parse_model(text, name="model"):
    """Parse model-file text into a :class:`Model`."""
    species, constants, raw_reactions, priors, init = [], {}, [], {}, None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        keyword = line.split(None, 1)[0]
        try:
            if keyword == "species":
                parts = line.split()
                if len(parts) != 2 or not re.fullmatch(r"[A-Za-z_]\w*", parts[1]):
                    raise ModelError("expected 'species <name>'")
                if parts[1] in ("ff", "exp", "theta"):
                    raise ModelError(f"{parts[1]!r} is reserved")
                species.append(parts[1])
            elif keyword == "const":
                m = _CONST.match(line)
                if not m:
                    raise ModelError("expected 'const <name> = <value>'")
                constants[m.group(1)] = float(m.group(2))
            elif keyword == "reaction":
                m = _REACTION.match(line)
                if not m:
                    raise ModelError("expected 'reaction <name>: <updates> @ theta[<i>] * <expression>'")
                raw_reactions.append((lineno, m.groups()))
            elif keyword == "prior":
                m = _PRIOR.match(line)
                if not m:
                    raise ModelError("expected 'prior theta[<i>] ~ Gamma(<shape>, <rate>)'")
                i = int(m.group(1))
                if i in priors:
                    raise ModelError(f"duplicate prior for theta[{i}]")
                priors[i] = GammaPrior(float(m.group(2)), float(m.group(3)))
            elif keyword == "init":
                init = {}
                for item in line.split()[1:]:
                    k, _, v = item.partition("=")
                    if not v.lstrip("-").isdigit():
                        raise ModelError(f"bad init entry {item!r}")
                    init[k] = int(v)
            else:
                raise ModelError(f"unknown declaration {keyword!r}")
        except ModelError as exc:
            if exc.line is None:
                raise ModelError(str(exc), lineno) from None
            raise
        except ValueError as exc:
            raise ModelError(str(exc), lineno) from None

    index = {n: i for i, n in enumerate(species)}
    reactions = []
    for lineno, (rname, upd_text, pidx, law_text) in raw_reactions:
        try:
            update = [0] * len(species)
            for item in upd_text.split():
                sp, _, delta = item.partition(":")
                if sp not in index:
                    raise ModelError(f"unknown species {sp!r}")
                update[index[sp]] += int(delta)
            law = parse_law(law_text or "1", species, constants)
        except ModelError as exc:
            raise ModelError(str(exc), lineno) from None
        except ValueError as exc:
            raise ModelError(str(exc), lineno) from None
        reactions.append(Reaction(rname, tuple(update), law, int(pidx)))

    if priors and sorted(priors) != list(range(len(priors))):
        raise ModelError("priors must cover theta[0..n-1] without gaps")
    init_vec = None
    if init is not None:
        unknown = set(init) - set(index)
        if unknown:
            raise ModelError(f"init refers to unknown species {sorted(unknown)}")
        if any(v < 0 for v in init.values()):
            raise ModelError("init counts must be non-negative")
        init_vec = tuple(init.get(n, 0) for n in species)
    return Model(
        species=tuple(Species(n, i) for i, n in enumerate(species)),
        reactions=tuple(reactions),
        priors=tuple(priors[i] for i in range(len(priors))),
        constants=tuple(constants.items()),
        init=init_vec,
        name=name,
    )


# ---------------------------------------------------------------------------
# built-in benchmark models
#
# Priors and default parameter values below are this package's choices; the
# models' structure and initial states follow the benchmark definitions.

_BUILTIN = {
    "lv": ("""
species X
species Y
reaction pred_birth: X:+1 @ theta[0] * X * Y
reaction pred_death: X:-1 @ theta[1] * X
reaction prey_birth: Y:+1 @ theta[2] * Y
reaction prey_death: Y:-1 @ theta[3] * X * Y
prior theta[0] ~ Gamma(2, 100)
prior theta[1] ~ Gamma(2, 4)
prior theta[2] ~ Gamma(2, 4)
prior theta[3] ~ Gamma(2, 100)
init X=7 Y=20
""", (0.02, 0.5, 0.5, 0.025)),
    "sir-finite": ("""
species S
species I
species R
reaction infect: S:-1 I:+1 @ theta[0] * S * I
reaction recover: I:-1 R:+1 @ theta[1] * I
prior theta[0] ~ Gamma(2, 40)
prior theta[1] ~ Gamma(2, 4)
init S=10 I=5 R=0
""", (0.05, 0.4)),
    "sir-infinite": ("""
species S
species I
species R
reaction infect: S:-1 I:+1 @ theta[0] * S * I
reaction recover: I:-1 R:+1 @ theta[1] * I
reaction arrive: S:+1 @ theta[2]
prior theta[0] ~ Gamma(2, 40)
prior theta[1] ~ Gamma(2, 4)
prior theta[2] ~ Gamma(2, 1)
init S=10 I=5 R=0
""", (0.05, 0.4, 2.0)),
    "toggle": ("""
species G1on
species G1off
species G2on
species G2off
species P1
species P2
const r = 0.1
reaction express1: P1:+1 @ theta[0] * G1on
reaction express2: P2:+1 @ theta[1] * G2on
reaction degrade1: P1:-1 @ theta[2] * P1
reaction degrade2: P2:-1 @ theta[3] * P2
reaction activate1: G1off:-1 G1on:+1 @ theta[4] * G1off
reaction activate2: G2off:-1 G2on:+1 @ theta[5] * G2off
reaction repress1: G1on:-1 G1off:+1 @ theta[6] * G1on * exp(r*P2)
reaction repress2: G2on:-1 G2off:+1 @ theta[7] * G2on * exp(r*P1)
prior theta[0] ~ Gamma(2, 0.5)
prior theta[1] ~ Gamma(2, 0.5)
prior theta[2] ~ Gamma(2, 10)
prior theta[3] ~ Gamma(2, 10)
prior theta[4] ~ Gamma(2, 20)
prior theta[5] ~ Gamma(2, 20)
prior theta[6] ~ Gamma(2, 40)
prior theta[7] ~ Gamma(2, 40)
init G1on=1 G1off=0 G2on=0 G2off=1 P1=10 P2=0
""", (4.0, 4.0, 0.2, 0.2, 0.1, 0.1, 0.05, 0.05)),
    "birth-death": ("""
species X
reaction birth: X:+1 @ theta[0]
reaction death: X:-1 @ theta[1] * X
prior theta[0] ~ Gamma(2, 0.02)
prior theta[1] ~ Gamma(2, 2)
init X=10
""", (150.0, 1.0)),
}

BUILTIN_NAMES = tuple(_BUILTIN)


def builtin_model(name):
    """Return one of the benchmark models: lv, sir-finite, sir-infinite, toggle, birth-death."""
    try:
        text, theta = _BUILTIN[name]
    except KeyError:
        raise ModelError(f"unknown built-in model {name!r}; choose from {', '.join(_BUILTIN)}") from None
    model = parse_model(text, name=name)
    return Model(model.species, model.reactions, model.priors, model.constants,
                 model.init, name, default_theta=theta)


def load_model(ref):
    """Load a model from a built-in name or a model-file path."""
    if ref in _BUILTIN:
        return builtin_model(ref)
    path = Path(ref)
    return parse_model(path.read_text(encoding="utf-8"), name=path.stem)


def with_priors(model, priors: Sequence[GammaPrior]):
    return Model(model.species, model.reactions, tuple(priors), model.constants,
                 model.init, model.name, model.default_theta)
