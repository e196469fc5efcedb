import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pmjp.errors import DimensionError, ModelError
from pmjp.model import (BUILTIN_NAMES, GammaPrior, builtin_model, evaluate_propensity, exit_rate,
                        load_model, parse_law, parse_model)

SIR_TEXT = """
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


def test_lv_predation_rate():
    lv = builtin_model("lv")
    prey_death = lv.reactions[3]
    assert evaluate_propensity(prey_death, np.array([7, 20]), 0.01) == pytest.approx(1.4, abs=1e-12)


def test_zero_factor_gives_exact_zero():
    lv = builtin_model("lv")
    assert evaluate_propensity(lv.reactions[0], np.array([0, 20]), 0.3) == 0.0
    assert evaluate_propensity(lv.reactions[0], np.array([4, 0]), 0.3) == 0.0


def test_toggle_exponential_law_at_zero():
    tog = builtin_model("toggle")
    repress1 = next(r for r in tog.reactions if r.name == "repress1")
    state = np.zeros(6, dtype=int)
    state[tog.species_names.index("G1on")] = 1
    assert evaluate_propensity(repress1, state, 0.07) == pytest.approx(0.07, rel=1e-15)


def test_dimension_mismatch():
    lv = builtin_model("lv")
    with pytest.raises(DimensionError):
        evaluate_propensity(lv.reactions[0], np.array([1, 2, 3]), 1.0)
    with pytest.raises(DimensionError):
        exit_rate(lv, np.array([1, 2, 3]), np.ones(4))


def test_exit_rate_lv_sum_of_monomials():
    lv = builtin_model("lv")
    th = np.array([0.3, 0.7, 1.1, 0.13])
    expected = th[0] * 140 + th[1] * 7 + th[2] * 20 + th[3] * 140
    assert exit_rate(lv, np.array([7, 20]), th) == pytest.approx(expected, rel=1e-14)


def test_exit_rate_single_reaction_and_absorbing():
    bd = builtin_model("birth-death")
    one = parse_model("species X\nreaction d: X:-1 @ theta[0] * X\nprior theta[0] ~ Gamma(1,1)")
    assert exit_rate(one, np.array([4]), [0.5]) == evaluate_propensity(one.reactions[0], np.array([4]), 0.5)
    assert exit_rate(one, np.array([0]), [0.5]) == 0.0
    assert exit_rate(bd, np.array([0]), [3.0, 1.0]) == pytest.approx(3.0)


def test_parse_sir():
    m = parse_model(SIR_TEXT)
    assert m.n_species == 3 and m.n_reactions == 2
    assert m.init == (10, 5, 0)
    assert m.stoichiometry.tolist() == [[-1, 1, 0], [0, -1, 1]]


@pytest.mark.parametrize("text, fragment", [
    ("species X\nprior theta[0] ~ Gamma(1,1)", "no reactions"),
    ("species X\nreaction a: X:+1 @ theta[0]\nreaction b: X:+1 @ theta[1] * X\n"
     "prior theta[0] ~ Gamma(1,1)\nprior theta[1] ~ Gamma(1,1)", "share an update"),
    ("species X\nreaction a: Y:+1 @ theta[0]\nprior theta[0] ~ Gamma(1,1)", "unknown species"),
    ("species X\nreaction a: X:+1 @ theta[0] * Z\nprior theta[0] ~ Gamma(1,1)", "Z"),
    ("species X\nreaction a: X:+1 @ theta[0]\nprior theta[0] ~ Gamma(0,1)", "positive"),
    ("species X\nreaction a: X:+1 @ theta[0]\nprior theta[0] ~ Gamma(1,-2)", "positive"),
    ("species X\nreaction a: X:+1 @ theta[1]\nprior theta[0] ~ Gamma(1,1)", r"theta\[1\] has no prior"),
    ("species X\nreaction a: X:0 @ theta[0]\nprior theta[0] ~ Gamma(1,1)", "zero"),
])
def test_parse_errors(text, fragment):
    with pytest.raises(ModelError, match=fragment):
        parse_model(text)


def test_syntax_error_reports_line():
    with pytest.raises(ModelError, match="line 3"):
        parse_model("species X\n\nreaction oops X:+1 theta[0]\n")


def test_reserved_and_unknown_declarations():
    with pytest.raises(ModelError, match="line 1"):
        parse_model("speciez X")
    with pytest.raises(ModelError):
        parse_model("species exp")


def test_builtins_shape():
    lv = builtin_model("lv")
    assert (lv.n_species, lv.n_reactions, lv.init) == (2, 4, (7, 20))
    tog = builtin_model("toggle")
    assert tog.n_reactions == 8
    assert any("exp(" in r.law.to_text(tog.species_names) for r in tog.reactions)
    bd = builtin_model("birth-death")
    assert (bd.n_species, bd.init, bd.default_theta[0]) == (1, (10,), 150.0)
    assert bd.rho(np.array([[4]])).tolist() == [[1.0, 4.0]]
    sir = builtin_model("sir-finite")
    assert sir.init == (10, 5, 0)
    with pytest.raises(ModelError):
        builtin_model("nope")


def test_toggle_degradation_uses_own_protein():
    tog = builtin_model("toggle")
    names = tog.species_names
    d2 = next(r for r in tog.reactions if r.name == "degrade2")
    assert d2.law.species_used() == {names.index("P2")}


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_round_trip_idempotent(name):
    m = builtin_model(name)
    once = parse_model(m.to_text(), name=name)
    twice = parse_model(once.to_text(), name=name)
    assert once.to_text() == twice.to_text()
    assert once.stoichiometry.tolist() == m.stoichiometry.tolist()
    grid = np.array(np.meshgrid(*[np.arange(0, 6)] * m.n_species)).reshape(m.n_species, -1).T
    np.testing.assert_allclose(once.rho(grid), m.rho(grid), rtol=1e-14)


def test_load_model_from_file(tmp_path):
    p = tmp_path / "sir.model"
    p.write_text(SIR_TEXT)
    m = load_model(str(p))
    assert m.name == "sir" and m.n_params == 2
    assert load_model("lv").name == "lv"


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_propensities_nonnegative_and_sum(name):
    m = builtin_model(name)
    rng = np.random.default_rng(1)
    states = rng.integers(0, 21, size=(300, m.n_species))
    if name == "toggle":
        states[:, :4] = rng.integers(0, 2, size=(300, 4))
    theta = rng.gamma(2.0, 1.0, size=m.n_params)
    props = m.propensities(states, theta)
    assert np.all(props >= 0)
    for s, row in zip(states[:20], props[:20]):
        brute = sum(evaluate_propensity(r, s, theta[r.parameter_index]) for r in m.reactions)
        assert exit_rate(m, s, theta) == pytest.approx(brute, rel=1e-13)
        assert row.sum() == pytest.approx(brute, rel=1e-13)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 30), min_size=2, max_size=2), st.floats(1e-3, 1e3))
def test_homogeneous_in_theta(state, theta):
    lv = builtin_model("lv")
    for r in lv.reactions:
        one = evaluate_propensity(r, np.array(state), theta)
        two = evaluate_propensity(r, np.array(state), 2 * theta)
        assert two == 2 * one


def test_law_grammar():
    names = ["A", "B"]
    law = parse_law("A^2 * ff(B,2) * exp(0.5*A - 0.25*B + 1)", names)
    s = np.array([3, 4])
    expected = 9 * (4 * 3) * math.exp(0.5 * 3 - 0.25 * 4 + 1)
    assert law.evaluate(s) == pytest.approx(expected, rel=1e-14)
    again = parse_law(law.to_text(names), names)
    assert again.evaluate(s) == pytest.approx(expected, rel=1e-14)
    assert parse_law("ff(A,3)", names).evaluate(np.array([2, 0])) == 0.0
    with pytest.raises(ModelError):
        parse_law("A +", names)


def test_gamma_prior():
    p = GammaPrior(3.0, 2.0)
    assert p.mean == pytest.approx(1.5)
    from scipy.stats import gamma
    assert p.logpdf(0.7) == pytest.approx(gamma(3.0, scale=0.5).logpdf(0.7), rel=1e-12)
    assert p.logpdf(-1.0) == -math.inf
    with pytest.raises((ModelError, ValueError)):
        GammaPrior(1.0, math.inf)
