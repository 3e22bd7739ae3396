import numpy as np
import pytest
from hypothesis import given, strategies as st

from rankgame.forms import Constant, LinearGenerator
from rankgame.model import (ModelParams, OutsideWedgeError, ProblemSpec, UnknownProblemError, builtin_problems,
                            check_in_wedge, lookup, validate_params, validate_problem)


def _params(sig2, n=None):
    sig = tuple(np.sqrt(sig2))
    return ModelParams(len(sig), sig, (0.0,) * len(sig), 1.0)


def test_concavity_examples():
    assert validate_params(_params([1, 1, 1]))["concavity"].passed
    assert validate_params(_params([1, 4, 1]))["concavity"].passed
    c = validate_params(_params([4, 1, 4]))["concavity"]
    assert not c.passed and c.witness == 1 and c.margin == pytest.approx(-3.0)


def test_report_has_one_entry_per_invariant_and_never_raises():
    rep = validate_params(ModelParams(2, (0.0, 1.0), (0.0, 0.0), -1.0))
    assert [c.name for c in rep.checks] == ["n_positive", "sigma_positive", "concavity", "horizon_positive"]
    assert not rep["sigma_positive"].passed and rep["sigma_positive"].witness == 1
    assert not rep["horizon_positive"].passed
    assert "FAIL" in str(rep)


@given(st.lists(st.floats(0.1, 3.0), min_size=3, max_size=6))
def test_concavity_matches_definition(sig):
    sig2 = np.square(sig)
    expect = all(sig2[i + 1] >= 0.5 * (sig2[i] + sig2[i + 2]) for i in range(len(sig) - 2))
    assert validate_params(_params(sig2))["concavity"].passed == expect


def test_mismatched_lengths_raise():
    with pytest.raises(ValueError):
        ModelParams(2, (1.0,), (0.0, 0.0), 1.0)


def _spec(g, lo=0.0, up=1.0, gen=LinearGenerator(), c=1.0):
    return ProblemSpec(gen, Constant(g), Constant(lo), Constant(up), c)


PTS = np.array([[0.5], [0.0], [-1.0], [2.0]])
P1 = ModelParams(1, (1.0,), (0.0,), 1.0)


def test_problem_constants_pass():
    assert validate_problem(_spec(0.5), P1, PTS).passed


def test_problem_terminal_above_upper_fails_with_witness():
    rep = validate_problem(_spec(2.0), P1, PTS)
    c = rep["terminal_sandwich"]
    assert not c.passed and c.margin == pytest.approx(-1.0) and "x" in c.witness


def test_problem_lipschitz_quotient():
    rep = validate_problem(_spec(0.5, gen=LinearGenerator(y_coef=2.0)), P1, PTS)
    c = rep["generator_lipschitz"]
    assert not c.passed
    assert c.witness["quotient"] == pytest.approx(2.0, rel=1e-9)


def test_problem_rejects_points_outside_wedge():
    with pytest.raises(OutsideWedgeError):
        validate_problem(_spec(0.5), ModelParams(2, (1, 1), (0, 0), 1), [[0.0, 1.0]])
    with pytest.raises(OutsideWedgeError):
        check_in_wedge([[1.0, 2.0]])


def test_fixtures():
    cs = lookup("constant-sandwich").spec
    x = np.zeros((3, 1))
    assert cs.lower(0.3, x).tolist() == [0.0] * 3 and cs.upper(0.3, x).tolist() == [2.0] * 3
    assert cs.g(x).tolist() == [1.0] * 3
    gp = lookup("game-put-1d")
    K, pen = gp.notes["strike"], gp.notes["penalty"]
    x = np.array([[0.5], [1.0], [1.5]])
    np.testing.assert_allclose(gp.spec.lower(0.1, x), np.maximum(K - x[:, 0], 0))
    np.testing.assert_allclose(gp.spec.upper(0.1, x), np.maximum(K - x[:, 0], 0) + pen)
    np.testing.assert_allclose(gp.spec.g(x), gp.spec.lower(gp.params.horizon_T, x))
    with pytest.raises(UnknownProblemError) as err:
        lookup("nonexistent")
    for name in builtin_problems():
        assert name in str(err.value)


@pytest.mark.parametrize("name", sorted(builtin_problems()))
def test_every_fixture_satisfies_standing_assumptions(name):
    fx = lookup(name)
    rng = np.random.default_rng(0)
    pts = -np.sort(-(np.asarray(fx.x0) + rng.normal(size=(200, fx.params.n))), axis=1)
    assert validate_params(fx.params).passed
    assert validate_problem(fx.spec, fx.params, pts).passed
