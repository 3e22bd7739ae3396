import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from rankgame.forms import Affine, Call, ClippedLinear, Constant, LinearGenerator, Put, form_from_config, \
    generator_from_config

finite = st.floats(-50, 50)
states = st.integers(1, 3).flatmap(lambda n: arrays(np.float64, st.tuples(st.integers(1, 6), st.just(n)),
                                                    elements=finite))


@given(states, finite)
def test_forms_vectorize_over_points(x, t):
    forms = [Constant(2.0), Affine(tuple([1.0] * x.shape[1]), 0.5, -1.0), Put(1.0), Call(0.5, offset=0.2),
             ClippedLinear(tuple([1.0] * x.shape[1]), 0.0, -1.0, 1.0)]
    for f in forms:
        v = f(t, x)
        assert v.shape == (x.shape[0],)
        for i in range(x.shape[0]):
            assert v[i] == pytest.approx(f(t, x[i:i + 1])[0], abs=1e-12)


@given(states)
def test_put_call_parity_on_top_rank(x):
    k = 0.3
    np.testing.assert_allclose(Call(k)(0.0, x) - Put(k)(0.0, x), x[:, 0] - k, atol=1e-9)


def test_log_state_forms_see_prices():
    x = np.log(np.array([[0.8], [1.25]]))
    np.testing.assert_allclose(Put(1.0, log_state=True)(0.0, x), [0.2, 0.0], atol=1e-15)


def test_time_broadcast():
    x = np.zeros((4, 2))
    assert Affine((1.0, 1.0), time_coef=2.0)(np.full(4, 0.5), x).tolist() == [1.0] * 4


def test_config_catalog():
    assert form_from_config(1.5) == Constant(1.5)
    assert form_from_config({"kind": "put", "strike": 1.0, "weights": [0, 1]}) == Put(1.0, (0.0, 1.0))
    with pytest.raises(ValueError, match="unknown form kind"):
        form_from_config({"kind": "python", "code": "1"})
    with pytest.raises(ValueError, match="length"):
        Affine((1.0,))(0.0, np.zeros((1, 2)))
    gen = generator_from_config({"y_coef": -0.1, "z_coef": [1, 2]})
    assert gen == LinearGenerator(-0.1, (1.0, 2.0))
    assert gen.lipschitz == pytest.approx(np.sqrt(5))
    assert generator_from_config(None) == LinearGenerator()
    with pytest.raises(ValueError):
        generator_from_config({"kind": "quadratic"})


def test_generator_values():
    g = LinearGenerator(2.0, (1.0,), 0.5)
    assert g(0.0, np.zeros((2, 1)), np.array([1.0, 2.0]), np.array([[1.0], [0.0]])).tolist() == [3.5, 4.5]
