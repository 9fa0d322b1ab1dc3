import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from glevy.errors import ConfigError
from glevy.payoff import Abs, Clip, Const, Gauss, Lin, MinMax, Sq, TerminalFunction, Var, parse

xs = st.floats(-20, 20, allow_nan=False)


@pytest.mark.parametrize("node, x, expected", [
    ({"var": 0}, 1.5, 1.5),
    ({"const": 2.0}, 7.0, 2.0),
    ({"sq": {"var": 0}}, -3.0, 9.0),
    ({"abs": {"var": 0}}, -3.0, 3.0),
    ({"clip": {"var": 0}, "lo": -1, "hi": 1}, 4.0, 1.0),
    ({"lin": [[2.0, {"var": 0}]], "const": 1.0}, 3.0, 7.0),
    ({"min": [{"var": 0}, 0.5]}, 3.0, 0.5),
    ({"max": [{"var": 0}, 0.5]}, 3.0, 3.0),
    ({"gauss": {"var": 0}, "width": 2.0}, 2.0, math.exp(-1.0)),
])
def test_parse_and_eval(node, x, expected):
    p = parse(node)
    assert float(p(np.array([x]))[0]) == pytest.approx(expected)
    assert parse(p.to_json()).to_json() == p.to_json()


@pytest.mark.parametrize("node", [{"nope": 1}, "x", {"clip": {"var": 0}, "lo": "a"},
                                  {"gauss": {"var": 0}, "width": 0.0}])
def test_parse_rejects(node):
    with pytest.raises(ConfigError):
        parse(node)


def test_declared_bounds_and_lipschitz():
    p = Clip(Sq(Var(0)), 0.0, 100.0)
    assert (p.lo, p.hi) == (0.0, 100.0)
    assert p.bound == 100.0
    assert p.lipschitz == pytest.approx(20.0)
    assert not p.smooth


def test_terminal_function_rejects_two_variables():
    with pytest.raises(ConfigError):
        TerminalFunction.from_payoff(Lin([(1.0, Var(0)), (1.0, Var(1))]))


def test_spot_check_detects_wrong_lipschitz():
    tf = TerminalFunction(np.sin, 0.5, 1.0)
    assert not tf.spot_check(np.linspace(-3, 3, 101))
    assert TerminalFunction(np.sin, 1.0, 1.0).spot_check(np.linspace(-3, 3, 101))


trees = st.recursive(
    st.one_of(st.just(Var(0)), st.floats(-3, 3).map(Const)),
    lambda sub: st.one_of(
        sub.map(Abs),
        st.tuples(sub, st.floats(-2, 2)).map(lambda t: Lin([(t[1], t[0])])),
        st.tuples(sub, sub).map(lambda t: MinMax("max", list(t))),
        st.tuples(sub, st.floats(0.2, 3)).map(lambda t: Gauss(t[0], t[1])),
        sub.map(lambda e: Clip(e, -5.0, 5.0)),
    ),
    max_leaves=6,
)


@given(trees, st.lists(xs, min_size=2, max_size=20))
def test_interval_and_lipschitz_bounds_hold(p, pts):
    x = np.sort(np.array(pts))
    v = p.eval(x[:, None])
    assert np.all(v >= p.lo - 1e-9) and np.all(v <= p.hi + 1e-9)
    d = np.diff(x)
    ok = d > 1e-9
    slopes = np.abs(np.diff(v))[ok] / d[ok]
    assert np.all(slopes <= p.lipschitz * (1 + 1e-9) + 1e-9)
