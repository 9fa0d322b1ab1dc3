import math

import numpy as np
import pytest

from glevy.compensator import (CompensatorGreedyPolicy, CoupledSet, StepRandomField,
                               compensated_integral, compensator_value, jump_sum, mark_integrals,
                               martingale_increments, verify_ab_identity, verify_martingale_mc)
from glevy.config import TWO_MEASURE
from glevy.control_sim import Mesh, sample_paths
from glevy.model import LevyMeasure, UncertaintySet
from glevy.payoff import Clip, Const, Gauss, Var
from glevy.policy import ConstantPolicy

SEED = 777


@pytest.fixture(scope="module")
def field():
    return StepRandomField.from_config(TWO_MEASURE["field"])


def test_mark_integrals(two_measure, field):
    U, _, _ = two_measure
    np.testing.assert_allclose(mark_integrals(field, U.measures), [[0.75], [1.875]])


@pytest.mark.parametrize("t, y1, expected", [
    (0.25, 0.4, -0.1875),
    (0.5, 0.4, -0.375),
    (1.0, 0.4, -0.375 + 0.5 * 0.75),
    (1.0, -0.4, -0.375 + 0.5 * -0.3),
    (1.0, 3.0, -0.375 + 0.5 * 1.875),
])
def test_compensator_hand_values(two_measure, field, t, y1, expected):
    # interval 0: F = -1 picks the smaller mean 0.75; interval 1: F = clip(Y_1) picks by sign
    U, _, _ = two_measure
    assert compensator_value(U, field, t, [[y1, 0.0]]) == pytest.approx(expected, abs=1e-15)


def test_compensated_integral_on_a_path(two_measure, field):
    U, _, _ = two_measure
    mesh = Mesh.from_dt(1.0, 0.05)
    batch = sample_paths(U, ConstantPolicy(1, 0), 40, mesh, SEED)
    for i in range(len(batch)):
        p = batch[i]
        y1 = p.X[10] - p.X[0]
        coef = [-1.0, float(np.clip(y1, -1, 1))]
        z = U.support[:, 0]
        expected_sum = sum(coef[0 if tm <= 0.5 else 1] * z[j] for tm, j in p.jumps)
        assert jump_sum(U, field, 1.0, p) == pytest.approx(expected_sum, abs=1e-12)
        assert compensated_integral(U, field, p, 1.0) == pytest.approx(
            expected_sum - compensator_value(U, field, 1.0, p), abs=1e-12)


def test_ab_identity_on_product_set(two_measure, field):
    U, _, _ = two_measure
    for H in (-2.0, 0.0, 1.5):
        for y in (-0.7, 0.2):
            assert verify_ab_identity(U, field, [[H]], interval=1, observed=[y]).gap <= 1e-15


def test_coupled_counterexample():
    dt = 0.25
    cs = CoupledSet.of((LevyMeasure.atoms((1.0, 1.0)), 1.0), (LevyMeasure.atoms((1.0, 2.0)), 0.5))
    K = StepRandomField((0.0, dt), (Var(0),), ((Const(1.0),),))
    ab = verify_ab_identity(cs, K, [[1.0]])
    # pairs give 1 + 0.5 and 2 + 0.125; separately 2 + 0.5
    assert ab.A == pytest.approx(2.125 * dt, abs=1e-15)
    assert ab.B - ab.A == pytest.approx(0.375 * dt, abs=1e-15)


@pytest.mark.parametrize("kwargs", [
    dict(times=(0.0,), marks=(), F=()),
    dict(times=(0.5, 0.2), marks=(), F=((),)),
    dict(times=(0.0, 1.0), marks=(Var(0),), F=((Var(0),),)),
    dict(times=(0.0, 1.0), marks=(Gauss(Var(0)),), F=((Const(1.0),),)),
    dict(times=(0.0, 1.0), marks=(Var(0),), F=((Const(1.0), Const(2.0)),)),
])
def test_bad_step_fields(kwargs):
    with pytest.raises(ValueError):
        StepRandomField(**kwargs)


def test_overlapping_marks_rejected(two_measure):
    U, _, _ = two_measure
    K = StepRandomField((0.0, 1.0), (Var(0), Clip(Var(0), 0.0, 5.0)), ((Const(1.0), Const(1.0)),))
    with pytest.raises(ValueError):
        verify_martingale_mc(U, K, 100, SEED)


def test_zero_field_has_zero_increments(two_measure):
    U, _, _ = two_measure
    K = StepRandomField.zero((0.0, 0.5, 1.0))
    inc = martingale_increments(U, K, ConstantPolicy(0, 0), 100, Mesh(1.0, 2), SEED)
    assert np.all(inc == 0.0)


def test_greedy_compensator_choice(two_measure, field):
    U, _, _ = two_measure
    mesh = Mesh.from_dt(1.0, 0.05)
    pol = CompensatorGreedyPolicy(U, field, mesh)
    x = np.array([0.0, 0.0])
    hist = [np.zeros(2)] * 11 + [np.array([0.5, -0.5])]
    v, _ = pol.select(0.0, x, hist[:1])
    assert np.all(v == 0)   # F = -1 prefers the smaller mean
    v, _ = pol.select(0.55, x, [np.zeros(2)] * 10 + [np.array([0.5, -0.5])] * 2)
    assert v.tolist() == [1, 0]


def test_martingale_check_small(two_measure, field):
    U, _, _ = two_measure
    rep = verify_martingale_mc(U, field, 8192, SEED)
    assert rep.passed
    assert math.isfinite(rep.margins["supermartingale"])


def test_single_measure_exact_compensation(jump):
    U, _, _ = jump
    K = StepRandomField((0.0, 0.25), (Var(0),), ((Const(1.0),),))
    inc = martingale_increments(U, K, ConstantPolicy(0, 0), 20000, Mesh(0.25, 5), SEED)[:, 0]
    # compound Poisson mean 2 * 1 * 0.25 cancels the compensator
    assert abs(inc.mean()) <= 3.0 * inc.std() / np.sqrt(inc.size)
    assert compensator_value(U, K, 0.25, [[0.0]]) == 0.5
