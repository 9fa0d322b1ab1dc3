import numpy as np
import pytest
from hypothesis import given, strategies as st

from glevy.errors import AtomAtOrigin, DegenerateDensityRatio, EmptyFamily, ModelError
from glevy.model import (LevyMeasure, UncertaintySet, VolatilityMatrix, lk_bound,
                         nondegeneracy_report, validate_ellipticity, validate_levy_family)


def test_two_measure_density_bounds(two_measure):
    U, _, _ = two_measure
    # envelope of (1, 0.5) and (2, 0.25) on atoms (-0.5, 1) after sorting
    assert U.c_upper == 1.0
    assert U.c_lower == 0.5
    np.testing.assert_array_equal(U.reference.w, [0.5, 2.0])
    np.testing.assert_array_equal(U.support[:, 0], [-0.5, 1.0])
    np.testing.assert_allclose(U.masses, [1.5, 2.25])
    assert U.lambda_max == 2.25


def test_lk_bound_hand_value(two_measure):
    U, _, _ = two_measure
    # max(1 + 0.25, 2 + 0.125) + max sigma^2 = 2.125 + 1
    assert lk_bound(U) == pytest.approx(3.125, abs=1e-15)


def test_jump_free_mode(quadratic):
    U, _, _ = quadratic
    assert U.jump_free
    assert U.reference is None
    assert U.weights.shape == (0, 0)
    rep = nondegeneracy_report(U)
    assert rep.density_ratio_ok is None
    assert rep.ellipticity_ok is None


@pytest.mark.parametrize("measures, exc", [
    ([], EmptyFamily),
    ([LevyMeasure.atoms((1.0, 1.0)), LevyMeasure.atoms((2.0, 1.0))], DegenerateDensityRatio),
])
def test_bad_levy_families(measures, exc):
    with pytest.raises(exc):
        validate_levy_family(measures)


def test_atom_at_origin_rejected():
    with pytest.raises(AtomAtOrigin):
        LevyMeasure.atoms((0.0, 1.0))


@pytest.mark.parametrize("w", [0.0, -1.0, np.inf])
def test_bad_weights_rejected(w):
    with pytest.raises(ModelError):
        LevyMeasure.atoms((1.0, w))


def test_empty_volatility_family():
    with pytest.raises(EmptyFamily):
        UncertaintySet.build([], [])


def test_lambda_max_too_small():
    with pytest.raises(ModelError):
        UncertaintySet.build([LevyMeasure.atoms((1.0, 3.0))], [1.0], lambda_max=2.0)


@pytest.mark.parametrize("vols, s2, ok", [
    ([0.5, 1.0], 0.125, True),
    ([0.5, 1.0], 0.2, False),
    ([1.0], 0.5, True),
])
def test_ellipticity_one_dimensional(vols, s2, ok):
    rep = validate_ellipticity([VolatilityMatrix.scalar(v) for v in vols], s2)
    assert rep.ellipticity_ok is ok
    assert rep.worst_margin == pytest.approx(0.5 * min(vols) ** 2 - s2)
    assert ("ellipticity" in rep.witnesses) is (not ok)


def test_ellipticity_two_dimensional_identity():
    rep = validate_ellipticity([VolatilityMatrix(np.eye(2))], 0.5, trials=200)
    assert rep.ellipticity_ok
    assert rep.worst_margin == pytest.approx(0.0, abs=1e-12)


def test_density_ratio_report(two_measure):
    U, _, _ = two_measure
    rep = nondegeneracy_report(U)
    assert rep.density_ratio_ok is True
    assert rep.ellipticity_ok is True


@given(st.data())
def test_envelope_bounds_every_measure(data):
    m = data.draw(st.integers(1, 4))
    rows = data.draw(st.lists(st.lists(st.floats(0.05, 5.0), min_size=m, max_size=m),
                              min_size=1, max_size=4))
    z = np.array([1.0, -1.0, 0.5, 2.0])[:m]
    ms = [LevyMeasure(z[:, None], r) for r in rows]
    pi, c_lo, c_hi = validate_levy_family(ms)
    order = np.argsort(z)
    for meas in ms:
        ratio = np.asarray(meas.w)[order] / pi.w
        assert np.all(ratio <= c_hi + 1e-12)
        assert np.all(ratio >= c_lo - 1e-12)
    assert 0 < c_lo <= c_hi == 1.0
