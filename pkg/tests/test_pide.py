import math
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad

from glevy import _kernels_py
from glevy._backend import BACKEND
from glevy.config import RunConfig
from glevy.errors import CflViolation, GridError
from glevy.model import LevyMeasure, UncertaintySet
from glevy.payoff import Abs, Clip, Gauss, Lin, TerminalFunction, Var
from glevy.pide import (Grid, JumpTables, derivatives, greedy_policy, mollify, prepare_terminal,
                        solve_backward, sweep)


def bump_second_moment() -> float:
    k = lambda y: math.exp(-1.0 / (1.0 - y * y))
    return quad(lambda y: y * y * k(y), -1, 1, epsabs=1e-15)[0] / quad(k, -1, 1, epsabs=1e-15)[0]


def reference_scheme(U, grid, u_T, nt, dt):
    """Explicit monotone scheme written point by point."""
    x, dx = grid.x, grid.dx
    u = np.array(u_T, dtype=float)
    s2 = [float(a[0, 0]) for a in U.grams]
    z = [] if U.jump_free else list(U.support[:, 0])
    for _ in range(nt):
        new = u.copy()
        for i in range(x.size):
            left = u[i - 1] if i > 0 else u[i]
            right = u[i + 1] if i < x.size - 1 else u[i]
            lap = (left - 2.0 * u[i] + right) / dx ** 2
            diff = max(0.5 * s * lap for s in s2)
            jump = 0.0
            if z:
                shifted = [np.interp(x[i] + zj, x, u) for zj in z]
                jump = max(sum(w[j] * (shifted[j] - u[i]) for j in range(len(z))) for w in U.weights)
            new[i] = u[i] + dt * (diff + jump)
        u = new
    return u


def small_model():
    ms = [LevyMeasure.atoms((0.6, 1.0), (-0.35, 0.5)), LevyMeasure.atoms((0.6, 0.4), (-0.35, 1.5))]
    return UncertaintySet.build(ms, [0.4, 0.9])


def test_scheme_matches_pointwise_reference():
    U = small_model()
    g = Grid(-3.0, 3.0, 41, 0.2)
    phi = Gauss(Var(0), 0.8)
    u_T = phi(g.x)
    nt, dt = g.steps(U)
    sol = solve_backward(U, TerminalFunction.from_payoff(phi), g)
    np.testing.assert_allclose(sol.u[0], reference_scheme(U, g, u_T, nt, dt), rtol=0, atol=1e-13)


def test_compiled_and_numpy_kernels_agree(two_measure):
    U, g, phi = two_measure
    tables = JumpTables.build(g, U)
    u_T = np.vstack([prepare_terminal(phi, g)(g.x), np.sin(g.x)])
    nt, dt = g.steps(U)
    args = (nt, dt, g.dx, 0.5 * U.grams[:, 0, 0], tables.idx, tables.w0, tables.w1,
            np.ascontiguousarray(U.weights), True)
    ref = _kernels_py.backward_sweep(u_T, *args)
    out = sweep(U, g, tables, u_T, nt, dt, store=True)
    np.testing.assert_array_equal(out, ref)


def test_backend_reported():
    assert BACKEND in ("cython", "numpy")


def test_quadratic_benchmark_closed_form(quadratic):
    # mollified x^2 is x^2 + eps^2 m2, and the scheme is exact on quadratics
    U, g, phi = quadratic
    sol = solve_backward(U, prepare_terminal(phi, g), g)
    expected = 0.5 * 1.0 + (2.0 * g.dx) ** 2 * bump_second_moment()
    assert sol.u00 == pytest.approx(expected, abs=1e-12)
    assert sol.u00 == pytest.approx(0.5, abs=1e-2)  # [DERIVED] x^2 + T max sigma^2


def test_jump_benchmark_closed_form(jump):
    U, g, phi = jump
    sol = solve_backward(U, prepare_terminal(phi, g), g, estimate_tol=True)
    assert sol.u00 == pytest.approx(0.5, abs=1e-7)  # [DERIVED] T * z * w
    assert sol.scheme_tol >= 1e-10


def test_linear_payoff_picks_largest_mean(two_measure):
    U, g, _ = two_measure
    sol = solve_backward(U, TerminalFunction.from_payoff(Var(0)), g)
    # means of the two measures are 0.75 and 1.875; the ghost-cell edge leaks ~2e-6 inward
    assert sol.u00 == pytest.approx(1.875 * g.T, abs=1e-5)


def test_constant_is_preserved(two_measure):
    U, g, _ = two_measure
    sol = solve_backward(U, TerminalFunction.constant(1.7), g)
    assert np.max(np.abs(sol.u - 1.7)) <= 1e-12


def test_cfl_respected(quadratic):
    U, g, phi = quadratic
    sol = solve_backward(U, prepare_terminal(phi, g), g)
    assert sol.cfl <= g.cfl + 1e-12
    assert sol.t.size - 1 == math.ceil(g.T * g.rate(U) / g.cfl - 1e-9)


def test_explicit_nt_violating_cfl(quadratic):
    U, g, _ = quadratic
    bad = Grid(g.x_min, g.x_max, g.nx, g.T, nt=10)
    with pytest.raises(CflViolation):
        bad.steps(U)


def test_domain_too_small_for_jumps(jump):
    U, _, _ = jump
    with pytest.raises(GridError):
        Grid(-0.5, 0.5, 11, 0.1).check_domain(U)


@pytest.mark.parametrize("kw", [dict(nx=2), dict(x_max=-10.0), dict(T=-1.0), dict(cfl=1.5)])
def test_bad_grids(kw):
    base = dict(x_min=-1.0, x_max=1.0, nx=11, T=1.0)
    base.update(kw)
    with pytest.raises(GridError):
        Grid(**base)


def test_mollify_keeps_affine_and_constants():
    x = np.linspace(-2, 2, 9)
    lin = mollify(TerminalFunction(lambda y: 3.0 * y - 1.0, 3.0, 10.0), 0.3)
    np.testing.assert_allclose(lin(x), 3.0 * x - 1.0, atol=1e-13)
    const = mollify(TerminalFunction.constant(2.5), 0.3)
    np.testing.assert_array_equal(const(x), np.full_like(x, 2.5))


def test_prepare_terminal_uses_preferred_width():
    g = Grid(-1.0, 1.0, 21, 1.0)
    tf = TerminalFunction(np.abs, 1.0, 1.0, eps=0.5)
    # mollified |x| at 0 is eps times the bump's first absolute moment; the kink of
    # |y| limits the quadrature to ~1e-4, still far from the 2 dx default (0.067)
    k = lambda y: math.exp(-1.0 / (1.0 - y * y))
    m1 = quad(lambda y: abs(y) * k(y), -1, 1)[0] / quad(k, -1, 1)[0]
    assert float(prepare_terminal(tf, g)(np.array([0.0]))[0]) == pytest.approx(0.5 * m1, abs=1e-3)


def test_derivatives_of_quadratic(quadratic):
    U, g, phi = quadratic
    sol = solve_backward(U, prepare_terminal(phi, g), g)
    du, d2u = derivatives(sol)
    mid = slice(300, 501)
    np.testing.assert_allclose(du[0, mid], 2.0 * sol.x[mid], atol=1e-9)
    np.testing.assert_allclose(d2u[0, mid], 2.0, atol=1e-6)


def test_greedy_policy_on_convex_value(quadratic):
    U, g, phi = quadratic
    sol = solve_backward(U, prepare_terminal(phi, g), g)
    pol = greedy_policy(sol)
    # convex interior: the larger volatility wins
    assert np.all(pol.q_idx[:, 100:701] == 1)
    assert pol.v_idx is None


payoffs = st.builds(
    lambda a, c, w: Clip(Lin([(a, Gauss(Lin([(1.0, Var(0))], -c), w))]), -3.0, 3.0),
    st.floats(-2, 2), st.floats(-1, 1), st.floats(0.3, 2.0))


@given(p=payoffs, bump=st.floats(0.0, 1.0))
def test_scheme_is_monotone(p, bump):
    U = small_model()
    g = Grid(-3.0, 3.0, 61, 0.1)
    lo = TerminalFunction.from_payoff(p)
    hi = TerminalFunction.from_payoff(Lin([(1.0, p), (bump, Gauss(Var(0), 1.0))]))
    u_lo = solve_backward(U, lo, g).u[0]
    u_hi = solve_backward(U, hi, g).u[0]
    assert np.all(u_lo <= u_hi + 1e-13)


@given(p=payoffs, lam=st.floats(0.0, 4.0))
def test_scheme_positively_homogeneous(p, lam):
    U = small_model()
    g = Grid(-3.0, 3.0, 61, 0.1)
    base = solve_backward(U, TerminalFunction.from_payoff(p), g).u[0]
    scaled = solve_backward(U, TerminalFunction.from_payoff(Lin([(lam, p)])), g).u[0]
    np.testing.assert_allclose(scaled, lam * base, rtol=1e-12, atol=1e-12)


@given(p=payoffs)
def test_scheme_bounded_by_terminal(p):
    U = small_model()
    g = Grid(-3.0, 3.0, 61, 0.1)
    tf = TerminalFunction.from_payoff(p)
    u = solve_backward(U, tf, g).u
    v = tf(g.x)
    assert u.min() >= v.min() - 1e-13 and u.max() <= v.max() + 1e-13


def test_pure_python_fallback_selected_by_environment():
    code = ("from glevy import BACKEND; from glevy.config import RunConfig; "
            "from glevy.pide import solve_backward, prepare_terminal; "
            "rc = RunConfig.load('builtin:jump'); U, g, p = rc.model(), rc.grid(), rc.terminal(); "
            "print(BACKEND, repr(solve_backward(U, prepare_terminal(p, g), g).u00))")
    env = dict(os.environ, GLEVY_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True,
                         check=True).stdout.split()
    assert out[0] == "numpy"
    rc = RunConfig.load("builtin:jump")
    U, g, p = rc.model(), rc.grid(), rc.terminal()
    assert float(out[1]) == solve_backward(U, prepare_terminal(p, g), g).u00


def test_grid_refinement_converges(two_measure):
    U, g, _ = two_measure
    tf = TerminalFunction.from_payoff(Clip(Abs(Var(0)), 0.0, 2.0))

    def u00(nx):
        gg = Grid(g.x_min, g.x_max, nx, g.T)
        return solve_backward(U, prepare_terminal(tf, gg), gg).u00

    ref = u00(1601)
    dxs = np.array([12.0 / 50, 12.0 / 100, 12.0 / 200])
    errs = np.array([abs(u00(n + 1) - ref) for n in (50, 100, 200)])
    assert np.all(np.diff(errs) < 0)
    alpha = np.polyfit(np.log(dxs), np.log(errs), 1)[0]
    assert alpha > 0.5
