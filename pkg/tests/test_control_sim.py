import numpy as np
import pytest

from glevy.control_sim import (BLOCK, McParams, Mesh, block_rng, duality_gap, estimate, mc_expect,
                               sample_paths, terminal_states)
from glevy.payoff import TerminalFunction
from glevy.policy import ConstantPolicy, constant_policies

SEED = 12345


def test_threads_do_not_change_results(two_measure):
    U, _, phi = two_measure
    mesh = Mesh.from_dt(0.25, 0.05)
    pol = ConstantPolicy(1, 1)
    a = terminal_states(U, pol, 3 * BLOCK + 7, mesh, SEED, threads=1)
    b = terminal_states(U, pol, 3 * BLOCK + 7, mesh, SEED, threads=4)
    np.testing.assert_array_equal(a, b)


def test_blocks_are_prefix_stable(two_measure):
    U, _, _ = two_measure
    mesh = Mesh.from_dt(0.25, 0.05)
    pol = ConstantPolicy(0, 0)
    short = terminal_states(U, pol, BLOCK, mesh, SEED)
    long = terminal_states(U, pol, 2 * BLOCK, mesh, SEED)
    np.testing.assert_array_equal(short, long[:BLOCK])


def test_block_streams_differ():
    assert block_rng(1, 0).random() != block_rng(1, 1).random()


@pytest.mark.parametrize("v", [0, 1])
def test_jump_counts_are_poisson(two_measure, v):
    U, _, _ = two_measure
    mesh = Mesh(1.0, 4)
    batch = sample_paths(U, ConstantPolicy(v, 0), 20000, mesh, SEED)
    n = batch.jump_counts
    lam = U.masses[v]
    assert abs(n.mean() - lam) <= 4.0 * np.sqrt(lam / n.size)
    assert abs(n.var() - lam) <= 0.1 * lam


def test_thinned_mark_frequencies(two_measure):
    U, _, _ = two_measure
    batch = sample_paths(U, ConstantPolicy(0, 0), 20000, Mesh(1.0, 2), SEED)
    marks = np.array([j for ev in batch.events for _, j in ev])
    # measure 0 puts 0.5 on -0.5 (support index 0) and 1.0 on 1.0
    frac = np.mean(marks == 0)
    assert abs(frac - 1.0 / 3.0) <= 4.0 * np.sqrt(frac * (1 - frac) / marks.size)


def test_brownian_variance(quadratic):
    U, _, _ = quadratic
    xT = terminal_states(U, ConstantPolicy(None, 1), 40000, Mesh(0.5, 5), SEED)
    assert abs(np.mean(xT ** 2) - 0.5) <= 4.0 * np.std(xT ** 2) / np.sqrt(xT.size)


def test_path_batch_consistency(two_measure):
    U, _, _ = two_measure
    mesh = Mesh.from_dt(0.25, 0.05)
    batch = sample_paths(U, ConstantPolicy(1, 1), 50, mesh, SEED, x0=0.3)
    assert len(batch) == 50
    np.testing.assert_array_equal(batch.X[:, 0], 0.3)
    jumps = np.einsum("nkj,j->nk", batch.counts, U.support[:, 0])
    np.testing.assert_allclose(np.diff(batch.X, axis=1), batch.dB + jumps, atol=1e-14)
    p = batch[3]
    assert p.index == 3 and p.seed == SEED
    assert len(p.jumps) == batch.jump_counts[3]


def test_mc_expect_matches_sample_paths(two_measure):
    U, _, phi = two_measure
    mesh = Mesh.from_dt(0.25, 0.05)
    pol = ConstantPolicy(0, 1)
    est = mc_expect(U, pol, phi, 500, mesh, SEED)
    batch = sample_paths(U, pol, 500, mesh, SEED)
    assert est.mean == pytest.approx(np.mean(phi(batch.X[:, -1])), abs=1e-14)


def test_estimate_of_constant_sample_is_exact():
    e = estimate(np.full(10, 0.1), 0)
    assert e.mean == 0.1 and e.se == 0.0


@pytest.mark.parametrize("T, n", [(0.0, 5), (1.0, 0)])
def test_bad_mesh(T, n):
    with pytest.raises(ValueError):
        Mesh(T, n)


def test_policy_validation(two_measure):
    U, _, _ = two_measure
    with pytest.raises(ValueError):
        terminal_states(U, ConstantPolicy(None, 0), 10, Mesh(1.0, 2), SEED)
    assert len(constant_policies(U)) == 4


def test_duality_small(jump):
    U, g, phi = jump
    rep = duality_gap(U, phi, g, mc=McParams(20000, 0.05, SEED))
    assert rep.max_violation <= 0.0
    assert rep.greedy_gap <= 0.05
    # one measure and no diffusion: the constant control is the greedy control
    assert rep.results[0].estimate.mean == rep.greedy.mean


@pytest.mark.parametrize("q, value", [(0, 0.125), (1, 0.5)])
def test_constant_vol_closed_forms(quadratic, q, value):
    U, _, phi = quadratic
    est = mc_expect(U, ConstantPolicy(None, q), phi, 40000, Mesh.from_dt(0.5, 0.05), SEED)
    assert abs(est.mean - value) <= 3.0 * est.se
