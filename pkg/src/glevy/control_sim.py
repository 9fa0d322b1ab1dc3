"""Monte Carlo simulation of controlled Ito-Levy integrals.

Under a control ``(v, q)`` that is constant on each mesh step the state moves
by ``sigma_q * sqrt(dt) * N(0, 1)`` plus the jumps of a compound Poisson
process with Levy measure ``v``.  Jumps are produced by thinning the
dominating measure ``c_upper * pi``: proposals arrive at rate
``c_upper * pi(R)``, carry a mark drawn from ``pi / pi(R)`` and are kept with
probability ``v({z_j}) / (c_upper * pi({z_j}))``.  One sampler thereby serves
every measure in the family.

Paths are processed in fixed blocks of :data:`BLOCK` and block ``b`` draws
from ``Philox(SeedSequence([seed, b]))``, so results do not depend on the
number of worker threads.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .model import UncertaintySet
from .payoff import TerminalFunction
from .pide import Grid, greedy_policy, prepare_terminal, solve_backward
from .policy import ConstantPolicy, GridPolicy, constant_policies

BLOCK = 4096


@dataclass(frozen=True)
class Mesh:
    """Uniform simulation mesh on ``[t0, t0 + T]``."""

    T: float
    n_steps: int
    t0: float = 0.0

    def __post_init__(self):
        if self.n_steps < 1 or self.T <= 0:
            raise ValueError("mesh needs T > 0 and at least one step")

    @classmethod
    def from_dt(cls, T: float, dt: float, t0: float = 0.0) -> "Mesh":
        if dt <= 0:
            raise ValueError("mesh dt must be positive")
        return cls(T, max(1, math.ceil(T / dt - 1e-9)), t0)

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps + 1)


@dataclass
class StepData:
    """One mesh step for a block of paths.

    ``counts[p, j]`` is the number of accepted jumps of path ``p`` with mark
    ``support[j]``; ``x0`` and ``x1`` are the states before and after.
    """

    k: int
    t: float
    dt: float
    x0: np.ndarray
    x1: np.ndarray
    q: np.ndarray
    v: np.ndarray | None
    dW: np.ndarray
    dB: np.ndarray
    counts: np.ndarray | None
    jump_times: np.ndarray | None = None
    jump_marks: np.ndarray | None = None
    jump_paths: np.ndarray | None = None


def block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(block)])))


class _Thinner:
    """Proposal and acceptance tables for the dominating measure."""

    def __init__(self, U: UncertaintySet):
        self.jump_free = U.jump_free
        if self.jump_free:
            return
        pi_w = np.asarray(U.reference.w, dtype=float) * U.c_upper
        self.rate = float(pi_w.sum())
        self.marks_p = pi_w / pi_w.sum()
        self.cdf = np.cumsum(self.marks_p)
        self.cdf[-1] = 1.0
        self.accept = np.asarray(U.weights) / pi_w[None, :]
        self.z = np.asarray(U.support)[:, 0]
        self.m = pi_w.size

    def step(self, rng: np.random.Generator, v: np.ndarray, dt: float):
        n = v.shape[0]
        props = rng.poisson(self.rate * dt, size=n)
        total = int(props.sum())
        owner = np.repeat(np.arange(n), props)
        marks = np.searchsorted(self.cdf, rng.random(total), side="right")
        marks = np.minimum(marks, self.m - 1)
        keep = rng.random(total) < self.accept[v[owner], marks]
        offsets = rng.random(total) * dt
        owner, marks, offsets = owner[keep], marks[keep], offsets[keep]
        counts = np.zeros((n, self.m), dtype=np.int64)
        np.add.at(counts, (owner, marks), 1)
        return counts, owner, marks, offsets


def _simulate_block(U, policy, mesh: Mesh, n: int, seed: int, block: int, x0: float, consumer,
                    keep_events: bool = False):
    rng = block_rng(seed, block)
    thin = _Thinner(U)
    sig = np.sqrt(np.asarray(U.sigma_sq, dtype=float))
    z = None if U.jump_free else np.asarray(U.support)[:, 0]
    x = np.full(n, float(x0))
    dt = mesh.dt
    sq = math.sqrt(dt)
    # policies that read the path history get the states at all earlier mesh times
    history = [x] if getattr(policy, "needs_history", False) else None
    for k in range(mesh.n_steps):
        t = mesh.t0 + k * dt
        v, q = policy.select(t, x, history)
        dW = sq * rng.standard_normal(n)
        dB = sig[q] * dW
        counts = None
        ev = (None, None, None)
        x1 = x + dB
        if not thin.jump_free:
            counts, owner, marks, offsets = thin.step(rng, v, dt)
            x1 = x1 + counts @ z
            if keep_events:
                ev = (t + offsets, marks, owner)
        consumer.step(StepData(k, t, dt, x, x1, q, v, dW, dB, counts, *ev))
        x = x1
        if history is not None:
            history.append(x)
    return consumer.result()


def run(U: UncertaintySet, policy, mesh: Mesh, n_paths: int, seed: int, make_consumer,
        x0: float = 0.0, threads: int = 1, keep_events: bool = False) -> list:
    """Simulate ``n_paths`` paths and return per-block consumer results in block order.

    ``make_consumer(n)`` builds an object with ``step(StepData)`` and
    ``result()`` for a block of ``n`` paths.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be positive")
    policy.validate(U)
    sizes = [min(BLOCK, n_paths - s) for s in range(0, n_paths, BLOCK)]

    def job(b):
        return _simulate_block(U, policy, mesh, sizes[b], seed, b, x0, make_consumer(sizes[b]), keep_events)

    if threads > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(job, range(len(sizes))))
    return [job(b) for b in range(len(sizes))]


class TerminalState:
    """Consumer keeping ``X_T`` only."""

    def __init__(self, n):
        self.x = None

    def step(self, sd: StepData):
        self.x = sd.x1

    def result(self):
        return self.x


@dataclass(frozen=True)
class PathSample:
    """One simulated path."""

    times: np.ndarray
    dW: np.ndarray
    dB: np.ndarray
    jumps: tuple
    X: np.ndarray
    seed: int
    index: int


@dataclass
class PathBatch:
    """Simulated paths stored column-wise; ``batch[i]`` gives a :class:`PathSample`."""

    mesh: Mesh
    X: np.ndarray
    dW: np.ndarray
    dB: np.ndarray
    q: np.ndarray
    v: np.ndarray | None
    counts: np.ndarray | None
    events: list
    seed: int
    support: np.ndarray | None = field(default=None, repr=False)

    def __len__(self):
        return self.X.shape[0]

    def __getitem__(self, i: int) -> PathSample:
        jumps = tuple(self.events[i])
        return PathSample(self.mesh.times, self.dW[i], self.dB[i], jumps, self.X[i], self.seed, i)

    @property
    def jump_counts(self) -> np.ndarray:
        if self.counts is None:
            return np.zeros(len(self), dtype=np.int64)
        return self.counts.sum(axis=(1, 2))


class _Recorder:
    def __init__(self, n):
        self.n = n
        self.rows = []

    def step(self, sd: StepData):
        self.rows.append(sd)

    def result(self):
        rows = self.rows
        X = np.column_stack([rows[0].x0] + [r.x1 for r in rows])
        events = [[] for _ in range(self.n)]
        counts = None
        v = None
        if rows[0].counts is not None:
            counts = np.stack([r.counts for r in rows], axis=1)
            v = np.column_stack([r.v for r in rows])
            for r in rows:
                for p, tm, mk in zip(r.jump_paths, r.jump_times, r.jump_marks):
                    events[p].append((float(tm), int(mk)))
        return (X, np.column_stack([r.dW for r in rows]), np.column_stack([r.dB for r in rows]),
                np.column_stack([r.q for r in rows]), v, counts, events)


def sample_paths(U: UncertaintySet, policy, n_paths: int, mesh: Mesh, seed: int,
                 x0: float = 0.0) -> PathBatch:
    """Simulate and keep whole paths (memory grows with ``n_paths * n_steps``).

    Jump events are ``(time, support index)`` pairs; the jump size is
    ``U.support[index]``.
    """
    parts = run(U, policy, mesh, n_paths, seed, _Recorder, x0=x0, keep_events=True)
    X, dW, dB, q, v, counts, events = zip(*parts)
    cat = np.concatenate
    return PathBatch(mesh, cat(X), cat(dW), cat(dB), cat(q),
                     None if v[0] is None else cat(v), None if counts[0] is None else cat(counts),
                     [e for part in events for e in part], seed,
                     None if U.jump_free else np.asarray(U.support))


@dataclass(frozen=True)
class McEstimate:
    mean: float
    se: float
    n_paths: int
    seed: int

    def to_dict(self) -> dict:
        return {"mean": self.mean, "se": self.se, "n_paths": self.n_paths, "seed": self.seed}


def estimate(values: np.ndarray, seed: int) -> McEstimate:
    """Sample mean and standard error; the mean of equal samples is returned exactly."""
    values = np.asarray(values, dtype=float)
    n = values.size
    mean = float(values[0] + np.mean(values - values[0]))
    se = float(np.std(values, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return McEstimate(mean, se, n, seed)


def terminal_states(U, policy, n_paths: int, mesh: Mesh, seed: int, x0: float = 0.0,
                    threads: int = 1) -> np.ndarray:
    return np.concatenate(run(U, policy, mesh, n_paths, seed, TerminalState, x0=x0, threads=threads))


def mc_expect(U: UncertaintySet, policy, phi, n_paths: int, mesh: Mesh, seed: int,
              x0: float = 0.0, threads: int = 1) -> McEstimate:
    """Monte Carlo estimate of ``E[phi(x0 + B_T)]`` under ``policy``."""
    xT = terminal_states(U, policy, n_paths, mesh, seed, x0, threads)
    return estimate(phi(xT), seed)


@dataclass(frozen=True)
class McParams:
    n_paths: int = 100_000
    mesh_dt: float = 0.01
    seed: int = 0
    threads: int = 1

    @classmethod
    def from_config(cls, cfg: dict, seed: int | None = None) -> "McParams":
        cfg = dict(cfg)
        if seed is not None:
            cfg["seed"] = seed
        if "seed" not in cfg:
            raise ValueError("a seed is required for Monte Carlo commands")
        return cls(**cfg)


@dataclass
class PolicyResult:
    name: str
    estimate: McEstimate
    violation: float

    def to_dict(self) -> dict:
        return {"policy": self.name, **self.estimate.to_dict(), "violation": self.violation}


@dataclass
class DualityReport:
    """Per-policy lower bounds against the PDE value."""

    pde_value: float
    scheme_tol: float
    results: list
    greedy: McEstimate
    greedy_gap: float

    @property
    def max_violation(self) -> float:
        return max(r.violation for r in self.results)

    def to_dict(self) -> dict:
        return {"pde_value": self.pde_value, "scheme_tol": self.scheme_tol,
                "policies": [r.to_dict() for r in self.results],
                "greedy": self.greedy.to_dict(), "greedy_relative_gap": self.greedy_gap,
                "max_violation": self.max_violation}


def duality_gap(U: UncertaintySet, phi: TerminalFunction, grid: Grid, policies=None,
                mc: McParams = McParams(), solution=None) -> DualityReport:
    """Compare Monte Carlo values of each policy with the PDE value at the origin.

    ``violation = mc_mean - pde_value - 3 SE - scheme_tol`` must be nonpositive
    for every policy.  The greedy feedback policy read off the solution is
    reported separately through its relative gap.
    """
    if solution is None:
        solution = solve_backward(U, prepare_terminal(phi, grid), grid, estimate_tol=True)
    pde = solution.u00
    tol = solution.scheme_tol or 0.0
    policies = constant_policies(U) if policies is None else list(policies)
    mesh = Mesh.from_dt(grid.T, mc.mesh_dt)
    out = []
    for pol in policies:
        est = mc_expect(U, pol, phi, mc.n_paths, mesh, mc.seed, threads=mc.threads)
        out.append(PolicyResult(pol.name, est, est.mean - pde - 3.0 * est.se - tol))
    greedy = greedy_policy(solution)
    g = mc_expect(U, greedy, phi, mc.n_paths, mesh, mc.seed, threads=mc.threads)
    out.append(PolicyResult(greedy.name, g, g.mean - pde - 3.0 * g.se - tol))
    gap = (pde - g.mean) / max(1.0, abs(pde))
    return DualityReport(pde, tol, out, g, gap)


__all__ = [
    "BLOCK", "ConstantPolicy", "DualityReport", "GridPolicy", "McEstimate", "McParams", "Mesh",
    "PathBatch", "PathSample", "StepData", "duality_gap", "estimate", "mc_expect", "run",
    "sample_paths", "terminal_states",
]
