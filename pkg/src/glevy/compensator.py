"""Compensated pure-jump integrals of step random fields.

A step field is ``K(s, z) = sum_l F_{k,l} psi_l(z)`` for ``s`` in
``(t_k, t_{k+1}]``, where the mark functions ``psi_l`` have disjoint supports
and vanish at the origin and ``F_{k,l}`` depends on the increments observed
up to ``t_k``.  Its compensator is

    J_t(K) = sum_k (t ^ t_{k+1} - t ^ t_k) * max_v sum_l F_{k,l} int psi_l dv

which is exact for atomic measures.  ``sum K(u, dX_u) - J_t(K)`` is a
G-martingale.  It is not symmetric, because the supremum does not commute with
a sign change.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .control_sim import Mesh, StepData, estimate, run
from .model import UncertaintySet, _as_vol
from .payoff import Lin, Payoff, parse
from .policy import constant_policies


@dataclass(frozen=True)
class StepRandomField:
    """Elementary random field on the partition ``times[0] < ... < times[K]``.

    ``F[k][l]`` is a payoff of the observed increments ``Y_1..Y_k`` (variable
    ``i`` is ``X_{t_{i+1}} - X_{t_i}``); ``marks[l]`` is a payoff of the jump
    size.
    """

    times: tuple
    marks: tuple
    F: tuple

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.size < 2 or np.any(np.diff(t) <= 0) or t[0] < 0:
            raise ValueError("partition must be strictly increasing and start at t_0 >= 0")
        if len(self.F) != t.size - 1:
            raise ValueError("need one coefficient row per interval")
        for k, row in enumerate(self.F):
            if len(row) != len(self.marks):
                raise ValueError(f"interval {k}: {len(row)} coefficients for {len(self.marks)} marks")
            for f in row:
                if f.nvars > k:
                    raise ValueError(f"interval {k}: coefficient reads increments beyond t_{k}")
        for psi in self.marks:
            if abs(float(psi(np.zeros(1))[0])) > 0:
                raise ValueError("mark functions must vanish at the origin")
        object.__setattr__(self, "times", tuple(float(s) for s in t))

    @classmethod
    def from_config(cls, cfg: dict) -> "StepRandomField":
        marks = tuple(parse(m) for m in cfg["marks"])
        F = tuple(tuple(parse(f) for f in row) for row in cfg["F"])
        return cls(tuple(cfg["times"]), marks, F)

    @classmethod
    def zero(cls, times=(0.0, 1.0)) -> "StepRandomField":
        return cls(tuple(times), (), tuple(() for _ in range(len(times) - 1)))

    @property
    def n_intervals(self) -> int:
        return len(self.times) - 1

    @property
    def n_marks(self) -> int:
        return len(self.marks)

    def check_disjoint(self, z: np.ndarray):
        """Raise if two mark functions are both nonzero at some atom."""
        if not self.marks or z.size == 0:
            return
        vals = np.stack([psi(z) for psi in self.marks])
        if np.any((vals != 0).sum(axis=0) > 1):
            raise ValueError("mark functions overlap on the jump support")

    def psi_matrix(self, z: np.ndarray) -> np.ndarray:
        """``P[l, j] = psi_l(z_j)``."""
        if not self.marks:
            return np.zeros((0, z.size))
        return np.stack([psi(z) for psi in self.marks])

    def coefficients(self, k: int, Y: np.ndarray) -> np.ndarray:
        """``F_{k, l}`` on rows of observed increments; shape ``(n, L)``."""
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        n = Y.shape[0]
        if not self.marks:
            return np.zeros((n, 0))
        X = Y[:, :k] if k else np.zeros((n, 1))
        return np.column_stack([np.broadcast_to(f.eval(X), (n,)) for f in self.F[k]])

    def scaled(self, c: float) -> "StepRandomField":
        F = tuple(tuple(_scale(f, c) for f in row) for row in self.F)
        return StepRandomField(self.times, self.marks, F)


def _scale(f: Payoff, c: float) -> Payoff:
    return Lin([(c, f)])


def mark_integrals(K: StepRandomField, measures) -> np.ndarray:
    """``I[v, l] = int psi_l dv`` for each measure, summed over its atoms."""
    out = np.zeros((len(measures), K.n_marks))
    for i, m in enumerate(measures):
        z = np.asarray(m.z)[:, 0]
        for l, psi in enumerate(K.marks):
            out[i, l] = float(np.dot(psi(z), m.w))
    return out


def _observed(K: StepRandomField, path) -> np.ndarray:
    """Partition increments of a path given as increments, a state array or a PathSample."""
    if hasattr(path, "X") and hasattr(path, "times"):
        idx = [int(np.argmin(np.abs(path.times - t))) for t in K.times]
        xs = np.asarray(path.X)[idx]
        return np.diff(xs)[None, :]
    return np.atleast_2d(np.asarray(path, dtype=float))


def compensator_value(U: UncertaintySet, K: StepRandomField, t: float, path) -> np.ndarray | float:
    """``J_t(K)`` along one or many paths (rows of partition increments)."""
    Y = _observed(K, path)
    I = mark_integrals(K, U.measures) if not U.jump_free else np.zeros((1, K.n_marks))
    total = np.zeros(Y.shape[0])
    for k in range(K.n_intervals):
        a, b = K.times[k], K.times[k + 1]
        length = min(t, b) - min(t, a)
        if length <= 0 or not K.n_marks:
            continue
        F = K.coefficients(k, Y)
        total = total + length * np.max(F @ I.T, axis=1)
    return float(total[0]) if total.size == 1 else total


def jump_sum(U: UncertaintySet, K: StepRandomField, t: float, path) -> float:
    """``sum_{u <= t} K(u, dX_u)`` from the jump events of a PathSample."""
    if not K.n_marks or not path.jumps:
        return 0.0
    Y = _observed(K, path)
    z = np.asarray(U.support)[:, 0]
    total = 0.0
    for tm, j in path.jumps:
        if tm > t:
            continue
        k = int(np.searchsorted(K.times, tm, side="left")) - 1
        if not 0 <= k < K.n_intervals:
            continue
        F = K.coefficients(k, Y)[0]
        total += float(np.dot(F, [psi(np.array([z[j]]))[0] for psi in K.marks]))
    return total


def compensated_integral(U: UncertaintySet, K: StepRandomField, path, t: float) -> float:
    """``sum_{u <= t} K(u, dX_u) - J_t(K)`` for a simulated path."""
    return jump_sum(U, K, t, path) - compensator_value(U, K, t, path)


@dataclass(frozen=True)
class CoupledSet:
    """Explicit list of ``(measure, volatility)`` pairs that need not be a product.

    Only :func:`verify_ab_identity` accepts this type; it exists to show that
    the identity fails without the product structure.
    """

    pairs: tuple

    @classmethod
    def of(cls, *pairs) -> "CoupledSet":
        return cls(tuple((m, _as_vol(q)) for m, q in pairs))


@dataclass(frozen=True)
class AbResult:
    A: float
    B: float

    @property
    def gap(self) -> float:
        return abs(self.A - self.B)

    def to_dict(self) -> dict:
        return {"A": self.A, "B": self.B, "gap": self.gap}


def verify_ab_identity(U, K: StepRandomField, H, interval: int = 0, observed=()) -> AbResult:
    """Joint versus separate maximisation over the jump and volatility parts.

    ``A = dt * max over pairs (v, q) of [sum_l F_l int psi_l dv + tr(H a_q) / 2]``
    and ``B = dt * (max_v sum_l F_l int psi_l dv + max_q tr(H a_q) / 2)`` on
    the chosen interval, with ``F`` evaluated at the observed increments.
    For a product set the pair list is the full Cartesian product and the two
    coincide.
    """
    dt = K.times[interval + 1] - K.times[interval]
    F = K.coefficients(interval, np.asarray(observed, dtype=float).reshape(1, -1))[0]
    H = np.atleast_2d(np.asarray(H, dtype=float))
    if isinstance(U, CoupledSet):
        measures = [m for m, _ in U.pairs]
        vols = [q for _, q in U.pairs]
        jump = mark_integrals(K, measures) @ F if K.n_marks else np.zeros(len(measures))
        diff = np.array([0.5 * np.trace(H @ q.a) for q in vols])
        A = float(np.max(jump + diff))
        B = float(np.max(jump) + np.max(diff))
    else:
        jump = mark_integrals(K, U.measures) @ F if (K.n_marks and not U.jump_free) else np.zeros(1)
        diff = np.array([0.5 * np.trace(H @ g) for g in U.grams])
        A = float(np.max(jump[:, None] + diff[None, :]))
        B = float(np.max(jump) + np.max(diff))
    return AbResult(A * dt, B * dt)


class CompensatorGreedyPolicy:
    """Picks, on each interval, the measure attaining the compensator's maximum.

    The choice depends on the increments observed at the start of the
    interval, so the policy reads the path history from the simulator.
    """

    needs_history = True

    def __init__(self, U: UncertaintySet, K: StepRandomField, mesh: Mesh, q_index: int = 0):
        self.K, self.mesh, self.q_index = K, mesh, q_index
        self.I = mark_integrals(K, U.measures)
        self.nodes = partition_nodes(K, mesh)

    def validate(self, U):
        if U.jump_free:
            raise ValueError("greedy compensator control needs jumps")

    def select(self, t, x, history):
        k_mesh = int(round((t - self.mesh.t0) / self.mesh.dt))
        k = int(np.searchsorted(self.nodes, k_mesh, side="right")) - 1
        k = min(k, self.K.n_intervals - 1)
        n = x.shape[0]
        q = np.full(n, self.q_index, dtype=np.int64)
        if not self.K.n_marks:
            return np.zeros(n, dtype=np.int64), q
        states = [history[i] for i in self.nodes[: k + 1]]
        Y = np.column_stack([b - a for a, b in zip(states[:-1], states[1:])]) if k else np.zeros((n, 0))
        vals = self.K.coefficients(k, Y) @ self.I.T
        return np.argmax(vals, axis=1).astype(np.int64), q

    @property
    def name(self) -> str:
        return "greedy-compensator"


def partition_nodes(K: StepRandomField, mesh: Mesh) -> np.ndarray:
    """Mesh indices of the partition times; raises when they are not mesh nodes."""
    pos = (np.asarray(K.times) - mesh.t0) / mesh.dt
    idx = np.rint(pos).astype(np.int64)
    if np.any(np.abs(pos - idx) > 1e-7) or idx[-1] > mesh.n_steps or idx[0] < 0:
        raise ValueError("partition times must be nodes of the simulation mesh")
    return idx


class _IncrementConsumer:
    """Per-path increments of ``M`` over each partition interval."""

    def __init__(self, n, U, K, nodes, I, P):
        self.K, self.nodes, self.I, self.P = K, nodes, I, P
        self.node_set = set(int(i) for i in nodes)
        self.states = {}
        self.jumps = np.zeros((n, K.n_intervals, K.n_marks))
        self.n = n

    def step(self, sd: StepData):
        if sd.k in self.node_set:
            self.states[sd.k] = sd.x0
        if sd.k + 1 in self.node_set:
            self.states[sd.k + 1] = sd.x1
        if sd.counts is None or not self.K.n_marks:
            return
        k = int(np.searchsorted(self.nodes, sd.k, side="right")) - 1
        if 0 <= k < self.K.n_intervals:
            self.jumps[:, k, :] += sd.counts @ self.P.T

    def result(self):
        xs = [self.states[int(i)] for i in self.nodes]
        Y = np.column_stack([b - a for a, b in zip(xs[:-1], xs[1:])])
        out = np.zeros((self.n, self.K.n_intervals))
        for k in range(self.K.n_intervals):
            if not self.K.n_marks:
                continue
            F = self.K.coefficients(k, Y)
            dt = self.K.times[k + 1] - self.K.times[k]
            comp = dt * np.max(F @ self.I.T, axis=1)
            out[:, k] = np.sum(F * self.jumps[:, k, :], axis=1) - comp
        return out


def martingale_increments(U: UncertaintySet, K: StepRandomField, policy, n_paths: int, mesh: Mesh,
                          seed: int, threads: int = 1) -> np.ndarray:
    """``M_{t_{k+1}} - M_{t_k}`` per path and interval under ``policy``."""
    nodes = partition_nodes(K, mesh)
    I = mark_integrals(K, U.measures) if not U.jump_free else np.zeros((1, K.n_marks))
    P = K.psi_matrix(np.asarray(U.support)[:, 0]) if not U.jump_free else np.zeros((K.n_marks, 0))
    parts = run(U, policy, mesh, n_paths, seed,
                lambda n: _IncrementConsumer(n, U, K, nodes, I, P), threads=threads)
    return np.concatenate(parts)


@dataclass
class MartingaleReport:
    controls: list
    per_control: dict
    sup_mean: list
    sup_se: list
    passed_super: bool
    passed_sup: bool
    margins: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.passed_super and self.passed_sup

    def to_dict(self) -> dict:
        return {"controls": self.controls, "per_control": self.per_control,
                "sup_mean": self.sup_mean, "sup_se": self.sup_se,
                "supermartingale_ok": self.passed_super, "sup_attained_ok": self.passed_sup,
                "margins": self.margins}


def verify_martingale_mc(U: UncertaintySet, K: StepRandomField, n_paths: int, seed: int,
                         steps_per_interval: int = 1, include_greedy: bool = True,
                         threads: int = 1) -> MartingaleReport:
    """Monte Carlo check that ``M = sum K dN - J(K)`` is a G-martingale.

    Under every control the mean increment over each interval must be at most
    ``3 SE``; the largest mean over the family (constant controls plus the
    greedy compensator control) must lie within ``3 SE`` of zero.
    """
    gaps = np.diff(K.times)
    base = float(np.min(gaps)) / steps_per_interval
    mesh = Mesh.from_dt(K.times[-1] - K.times[0], base, t0=K.times[0])
    if not U.jump_free:
        K.check_disjoint(np.asarray(U.support)[:, 0])
    policies = constant_policies(U)
    if include_greedy and not U.jump_free:
        policies.append(CompensatorGreedyPolicy(U, K, mesh))
    per = {}
    means = np.zeros((len(policies), K.n_intervals))
    ses = np.zeros_like(means)
    super_margin = math.inf
    for p_i, pol in enumerate(policies):
        inc = martingale_increments(U, K, pol, n_paths, mesh, seed, threads)
        rows = []
        for k in range(K.n_intervals):
            e = estimate(inc[:, k], seed)
            means[p_i, k], ses[p_i, k] = e.mean, e.se
            super_margin = min(super_margin, 3.0 * e.se - e.mean)
            rows.append({"mean": e.mean, "se": e.se})
        per[pol.name] = rows
    best = np.argmax(means, axis=0)
    sup_mean = [float(means[best[k], k]) for k in range(K.n_intervals)]
    sup_se = [float(ses[best[k], k]) for k in range(K.n_intervals)]
    sup_margin = min((3.0 * s - abs(m) for m, s in zip(sup_mean, sup_se)), default=0.0)
    ok_super = bool(super_margin >= 0)
    ok_sup = bool(sup_margin >= 0)
    return MartingaleReport([p.name for p in policies], per, sup_mean, sup_se, ok_super, ok_sup,
                            {"supermartingale": float(super_margin), "sup_attained": float(sup_margin)})


__all__ = [
    "AbResult", "CompensatorGreedyPolicy", "CoupledSet", "MartingaleReport", "StepRandomField",
    "compensated_integral", "compensator_value", "jump_sum", "mark_integrals",
    "martingale_increments", "verify_ab_identity", "verify_martingale_mc",
]
