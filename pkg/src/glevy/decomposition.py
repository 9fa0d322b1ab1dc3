"""Martingale decomposition of ``M_t = E[xi | F_t]`` and its norm estimates.

On each PDE step ``[t_k, t_{k+1})`` the fields are read off layer ``k + 1``::

    H      = Du                                  (central differences)
    Kc_rate = G^c(D2u)                           (the scheme's second difference)
    Kd(z)  = u(x + z) - u(x)

so that along a path

    xi - E[xi] = sum H dB - K^c_T + sum Kd(jumps) - J_T(Kd) + residual

with ``dK^c = Kc_rate dt - D2u d<B> / 2`` and ``d<B> = sigma^2 dt`` for the
active volatility.  Because ``G^c`` is a maximum, ``K^c`` never decreases.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .control_sim import Mesh, McParams, StepData, estimate, run
from .cylinder import CylinderFunctional, terminal_of
from .errors import InvalidExponent, NonPositiveDensityRatio
from .model import UncertaintySet
from .payoff import TerminalFunction
from .pide import (Grid, GridSolution, JumpTables, gc_field, gd_field, gradient, greedy_policy,
                   jump_differences, prepare_terminal, scheme_laplacian, solve_backward)
from .policy import constant_policies


@dataclass
class DecompositionTriple:
    """Fields ``(H, Kc_rate, Kd)`` on the PDE grid, row ``k`` used on ``[t_k, t_{k+1})``.

    ``lap`` is the second difference the scheme used, ``Gd`` the maximised
    jump term ``max_v sum_j v_j Kd_j`` that compensates ``Kd``.
    """

    solution: GridSolution
    xi: TerminalFunction
    H: np.ndarray
    lap: np.ndarray
    Kc_rate: np.ndarray
    Kd: np.ndarray | None
    Gd: np.ndarray
    z: np.ndarray

    @property
    def t(self) -> np.ndarray:
        return self.solution.t

    @property
    def x(self) -> np.ndarray:
        return self.solution.x

    @property
    def value(self) -> float:
        return self.solution.u00

    @property
    def packed(self) -> np.ndarray:
        """``(u_k, H, lap, Kc_rate, Gd)`` stacked per step, shape ``(nt, nx, 5)``."""
        if getattr(self, "_packed", None) is None:
            self._packed = np.ascontiguousarray(np.stack(
                [self.solution.u[:-1], self.H, self.lap, self.Kc_rate, self.Gd], axis=2))
        return self._packed

    def csv_rows(self):
        """Rows ``(t, x, H, Kc_rate)`` for export."""
        t, x = self.t[:-1], self.x
        T, X = np.meshgrid(t, x, indexing="ij")
        return np.column_stack([T.ravel(), X.ravel(), self.H.ravel(), self.Kc_rate.ravel()])

    def csv_jump_rows(self):
        """Rows ``(t, x, z, Kd)``."""
        if self.Kd is None:
            return np.zeros((0, 4))
        t, x = self.t[:-1], self.x
        T, Z, X = np.meshgrid(t, self.z, x, indexing="ij")
        return np.column_stack([T.ravel(), X.ravel(), Z.ravel(), self.Kd.ravel()])


def _as_terminal(xi) -> tuple[TerminalFunction, float | None]:
    if isinstance(xi, TerminalFunction):
        return xi, None
    if isinstance(xi, CylinderFunctional):
        if xi.n != 1:
            raise NotImplementedError("decomposition is implemented for single-time functionals")
        return terminal_of(xi), xi.times[0]
    raise TypeError(f"cannot decompose {type(xi).__name__}")


def decompose(U: UncertaintySet, xi, grid: Grid, solution: GridSolution | None = None) -> DecompositionTriple:
    """Extract ``(H, K^c, K^d)`` from the backward solution of ``xi``.

    ``xi`` is a terminal function (horizon ``grid.T``) or an ``n = 1``
    cylinder functional; Lipschitz-only data is mollified first.
    """
    phi, horizon = _as_terminal(xi)
    if solution is None:
        solution = solve_backward(U, prepare_terminal(phi, grid), grid, horizon=horizon, estimate_tol=True)
    layers = solution.u[1:]
    dx = grid.dx
    H = gradient(layers, dx)
    lap = scheme_laplacian(layers, dx)
    kc = gc_field(U, lap)
    if U.jump_free:
        Kd, Gd, z = None, np.zeros_like(layers), np.zeros(0)
    else:
        tables = solution.tables or JumpTables.build(grid, U)
        Kd = jump_differences(layers, tables)
        Gd = gd_field(U, Kd)
        z = np.asarray(U.support)[:, 0]
    return DecompositionTriple(solution, phi, H, lap, kc, Kd, Gd, z)


def _locate(x: np.ndarray, grid_x: np.ndarray):
    dx = grid_x[1] - grid_x[0]
    pos = np.clip((x - grid_x[0]) / dx, 0.0, grid_x.size - 1.0)
    i0 = np.minimum(pos.astype(np.int64), grid_x.size - 2)
    return i0, pos - i0


def _at(field_row: np.ndarray, i0, th):
    return field_row[..., i0] * (1.0 - th) + field_row[..., i0 + 1] * th


class _PathStats:
    """Per-path residual and norm accumulators for one or more triples.

    Every triple must share the PDE time grid with the simulation mesh.
    """

    def __init__(self, n, U, triples, raw_terminals, pi_w):
        self.U, self.tr, self.raw, self.pi_w = U, triples, raw_terminals, pi_w
        self.half_a = 0.5 * np.asarray(U.grams)[:, 0, 0]
        nt_ = len(triples)
        self.n = n
        self.stoch = np.zeros((nt_, n))      # sum H dB - K^c + jump martingale
        self.kc = np.zeros((nt_, n))
        self.kc_sup = np.zeros((nt_, n))
        self.kc_min = np.full(nt_, np.inf)
        self.h2_b = np.zeros((nt_, n))
        self.h2 = np.zeros((nt_, n))
        self.kd2 = np.zeros((nt_, n))
        self.m_sup = np.zeros((nt_, n))
        self.pairs = [(0, 1)] if nt_ == 2 else []
        self.diff = {key: np.zeros((4, n)) for key in self.pairs}   # H^2 d<B>, Kc sup, Kd^2, M sup
        self.diff_kc = {key: np.zeros(n) for key in self.pairs}
        self.xT = None

    def step(self, sd: StepData):
        k = sd.k
        first = self.tr[0]
        i0, th = _locate(sd.x0, first.x)
        sig2 = 2.0 * self.half_a[sd.q]
        dbq = sig2 * sd.dt
        ms = []
        i1, th1 = _locate(sd.x1, first.x)
        for a, tr in enumerate(self.tr):
            row = tr.packed[k]
            u_now, H, lap, rate, gd = (row[i0] * (1.0 - th)[:, None] + row[i0 + 1] * th[:, None]).T
            if k == 0:
                self.m_sup[a] = np.maximum(self.m_sup[a], u_now * u_now)
            dkc = rate * sd.dt - 0.5 * lap * dbq
            self.kc_min[a] = min(self.kc_min[a], float(dkc.min()))
            kd = None
            if tr.Kd is not None:
                kd = _at(tr.Kd[k], i0, th)                       # (m, n)
                self.stoch[a] += np.sum(sd.counts.T * kd, axis=0) - gd * sd.dt
                self.kd2[a] += (self.pi_w[:, None] * kd * kd).sum(axis=0) * sd.dt
            self.stoch[a] += H * sd.dB - dkc
            self.kc[a] += dkc
            self.kc_sup[a] = np.maximum(self.kc_sup[a], np.abs(self.kc[a]))
            h2 = H * H
            self.h2_b[a] += h2 * dbq
            self.h2[a] += h2 * sd.dt
            u_next = _at(tr.solution.u[k + 1], i1, th1)
            self.m_sup[a] = np.maximum(self.m_sup[a], u_next * u_next)
            ms.append((u_now, u_next, H, dkc, kd))
        for a, b in self.pairs:
            A, B = ms[a], ms[b]
            dH = A[2] - B[2]
            d = self.diff[(a, b)]
            d[0] += dH * dH * dbq
            self.diff_kc[(a, b)] += A[3] - B[3]
            d[1] = np.maximum(d[1], np.abs(self.diff_kc[(a, b)]))
            if A[4] is not None:
                dk = A[4] - B[4]
                d[2] += (self.pi_w[:, None] * dk * dk).sum(axis=0) * sd.dt
            d[3] = np.maximum(d[3], np.maximum((A[0] - B[0]) ** 2, (A[1] - B[1]) ** 2))
        self.xT = sd.x1

    def result(self):
        out = {"residual": [], "xi": [], "kc_min": self.kc_min.copy()}
        for a, tr in enumerate(self.tr):
            xi = self.raw[a](self.xT)
            out["residual"].append(xi - tr.value - self.stoch[a])
            out["xi"].append(xi)
        out.update(kc_T=self.kc, kc_sup=self.kc_sup, h2_b=self.h2_b, h2=self.h2, kd2=self.kd2,
                   m_sup=self.m_sup, diff=self.diff)
        return out


def _policies(U: UncertaintySet, triple: DecompositionTriple, greedy: bool = True):
    pols = constant_policies(U)
    if greedy:
        pols.append(greedy_policy(triple.solution))
    return pols


def _simulate(U, triples, raws, policy, n_paths, seed, threads=1):
    sol = triples[0].solution
    mesh = Mesh(float(sol.t[-1] - sol.t[0]), sol.t.size - 1, t0=float(sol.t[0]))
    pi_w = np.zeros(0) if U.jump_free else np.asarray(U.reference.w, dtype=float)
    parts = run(U, policy, mesh, n_paths, seed, lambda n: _PathStats(n, U, triples, raws, pi_w),
                threads=threads)
    merged = {}
    for key in ("residual", "xi"):
        merged[key] = [np.concatenate([p[key][a] for p in parts]) for a in range(len(triples))]
    merged["kc_min"] = np.min([p["kc_min"] for p in parts], axis=0)
    for key in ("kc_T", "kc_sup", "h2_b", "h2", "kd2", "m_sup"):
        merged[key] = np.concatenate([p[key] for p in parts], axis=1)
    merged["diff"] = {pair: np.concatenate([p["diff"][pair] for p in parts], axis=1)
                      for pair in parts[0]["diff"]}
    return merged


@dataclass
class ResidualStats:
    policy: str
    rms: float
    max_abs: float
    mean: float
    kc_min_increment: float
    n_paths: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def residual(U: UncertaintySet, triple: DecompositionTriple, policy, n_paths: int, seed: int,
             threads: int = 1) -> ResidualStats:
    """Pathwise residual of the decomposition under ``policy`` on the PDE time mesh."""
    s = _simulate(U, [triple], [triple.xi], policy, n_paths, seed, threads)
    r = s["residual"][0]
    return ResidualStats(policy.name, float(np.sqrt(np.mean(r * r))), float(np.max(np.abs(r))),
                         float(np.mean(r)), float(s["kc_min"][0]), n_paths)


@dataclass(frozen=True)
class AprioriConstants:
    C1: float
    C2: float
    C3: float
    delta: float
    eps: float

    @property
    def C(self) -> float:
        return self.C1 + self.C2 + self.C3

    def to_dict(self) -> dict:
        return {"C1": self.C1, "C2": self.C2, "C3": self.C3, "C": self.C, "delta": self.delta, "eps": self.eps}


def apriori_constants(c_lower: float, c_upper: float, T: float) -> AprioriConstants:
    """Explicit constants of the a-priori estimate.

    ``C1 = 10 [1 + 8 c_up^2 (17T + 5)(3T + 1) / c_lo^2]`` with
    ``delta = c_lo / (2 c_up)`` and ``eps = c_lo / (20 c_up (3T + 1))``;
    ``C3 = 1 + 1/eps + 4T/delta + eps C1`` bounds the ``H`` term and
    ``C2 = 2 C3 / c_lo`` the jump term.
    """
    if not c_lower > 0:
        raise NonPositiveDensityRatio(f"c_lower = {c_lower} must be positive")
    if c_upper < c_lower:
        raise NonPositiveDensityRatio("c_upper must be at least c_lower")
    if T < 0:
        raise ValueError("negative horizon")
    ratio2 = (c_upper / c_lower) ** 2
    C1 = 10.0 * (1.0 + 8.0 * ratio2 * (17.0 * T + 5.0) * (3.0 * T + 1.0))
    delta = c_lower / (2.0 * c_upper)
    eps = c_lower / (20.0 * c_upper * (3.0 * T + 1.0))
    C3 = 1.0 + 1.0 / eps + 4.0 * T / delta + eps * C1
    C2 = 2.0 * C3 / c_lower
    return AprioriConstants(C1, C2, C3, delta, eps)


@dataclass
class NormEstimates:
    """Squared norms, each maximised over the control family, with standard errors."""

    M_S2: float
    H_H2: float
    H_H2_plain: float
    Kc_S2: float
    Kd_H2pi: float
    se: dict
    per_control: dict
    n_paths: int

    @property
    def lhs(self) -> float:
        return self.H_H2 + self.Kc_S2 + self.Kd_H2pi

    def to_dict(self) -> dict:
        return {"M_S2": self.M_S2, "H_H2": self.H_H2, "H_H2_plain": self.H_H2_plain,
                "Kc_S2": self.Kc_S2, "Kd_H2pi": self.Kd_H2pi, "se": self.se,
                "per_control": self.per_control, "n_paths": self.n_paths}


def _max_over(per: dict, key: str, seed: int):
    best = None
    for name, d in per.items():
        e = estimate(d[key], seed)
        if best is None or e.mean > best.mean:
            best = e
    return best


def norm_estimates(U: UncertaintySet, triple: DecompositionTriple, n_paths: int, seed: int,
                   threads: int = 1, greedy: bool = True) -> tuple[NormEstimates, list]:
    per, resid = {}, []
    for pol in _policies(U, triple, greedy):
        s = _simulate(U, [triple], [triple.xi], pol, n_paths, seed, threads)
        per[pol.name] = {"M": s["m_sup"][0], "H": s["h2_b"][0], "Hp": s["h2"][0],
                         "Kc": s["kc_sup"][0] ** 2, "Kd": s["kd2"][0]}
        r = s["residual"][0]
        resid.append(ResidualStats(pol.name, float(np.sqrt(np.mean(r * r))), float(np.max(np.abs(r))),
                                   float(np.mean(r)), float(s["kc_min"][0]), n_paths))
    est = {k: _max_over(per, k, seed) for k in ("M", "H", "Hp", "Kc", "Kd")}
    summary = {name: {k: float(np.mean(v)) for k, v in d.items()} for name, d in per.items()}
    ne = NormEstimates(est["M"].mean, est["H"].mean, est["Hp"].mean, est["Kc"].mean, est["Kd"].mean,
                       {k: e.se for k, e in est.items()}, summary, n_paths)
    return ne, resid


@dataclass
class CheckReport:
    """Inequality ``lhs <= rhs`` with its numeric margin."""

    name: str
    lhs: float
    rhs: float
    details: dict = field(default_factory=dict)
    slack: float = 0.0

    @property
    def margin(self) -> float:
        return self.rhs + self.slack - self.lhs

    @property
    def passed(self) -> bool:
        return bool(self.margin >= 0)

    def to_dict(self) -> dict:
        return {"name": self.name, "lhs": self.lhs, "rhs": self.rhs, "slack": self.slack,
                "margin": self.margin, "passed": self.passed, **self.details}


def apriori_check(U: UncertaintySet, triple: DecompositionTriple, mc: McParams,
                  T: float | None = None) -> CheckReport:
    """``|H|^2 + |K^c|^2 + |K^d|^2 <= (C1 + C2 + C3) |M|^2`` with norms estimated by simulation."""
    T = float(triple.t[-1]) if T is None else T
    consts = apriori_constants(U.c_lower, U.c_upper, T)
    ne, resid = norm_estimates(U, triple, mc.n_paths, mc.seed, mc.threads)
    return CheckReport("apriori", ne.lhs, consts.C * ne.M_S2,
                       {"constants": consts.to_dict(), "norms": ne.to_dict(),
                        "residuals": [r.to_dict() for r in resid]})


def stability_check(U: UncertaintySet, xi1, xi2, grid: Grid, mc: McParams) -> CheckReport:
    """Difference estimate ``|dH|^2 + |dK^c|^2 + |dK^d|^2 <= C [|dM|^2 + |dM| (|M1| + |M2|)]``."""
    t1, t2 = decompose(U, xi1, grid), decompose(U, xi2, grid)
    consts = apriori_constants(U.c_lower, U.c_upper, float(t1.t[-1]))
    lhs_terms = {"H": 0.0, "Kc": 0.0, "Kd": 0.0}
    dm = m1 = m2 = 0.0
    per = {}
    for pol in _policies(U, t1):
        s = _simulate(U, [t1, t2], [t1.xi, t2.xi], pol, mc.n_paths, mc.seed, mc.threads)
        d = s["diff"][(0, 1)]
        vals = {"H": float(np.mean(d[0])), "Kc": float(np.mean(d[1] ** 2)), "Kd": float(np.mean(d[2])),
                "dM": float(np.mean(d[3])), "M1": float(np.mean(s["m_sup"][0])),
                "M2": float(np.mean(s["m_sup"][1]))}
        per[pol.name] = vals
        for k in lhs_terms:
            lhs_terms[k] = max(lhs_terms[k], vals[k])
        dm, m1, m2 = max(dm, vals["dM"]), max(m1, vals["M1"]), max(m2, vals["M2"])
    lhs = sum(lhs_terms.values())
    rhs = consts.C * (dm + math.sqrt(dm) * (math.sqrt(m1) + math.sqrt(m2)))
    return CheckReport("stability", lhs, rhs, {"terms": lhs_terms, "dM_S2": dm, "M1_S2": m1,
                                               "M2_S2": m2, "C": consts.C, "per_control": per})


def embedding_constant(p: float) -> float:
    """``C_p^2 = 1 + 4 / (p - 2)``."""
    if not p > 2:
        raise InvalidExponent(f"p = {p} must exceed 2")
    return 1.0 + 4.0 / (p - 2.0)


def embedding_check(U: UncertaintySet, xi, p: float, grid: Grid, mc: McParams) -> CheckReport:
    """``E[sup_t E[|xi| | F_t]^2] <= C_p^2 (E|xi|^p)^(2/p)``, both sides maximised over controls.

    The left side is sampled at every PDE time along each path.  The check
    passes when the gap is within three combined standard errors.
    """
    cp2 = embedding_constant(p)
    phi, horizon = _as_terminal(xi)
    absphi = TerminalFunction(lambda x, _f=phi: np.abs(_f(x)), phi.lipschitz, phi.bound,
                              smooth=False, label=f"|{phi.label}|", eps=phi.eps)
    sol = solve_backward(U, prepare_terminal(absphi, grid), grid, horizon=horizon)
    triple = decompose(U, absphi, grid, solution=sol)
    best_l = best_r = None
    per = {}
    for pol in _policies(U, triple):
        s = _simulate(U, [triple], [absphi], pol, mc.n_paths, mc.seed, mc.threads)
        el = estimate(s["m_sup"][0], mc.seed)
        er = estimate(np.abs(s["xi"][0]) ** p, mc.seed)
        per[pol.name] = {"LL2": el.mean, "Lp_moment": er.mean}
        if best_l is None or el.mean > best_l.mean:
            best_l = el
        if best_r is None or er.mean > best_r.mean:
            best_r = er
    rhs_norm = best_r.mean ** (2.0 / p) if best_r.mean > 0 else 0.0
    rhs_se = (2.0 / p) * best_r.mean ** (2.0 / p - 1.0) * best_r.se if best_r.mean > 0 else 0.0
    slack = 3.0 * math.hypot(best_l.se, cp2 * rhs_se)
    return CheckReport("embedding", best_l.mean, cp2 * rhs_norm,
                       {"p": p, "Cp2": cp2, "LL2_se": best_l.se, "Lp2": rhs_norm, "Lp2_se": rhs_se,
                        "per_control": per}, slack=slack)


__all__ = [
    "AprioriConstants", "CheckReport", "DecompositionTriple", "NormEstimates", "ResidualStats",
    "apriori_check", "apriori_constants", "decompose", "embedding_check", "embedding_constant",
    "norm_estimates", "residual", "stability_check",
]
