"""The acceptance suite shared by ``glevy verify all`` and the test-suite.

Each criterion returns numeric checks that restate their tolerance and
margin.  Random instances come from ``numpy.random.default_rng`` seeded with
the run seed, so reports are reproducible.
"""
from __future__ import annotations

import copy
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .compensator import CoupledSet, StepRandomField, verify_ab_identity, verify_martingale_mc
from .config import JUMP, QUADRATIC, TWO_MEASURE, RunConfig
from .control_sim import McParams, duality_gap
from .cylinder import CylinderFunctional, Lattice, martingale_lattice, scheme_tol as cyl_scheme_tol, tower_gap
from .decomposition import (apriori_constants, decompose, embedding_check, embedding_constant,
                            norm_estimates, stability_check)
from .model import LevyMeasure, UncertaintySet
from .payoff import Abs, Clip, Const, Gauss, Lin, TerminalFunction, Var, parse
from .pide import Grid, prepare_terminal, solve_backward

RUNTIME_BUDGET_S = 300.0


@dataclass
class Check:
    """``value`` compared with ``tolerance``; ``margin >= 0`` means pass."""

    name: str
    value: float | None
    tolerance: float
    margin: float | None
    passed: bool

    @classmethod
    def le(cls, name, value, tol):
        value = float(value)
        return cls(name, value, float(tol), float(tol - value), bool(value <= tol))

    @classmethod
    def near(cls, name, value, target, tol):
        err = abs(float(value) - float(target))
        return cls(name, float(value), float(tol), float(tol - err), bool(err <= tol))

    def to_dict(self) -> dict:
        return {"name": self.name, "value": self.value, "tolerance": self.tolerance,
                "margin": self.margin, "passed": self.passed}


@dataclass
class Criterion:
    number: int
    title: str
    checks: list = field(default_factory=list)
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.checks) and all(c.passed for c in self.checks)

    def line(self) -> str:
        worst = min((c.margin for c in self.checks if c.margin is not None), default=float("nan"))
        return f"criterion {self.number:2d} {'PASS' if self.passed else 'FAIL'}  {self.title}  (min margin {worst:.3g})"

    def to_dict(self) -> dict:
        return {"criterion": self.number, "title": self.title, "passed": self.passed,
                "checks": [c.to_dict() for c in self.checks], "details": self.details}


@dataclass
class Settings:
    seed: int = 20240607
    duality_paths: int = 100_000
    compensator_paths: int = 100_000
    decomposition_paths: int = 10_000
    stability_paths: int = 4096
    axiom_pairs: int = 50
    tower_instances: int = 10
    ab_fields: int = 100
    timing: bool = True


def _bench(cfg: dict):
    rc = RunConfig.from_dict(copy.deepcopy(cfg))
    return rc.model(), rc.grid(), rc.terminal()


def crit_closed_form(s: Settings, cache: dict) -> list:
    out = []
    U, g, phi = _bench(QUADRATIC)
    t0 = time.perf_counter()
    sol = solve_backward(U, prepare_terminal(phi, g), g, estimate_tol=True)
    elapsed = time.perf_counter() - t0
    cache["quadratic"] = (U, g, phi, sol)
    c1 = Criterion(1, "closed-form diffusion value u(0,0) = 0.5")
    c1.checks.append(Check.near("u00", sol.u00, 0.5, 1e-2))
    rt = Check.le("runtime_s", elapsed, 10.0)
    if not s.timing:
        rt = Check("runtime_s", None, 10.0, None, rt.passed)
    c1.checks.append(rt)
    c1.details = {"scheme_tol": sol.scheme_tol, "nt": int(sol.t.size - 1), "cfl": sol.cfl}
    out.append(c1)

    U, g, phi = _bench(JUMP)
    sol = solve_backward(U, prepare_terminal(phi, g), g, estimate_tol=True)
    cache["jump"] = (U, g, phi, sol)
    c2 = Criterion(2, "closed-form jump value u(0,0) = 0.5")
    c2.checks.append(Check.near("u00", sol.u00, 0.5, 2e-2))
    c2.details = {"scheme_tol": sol.scheme_tol, "nt": int(sol.t.size - 1)}
    out.append(c2)
    return out


def crit_duality(s: Settings, cache: dict) -> Criterion:
    c = Criterion(3, "duality: constant controls bound the PDE value, greedy attains it")
    for name in ("quadratic", "jump"):
        U, g, phi, sol = cache[name]
        cfg = QUADRATIC if name == "quadratic" else JUMP
        mc = McParams(s.duality_paths, cfg["mc"]["mesh_dt"], s.seed)
        rep = duality_gap(U, phi, g, mc=mc, solution=sol)
        for r in rep.results:
            c.checks.append(Check.le(f"{name}:{r.name}:violation", r.violation, 0.0))
        c.checks.append(Check.le(f"{name}:greedy_relative_gap", rep.greedy_gap, 0.05))
        c.details[name] = rep.to_dict()
    return c


def random_payoff(rng: np.random.Generator, var: int = 0) -> "Clip":
    """Bounded Lipschitz payoff of one variable from the primitive vocabulary."""
    x = Var(var)
    a, b, c = rng.uniform(-1.5, 1.5, size=3)
    centre = rng.uniform(-1.0, 1.0)
    width = rng.uniform(0.3, 1.5)
    body = Lin([(a, x), (b, Abs(Lin([(1.0, x)], -centre))), (c, Gauss(Lin([(1.0, x)], -centre), width))])
    lo, hi = sorted(rng.uniform(-2.0, 2.0, size=2))
    return Clip(body, lo - 0.5, hi + 0.5)


def _axiom_model():
    rc = RunConfig.from_dict(copy.deepcopy(TWO_MEASURE))
    return rc.model(), rc.grid()


def crit_axioms(s: Settings) -> Criterion:
    c = Criterion(4, "sublinear-expectation axioms on random payoff pairs")
    U, g = _axiom_model()
    rng = np.random.default_rng([s.seed, 4])

    def ev(p):
        tf = TerminalFunction.from_payoff(p)
        sol = solve_backward(U, prepare_terminal(tf, g), g, estimate_tol=True)
        return sol.u00, sol.scheme_tol

    mono, sub = -math.inf, -math.inf
    for _ in range(s.axiom_pairs):
        xi, psi = random_payoff(rng), random_payoff(rng)
        eta = Lin([(1.0, xi), (1.0, Clip(psi, 0.0, math.inf))])      # eta >= xi pointwise
        e_xi, t_xi = ev(xi)
        e_eta, t_eta = ev(eta)
        e_dif, t_dif = ev(Lin([(1.0, xi), (-1.0, eta)]))
        tol = 2.0 * max(t_xi, t_eta, t_dif)
        mono = max(mono, (e_xi - e_eta) - tol)
        sub = max(sub, (e_eta - e_xi) - ev(Lin([(1.0, eta), (-1.0, xi)]))[0] - tol)
        sub = max(sub, (e_xi - e_eta) - e_dif - tol)
    c.checks.append(Check.le("monotonicity_excess", mono, 0.0))
    c.checks.append(Check.le("subadditivity_excess", sub, 0.0))
    const_err, hom_err = 0.0, 0.0
    for _ in range(5):
        k = float(rng.uniform(-3, 3))
        sol = solve_backward(U, TerminalFunction.constant(k), g)
        const_err = max(const_err, float(np.max(np.abs(sol.u - k))))
        p = random_payoff(rng)
        lam = float(rng.uniform(0.0, 4.0))
        base = ev(p)[0]
        scaled = solve_backward(U, prepare_terminal(TerminalFunction.from_payoff(Lin([(lam, p)])), g), g).u00
        hom_err = max(hom_err, abs(scaled - lam * base))
    c.checks.append(Check.le("constant_preserving_error", const_err, 1e-12))
    c.checks.append(Check.le("positive_homogeneity_error", hom_err, 1e-12))
    return c


def random_two_step(rng: np.random.Generator) -> CylinderFunctional:
    t1 = float(rng.uniform(0.05, 0.2))
    t2 = t1 + float(rng.uniform(0.05, 0.2))
    a, b, c = rng.uniform(-1.5, 1.5, size=3)
    body = Lin([(a, Var(0)), (b, Var(1)), (c, Abs(Lin([(1.0, Var(0)), (-1.0, Var(1))])))])
    lo, hi = sorted(rng.uniform(-2.0, 2.0, size=2))
    return CylinderFunctional((t1, t2), Clip(body, lo - 0.5, hi + 0.5))


def crit_tower(s: Settings) -> Criterion:
    c = Criterion(5, "tower property for two-step cylinder functionals")
    U, g = _axiom_model()
    lat = Lattice(3.0, 61)
    rng = np.random.default_rng([s.seed, 5])
    worst = -math.inf
    rows = []
    for _ in range(s.tower_instances):
        xi = random_two_step(rng)
        ml = martingale_lattice(U, xi, g, lat)
        tol = 2.0 * cyl_scheme_tol(U, xi, g, lat, value=ml.value) + ml.interpolation_tol
        gap = tower_gap(U, ml)
        worst = max(worst, gap - tol)
        rows.append({"value": ml.value, "gap": gap, "tolerance": tol})
    c.checks.append(Check.le("tower_excess", worst, 0.0))
    c.details["instances"] = rows
    return c


def crit_ab(s: Settings) -> Criterion:
    c = Criterion(6, "A = B on product sets, strict gap on the coupled set")
    rng = np.random.default_rng([s.seed, 6])
    worst = 0.0
    for _ in range(s.ab_fields):
        nv, nq, L = rng.integers(1, 4), rng.integers(1, 4), rng.integers(1, 3)
        z = np.array([1.0, -0.5, 2.0])
        ms = [LevyMeasure(z[:, None], rng.uniform(0.2, 2.0, size=3)) for _ in range(nv)]
        U = UncertaintySet.build(ms, list(rng.uniform(0.0, 1.5, size=nq)))
        # disjoint mark functions: identity on positive jumps, identity on negative jumps
        marks = (Clip(Var(0), 0.0, math.inf), Clip(Var(0), -math.inf, 0.0))[:L]
        F = ((tuple(Const(v) for v in rng.uniform(-2, 2, size=L))),)
        K = StepRandomField((0.0, float(rng.uniform(0.1, 1.0))), marks, F)
        H = float(rng.uniform(-3, 3))
        worst = max(worst, verify_ab_identity(U, K, [[H]]).gap)
    c.checks.append(Check.le("product_max_abs_gap", worst, 1e-12))
    dt = 0.25
    cs = CoupledSet.of((LevyMeasure.atoms((1.0, 1.0)), 1.0), (LevyMeasure.atoms((1.0, 2.0)), 0.5))
    K = StepRandomField((0.0, dt), (Var(0),), ((Const(1.0),),))
    ab = verify_ab_identity(cs, K, [[1.0]])
    c.checks.append(Check.near("coupled_B_minus_A", ab.B - ab.A, 0.375 * dt, 1e-12))
    c.details["coupled"] = ab.to_dict()
    return c


def crit_compensator(s: Settings) -> Criterion:
    c = Criterion(7, "compensated pure-jump integral is a G-martingale")
    rc = RunConfig.from_dict(copy.deepcopy(TWO_MEASURE))
    U = rc.model()
    K = StepRandomField.from_config(rc.section("field"))
    rep = verify_martingale_mc(U, K, s.compensator_paths, s.seed)
    c.checks.append(Check.le("supermartingale_excess", -rep.margins["supermartingale"], 0.0))
    c.checks.append(Check.le("sup_mean_excess", -rep.margins["sup_attained"], 0.0))
    c.details = rep.to_dict()
    return c


def crit_decomposition(s: Settings, cache: dict) -> list:
    c8 = Criterion(8, "decomposition residual RMS <= 2e-2")
    c9 = Criterion(9, "K^c increments are nonnegative")
    c10 = Criterion(10, "a-priori constants and estimates")
    consts = apriori_constants(1.0, 1.0, 1.0)
    c10.checks.append(Check.near("C1(1,1,1)", consts.C1, 7050.0, 0.0))
    for name in ("quadratic", "jump"):
        U, g, phi, sol = cache[name]
        triple = decompose(U, phi, g, solution=sol)
        cache[name + ":triple"] = triple
        ne, resid = norm_estimates(U, triple, s.decomposition_paths, s.seed)
        for r in resid:
            c8.checks.append(Check.le(f"{name}:{r.policy}:rms", r.rms, 2e-2))
        c9.checks.append(Check.le(f"{name}:negative_increment", -min(r.kc_min_increment for r in resid), 1e-10))
        C = apriori_constants(U.c_lower, U.c_upper, g.T).C
        c10.checks.append(Check.le(f"{name}:apriori_lhs_minus_rhs", ne.lhs - C * ne.M_S2, 0.0))
        c8.details[name] = [r.to_dict() for r in resid]
        c10.details[name] = {"norms": ne.to_dict(), "C": C}
    U, g, phi, _ = cache["quadratic"]
    mc = McParams(s.stability_paths, 0.01, s.seed)
    same = stability_check(U, phi, phi, g, mc)
    c10.checks.append(Check.near("stability_lhs_identical", same.lhs, 0.0, 0.0))
    bump = TerminalFunction.from_payoff(Lin([(1.0, parse(QUADRATIC["payoff"])), (0.1, Gauss(Var(0), 1.0))]))
    pert = stability_check(U, phi, bump, g, mc)
    c10.checks.append(Check.le("stability_perturbed_lhs_minus_rhs", pert.lhs - pert.rhs, 0.0))
    c10.details["stability"] = {"identical": same.to_dict(), "perturbed": pert.to_dict()}
    c10.details["constants"] = consts.to_dict()
    return [c8, c9, c10]


def crit_embedding(s: Settings, cache: dict) -> Criterion:
    c = Criterion(11, "embedding with p = 4")
    c.checks.append(Check.near("C4^2", embedding_constant(4.0), 3.0, 0.0))
    for name in ("quadratic", "jump"):
        U, g, phi, _ = cache[name]
        rep = embedding_check(U, phi, 4.0, g, McParams(s.decomposition_paths, 0.01, s.seed))
        c.checks.append(Check.le(f"{name}:lhs_minus_rhs_minus_3se", rep.lhs - rep.rhs - rep.slack, 0.0))
        c.details[name] = rep.to_dict()
    return c


def run_all(settings: Settings | None = None, progress=None) -> list:
    """Criteria 1-11 plus the runtime part of 12; determinism is checked by rerunning."""
    s = settings or Settings()
    cache: dict = {}
    t0 = time.perf_counter()
    out = []

    def add(items):
        items = items if isinstance(items, list) else [items]
        for it in items:
            out.append(it)
            if progress:
                progress(it.line())

    add(crit_closed_form(s, cache))
    add(crit_duality(s, cache))
    add(crit_axioms(s))
    add(crit_tower(s))
    add(crit_ab(s))
    add(crit_compensator(s))
    add(crit_decomposition(s, cache))
    add(crit_embedding(s, cache))
    c12 = Criterion(12, "determinism and runtime budget")
    elapsed = time.perf_counter() - t0
    chk = Check.le("suite_runtime_s", elapsed, RUNTIME_BUDGET_S)
    if not s.timing:
        chk = Check("suite_runtime_s", None, RUNTIME_BUDGET_S, None, chk.passed)
    c12.checks.append(chk)
    c12.details["note"] = "byte-identical reruns are checked by comparing two reports"
    add(c12)
    return out
