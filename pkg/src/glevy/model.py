"""Uncertainty sets ``V x {0} x Q`` for finite-activity G-Levy processes.

Levy measures are finite lists of atoms; volatility families are finite lists
of matrices.  After validation every measure is re-expressed on the common
support of the reference measure, so that jump quadratures and suprema over
the family reduce to small dense matrix products.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import AtomAtOrigin, DegenerateDensityRatio, EmptyFamily, ModelError

_KEY_DECIMALS = 12


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class LevyMeasure:
    """Finite atomic measure ``sum_j w_j delta_{z_j}`` on R^d minus the origin.

    ``z`` has shape (m, d) and ``w`` shape (m,).  Weights are intensities per
    unit time.
    """

    z: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        if z.ndim == 1:
            z = z[:, None]
        w = np.asarray(self.w, dtype=float).ravel()
        if z.shape[0] != w.shape[0]:
            raise ModelError(f"{z.shape[0]} atoms but {w.shape[0]} weights")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise ModelError("atom weights must be finite and strictly positive")
        if np.any(np.all(z == 0.0, axis=1)):
            raise AtomAtOrigin("Levy measures live on R^d without the origin")
        object.__setattr__(self, "z", _frozen(z))
        object.__setattr__(self, "w", _frozen(w))

    @classmethod
    def atoms(cls, *pairs) -> "LevyMeasure":
        """``LevyMeasure.atoms((1.0, 2.0), (-1.0, 0.5))`` for d = 1."""
        z = [p[0] for p in pairs]
        w = [p[1] for p in pairs]
        return cls(np.asarray(z, dtype=float).reshape(len(pairs), -1), w)

    @property
    def dim(self) -> int:
        return self.z.shape[1]

    @property
    def mass(self) -> float:
        return float(self.w.sum())

    def first_moment(self) -> float:
        return float(np.sum(np.linalg.norm(self.z, axis=1) * self.w))

    def keys(self):
        return [tuple(np.round(zj, _KEY_DECIMALS)) for zj in self.z]

    def __repr__(self):
        pairs = ", ".join(f"({zj.tolist()}, {wj:g})" for zj, wj in zip(self.z, self.w))
        return f"LevyMeasure[{pairs}]"


@dataclass(frozen=True, eq=False)
class VolatilityMatrix:
    """Volatility ``Q`` together with its Gram matrix ``a = Q Q^T``."""

    q: np.ndarray
    a: np.ndarray = field(init=False)

    def __post_init__(self):
        q = np.atleast_2d(np.asarray(self.q, dtype=float))
        if q.shape[0] != q.shape[1]:
            raise ModelError(f"volatility must be square, got {q.shape}")
        object.__setattr__(self, "q", _frozen(q))
        object.__setattr__(self, "a", _frozen(q @ q.T))

    @classmethod
    def scalar(cls, sigma: float) -> "VolatilityMatrix":
        return cls(np.array([[float(sigma)]]))

    @property
    def dim(self) -> int:
        return self.q.shape[0]

    def __repr__(self):
        return f"VolatilityMatrix({self.q.tolist()})"


def validate_levy_family(measures: Sequence[LevyMeasure]):
    """Build the reference measure of a family and its density bounds.

    The reference measure is the atomwise upper envelope of the family on the
    union of supports, so ``c_upper == 1`` and ``c_lower`` is the smallest
    density ratio.  Returns ``(pi, c_lower, c_upper)``.
    """
    if len(measures) == 0:
        raise EmptyFamily("the Levy family is empty")
    dims = {m.dim for m in measures}
    if len(dims) != 1:
        raise ModelError(f"measures of mixed dimension {sorted(dims)}")

    support: dict[tuple, np.ndarray] = {}
    for m in measures:
        for key, zj in zip(m.keys(), m.z):
            support.setdefault(key, zj)
    keys = sorted(support)
    weights = np.zeros((len(measures), len(keys)))
    index = {k: j for j, k in enumerate(keys)}
    for i, m in enumerate(measures):
        for key, wj in zip(m.keys(), m.w):
            weights[i, index[key]] += wj

    missing = np.argwhere(weights == 0.0)
    if missing.size:
        i, j = missing[0]
        raise DegenerateDensityRatio(
            f"measure {i} has no atom at {list(support[keys[j]])} carried by another "
            "measure; the lower density bound would be 0"
        )
    envelope = weights.max(axis=0)
    pi = LevyMeasure(np.array([support[k] for k in keys]), envelope)
    c_lower = float((weights / envelope).min())
    return pi, c_lower, 1.0


def _as_vol(v) -> VolatilityMatrix:
    if isinstance(v, VolatilityMatrix):
        return v
    if np.ndim(v) == 0:
        return VolatilityMatrix.scalar(v)
    return VolatilityMatrix(v)


@dataclass(frozen=True, eq=False)
class UncertaintySet:
    """Product uncertainty set ``V x {0} x Q`` with non-degeneracy constants.

    Use :meth:`build` rather than the raw constructor.  ``support`` and
    ``weights`` hold every measure of the family on the common support of the
    reference measure: ``weights[i, j] = v_i({support[j]})``.
    """

    d: int
    measures: tuple
    vols: tuple
    reference: LevyMeasure | None
    c_lower: float
    c_upper: float
    sigma_lower_sq: float
    lambda_max: float
    support: np.ndarray
    weights: np.ndarray
    grams: np.ndarray
    warnings: tuple = ()

    @classmethod
    def build(cls, measures, vols, sigma_lower_sq: float = 0.0,
              lambda_max: float | None = None) -> "UncertaintySet":
        vols = tuple(_as_vol(v) for v in vols)
        measures = tuple(measures)
        if not vols:
            raise EmptyFamily("the volatility family is empty")
        d = vols[0].dim
        if any(v.dim != d for v in vols):
            raise ModelError("volatility matrices of mixed dimension")
        notes = []
        if measures:
            if measures[0].dim != d:
                raise ModelError(f"measures live in R^{measures[0].dim}, vols in R^{d}")
            pi, c_lower, c_upper = validate_levy_family(measures)
            index = {k: j for j, k in enumerate(pi.keys())}
            weights = np.zeros((len(measures), len(index)))
            for i, m in enumerate(measures):
                for key, wj in zip(m.keys(), m.w):
                    weights[i, index[key]] += wj
            support = pi.z
            sup_mass = float(weights.sum(axis=1).max())
        else:
            pi, c_lower, c_upper = None, 1.0, 1.0
            weights = np.zeros((0, 0))
            support = np.zeros((0, d))
            sup_mass = 0.0
            notes.append("jump-free mode: density-ratio checks are skipped")
        if lambda_max is None:
            lambda_max = max(sup_mass, 1.0)
        if sup_mass > lambda_max * (1 + 1e-12):
            raise ModelError(f"sup of total masses {sup_mass} exceeds lambda_max {lambda_max}")
        if sigma_lower_sq < 0:
            raise ModelError("sigma_lower_sq must be nonnegative")
        if sigma_lower_sq == 0:
            notes.append("diffusion-free mode: sigma_lower_sq = 0, ellipticity is skipped")
        return cls(d=d, measures=measures, vols=vols, reference=pi,
                   c_lower=float(c_lower), c_upper=float(c_upper),
                   sigma_lower_sq=float(sigma_lower_sq), lambda_max=float(lambda_max),
                   support=_frozen(support), weights=_frozen(weights),
                   grams=_frozen(np.array([v.a for v in vols])), warnings=tuple(notes))

    @classmethod
    def from_config(cls, cfg: dict) -> "UncertaintySet":
        """Parse the ``model`` section of a run configuration."""
        try:
            d = int(cfg.get("d", 1))
            measures = []
            for atoms in cfg.get("measures", []):
                z = np.array([a["z"] for a in atoms], dtype=float).reshape(len(atoms), d)
                w = [a["w"] for a in atoms]
                measures.append(LevyMeasure(z, w))
            vols = []
            for v in cfg["vols"]:
                if d == 1 and np.ndim(v) == 0:
                    vols.append(VolatilityMatrix.scalar(v))
                else:
                    vols.append(VolatilityMatrix(np.asarray(v, dtype=float).reshape(d, d)))
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelError(f"bad model section: {exc}") from exc
        return cls.build(measures, vols, cfg.get("sigma_lower_sq", 0.0), cfg.get("lambda_max"))

    @property
    def jump_free(self) -> bool:
        return len(self.measures) == 0

    @property
    def masses(self) -> np.ndarray:
        return self.weights.sum(axis=1)

    @property
    def sigma_sq(self) -> np.ndarray:
        """Variances ``tr(Q Q^T)`` of the volatility family."""
        return np.trace(self.grams, axis1=1, axis2=2)

    def max_jump(self) -> float:
        if self.jump_free:
            return 0.0
        return float(np.linalg.norm(self.support, axis=1).max())

    def __repr__(self):
        return (f"UncertaintySet(d={self.d}, |V|={len(self.measures)}, |Q|={len(self.vols)}, "
                f"c=[{self.c_lower:g}, {self.c_upper:g}], sigma_lower_sq={self.sigma_lower_sq:g})")


@dataclass
class NonDegeneracyReport:
    """Outcome of the non-degeneracy checks.

    ``None`` in a flag means the check was skipped (jump-free or
    diffusion-free mode), never that it passed.
    """

    lk_bound: float | None = None
    density_ratio_ok: bool | None = None
    ellipticity_ok: bool | None = None
    worst_margin: float | None = None
    witnesses: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "lk_bound": self.lk_bound,
            "density_ratio_ok": self.density_ratio_ok,
            "ellipticity_ok": self.ellipticity_ok,
            "worst_margin": self.worst_margin,
            "witnesses": self.witnesses,
            "notes": list(self.notes),
        }


def _gc(a_mat: np.ndarray, grams: np.ndarray) -> float:
    return float(np.max(0.5 * np.einsum("ij,qji->q", a_mat, grams)))


ELLIPTICITY_ROUNDING = 1e-12


def validate_ellipticity(vols: Sequence[VolatilityMatrix], sigma_lower_sq: float,
                         trials: int = 10_000, seed: int = 0) -> NonDegeneracyReport:
    """Check ``G^c(A) - G^c(B) >= sigma_lower_sq * tr(A - B)`` for ``A >= B``.

    In d = 1 the check is exact: the worst slope of ``G^c`` is
    ``min sigma^2 / 2``.  For d > 1 random ordered pairs are sampled.
    ``worst_margin`` is normalised per unit ``tr(A - B)``.
    """
    if not vols:
        raise EmptyFamily("the volatility family is empty")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    report = NonDegeneracyReport()
    if sigma_lower_sq == 0:
        report.notes.append("sigma_lower_sq = 0: ellipticity check skipped")
        return report
    grams = np.array([v.a for v in vols])
    d = grams.shape[1]
    if d == 1:
        s2 = grams[:, 0, 0]
        margin = 0.5 * s2.min() - sigma_lower_sq
        report.worst_margin = float(margin)
        report.ellipticity_ok = bool(margin >= 0)
        if not report.ellipticity_ok:
            if 0.5 * s2.max() < sigma_lower_sq:
                report.witnesses["ellipticity"] = {"A": [[1.0]], "B": [[0.0]]}
            else:
                report.witnesses["ellipticity"] = {"A": [[0.0]], "B": [[-1.0]]}
        return report

    rng = np.random.default_rng(seed)
    eye = np.eye(d)
    worst, witness = np.inf, None
    candidates = []
    for i in range(d):
        e = np.outer(eye[i], eye[i])
        candidates += [(e, np.zeros((d, d))), (np.zeros((d, d)), -e)]
    for _ in range(trials):
        g = rng.standard_normal((d, d))
        b = 0.5 * (g + g.T)
        p = rng.standard_normal((d, d))
        candidates.append((b + p @ p.T, b))
    for a_mat, b_mat in candidates:
        tr = np.trace(a_mat - b_mat)
        if tr <= 0:
            continue
        m = (_gc(a_mat, grams) - _gc(b_mat, grams)) / tr - sigma_lower_sq
        if m < worst:
            worst, witness = m, (a_mat, b_mat)
    report.worst_margin = float(worst)
    # sampled margins carry rounding noise; an exact zero margin must pass
    report.ellipticity_ok = bool(worst >= -ELLIPTICITY_ROUNDING)
    if not report.ellipticity_ok:
        report.witnesses["ellipticity"] = {"A": witness[0].tolist(), "B": witness[1].tolist()}
    return report


def lk_bound(U: UncertaintySet) -> float:
    """``sup_{(v,Q)} [ int |z| v(dz) + tr(Q Q^T) ]``; separable over the product set."""
    jump = 0.0
    if not U.jump_free:
        norms = np.linalg.norm(U.support, axis=1)
        jump = float((U.weights @ norms).max())
    return jump + float(U.sigma_sq.max())


def nondegeneracy_report(U: UncertaintySet, trials: int = 10_000, seed: int = 0) -> NonDegeneracyReport:
    report = validate_ellipticity(U.vols, U.sigma_lower_sq, trials=trials, seed=seed)
    report.lk_bound = lk_bound(U)
    if U.jump_free:
        report.notes.append("jump-free: density ratio check skipped")
    else:
        ratios = U.weights / (U.c_upper * U.reference.w)
        ok = bool(ratios.min() >= U.c_lower / U.c_upper * (1 - 1e-12) and ratios.max() <= 1 + 1e-12)
        report.density_ratio_ok = ok and U.c_lower > 0
        if not report.density_ratio_ok:
            i, j = np.unravel_index(np.argmin(ratios), ratios.shape)
            report.witnesses["density_ratio"] = {"measure": int(i), "atom": U.support[j].tolist()}
    return report
