"""Nonlinear generators G^c, G^d and G_X of a product uncertainty set.

All suprema are exact maxima over the finite families, taken in list order so
that ties resolve to the lowest index.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MissingProbePoint
from .model import UncertaintySet

_PROBE_DECIMALS = 12


def _as_matrix(A, d: int) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim == 0:
        A = A.reshape(1, 1)
    if A.shape != (d, d):
        raise ValueError(f"expected a {d}x{d} matrix, got shape {A.shape}")
    return A


@dataclass(frozen=True)
class LocalFunctionProbe:
    """Samples of a scalar field at finitely many points.

    ``grad`` and ``hess`` are only needed when evaluating ``G_X`` (they are
    the derivatives at the origin).
    """

    points: np.ndarray
    values: np.ndarray
    grad: np.ndarray | None = None
    hess: np.ndarray | None = None

    @classmethod
    def sample(cls, f, U: UncertaintySet, x=None, grad=None, hess=None) -> "LocalFunctionProbe":
        """Probe ``f`` at ``x`` and every ``x + z_j`` of the reference support."""
        x = np.zeros(U.d) if x is None else np.atleast_1d(np.asarray(x, dtype=float))
        pts = np.vstack([x[None, :], x[None, :] + U.support])
        vals = np.array([float(f(p[0] if U.d == 1 else p)) for p in pts])
        return cls(pts, vals, None if grad is None else np.atleast_1d(grad),
                   None if hess is None else _as_matrix(hess, U.d))

    def value_at(self, x) -> float:
        x = np.round(np.atleast_1d(np.asarray(x, dtype=float)), _PROBE_DECIMALS)
        hits = np.flatnonzero(np.all(np.round(self.points, _PROBE_DECIMALS) == x, axis=1))
        if hits.size == 0:
            raise MissingProbePoint(f"probe has no sample at {x.tolist()}")
        return float(self.values[hits[0]])


def gc_values(A, U: UncertaintySet) -> np.ndarray:
    """``1/2 tr[A Q Q^T]`` for every ``Q`` in the family, in list order."""
    A = _as_matrix(A, U.d)
    return 0.5 * np.einsum("ij,qji->q", A, U.grams)


def eval_gc(A, U: UncertaintySet) -> float:
    return float(np.max(gc_values(A, U)))


def gd_values(w: LocalFunctionProbe, x, U: UncertaintySet) -> np.ndarray:
    """``sum_j [w(x + z_j) - w(x)] v(z_j)`` for every ``v`` in the family."""
    if U.jump_free:
        return np.zeros(0)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    base = w.value_at(x)
    diffs = np.array([w.value_at(x + zj) - base for zj in U.support])
    return U.weights @ diffs


def eval_gd(w: LocalFunctionProbe, x, U: UncertaintySet) -> float:
    vals = gd_values(w, x, U)
    return float(vals.max()) if vals.size else 0.0


def eval_gx(f: LocalFunctionProbe, U: UncertaintySet) -> float:
    """``G_X[f]`` for a probe of ``f`` at the origin with ``f(0) = 0``.

    There is no drift term: the drift slot of the uncertainty set is zero, and
    the product form lets the joint supremum split into two.
    """
    hess = np.zeros((U.d, U.d)) if f.hess is None else f.hess
    return eval_gd(f, np.zeros(U.d), U) + eval_gc(hess, U)


def argmax_controls(A, w: LocalFunctionProbe | None, x, U: UncertaintySet):
    """Indices ``(v_index, q_index)`` attaining the two separate maxima.

    ``v_index`` is None in jump-free mode.
    """
    q_index = int(np.argmax(gc_values(A, U)))
    if U.jump_free:
        return None, q_index
    return int(np.argmax(gd_values(w, x, U))), q_index
