"""Explicit monotone scheme for ``d_t u + G_X[u(t, x + .) - u(t, x)] = 0``.

One step backwards reads::

    u_k(x_i) = u_{k+1}(x_i) + dt * [ max_q sigma_q^2/2 * D2 u_{k+1}(x_i)
                                   + max_v sum_j v_j (u_{k+1}(x_i + z_j) - u_{k+1}(x_i)) ]

with a three-point Laplacian, ghost values equal to the edge value, and
linear interpolation (constant extension outside the grid) for the shifted
values.  Under the CFL bound every coefficient is nonnegative, so the scheme
is monotone, constant preserving, sublinear and positively homogeneous.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import roots_legendre

from . import _backend
from .errors import CflViolation, GridError, NonFiniteValue
from .model import UncertaintySet
from .operator import gc_values
from .payoff import TerminalFunction
from .policy import GridPolicy

SCHEME_TOL_FLOOR = 1e-10
_SNAP = 1e-9


@dataclass(frozen=True)
class Grid:
    """Truncated space-time grid (d = 1).

    ``nt`` may be left to the CFL rule; ``dt_max`` caps the step for models
    whose CFL bound alone would give very few steps.
    """

    x_min: float
    x_max: float
    nx: int
    T: float
    nt: int | None = None
    dt_max: float | None = None
    cfl: float = 0.95
    margin: float = 0.0
    report_radius: float | None = None

    def __post_init__(self):
        if self.nx < 3 or not self.x_max > self.x_min:
            raise GridError("need x_max > x_min and at least 3 nodes")
        if self.T < 0:
            raise GridError("negative horizon")
        if not 0 < self.cfl <= 1:
            raise GridError("cfl factor must be in (0, 1]")

    @classmethod
    def from_config(cls, cfg: dict) -> "Grid":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(cfg) - known
        if extra:
            raise GridError(f"unknown grid keys {sorted(extra)}")
        return cls(**cfg)

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.nx - 1)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.nx)

    def rate(self, U: UncertaintySet) -> float:
        return float(U.sigma_sq.max()) / self.dx ** 2 + (float(U.masses.max()) if not U.jump_free else 0.0)

    def steps(self, U: UncertaintySet, horizon: float | None = None) -> tuple[int, float]:
        """Number of steps and step size for ``horizon`` (default ``T``)."""
        h = self.T if horizon is None else float(horizon)
        if h <= 0:
            return 0, 0.0
        rate = self.rate(U)
        if self.nt is not None and horizon is None:
            nt = int(self.nt)
            if nt < 1:
                raise GridError("nt must be >= 1")
            if h / nt * rate > 1.0 + 1e-12:
                raise CflViolation(f"dt * rate = {h / nt * rate:.4f} > 1 with nt={nt}")
            return nt, h / nt
        if self.nt is not None:
            dt_ref = self.T / self.nt
            nt = max(1, math.ceil(h / dt_ref - 1e-9))
        else:
            nt = max(1, math.ceil(h * rate / self.cfl - 1e-9))
        if self.dt_max is not None:
            nt = max(nt, math.ceil(h / self.dt_max - 1e-9))
        if h / nt * rate > 1.0 + 1e-12:
            raise CflViolation(f"dt * rate = {h / nt * rate:.4f} > 1")
        return nt, h / nt

    def check_domain(self, U: UncertaintySet):
        need = 2.0 * U.max_jump() + self.margin
        if self.x_max - self.x_min < need:
            raise GridError(f"domain width {self.x_max - self.x_min} < required {need}")

    def coarsened(self) -> "Grid":
        """Same domain with every other node (nt left to the CFL rule)."""
        nx = (self.nx - 1) // 2 + 1
        return replace(self, nx=max(nx, 3), nt=None)


@dataclass(frozen=True)
class JumpTables:
    """Interpolation data for ``u(x_i + z_j)`` on a fixed grid."""

    idx: np.ndarray
    w0: np.ndarray
    w1: np.ndarray

    @classmethod
    def build(cls, grid: Grid, U: UncertaintySet) -> "JumpTables":
        nx = grid.nx
        m = U.support.shape[0]
        idx = np.zeros((m, nx), dtype=np.int64)
        w0 = np.ones((m, nx))
        w1 = np.zeros((m, nx))
        base = np.arange(nx, dtype=float)
        for j in range(m):
            shift = U.support[j, 0] / grid.dx
            if abs(shift - round(shift)) < _SNAP:
                shift = float(round(shift))
            pos = base + shift
            lo = np.floor(pos)
            theta = pos - lo
            i0 = lo.astype(np.int64)
            left = pos <= 0
            right = pos >= nx - 1
            i0 = np.clip(i0, 0, nx - 2)
            theta = np.where(left, 0.0, np.where(right, 1.0, theta))
            # when pos lands exactly on a node inside the grid theta is 0
            inside = ~(left | right)
            i0 = np.where(inside & (lo == nx - 1), nx - 2, i0)
            theta = np.where(inside & (lo == nx - 1), 1.0, theta)
            idx[j], w0[j], w1[j] = i0, 1.0 - theta, theta
        return cls(idx, w0, w1)


@dataclass
class GridSolution:
    """Value function layers ``u[k, i] = u(t_k, x_i)`` with ``u[nt] = phi``."""

    U: UncertaintySet
    grid: Grid
    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    cfl: float
    scheme_tol: float | None = None
    terminal: TerminalFunction | None = None
    tables: JumpTables | None = field(default=None, repr=False)

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0]) if self.t.size > 1 else 0.0

    def value(self, k: int, x) -> np.ndarray:
        return np.interp(x, self.x, self.u[k])

    @property
    def u00(self) -> float:
        return float(self.value(0, 0.0))


def bump_rule(nodes: int = 64):
    """Quadrature weights (summing to one) and nodes in (-1, 1) for the bump kernel."""
    y, gw = roots_legendre(nodes)
    kern = np.exp(-1.0 / (1.0 - y * y)) * gw
    return kern / kern.sum(), y


def _interp_rows(values: np.ndarray, nodes_x: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``np.interp`` applied to every row of ``values`` at once."""
    xc = np.clip(x, nodes_x[0], nodes_x[-1])
    i0 = np.clip(np.searchsorted(nodes_x, xc, side="right") - 1, 0, nodes_x.size - 2)
    theta = (xc - nodes_x[i0]) / (nodes_x[i0 + 1] - nodes_x[i0])
    return values[:, i0] * (1.0 - theta) + values[:, i0 + 1] * theta


def mollify_rows(values: np.ndarray, nodes_x: np.ndarray, x: np.ndarray, eps: float | None) -> np.ndarray:
    """Mollified linear interpolants of each row of ``values`` evaluated at ``x``.

    Rows are extended by constants outside ``nodes_x``.  ``eps=None`` skips
    the convolution.
    """
    values = np.atleast_2d(np.asarray(values, dtype=float))
    base = _interp_rows(values, nodes_x, x)
    if not eps:
        return base
    kern, y = bump_rule()
    acc = np.zeros_like(base)
    for c, s in zip(kern, eps * y):
        acc = acc + c * (_interp_rows(values, nodes_x, x - s) - base)
    return base + acc


def mollify(phi: TerminalFunction, eps: float, nodes: int = 64) -> TerminalFunction:
    """Convolve ``phi`` with the standard bump of half-width ``eps``.

    The bump ``exp(-1 / (1 - y^2))`` on (-1, 1) is integrated with
    Gauss-Legendre quadrature and normalised to mass one.  The result is
    written as ``phi + sum_k c_k (phi(x - eps y_k) - phi(x))`` so that
    constants are reproduced exactly.
    """
    if eps <= 0:
        raise ValueError("mollification width must be positive")
    kern, y = bump_rule(nodes)
    shifts = eps * y

    def func(x, _phi=phi):
        x = np.asarray(x, dtype=float)
        base = _phi(x)
        acc = np.zeros_like(base)
        for c, s in zip(kern, shifts):
            acc = acc + c * (_phi(x - s) - base)
        return base + acc

    return TerminalFunction(func, phi.lipschitz, phi.bound, True,
                            label=f"mollified[{eps:g}]({phi.label})")


def prepare_terminal(phi: TerminalFunction, grid: Grid, eps: float | None = None) -> TerminalFunction:
    """Mollify Lipschitz-only data; C^2 data passes through.

    The width is ``eps``, else the function's own preferred width, else ``2 dx``.
    """
    if phi.smooth:
        return phi
    if eps is None:
        eps = phi.eps if phi.eps else 2.0 * grid.dx
    return mollify(phi, eps)


def sweep(U: UncertaintySet, grid: Grid, tables: JumpTables, u_T: np.ndarray,
          nt: int, dt: float, store: bool) -> np.ndarray:
    """Batched backward sweep on rows of ``u_T`` (shape (B, nx))."""
    half_a = 0.5 * U.grams[:, 0, 0]
    W = U.weights if not U.jump_free else np.zeros((0, 0))
    u_T = np.ascontiguousarray(u_T, dtype=np.float64)
    if nt == 0:
        return u_T[None].copy() if store else u_T.copy()
    out = _backend.backward_sweep(u_T, nt, dt, grid.dx, half_a, tables.idx, tables.w0,
                                  tables.w1, np.ascontiguousarray(W, dtype=np.float64), store)
    if not np.all(np.isfinite(out)):
        raise NonFiniteValue("non-finite value in the backward sweep")
    return out


def solve_backward(U: UncertaintySet, phi: TerminalFunction, grid: Grid, *,
                   horizon: float | None = None, estimate_tol: bool = False) -> GridSolution:
    """Solve backwards from ``u(T, .) = phi`` and keep every layer.

    ``phi`` is used as given; call :func:`prepare_terminal` first to mollify
    Lipschitz-only data.  With ``estimate_tol`` the scheme error at the origin
    is estimated by re-solving on the half-resolution grid.
    """
    if U.d != 1:
        raise NotImplementedError("the reference solver is one-dimensional")
    grid.check_domain(U)
    h = grid.T if horizon is None else horizon
    nt, dt = grid.steps(U, None if horizon is None else horizon)
    tables = JumpTables.build(grid, U)
    x = grid.x
    layers = sweep(U, grid, tables, phi(x)[None, :], nt, dt, store=True)[:, 0, :]
    sol = GridSolution(U, grid, np.linspace(0.0, h, nt + 1), x, layers,
                       cfl=dt * grid.rate(U), terminal=phi, tables=tables)
    if estimate_tol:
        sol.scheme_tol = estimate_scheme_tol(U, phi, grid, sol.u00, horizon=horizon)
    return sol


def estimate_scheme_tol(U, phi, grid: Grid, u00: float, horizon: float | None = None) -> float:
    coarse = grid.coarsened()
    nt, dt = coarse.steps(U, horizon if horizon is not None else grid.T)
    tables = JumpTables.build(coarse, U)
    u0 = sweep(U, coarse, tables, phi(coarse.x)[None, :], nt, dt, store=False)[0]
    return max(abs(u00 - float(np.interp(0.0, coarse.x, u0))), SCHEME_TOL_FLOOR)


def scheme_laplacian(u: np.ndarray, dx: float) -> np.ndarray:
    """Second difference used by the scheme (ghost value = edge value)."""
    lap = np.empty_like(u)
    lap[..., 1:-1] = (u[..., :-2] - 2.0 * u[..., 1:-1] + u[..., 2:]) / dx ** 2
    lap[..., 0] = (u[..., 0] - 2.0 * u[..., 0] + u[..., 1]) / dx ** 2
    lap[..., -1] = (u[..., -2] - 2.0 * u[..., -1] + u[..., -1]) / dx ** 2
    return lap


def gradient(u: np.ndarray, dx: float) -> np.ndarray:
    """Central differences inside, one-sided at the two edges."""
    du = np.empty_like(u)
    du[..., 1:-1] = (u[..., 2:] - u[..., :-2]) / (2.0 * dx)
    du[..., 0] = (u[..., 1] - u[..., 0]) / dx
    du[..., -1] = (u[..., -1] - u[..., -2]) / dx
    return du


def jump_differences(u: np.ndarray, tables: JumpTables) -> np.ndarray:
    """``u(x_i + z_j) - u(x_i)`` with shape ``u.shape[:-1] + (m, nx)``."""
    left = u[..., tables.idx]
    right = u[..., tables.idx + 1]
    return left * tables.w0 + right * tables.w1 - u[..., None, :]


def derivatives(sol: GridSolution):
    """``(Du, D2u)`` on every layer; one-sided differences at the edges."""
    dx = sol.grid.dx
    u = sol.u
    d2 = np.empty_like(u)
    d2[..., 1:-1] = (u[..., :-2] - 2.0 * u[..., 1:-1] + u[..., 2:]) / dx ** 2
    d2[..., 0] = (u[..., 0] - 2.0 * u[..., 1] + u[..., 2]) / dx ** 2
    d2[..., -1] = (u[..., -1] - 2.0 * u[..., -2] + u[..., -3]) / dx ** 2
    return gradient(u, dx), d2


def greedy_tables(U: UncertaintySet, layers: np.ndarray, dx: float, tables: JumpTables):
    """Argmax indices per node of the discrete Hamiltonian; ties go to the lowest index."""
    lap = scheme_laplacian(layers, dx)
    half_a = 0.5 * U.grams[:, 0, 0]
    q_idx = np.argmax(half_a[:, None, None] * lap[None], axis=0)
    v_idx = None
    if not U.jump_free:
        diffs = jump_differences(layers, tables)
        vals = np.einsum("vj,kjx->vkx", U.weights, diffs)
        v_idx = np.argmax(vals, axis=0)
    return v_idx, q_idx


def greedy_policy(sol: GridSolution, U: UncertaintySet | None = None, t0: float = 0.0) -> GridPolicy:
    """Feedback control maximising the Hamiltonian of layer ``k + 1`` on ``[t_k, t_{k+1})``."""
    U = sol.U if U is None else U
    tables = sol.tables or JumpTables.build(sol.grid, U)
    v_idx, q_idx = greedy_tables(U, sol.u[1:], sol.grid.dx, tables)
    return GridPolicy(sol.t + t0, sol.x, q_idx, v_idx)


def gc_field(U: UncertaintySet, lap: np.ndarray) -> np.ndarray:
    """``G^c`` of a field of (scalar) second derivatives."""
    half_a = 0.5 * U.grams[:, 0, 0]
    out = half_a[0] * lap
    for q in range(1, half_a.size):
        out = np.maximum(out, half_a[q] * lap)
    return out


def gd_field(U: UncertaintySet, diffs: np.ndarray) -> np.ndarray:
    """``max_v sum_j v_j diffs_j`` for diffs of shape (..., m, nx)."""
    if U.jump_free:
        return np.zeros(diffs.shape[:-2] + diffs.shape[-1:])
    out = None
    for v in range(U.weights.shape[0]):
        s = np.zeros(diffs.shape[:-2] + diffs.shape[-1:])
        for j in range(U.weights.shape[1]):
            s = s + U.weights[v, j] * diffs[..., j, :]
        out = s if out is None else np.maximum(out, s)
    return out


def check_gc_consistency(U: UncertaintySet, A: float) -> float:
    """Scalar ``G^c`` via the operator module; used to cross-check fields."""
    return float(np.max(gc_values(A, U)))
