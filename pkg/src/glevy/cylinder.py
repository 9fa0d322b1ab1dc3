"""Sublinear expectations of cylinder functionals by backward iteration.

For ``xi = phi(Y_1, ..., Y_n)`` with increments ``Y_k = X_{t_k} - X_{t_{k-1}}``
the recursion removes the last increment first::

    phi_0 = phi
    phi_s(y_1, ..., y_{n-s}) = E[phi_{s-1}(y_1, ..., y_{n-s}, X_h)],  h = t_{n-s+1} - t_{n-s}

and ``E[xi | F_{t_i}] = phi_{n-i}(Y_1, ..., Y_i)``.  Each ``phi_s`` lives on a
tensor lattice over the earlier increments; the increment being integrated
out always lives on the PDE grid, so a stage is one batched backward sweep
with one row per lattice node.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import GridError, OutOfLatticeRange, PartitionTooLong
from .model import UncertaintySet
from .payoff import Payoff, TerminalFunction, parse
from .pide import Grid, JumpTables, SCHEME_TOL_FLOOR, bump_rule, mollify_rows, prepare_terminal, sweep

N_MAX = 3


@dataclass(frozen=True)
class CylinderFunctional:
    """``phi(X_{t_1}, X_{t_2} - X_{t_1}, ...)`` on a strictly increasing partition."""

    times: tuple
    payoff: Payoff

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        object.__setattr__(self, "times", tuple(float(s) for s in t))
        if t.size < 1:
            raise ValueError("a cylinder functional needs at least one time")
        if t[0] < 0 or np.any(np.diff(t) <= 0):
            raise ValueError("times must satisfy 0 <= t_1 < ... < t_n")
        if self.payoff.nvars > t.size:
            raise ValueError(f"payoff uses {self.payoff.nvars} increments, partition has {t.size}")

    @classmethod
    def from_config(cls, cfg: dict) -> "CylinderFunctional":
        return cls(tuple(cfg["times"]), parse(cfg["payoff"]))

    @property
    def n(self) -> int:
        return len(self.times)

    @property
    def horizons(self) -> np.ndarray:
        return np.diff(np.concatenate([[0.0], self.times]))

    @property
    def lipschitz(self) -> float:
        return self.payoff.lipschitz

    @property
    def bound(self) -> float:
        return self.payoff.bound

    @property
    def smooth(self) -> bool:
        return self.payoff.smooth

    def __call__(self, Y) -> np.ndarray:
        """Evaluate on increments; the last axis of ``Y`` runs over ``1..n``."""
        Y = np.asarray(Y, dtype=float)
        if Y.shape[-1] < self.n:
            raise ValueError("not enough increments")
        return self.payoff.eval(Y)


@dataclass(frozen=True)
class Lattice:
    """Uniform nodes ``linspace(-radius, radius, nx)`` on each earlier increment."""

    radius: float = 3.0
    nx: int = 81

    def __post_init__(self):
        if self.radius <= 0 or self.nx < 3:
            raise GridError("lattice needs radius > 0 and at least 3 nodes")

    @classmethod
    def default_for(cls, grid: Grid) -> "Lattice":
        r = grid.report_radius or 0.5 * min(-grid.x_min, grid.x_max)
        return cls(radius=float(r))

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(-self.radius, self.radius, self.nx)

    @property
    def spacing(self) -> float:
        return 2.0 * self.radius / (self.nx - 1)


@dataclass
class MartingaleLattice:
    """Every stage of the recursion.

    ``phi[i]`` holds ``phi_{n-i}`` on ``lattice ** i`` (``phi[0]`` is the
    scalar ``E[xi]``); ``phi[n]`` is ``xi`` sampled on the lattice.
    ``start_layers[k]`` holds ``u(t_{k-1}, x)`` for interval ``k`` over the
    PDE grid, one row per lattice node of the ``k - 1`` earlier increments.
    """

    xi: CylinderFunctional
    lattice: Lattice
    grid: Grid
    phi: list
    start_layers: list
    interpolation_tol: float = 0.0
    scheme_tol: float | None = None
    _interp: dict = field(default_factory=dict, repr=False)

    @property
    def value(self) -> float:
        return float(self.phi[0])

    def conditional(self, i: int, observed) -> float:
        """``E[xi | F_{t_i}]`` at the observed increments ``Y_1..Y_i``."""
        n = self.xi.n
        if not 0 <= i <= n:
            raise IndexError(f"index {i} outside 0..{n}")
        y = np.asarray(observed, dtype=float).reshape(-1)
        if y.size < i:
            raise ValueError(f"need {i} observed increments")
        y = y[:i]
        if i == 0:
            return self.value
        if i == n:
            return float(self.xi(y))
        if np.any(np.abs(y) > self.lattice.radius * (1 + 1e-12)):
            raise OutOfLatticeRange(f"increments {y} outside [-{self.lattice.radius}, {self.lattice.radius}]")
        return float(self._interpolator(i)(np.clip(y, -self.lattice.radius, self.lattice.radius)[None])[0])

    def conditional_batch(self, i: int, Y: np.ndarray) -> np.ndarray:
        """Vectorised :meth:`conditional` over rows of ``Y``; values outside the lattice are clamped."""
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        if i == 0:
            return np.full(Y.shape[0], self.value)
        if i == self.xi.n:
            return self.xi(Y)
        r = self.lattice.radius
        return self._interpolator(i)(np.clip(Y[:, :i], -r, r))

    def _interpolator(self, i: int):
        if i not in self._interp:
            axes = (self.lattice.nodes,) * i
            self._interp[i] = RegularGridInterpolator(axes, self.phi[i], method="linear")
        return self._interp[i]

    def layer_bound(self) -> float:
        """Largest ``|phi_s|`` over all computed stages."""
        return max(float(np.max(np.abs(p))) for p in self.phi)


def _stage_terminal(xi: CylinderFunctional, prev, y_outer: np.ndarray, lat: Lattice,
                    grid: Grid, first: bool) -> np.ndarray:
    """Terminal rows (one per outer lattice node) on the PDE grid."""
    x = grid.x
    if first:
        B, k = y_outer.shape
        Y = np.empty((B, x.size, xi.n))
        Y[:, :, :k] = y_outer[:, None, :]
        Y[:, :, k] = x[None, :]
        if xi.smooth:
            return xi(Y)
        # same rule as prepare_terminal, applied along the PDE axis
        return _mollify_sampled(xi, y_outer, x, 2.0 * grid.dx)
    return mollify_rows(prev, lat.nodes, x, lat.spacing)


def _mollify_sampled(xi: CylinderFunctional, y_outer: np.ndarray, x: np.ndarray, eps: float) -> np.ndarray:
    B, k = y_outer.shape

    def ev(pts):
        Y = np.empty((B, pts.size, xi.n))
        Y[:, :, :k] = y_outer[:, None, :]
        Y[:, :, k] = pts[None, :]
        return xi(Y)

    base = ev(x)
    kern, nodes = bump_rule()
    acc = np.zeros_like(base)
    for c, s in zip(kern, eps * nodes):
        acc = acc + c * (ev(x - s) - base)
    return base + acc


def _at_origin(layer: np.ndarray, grid: Grid) -> np.ndarray:
    return np.array([np.interp(0.0, grid.x, row) for row in layer])


def martingale_lattice(U: UncertaintySet, xi: CylinderFunctional, grid: Grid,
                       lattice: Lattice | None = None, n_max: int = N_MAX,
                       estimate_interp: bool = True) -> MartingaleLattice:
    """Run the backward recursion and keep every stage."""
    n = xi.n
    if n > n_max:
        raise PartitionTooLong(f"n = {n} exceeds n_max = {n_max}")
    grid.check_domain(U)
    lat = lattice or Lattice.default_for(grid)
    nodes = lat.nodes
    tables = JumpTables.build(grid, U)
    h = xi.horizons
    phi: list = [None] * (n + 1)
    starts: list = [None] * (n + 1)
    interp_tol = 0.0

    def outer_nodes(k, last=None):
        axes = [nodes] * k
        if last is not None and k:
            axes[-1] = last
        if k == 0:
            return np.zeros((1, 0))
        return np.array(list(itertools.product(*axes)), dtype=float)

    phi[n] = xi(outer_nodes(n).reshape((lat.nx,) * n + (n,)))
    prev = None
    for s in range(1, n + 1):
        k = n - s                      # number of earlier increments still observed
        y_outer = outer_nodes(k)
        u_T = _stage_terminal(xi, prev, y_outer, lat, grid, first=(s == 1))
        nt, dt = grid.steps(U, h[k])
        u0 = sweep(U, grid, tables, u_T, nt, dt, store=False)
        starts[k + 1] = u0
        vals = _at_origin(u0, grid)
        if estimate_interp and k >= 1:
            mids = 0.5 * (nodes[1:] + nodes[:-1])
            y_mid = outer_nodes(k, last=mids)
            prev_mid = None
            if s > 1:
                # earlier stage interpolated linearly in its last observed increment
                full = prev.reshape((lat.nx,) * (k + 1))
                prev_mid = 0.5 * (np.take(full, range(1, lat.nx), axis=k - 1)
                                  + np.take(full, range(lat.nx - 1), axis=k - 1)).reshape(-1, lat.nx)
            u_mid = sweep(U, grid, tables, _stage_terminal(xi, prev_mid, y_mid, lat, grid, first=(s == 1)),
                          nt, dt, store=False)
            exact = _at_origin(u_mid, grid).reshape((lat.nx,) * (k - 1) + (lat.nx - 1,))
            coarse = vals.reshape((lat.nx,) * k)
            lin = 0.5 * (coarse[..., 1:] + coarse[..., :-1])
            interp_tol += float(np.max(np.abs(exact - lin)))
        if k == 0:
            phi[0] = float(vals[0])
        else:
            phi[k] = vals.reshape((lat.nx,) * k)
            prev = vals.reshape(-1, lat.nx)
    return MartingaleLattice(xi, lat, grid, phi, starts, interpolation_tol=interp_tol)


def expect(U: UncertaintySet, xi: CylinderFunctional, grid: Grid, lattice: Lattice | None = None,
           n_max: int = N_MAX) -> float:
    """``E[xi]``; for ``n = 1`` identical to ``solve_backward`` over ``[0, t_1]`` at ``x = 0``."""
    return martingale_lattice(U, xi, grid, lattice, n_max, estimate_interp=False).value


def conditional_expect(U: UncertaintySet, xi: CylinderFunctional, i: int, observed, grid: Grid,
                       lattice: Lattice | None = None, lat: MartingaleLattice | None = None) -> float:
    """``E[xi | F_{t_i}]`` at the observed increments (reuses ``lat`` when given)."""
    lat = lat or martingale_lattice(U, xi, grid, lattice, estimate_interp=False)
    return lat.conditional(i, observed)


def scheme_tol(U: UncertaintySet, xi: CylinderFunctional, grid: Grid, lattice: Lattice | None = None,
               value: float | None = None) -> float:
    """``|E[xi]`` on the grid minus ``E[xi]`` on the half-resolution grid``|``."""
    fine = expect(U, xi, grid, lattice) if value is None else value
    coarse = expect(U, xi, grid.coarsened(), lattice)
    return max(abs(fine - coarse), SCHEME_TOL_FLOOR)


def terminal_of(xi: CylinderFunctional) -> TerminalFunction:
    """The one-variable terminal function of an ``n = 1`` functional."""
    if xi.n != 1:
        raise ValueError("only n = 1 functionals reduce to a terminal function")
    return TerminalFunction.from_payoff(xi.payoff)


def lattice_functional(ml: MartingaleLattice, i: int) -> TerminalFunction:
    """``x -> E[xi | F_{t_1}]`` at ``Y_1 = x`` for ``i = 1`` as a terminal function.

    The function is piecewise linear on the lattice, so its preferred
    mollification width is the lattice spacing (matching the recursion).
    """
    if i != 1:
        raise ValueError("only the first conditional layer is one-dimensional")
    nodes, vals = ml.lattice.nodes, np.asarray(ml.phi[1], dtype=float)
    lip = float(np.max(np.abs(np.diff(vals))) / ml.lattice.spacing) if vals.size > 1 else 0.0
    return TerminalFunction(lambda x: np.interp(x, nodes, vals), lip, float(np.max(np.abs(vals))),
                            smooth=False, label="conditional layer 1", eps=ml.lattice.spacing)


def tower_gap(U: UncertaintySet, ml: MartingaleLattice) -> float:
    """``|E[E[xi | F_{t_1}]] - E[xi]|`` with the inner layer re-fed as an ``n = 1`` problem."""
    f = lattice_functional(ml, 1)
    grid = ml.grid
    phi = prepare_terminal(f, grid)
    nt, dt = grid.steps(U, ml.xi.times[0])
    u0 = sweep(U, grid, JumpTables.build(grid, U), phi(grid.x)[None], nt, dt, store=False)
    return abs(float(np.interp(0.0, grid.x, u0[0])) - ml.value)
