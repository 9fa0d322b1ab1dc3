"""Pure NumPy backward sweep; reference twin of ``_kernels.pyx``.

Both implementations evaluate every floating point expression in the same
order so that they agree to the last bit on IEEE hardware.
"""
import numpy as np


def backward_sweep(u_T, nt, dt, dx, half_a, jidx, jw0, jw1, W, store):
    """Run ``nt`` explicit monotone steps backwards from ``u_T``.

    Parameters
    ----------
    u_T : (B, nx) float64
        Terminal layers, one row per independent problem.
    half_a : (nq,) float64
        ``sigma_q^2 / 2`` for each volatility in the family.
    jidx, jw0, jw1 : (m, nx)
        Left interpolation node and weights of ``x_i + z_j`` (constant
        extension outside the grid).
    W : (nv, m) float64
        Measure weights on the common support.
    store : bool
        Keep every layer (returns ``(nt + 1, B, nx)``) or only the first.
    """
    u = np.array(u_T, dtype=np.float64, copy=True)
    inv = 1.0 / (dx * dx)
    nv, m = W.shape
    out = None
    if store:
        out = np.empty((nt + 1,) + u.shape)
        out[nt] = u
    lap = np.empty_like(u)
    for k in range(nt - 1, -1, -1):
        lap[:, 1:-1] = (u[:, :-2] - 2.0 * u[:, 1:-1] + u[:, 2:]) * inv
        lap[:, 0] = (u[:, 0] - 2.0 * u[:, 0] + u[:, 1]) * inv
        lap[:, -1] = (u[:, -2] - 2.0 * u[:, -1] + u[:, -1]) * inv
        gc = half_a[0] * lap
        for q in range(1, half_a.shape[0]):
            np.maximum(gc, half_a[q] * lap, out=gc)
        if nv:
            diffs = u[:, jidx] * jw0 + u[:, jidx + 1] * jw1 - u[:, None, :]
            gd = None
            for v in range(nv):
                s = np.zeros_like(u)
                for j in range(m):
                    s = s + W[v, j] * diffs[:, j, :]
                gd = s if gd is None else np.maximum(gd, s)
            u = u + dt * (gc + gd)
        else:
            u = u + dt * (gc + 0.0)
        if store:
            out[k] = u
    return out if store else u
