"""Controls ``theta = (theta^d, 0, theta^c)`` realised as index choices.

A control picks, for every path and mesh step, one measure of the jump family
(``v``) and one volatility (``q``).  The drift slot is always zero.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import UncertaintySet


@dataclass(frozen=True)
class ConstantPolicy:
    """The same ``(v_index, q_index)`` at all times; ``v_index`` None only when jump-free."""

    v_index: int | None
    q_index: int

    def validate(self, U: UncertaintySet):
        if not 0 <= self.q_index < len(U.vols):
            raise ValueError(f"q_index {self.q_index} out of range")
        if U.jump_free:
            if self.v_index is not None:
                raise ValueError("jump-free model takes v_index=None")
        elif self.v_index is None or not 0 <= self.v_index < len(U.measures):
            raise ValueError(f"v_index {self.v_index} out of range")

    def select(self, t: float, x: np.ndarray, ctx=None):
        n = x.shape[0]
        v = None if self.v_index is None else np.full(n, self.v_index, dtype=np.int64)
        return v, np.full(n, self.q_index, dtype=np.int64)

    @property
    def name(self) -> str:
        return f"const(v={self.v_index},q={self.q_index})"


@dataclass(frozen=True)
class GridPolicy:
    """Feedback table indexed by PDE time interval and nearest space node.

    ``q_idx`` and ``v_idx`` have shape (nt, nx); row k is used on
    ``[t_k, t_{k+1})``.
    """

    times: np.ndarray
    x: np.ndarray
    q_idx: np.ndarray
    v_idx: np.ndarray | None
    label: str = "greedy"

    def validate(self, U: UncertaintySet):
        if self.q_idx.min() < 0 or self.q_idx.max() >= len(U.vols):
            raise ValueError("q indices out of range")
        if (self.v_idx is None) != U.jump_free:
            raise ValueError("v table must be present iff the model has jumps")
        if self.v_idx is not None and (self.v_idx.min() < 0 or self.v_idx.max() >= len(U.measures)):
            raise ValueError("v indices out of range")

    def _cell(self, t: float, x: np.ndarray):
        nt = self.q_idx.shape[0]
        dt = self.times[1] - self.times[0] if nt else 1.0
        k = min(max(int(np.floor((t - self.times[0]) / dt + 1e-9)), 0), nt - 1)
        dx = self.x[1] - self.x[0]
        i = np.clip(np.rint((x - self.x[0]) / dx).astype(np.int64), 0, self.x.size - 1)
        return k, i

    def select(self, t: float, x: np.ndarray, ctx=None):
        k, i = self._cell(t, x)
        v = None if self.v_idx is None else self.v_idx[k, i]
        return v, self.q_idx[k, i]

    @property
    def name(self) -> str:
        return self.label


def constant_policies(U: UncertaintySet) -> list[ConstantPolicy]:
    """Every constant control of the family, in (v, q) list order."""
    vs = [None] if U.jump_free else list(range(len(U.measures)))
    return [ConstantPolicy(v, q) for v in vs for q in range(len(U.vols))]
