"""Payoffs built from a small vocabulary of primitives.

Each node knows its value range (interval arithmetic), a Lipschitz constant
and whether it is C^2.  Payoffs are parsed from JSON ASTs such as::

    {"clip": {"sq": {"var": 0}}, "lo": 0, "hi": 100}
    {"lin": [[1.0, {"var": 0}], [-0.5, {"abs": {"var": 1}}]], "const": 2}

Variables index the increments ``X_{t_1}, X_{t_2} - X_{t_1}, ...`` of a
cylinder functional, or the jump size for mark functions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigError

INF = math.inf


def _mul_interval(c: float, lo: float, hi: float):
    if c == 0:
        return 0.0, 0.0
    a, b = c * lo, c * hi
    return (a, b) if a <= b else (b, a)


class Payoff:
    """Base node.  ``eval(X)`` takes an array whose last axis holds variables."""

    lo: float
    hi: float
    lipschitz: float
    smooth: bool

    def eval(self, X: np.ndarray) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError

    def to_json(self):  # pragma: no cover - abstract
        raise NotImplementedError

    @property
    def bound(self) -> float:
        return max(abs(self.lo), abs(self.hi))

    @property
    def nvars(self) -> int:
        return max(self._vars(), default=-1) + 1

    def _vars(self) -> set:
        return set()

    def __call__(self, x):
        """Evaluate a one-variable payoff on an array of points."""
        x = np.asarray(x, dtype=float)
        return self.eval(x[..., None])

    def __repr__(self):
        return f"Payoff({self.to_json()})"


class Const(Payoff):
    def __init__(self, c: float):
        self.c = float(c)
        self.lo = self.hi = self.c
        self.lipschitz = 0.0
        self.smooth = True

    def eval(self, X):
        return np.full(np.shape(X)[:-1], self.c)

    def to_json(self):
        return self.c


class Var(Payoff):
    def __init__(self, index: int):
        self.index = int(index)
        self.lo, self.hi = -INF, INF
        self.lipschitz = 1.0
        self.smooth = True

    def eval(self, X):
        return np.asarray(X, dtype=float)[..., self.index]

    def _vars(self):
        return {self.index}

    def to_json(self):
        return {"var": self.index}


class Lin(Payoff):
    def __init__(self, terms, const: float = 0.0):
        self.terms = [(float(c), e) for c, e in terms]
        self.const = float(const)
        lo = hi = self.const
        for c, e in self.terms:
            a, b = _mul_interval(c, e.lo, e.hi)
            lo, hi = lo + a, hi + b
        self.lo, self.hi = lo, hi
        self.lipschitz = sum(abs(c) * e.lipschitz for c, e in self.terms)
        self.smooth = all(e.smooth for _, e in self.terms)

    def eval(self, X):
        out = np.full(np.shape(X)[:-1], self.const)
        for c, e in self.terms:
            out = out + c * e.eval(X)
        return out

    def _vars(self):
        return set().union(*(e._vars() for _, e in self.terms))

    def to_json(self):
        return {"lin": [[c, e.to_json()] for c, e in self.terms], "const": self.const}


class Sq(Payoff):
    def __init__(self, arg: Payoff):
        self.arg = arg
        m = max(abs(arg.lo), abs(arg.hi))
        self.lo = 0.0 if arg.lo <= 0 <= arg.hi else min(arg.lo ** 2, arg.hi ** 2)
        self.hi = m * m
        self.lipschitz = 2.0 * m * arg.lipschitz if arg.lipschitz else 0.0
        self.smooth = arg.smooth

    def eval(self, X):
        y = self.arg.eval(X)
        return y * y

    def _vars(self):
        return self.arg._vars()

    def to_json(self):
        return {"sq": self.arg.to_json()}


class Abs(Payoff):
    def __init__(self, arg: Payoff):
        self.arg = arg
        self.hi = max(abs(arg.lo), abs(arg.hi))
        self.lo = 0.0 if arg.lo <= 0 <= arg.hi else min(abs(arg.lo), abs(arg.hi))
        self.lipschitz = arg.lipschitz
        self.smooth = False

    def eval(self, X):
        return np.abs(self.arg.eval(X))

    def _vars(self):
        return self.arg._vars()

    def to_json(self):
        return {"abs": self.arg.to_json()}


class Clip(Payoff):
    def __init__(self, arg: Payoff, lo: float = -INF, hi: float = INF):
        if lo > hi:
            raise ConfigError(f"clip bounds reversed: [{lo}, {hi}]")
        self.arg, self.a, self.b = arg, float(lo), float(hi)
        self.lo = min(max(arg.lo, self.a), self.b)
        self.hi = max(min(arg.hi, self.b), self.a)
        lip = arg.lipschitz
        if isinstance(arg, Sq) and math.isfinite(self.b):
            # the square is only active where |inner| <= sqrt(hi)
            inner = arg.arg
            lip = min(lip, 2.0 * math.sqrt(max(self.b, 0.0)) * inner.lipschitz)
        self.lipschitz = lip
        self.smooth = False

    def eval(self, X):
        return np.clip(self.arg.eval(X), self.a, self.b)

    def _vars(self):
        return self.arg._vars()

    def to_json(self):
        out = {"clip": self.arg.to_json()}
        if math.isfinite(self.a):
            out["lo"] = self.a
        if math.isfinite(self.b):
            out["hi"] = self.b
        return out


class MinMax(Payoff):
    def __init__(self, kind: str, args):
        if kind not in ("min", "max") or not args:
            raise ConfigError(f"bad {kind} node")
        self.kind, self.args = kind, list(args)
        f = min if kind == "min" else max
        self.lo = f(a.lo for a in self.args)
        self.hi = f(a.hi for a in self.args)
        self.lipschitz = max(a.lipschitz for a in self.args)
        self.smooth = False

    def eval(self, X):
        vals = [a.eval(X) for a in self.args]
        red = np.minimum if self.kind == "min" else np.maximum
        out = vals[0]
        for v in vals[1:]:
            out = red(out, v)
        return out

    def _vars(self):
        return set().union(*(a._vars() for a in self.args))

    def to_json(self):
        return {self.kind: [a.to_json() for a in self.args]}


class Gauss(Payoff):
    """Smooth bump ``exp(-(x/width)^2)`` with values in (0, 1]."""

    def __init__(self, arg: Payoff, width: float = 1.0):
        if width <= 0:
            raise ConfigError("gauss width must be positive")
        self.arg, self.width = arg, float(width)
        self.lo, self.hi = 0.0, 1.0
        self.lipschitz = math.sqrt(2.0 / math.e) / self.width * arg.lipschitz
        self.smooth = arg.smooth

    def eval(self, X):
        y = self.arg.eval(X) / self.width
        return np.exp(-y * y)

    def _vars(self):
        return self.arg._vars()

    def to_json(self):
        return {"gauss": self.arg.to_json(), "width": self.width}


def parse(node) -> Payoff:
    """Build a payoff tree from its JSON form."""
    if isinstance(node, Payoff):
        return node
    if isinstance(node, (int, float)) and not isinstance(node, bool):
        return Const(node)
    if not isinstance(node, dict):
        raise ConfigError(f"cannot parse payoff node {node!r}")
    try:
        if "var" in node:
            return Var(node["var"])
        if "const" in node and len(node) == 1:
            return Const(node["const"])
        if "lin" in node:
            return Lin([(c, parse(e)) for c, e in node["lin"]], node.get("const", 0.0))
        if "sq" in node:
            return Sq(parse(node["sq"]))
        if "abs" in node:
            return Abs(parse(node["abs"]))
        if "clip" in node:
            return Clip(parse(node["clip"]), node.get("lo", -INF), node.get("hi", INF))
        if "min" in node:
            return MinMax("min", [parse(e) for e in node["min"]])
        if "max" in node:
            return MinMax("max", [parse(e) for e in node["max"]])
        if "gauss" in node:
            return Gauss(parse(node["gauss"]), node.get("width", 1.0))
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"bad payoff node {node!r}: {exc}") from exc
    raise ConfigError(f"unknown payoff primitive in {node!r}")


@dataclass(frozen=True)
class TerminalFunction:
    """Bounded Lipschitz terminal condition of the backward equation.

    ``func`` maps an array of points to an array of values.  ``smooth`` is
    True for C^2_b data; Lipschitz-only data is mollified before solving,
    with width ``eps`` when it is set.
    """

    func: Callable[[np.ndarray], np.ndarray]
    lipschitz: float
    bound: float
    smooth: bool = False
    label: str = ""
    eps: float | None = None

    def __call__(self, x):
        return np.asarray(self.func(np.asarray(x, dtype=float)), dtype=float)

    @classmethod
    def from_payoff(cls, p: Payoff) -> "TerminalFunction":
        if p.nvars > 1:
            raise ConfigError("a terminal function must depend on one variable")
        return cls(p.__call__, p.lipschitz, p.bound, p.smooth, label=str(p.to_json()))

    @classmethod
    def constant(cls, c: float) -> "TerminalFunction":
        return cls(lambda x: np.full(np.shape(x), float(c)), 0.0, abs(float(c)), True, f"const {c}")

    def spot_check(self, x: np.ndarray, rtol: float = 1e-9) -> bool:
        """Check the declared bound and Lipschitz constant on sample points."""
        x = np.sort(np.asarray(x, dtype=float))
        v = self(x)
        if np.any(np.abs(v) > self.bound * (1 + rtol) + rtol):
            return False
        dx = np.diff(x)
        slopes = np.abs(np.diff(v))[dx > 0] / dx[dx > 0]
        return bool(np.all(slopes <= self.lipschitz * (1 + rtol) + rtol))
