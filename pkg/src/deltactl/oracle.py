"""Brute-force grid semantics for low-dimensional sentences.

This is deliberately naive: quantifiers become max/min over a uniform grid,
atoms become ``t - shift`` evaluated in floating point, and flows are
integrated with classical RK4.  It shares no code with the interval engine
or the solver and exists to catch contract violations in tests.  It is an
approximation and must never be used to produce verdicts.
"""

from __future__ import annotations

import math
from fractions import Fraction
from functools import lru_cache
from typing import Dict, Sequence

from .formula import And, Atom, Const, Exists, Flow, Formula, Or, Term, Var, _Quantifier, is_normal, normalize_nnf, to_fraction
from .ode import OdeSystem

MAX_DIMENSION = 3


def rk4(system: OdeSystem, x0: Sequence[float], t: float, steps_per_unit: int = 1000) -> list:
    """Fixed-step RK4 solution of ``system`` at time ``t`` (not validated)."""
    t = float(t)
    if t < 0:
        raise ValueError("negative time")
    n = max(1, math.ceil(t * steps_per_unit))
    h = t / n
    names = system.states
    fns = [_float_fn(g, None) for g in system.field]

    def f(x):
        env = dict(zip(names, x))
        return [g(env) for g in fns]

    x = [float(v) for v in x0]
    for _ in range(n):
        k1 = f(x)
        k2 = f([a + 0.5 * h * b for a, b in zip(x, k1)])
        k3 = f([a + 0.5 * h * b for a, b in zip(x, k2)])
        k4 = f([a + h * b for a, b in zip(x, k3)])
        x = [a + h / 6 * (p + 2 * q + 2 * r + s) for a, p, q, r, s in zip(x, k1, k2, k3, k4)]
    return x


class _FlowEval:
    def __init__(self, steps_per_unit: int):
        self.steps = steps_per_unit
        self._cached = lru_cache(maxsize=65536)(self._eval)

    def _eval(self, system, init, time):
        return tuple(rk4(system, init, time, self.steps))

    def __call__(self, system, init, time, index):
        return self._cached(system, tuple(float(v) for v in init), float(time))[index]


_FLOAT_OPS = {
    "neg": lambda a: -a,
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "div": lambda a, b: a / b,
    "pow": lambda a, b: a ** int(b),
    "abs": abs,
    "min": min,
    "max": max,
    "sqrt": math.sqrt,
    "exp": math.exp,
    "log": math.log,
    "sin": math.sin,
    "cos": math.cos,
}


def _float_fn(t: Term, flows: _FlowEval):
    """Closure computing ``t`` in floating point from a dict of floats."""
    if isinstance(t, Const):
        c = float(t.value)
        return lambda env: c
    if isinstance(t, Var):
        name = t.name
        return lambda env: env[name]
    if isinstance(t, Flow):
        inits = [_float_fn(a, flows) for a in t.init]
        time = _float_fn(t.time, flows)
        sys_, idx = t.system, t.index
        return lambda env: flows(sys_, [f(env) for f in inits], time(env), idx)
    fn = _FLOAT_OPS[t.op]
    args = [_float_fn(a, flows) for a in t.args]
    if len(args) == 1:
        (a,) = args
        return lambda env: fn(a(env))
    a, b = args
    return lambda env: fn(a(env), b(env))


def _grid(lo: Fraction, hi: Fraction, resolution: Fraction) -> list:
    if lo == hi:
        return [float(lo)]
    n = max(1, math.ceil((hi - lo) / resolution))
    return [float(lo + (hi - lo) * i / n) for i in range(n + 1)]


def _dimension(phi: Formula) -> int:
    if isinstance(phi, _Quantifier):
        return 1 + _dimension(phi.body)
    if isinstance(phi, (And, Or)):
        return sum(_dimension(a) for a in phi.args)
    return 0


def robustness(phi: Formula, resolution=Fraction(1, 100), env: Dict[str, float] | None = None, steps_per_unit: int = 1000) -> float:
    """Grid estimate of the robustness value of a sentence.

    Atoms ``t > s`` / ``t >= s`` give ``t - s``; and/or give min/max;
    quantifiers give max/min over the grid.  Positive means true with that
    margin at the grid points.
    """
    if not is_normal(phi):
        phi = normalize_nnf(phi)
    if _dimension(phi) > MAX_DIMENSION:
        raise ValueError(f"grid oracle refuses sentences with more than {MAX_DIMENSION} quantified variables")
    res = to_fraction(resolution)
    if res <= 0:
        raise ValueError("resolution must be positive")
    flows = _FlowEval(steps_per_unit)
    fns: dict = {}

    def go(f: Formula, env: dict) -> float:
        if isinstance(f, Atom):
            fn = fns.get(id(f))
            if fn is None:
                fn = fns[id(f)] = _float_fn(f.term, flows)
            return fn(env) - float(f.shift)
        if isinstance(f, And):
            return min(go(a, env) for a in f.args)
        if isinstance(f, Or):
            return max(go(a, env) for a in f.args)
        pick = max if isinstance(f, Exists) else min
        best = None
        saved = env.get(f.var)
        for v in _grid(f.lo, f.hi, res):
            env[f.var] = v
            r = go(f.body, env)
            best = r if best is None else pick(best, r)
        if saved is None:
            env.pop(f.var, None)
        else:
            env[f.var] = saved
        return best

    return go(phi, {k: float(v) for k, v in (env or {}).items()})


def grid_oracle(phi: Formula, resolution=Fraction(1, 100), steps_per_unit: int = 1000) -> bool:
    """``True`` for true-at-grid, ``False`` for false-at-grid.

    Strict atoms need a positive value, non-strict ones a non-negative one.
    """
    if not is_normal(phi):
        phi = normalize_nnf(phi)
    if _dimension(phi) > MAX_DIMENSION:
        raise ValueError(f"grid oracle refuses sentences with more than {MAX_DIMENSION} quantified variables")
    res = to_fraction(resolution)
    flows = _FlowEval(steps_per_unit)
    fns: dict = {}

    def go(f: Formula, env: dict) -> bool:
        if isinstance(f, Atom):
            fn = fns.get(id(f))
            if fn is None:
                fn = fns[id(f)] = _float_fn(f.term, flows)
            v = fn(env)
            s = float(f.shift)
            return v > s if f.strict else v >= s
        if isinstance(f, And):
            return all(go(a, env) for a in f.args)
        if isinstance(f, Or):
            return any(go(a, env) for a in f.args)
        quant = any if isinstance(f, Exists) else all
        return quant(go(f.body, {**env, f.var: v}) for v in _grid(f.lo, f.hi, res))

    return go(phi, {})
