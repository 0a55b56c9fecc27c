"""Terms and normal-form formulas over the reals.

A formula in normal form is built from atoms ``t > s`` / ``t >= s`` (``s`` a
rational shift, zero unless the formula was strengthened or weakened),
conjunction, disjunction and bounded quantifiers.  Raw input may also use
negation, implication and the comparisons ``= != < <=``; ``normalize_nnf``
compiles those away.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Callable, Iterable, Mapping, Optional, Union

Number = Union[int, Fraction]

UNARY = ("neg", "abs", "sqrt", "exp", "log", "sin", "cos")
BINARY = ("add", "sub", "mul", "div", "min", "max", "pow")
LIBRARY = frozenset(UNARY + BINARY)
SMOOTH = frozenset(("neg", "add", "sub", "mul", "div", "pow", "sqrt", "exp", "log", "sin", "cos"))


class FormulaError(ValueError):
    pass


class UnboundedQuantifier(FormulaError):
    pass


class UndeclaredVariable(FormulaError, NameError):
    pass


class NonSmoothTerm(FormulaError):
    pass


def to_fraction(value) -> Fraction:
    """Exact rational from int, Fraction, decimal string or float."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise TypeError("booleans are not numbers")
    if isinstance(value, (int, float, str)):
        return Fraction(value)
    raise TypeError(f"cannot convert {value!r} to a rational")


# ---------------------------------------------------------------- terms


class Term:
    __slots__ = ()

    def __add__(self, other):
        return Apply("add", (self, as_term(other)))

    def __radd__(self, other):
        return Apply("add", (as_term(other), self))

    def __sub__(self, other):
        return Apply("sub", (self, as_term(other)))

    def __rsub__(self, other):
        return Apply("sub", (as_term(other), self))

    def __mul__(self, other):
        return Apply("mul", (self, as_term(other)))

    def __rmul__(self, other):
        return Apply("mul", (as_term(other), self))

    def __truediv__(self, other):
        return Apply("div", (self, as_term(other)))

    def __rtruediv__(self, other):
        return Apply("div", (as_term(other), self))

    def __neg__(self):
        return Apply("neg", (self,))

    def __pow__(self, n: int):
        if not isinstance(n, int):
            raise FormulaError("only integer powers are supported")
        return Apply("pow", (self, Const(Fraction(n))))


@dataclass(frozen=True, eq=True)
class Var(Term):
    name: str

    def __str__(self):
        return self.name


@dataclass(frozen=True, eq=True)
class Const(Term):
    value: Fraction

    def __post_init__(self):
        object.__setattr__(self, "value", to_fraction(self.value))

    def __str__(self):
        return format_rational(self.value)


@dataclass(frozen=True, eq=True)
class Apply(Term):
    op: str
    args: tuple

    def __post_init__(self):
        if self.op not in LIBRARY:
            raise FormulaError(f"unknown function symbol {self.op!r}")
        arity = 1 if self.op in UNARY else 2
        if len(self.args) != arity:
            raise FormulaError(f"{self.op} expects {arity} argument(s), got {len(self.args)}")
        if self.op == "pow":
            n = self.args[1]
            if not (isinstance(n, Const) and n.value.denominator == 1):
                raise FormulaError("pow exponent must be an integer constant")
        object.__setattr__(self, "args", tuple(self.args))

    def __str__(self):
        return format_term(self)


@dataclass(frozen=True, eq=True)
class Flow(Term):
    """Component ``index`` of the solution of ``system`` from ``init`` at ``time``."""

    system: Any
    init: tuple
    time: Term
    index: int

    def __post_init__(self):
        object.__setattr__(self, "init", tuple(self.init))
        dim = len(self.system.states)
        if len(self.init) != dim:
            raise FormulaError(f"flow {self.system.name} expects {dim} initial values, got {len(self.init)}")
        if not 0 <= self.index < dim:
            raise FormulaError(f"flow component {self.index} out of range for {self.system.name}")
        for t in self.init + (self.time,):
            if contains_flow(t):
                raise FormulaError("nested flow terms are not supported")

    def __str__(self):
        return format_term(self)


def as_term(x) -> Term:
    if isinstance(x, Term):
        return x
    return Const(to_fraction(x))


def var(name: str) -> Var:
    return Var(name)


def const(value) -> Const:
    return Const(to_fraction(value))


def apply(op: str, *args) -> Apply:
    return Apply(op, tuple(as_term(a) for a in args))


def sin(t):
    return apply("sin", t)


def cos(t):
    return apply("cos", t)


def exp(t):
    return apply("exp", t)


def log(t):
    return apply("log", t)


def sqrt(t):
    return apply("sqrt", t)


def fabs(t):
    return apply("abs", t)


def fmin(a, b):
    return apply("min", a, b)


def fmax(a, b):
    return apply("max", a, b)


def term_vars(t: Term) -> set:
    out: set = set()
    stack = [t]
    while stack:
        u = stack.pop()
        if isinstance(u, Var):
            out.add(u.name)
        elif isinstance(u, Apply):
            stack.extend(u.args)
        elif isinstance(u, Flow):
            stack.extend(u.init)
            stack.append(u.time)
    return out


def contains_flow(t: Term) -> bool:
    if isinstance(t, Flow):
        return True
    if isinstance(t, Apply):
        return any(contains_flow(a) for a in t.args)
    return False


def flow_systems(t: Term, out: Optional[dict] = None) -> dict:
    out = {} if out is None else out
    if isinstance(t, Flow):
        out[t.system.name] = t.system
        for a in t.init:
            flow_systems(a, out)
        flow_systems(t.time, out)
    elif isinstance(t, Apply):
        for a in t.args:
            flow_systems(a, out)
    return out


def substitute(t: Term, mapping: Mapping[str, Term]) -> Term:
    if isinstance(t, Var):
        return mapping.get(t.name, t)
    if isinstance(t, Apply):
        return Apply(t.op, tuple(substitute(a, mapping) for a in t.args))
    if isinstance(t, Flow):
        return Flow(t.system, tuple(substitute(a, mapping) for a in t.init), substitute(t.time, mapping), t.index)
    return t


# ---------------------------------------------------------------- simplifying constructors

ZERO = Const(Fraction(0))
ONE = Const(Fraction(1))


def _is_const(t, value=None):
    return isinstance(t, Const) and (value is None or t.value == value)


def s_neg(a: Term) -> Term:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Apply) and a.op == "neg":
        return a.args[0]
    return Apply("neg", (a,))


def s_add(a: Term, b: Term) -> Term:
    if _is_const(a) and _is_const(b):
        return Const(a.value + b.value)
    if _is_const(a, 0):
        return b
    if _is_const(b, 0):
        return a
    if isinstance(b, Apply) and b.op == "neg":
        return s_sub(a, b.args[0])
    return Apply("add", (a, b))


def s_sub(a: Term, b: Term) -> Term:
    if _is_const(a) and _is_const(b):
        return Const(a.value - b.value)
    if _is_const(b, 0):
        return a
    if _is_const(a, 0):
        return s_neg(b)
    if a == b:
        return ZERO
    return Apply("sub", (a, b))


def s_mul(a: Term, b: Term) -> Term:
    if _is_const(a) and _is_const(b):
        return Const(a.value * b.value)
    if _is_const(a, 0) or _is_const(b, 0):
        return ZERO
    if _is_const(a, 1):
        return b
    if _is_const(b, 1):
        return a
    if _is_const(a, -1):
        return s_neg(b)
    if _is_const(b, -1):
        return s_neg(a)
    # keep constants on the left so that c1*(c2*u) folds
    if _is_const(b):
        a, b = b, a
    if _is_const(a) and isinstance(b, Apply) and b.op == "mul" and _is_const(b.args[0]):
        return s_mul(Const(a.value * b.args[0].value), b.args[1])
    return Apply("mul", (a, b))


def s_div(a: Term, b: Term) -> Term:
    if _is_const(b, 0):
        raise FormulaError("division by the constant 0")
    if _is_const(a) and _is_const(b):
        return Const(a.value / b.value)
    if _is_const(a, 0):
        return ZERO
    if _is_const(b, 1):
        return a
    return Apply("div", (a, b))


def s_pow(a: Term, n: int) -> Term:
    if n == 0:
        return ONE
    if n == 1:
        return a
    if _is_const(a) and (n > 0 or a.value != 0):
        return Const(a.value ** n)
    return Apply("pow", (a, Const(Fraction(n))))


def simplify(t: Term) -> Term:
    """Constant folding and unit/zero identities; the result is equivalent over the reals."""
    if not isinstance(t, Apply):
        if isinstance(t, Flow):
            return Flow(t.system, tuple(simplify(a) for a in t.init), simplify(t.time), t.index)
        return t
    args = [simplify(a) for a in t.args]
    op = t.op
    if op == "neg":
        return s_neg(args[0])
    if op == "add":
        return s_add(*args)
    if op == "sub":
        return s_sub(*args)
    if op == "mul":
        return s_mul(*args)
    if op == "div":
        return s_div(*args)
    if op == "pow":
        return s_pow(args[0], int(args[1].value))
    return Apply(op, tuple(args))


def differentiate(t: Term, name: str) -> Term:
    """Exact symbolic partial derivative of ``t`` with respect to ``name``."""
    if name not in term_vars(t):
        return ZERO
    if isinstance(t, Var):
        return ONE
    if isinstance(t, Flow):
        raise NonSmoothTerm(f"non-smooth term: flow {t.system.name} depends on {name}")
    assert isinstance(t, Apply)
    op, args = t.op, t.args
    if op not in SMOOTH:
        raise NonSmoothTerm(f"non-smooth term: {op} depends on {name}")
    d = lambda u: differentiate(u, name)  # noqa: E731
    if op == "neg":
        return s_neg(d(args[0]))
    if op == "add":
        return s_add(d(args[0]), d(args[1]))
    if op == "sub":
        return s_sub(d(args[0]), d(args[1]))
    if op == "mul":
        u, v = args
        return s_add(s_mul(d(u), v), s_mul(u, d(v)))
    if op == "div":
        u, v = args
        return s_div(s_sub(s_mul(d(u), v), s_mul(u, d(v))), s_pow(v, 2))
    if op == "pow":
        u, n = args[0], int(args[1].value)
        return s_mul(s_mul(Const(Fraction(n)), s_pow(u, n - 1)), d(u))
    u = args[0]
    du = d(u)
    if op == "sqrt":
        return s_div(du, s_mul(Const(2), t))
    if op == "exp":
        return s_mul(du, t)
    if op == "log":
        return s_div(du, u)
    if op == "sin":
        return s_mul(du, Apply("cos", (u,)))
    if op == "cos":
        return s_neg(s_mul(du, Apply("sin", (u,))))
    raise NonSmoothTerm(op)  # pragma: no cover


def gradient(t: Term, names: Iterable[str]) -> dict:
    return {n: differentiate(t, n) for n in names}


# ---------------------------------------------------------------- point evaluation


def evaluate(t: Term, env: Mapping[str, Any], flow_eval: Optional[Callable] = None):
    """Evaluate at a point.

    Rational inputs stay exact through the field operations, ``abs``,
    ``min``/``max`` and integer powers; transcendental functions fall back to
    floats.  Flow terms need ``flow_eval(system, init_values, time, index)``.
    """
    if isinstance(t, Const):
        return t.value
    if isinstance(t, Var):
        try:
            return env[t.name]
        except KeyError:
            raise UndeclaredVariable(f"unbound variable {t.name}") from None
    if isinstance(t, Flow):
        if flow_eval is None:
            raise FormulaError("flow term needs a flow evaluator")
        init = [evaluate(a, env, flow_eval) for a in t.init]
        return flow_eval(t.system, init, evaluate(t.time, env, flow_eval), t.index)
    vals = [evaluate(a, env, flow_eval) for a in t.args]
    op = t.op
    if op == "neg":
        return -vals[0]
    if op == "add":
        return vals[0] + vals[1]
    if op == "sub":
        return vals[0] - vals[1]
    if op == "mul":
        return vals[0] * vals[1]
    if op == "div":
        if vals[1] == 0:
            raise ZeroDivisionError("division by zero")
        return vals[0] / vals[1]
    if op == "pow":
        n = int(vals[1])
        if n < 0 and vals[0] == 0:
            raise ZeroDivisionError("negative power of zero")
        return vals[0] ** n
    if op == "abs":
        return abs(vals[0])
    if op == "min":
        return min(vals)
    if op == "max":
        return max(vals)
    x = float(vals[0])
    return {"sqrt": math.sqrt, "exp": math.exp, "log": math.log, "sin": math.sin, "cos": math.cos}[op](x)


# ---------------------------------------------------------------- formulas


class Formula:
    __slots__ = ()


@dataclass(frozen=True)
class Atom(Formula):
    """``term > shift`` if strict else ``term >= shift``."""

    term: Term
    strict: bool
    shift: Fraction = Fraction(0)

    def __post_init__(self):
        object.__setattr__(self, "term", as_term(self.term))
        object.__setattr__(self, "shift", to_fraction(self.shift))


@dataclass(frozen=True)
class And(Formula):
    args: tuple

    def __post_init__(self):
        object.__setattr__(self, "args", tuple(self.args))


@dataclass(frozen=True)
class Or(Formula):
    args: tuple

    def __post_init__(self):
        object.__setattr__(self, "args", tuple(self.args))


@dataclass(frozen=True)
class _Quantifier(Formula):
    var: str
    lo: Optional[Fraction]
    hi: Optional[Fraction]
    body: Formula

    def __post_init__(self):
        if self.lo is not None:
            object.__setattr__(self, "lo", to_fraction(self.lo))
        if self.hi is not None:
            object.__setattr__(self, "hi", to_fraction(self.hi))
        if self.lo is not None and self.hi is not None and self.lo > self.hi:
            raise FormulaError(f"empty quantifier domain for {self.var}: [{self.lo}, {self.hi}]")

    @property
    def bounded(self) -> bool:
        return self.lo is not None and self.hi is not None


class Exists(_Quantifier):
    pass


class Forall(_Quantifier):
    pass


# raw-only connectives, removed by normalize_nnf


@dataclass(frozen=True)
class Not(Formula):
    arg: Formula


@dataclass(frozen=True)
class Implies(Formula):
    lhs: Formula
    rhs: Formula


@dataclass(frozen=True)
class Compare(Formula):
    op: str
    lhs: Term
    rhs: Term

    OPS = (">", ">=", "<", "<=", "=", "!=")

    def __post_init__(self):
        if self.op not in self.OPS:
            raise FormulaError(f"unknown comparison {self.op!r}")
        object.__setattr__(self, "lhs", as_term(self.lhs))
        object.__setattr__(self, "rhs", as_term(self.rhs))


def gt(a, b) -> Compare:
    return Compare(">", a, b)


def ge(a, b) -> Compare:
    return Compare(">=", a, b)


def lt(a, b) -> Compare:
    return Compare("<", a, b)


def le(a, b) -> Compare:
    return Compare("<=", a, b)


def eq(a, b) -> Compare:
    return Compare("=", a, b)


def _diff(a: Term, b: Term) -> Term:
    if _is_const(b, 0):
        return a
    if _is_const(a, 0):
        return s_neg(b)
    return Apply("sub", (a, b))


def _compare_nnf(op: str, a: Term, b: Term, positive: bool) -> Formula:
    if not positive:
        op = {">": "<=", ">=": "<", "<": ">=", "<=": ">", "=": "!=", "!=": "="}[op]
    if op == ">":
        return Atom(_diff(a, b), True)
    if op == ">=":
        return Atom(_diff(a, b), False)
    if op == "<":
        return Atom(_diff(b, a), True)
    if op == "<=":
        return Atom(_diff(b, a), False)
    if op == "=":
        return And((Atom(_diff(a, b), False), Atom(_diff(b, a), False)))
    return Or((Atom(_diff(a, b), True), Atom(_diff(b, a), True)))


def _negate_atom(a: Atom) -> Atom:
    # not(t > s)  <=>  -t >= -s ;  not(t >= s)  <=>  -t > -s
    return Atom(s_neg(a.term), not a.strict, -a.shift)


def normalize_nnf(phi: Formula, declared: Optional[Iterable[str]] = None) -> Formula:
    """Compile negation, implication and all comparisons into normal form.

    With ``declared`` given, every free variable must be one of those names.
    """

    def go(f: Formula, positive: bool) -> Formula:
        if isinstance(f, Compare):
            return _compare_nnf(f.op, f.lhs, f.rhs, positive)
        if isinstance(f, Atom):
            return f if positive else _negate_atom(f)
        if isinstance(f, Not):
            return go(f.arg, not positive)
        if isinstance(f, Implies):
            parts = (go(f.lhs, not positive), go(f.rhs, positive))
            return Or(parts) if positive else And(parts)
        if isinstance(f, (And, Or)):
            parts = tuple(go(a, positive) for a in f.args)
            keep_and = isinstance(f, And) == positive
            return And(parts) if keep_and else Or(parts)
        if isinstance(f, _Quantifier):
            if not f.bounded:
                raise UnboundedQuantifier(f"bounded quantifiers required (variable {f.var})")
            body = go(f.body, positive)
            is_exists = isinstance(f, Exists) == positive
            return (Exists if is_exists else Forall)(f.var, f.lo, f.hi, body)
        raise FormulaError(f"not a formula: {f!r}")

    out = go(phi, True)
    if declared is not None:
        extra = free_vars(out) - set(declared)
        if extra:
            raise UndeclaredVariable(f"undeclared variable(s): {', '.join(sorted(extra))}")
    return out


def is_normal(phi: Formula) -> bool:
    if isinstance(phi, Atom):
        return True
    if isinstance(phi, (And, Or)):
        return all(is_normal(a) for a in phi.args)
    if isinstance(phi, _Quantifier):
        return phi.bounded and is_normal(phi.body)
    return False


def free_vars(phi: Formula) -> set:
    if isinstance(phi, Atom):
        return term_vars(phi.term)
    if isinstance(phi, Compare):
        return term_vars(phi.lhs) | term_vars(phi.rhs)
    if isinstance(phi, (And, Or)):
        out: set = set()
        for a in phi.args:
            out |= free_vars(a)
        return out
    if isinstance(phi, Not):
        return free_vars(phi.arg)
    if isinstance(phi, Implies):
        return free_vars(phi.lhs) | free_vars(phi.rhs)
    if isinstance(phi, _Quantifier):
        return free_vars(phi.body) - {phi.var}
    raise FormulaError(f"not a formula: {phi!r}")


def check_sentence(phi: Formula) -> Formula:
    """Raise unless ``phi`` is a bounded normal-form sentence; return it."""
    if not is_normal(phi):
        raise FormulaError("formula is not in normal form")
    fv = free_vars(phi)
    if fv:
        raise UndeclaredVariable(f"free variable(s) in sentence: {', '.join(sorted(fv))}")
    return phi


def atoms(phi: Formula) -> list:
    """Atoms in left-to-right order (duplicates kept)."""
    if isinstance(phi, Atom):
        return [phi]
    if isinstance(phi, (And, Or)):
        return [a for arg in phi.args for a in atoms(arg)]
    if isinstance(phi, _Quantifier):
        return atoms(phi.body)
    raise FormulaError("atoms() needs a normal-form formula")


def map_atoms(phi: Formula, fn: Callable[[Atom], Atom]) -> Formula:
    if isinstance(phi, Atom):
        return fn(phi)
    if isinstance(phi, And):
        return And(tuple(map_atoms(a, fn) for a in phi.args))
    if isinstance(phi, Or):
        return Or(tuple(map_atoms(a, fn) for a in phi.args))
    if isinstance(phi, _Quantifier):
        return type(phi)(phi.var, phi.lo, phi.hi, map_atoms(phi.body, fn))
    raise FormulaError("delta variants need a normal-form formula")


def shift_atoms(phi: Formula, amount) -> Formula:
    amount = to_fraction(amount)
    if amount == 0:
        return phi
    return map_atoms(phi, lambda a: Atom(a.term, a.strict, a.shift + amount))


def delta_strengthen(phi: Formula, delta) -> Formula:
    delta = to_fraction(delta)
    if delta < 0:
        raise ValueError("delta must be non-negative")
    return shift_atoms(phi, delta)


def delta_weaken(phi: Formula, delta) -> Formula:
    delta = to_fraction(delta)
    if delta < 0:
        raise ValueError("delta must be non-negative")
    return shift_atoms(phi, -delta)


def holds(phi: Formula, env: Mapping[str, Any], flow_eval=None) -> bool:
    """Truth of a quantifier-free normal-form formula at a point."""
    if isinstance(phi, Atom):
        v = evaluate(phi.term, env, flow_eval)
        return v > phi.shift if phi.strict else v >= phi.shift
    if isinstance(phi, And):
        return all(holds(a, env, flow_eval) for a in phi.args)
    if isinstance(phi, Or):
        return any(holds(a, env, flow_eval) for a in phi.args)
    raise FormulaError("holds() needs a quantifier-free normal-form formula")


def raw_holds(phi: Formula, env: Mapping[str, Any], flow_eval=None) -> bool:
    """Truth of a quantifier-free raw formula at a point (reference semantics)."""
    if isinstance(phi, Compare):
        a = evaluate(phi.lhs, env, flow_eval)
        b = evaluate(phi.rhs, env, flow_eval)
        return {">": a > b, ">=": a >= b, "<": a < b, "<=": a <= b, "=": a == b, "!=": a != b}[phi.op]
    if isinstance(phi, Not):
        return not raw_holds(phi.arg, env, flow_eval)
    if isinstance(phi, Implies):
        return (not raw_holds(phi.lhs, env, flow_eval)) or raw_holds(phi.rhs, env, flow_eval)
    if isinstance(phi, And):
        return all(raw_holds(a, env, flow_eval) for a in phi.args)
    if isinstance(phi, Or):
        return any(raw_holds(a, env, flow_eval) for a in phi.args)
    if isinstance(phi, Atom):
        return holds(phi, env, flow_eval)
    raise FormulaError("raw_holds() needs a quantifier-free formula")


# ---------------------------------------------------------------- prenex form and prefix classes


@dataclass(frozen=True)
class Block:
    """A maximal run of like quantifiers: ``kind`` is 'exists' or 'forall'."""

    kind: str
    vars: tuple  # of (name, lo, hi)

    @property
    def names(self):
        return tuple(v[0] for v in self.vars)


@dataclass(frozen=True)
class Prenex:
    blocks: tuple
    matrix: Formula

    @property
    def variables(self):
        return [v for b in self.blocks for v in b.vars]


def _fresh(name: str, taken: set) -> str:
    i = 1
    while f"{name}_{i}" in taken:
        i += 1
    return f"{name}_{i}"


def _rename(phi: Formula, old: str, new: str) -> Formula:
    m = {old: Var(new)}
    if isinstance(phi, Atom):
        return Atom(substitute(phi.term, m), phi.strict, phi.shift)
    if isinstance(phi, (And, Or)):
        return type(phi)(tuple(_rename(a, old, new) for a in phi.args))
    if isinstance(phi, _Quantifier):
        if phi.var == old:
            return phi
        return type(phi)(phi.var, phi.lo, phi.hi, _rename(phi.body, old, new))
    raise FormulaError("normal form expected")


def to_prenex(phi: Formula) -> Prenex:
    """Hoist quantifiers left to right (renaming clashes), merging like neighbours."""
    taken: set = set()

    def collect(f: Formula):
        if isinstance(f, _Quantifier):
            taken.add(f.var)
            collect(f.body)
        elif isinstance(f, (And, Or)):
            for a in f.args:
                collect(a)
        elif isinstance(f, Atom):
            taken.update(term_vars(f.term))

    collect(phi)
    seen: set = set()

    def go(f: Formula):
        if isinstance(f, Atom):
            return [], f
        if isinstance(f, _Quantifier):
            name, body = f.var, f.body
            if name in seen:
                new = _fresh(name, taken)
                taken.add(new)
                body = _rename(body, name, new)
                name = new
            seen.add(name)
            prefix, matrix = go(body)
            kind = "exists" if isinstance(f, Exists) else "forall"
            return [(kind, name, f.lo, f.hi)] + prefix, matrix
        prefix: list = []
        parts = []
        for a in f.args:
            p, m = go(a)
            prefix += p
            parts.append(m)
        return prefix, type(f)(tuple(parts))

    prefix, matrix = go(phi)
    blocks: list = []
    for kind, name, lo, hi in prefix:
        if blocks and blocks[-1][0] == kind:
            blocks[-1][1].append((name, lo, hi))
        else:
            blocks.append((kind, [(name, lo, hi)]))
    return Prenex(tuple(Block(k, tuple(vs)) for k, vs in blocks), matrix)


def from_prenex(p: Prenex) -> Formula:
    f = p.matrix
    for block in reversed(p.blocks):
        q = Exists if block.kind == "exists" else Forall
        for name, lo, hi in reversed(block.vars):
            f = q(name, lo, hi, f)
    return f


@dataclass(frozen=True)
class PrefixClass:
    kind: str  # "Sigma", "Pi" or "QuantifierFree"
    n: int

    @property
    def label(self) -> str:
        if self.kind == "QuantifierFree":
            return "P^C"
        return f"(({self.kind}_{self.n})^P)^C"

    def __str__(self):
        if self.kind == "QuantifierFree":
            return f"QuantifierFree  {self.label}"
        return f"{self.kind}({self.n})  {self.label}"


def _levels(phi: Formula) -> tuple:
    """Least (sigma, pi) levels whose prenex classes contain ``phi``."""
    if isinstance(phi, Atom):
        return 0, 0
    if isinstance(phi, (And, Or)):
        ls = [_levels(a) for a in phi.args]
        return max(s for s, _ in ls), max(p for _, p in ls)
    if isinstance(phi, _Quantifier):
        s, p = _levels(phi.body)
        if isinstance(phi, Exists):
            s2 = max(1, min(s, p + 1))
            return s2, s2 + 1
        p2 = max(1, min(p, s + 1))
        return p2 + 1, p2
    raise FormulaError("normal form expected")


def classify_prefix(phi: Formula) -> PrefixClass:
    """Quantifier-alternation class of a normal-form sentence.

    Computed from the minimal Sigma/Pi levels, so it does not depend on the
    order of conjuncts or disjuncts.  When both classes tie (a formula that is
    Delta_n) the Sigma reading is reported.
    """
    s, p = _levels(phi)
    if s == 0 and p == 0:
        return PrefixClass("QuantifierFree", 0)
    if p < s:
        return PrefixClass("Pi", p)
    return PrefixClass("Sigma", s)


# ---------------------------------------------------------------- printing


def format_rational(q) -> str:
    q = to_fraction(q)
    if q.denominator == 1:
        return str(q.numerator)
    return f"{q.numerator}/{q.denominator}"


def format_term(t: Term) -> str:
    if isinstance(t, Var):
        return t.name
    if isinstance(t, Const):
        return format_rational(t.value)
    if isinstance(t, Flow):
        inits = " ".join(format_term(a) for a in t.init)
        return f"(flow {t.system.name} ({inits}) {format_term(t.time)} {t.index})"
    sym = {"neg": "-", "add": "+", "sub": "-", "mul": "*", "div": "/"}.get(t.op, t.op)
    return "(" + sym + " " + " ".join(format_term(a) for a in t.args) + ")"


def format_formula(phi: Formula) -> str:
    """S-expression text.  Raw formulas re-parse; atoms print as ``(atom> t s)``."""
    if isinstance(phi, Atom):
        op = "atom>" if phi.strict else "atom>="
        return f"({op} {format_term(phi.term)} {format_rational(phi.shift)})"
    if isinstance(phi, Compare):
        return f"({phi.op} {format_term(phi.lhs)} {format_term(phi.rhs)})"
    if isinstance(phi, And):
        return "(and " + " ".join(format_formula(a) for a in phi.args) + ")"
    if isinstance(phi, Or):
        return "(or " + " ".join(format_formula(a) for a in phi.args) + ")"
    if isinstance(phi, Not):
        return f"(not {format_formula(phi.arg)})"
    if isinstance(phi, Implies):
        return f"(=> {format_formula(phi.lhs)} {format_formula(phi.rhs)})"
    if isinstance(phi, _Quantifier):
        q = "exists" if isinstance(phi, Exists) else "forall"
        lo = format_rational(phi.lo) if phi.lo is not None else "-inf"
        hi = format_rational(phi.hi) if phi.hi is not None else "inf"
        return f"({q} (({phi.var} [{lo} {hi}])) {format_formula(phi.body)})"
    raise FormulaError(f"not a formula: {phi!r}")


def formula_systems(phi: Formula) -> dict:
    out: dict = {}
    if isinstance(phi, Atom):
        flow_systems(phi.term, out)
    elif isinstance(phi, (And, Or)):
        for a in phi.args:
            out.update(formula_systems(a))
    elif isinstance(phi, _Quantifier):
        out.update(formula_systems(phi.body))
    return out


def digest(phi: Formula) -> str:
    """SHA-256 over the canonical text of ``phi`` and every ODE system it uses."""
    parts = [format_formula(phi)]
    for name, sys in sorted(formula_systems(phi).items()):
        parts.append(sys.canonical())
    return hashlib.sha256("\n".join(parts).encode("utf-8")).hexdigest()
