"""Problem files: an S-expression input language and its pretty-printer.

A file holds declarations, assertions and exactly one command::

    (declare-var x [0 2])
    (declare-const k 1/2)
    (declare-ode sys ((x (- (pow x 3)))) :domain ([-2 2]) :horizon 10)
    (declare-plant pl ((y (+ (- y) u))) :input u :domain ([-2 3]))
    (assert (exists ((x [0 2])) (= (* x x) 2)))
    (check-sat :delta 1/100)

Names must be declared (or bound by a quantifier) before use.  Declared
constants are substituted by their values while parsing.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, List, Optional, Tuple

from .control import Plant
from .formula import (
    UNARY,
    And,
    Apply,
    Compare,
    Const,
    Exists,
    Flow,
    Forall,
    Formula,
    FormulaError,
    Implies,
    Not,
    Or,
    Term,
    Var,
    format_formula,
    format_rational,
    format_term,
)
from .ode import OdeSystem
from .sexpr import SExprError, SList, Str, Sym, is_number, parse_number, read_all


class ProblemError(ValueError):
    """A rejected problem file; ``code`` is one of the stable ``E-*`` codes."""

    def __init__(self, code: str, message: str, line: int = 0, col: int = 0):
        where = f"{line}:{col}: " if line else ""
        super().__init__(f"{code} {where}{message}")
        self.code = code
        self.message = message
        self.line = line
        self.col = col


def _syntax(msg, at=None):
    return ProblemError("E-SYNTAX", msg, getattr(at, "line", 0), getattr(at, "col", 0))


def _undeclared(name, at=None):
    return ProblemError("E-UNDECLARED", f"undeclared identifier '{name}'", getattr(at, "line", 0), getattr(at, "col", 0))


def _arity(msg, at=None):
    return ProblemError("E-ARITY", msg, getattr(at, "line", 0), getattr(at, "col", 0))


def _domain(msg, at=None):
    return ProblemError("E-DOMAIN", msg, getattr(at, "line", 0), getattr(at, "col", 0))


# ---------------------------------------------------------------- data model


@dataclass(frozen=True)
class VarDecl:
    name: str
    lo: Fraction
    hi: Fraction


@dataclass(frozen=True)
class ConstDecl:
    name: str
    value: Fraction


@dataclass(frozen=True)
class OdeDecl:
    system: OdeSystem


@dataclass(frozen=True)
class PlantDecl:
    plant: Plant


Declaration = object


@dataclass(frozen=True)
class Command:
    name: str
    options: tuple  # ((keyword, value), ...) in file order

    def get(self, key: str, default=None):
        for k, v in self.options:
            if k == key:
                return v
        return default


@dataclass(frozen=True)
class ProblemFile:
    declarations: tuple
    assertions: tuple
    command: Command

    @property
    def variables(self) -> Dict[str, VarDecl]:
        return {d.name: d for d in self.declarations if isinstance(d, VarDecl)}

    @property
    def systems(self) -> Dict[str, OdeSystem]:
        return {d.system.name: d.system for d in self.declarations if isinstance(d, OdeDecl)}

    @property
    def plants(self) -> Dict[str, Plant]:
        return {d.plant.name: d.plant for d in self.declarations if isinstance(d, PlantDecl)}


# ---------------------------------------------------------------- commands

# option kinds: rational, int, name, onoff, term, formula, interval,
# intervals, terms, rationals, binders
COMMON = {
    "delta": "rational",
    "max-depth": "int",
    "timeout-ms": "int",
    "workers": "int",
    "strict-lyapunov": "onoff",
}

COMMANDS: Dict[str, Dict[str, str]] = {
    "check-sat": {},
    "classify": {},
    "lyapunov-check": {"system": "ode", "V": "term", "region": "intervals", "c": "rational", "r": "rational"},
    "lyapunov-synth": {
        "system": "ode",
        "V": "term",
        "params": "binders",
        "region": "intervals",
        "c": "rational",
        "r": "rational",
    },
    "stability": {"system": "ode", "e": "rational", "T": "rational", "X": "intervals", "r": "rational", "kappa": "rational"},
    "reach": {"system": "ode", "init": "terms", "goal": "terms", "deltas": "rationals", "T": "rational"},
    "pid-tune": {
        "plant": "plant",
        "gains": "binders",
        "reference": "rational",
        "initial": "rationals",
        "spec": "formula",
        "window": "interval",
        "output": "int",
        "step": "rational",
    },
}

REQUIRED = {
    "lyapunov-check": ("system", "V"),
    "lyapunov-synth": ("system", "V", "params"),
    "stability": ("system", "e", "T", "X"),
    "reach": ("system", "init", "goal", "deltas", "T"),
    "pid-tune": ("plant", "gains", "reference", "initial", "spec", "window"),
}

COMPARISONS = (">", ">=", "<", "<=", "=", "!=")
_FUNCTION = {"+": "add", "*": "mul", "/": "div", "^": "pow"}
_FUNCTION.update({op: op for op in ("add", "sub", "mul", "div", "min", "max", "pow") + UNARY})


# ---------------------------------------------------------------- parsing


class _Parser:
    def __init__(self):
        self.decls: List[Declaration] = []
        self.names: Dict[str, str] = {}  # name -> kind
        self.consts: Dict[str, Fraction] = {}
        self.vars: Dict[str, VarDecl] = {}
        self.systems: Dict[str, OdeSystem] = {}
        self.plants: Dict[str, Plant] = {}

    # atoms of the grammar

    def number(self, x) -> Fraction:
        if isinstance(x, Sym) and not isinstance(x, Str) and str(x) in self.consts:
            return self.consts[str(x)]
        if isinstance(x, SList) and len(x) == 2 and x[0] == "-":
            return -self.number(x[1])
        if isinstance(x, SList) and len(x) == 3 and x[0] == "/":
            den = self.number(x[2])
            if den == 0:
                raise _domain("division by zero in a constant", x)
            return self.number(x[1]) / den
        try:
            return parse_number(x)
        except SExprError as e:
            raise ProblemError("E-SYNTAX", e.message, e.line, e.col) from None

    def integer(self, x) -> int:
        q = self.number(x)
        if q.denominator != 1:
            raise _syntax("integer expected", x)
        return int(q)

    def name(self, x) -> str:
        if not isinstance(x, Sym) or isinstance(x, Str) or is_number(x):
            raise _syntax("identifier expected", x)
        return str(x)

    def interval(self, x) -> Tuple[Fraction, Fraction]:
        if not isinstance(x, SList) or not x.square:
            raise _syntax("interval '[lo hi]' expected", x)
        if len(x) != 2:
            raise _syntax("interval needs exactly two bounds", x)
        lo, hi = self.number(x[0]), self.number(x[1])
        if lo > hi:
            raise _domain(f"empty interval [{format_rational(lo)} {format_rational(hi)}]", x)
        return lo, hi

    def seq(self, x, what: str) -> SList:
        if not isinstance(x, SList) or x.square:
            raise _syntax(f"parenthesised list of {what} expected", x)
        return x

    def binders(self, x) -> tuple:
        out = []
        for b in self.seq(x, "binders"):
            b = self.seq(b, "binders")
            if len(b) != 2:
                raise _syntax("binder '(name [lo hi])' expected", b)
            lo, hi = self.interval(b[1])
            out.append((self.name(b[0]), lo, hi))
        if not out:
            raise _syntax("at least one binder expected", x)
        return tuple(out)

    # terms

    def term(self, x, scope) -> Term:
        if isinstance(x, Str):
            raise _syntax("unexpected string", x)
        if isinstance(x, Sym):
            if is_number(x):
                return Const(parse_number(x))
            n = str(x)
            if n in self.consts:
                return Const(self.consts[n])
            if n in scope:
                return Var(n)
            raise _undeclared(n, x)
        if x.square:
            raise _syntax("unexpected interval in a term", x)
        if not x:
            raise _syntax("empty term", x)
        head = x[0]
        if not isinstance(head, Sym) or isinstance(head, Str):
            raise _syntax("function symbol expected", x)
        h = str(head)
        args = x[1:]
        if h == "flow":
            return self.flow(x, scope)
        if h == "-":
            if len(args) == 1:
                return Apply("neg", (self.term(args[0], scope),))
            if len(args) == 2:
                return Apply("sub", (self.term(args[0], scope), self.term(args[1], scope)))
            raise _arity("'-' takes one or two arguments", x)
        if h in ("+", "*") and len(args) >= 2:
            out = self.term(args[0], scope)
            for a in args[1:]:
                out = Apply(_FUNCTION[h], (out, self.term(a, scope)))
            return out
        if h not in _FUNCTION:
            if h in COMPARISONS or h in ("and", "or", "not", "=>", "exists", "forall"):
                raise _syntax(f"formula '{h}' used as a term", head)
            raise _undeclared(h, head)
        op = _FUNCTION[h]
        want = 1 if op in UNARY else 2
        if len(args) != want:
            raise _arity(f"'{h}' expects {want} argument(s), got {len(args)}", x)
        if op == "pow":
            base = self.term(args[0], scope)
            n = self.number(args[1])
            if n.denominator != 1:
                raise _domain("pow exponent must be an integer", args[1])
            return Apply("pow", (base, Const(n)))
        return Apply(op, tuple(self.term(a, scope) for a in args))

    def flow(self, x, scope) -> Flow:
        if len(x) != 5:
            raise _arity("flow expects (flow system (init ...) time index)", x)
        name = self.name(x[1])
        sys = self.systems.get(name)
        if sys is None:
            raise _undeclared(name, x[1])
        init = self.seq(x[2], "initial values")
        if len(init) != len(sys.states):
            raise _arity(f"flow {name} expects {len(sys.states)} initial value(s), got {len(init)}", x[2])
        idx = self.integer(x[4])
        if not 0 <= idx < len(sys.states):
            raise _arity(f"flow component {idx} out of range for {name}", x[4])
        try:
            return Flow(sys, tuple(self.term(a, scope) for a in init), self.term(x[3], scope), idx)
        except FormulaError as e:
            raise _syntax(str(e), x) from None

    # formulas

    def formula(self, x, scope) -> Formula:
        if not isinstance(x, SList) or x.square or not x:
            raise _syntax("formula expected", x)
        head = x[0]
        h = str(head) if isinstance(head, Sym) else ""
        args = x[1:]
        if h in COMPARISONS:
            if len(args) != 2:
                raise _arity(f"'{h}' expects 2 arguments, got {len(args)}", x)
            return Compare(h, self.term(args[0], scope), self.term(args[1], scope))
        if h in ("and", "or"):
            if len(args) < 1:
                raise _arity(f"'{h}' expects at least one argument", x)
            parts = tuple(self.formula(a, scope) for a in args)
            return (And if h == "and" else Or)(parts)
        if h == "not":
            if len(args) != 1:
                raise _arity("'not' expects 1 argument", x)
            return Not(self.formula(args[0], scope))
        if h == "=>":
            if len(args) != 2:
                raise _arity("'=>' expects 2 arguments", x)
            return Implies(self.formula(args[0], scope), self.formula(args[1], scope))
        if h in ("exists", "forall"):
            if len(args) != 2:
                raise _arity(f"'{h}' expects a binder list and a body", x)
            bs = self.binders(args[0])
            inner = set(scope) | {n for n, _, _ in bs}
            body = self.formula(args[1], inner)
            q = Exists if h == "exists" else Forall
            for n, lo, hi in reversed(bs):
                body = q(n, lo, hi, body)
            return body
        if h in _FUNCTION or h in ("-", "flow"):
            raise _syntax(f"term '{h}' used as a formula", head)
        raise _undeclared(h or "?", head)

    # top level

    def declare(self, name: str, kind: str, at):
        if name in self.names:
            raise _syntax(f"'{name}' is already declared", at)
        self.names[name] = kind

    def field(self, x, states_scope) -> Tuple[tuple, tuple]:
        states, field = [], []
        for e in self.seq(x, "state equations"):
            e = self.seq(e, "state equations")
            if len(e) != 2:
                raise _syntax("state equation '(name term)' expected", e)
            states.append(self.name(e[0]))
        scope = set(states) | set(states_scope)
        for e in x:
            field.append(self.term(e[1], scope))
        return tuple(states), tuple(field)

    def keywords(self, items, allowed: Dict[str, str], ctx, at) -> list:
        out = []
        seen = set()
        i = 0
        while i < len(items):
            k = items[i]
            if not isinstance(k, Sym) or isinstance(k, Str) or not str(k).startswith(":"):
                raise _syntax("keyword expected", k)
            key = str(k)[1:]
            if key not in allowed:
                raise _syntax(f"unknown keyword ':{key}'", k)
            if key in seen:
                raise _syntax(f"duplicate keyword ':{key}'", k)
            if i + 1 >= len(items):
                raise _syntax(f"missing value for ':{key}'", k)
            seen.add(key)
            out.append((key, self.option(allowed[key], items[i + 1], ctx)))
            i += 2
        return out

    def option(self, kind: str, x, ctx):
        if kind == "rational":
            return self.number(x)
        if kind == "int":
            return self.integer(x)
        if kind == "onoff":
            v = self.name(x)
            if v not in ("on", "off"):
                raise _syntax("'on' or 'off' expected", x)
            return v == "on"
        if kind == "interval":
            return self.interval(x)
        if kind == "intervals":
            return tuple(self.interval(i) for i in self.seq(x, "intervals"))
        if kind == "rationals":
            return tuple(self.number(i) for i in self.seq(x, "numbers"))
        if kind == "binders":
            return self.binders(x)
        if kind == "ode":
            n = self.name(x)
            if n not in self.systems:
                raise _undeclared(n, x)
            return n
        if kind == "plant":
            n = self.name(x)
            if n not in self.plants:
                raise _undeclared(n, x)
            return n
        if kind == "term":
            return self.term(x, ctx.get("scope", set()))
        if kind == "terms":
            return tuple(self.term(i, ctx.get("scope", set())) for i in self.seq(x, "terms"))
        if kind == "formula":
            return self.formula(x, ctx.get("scope", set()))
        raise AssertionError(kind)

    def decl_var(self, x):
        if len(x) != 3:
            raise _syntax("expected (declare-var name [lo hi])", x)
        n = self.name(x[1])
        lo, hi = self.interval(x[2])
        self.declare(n, "var", x[1])
        d = VarDecl(n, lo, hi)
        self.vars[n] = d
        self.decls.append(d)

    def decl_const(self, x):
        if len(x) != 3:
            raise _syntax("expected (declare-const name value)", x)
        n = self.name(x[1])
        v = self.number(x[2])
        self.declare(n, "const", x[1])
        self.consts[n] = v
        self.decls.append(ConstDecl(n, v))

    def decl_ode(self, x):
        if len(x) < 3:
            raise _syntax("expected (declare-ode name ((state term) ...) :domain (...) :horizon T)", x)
        n = self.name(x[1])
        self.declare(n, "ode", x[1])
        states, field = self.field(x[2], ())
        kw = dict(self.keywords(x[3:], {"domain": "intervals", "horizon": "rational", "step": "rational"}, {}, x))
        for k in ("domain", "horizon"):
            if k not in kw:
                raise _syntax(f"declare-ode needs :{k}", x)
        if len(kw["domain"]) != len(states):
            raise _arity(f"system {n}: {len(states)} state(s) but {len(kw['domain'])} domain interval(s)", x)
        try:
            sys = OdeSystem(n, states, field, kw["domain"], kw["horizon"], kw.get("step"))
        except ValueError as e:
            raise _domain(str(e), x) from None
        self.systems[n] = sys
        self.decls.append(OdeDecl(sys))

    def decl_plant(self, x):
        if len(x) < 3:
            raise _syntax("expected (declare-plant name ((state term) ...) :input u :domain (...))", x)
        n = self.name(x[1])
        self.declare(n, "plant", x[1])
        rest = list(x[3:])
        inp = "u"
        if len(rest) >= 2 and rest[0] == ":input":
            inp = self.name(rest[1])
            rest = rest[2:]
        states, field = self.field(x[2], (inp,))
        kw = dict(self.keywords(rest, {"domain": "intervals"}, {}, x))
        if "domain" not in kw:
            raise _syntax("declare-plant needs :domain", x)
        if len(kw["domain"]) != len(states):
            raise _arity(f"plant {n}: {len(states)} state(s) but {len(kw['domain'])} domain interval(s)", x)
        try:
            pl = Plant(n, states, field, kw["domain"], inp)
        except ValueError as e:
            raise _domain(str(e), x) from None
        self.plants[n] = pl
        self.decls.append(PlantDecl(pl))

    def command(self, x) -> Command:
        name = str(x[0])
        allowed = dict(COMMON)
        allowed.update(COMMANDS[name])
        items = list(x[1:])
        # the system (or plant) decides the scope of term-valued options
        scope: set = set(self.vars)
        for i in range(0, len(items) - 1):
            k = items[i]
            if k in (":system", ":plant") and isinstance(items[i + 1], Sym):
                sys = self.systems.get(str(items[i + 1])) if k == ":system" else None
                if sys is not None:
                    scope |= set(sys.states) | {s + "0" for s in sys.states}
            if k == ":params" and isinstance(items[i + 1], SList):
                try:
                    scope |= {n for n, _, _ in self.binders(items[i + 1])}
                except ProblemError:
                    pass
        if name == "pid-tune":
            scope = {"e"}
        opts = self.keywords(items, allowed, {"scope": scope}, x)
        have = {k for k, _ in opts}
        for k in REQUIRED.get(name, ()):
            if k not in have:
                raise _syntax(f"{name} needs :{k}", x)
        return Command(name, tuple(opts))


def parse(text: str) -> ProblemFile:
    """Parse a problem file; raises :class:`ProblemError` with a stable code."""
    try:
        items = read_all(text)
    except SExprError as e:
        raise ProblemError("E-SYNTAX", e.message, e.line, e.col) from None
    p = _Parser()
    assertions: List[Formula] = []
    command: Optional[Command] = None
    for x in items:
        if not isinstance(x, SList) or x.square or not x or not isinstance(x[0], Sym):
            raise _syntax("top-level form expected", x)
        head = str(x[0])
        if command is not None:
            raise _syntax("nothing may follow the command", x)
        if head == "declare-var":
            p.decl_var(x)
        elif head == "declare-const":
            p.decl_const(x)
        elif head == "declare-ode":
            p.decl_ode(x)
        elif head == "declare-plant":
            p.decl_plant(x)
        elif head == "assert":
            if len(x) != 2:
                raise _arity("'assert' expects one formula", x)
            assertions.append(p.formula(x[1], set(p.vars)))
        elif head in COMMANDS:
            command = p.command(x)
        else:
            raise _syntax(f"unknown top-level form '{head}'", x)
    if command is None:
        raise ProblemError("E-SYNTAX", "missing command (for example '(check-sat)')")
    if command.name in ("check-sat", "classify") and not assertions:
        raise ProblemError("E-SYNTAX", f"{command.name} needs at least one assertion")
    return ProblemFile(tuple(p.decls), tuple(assertions), command)


# ---------------------------------------------------------------- printing


def _q(x) -> str:
    return format_rational(x)


def _iv(lo, hi) -> str:
    return f"[{_q(lo)} {_q(hi)}]"


def _field(states, field) -> str:
    return "(" + " ".join(f"({s} {format_term(f)})" for s, f in zip(states, field)) + ")"


def _option(kind: str, v) -> str:
    if kind in ("rational",):
        return _q(v)
    if kind == "int":
        return str(v)
    if kind == "onoff":
        return "on" if v else "off"
    if kind in ("ode", "plant"):
        return v
    if kind == "interval":
        return _iv(*v)
    if kind == "intervals":
        return "(" + " ".join(_iv(a, b) for a, b in v) + ")"
    if kind == "rationals":
        return "(" + " ".join(_q(a) for a in v) + ")"
    if kind == "binders":
        return "(" + " ".join(f"({n} {_iv(a, b)})" for n, a, b in v) + ")"
    if kind == "term":
        return format_term(v)
    if kind == "terms":
        return "(" + " ".join(format_term(t) for t in v) + ")"
    if kind == "formula":
        return format_formula(v)
    raise AssertionError(kind)


def format_problem(pf: ProblemFile) -> str:
    """Canonical text of ``pf``; it parses back to an equal :class:`ProblemFile`."""
    lines = []
    for d in pf.declarations:
        if isinstance(d, VarDecl):
            lines.append(f"(declare-var {d.name} {_iv(d.lo, d.hi)})")
        elif isinstance(d, ConstDecl):
            lines.append(f"(declare-const {d.name} {_q(d.value)})")
        elif isinstance(d, OdeDecl):
            lines.append(d.system.canonical())
        elif isinstance(d, PlantDecl):
            pl = d.plant
            dom = " ".join(_iv(a, b) for a, b in pl.domain)
            lines.append(f"(declare-plant {pl.name} {_field(pl.states, pl.field)} :input {pl.input} :domain ({dom}))")
    for a in pf.assertions:
        lines.append(f"(assert {format_formula(a)})")
    kinds = dict(COMMON)
    kinds.update(COMMANDS[pf.command.name])
    opts = "".join(f" :{k} {_option(kinds[k], v)}" for k, v in pf.command.options)
    lines.append(f"({pf.command.name}{opts})")
    return "\n".join(lines) + "\n"
