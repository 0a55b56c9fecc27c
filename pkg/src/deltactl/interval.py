"""Outward-rounded interval arithmetic over binary64.

Field operations and ``sqrt`` are rounded outward only when the floating
point result is inexact (checked with error-free transformations), so exact
bounds such as ``0`` survive: ``x*x`` over ``[0, 1]`` has lower bound exactly
0.  ``exp``/``log``/``sin``/``cos`` take the C library value and widen it by
``LIBM_ULPS`` units in the last place in each direction.
"""

from __future__ import annotations

import enum
import math
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Dict, Mapping

from .formula import Atom, Const, Flow, Term, Var, to_fraction

INF = math.inf
LIBM_ULPS = 2
_SPLITTER = 134217729.0  # 2**27 + 1
_SAFE_HI = 2.0 ** 995
_SAFE_LO = 2.0 ** -960


class DomainViolation(ArithmeticError):
    """A partial function was applied outside its domain."""

    def __init__(self, term, box, reason: str):
        self.term = term
        self.box = dict(box) if box is not None else None
        self.reason = reason
        super().__init__(f"{reason} in {term}")


# ---------------------------------------------------------------- directed rounding


def _next_down(x: float, k: int = 1) -> float:
    for _ in range(k):
        x = math.nextafter(x, -INF)
    return x


def _next_up(x: float, k: int = 1) -> float:
    for _ in range(k):
        x = math.nextafter(x, INF)
    return x


def _two_sum(a: float, b: float):
    s = a + b
    bb = s - a
    return s, (a - (s - bb)) + (b - bb)


def _split(a: float):
    c = _SPLITTER * a
    hi = c - (c - a)
    return hi, a - hi


def _two_prod(a: float, b: float):
    p = a * b
    ah, al = _split(a)
    bh, bl = _split(b)
    return p, ((ah * bh - p) + ah * bl + al * bh) + al * bl


def _safe(*xs) -> bool:
    for x in xs:
        ax = abs(x)
        if ax > _SAFE_HI or (ax != 0.0 and ax < _SAFE_LO):
            return False
    return True


def add_down(a: float, b: float) -> float:
    s, e = _two_sum(a, b)
    if s != s:
        return -INF
    if math.isinf(s):
        return s if s < 0 or (math.isinf(a) or math.isinf(b)) else math.nextafter(s, -INF)
    return _next_down(s) if e < 0 else s


def add_up(a: float, b: float) -> float:
    s, e = _two_sum(a, b)
    if s != s:
        return INF
    if math.isinf(s):
        return s if s > 0 or (math.isinf(a) or math.isinf(b)) else math.nextafter(s, INF)
    return _next_up(s) if e > 0 else s


def mul_down(a: float, b: float) -> float:
    if a == 0.0 or b == 0.0:
        return 0.0
    p = a * b
    if math.isinf(a) or math.isinf(b):
        return p
    if not _safe(a, b, p):
        return _next_down(p)
    p, e = _two_prod(a, b)
    return _next_down(p) if e < 0 else p


def mul_up(a: float, b: float) -> float:
    if a == 0.0 or b == 0.0:
        return 0.0
    p = a * b
    if math.isinf(a) or math.isinf(b):
        return p
    if not _safe(a, b, p):
        return _next_up(p)
    p, e = _two_prod(a, b)
    return _next_up(p) if e > 0 else p


def _div_residual_sign(a: float, b: float, q: float) -> int:
    """Sign of a/b - q, computed exactly."""
    p, e = _two_prod(q, b)
    r = (a - p) - e
    if r == 0:
        return 0
    return 1 if (r > 0) == (b > 0) else -1


def div_down(a: float, b: float) -> float:
    if a == 0.0:
        return 0.0
    q = a / b
    if math.isinf(a) or math.isinf(b) or math.isinf(q) or not _safe(a, b, q):
        return _next_down(q) if not math.isinf(q) or q > 0 else q
    return _next_down(q) if _div_residual_sign(a, b, q) < 0 else q


def div_up(a: float, b: float) -> float:
    if a == 0.0:
        return 0.0
    q = a / b
    if math.isinf(a) or math.isinf(b) or math.isinf(q) or not _safe(a, b, q):
        return _next_up(q) if not math.isinf(q) or q < 0 else q
    return _next_up(q) if _div_residual_sign(a, b, q) > 0 else q


def sqrt_down(x: float) -> float:
    r = math.sqrt(x)
    if x == 0.0 or math.isinf(x) or not _safe(r):
        return _next_down(r) if 0 < r < INF else r
    p, e = _two_prod(r, r)
    # sign of x - r*r
    return _next_down(r) if (x - p) - e < 0 else r


def sqrt_up(x: float) -> float:
    r = math.sqrt(x)
    if x == 0.0 or math.isinf(x) or not _safe(r):
        return _next_up(r) if 0 < r < INF else r
    p, e = _two_prod(r, r)
    return _next_up(r) if (x - p) - e > 0 else r


def rational_bounds(q) -> tuple:
    """Tightest floats ``lo <= q <= hi``."""
    q = to_fraction(q)
    try:
        f = float(q)
    except OverflowError:
        return (-INF, -_SAFE_HI) if q < 0 else (_SAFE_HI, INF)
    exact = Fraction(f)
    if exact == q:
        return f, f
    if exact < q:
        return f, _next_up(f)
    return _next_down(f), f


# ---------------------------------------------------------------- intervals


class Interval:
    """Closed interval ``[lo, hi]`` of reals with float endpoints."""

    __slots__ = ("lo", "hi")

    def __init__(self, lo: float, hi: float | None = None):
        if hi is None:
            hi = lo
        lo, hi = float(lo), float(hi)
        if lo != lo or hi != hi:
            raise ValueError("NaN endpoint")
        if lo > hi:
            raise ValueError(f"empty interval [{lo}, {hi}]")
        self.lo = lo
        self.hi = hi

    @classmethod
    def from_rational(cls, lo, hi=None) -> "Interval":
        a = rational_bounds(lo)[0]
        b = rational_bounds(lo if hi is None else hi)[1]
        return cls(a, b)

    def __repr__(self):
        return f"Interval({self.lo!r}, {self.hi!r})"

    def __eq__(self, other):
        return isinstance(other, Interval) and self.lo == other.lo and self.hi == other.hi

    def __hash__(self):
        return hash((self.lo, self.hi))

    def __iter__(self):
        yield self.lo
        yield self.hi

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def mid(self) -> float:
        if self.lo == -INF or self.hi == INF:
            return 0.0 if self.lo < 0 < self.hi else (self.lo if self.hi == INF else self.hi)
        m = 0.5 * self.lo + 0.5 * self.hi
        return min(max(m, self.lo), self.hi)

    @property
    def mag(self) -> float:
        return max(abs(self.lo), abs(self.hi))

    def contains(self, x) -> bool:
        if isinstance(x, Interval):
            return self.lo <= x.lo and x.hi <= self.hi
        return self.lo <= x <= self.hi

    def __contains__(self, x):
        return self.contains(x)

    def is_point(self) -> bool:
        return self.lo == self.hi

    def hull(self, other: "Interval") -> "Interval":
        return Interval(min(self.lo, other.lo), max(self.hi, other.hi))

    def intersect(self, other: "Interval"):
        lo, hi = max(self.lo, other.lo), min(self.hi, other.hi)
        return Interval(lo, hi) if lo <= hi else None

    def __add__(self, o):
        o = _iv(o)
        return iadd(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return isub(self, _iv(o))

    def __rsub__(self, o):
        return isub(_iv(o), self)

    def __mul__(self, o):
        return imul(self, _iv(o))

    __rmul__ = __mul__

    def __neg__(self):
        return Interval(-self.hi, -self.lo)


def _iv(x) -> Interval:
    if isinstance(x, Interval):
        return x
    return Interval.from_rational(x)


def iadd(a: Interval, b: Interval) -> Interval:
    return Interval(add_down(a.lo, b.lo), add_up(a.hi, b.hi))


def isub(a: Interval, b: Interval) -> Interval:
    return Interval(add_down(a.lo, -b.hi), add_up(a.hi, -b.lo))


def ineg(a: Interval) -> Interval:
    return Interval(-a.hi, -a.lo)


def imul(a: Interval, b: Interval) -> Interval:
    if a.lo >= 0 and b.lo >= 0:
        return Interval(mul_down(a.lo, b.lo), mul_up(a.hi, b.hi))
    if a.hi <= 0 and b.hi <= 0:
        return Interval(mul_down(a.hi, b.hi), mul_up(a.lo, b.lo))
    if a.lo >= 0 and b.hi <= 0:
        return Interval(mul_down(a.hi, b.lo), mul_up(a.lo, b.hi))
    if a.hi <= 0 and b.lo >= 0:
        return Interval(mul_down(a.lo, b.hi), mul_up(a.hi, b.lo))
    pairs = ((a.lo, b.lo), (a.lo, b.hi), (a.hi, b.lo), (a.hi, b.hi))
    return Interval(min(mul_down(x, y) for x, y in pairs), max(mul_up(x, y) for x, y in pairs))


def isqr(a: Interval) -> Interval:
    if a.lo >= 0:
        return Interval(mul_down(a.lo, a.lo), mul_up(a.hi, a.hi))
    if a.hi <= 0:
        return Interval(mul_down(a.hi, a.hi), mul_up(a.lo, a.lo))
    m = max(-a.lo, a.hi)
    return Interval(0.0, mul_up(m, m))


def _pow_nonneg(x: float, n: int, up: bool) -> float:
    r = 1.0
    mul = mul_up if up else mul_down
    base = x
    while n:
        if n & 1:
            r = mul(r, base)
        n >>= 1
        if n:
            base = mul(base, base)
    return r


def ipow(a: Interval, n: int) -> Interval:
    if n == 0:
        return Interval(1.0)
    if n == 1:
        return a
    if n < 0:
        return idiv(Interval(1.0), ipow(a, -n))
    if n % 2 == 0:
        if a.lo >= 0:
            return Interval(_pow_nonneg(a.lo, n, False), _pow_nonneg(a.hi, n, True))
        if a.hi <= 0:
            return Interval(_pow_nonneg(-a.hi, n, False), _pow_nonneg(-a.lo, n, True))
        return Interval(0.0, _pow_nonneg(max(-a.lo, a.hi), n, True))
    lo = _pow_nonneg(a.lo, n, False) if a.lo >= 0 else -_pow_nonneg(-a.lo, n, True)
    hi = _pow_nonneg(a.hi, n, True) if a.hi >= 0 else -_pow_nonneg(-a.hi, n, False)
    return Interval(lo, hi)


def idiv(a: Interval, b: Interval) -> Interval:
    if b.lo <= 0 <= b.hi:
        raise ZeroDivisionError("divisor interval contains zero")
    pairs = ((a.lo, b.lo), (a.lo, b.hi), (a.hi, b.lo), (a.hi, b.hi))
    return Interval(min(div_down(x, y) for x, y in pairs), max(div_up(x, y) for x, y in pairs))


def iabs(a: Interval) -> Interval:
    if a.lo >= 0:
        return a
    if a.hi <= 0:
        return Interval(-a.hi, -a.lo)
    return Interval(0.0, max(-a.lo, a.hi))


def imin(a: Interval, b: Interval) -> Interval:
    return Interval(min(a.lo, b.lo), min(a.hi, b.hi))


def imax(a: Interval, b: Interval) -> Interval:
    return Interval(max(a.lo, b.lo), max(a.hi, b.hi))


def isqrt(a: Interval) -> Interval:
    if a.lo < 0:
        raise ValueError("sqrt of an interval reaching below 0")
    return Interval(sqrt_down(a.lo), sqrt_up(a.hi))


def iexp(a: Interval) -> Interval:
    try:
        lo = max(0.0, _next_down(math.exp(a.lo), LIBM_ULPS)) if a.lo != -INF else 0.0
    except OverflowError:
        lo = _SAFE_HI
    try:
        hi = _next_up(math.exp(a.hi), LIBM_ULPS) if a.hi != INF else INF
    except OverflowError:
        hi = INF
    return Interval(lo, hi)


def ilog(a: Interval) -> Interval:
    if a.lo <= 0:
        raise ValueError("log of an interval reaching 0 or below")
    return Interval(_next_down(math.log(a.lo), LIBM_ULPS), _next_up(math.log(a.hi), LIBM_ULPS))


_TWO_PI = 2 * math.pi
_REDUCE_LIMIT = 2.0 ** 40


def _hits(lo: float, hi: float, phase: float) -> bool:
    """Conservatively: is there an integer k with lo <= phase + 2*pi*k <= hi?"""
    slack = 1e-12 * (1.0 + max(abs(lo), abs(hi)))
    k = math.ceil((lo - phase) / _TWO_PI - 1e-9)
    return phase + _TWO_PI * k <= hi + slack or phase + _TWO_PI * (k - 1) >= lo - slack


def _trig(a: Interval, fn, max_phase: float, min_phase: float) -> Interval:
    if a.lo == -INF or a.hi == INF or a.hi - a.lo >= _TWO_PI or max(abs(a.lo), abs(a.hi)) > _REDUCE_LIMIT:
        return Interval(-1.0, 1.0)
    ylo, yhi = fn(a.lo), fn(a.hi)
    lo = _next_down(min(ylo, yhi), LIBM_ULPS)
    hi = _next_up(max(ylo, yhi), LIBM_ULPS)
    if _hits(a.lo, a.hi, max_phase):
        hi = 1.0
    if _hits(a.lo, a.hi, min_phase):
        lo = -1.0
    return Interval(max(lo, -1.0), min(hi, 1.0))


def isin(a: Interval) -> Interval:
    return _trig(a, math.sin, math.pi / 2, -math.pi / 2)


def icos(a: Interval) -> Interval:
    return _trig(a, math.cos, 0.0, math.pi)


# ---------------------------------------------------------------- boxes

Box = Dict[str, Interval]


def box_width(box: Mapping[str, Interval]) -> float:
    return max((iv.width for iv in box.values()), default=0.0)


def box_midpoint(box: Mapping[str, Interval]) -> Dict[str, Interval]:
    return {k: Interval(iv.mid) for k, iv in box.items()}


def point_box(point: Mapping[str, object]) -> Dict[str, Interval]:
    """Degenerate box around an exact rational (or float) point."""
    out = {}
    for k, v in point.items():
        if isinstance(v, float):
            out[k] = Interval(v)
        else:
            out[k] = Interval.from_rational(v)
    return out


# ---------------------------------------------------------------- term evaluation


class TruthValue(enum.Enum):
    CERT_TRUE = "CertTrue"
    CERT_FALSE = "CertFalse"
    UNKNOWN = "Unknown"


def _flow_interval(system, init, time, index):
    from .ode import flow_interval

    return flow_interval(system, init, time, index)


def _guard(t: Term, fn, unsafe: str):
    def run(box, *args):
        try:
            return fn(*args)
        except (ZeroDivisionError, ValueError) as e:
            raise DomainViolation(t, box, f"{unsafe}: {e}") from None

    return run


@lru_cache(maxsize=4096)
def compile_term(t: Term) -> Callable[[Mapping[str, Interval]], Interval]:
    """Turn ``t`` into a function from boxes to enclosing intervals."""
    if isinstance(t, Var):
        name = t.name
        return lambda box: box[name]
    if isinstance(t, Const):
        iv = Interval.from_rational(t.value)
        return lambda box: iv
    if isinstance(t, Flow):
        inits = [compile_term(a) for a in t.init]
        tf = compile_term(t.time)
        system, index = t.system, t.index
        return lambda box: _flow_interval(system, [f(box) for f in inits], tf(box), index)
    op = t.op
    if op == "mul" and t.args[0] == t.args[1]:
        f = compile_term(t.args[0])
        return lambda box: isqr(f(box))
    if op == "pow":
        f = compile_term(t.args[0])
        n = int(t.args[1].value)
        if n < 0:
            g = _guard(t, ipow, "negative power of an interval containing 0")
            return lambda box: g(box, f(box), n)
        return lambda box: ipow(f(box), n)
    fs = [compile_term(a) for a in t.args]
    if len(fs) == 1:
        (f,) = fs
        unary = {"neg": ineg, "abs": iabs, "exp": iexp, "sin": isin, "cos": icos}
        if op in unary:
            g = unary[op]
            return lambda box: g(f(box))
        g = _guard(t, {"sqrt": isqrt, "log": ilog}[op], f"{op} domain violation")
        return lambda box: g(box, f(box))
    f, h = fs
    if op == "div":
        g = _guard(t, idiv, "division by an interval containing 0")
        return lambda box: g(box, f(box), h(box))
    g = {"add": iadd, "sub": isub, "mul": imul, "min": imin, "max": imax}[op]
    return lambda box: g(f(box), h(box))


def eval_term(t: Term, box: Mapping[str, Interval]) -> Interval:
    """Interval enclosing ``{t(v) : v in box}``."""
    return compile_term(t)(box)


@lru_cache(maxsize=4096)
def threshold_bounds(shift) -> tuple:
    return rational_bounds(shift)


def truth_of(atom: Atom, iv: Interval, offset=0) -> TruthValue:
    """Three-valued truth of ``atom`` shifted by ``offset`` given an enclosure of its term."""
    tl, th = threshold_bounds(atom.shift + to_fraction(offset))
    if atom.strict:
        if iv.lo > th:
            return TruthValue.CERT_TRUE
        if iv.hi <= tl:
            return TruthValue.CERT_FALSE
    else:
        if iv.lo >= th:
            return TruthValue.CERT_TRUE
        if iv.hi < tl:
            return TruthValue.CERT_FALSE
    return TruthValue.UNKNOWN


def mode_offset(mode) -> Fraction:
    """``'original'``, ``('weakened', d)`` or ``('strengthened', d)`` as a shift offset."""
    if mode == "original" or mode is None:
        return Fraction(0)
    kind, d = mode
    d = to_fraction(d)
    if d < 0:
        raise ValueError("delta must be non-negative")
    if kind == "weakened":
        return -d
    if kind == "strengthened":
        return d
    raise ValueError(f"unknown mode {mode!r}")


def eval_atom(atom: Atom, box: Mapping[str, Interval], mode="original") -> TruthValue:
    return truth_of(atom, eval_term(atom.term, box), mode_offset(mode))


# ---------------------------------------------------------------- Lipschitz bounds


def _lip_add(a: dict, b: dict, sa: float = 1.0, sb: float = 1.0) -> dict:
    out = {}
    for k in a.keys() | b.keys():
        out[k] = add_up(mul_up(sa, a.get(k, 0.0)), mul_up(sb, b.get(k, 0.0)))
    return out


def _lip_scale(a: dict, s: float) -> dict:
    return {k: mul_up(s, v) for k, v in a.items()}


def _lip(t: Term, box) -> tuple:
    """(range enclosure, per-variable Lipschitz bounds) by forward propagation."""
    if isinstance(t, Var):
        return box[t.name], {t.name: 1.0}
    if isinstance(t, Const):
        return eval_term(t, box), {}
    if isinstance(t, Flow):
        from .ode import field_magnitude, flow_sensitivity, gronwall_lipschitz

        rng = eval_term(t, box)
        t_iv, t_lip = _lip(t.time, box)
        inits = [_lip(a, box) for a in t.init]
        try:
            g, speed = flow_sensitivity(t.system, [r for r, _ in inits], t_iv.hi)
        except DomainViolation:
            g, speed = gronwall_lipschitz(t.system, max(t_iv.hi, 0.0)), field_magnitude(t.system)
        out: dict = {}
        for _, la in inits:
            out = _lip_add(out, la, 1.0, g)
        out = _lip_add(out, t_lip, 1.0, speed)
        return rng, out
    op = t.op
    if op == "pow":
        u, lu = _lip(t.args[0], box)
        n = int(t.args[1].value)
        rng = ipow(u, n)
        if n == 0:
            return rng, {}
        if n < 0:
            d = imul(Interval(abs(n)), ipow(u, n - 1))
            return rng, _lip_scale(lu, d.mag)
        return rng, _lip_scale(lu, mul_up(float(n), ipow(u, n - 1).mag))
    rng = eval_term(t, box)
    parts = [_lip(a, box) for a in t.args]
    if op == "neg" or op == "abs":
        return rng, parts[0][1]
    if op in ("add", "sub"):
        return rng, _lip_add(parts[0][1], parts[1][1])
    if op in ("min", "max"):
        a, b = parts[0][1], parts[1][1]
        return rng, {k: max(a.get(k, 0.0), b.get(k, 0.0)) for k in a.keys() | b.keys()}
    if op == "mul":
        (u, lu), (v, lv) = parts
        return rng, _lip_add(lu, lv, v.mag, u.mag)
    if op == "div":
        (u, lu), (v, lv) = parts
        inv = div_up(1.0, min(abs(v.lo), abs(v.hi)))
        return rng, _lip_add(lu, lv, inv, mul_up(u.mag, mul_up(inv, inv)))
    (u, lu) = parts[0]
    if op == "sqrt":
        s = INF if u.lo <= 0 else div_up(1.0, mul_down(2.0, sqrt_down(u.lo)))
        return rng, _lip_scale(lu, s)
    if op == "exp":
        return rng, _lip_scale(lu, rng.hi)
    if op == "log":
        return rng, _lip_scale(lu, div_up(1.0, u.lo))
    if op == "sin":
        return rng, _lip_scale(lu, icos(u).mag)
    if op == "cos":
        return rng, _lip_scale(lu, isin(u).mag)
    raise ValueError(op)  # pragma: no cover


def lipschitz_vector(t: Term, box: Mapping[str, Interval]) -> Dict[str, float]:
    """Per-variable bounds ``L_v`` with ``|t(u)-t(w)| <= sum_v L_v |u_v - w_v|`` on ``box``."""
    return _lip(t, box)[1]


def lipschitz_bound(t: Term, box: Mapping[str, Interval]) -> float:
    """``L`` with ``|t(u) - t(w)| <= L * ||u - w||_inf`` for ``u, w`` in ``box``."""
    total = 0.0
    for v in lipschitz_vector(t, box).values():
        total = add_up(total, v)
    return total
