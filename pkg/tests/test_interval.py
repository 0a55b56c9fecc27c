import math
import random
from fractions import Fraction

import mpmath
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deltactl.formula import Apply, Atom, Const, Var, cos, exp, fabs, fmax, fmin, log, sin, sqrt
from deltactl.interval import (
    DomainViolation,
    Interval,
    TruthValue,
    eval_atom,
    eval_term,
    lipschitz_bound,
    point_box,
)

x, y = Var("x"), Var("y")
mpmath.mp.prec = 200

MP_OPS = {
    "neg": lambda a: -a,
    "abs": abs,
    "sqrt": mpmath.sqrt,
    "exp": mpmath.exp,
    "log": mpmath.log,
    "sin": mpmath.sin,
    "cos": mpmath.cos,
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "div": lambda a, b: a / b,
    "min": min,
    "max": max,
    "pow": lambda a, b: a ** int(b),
}


def mp_eval(t, env):
    """High-precision reference evaluation at an exact rational point."""
    if isinstance(t, Var):
        q = env[t.name]
        return mpmath.mpf(q.numerator) / q.denominator
    if isinstance(t, Const):
        return mpmath.mpf(t.value.numerator) / t.value.denominator
    return MP_OPS[t.op](*(mp_eval(a, env) for a in t.args))


def inside(v, iv):
    return mpmath.mpf(iv.lo) <= v <= mpmath.mpf(iv.hi)


def random_term(rnd, depth):
    if depth == 0 or rnd.random() < 0.25:
        if rnd.random() < 0.6:
            return Var(rnd.choice("xy"))
        return Const(Fraction(rnd.randint(-40, 40), rnd.randint(1, 8)))
    op = rnd.choice(["neg", "abs", "sqrt", "exp", "log", "sin", "cos", "add", "sub", "mul", "div", "min", "max", "pow"])
    if op in ("neg", "abs", "exp", "sin", "cos"):
        a = random_term(rnd, depth - 1)
        if op == "exp":
            a = Apply("sin", (a,))  # keep magnitudes moderate
        return Apply(op, (a,))
    if op in ("sqrt", "log"):
        # argument kept positive so the reference is defined
        a = random_term(rnd, depth - 1)
        return Apply(op, (Apply("add", (Apply("mul", (a, a)), Const(Fraction(1, 4)))),))
    if op == "pow":
        return Apply("pow", (random_term(rnd, depth - 1), Const(rnd.randint(0, 4))))
    a, b = random_term(rnd, depth - 1), random_term(rnd, depth - 1)
    if op == "div":
        b = Apply("add", (Apply("mul", (b, b)), Const(Fraction(1, 2))))
    return Apply(op, (a, b))


def random_box(rnd):
    box, point = {}, {}
    for n in "xy":
        lo = Fraction(rnd.randint(-1000, 1000), 100)
        hi = lo + Fraction(rnd.randint(0, 300), 100)
        box[n] = Interval.from_rational(lo, hi)
        point[n] = lo + (hi - lo) * Fraction(rnd.randint(0, 64), 64)
    return box, point


def test_sampled_soundness_over_the_library():
    rnd = random.Random(20240611)
    checked = 0
    for _ in range(10_000):
        t = random_term(rnd, 3)
        box, point = random_box(rnd)
        try:
            iv = eval_term(t, box)
        except (DomainViolation, OverflowError):
            continue
        v = mp_eval(t, point)
        assert inside(v, iv), (t, box, point, iv, v)
        assert not (math.isnan(iv.lo) or math.isnan(iv.hi))
        checked += 1
    assert checked > 9000


def test_constant_enclosure():
    assert eval_term(Const(2), {"x": Interval(0, 1)}) == Interval(2.0)


def test_sine_on_unit_interval():
    iv = eval_term(sin(x), {"x": Interval(0, 1)})
    s1 = mpmath.sin(1)
    assert iv.lo <= 0 and inside(s1, iv)
    assert iv.width <= float(s1) + 2.0**-40


def test_dedicated_square_rule():
    iv = eval_term(x * x, {"x": Interval(-1, 1)})
    assert iv.lo == 0.0
    assert 1.0 <= iv.hi <= 1 + 2.0**-40
    grid = [(k / 1000) ** 2 for k in range(-1000, 1001)]
    assert all(iv.lo <= g <= iv.hi for g in grid)


def test_rational_constant_encloses_exact_value():
    iv = Interval.from_rational(Fraction(1, 3))
    assert iv.lo < iv.hi
    assert inside(mpmath.mpf(1) / 3, iv)


def test_domain_violations():
    box = {"x": Interval(-1, 1), "y": Interval(-2, -1)}
    for t in (Const(1) / x, sqrt(y), log(x)):
        with pytest.raises(DomainViolation):
            eval_term(t, box)
    with pytest.raises(DomainViolation) as info:
        eval_term(log(x), {"x": Interval(-1, 1)})
    assert info.value.box is not None


def test_atom_examples():
    assert eval_atom(Atom(x, True), {"x": Interval(1, 2)}) == TruthValue.CERT_TRUE
    assert eval_atom(Atom(x, False), {"x": Interval(-2, -1)}, ("weakened", Fraction(1, 2))) == TruthValue.CERT_FALSE
    assert eval_atom(Atom(x, True), {"x": Interval(-1, 1)}) == TruthValue.UNKNOWN


def test_lipschitz_examples():
    assert 3 <= lipschitz_bound(Const(3) * x, {"x": Interval(-5, 7)}) <= 3 * (1 + 1e-12)
    assert 2 <= lipschitz_bound(x * x, {"x": Interval(-1, 1)}) <= 2 + 2.0**-20
    assert lipschitz_bound(sin(x), {"x": Interval(0, 10)}) <= 1 + 2.0**-20


terms = st.sampled_from(
    [
        x * x - y,
        sin(x) * cos(y),
        exp(x / 4) - y,
        sqrt(x * x + 1),
        fabs(x - y) + fmin(x, y),
        fmax(x, y) ** 3,
        log(y * y + 1) - x,
        x / (y * y + 1),
    ]
)
endpoints = st.fractions(min_value=-10, max_value=10, max_denominator=16)


@st.composite
def nested_boxes(draw):
    outer, inner = {}, {}
    for n in "xy":
        a, b, c, d = sorted(draw(endpoints) for _ in range(4))
        outer[n] = Interval.from_rational(a, d)
        inner[n] = Interval.from_rational(b, c)
    return inner, outer


@settings(max_examples=500)
@given(terms, nested_boxes())
def test_inclusion_monotonicity(t, boxes):
    inner, outer = boxes
    assert eval_term(t, outer).contains(eval_term(t, inner))


@settings(max_examples=300)
@given(terms, endpoints, endpoints, st.integers(min_value=1, max_value=30))
def test_point_convergence(t, cx, cy, k):
    r = Fraction(1, 2**k)
    box = {"x": Interval.from_rational(cx - r, cx + r), "y": Interval.from_rational(cy - r, cy + r)}
    width = eval_term(t, box).width
    assert width <= 2 * lipschitz_bound(t, box) * float(2 * r) + 2.0**-40 * max(1.0, eval_term(t, box).mag)


@settings(max_examples=500)
@given(
    terms,
    endpoints,
    endpoints,
    st.fractions(min_value=0, max_value=1, max_denominator=32),
    st.fractions(min_value=0, max_value=1, max_denominator=32),
    st.fractions(min_value=-2, max_value=2, max_denominator=8),
)
def test_modes_never_contradict(t, cx, cy, d1, d2, shift):
    box = {"x": Interval.from_rational(cx, cx + Fraction(1, 8)), "y": Interval.from_rational(cy, cy + Fraction(1, 8))}
    for strict in (True, False):
        atom = Atom(t, strict, shift)
        strong = eval_atom(atom, box, ("strengthened", d1))
        weak = eval_atom(atom, box, ("weakened", d2))
        assert not (strong == TruthValue.CERT_TRUE and weak == TruthValue.CERT_FALSE)


def test_point_box_is_tight():
    b = point_box({"x": Fraction(1, 2), "y": 0.25})
    assert b["x"] == Interval(0.5) and b["y"] == Interval(0.25)
