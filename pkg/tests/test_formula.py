import math
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deltactl.formula import (
    And,
    Apply,
    Atom,
    Const,
    Exists,
    Forall,
    FormulaError,
    NonSmoothTerm,
    Or,
    UnboundedQuantifier,
    Var,
    atoms,
    classify_prefix,
    delta_strengthen,
    delta_weaken,
    differentiate,
    eq,
    evaluate,
    exp,
    fabs,
    from_prenex,
    ge,
    gt,
    holds,
    is_normal,
    normalize_nnf,
    raw_holds,
    shift_atoms,
    sin,
    to_prenex,
)
from deltactl.formula import Implies, Not
from strategies import normal_matrices, normal_sentences, points, raw_matrices, small_rationals

x, y, p = Var("x"), Var("y"), Var("p")
TENTH = Fraction(1, 10)


def quantifier_bounds(phi):
    if isinstance(phi, (Exists, Forall)):
        return [(type(phi), phi.var, phi.lo, phi.hi)] + quantifier_bounds(phi.body)
    if isinstance(phi, (And, Or)):
        return [b for a in phi.args for b in quantifier_bounds(a)]
    return []


# ---------------------------------------------------------------- normal form


def test_negated_strict_atom():
    assert normalize_nnf(Not(gt(x, 0))) == Atom(Apply("neg", (x,)), False)


def test_equality_splits_into_two_inequalities():
    assert normalize_nnf(eq(x, 1)) == And((Atom(x - 1, False), Atom(1 - x, False)))


def test_implication_under_quantifier():
    phi = Forall("x", 0, 1, Implies(gt(x, 0), ge(x, 0)))
    assert normalize_nnf(phi) == Forall("x", 0, 1, Or((Atom(-x, False), Atom(x, False))))


def test_unbounded_quantifier_rejected():
    with pytest.raises(UnboundedQuantifier, match="bounded quantifiers required"):
        normalize_nnf(Exists("x", None, 1, gt(x, 0)))


def test_undeclared_variable_is_a_name_error():
    with pytest.raises(NameError):
        normalize_nnf(gt(x + y, 0), declared=["x"])


def test_empty_quantifier_domain():
    with pytest.raises(FormulaError):
        Exists("x", 1, 0, gt(x, 0))


@settings(max_examples=300)
@given(raw_matrices(), points)
def test_normalization_preserves_truth(phi, env):
    nf = normalize_nnf(phi)
    assert is_normal(nf)
    assert holds(nf, env) == raw_holds(phi, env)


# ---------------------------------------------------------------- delta variants


def test_strengthen_strict_atom():
    assert delta_strengthen(Atom(x, True), TENTH) == Atom(x, True, TENTH)


def test_zero_shift_is_identity():
    phi = Exists("x", 0, 1, Atom(x, True))
    assert delta_strengthen(phi, 0) is phi
    assert delta_weaken(phi, 0) is phi


def test_strengthen_keeps_bounds():
    phi = Exists("x", 0, 1, Or((Atom(x, False), Atom(-x, True))))
    half = Fraction(1, 2)
    assert delta_strengthen(phi, half) == Exists("x", 0, 1, Or((Atom(x, False, half), Atom(-x, True, half))))


def test_weaken_nonstrict_atom():
    assert delta_weaken(Atom(x, False), TENTH) == Atom(x, False, -TENTH)


def test_weakened_equality_is_a_band():
    band = delta_weaken(normalize_nnf(eq(x, 1)), Fraction(1, 100))
    assert holds(band, {"x": Fraction(101, 100)})
    assert holds(band, {"x": Fraction(99, 100)})
    assert not holds(band, {"x": Fraction(102, 100)})


def test_negative_delta_rejected():
    with pytest.raises(ValueError):
        delta_strengthen(Atom(x, True), -1)
    with pytest.raises(ValueError):
        delta_weaken(Atom(x, True), Fraction(-1, 2))


deltas = st.fractions(min_value=0, max_value=2, max_denominator=64)


@settings(max_examples=200)
@given(normal_sentences(), deltas)
def test_strengthen_weaken_round_trip(phi, d):
    assert delta_weaken(delta_strengthen(phi, d), d) == phi
    assert delta_strengthen(delta_weaken(phi, d), d) == phi


@settings(max_examples=200)
@given(normal_sentences(), deltas)
def test_delta_variants_keep_quantifier_bounds(phi, d):
    expected = quantifier_bounds(phi)
    assert quantifier_bounds(delta_strengthen(phi, d)) == expected
    assert quantifier_bounds(delta_weaken(phi, d)) == expected
    shifted = atoms(delta_strengthen(phi, d))
    assert [a.shift for a in shifted] == [a.shift + d for a in atoms(phi)]


@settings(max_examples=200)
@given(normal_matrices(), points, small_rationals, small_rationals)
def test_shift_monotonicity(phi, env, a, b):
    lo, hi = min(a, b), max(a, b)
    if holds(shift_atoms(phi, hi), env):
        assert holds(shift_atoms(phi, lo), env)


@settings(max_examples=200)
@given(normal_matrices(), points, deltas)
def test_strengthened_implies_original_implies_weakened(phi, env, d):
    if holds(delta_strengthen(phi, d), env):
        assert holds(phi, env)
    if holds(phi, env):
        assert holds(delta_weaken(phi, d), env)


# ---------------------------------------------------------------- prefix classes


def test_single_existential_block():
    c = classify_prefix(Exists("x", 0, 1, Atom(x, True)))
    assert (c.kind, c.n) == ("Sigma", 1)
    assert str(c) == "Sigma(1)  ((Sigma_1)^P)^C"


def test_exists_forall_is_sigma2():
    phi = Exists("p", 0, 1, Forall("x", 0, 1, Atom(p - x, False)))
    c = classify_prefix(phi)
    assert (c.kind, c.n) == ("Sigma", 2)


def test_stability_encoding_is_pi3():
    from deltactl.control import StabilitySpec, encode_delta_stability
    from deltactl.ode import OdeSystem

    sys = OdeSystem("f", ("x",), (-x,), ((-2, 2),), 4)
    c = classify_prefix(encode_delta_stability(StabilitySpec(sys, e=1, T=2, X=((-1, 1),))))
    assert (c.kind, c.n) == ("Pi", 3)
    assert c.label == "((Pi_3)^P)^C"


def test_quantifier_free_class():
    assert classify_prefix(Atom(x, True)).kind == "QuantifierFree"


@settings(max_examples=300)
@given(st.lists(normal_sentences(), min_size=2, max_size=3), st.randoms())
def test_classification_ignores_argument_order(parts, rnd):
    shuffled = list(parts)
    rnd.shuffle(shuffled)
    assert classify_prefix(And(tuple(parts))) == classify_prefix(And(tuple(shuffled)))
    assert classify_prefix(Or(tuple(parts))) == classify_prefix(Or(tuple(shuffled)))


@settings(max_examples=300)
@given(normal_sentences())
def test_prenex_round_trip_keeps_class(phi):
    assert classify_prefix(from_prenex(to_prenex(phi))) == classify_prefix(phi)


# ---------------------------------------------------------------- differentiation


@given(st.fractions(min_value=-5, max_value=5, max_denominator=20), st.fractions(min_value=-5, max_value=5, max_denominator=20))
def test_power_rule(pv, xv):
    d = differentiate(p * x**2, "x")
    assert evaluate(d, {"p": pv, "x": xv}) == 2 * pv * xv


@given(st.floats(min_value=-3, max_value=3))
def test_sine_derivative(xv):
    assert math.isclose(float(evaluate(differentiate(sin(x), "x"), {"x": xv})), math.cos(xv), abs_tol=1e-12)


@given(st.floats(min_value=-3, max_value=3))
def test_chain_rule(xv):
    d = differentiate(exp(Const(2) * x), "x")
    assert math.isclose(float(evaluate(d, {"x": xv})), 2 * math.exp(2 * xv), rel_tol=1e-12)


def test_derivative_of_independent_term_is_zero():
    assert differentiate(sin(y), "x") == Const(0)


def test_non_smooth_term_rejected():
    with pytest.raises(NonSmoothTerm, match="non-smooth term"):
        differentiate(fabs(x) + 1, "x")
    assert differentiate(fabs(y) + x, "x") == Const(1)
