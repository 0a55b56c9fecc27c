"""Hypothesis strategies shared by the test modules."""


from hypothesis import strategies as st

from deltactl.formula import And, Apply, Atom, Compare, Const, Exists, Forall, Implies, Not, Or, Var

VARS = ("x", "y")

rationals = st.fractions(min_value=-4, max_value=4, max_denominator=8)
small_rationals = st.fractions(min_value=-1, max_value=1, max_denominator=16)


def polynomials(names=VARS, max_leaves=6):
    leaf = st.one_of(st.sampled_from([Var(n) for n in names]), rationals.map(Const))

    def extend(children):
        return st.one_of(
            st.builds(lambda a, b: Apply("add", (a, b)), children, children),
            st.builds(lambda a, b: Apply("sub", (a, b)), children, children),
            st.builds(lambda a, b: Apply("mul", (a, b)), children, children),
            children.map(lambda a: Apply("neg", (a,))),
        )

    return st.recursive(leaf, extend, max_leaves=max_leaves)


def raw_matrices(names=VARS):
    """Quantifier-free raw formulas using every connective."""
    cmp = st.builds(Compare, st.sampled_from(Compare.OPS), polynomials(names), polynomials(names))

    def extend(children):
        return st.one_of(
            children.map(Not),
            st.builds(Implies, children, children),
            st.lists(children, min_size=1, max_size=3).map(lambda xs: And(tuple(xs))),
            st.lists(children, min_size=1, max_size=3).map(lambda xs: Or(tuple(xs))),
        )

    return st.recursive(cmp, extend, max_leaves=5)


def normal_matrices(names=VARS):
    atom = st.builds(Atom, polynomials(names), st.booleans(), small_rationals)

    def extend(children):
        return st.one_of(
            st.lists(children, min_size=1, max_size=3).map(lambda xs: And(tuple(xs))),
            st.lists(children, min_size=1, max_size=3).map(lambda xs: Or(tuple(xs))),
        )

    return st.recursive(atom, extend, max_leaves=5)


@st.composite
def bounds(draw):
    lo = draw(st.fractions(min_value=-2, max_value=1, max_denominator=4))
    width = draw(st.fractions(min_value=0, max_value=2, max_denominator=4))
    return lo, lo + width


@st.composite
def normal_sentences(draw, names=VARS):
    """A normal-form sentence quantifying each name in a random order."""
    body = draw(normal_matrices(names))
    order = draw(st.permutations(names))
    for name in reversed(order):
        lo, hi = draw(bounds())
        q = draw(st.sampled_from([Exists, Forall]))
        body = q(name, lo, hi, body)
    return body


points = st.fixed_dictionaries({n: st.fractions(min_value=-3, max_value=3, max_denominator=10) for n in VARS})
