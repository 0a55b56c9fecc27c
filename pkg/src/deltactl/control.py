"""Control problems encoded as bounded sentences.

Lyapunov checks and template synthesis, a Lyapunov-style stability sentence
with a three-block prefix, bounded reachability with separate error bounds per
conjunct, and PID gain tuning over a closed loop built from a plant.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Optional, Sequence, Tuple

from .formula import (
    And,
    Atom,
    Const,
    Exists,
    Flow,
    Forall,
    Formula,
    FormulaError,
    Or,
    Term,
    Var,
    fabs,
    fmax,
    differentiate,
    map_atoms,
    normalize_nnf,
    s_add,
    s_mul,
    s_neg,
    s_sub,
    simplify,
    substitute,
    term_vars,
    to_fraction,
)
from .interval import Interval, eval_term
from .ode import OdeSystem
from .solver import SolveResult, SolverConfig, solve_exists_forall, solve_prenex, solve_sigma1


def _ge(t: Term, shift=0) -> Atom:
    return Atom(simplify(t), False, to_fraction(shift))


def _gt(t: Term, shift=0) -> Atom:
    return Atom(simplify(t), True, to_fraction(shift))


def _conj(parts):
    parts = tuple(parts)
    return parts[0] if len(parts) == 1 else And(parts)


def _sup_norm(terms: Sequence[Term]) -> Term:
    out = fabs(terms[0])
    for t in terms[1:]:
        out = fmax(out, fabs(t))
    return out


def _sum_squares(names: Sequence[str]) -> Term:
    out: Term = Const(Fraction(0))
    for n in names:
        out = s_add(out, s_mul(Var(n), Var(n)))
    return out


def _bind(vars_, body: Formula, quant) -> Formula:
    for name, lo, hi in reversed(tuple(vars_)):
        body = quant(name, to_fraction(lo), to_fraction(hi), body)
    return body


# ---------------------------------------------------------------- Lyapunov


@dataclass(frozen=True)
class LyapunovTemplate:
    """Candidate ``V(p, x)`` with parameter box ``params`` and state box ``states``.

    ``states`` must list the system's state variables in order.  ``c`` and
    ``r`` configure the strict mode: outside the sup-norm ball of radius ``r``
    the candidate must dominate ``c * |x|^2``.
    """

    params: tuple  # ((name, lo, hi), ...)
    V: Term
    states: tuple  # ((name, lo, hi), ...)
    c: Fraction = Fraction(1, 1000)
    r: Fraction = Fraction(1, 10)

    def __post_init__(self):
        object.__setattr__(self, "params", tuple((n, to_fraction(a), to_fraction(b)) for n, a, b in self.params))
        object.__setattr__(self, "states", tuple((n, to_fraction(a), to_fraction(b)) for n, a, b in self.states))
        object.__setattr__(self, "c", to_fraction(self.c))
        object.__setattr__(self, "r", to_fraction(self.r))
        for n, a, b in self.params + self.states:
            if a > b:
                raise ValueError(f"empty interval for {n}")
        for n, a, b in self.states:
            if not a <= 0 <= b:
                raise ValueError("the state box must contain the origin")
        allowed = {n for n, _, _ in self.params} | {n for n, _, _ in self.states}
        extra = term_vars(self.V) - allowed
        if extra:
            raise FormulaError(f"template uses undeclared variable(s) {sorted(extra)}")
        if self.c < 0 or self.r <= 0:
            raise ValueError("strict-mode constants must satisfy c >= 0 and r > 0")

    @property
    def state_names(self):
        return tuple(n for n, _, _ in self.states)


def lie_derivative(V: Term, system: OdeSystem) -> Term:
    """``<grad V, f>`` built symbolically (raises on non-smooth ``V``)."""
    out: Term = Const(Fraction(0))
    for s, f in zip(system.states, system.field):
        out = s_add(out, s_mul(differentiate(V, s), f))
    return simplify(out)


def _check_states(tmpl: LyapunovTemplate, system: OdeSystem):
    if tmpl.state_names != tuple(system.states):
        raise ValueError("template states must match the system's state variables")


def _lyapunov_matrix(tmpl: LyapunovTemplate, V: Term, system: OdeSystem, strict: bool) -> Formula:
    names = tmpl.state_names
    parts = [_ge(V), _ge(s_neg(lie_derivative(V, system)))]
    at_zero = simplify(substitute(V, {n: Const(Fraction(0)) for n in names}))
    if isinstance(at_zero, Const):
        if at_zero.value != 0:
            raise ValueError("V(p, 0) must vanish")
    else:
        parts += [_ge(at_zero), _ge(s_neg(at_zero))]
    if strict:
        ball = _gt(s_sub(Const(tmpl.r), _sup_norm([Var(n) for n in names])))
        growth = _ge(s_sub(V, s_mul(Const(tmpl.c), _sum_squares(names))))
        parts.append(Or((ball, growth)))
    return _conj(parts)


def encode_lyapunov_check(
    tmpl: LyapunovTemplate, system: OdeSystem, params: Optional[Mapping[str, object]] = None, strict: bool = True
) -> Formula:
    """``∀x∈X. V ≥ 0 ∧ <∇V, f> ≤ 0`` (plus the strict-mode growth condition) at fixed parameters."""
    _check_states(tmpl, system)
    params = dict(params or {})
    missing = {n for n, _, _ in tmpl.params} - set(params)
    if missing:
        raise ValueError(f"parameters without values: {sorted(missing)}")
    V = simplify(substitute(tmpl.V, {k: Const(to_fraction(v)) for k, v in params.items()}))
    at_zero = simplify(substitute(V, {n: Const(Fraction(0)) for n in tmpl.state_names}))
    if isinstance(at_zero, Const) and at_zero.value != 0:
        raise ValueError("V(p, 0) must vanish")
    body = _lyapunov_matrix(tmpl, V, system, strict)
    return _bind(tmpl.states, body, Forall)


def encode_lyapunov_synthesis(tmpl: LyapunovTemplate, system: OdeSystem, strict: bool = True) -> Formula:
    """``∃p∈D ∀x∈X. V ≥ 0 ∧ V(p,0) = 0 ∧ <∇V, f> ≤ 0``."""
    _check_states(tmpl, system)
    body = _lyapunov_matrix(tmpl, simplify(tmpl.V), system, strict)
    return _bind(tmpl.params, _bind(tmpl.states, body, Forall), Exists)


def synthesize_lyapunov(
    tmpl: LyapunovTemplate, system: OdeSystem, cfg: Optional[SolverConfig] = None, strict: bool = True
) -> SolveResult:
    """Search the template's parameter box for a Lyapunov function.

    One parameter is handled by bisection over its interval with universal
    sub-queries; several go through counterexample-guided search.
    """
    cfg = cfg or SolverConfig()
    phi = encode_lyapunov_synthesis(tmpl, system, strict)
    if not tmpl.params:
        return solve_prenex(phi, cfg)
    if len(tmpl.params) == 1:
        return solve_prenex(phi, cfg)
    return solve_exists_forall(phi, cfg)


# ---------------------------------------------------------------- stability


@dataclass(frozen=True)
class StabilitySpec:
    """Bounded stability question for ``system`` around the origin.

    For every ``ε`` in ``[r, e]`` some radius ``d`` with ``κε ≤ d ≤ ε`` must
    keep every trajectory starting in ``X`` with ``|x0| < d`` inside the
    ``ε``-ball for times in ``[0, T]``.  ``r`` keeps ``ε`` away from the
    degenerate ball at the origin and ``κ`` (``min_radius_ratio``) stops
    ``d`` from collapsing to zero.
    """

    system: OdeSystem
    e: Fraction
    T: Fraction
    X: tuple  # ((lo, hi), ...) per state
    r: Optional[Fraction] = None
    min_radius_ratio: Fraction = Fraction(9, 10)

    def __post_init__(self):
        object.__setattr__(self, "e", to_fraction(self.e))
        object.__setattr__(self, "T", to_fraction(self.T))
        object.__setattr__(self, "X", tuple((to_fraction(a), to_fraction(b)) for a, b in self.X))
        r = self.e / 2 if self.r is None else to_fraction(self.r)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "min_radius_ratio", to_fraction(self.min_radius_ratio))
        if self.e <= 0 or self.T <= 0 or r <= 0:
            raise ValueError("e, T and r must be positive")
        if r > self.e:
            raise ValueError("r must not exceed e")
        if not 0 <= self.min_radius_ratio < 1:
            raise ValueError("min_radius_ratio must lie in [0, 1)")
        if len(self.X) != len(self.system.states):
            raise ValueError("X must give one interval per state")
        if not all(a <= 0 <= b for a, b in self.X):
            raise ValueError("X must contain the origin")
        if self.T > self.system.horizon:
            raise ValueError("T exceeds the system horizon")


def encode_delta_stability(spec: StabilitySpec) -> Formula:
    """``∀ε ∃d ∀t ∀x0. |x0| ≥ d ∨ |x(t; x0)| < ε`` with the radius side conditions."""
    sys = spec.system
    x0 = [f"{s}0" for s in sys.states]
    taken = set(x0) | {"eps", "d", "t"}
    if len(taken) != len(x0) + 3:
        raise ValueError("state names clash with the stability encoding's variables")
    eps, d, t = Var("eps"), Var("d"), Var("t")
    init = tuple(Var(n) for n in x0)
    flows = [Flow(sys, init, t, i) for i in range(len(x0))]
    escape = Or((_ge(s_sub(_sup_norm(list(init)), d)), _gt(s_sub(eps, _sup_norm(flows)))))
    inner = Forall("t", Fraction(0), spec.T, _bind(tuple((n, a, b) for n, (a, b) in zip(x0, spec.X)), escape, Forall))
    radius = And(
        (
            _ge(s_sub(eps, d)),
            _ge(s_sub(d, s_mul(Const(spec.min_radius_ratio), eps))),
            inner,
        )
    )
    return Forall("eps", spec.r, spec.e, Exists("d", Fraction(0), spec.e, radius))


def check_stability(spec: StabilitySpec, cfg: Optional[SolverConfig] = None) -> SolveResult:
    return solve_prenex(encode_delta_stability(spec), cfg or SolverConfig())


# ---------------------------------------------------------------- reachability


def encode_reachability(
    system: OdeSystem,
    init: Sequence[object],
    goal: Sequence[object],
    deltas: Tuple[object, object, object],
    T,
    x0_box: Optional[Sequence[Tuple[object, object]]] = None,
    xt_box: Optional[Sequence[Tuple[object, object]]] = None,
) -> Formula:
    """``∃x0 ∃t∈[0,T] ∃xt. |x0-c| ≤ δ1 ∧ |xt - x(t; x0)| ≤ δ2 ∧ |xt - g| ≤ δ3``.

    ``init`` holds the centre ``c`` per state and ``goal`` the target ``g``;
    goal terms may mention the initial-state variables ``<state>0``.  Each
    conjunct carries its own bound as an atom shift.
    """
    T = to_fraction(T)
    d1, d2, d3 = (to_fraction(d) for d in deltas)
    if min(d1, d2, d3) < 0:
        raise ValueError("error bounds must be non-negative")
    if T < 0 or T > system.horizon:
        raise ValueError("T must lie within the system horizon")
    n = len(system.states)
    if len(init) != n or len(goal) != n:
        raise ValueError("init and goal need one entry per state")
    x0 = [f"{s}0" for s in system.states]
    xt = [f"{s}t" for s in system.states]
    x0_box = tuple(system.domain if x0_box is None else x0_box)
    xt_box = tuple(system.domain if xt_box is None else xt_box)
    init_t = tuple(Var(v) for v in x0)
    parts = []
    for i, s in enumerate(system.states):
        c = init[i] if isinstance(init[i], Term) else Const(to_fraction(init[i]))
        parts.append(_ge(s_neg(fabs(s_sub(Var(x0[i]), c))), -d1))
    for i in range(n):
        parts.append(_ge(s_neg(fabs(s_sub(Var(xt[i]), Flow(system, init_t, Var("t"), i)))), -d2))
    for i in range(n):
        g = goal[i] if isinstance(goal[i], Term) else Const(to_fraction(goal[i]))
        parts.append(_ge(s_neg(fabs(s_sub(Var(xt[i]), g))), -d3))
    body = _conj(parts)
    body = _bind(tuple((v, a, b) for v, (a, b) in zip(xt, xt_box)), body, Exists)
    body = Exists("t", Fraction(0), T, body)
    return _bind(tuple((v, a, b) for v, (a, b) in zip(x0, x0_box)), body, Exists)


def check_reachability(phi: Formula, cfg: Optional[SolverConfig] = None) -> SolveResult:
    return solve_sigma1(phi, cfg or SolverConfig())


# ---------------------------------------------------------------- PID


@dataclass(frozen=True)
class Plant:
    """Open-loop dynamics ``d states/dt = field(states, input)``."""

    name: str
    states: tuple
    field: tuple
    domain: tuple
    input: str = "u"

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        object.__setattr__(self, "field", tuple(self.field))
        object.__setattr__(self, "domain", tuple((to_fraction(a), to_fraction(b)) for a, b in self.domain))
        if not (len(self.states) == len(self.field) == len(self.domain)):
            raise ValueError("states, field and domain must have equal length")
        allowed = set(self.states) | {self.input}
        for f in self.field:
            extra = term_vars(f) - allowed
            if extra:
                raise ValueError(f"plant field uses undeclared variable(s) {sorted(extra)}")


GAINS = ("kp", "ki", "kd")


@dataclass(frozen=True)
class PidTemplate:
    """PID search space for ``plant`` tracking ``reference`` on output ``output``.

    ``gains`` maps ``kp``/``ki``/``kd`` to intervals (missing gains are pinned
    to 0).  ``spec`` is a raw formula over the error variable ``e``; it must
    hold for every time in ``window``.
    """

    plant: Plant
    gains: Mapping[str, Tuple[object, object]]
    reference: object
    initial: tuple
    spec: Formula
    window: Tuple[object, object]
    output: int = 0
    step: Optional[Fraction] = None
    integrator_bound: Optional[Fraction] = None

    def __post_init__(self):
        g = {}
        for k, (a, b) in dict(self.gains).items():
            if k not in GAINS:
                raise ValueError(f"unknown gain {k!r}")
            a, b = to_fraction(a), to_fraction(b)
            if a > b:
                raise ValueError(f"empty interval for {k}")
            g[k] = (a, b)
        for k in GAINS:
            g.setdefault(k, (Fraction(0), Fraction(0)))
        if all(a == b for a, b in g.values()):
            raise ValueError("at least one gain needs a non-degenerate interval")
        object.__setattr__(self, "gains", g)
        ref = self.reference if isinstance(self.reference, Term) else Const(to_fraction(self.reference))
        if term_vars(ref):
            raise ValueError("the reference must be a constant")
        object.__setattr__(self, "reference", ref)
        object.__setattr__(self, "initial", tuple(to_fraction(v) for v in self.initial))
        if len(self.initial) != len(self.plant.states):
            raise ValueError("one initial value per plant state expected")
        w0, w1 = (to_fraction(w) for w in self.window)
        if not 0 <= w0 <= w1:
            raise ValueError("window must satisfy 0 <= start <= end")
        object.__setattr__(self, "window", (w0, w1))
        if not 0 <= self.output < len(self.plant.states):
            raise ValueError("output index out of range")
        extra = _raw_vars(self.spec) - {"e"}
        if extra:
            raise ValueError(f"spec may only mention e, found {sorted(extra)}")


def _raw_vars(phi) -> set:
    from .formula import Compare, Implies, Not

    if isinstance(phi, Compare):
        return term_vars(phi.lhs) | term_vars(phi.rhs)
    if isinstance(phi, Atom):
        return term_vars(phi.term)
    if isinstance(phi, Not):
        return _raw_vars(phi.arg)
    if isinstance(phi, Implies):
        return _raw_vars(phi.lhs) | _raw_vars(phi.rhs)
    if isinstance(phi, (And, Or)):
        out: set = set()
        for a in phi.args:
            out |= _raw_vars(a)
        return out
    raise FormulaError("spec must be quantifier-free")


def closed_loop(tmpl: PidTemplate) -> Tuple[OdeSystem, tuple]:
    """Closed-loop system and its initial-state terms.

    Free gains become constant states, the integral term an extra state
    ``z`` with ``z' = e``, and the derivative term ``de/dt`` is the Lie
    derivative of ``e`` along the plant driven by the P and I parts.
    """
    p = tmpl.plant
    y = Var(p.states[tmpl.output])
    e = s_sub(tmpl.reference, y)
    gains = tmpl.gains
    free = [k for k in GAINS if gains[k][0] != gains[k][1]]
    for k in free:
        if k in p.states or k == "z":
            raise ValueError(f"plant state name {k!r} clashes with the closed-loop states")
    gain_term = {k: (Var(k) if k in free else Const(gains[k][0])) for k in GAINS}
    use_i = "ki" in free or gains["ki"][0] != 0
    use_d = "kd" in free or gains["kd"][0] != 0
    u_pi = s_mul(gain_term["kp"], e)
    if use_i:
        u_pi = s_add(u_pi, s_mul(gain_term["ki"], Var("z")))
    u = u_pi
    if use_d:
        drift = [simplify(substitute(f, {p.input: u_pi})) for f in p.field]
        de = Const(Fraction(0))
        for s, f in zip(p.states, drift):
            de = s_add(de, s_mul(differentiate(e, s), f))
        u = s_add(u_pi, s_mul(gain_term["kd"], simplify(de)))
    states = list(p.states)
    field_ = [simplify(substitute(f, {p.input: u})) for f in p.field]
    domain = list(p.domain)
    init: list = [Const(v) for v in tmpl.initial]
    T = tmpl.window[1]
    if use_i:
        box = {s: Interval.from_rational(a, b) for s, (a, b) in zip(p.states, p.domain)}
        emax = Fraction(eval_term(fabs(e), box).hi) if tmpl.integrator_bound is None else tmpl.integrator_bound
        zb = T * emax + 1
        states.append("z")
        field_.append(simplify(e))
        domain.append((-zb, zb))
        init.append(Const(Fraction(0)))
    for k in free:
        states.append(k)
        field_.append(Const(Fraction(0)))
        domain.append(gains[k])
        init.append(Var(k))
    system = OdeSystem(f"{p.name}_closed", tuple(states), tuple(field_), tuple(domain), T, tmpl.step)
    return system, tuple(init)


def encode_pid(tmpl: PidTemplate) -> Formula:
    """``∃gains ∀t∈window. spec(e := r - y(t))`` over the closed loop."""
    system, init = closed_loop(tmpl)
    y_t = Flow(system, init, Var("t"), tmpl.output)
    err = s_sub(tmpl.reference, y_t)
    spec = normalize_nnf(tmpl.spec)
    spec = map_atoms(spec, lambda a: Atom(simplify(substitute(a.term, {"e": err})), a.strict, a.shift))
    w0, w1 = tmpl.window
    body = Forall("t", w0, w1, spec)
    free = [(k, *tmpl.gains[k]) for k in GAINS if tmpl.gains[k][0] != tmpl.gains[k][1]]
    return _bind(tuple(free), body, Exists)


def tune_pid(tmpl: PidTemplate, cfg: Optional[SolverConfig] = None) -> SolveResult:
    """Search the gain box for gains meeting the spec throughout the window."""
    from .interval import DomainViolation

    phi = encode_pid(tmpl)
    try:
        return solve_exists_forall(phi, cfg or SolverConfig())
    except DomainViolation as exc:
        box = exc.box if isinstance(exc.box, dict) else {}
        exc.gains = {k: v for k, v in box.items() if k in GAINS}
        raise
