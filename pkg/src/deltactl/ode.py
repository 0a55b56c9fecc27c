"""Validated enclosures of ODE solutions.

Interval Euler stepping with a rigorous second-order remainder.  Each step
first finds an a priori box ``B`` with ``X + [0, h] f(B) ⊆ B`` (so the
solution stays in ``B`` over the whole step), then encloses the endpoint by
the mean-value form of the Euler map plus ``h²/2 · (Df·f)(B)``.
"""

from __future__ import annotations

import bisect
import math
import threading
from collections import OrderedDict
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import List, Optional, Sequence, Tuple

from .formula import NonSmoothTerm, differentiate, format_rational, format_term, term_vars, to_fraction
from .interval import (
    DomainViolation,
    Interval,
    add_up,
    compile_term,
    iadd,
    imul,
    isub,
    lipschitz_bound,
    mul_up,
)

MAX_HALVINGS = 12
_CACHE_SIZE = 50000


class DomainEscape(DomainViolation):
    """The enclosure left the declared domain of the system."""

    def __init__(self, system, time: float, box=None):
        self.time = time
        self.system = system
        DomainViolation.__init__(self, system.name, box, f"enclosure of {system.name} escapes its domain at t={time}")


class StepTooLarge(ArithmeticError):
    escaped = False

    pass


@dataclass(frozen=True)
class OdeSystem:
    """``d states/dt = field`` on the box ``domain`` for times in ``[0, horizon]``.

    ``step`` overrides the default Euler step; it is rounded down to a power
    of two so that grid times are exact floats.
    """

    name: str
    states: tuple
    field: tuple
    domain: tuple  # ((lo, hi), ...) rationals
    horizon: Fraction
    step: Optional[Fraction] = None

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        object.__setattr__(self, "field", tuple(self.field))
        object.__setattr__(self, "domain", tuple((to_fraction(lo), to_fraction(hi)) for lo, hi in self.domain))
        object.__setattr__(self, "horizon", to_fraction(self.horizon))
        if self.step is not None:
            object.__setattr__(self, "step", to_fraction(self.step))
        n = len(self.states)
        if len(self.field) != n or len(self.domain) != n:
            raise ValueError(f"system {self.name}: states, field and domain must have equal length")
        if len(set(self.states)) != n:
            raise ValueError(f"system {self.name}: duplicate state names")
        for f in self.field:
            extra = term_vars(f) - set(self.states)
            if extra:
                raise ValueError(f"system {self.name}: field uses non-state variable(s) {sorted(extra)}")
        for lo, hi in self.domain:
            if lo > hi:
                raise ValueError(f"system {self.name}: empty domain interval")
        if self.horizon <= 0:
            raise ValueError(f"system {self.name}: horizon must be positive")
        if not math.isfinite(field_lipschitz(self)):
            raise ValueError(f"system {self.name}: vector field is not Lipschitz on its domain")

    def domain_box(self) -> dict:
        return {s: Interval.from_rational(lo, hi) for s, (lo, hi) in zip(self.states, self.domain)}

    def canonical(self) -> str:
        fields = " ".join(f"({s} {format_term(f)})" for s, f in zip(self.states, self.field))
        dom = " ".join(f"[{format_rational(lo)} {format_rational(hi)}]" for lo, hi in self.domain)
        step = "" if self.step is None else f" :step {format_rational(self.step)}"
        return f"(declare-ode {self.name} ({fields}) :domain ({dom}) :horizon {format_rational(self.horizon)}{step})"


@lru_cache(maxsize=256)
def field_lipschitz(system: OdeSystem) -> float:
    """``L_f``: max over components of the Lipschitz bound of ``f_i`` on the domain."""
    box = system.domain_box()
    return max((lipschitz_bound(f, box) for f in system.field), default=0.0)


@lru_cache(maxsize=256)
def field_magnitude(system: OdeSystem) -> float:
    """``sup ||f||_inf`` over the domain."""
    box = system.domain_box()
    return max((compile_term(f)(box).mag for f in system.field), default=0.0)


def gronwall_lipschitz(system: OdeSystem, t_max) -> float:
    """Lipschitz constant ``exp(L_f * t_max)`` of the flow map ``x0 -> x(t_max; x0)``."""
    t_max = float(t_max)
    if t_max > float(system.horizon):
        raise ValueError("t_max exceeds the system horizon")
    lf = field_lipschitz(system)
    if lf == 0.0:
        return 1.0
    try:
        return math.nextafter(math.nextafter(math.exp(mul_up(lf, t_max)), math.inf), math.inf)
    except OverflowError:
        return math.inf


def flow_sensitivity(system: OdeSystem, init: Sequence[Interval], t_max: float) -> Tuple[float, float]:
    """Local bounds ``(K, S)`` for flows from ``init`` over ``[0, t_max]``.

    ``|x(t; a) - x(t; b)| <= K |a - b|`` (sup norms) and ``|x'(t)| <= S``.
    ``K`` uses the logarithmic norm of the Jacobian over the hull of the
    enclosure, so contracting systems get ``K = 1``.
    """
    t_max = max(float(t_max), 0.0)
    hull = _enclose(system, list(init), Interval(0.0, t_max))
    env = dict(zip(system.states, hull))
    speed = max((f(env).mag for f in _compiled_field(system)), default=0.0)
    jac = _jacobian(system)
    if jac is None:
        lip = max((lipschitz_bound(f, env) for f in system.field), default=0.0)
        mu = lip
    else:
        mu = -math.inf
        for i, row in enumerate(jac):
            acc = 0.0
            for j, d in enumerate(row):
                v = d(env)
                acc = add_up(acc, v.hi if i == j else v.mag)
            mu = max(mu, acc)
    if mu <= 0 or t_max == 0:
        return 1.0, speed
    try:
        k = math.nextafter(math.nextafter(math.exp(mul_up(mu, t_max)), math.inf), math.inf)
    except OverflowError:
        k = math.inf
    return k, speed


def default_step(system: OdeSystem) -> float:
    if system.step is not None:
        target = float(system.step)
    else:
        lf = field_lipschitz(system)
        target = 2.0 ** -7 * min(1.0, 1.0 / lf if lf > 0 else 1.0)
    return 2.0 ** math.floor(math.log2(target))


@lru_cache(maxsize=256)
def _jacobian(system: OdeSystem):
    try:
        rows = [[differentiate(f, s) for s in system.states] for f in system.field]
    except NonSmoothTerm:
        return None
    return [[compile_term(d) for d in row] for row in rows]


@lru_cache(maxsize=256)
def _compiled_field(system: OdeSystem):
    return [compile_term(f) for f in system.field]


def _inside(box: Sequence[Interval], dom: Sequence[Interval]) -> bool:
    return all(d.lo <= b.lo and b.hi <= d.hi for b, d in zip(box, dom))


def _inflate(iv: Interval, factor: float = 0.1) -> Interval:
    w = iv.width * factor + 1e-15 * (1.0 + iv.mag)
    return Interval(iv.lo - w, iv.hi + w)


def _clip(iv: Interval, dom: Interval) -> Optional[Interval]:
    lo, hi = max(iv.lo, dom.lo), min(iv.hi, dom.hi)
    return Interval(lo, hi) if lo <= hi else None


class _Stepper:
    """Euler enclosure machinery for one system."""

    def __init__(self, system: OdeSystem):
        self.system = system
        self.names = system.states
        self.f = _compiled_field(system)
        self.jac = _jacobian(system)
        self.dom = [system.domain_box()[s] for s in system.states]
        self.lf = field_lipschitz(system)

    def _env(self, xs):
        return dict(zip(self.names, xs))

    def field(self, xs) -> List[Interval]:
        env = self._env(xs)
        return [f(env) for f in self.f]

    def step(self, x: List[Interval], h: float, t: float) -> Tuple[List[Interval], List[Interval]]:
        """One step from ``x`` at time ``t``: (a priori box over the step, endpoint box)."""
        hiv = Interval(0.0, h)
        fx = self.field(x)
        # candidates are clipped to the domain; the containment test below
        # is what makes the final box valid
        b = [_clip(iadd(xi, _inflate(imul(hiv, fi))), d) or xi for xi, fi, d in zip(x, fx, self.dom)]
        escaped = False
        for _ in range(6):
            fb = self.field(b)
            n = [iadd(xi, imul(hiv, fi)) for xi, fi in zip(x, fb)]
            if all(bi.lo <= ni.lo and ni.hi <= bi.hi for ni, bi in zip(n, b)):
                b = n
                break
            escaped = not _inside(n, self.dom)
            b = [_clip(_inflate(ni.hull(bi), 0.5), d) for ni, bi, d in zip(n, b, self.dom)]
        else:
            err = StepTooLarge(f"a priori enclosure did not close at t={t} with h={h}")
            err.escaped = escaped
            err.box = self._env(b)
            raise err

        fb = self.field(b)
        half_h2 = mul_up(0.5, mul_up(h, h))
        hh = Interval(h)
        if self.jac is not None:
            env_b = self._env(b)
            jb = [[d(env_b) for d in row] for row in self.jac]
            rem = []
            for row in jb:
                acc = Interval(0.0)
                for jij, fj in zip(row, fb):
                    acc = iadd(acc, imul(jij, fj))
                rem.append(imul(Interval(half_h2), acc))
            # mean-value form of x + h f(x) around the midpoint
            env_x = self._env(x)
            jx = [[d(env_x) for d in row] for row in self.jac]
            xm = [Interval(xi.mid) for xi in x]
            fm = self.field(xm)
            dx = [isub(xi, mi) for xi, mi in zip(x, xm)]
            centred = []
            for i in range(len(x)):
                acc = iadd(xm[i], imul(hh, fm[i]))
                for j in range(len(x)):
                    coeff = imul(hh, jx[i][j])
                    if i == j:
                        coeff = iadd(Interval(1.0), coeff)
                    acc = iadd(acc, imul(coeff, dx[j]))
                centred.append(acc)
        else:
            mag = max(fi.mag for fi in fb)
            r = mul_up(half_h2, mul_up(self.lf, mag))
            rem = [Interval(-r, r)] * len(x)
            centred = None
        naive = [iadd(xi, imul(hh, fi)) for xi, fi in zip(x, fx)]
        out = []
        for i in range(len(x)):
            e = naive[i]
            if centred is not None:
                e = e.intersect(centred[i]) or e
            e = iadd(e, rem[i])
            # the endpoint also lies in the a priori box
            out.append(e.intersect(b[i]) or e)
        if not _inside(out, self.dom):
            raise DomainEscape(self.system, t + h, self._env(out))
        return b, out


class _Trace:
    """Lazily extended trace from one initial box."""

    __slots__ = ("times", "ends", "segs", "h", "error")

    def __init__(self, x0: List[Interval], h: float):
        self.times = [0.0]
        self.ends = [x0]
        self.segs: List[List[Interval]] = []
        self.h = h
        self.error: Optional[Exception] = None

    def extend(self, stepper: _Stepper, t_target: float, min_h: float):
        while self.times[-1] < t_target:
            if self.error is not None:
                raise self.error
            t = self.times[-1]
            h = self.h
            while True:
                try:
                    seg, end = stepper.step(self.ends[-1], h, t)
                    break
                except StepTooLarge as e:
                    h *= 0.5
                    if h < min_h:
                        self.error = DomainEscape(stepper.system, t, e.box) if e.escaped else e
                        raise self.error from None
                except DomainEscape as e:
                    self.error = e
                    raise
            self.h = h
            self.segs.append(seg)
            self.ends.append(end)
            self.times.append(t + h)


_cache: "OrderedDict" = OrderedDict()
_lock = threading.RLock()


def clear_cache():
    with _lock:
        _cache.clear()


def _get_trace(system: OdeSystem, x0: Sequence[Interval], h: Optional[float]) -> Tuple[_Trace, _Stepper]:
    base = default_step(system) if h is None else float(h)
    key = (system, tuple((iv.lo, iv.hi) for iv in x0), base)
    tr = _cache.get(key)
    if tr is None:
        tr = (_Trace(list(x0), base), _Stepper(system))
        _cache[key] = tr
        if len(_cache) > _CACHE_SIZE:
            _cache.popitem(last=False)
    else:
        _cache.move_to_end(key)
    return tr


def _check_start(system: OdeSystem, x0: Sequence[Interval]):
    dom = [system.domain_box()[s] for s in system.states]
    if len(x0) != len(dom):
        raise ValueError(f"system {system.name} expects {len(dom)} initial values")
    if not _inside(x0, dom):
        raise DomainEscape(system, 0.0, dict(zip(system.states, x0)))


def _enclose(system, x0, t: Interval, h=None) -> List[Interval]:
    if t.lo < 0:
        raise DomainViolation(f"flow {system.name}", None, "negative flow time")
    if t.hi > float(system.horizon):
        raise DomainViolation(f"flow {system.name}", None, "flow time beyond the system horizon")
    _check_start(system, x0)
    with _lock:
        trace, stepper = _get_trace(system, x0, h)
        min_h = (default_step(system) if h is None else float(h)) * 2.0 ** -MAX_HALVINGS
        trace.extend(stepper, t.hi, min_h)
        times, ends, segs = trace.times, trace.ends, trace.segs
        out: Optional[List[Interval]] = None

        def join(boxes):
            nonlocal out
            out = list(boxes) if out is None else [a.hull(b) for a, b in zip(out, boxes)]

        i = bisect.bisect_left(times, t.lo)
        if i < len(times) and times[i] == t.lo and t.lo == t.hi:
            return list(ends[i])
        # segments k cover [times[k], times[k+1]]
        k = max(0, bisect.bisect_right(times, t.lo) - 1)
        while k < len(segs) and times[k] <= t.hi:
            if times[k + 1] >= t.lo:
                join(segs[k])
            k += 1
        if out is None:
            join(ends[-1])
        return out


def flow_enclosure(system: OdeSystem, x0, t, h=None) -> dict:
    """Box containing ``x(tau; x0')`` for every ``x0' in x0`` and ``tau in t``."""
    x0 = _as_list(system, x0)
    t = t if isinstance(t, Interval) else Interval.from_rational(t)
    return dict(zip(system.states, _enclose(system, x0, t, h)))


def flow_interval(system: OdeSystem, init: Sequence[Interval], time: Interval, index: int) -> Interval:
    return _enclose(system, list(init), time)[index]


@dataclass(frozen=True)
class FlowTrace:
    """Consecutive ``(time interval, state box)`` pieces covering ``[0, t_max]``."""

    segments: tuple

    def __len__(self):
        return len(self.segments)

    def __iter__(self):
        return iter(self.segments)

    def box_at(self, tau: float) -> dict:
        boxes = [b for t, b in self.segments if t.lo <= tau <= t.hi]
        out = dict(boxes[0])
        for b in boxes[1:]:
            out = {k: out[k].hull(v) for k, v in b.items()}
        return out


def flow_trace(system: OdeSystem, x0, t_max, h=None) -> FlowTrace:
    x0 = _as_list(system, x0)
    t_max = float(t_max)
    _enclose(system, x0, Interval(t_max), h)
    with _lock:
        trace, _ = _get_trace(system, x0, h)
        segments = []
        for k, seg in enumerate(trace.segs):
            a, b = trace.times[k], trace.times[k + 1]
            if a >= t_max:
                break
            segments.append((Interval(a, b), dict(zip(system.states, seg))))
    return FlowTrace(tuple(segments))


def _as_list(system: OdeSystem, x0) -> List[Interval]:
    if isinstance(x0, dict):
        x0 = [x0[s] for s in system.states]
    out = []
    for v in x0:
        if isinstance(v, Interval):
            out.append(v)
        elif isinstance(v, tuple):
            out.append(Interval.from_rational(*v))
        else:
            out.append(Interval.from_rational(v))
    return out
