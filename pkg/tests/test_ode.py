import math
import random
from fractions import Fraction

import pytest

from deltactl.formula import Const, Var, fabs
from deltactl.interval import DomainViolation, Interval
from deltactl.ode import (
    DomainEscape,
    OdeSystem,
    default_step,
    flow_enclosure,
    flow_trace,
    gronwall_lipschitz,
)
from deltactl.oracle import rk4

x, y = Var("x"), Var("y")


def system(field, domain=((-2, 2),), horizon=2, states=("x",), step=None):
    return OdeSystem("f", states, tuple(field), domain, horizon, step)


def test_constant_flow():
    iv = flow_enclosure(system([Const(0)]), [1], Fraction(7, 10))["x"]
    assert iv.lo <= 1 <= iv.hi and iv.width <= 2.0**-40


def test_linear_flow():
    iv = flow_enclosure(system([Const(1)]), [0], Fraction(1, 2))["x"]
    assert 0.5 in iv and iv.width <= 1e-3


def test_decay_encloses_inverse_e():
    sys = system([-x])
    assert default_step(sys) == 2.0**-7
    iv = flow_enclosure(sys, [1], 1)["x"]
    assert math.exp(-1) in iv
    assert iv.width <= 1e-2
    assert rk4(sys, [1.0], 1.0, 4000)[0] in iv


def test_trace_segments_of_unit_drift():
    tr = flow_trace(system([Const(1)]), [0], 1, h=Fraction(1, 4))
    assert len(tr) == 4
    for k, (t, box) in enumerate(tr):
        assert t.lo == k / 4 and t.hi == (k + 1) / 4
        assert box["x"].contains(Interval(k / 4, (k + 1) / 4))


def test_segments_abut():
    tr = flow_trace(system([-x * x * x], domain=((-1, 1),)), [1], 1)
    times = [t for t, _ in tr]
    assert times[0].lo == 0 and times[-1].hi >= 1
    assert all(a.hi == b.lo for a, b in zip(times, times[1:]))


def test_cubic_decay_stays_in_unit_band():
    tr = flow_trace(system([-x * x * x], domain=((-1, 2),)), [1], 1)
    for _, box in tr:
        assert box["x"].lo >= 0 and box["x"].hi <= 1 + 1e-3


def test_interval_initial_set():
    iv = flow_enclosure(system([-x]), [(Fraction(9, 10), Fraction(11, 10))], 1)["x"]
    assert iv.contains(Interval(0.9 * math.exp(-1), 1.1 * math.exp(-1)))


def test_gronwall_examples():
    assert gronwall_lipschitz(system([Const(0)]), 1) == 1
    assert math.isclose(gronwall_lipschitz(system([-x]), 1), math.e, rel_tol=1e-9)
    assert gronwall_lipschitz(system([-x * x * x], domain=((-1, 1),)), 1) <= math.exp(3) * (1 + 1e-9)


def test_escape_is_reported():
    with pytest.raises(DomainEscape):
        flow_enclosure(system([Const(1)], domain=((0, 1),)), [0], Fraction(3, 2))


def test_start_outside_domain():
    with pytest.raises(DomainEscape):
        flow_enclosure(system([-x], domain=((0, 1),)), [2], Fraction(1, 2))


def test_time_beyond_horizon():
    with pytest.raises(DomainViolation):
        flow_enclosure(system([-x], horizon=1), [1], 2)


def test_non_state_variable_rejected():
    with pytest.raises(ValueError):
        system([y])


def random_system(rnd):
    if rnd.random() < 0.5:
        a = [[Fraction(rnd.randint(-8, 4), 4) for _ in range(2)] for _ in range(2)]
        field = [Const(a[i][0]) * x + Const(a[i][1]) * y for i in range(2)]
        return system(field, domain=((-8, 8), (-8, 8)), horizon=1, states=("x", "y"))
    c = Fraction(rnd.randint(1, 4), 4)
    b = Fraction(rnd.randint(-4, 4), 4)
    field = [-Const(c) * x * x * x + Const(b) * y, -y]
    return system(field, domain=((-2, 2), (-2, 2)), horizon=1, states=("x", "y"))


def test_rk4_reference_inside_trace():
    rnd = random.Random(7)
    for _ in range(100):
        sys = random_system(rnd)
        x0 = [Fraction(rnd.randint(-10, 10), 10), Fraction(rnd.randint(-10, 10), 10)]
        tr = flow_trace(sys, x0, 1)
        ref = [float(v) for v in x0]
        for k in range(0, 21):
            if k:
                ref = rk4(sys, ref, 1 / 20, 2000)
            box = tr.box_at(k / 20)
            for name, v in zip(sys.states, ref):
                assert v in box[name], (sys, x0, k, name, v, box[name])


def refinement_ratios(field):
    sys = system([field])
    widths = [flow_enclosure(sys, [1], 1, h=2.0**-k)["x"].width for k in (6, 7, 8)]
    assert widths[1] <= widths[0] and widths[2] <= widths[1]
    return [a / b for a, b in zip(widths, widths[1:])]


def test_step_refinement_lipschitz_remainder():
    # a non-smooth field has no Jacobian, so the step uses the h^2 L sup|f| / 2 remainder
    for r in refinement_ratios(-fabs(x)):
        assert 1.5 <= r <= 2.5


def test_step_refinement_mean_value_remainder():
    # the Jacobian remainder is second order for point starts
    for r in refinement_ratios(-x):
        assert r >= 1.5


def test_initial_set_monotonicity():
    sys = system([-x * x * x], domain=((-2, 2),))
    small = flow_enclosure(sys, [(Fraction(1, 2), Fraction(3, 5))], 1)["x"]
    big = flow_enclosure(sys, [(Fraction(2, 5), Fraction(7, 10))], 1)["x"]
    slack = 2.0**-40
    assert big.lo - slack <= small.lo and small.hi <= big.hi + slack
