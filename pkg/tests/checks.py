"""Checks used across test modules.

The RK4 helpers do not go through the package's term language.
"""

from deltactl.formula import And, Atom
from deltactl.interval import TruthValue, eval_atom


def rk4_path(f, y0, t_end, steps):
    """States of ``dy/dt = f(y)`` at ``t_end * k / steps`` for ``k = 0..steps``."""
    h = t_end / steps
    y = float(y0)
    out = [y]
    for _ in range(steps):
        k1 = f(y)
        k2 = f(y + 0.5 * h * k1)
        k3 = f(y + 0.5 * h * k2)
        k4 = f(y + h * k3)
        y += h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        out.append(y)
    return out


def p_only_margin(plant_rhs, kp, reference, y0, window, bound, samples=100, substeps=200):
    """Smallest ``bound - |reference - y(t)|`` over ``samples`` times spread over ``window``.

    ``plant_rhs(y, u)`` is the open-loop right-hand side; the loop closes with
    ``u = kp * (reference - y)``.
    """
    kp, reference = float(kp), float(reference)
    lo, hi = (float(w) for w in window)
    times = [lo + (hi - lo) * k / (samples - 1) for k in range(samples)] if hi > lo else [lo] * samples
    worst = float("inf")
    for t in times:
        if t == 0:
            y = float(y0)
        else:
            y = rk4_path(lambda v: plant_rhs(v, kp * (reference - v)), y0, t, max(1, int(t * substeps)))[-1]
        worst = min(worst, float(bound) - abs(reference - y))
    return worst


def cert(phi, box, mode):
    """Three-valued truth of a quantifier-free normal formula over a box."""
    if isinstance(phi, Atom):
        return eval_atom(phi, box, mode)
    vals = [cert(a, box, mode) for a in phi.args]
    if isinstance(phi, And):
        win, lose = TruthValue.CERT_FALSE, TruthValue.CERT_TRUE
    else:
        win, lose = TruthValue.CERT_TRUE, TruthValue.CERT_FALSE
    if win in vals:
        return win
    return lose if all(v == lose for v in vals) else TruthValue.UNKNOWN
