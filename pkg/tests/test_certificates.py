from dataclasses import replace
from fractions import Fraction

import pytest

from deltactl.certificates import (
    Accepted,
    Certificate,
    QCell,
    QChoose,
    QLeaf,
    QSplit,
    Rejected,
    emit_certificate,
    parse_certificate,
    render,
    verify_certificate,
)
from deltactl.formula import Atom, Exists, Var, delta_strengthen, delta_weaken, digest, holds, normalize_nnf, to_prenex
from deltactl.oracle import rk4
from corpus import solved

x = Var("x")


def splits(node, path=()):
    """Paths to every split node in a proof tree."""
    if isinstance(node, QSplit):
        yield path
        yield from splits(node.left, path + ("left",))
        yield from splits(node.right, path + ("right",))
    elif isinstance(node, (QCell, QChoose)):
        yield from splits(node.sub, path + ("sub",))


def get(node, path):
    for step in path:
        node = getattr(node, step)
    return node


def put(node, path, new):
    if not path:
        return new
    head, rest = path[0], path[1:]
    return replace(node, **{head: put(getattr(node, head), rest, new)})


def leaves(node, path=()):
    if isinstance(node, QLeaf):
        yield path
    elif isinstance(node, QSplit):
        yield from leaves(node.left, path + ("left",))
        yield from leaves(node.right, path + ("right",))
    else:
        yield from leaves(node.sub, path + ("sub",))


def bounds_of(cert, path):
    """Split interval of the variable split at ``path``, read from the cells below it."""
    node = get(cert.proof, path)
    lo = hi = None
    for leaf_path in leaves(node):
        cell = next(get(node, leaf_path[:i]) for i in range(len(leaf_path), -1, -1) if isinstance(get(node, leaf_path[:i]), QCell))
        for v, a, b in cell.box:
            if v == node.var:
                lo = a if lo is None else min(lo, a)
                hi = b if hi is None else max(hi, b)
    return lo, hi


def mutations(cert):
    """``(kind, mutated certificate)`` pairs."""
    for path in splits(cert.proof):
        node = get(cert.proof, path)
        yield "cover gap", put(cert.proof, path, node.left), cert
        lo, hi = bounds_of(cert, path)
        moved = node.at + (hi - node.at) / 3
        yield "shifted split", put(cert.proof, path, replace(node, at=moved)), cert
    for path in leaves(cert.proof):
        leaf = get(cert.proof, path)
        if leaf.entries:
            i, lo, hi = leaf.entries[0]
            bumped = ((i, lo + 1000, hi + 1000),) + leaf.entries[1:]
            yield "forged enclosure", put(cert.proof, path, QLeaf(bumped)), cert
            break
    if cert.point:
        name, v = cert.point[0]
        for delta in (Fraction(1, 2), Fraction(-1, 2), Fraction(1, 5), Fraction(-1, 5), Fraction(100)):
            point = ((name, v + delta),) + cert.point[1:]
            yield "perturbed witness", cert.proof, replace(cert, point=point)


def still_a_witness(phi, cert):
    """Independent point check of a witness certificate's claim.

    ``None`` when the claim cannot be settled by evaluating the matrix at the
    point alone (nested prefixes).
    """
    p = to_prenex(normalize_nnf(phi))
    env = dict(cert.point)
    for name, lo, hi in p.variables:
        if name in env and not lo <= env[name] <= hi:
            return False
    if len(p.blocks) != 1:
        return None
    if cert.verdict == "delta-sat":
        return holds(delta_weaken(p.matrix, cert.delta), env, rk4_flow)
    return not holds(delta_strengthen(p.matrix, cert.delta), env, rk4_flow)


def rk4_flow(system, init, time, index):
    return rk4(system, init, time, 2000)[index]


def corpus_certificates():
    out = []
    for name, (phi, _, res) in sorted(solved().items()):
        out.append((name, phi, parse_certificate(emit_certificate(res))))
    return out


def test_round_trip_on_corpus():
    certs = corpus_certificates()
    assert len(certs) >= 20
    for name, phi, cert in certs:
        text = render(cert)
        assert parse_certificate(text) == cert
        assert verify_certificate(text, phi) == Accepted(), name


def test_mutated_certificates_are_rejected():
    seen = {}
    rejected = 0
    for name, phi, cert in corpus_certificates():
        for kind, proof, base in mutations(cert):
            bad = replace(base, proof=proof)
            if bad == cert:
                continue
            if kind == "perturbed witness" and still_a_witness(phi, bad) is not False:
                continue
            verdict = verify_certificate(render(bad), phi)
            assert isinstance(verdict, Rejected), (name, kind)
            seen[kind] = seen.get(kind, 0) + 1
            rejected += 1
    assert rejected >= 30
    print(f"rejected mutations: {rejected} {sorted(seen.items())}")
    assert {"cover gap", "shifted split", "perturbed witness"} <= set(seen)


def test_header_mutations():
    name, phi, cert = next(c for c in corpus_certificates() if c[2].kind == "witness")
    assert isinstance(verify_certificate(render(replace(cert, digest="0" * 64)), phi), Rejected)
    assert verify_certificate(render(cert), phi, delta=cert.delta * 2) == Rejected("delta mismatch")
    assert isinstance(verify_certificate("(witness (format 1))", phi), Rejected)
    assert isinstance(verify_certificate("not a certificate", phi), Rejected)


def single_leaf_refutation(entries):
    phi = Exists("x", 0, 1, Atom(x - 2, True))
    cert = Certificate(
        "refutation",
        digest(normalize_nnf(phi)),
        Fraction(1, 100),
        (),
        "unsat",
        (),
        QCell((("x", Fraction(0), Fraction(1)),), QLeaf(entries)),
    )
    return phi, cert


def test_hand_written_refutation():
    phi, cert = single_leaf_refutation(((0, Fraction(-2), Fraction(-1)),))
    assert verify_certificate(render(cert), phi) == Accepted()


def test_gap_in_hand_written_refutation():
    phi, cert = single_leaf_refutation(((0, Fraction(-2), Fraction(-1)),))
    half = Fraction(1, 2)
    gapped = replace(
        cert,
        proof=QSplit("x", half, QCell((("x", Fraction(0), half),), cert.proof.sub), QCell((("x", half, half),), cert.proof.sub)),
    )
    assert verify_certificate(render(gapped), phi) == Rejected("cover gap")


def test_witness_certificate_for_simple_bound():
    phi = Exists("x", 0, 2, Atom(x - 1, False))
    from deltactl.solver import SolverConfig, solve

    res = solve(phi, SolverConfig(delta=Fraction(1, 100)))
    cert = parse_certificate(emit_certificate(res))
    half = Fraction(1, 2)
    good = replace(cert, point=(("x", Fraction(3, 2)),), proof=QLeaf(((0, half, half),)))
    assert verify_certificate(render(good), phi) == Accepted()
    with pytest.raises(Exception):
        parse_certificate("(witness (format 2))")
