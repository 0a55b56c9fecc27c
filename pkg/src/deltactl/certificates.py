"""Certificate files: emission from solver results and independent checking.

A certificate is canonical S-expression text.  Two top-level shapes exist::

    (witness
     (format 1)
     (digest "<sha256>")
     (delta 1/100)
     (atom-deltas ())
     (verdict delta-sat)
     (point ((x 181/128)))
     (proof ...))

    (refutation
     (format 1)
     (digest "<sha256>")
     (delta 1/100)
     (atom-deltas ())
     (polarity false)
     (proof ...))

``polarity false`` refutes an existential sentence; ``polarity true`` is the
cover proof of a valid universal sentence.  Proof nodes are ``(leaf (i lo hi)
...)`` listing the deciding atoms with their enclosures, ``(choose ((x v) ...)
P)``, ``(split x v P P)`` and ``(cell ((x lo hi) ...) P)``.  Every number is
an exact rational.

The checker below only evaluates terms and atoms; it never searches.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, List, Optional, Tuple

from .formula import (
    And,
    Atom,
    Formula,
    atoms,
    digest,
    format_rational,
    is_normal,
    normalize_nnf,
    to_prenex,
)
from .interval import DomainViolation, Interval, TruthValue, eval_atom, eval_term, truth_of
from .proof import Cell, Choose, Leaf, Proof, Split
from .sexpr import SExprError, SList, Str, parse_number, read_all

FORMAT_VERSION = 1


class CertificateError(ValueError):
    pass


@dataclass(frozen=True)
class Accepted:
    def __bool__(self):
        return True

    def __str__(self):
        return "accepted"


@dataclass(frozen=True)
class Rejected:
    reason: str

    def __bool__(self):
        return False

    def __str__(self):
        return f"rejected: {self.reason}"


# proof nodes with exact data, as read back from a file


@dataclass(frozen=True)
class QLeaf:
    entries: Tuple[Tuple[int, Fraction, Fraction], ...]


@dataclass(frozen=True)
class QChoose:
    point: Tuple[Tuple[str, Fraction], ...]
    sub: object


@dataclass(frozen=True)
class QSplit:
    var: str
    at: Fraction
    left: object
    right: object


@dataclass(frozen=True)
class QCell:
    box: Tuple[Tuple[str, Fraction, Fraction], ...]
    sub: object


@dataclass(frozen=True)
class Certificate:
    kind: str  # "witness" or "refutation"
    digest: str
    delta: Fraction
    atom_deltas: Tuple[Tuple[int, Fraction], ...]
    verdict: str  # delta-sat, delta-false, unsat, valid
    point: Tuple[Tuple[str, Fraction], ...]
    proof: object

    @property
    def universal(self) -> bool:
        return self.verdict in ("valid", "delta-false")


def _prepare(phi: Formula) -> Formula:
    return phi if is_normal(phi) else normalize_nnf(phi)


# ---------------------------------------------------------------- shared semantics


def _offsets(universal: bool, delta: Fraction, atom_deltas: Dict[int, Fraction], i: int, accept: bool):
    d = atom_deltas.get(i, delta)
    if universal:
        return ("original" if accept else ("strengthened", d))
    return (("weakened", d) if accept else "original")


def _mode_offset(mode) -> Fraction:
    if mode == "original":
        return Fraction(0)
    kind, d = mode
    return -d if kind == "weakened" else d


def _structure(phi: Formula, index: Dict[int, int]):
    if isinstance(phi, Atom):
        return index[id(phi)]
    return ("and" if isinstance(phi, And) else "or", tuple(_structure(a, index) for a in phi.args))


def _kleene(s, tv: Dict[int, TruthValue]) -> TruthValue:
    if isinstance(s, int):
        return tv.get(s, TruthValue.UNKNOWN)
    vals = [_kleene(c, tv) for c in s[1]]
    strong, weak = (
        (TruthValue.CERT_FALSE, TruthValue.CERT_TRUE) if s[0] == "and" else (TruthValue.CERT_TRUE, TruthValue.CERT_FALSE)
    )
    if strong in vals:
        return strong
    if all(v == weak for v in vals):
        return weak
    return TruthValue.UNKNOWN


def _reasons(s, tv, want: TruthValue) -> Optional[List[int]]:
    if isinstance(s, int):
        return [s] if tv[s] == want else None
    conj = (s[0] == "and") == (want == TruthValue.CERT_TRUE)
    if conj:
        out: List[int] = []
        for c in s[1]:
            r = _reasons(c, tv, want)
            if r is None:
                return None
            out += [i for i in r if i not in out]
        return out
    for c in s[1]:
        r = _reasons(c, tv, want)
        if r is not None:
            return r
    return None


def _one_kind(block_kind: str, accept: bool) -> bool:
    """Whether a block is discharged by a single point (vs. a cover)."""
    return (block_kind == "exists") == accept


def _qbox_env(env: dict, qbox: Dict[str, Tuple[Fraction, Fraction]]) -> dict:
    out = dict(env)
    for v, (lo, hi) in qbox.items():
        out[v] = Interval.from_rational(lo, hi)
    return out


# ---------------------------------------------------------------- emission


def _emit_proof(proof: Proof, ctx, k: int, env: dict, accept: bool):
    blocks, ev_atoms, structure, offs = ctx
    if k == len(blocks):
        if not isinstance(proof, Leaf):
            raise CertificateError("proof deeper than the quantifier prefix")
        encl = {}
        tv = {}
        for i, a in enumerate(ev_atoms):
            try:
                iv = eval_term(a.term, env)
            except DomainViolation:
                tv[i] = TruthValue.UNKNOWN
                continue
            encl[i] = iv
            tv[i] = truth_of(a, iv, offs[i][accept])
        want = TruthValue.CERT_TRUE if accept else TruthValue.CERT_FALSE
        rs = _reasons(structure, tv, want)
        if rs is None:
            raise CertificateError("leaf does not decide the matrix")
        return QLeaf(tuple((i, Fraction(encl[i].lo), Fraction(encl[i].hi)) for i in sorted(rs)))
    block = blocks[k]
    if _one_kind(block.kind, accept):
        if not isinstance(proof, Choose):
            raise CertificateError("point expected")
        env2 = dict(env)
        point = []
        for name, x in proof.point:
            env2[name] = Interval(x)
            point.append((name, Fraction(x)))
        return QChoose(tuple(point), _emit_proof(proof.sub, ctx, k + 1, env2, accept))
    qbox = {name: (Fraction(lo), Fraction(hi)) for name, lo, hi in block.vars}

    def cover(p, qb):
        if isinstance(p, Split):
            lo, hi = qb[p.var]
            at = Fraction(p.at)
            left = dict(qb)
            right = dict(qb)
            left[p.var] = (lo, at)
            right[p.var] = (at, hi)
            return QSplit(p.var, at, cover(p.left, left), cover(p.right, right))
        if isinstance(p, Cell):
            sub = _emit_proof(p.sub, ctx, k + 1, _qbox_env(env, qb), accept)
            return QCell(tuple((v, qb[v][0], qb[v][1]) for v in block.names), sub)
        raise CertificateError("cover expected")

    return cover(proof, qbox)


def _context(phi: Formula, universal: bool, delta: Fraction, atom_deltas: Dict[int, Fraction]):
    p = to_prenex(phi)
    ats = atoms(p.matrix)
    structure = _structure(p.matrix, {id(a): i for i, a in enumerate(ats)})
    offs = []
    for i in range(len(ats)):
        offs.append(
            {
                True: _mode_offset(_offsets(universal, delta, atom_deltas, i, True)),
                False: _mode_offset(_offsets(universal, delta, atom_deltas, i, False)),
            }
        )
    return p, (p.blocks, ats, structure, offs)


def build_certificate(result) -> Certificate:
    """Exact certificate object for a solver result."""
    from .solver import Verdict

    if result is None or result.proof is None:
        raise CertificateError("no proof to certify")
    phi = _prepare(result.formula)
    verdict = result.verdict
    universal = verdict in (Verdict.VALID, Verdict.DELTA_FALSE)
    accept = verdict in (Verdict.DELTA_SAT, Verdict.VALID)
    atom_deltas = dict(getattr(result, "atom_deltas", {}) or {})
    p, ctx = _context(phi, universal, result.delta, atom_deltas)
    proof = _emit_proof(result.proof, ctx, 0, {}, accept)
    kind = "witness" if verdict in (Verdict.DELTA_SAT, Verdict.DELTA_FALSE) else "refutation"
    point: Tuple = ()
    if kind == "witness" and isinstance(proof, QChoose):
        point, proof = proof.point, proof.sub
    return Certificate(
        kind, digest(phi), result.delta, tuple(sorted(atom_deltas.items())), verdict.value, point, proof
    )


def _q(x: Fraction) -> str:
    return format_rational(x)


def _render_proof(p, depth: int, out: List[str]):
    pad = " " * depth
    if isinstance(p, QLeaf):
        body = " ".join(f"({i} {_q(lo)} {_q(hi)})" for i, lo, hi in p.entries)
        out.append(f"{pad}(leaf{(' ' + body) if body else ''})")
    elif isinstance(p, QChoose):
        pts = " ".join(f"({v} {_q(x)})" for v, x in p.point)
        out.append(f"{pad}(choose ({pts})")
        _render_proof(p.sub, depth + 1, out)
        out[-1] += ")"
    elif isinstance(p, QSplit):
        out.append(f"{pad}(split {p.var} {_q(p.at)}")
        _render_proof(p.left, depth + 1, out)
        _render_proof(p.right, depth + 1, out)
        out[-1] += ")"
    elif isinstance(p, QCell):
        bx = " ".join(f"({v} {_q(lo)} {_q(hi)})" for v, lo, hi in p.box)
        out.append(f"{pad}(cell ({bx})")
        _render_proof(p.sub, depth + 1, out)
        out[-1] += ")"
    else:  # pragma: no cover
        raise CertificateError(f"unknown proof node {p!r}")


def render(cert: Certificate) -> str:
    lines = [f"({cert.kind}", f" (format {FORMAT_VERSION})", f' (digest "{cert.digest}")', f" (delta {_q(cert.delta)})"]
    ad = " ".join(f"({i} {_q(d)})" for i, d in cert.atom_deltas)
    lines.append(f" (atom-deltas ({ad}))")
    if cert.kind == "witness":
        lines.append(f" (verdict {cert.verdict})")
        pts = " ".join(f"({v} {_q(x)})" for v, x in cert.point)
        lines.append(f" (point ({pts}))")
    else:
        lines.append(f" (polarity {'true' if cert.verdict == 'valid' else 'false'})")
    lines.append(" (proof")
    _render_proof(cert.proof, 2, lines)
    lines[-1] += "))"
    return "\n".join(lines) + "\n"


def emit_certificate(result, phi: Optional[Formula] = None, delta=None) -> str:
    """Canonical certificate text for ``result``.

    ``phi`` and ``delta`` default to the ones recorded in the result; when
    given they must agree with it.
    """
    if phi is not None and digest(_prepare(phi)) != digest(_prepare(result.formula)):
        raise CertificateError("result was computed for a different formula")
    if delta is not None and Fraction(delta) != result.delta:
        raise CertificateError("result was computed at a different delta")
    return render(build_certificate(result))


# ---------------------------------------------------------------- reading


def _expect(x, head: str) -> SList:
    if not isinstance(x, SList) or not x or x[0] != head:
        raise CertificateError(f"expected ({head} ...)")
    return x


def _num(x) -> Fraction:
    if isinstance(x, SList):
        raise CertificateError("number expected")
    try:
        return parse_number(x)
    except SExprError as e:
        raise CertificateError(e.message) from None


def _read_proof(x):
    if not isinstance(x, SList) or not x or isinstance(x[0], SList):
        raise CertificateError("proof node expected")
    head = x[0]
    if head == "leaf":
        entries = []
        for e in x[1:]:
            if not isinstance(e, SList) or len(e) != 3:
                raise CertificateError("leaf entry must be (index lo hi)")
            i = _num(e[0])
            if i.denominator != 1 or i < 0:
                raise CertificateError("atom index must be a natural number")
            entries.append((int(i), _num(e[1]), _num(e[2])))
        return QLeaf(tuple(entries))
    if head == "choose" and len(x) == 3 and isinstance(x[1], SList):
        pts = []
        for e in x[1]:
            if not isinstance(e, SList) or len(e) != 2 or isinstance(e[0], SList):
                raise CertificateError("point entry must be (name value)")
            pts.append((str(e[0]), _num(e[1])))
        return QChoose(tuple(pts), _read_proof(x[2]))
    if head == "split" and len(x) == 5 and not isinstance(x[1], SList):
        return QSplit(str(x[1]), _num(x[2]), _read_proof(x[3]), _read_proof(x[4]))
    if head == "split":
        raise CertificateError("cover gap")
    if head == "cell" and len(x) == 3 and isinstance(x[1], SList):
        bx = []
        for e in x[1]:
            if not isinstance(e, SList) or len(e) != 3 or isinstance(e[0], SList):
                raise CertificateError("cell entry must be (name lo hi)")
            bx.append((str(e[0]), _num(e[1]), _num(e[2])))
        return QCell(tuple(bx), _read_proof(x[2]))
    raise CertificateError(f"malformed proof node '{head}'")


def parse_certificate(text: str) -> Certificate:
    try:
        items = read_all(text)
    except SExprError as e:
        raise CertificateError(str(e)) from None
    if len(items) != 1 or not isinstance(items[0], SList) or not items[0]:
        raise CertificateError("exactly one top-level form expected")
    top = items[0]
    kind = top[0]
    if kind not in ("witness", "refutation"):
        raise CertificateError("top level must be (witness ...) or (refutation ...)")
    fields = top[1:]
    names = ["format", "digest", "delta", "atom-deltas"]
    names += ["verdict", "point", "proof"] if kind == "witness" else ["polarity", "proof"]
    if len(fields) != len(names):
        raise CertificateError("unexpected field count")
    got = {}
    for name, f in zip(names, fields):
        f = _expect(f, name)
        if len(f) != 2:
            raise CertificateError(f"field {name} takes one value")
        got[name] = f[1]
    if _num(got["format"]) != FORMAT_VERSION:
        raise CertificateError("unsupported format version")
    if not isinstance(got["digest"], Str):
        raise CertificateError("digest must be a string")
    delta = _num(got["delta"])
    if delta <= 0:
        raise CertificateError("delta must be positive")
    ad = []
    if not isinstance(got["atom-deltas"], SList):
        raise CertificateError("atom-deltas must be a list")
    for e in got["atom-deltas"]:
        if not isinstance(e, SList) or len(e) != 2:
            raise CertificateError("atom-deltas entry must be (index delta)")
        ad.append((int(_num(e[0])), _num(e[1])))
    if kind == "witness":
        verdict = str(got["verdict"])
        if verdict not in ("delta-sat", "delta-false"):
            raise CertificateError("witness verdict must be delta-sat or delta-false")
        if not isinstance(got["point"], SList):
            raise CertificateError("point must be a list")
        point = []
        for e in got["point"]:
            if not isinstance(e, SList) or len(e) != 2 or isinstance(e[0], SList):
                raise CertificateError("point entry must be (name value)")
            point.append((str(e[0]), _num(e[1])))
        point = tuple(point)
    else:
        pol = str(got["polarity"])
        if pol not in ("true", "false"):
            raise CertificateError("polarity must be true or false")
        verdict = "valid" if pol == "true" else "unsat"
        point = ()
    return Certificate(kind, str(got["digest"]), delta, tuple(ad), verdict, point, _read_proof(got["proof"]))


# ---------------------------------------------------------------- checking


class _Reject(Exception):
    pass


def _check(cert: Certificate, phi: Formula):
    universal = cert.universal
    accept = cert.verdict in ("delta-sat", "valid")
    atom_deltas = dict(cert.atom_deltas)
    p = to_prenex(phi)
    ats = atoms(p.matrix)
    for i in atom_deltas:
        if not 0 <= i < len(ats):
            raise _Reject("atom-deltas index out of range")
    structure = _structure(p.matrix, {id(a): i for i, a in enumerate(ats)})
    modes = [_offsets(universal, cert.delta, atom_deltas, i, accept) for i in range(len(ats))]
    want = TruthValue.CERT_TRUE if accept else TruthValue.CERT_FALSE
    blocks = p.blocks

    def leaf(node, env):
        if not isinstance(node, QLeaf):
            raise _Reject("proof deeper than the quantifier prefix")
        recorded = {}
        recomputed = {}
        for i, lo, hi in node.entries:
            if not 0 <= i < len(ats) or i in recorded:
                raise _Reject("bad atom index in leaf")
            if lo > hi:
                raise _Reject("empty recorded enclosure")
            rec_iv = Interval.from_rational(lo, hi)
            try:
                recomputed[i] = eval_atom(ats[i], env, modes[i])
                fresh = eval_term(ats[i].term, env)
            except DomainViolation:
                raise _Reject("domain violation at leaf") from None
            # a recorded enclosure must contain the checker's own enclosure
            if not rec_iv.contains(fresh):
                raise _Reject("enclosure mismatch")
            recorded[i] = truth_of(ats[i], rec_iv, _mode_offset(modes[i]))
        if _kleene(structure, recorded) != want:
            raise _Reject("recorded enclosures do not certify the leaf")
        if _kleene(structure, recomputed) != want:
            raise _Reject("leaf does not re-verify")

    def go(k, node, env):
        if k == len(blocks):
            return leaf(node, env)
        block = blocks[k]
        if _one_kind(block.kind, accept):
            if not isinstance(node, QChoose):
                raise _Reject("point expected for this block")
            if tuple(v for v, _ in node.point) != block.names:
                raise _Reject("point variables do not match the block")
            env2 = dict(env)
            for (name, lo, hi), (_, x) in zip(block.vars, node.point):
                if not lo <= x <= hi:
                    raise _Reject("witness out of bounds")
                env2[name] = Interval.from_rational(x)
            return go(k + 1, node.sub, env2)
        cover(k, node, env, {name: (lo, hi) for name, lo, hi in block.vars})

    def cover(k, node, env, qb):
        block = blocks[k]
        if isinstance(node, QSplit):
            if node.var not in qb:
                raise _Reject("split mismatch")
            lo, hi = qb[node.var]
            if not lo < node.at < hi:
                raise _Reject("split mismatch")
            left = dict(qb)
            right = dict(qb)
            left[node.var] = (lo, node.at)
            right[node.var] = (node.at, hi)
            cover(k, node.left, env, left)
            cover(k, node.right, env, right)
            return
        if isinstance(node, QCell):
            if tuple(v for v, _, _ in node.box) != block.names:
                raise _Reject("cell variables do not match the block")
            for v, lo, hi in node.box:
                clo, chi = qb[v]
                if (lo, hi) != (clo, chi):
                    raise _Reject("cover gap" if clo <= lo <= hi <= chi else "split mismatch")
            return go(k + 1, node.sub, _qbox_env(env, qb))
        raise _Reject("cover expected for this block")

    if cert.kind == "witness":
        if not blocks:
            if cert.point:
                raise _Reject("point given for a quantifier-free sentence")
            return go(0, cert.proof, {})
        return go(0, QChoose(cert.point, cert.proof), {})
    return go(0, cert.proof, {})


def verify_certificate(cert, phi: Formula, delta=None):
    """Re-check a certificate (text or parsed) against ``phi``.

    Returns ``Accepted()`` or ``Rejected(reason)``.
    """
    if isinstance(cert, str):
        try:
            cert = parse_certificate(cert)
        except CertificateError as e:
            return Rejected(f"malformed certificate: {e}")
    try:
        phi = _prepare(phi)
    except ValueError as e:
        return Rejected(f"bad formula: {e}")
    if cert.digest != digest(phi):
        return Rejected("formula mismatch")
    if delta is not None and Fraction(delta) != cert.delta:
        return Rejected("delta mismatch")
    p = to_prenex(phi)
    first = p.blocks[0].kind if p.blocks else "exists"
    if (first == "forall") != cert.universal:
        return Rejected("verdict does not fit the sentence's prefix")
    try:
        _check(cert, phi)
    except _Reject as e:
        return Rejected(str(e))
    except CertificateError as e:
        return Rejected(f"malformed certificate: {e}")
    return Accepted()
