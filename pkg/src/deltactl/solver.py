"""δ-complete decision procedures over bounded sentences.

Every query is answered by three-valued interval evaluation at two offsets.
An existential sentence is *accepted* when the matrix is certainly true at
``-δ`` (the answer is δ-sat) and *refuted* when it is certainly false at the
original thresholds (unsat).  A universal sentence is accepted at the original
thresholds (valid) and refuted at ``+δ`` (δ-false).  The gap between the two
thresholds is what makes the search terminate: on any box whose term ranges
are narrower than the gap one of the two verdicts must be reachable.

Quantifier blocks are handled by nested branch-and-prune.  Each level keeps
its own list of cells and processes them round by round in a fixed order, so
results do not depend on how many worker threads evaluate a round.
"""

from __future__ import annotations

import enum
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Dict, List, Mapping, Optional, Tuple

from .formula import (
    And,
    Atom,
    Block,
    Const,
    Formula,
    FormulaError,
    Not,
    Or,
    Prenex,
    atoms,
    check_sentence,
    delta_strengthen,
    is_normal,
    map_atoms,
    normalize_nnf,
    substitute,
    term_vars,
    to_fraction,
    to_prenex,
)
from .interval import (
    DomainViolation,
    Interval,
    compile_term,
    lipschitz_vector,
    threshold_bounds,
)
from .proof import Cell, Choose, Leaf, Proof, Split

ACCEPT, REFUTE, UNKNOWN = 1, -1, 0


class Verdict(enum.Enum):
    DELTA_SAT = "delta-sat"
    UNSAT = "unsat"
    VALID = "valid"
    DELTA_FALSE = "delta-false"

    def __str__(self):
        return self.value


class Inconclusive(RuntimeError):
    """Search exhausted its depth, time or iteration budget without a verdict.

    This is never a verdict.  ``box`` is the first undecided top-level cell,
    ``candidate`` the last CEGIS candidate, when available.
    """

    def __init__(self, reason: str, box=None, candidate=None, stats=None):
        super().__init__(reason)
        self.reason = reason
        self.box = box
        self.candidate = candidate
        self.stats = stats or {}


@dataclass(frozen=True)
class SolverConfig:
    delta: Fraction = Fraction(1, 1000)
    max_depth: int = 48
    timeout_ms: Optional[int] = 60_000
    workers: int = 1
    deterministic: bool = True
    atom_deltas: Mapping[int, Fraction] = field(default_factory=dict)
    max_iterations: int = 64

    def __post_init__(self):
        d = to_fraction(self.delta)
        if d <= 0:
            raise ValueError("delta must be positive")
        object.__setattr__(self, "delta", d)
        if self.max_depth < 0:
            raise ValueError("max_depth must be non-negative")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")
        object.__setattr__(
            self, "atom_deltas", {int(k): to_fraction(v) for k, v in dict(self.atom_deltas).items()}
        )
        for v in self.atom_deltas.values():
            if v <= 0:
                raise ValueError("per-atom delta must be positive")


@dataclass
class SolveResult:
    verdict: Verdict
    formula: Formula
    delta: Fraction
    witness: Optional[Dict[str, Fraction]] = None
    proof: Optional[Proof] = None
    stats: Dict[str, int] = field(default_factory=dict)
    wall_ms: float = 0.0
    atom_deltas: Dict[int, Fraction] = field(default_factory=dict)

    @property
    def counterexample(self):
        return self.witness if self.verdict is Verdict.DELTA_FALSE else None

    def to_dict(self) -> dict:
        """Deterministic summary (wall time excluded)."""
        out = {"verdict": self.verdict.value, "stats": dict(self.stats)}
        if self.witness is not None:
            out["witness"] = {k: _q(v) for k, v in self.witness.items()}
        return out


def _q(v: Fraction) -> str:
    return str(v.numerator) if v.denominator == 1 else f"{v.numerator}/{v.denominator}"


# ---------------------------------------------------------------- search engine


class _Result:
    __slots__ = ("status", "proof", "point", "boxes", "depth", "error", "best", "strong")

    def __init__(self, status, proof=None, point=None, boxes=0, depth=0, error=None, best=None, strong=False):
        self.status = status
        self.strong = strong
        self.proof = proof
        self.point = point
        self.boxes = boxes
        self.depth = depth
        self.error = error
        self.best = best


class _Node:
    __slots__ = ("box", "depth", "children", "split", "proof")

    def __init__(self, box, depth):
        self.box = box
        self.depth = depth
        self.children = None
        self.split = None
        self.proof = None


def _structure(phi: Formula, index: Dict[int, int]):
    if isinstance(phi, Atom):
        return index[id(phi)]
    if isinstance(phi, And):
        return ("and", tuple(_structure(a, index) for a in phi.args))
    if isinstance(phi, Or):
        return ("or", tuple(_structure(a, index) for a in phi.args))
    raise FormulaError("quantifier-free matrix expected")


def _combine(s, tv) -> int:
    if isinstance(s, int):
        return tv[s]
    if s[0] == "and":
        out = ACCEPT
        for c in s[1]:
            v = _combine(c, tv)
            if v == REFUTE:
                return REFUTE
            if v < out:
                out = v
        return out
    out = REFUTE
    for c in s[1]:
        v = _combine(c, tv)
        if v == ACCEPT:
            return ACCEPT
        if v > out:
            out = v
    return out


def _truth(strict: bool, lo: float, hi: float, thr: tuple) -> int:
    tl, th = thr
    if strict:
        if lo > th:
            return ACCEPT
        if hi <= tl:
            return REFUTE
    else:
        if lo >= th:
            return ACCEPT
        if hi < tl:
            return REFUTE
    return UNKNOWN


class MatrixEvaluator:
    """Three-valued evaluation of a quantifier-free matrix at two offsets."""

    def __init__(self, matrix: Formula, accept_offsets, refute_offsets):
        self.atoms = atoms(matrix)
        self.structure = _structure(matrix, {id(a): i for i, a in enumerate(self.atoms)})
        self.fns = [compile_term(a.term) for a in self.atoms]
        self.acc = [threshold_bounds(a.shift + o) for a, o in zip(self.atoms, accept_offsets)]
        self.ref = [threshold_bounds(a.shift + o) for a, o in zip(self.atoms, refute_offsets)]

    def enclosures(self, box):
        out = []
        err = None
        for fn in self.fns:
            try:
                out.append(fn(box))
            except DomainViolation as e:
                out.append(None)
                err = err or e
        return out, err

    def truth(self, encl, side: int) -> List[int]:
        thr = self.acc if side == ACCEPT else self.ref
        tv = []
        for a, iv, t in zip(self.atoms, encl, thr):
            tv.append(UNKNOWN if iv is None else _truth(a.strict, iv.lo, iv.hi, t))
        return tv

    def decide(self, box):
        """``(status, error, strong)``; a strong refutation also fails the accept test outright."""
        encl, err = self.enclosures(box)
        a = _combine(self.structure, self.truth(encl, ACCEPT))
        if a == ACCEPT:
            return ACCEPT, None, False
        if _combine(self.structure, self.truth(encl, REFUTE)) == REFUTE:
            return REFUTE, None, a == REFUTE
        return UNKNOWN, err, False

    def reachable(self, box, outer):
        """Which outcomes the atoms in ``outer`` alone still allow.

        Returns ``(can_accept, can_refute, error)``.  The other atoms are
        given their most favourable value on each side.
        """
        n = len(self.atoms)
        acc, ref = [ACCEPT] * n, [REFUTE] * n
        err = None
        for i in outer:
            try:
                iv = self.fns[i](box)
            except DomainViolation as e:
                err = err or e
                acc[i] = ref[i] = UNKNOWN
                continue
            strict = self.atoms[i].strict
            acc[i] = _truth(strict, iv.lo, iv.hi, self.acc[i])
            ref[i] = _truth(strict, iv.lo, iv.hi, self.ref[i])
        return _combine(self.structure, acc) == ACCEPT, _combine(self.structure, ref) == REFUTE, err

    def could_become(self, box, movable, side: int, strong: bool = False) -> bool:
        """Whether refining the atoms in ``movable`` might still yield ``side``.

        Other atoms keep their truth value on ``box``.  ``strong`` asks for a
        refutation at the accept thresholds.
        """
        encl, _ = self.enclosures(box)
        thr = self.acc if side == ACCEPT or strong else self.ref
        tv = []
        for i, (a, iv, t) in enumerate(zip(self.atoms, encl, thr)):
            v = UNKNOWN if iv is None else _truth(a.strict, iv.lo, iv.hi, t)
            if v == UNKNOWN and i in movable:
                v = side
            tv.append(v)
        return _combine(self.structure, tv) == side

    def reasons(self, tv, side: int, s=None) -> Optional[List[int]]:
        """Smallest-effort set of atom indices whose truth values force ``side``."""
        s = self.structure if s is None else s
        if isinstance(s, int):
            return [s] if tv[s] == side else None
        conj = (s[0] == "and") == (side == ACCEPT)
        if conj:
            out: List[int] = []
            for c in s[1]:
                r = self.reasons(tv, side, c)
                if r is None:
                    return None
                out += [i for i in r if i not in out]
            return out
        for c in s[1]:
            r = self.reasons(tv, side, c)
            if r is not None:
                return r
        return None


def offsets_for(n_atoms: int, universal: bool, delta: Fraction, atom_deltas=None):
    atom_deltas = atom_deltas or {}
    ds = [atom_deltas.get(i, delta) for i in range(n_atoms)]
    if universal:
        return [Fraction(0)] * n_atoms, ds, ds
    return [-d for d in ds], [Fraction(0)] * n_atoms, ds


def _final(res: _Result, one: int) -> bool:
    """Whether a single-point answer settles its block right away."""
    return res.status == one and (one == ACCEPT or res.strong)


def _halves(iv: Interval):
    m = iv.mid
    return Interval(iv.lo, m), Interval(m, iv.hi)


def _box_of(vars_) -> Dict[str, Interval]:
    return {name: Interval.from_rational(lo, hi) for name, lo, hi in vars_}


class _Engine:
    def __init__(self, prenex: Prenex, cfg: SolverConfig, universal: bool, env=None):
        self.blocks = prenex.blocks
        self.cfg = cfg
        n = len(atoms(prenex.matrix))
        acc, ref, ds = offsets_for(n, universal, cfg.delta, cfg.atom_deltas)
        self.matrix = MatrixEvaluator(prenex.matrix, acc, ref)
        self.env = dict(env or {})
        self.fine = float(min(ds, default=cfg.delta)) / 4
        self.deadline = None if cfg.timeout_ms is None else time.monotonic() + cfg.timeout_ms / 1000
        self.sens = self._sensitivities(prenex)
        # atoms whose variables are all bound before block k
        level = {v: i for i, blk in enumerate(self.blocks) for v in blk.names}
        depth = [max((level.get(v, -1) for v in term_vars(a.term)), default=-1) for a in self.matrix.atoms]
        self.outer = [[i for i, d in enumerate(depth) if d < k] for k in range(len(self.blocks) + 1)]
        self.movable = [frozenset(i for i, d in enumerate(depth) if d >= k) for k in range(len(self.blocks) + 1)]
        self.inner_boxes = []
        for k in range(len(self.blocks) + 1):
            box: Dict[str, Interval] = {}
            for blk in self.blocks[k + 1 :]:
                box.update(_box_of(blk.vars))
            self.inner_boxes.append(box)
        self.pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None
        self.ticks = 0

    def _sensitivities(self, prenex: Prenex) -> Dict[str, float]:
        box = dict(self.env)
        box.update(_box_of(prenex.variables))
        sens: Dict[str, float] = {}
        failed = False
        for a in self.matrix.atoms:
            try:
                lv = lipschitz_vector(a.term, box)
            except (DomainViolation, ValueError, ZeroDivisionError, OverflowError):
                failed = True
                continue
            for k, v in lv.items():
                sens[k] = max(sens.get(k, 0.0), v)
        finite = [v for v in sens.values() if v < float("inf")]
        fallback = max(finite, default=1.0) or 1.0
        for name, _, _ in prenex.variables:
            v = sens.get(name, fallback if failed else 0.0)
            sens[name] = fallback if v == float("inf") else v
        return sens

    def close(self):
        if self.pool is not None:
            self.pool.shutdown(wait=True)

    def _check_time(self):
        if self.deadline is not None and time.monotonic() > self.deadline:
            raise Inconclusive("timeout")

    def _contrib(self, box, names) -> float:
        return sum(box[v].width * self.sens.get(v, 0.0) for v in names)

    # one level of nested branch-and-prune
    def decide(self, k: int, env: dict, env_contrib: float) -> _Result:
        self.ticks += 1
        if self.ticks & 63 == 0:
            self._check_time()
        if k == len(self.blocks):
            status, err, strong = self.matrix.decide(env)
            return _Result(status, Leaf() if status else None, boxes=1, error=err, strong=strong)
        block = self.blocks[k]
        one = ACCEPT if block.kind == "exists" else REFUTE
        outer = self.outer[k]
        hunt = False
        if outer and len(outer) < len(self.matrix.atoms):
            can_acc, can_ref, err = self.matrix.reachable(env, outer)
            # with only this block's early exit left open, refining the
            # enclosing cell first is cheaper than searching this block
            hunt = not (can_ref if one == ACCEPT else can_acc)
            if not (can_acc or can_ref) or (hunt and env_contrib > self.fine):
                return _Result(UNKNOWN, boxes=1, error=err)
        names = block.names
        root = _Node(_box_of(block.vars), 0)
        frontier = [root]
        boxes = 0
        depth = 0
        unresolved: List[Tuple[_Node, _Result]] = []
        all_strong = True
        pending: Optional[_Result] = None
        while frontier:
            self._check_time()
            results = self._run(k, frontier, env, env_contrib, one)
            for node, res in zip(frontier, results):
                if res is None:
                    break
                boxes += res.boxes
                depth = max(depth, node.depth + res.depth)
                if _final(res, one):
                    return self._choose(res, names, boxes, depth)
            nxt = []
            for node, res in zip(frontier, results):
                if res.status == -one:
                    node.proof = res.proof
                    all_strong = all_strong and res.strong
                    continue
                # a tentative counterexample of a universal block is only
                # reported once the cell is too fine to be covered instead
                # once one is kept, only a strong refutation can still win
                tentative = res.status == one
                weak = tentative or pending is not None
                if res.error is not None and self._contrib(node.box, names) + env_contrib <= self.fine:
                    # a domain violation on a resolution-sized cell is final
                    unresolved.append((node, res))
                elif self._can_split(node, names, env_contrib, weak or hunt) and self._useful(
                    k, env, node, weak, cover=pending is None
                ):
                    self._split(node, names)
                    nxt.extend(node.children)
                elif tentative:
                    if pending is None:
                        pending = res
                else:
                    unresolved.append((node, res))
            frontier = nxt
        if pending is not None:
            return self._choose(pending, names, boxes, depth)
        if unresolved:
            node, res = unresolved[0]
            err = next((r.error for _, r in unresolved if r.error is not None), None)
            best = res.best if res.best is not None else dict(node.box)
            return _Result(UNKNOWN, boxes=boxes, depth=depth, error=err, best=best)
        return _Result(-one, self._cover(root, names), boxes=boxes, depth=depth, strong=all_strong)

    @staticmethod
    def _choose(res, names, boxes, depth) -> _Result:
        point = tuple((v, res.point[v]) for v in names)
        return _Result(res.status, Choose(point, res.proof), boxes=boxes, depth=depth, strong=res.strong)

    def _run(self, k, frontier, env, env_contrib, one):
        if self.pool is not None and k == 0 and len(frontier) > 1:
            return list(self.pool.map(lambda n: self._process(k, n, env, env_contrib, one), frontier))
        out: List[Optional[_Result]] = []
        for node in frontier:
            r = self._process(k, node, env, env_contrib, one)
            out.append(r)
            if _final(r, one):
                out.extend([None] * (len(frontier) - len(out)))
                break
        return out

    def _process(self, k, node, env, env_contrib, one) -> _Result:
        names = self.blocks[k].names
        cell_env = dict(env)
        cell_env.update(node.box)
        r = self.decide(k + 1, cell_env, env_contrib + self._contrib(node.box, names))
        mid = {v: node.box[v].mid for v in names}
        if r.status == -one:
            return r
        r.point = mid
        if _final(r, one):
            return r
        if any(not node.box[v].is_point() for v in names):
            mid_env = dict(env)
            mid_env.update({v: Interval(x) for v, x in mid.items()})
            rm = self.decide(k + 1, mid_env, env_contrib)
            if rm.status == one and (_final(rm, one) or r.status != one):
                rm.point = mid
                rm.boxes += r.boxes
                rm.depth = max(rm.depth, r.depth)
                return rm
            r.boxes += rm.boxes
        return r

    def _useful(self, k, env, node, tentative, cover=True) -> bool:
        """Whether splitting ``node`` could still change what it reports."""
        box = dict(env)
        box.update(self.inner_boxes[k])
        box.update(node.box)
        mv = self.movable[k]
        if cover and self.matrix.could_become(box, mv, ACCEPT):
            return True
        if tentative:
            return self.matrix.could_become(box, mv, REFUTE, strong=True)
        return self.matrix.could_become(box, mv, REFUTE)

    def _can_split(self, node, names, env_contrib, tentative=False) -> bool:
        if node.depth >= self.cfg.max_depth:
            return False
        own = self._contrib(node.box, names)
        if own <= 0 or not any(node.box[v].lo < node.box[v].mid < node.box[v].hi for v in names):
            return False
        if tentative and own + env_contrib <= self.fine:
            return False
        return own > env_contrib or env_contrib <= self.fine

    def _split(self, node, names):
        """Bisect the variable with the largest sensitivity-scaled width."""
        best, score = None, -1.0
        for v in names:
            iv = node.box[v]
            sc = iv.width * self.sens.get(v, 0.0)
            if sc > score and iv.lo < iv.mid < iv.hi:
                best, score = v, sc
        lo_iv, hi_iv = _halves(node.box[best])
        left = dict(node.box)
        right = dict(node.box)
        left[best] = lo_iv
        right[best] = hi_iv
        node.split = (best, lo_iv.hi)
        node.children = [_Node(left, node.depth + 1), _Node(right, node.depth + 1)]

    def _cover(self, node, names) -> Proof:
        if node.children:
            v, m = node.split
            return Split(v, m, self._cover(node.children[0], names), self._cover(node.children[1], names))
        box = tuple((v, node.box[v].lo, node.box[v].hi) for v in names)
        return Cell(box, node.proof)


def _run_engine(p: Prenex, cfg: SolverConfig, universal: bool, env=None) -> _Result:
    eng = _Engine(p, cfg, universal, env)
    try:
        res = eng.decide(0, dict(eng.env), 0.0)
    finally:
        eng.close()
    if res.status == UNKNOWN:
        if res.error is not None:
            raise res.error
        best = res.best
        raise Inconclusive(
            "undecided at maximum depth",
            box=best,
            stats={"boxes": res.boxes, "max_depth": res.depth},
        )
    return res


def _prepare(phi: Formula) -> Formula:
    if not is_normal(phi):
        phi = normalize_nnf(phi)
    check_sentence(phi)
    return phi


def _is_universal(p: Prenex) -> bool:
    return bool(p.blocks) and p.blocks[0].kind == "forall"


def _witness(point) -> Dict[str, Fraction]:
    return {name: Fraction(x) for name, x in point}


def _finish(phi, p, cfg, universal, res, t0) -> SolveResult:
    if universal:
        verdict = Verdict.VALID if res.status == ACCEPT else Verdict.DELTA_FALSE
    else:
        verdict = Verdict.DELTA_SAT if res.status == ACCEPT else Verdict.UNSAT
    witness = None
    if isinstance(res.proof, Choose):
        witness = _witness(res.proof.point)
    elif verdict in (Verdict.DELTA_SAT, Verdict.DELTA_FALSE):
        witness = {}
    return SolveResult(
        verdict,
        phi,
        cfg.delta,
        witness,
        res.proof,
        {"boxes": res.boxes, "max_depth": res.depth},
        (time.monotonic() - t0) * 1000,
        dict(cfg.atom_deltas),
    )


def solve_sigma1(phi: Formula, cfg: Optional[SolverConfig] = None) -> SolveResult:
    """Decide an existential (or quantifier-free) sentence: δ-sat or unsat."""
    cfg = cfg or SolverConfig()
    phi = _prepare(phi)
    p = to_prenex(phi)
    if any(b.kind != "exists" for b in p.blocks):
        raise FormulaError("existential sentence expected")
    t0 = time.monotonic()
    res = _run_engine(p, cfg, False)
    return _finish(phi, p, cfg, False, res, t0)


def solve_prenex(phi: Formula, cfg: Optional[SolverConfig] = None) -> SolveResult:
    """Decide an arbitrary bounded sentence by nested branch-and-prune.

    A sentence whose first block is universal is a validity query
    (valid / δ-false); any other is a satisfiability query (δ-sat / unsat).
    """
    cfg = cfg or SolverConfig()
    phi = _prepare(phi)
    p = to_prenex(phi)
    universal = _is_universal(p)
    t0 = time.monotonic()
    res = _run_engine(p, cfg, universal)
    return _finish(phi, p, cfg, universal, res, t0)


# ---------------------------------------------------------------- CEGIS for ∃∀


def _negated_check(matrix: Formula, delta: Fraction) -> Formula:
    return delta_strengthen(normalize_nnf(Not(matrix)), delta)


def solve_exists_forall(phi: Formula, cfg: Optional[SolverConfig] = None) -> SolveResult:
    """Counterexample-guided search for ``∃p ∀x ψ`` with ``ψ`` quantifier-free.

    Candidates solve ``∃p ⋀_i ψ(p, x_i)`` at ``δ/2``.  A candidate ``p*`` is
    checked by asking whether ``∃x ¬ψ(p*, x)`` holds strengthened by ``δ``;
    refuting that certifies ``ψ(p*, x) ≥ -δ`` everywhere, and a witness gives a
    counterexample that cuts ``p*`` away at the next round.
    """
    cfg = cfg or SolverConfig()
    phi = _prepare(phi)
    p = to_prenex(phi)
    if len(p.blocks) != 2 or p.blocks[0].kind != "exists" or p.blocks[1].kind != "forall":
        raise FormulaError("sentence of the form exists-forall expected")
    t0 = time.monotonic()
    deadline_ms = cfg.timeout_ms
    pblock, xblock = p.blocks
    psi = p.matrix
    xs: List[Dict[str, Fraction]] = [{n: Fraction(iv.mid) for n, iv in _box_of(xblock.vars).items()}]
    boxes = 0
    depth = 0
    candidate = None

    def remaining():
        if deadline_ms is None:
            return None
        left = deadline_ms - (time.monotonic() - t0) * 1000
        if left <= 0:
            raise Inconclusive("timeout", candidate=candidate, stats={"boxes": boxes})
        return int(left) + 1

    for it in range(cfg.max_iterations):
        conj = And(tuple(_subst(psi, x) for x in xs)) if len(xs) > 1 else _subst(psi, xs[0])
        cand_prenex = Prenex((pblock,), conj)
        ccfg = replace(cfg, delta=cfg.delta / 2, timeout_ms=remaining(), atom_deltas={})
        cres = _run_engine(cand_prenex, ccfg, False)
        boxes += cres.boxes
        depth = max(depth, cres.depth)
        if cres.status == REFUTE:
            proof = _lift_refutation(cres.proof, psi, xs, xblock.names)
            stats = {"boxes": boxes, "max_depth": depth, "iterations": it + 1}
            return SolveResult(Verdict.UNSAT, phi, cfg.delta, None, proof, stats, (time.monotonic() - t0) * 1000)
        candidate = cres.proof.point
        env = {n: Interval(x) for n, x in candidate}
        chk = Prenex((Block("exists", xblock.vars),), _negated_check(psi, cfg.delta))
        vcfg = replace(cfg, delta=cfg.delta / 4, timeout_ms=remaining(), atom_deltas={})
        vres = _run_engine(chk, vcfg, False, env)
        boxes += vres.boxes
        depth = max(depth, vres.depth)
        if vres.status == REFUTE:
            stats = {"boxes": boxes, "max_depth": depth, "iterations": it + 1}
            return SolveResult(
                Verdict.DELTA_SAT,
                phi,
                cfg.delta,
                _witness(candidate),
                Choose(candidate, vres.proof),
                stats,
                (time.monotonic() - t0) * 1000,
            )
        xs.append(_witness(vres.proof.point))
    err = Inconclusive(
        "iteration limit reached", candidate=dict(candidate or ()), stats={"boxes": boxes, "max_depth": depth}
    )
    err.counterexamples = xs
    raise err


def _subst(psi: Formula, point: Mapping[str, Fraction]) -> Formula:
    m = {k: Const(v) for k, v in point.items()}
    return map_atoms(psi, lambda a: Atom(substitute(a.term, m), a.strict, a.shift))


def _lift_refutation(proof: Proof, psi: Formula, xs, xnames) -> Proof:
    """Turn a refutation of ``∃p ⋀_i ψ(p, x_i)`` into one of ``∃p ∀x ψ``.

    Each leaf cell refutes some conjunct ``i``; that cell then gets the
    counterexample ``x_i`` for the universal block.
    """
    n = len(atoms(psi))
    _, ref, _ = offsets_for(n, False, Fraction(1))
    ev = MatrixEvaluator(psi, ref, ref)

    def go(pr):
        if isinstance(pr, Split):
            return Split(pr.var, pr.at, go(pr.left), go(pr.right))
        box = {v: Interval(lo, hi) for v, lo, hi in pr.box}
        for x in xs:
            env = dict(box)
            env.update({k: Interval.from_rational(v) for k, v in x.items()})
            if ev.decide(env)[0] == REFUTE:
                point = tuple((k, float(x[k])) for k in xnames)
                return Cell(pr.box, Choose(point, Leaf()))
        raise AssertionError("refuted cell without a refuting conjunct")  # pragma: no cover

    return go(proof)


# ---------------------------------------------------------------- dispatch


def solve(phi: Formula, cfg: Optional[SolverConfig] = None) -> SolveResult:
    """Pick a procedure from the prefix shape."""
    cfg = cfg or SolverConfig()
    phi = _prepare(phi)
    p = to_prenex(phi)
    kinds = [b.kind for b in p.blocks]
    if all(k == "exists" for k in kinds):
        return solve_sigma1(phi, cfg)
    if kinds == ["exists", "forall"] and sum(len(b.vars) for b in p.blocks[:1]) > 1:
        return solve_exists_forall(phi, cfg)
    return solve_prenex(phi, cfg)
