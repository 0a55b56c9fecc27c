"""``deltactl``: run problem files and check certificates.

stdout is the scripting interface.  The first line is always the verdict
(``delta-sat``, ``unsat``, ``valid``, ``delta-false``), ``error`` or
``inconclusive``; details follow.  Exit status is 0 for any verdict, 1 for a
rejected certificate, 2 for errors and 3 for inconclusive runs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from fractions import Fraction
from typing import Callable, Optional, Tuple

from .certificates import CertificateError, emit_certificate, verify_certificate
from .control import (
    LyapunovTemplate,
    PidTemplate,
    StabilitySpec,
    encode_delta_stability,
    encode_lyapunov_check,
    encode_lyapunov_synthesis,
    encode_pid,
    encode_reachability,
    synthesize_lyapunov,
    tune_pid,
)
from .formula import And, Exists, Formula, FormulaError, classify_prefix, format_rational, free_vars, normalize_nnf
from .interval import DomainViolation
from .problem import ProblemError, ProblemFile, parse
from .solver import Inconclusive, SolverConfig, SolveResult, solve, solve_prenex, solve_sigma1

EXIT_OK = 0
EXIT_REJECTED = 1
EXIT_ERROR = 2
EXIT_INCONCLUSIVE = 3

DEFAULT_DELTA = Fraction(1, 1000)


# ---------------------------------------------------------------- building


def _close(pf: ProblemFile, phi: Formula) -> Formula:
    """Existentially bind declared variables left free by the assertions."""
    free = free_vars(phi)
    for d in reversed(list(pf.variables.values())):
        if d.name in free:
            phi = Exists(d.name, d.lo, d.hi, phi)
    return phi


def _assertions(pf: ProblemFile) -> Formula:
    a = pf.assertions
    return _close(pf, a[0] if len(a) == 1 else And(a))


def _lyapunov_template(pf: ProblemFile, params=()) -> Tuple[LyapunovTemplate, object]:
    c = pf.command
    system = pf.systems[c.get("system")]
    region = c.get("region", system.domain)
    if len(region) != len(system.states):
        raise ProblemError("E-ARITY", f":region needs {len(system.states)} interval(s)")
    states = tuple((s, lo, hi) for s, (lo, hi) in zip(system.states, region))
    kw = {k: c.get(k) for k in ("c", "r") if c.get(k) is not None}
    try:
        return LyapunovTemplate(params, c.get("V"), states, **kw), system
    except (ValueError, FormulaError) as e:
        raise ProblemError("E-DOMAIN", str(e)) from None


def _stability_spec(pf: ProblemFile) -> StabilitySpec:
    c = pf.command
    system = pf.systems[c.get("system")]
    kw = {}
    if c.get("r") is not None:
        kw["r"] = c.get("r")
    if c.get("kappa") is not None:
        kw["min_radius_ratio"] = c.get("kappa")
    try:
        return StabilitySpec(system, c.get("e"), c.get("T"), c.get("X"), **kw)
    except ValueError as e:
        raise ProblemError("E-DOMAIN", str(e)) from None


def _pid_template(pf: ProblemFile) -> PidTemplate:
    c = pf.command
    gains = {n: (lo, hi) for n, lo, hi in c.get("gains")}
    try:
        return PidTemplate(
            pf.plants[c.get("plant")],
            gains,
            c.get("reference"),
            c.get("initial"),
            c.get("spec"),
            c.get("window"),
            output=c.get("output", 0),
            step=c.get("step"),
        )
    except (ValueError, FormulaError) as e:
        raise ProblemError("E-DOMAIN", str(e)) from None


def build(pf: ProblemFile, strict: bool = True) -> Tuple[Formula, Callable[[SolverConfig], SolveResult]]:
    """The sentence a problem file asks about, and the procedure that decides it."""
    c = pf.command
    name = c.name
    try:
        if name in ("check-sat", "classify"):
            phi = _assertions(pf)
            return phi, lambda cfg: solve(phi, cfg)
        if name == "lyapunov-check":
            tmpl, system = _lyapunov_template(pf)
            phi = encode_lyapunov_check(tmpl, system, strict=strict)
            return phi, lambda cfg: solve_prenex(phi, cfg)
        if name == "lyapunov-synth":
            tmpl, system = _lyapunov_template(pf, c.get("params"))
            phi = encode_lyapunov_synthesis(tmpl, system, strict=strict)
            return phi, lambda cfg: synthesize_lyapunov(tmpl, system, cfg, strict=strict)
        if name == "stability":
            spec = _stability_spec(pf)
            phi = encode_delta_stability(spec)
            return phi, lambda cfg: solve_prenex(phi, cfg)
        if name == "reach":
            system = pf.systems[c.get("system")]
            deltas = c.get("deltas")
            if len(deltas) != 3:
                raise ProblemError("E-ARITY", ":deltas needs exactly three bounds")
            phi = encode_reachability(system, c.get("init"), c.get("goal"), deltas, c.get("T"))
            return phi, lambda cfg: solve_sigma1(phi, cfg)
        if name == "pid-tune":
            tmpl = _pid_template(pf)
            phi = encode_pid(tmpl)
            return phi, lambda cfg: tune_pid(tmpl, cfg)
    except ProblemError:
        raise
    except FormulaError as e:
        raise ProblemError("E-SYNTAX", str(e)) from None
    except ValueError as e:
        raise ProblemError("E-DOMAIN", str(e)) from None
    raise ProblemError("E-SYNTAX", f"unknown command {name}")


# ---------------------------------------------------------------- config


def _env_workers() -> Optional[int]:
    raw = os.environ.get("DELTACTL_WORKERS")
    if raw is None or raw == "":
        return None
    try:
        n = int(raw)
    except ValueError:
        raise ProblemError("E-CONFIG", f"DELTACTL_WORKERS must be an integer, got {raw!r}") from None
    return n


def config_for(pf: ProblemFile, args) -> SolverConfig:
    """Flag, then environment, then file keyword, then built-in default."""
    c = pf.command
    delta = args.delta if args.delta is not None else c.get("delta", DEFAULT_DELTA)
    workers = args.workers
    if workers is None:
        workers = _env_workers()
    if workers is None:
        workers = c.get("workers", 1)
    kw = {"delta": delta, "workers": workers}
    depth = args.max_depth if args.max_depth is not None else c.get("max-depth")
    if depth is not None:
        kw["max_depth"] = depth
    timeout = args.timeout_ms if args.timeout_ms is not None else c.get("timeout-ms")
    if timeout is not None:
        kw["timeout_ms"] = timeout
    try:
        return SolverConfig(**kw)
    except (ValueError, TypeError) as e:
        raise ProblemError("E-CONFIG", str(e)) from None


def strict_for(pf: ProblemFile, args) -> bool:
    if args.strict_lyapunov is not None:
        return args.strict_lyapunov == "on"
    return pf.command.get("strict-lyapunov", True)


def _rational(text: str) -> Fraction:
    try:
        q = Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a rational number: {text!r}") from None
    if q <= 0:
        raise argparse.ArgumentTypeError("must be positive")
    return q


# ---------------------------------------------------------------- reporting


class _Report:
    def __init__(self, fmt: str, out):
        self.fmt = fmt
        self.out = out

    def emit(self, data: dict, lines):
        if self.fmt == "json":
            self.out.write(json.dumps(data, sort_keys=True) + "\n")
        else:
            self.out.write("\n".join([data["verdict"]] + list(lines)) + "\n")

    def error(self, code: str, message: str):
        self.emit({"verdict": "error", "error": {"code": code, "message": message}}, [f"{code} {message}"])
        return EXIT_ERROR


def _point(point) -> dict:
    return {k: format_rational(v) for k, v in sorted((point or {}).items())}


def _stats(stats) -> dict:
    return {k: stats[k] for k in sorted(stats)}


def _load(path: str) -> ProblemFile:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except (OSError, UnicodeDecodeError) as e:
        raise ProblemError("E-IO", f"cannot read {path}: {e}") from None
    return parse(text)


def _message(e: ProblemError) -> str:
    return str(e)[len(e.code) + 1 :]


def cmd_run(args, rep: _Report) -> int:
    try:
        pf = _load(args.file)
        strict = strict_for(pf, args)
        phi, run = build(pf, strict)
        if pf.command.name == "classify":
            cls = classify_prefix(normalize_nnf(phi))
            rep.emit({"verdict": str(cls), "class": cls.kind, "level": cls.n}, [])
            return EXIT_OK
        cfg = config_for(pf, args)
    except ProblemError as e:
        return rep.error(e.code, _message(e))
    try:
        res = run(cfg)
    except Inconclusive as e:
        data = {"verdict": "inconclusive", "reason": e.reason, "stats": _stats(e.stats or {})}
        lines = [f"reason {e.reason}"]
        if e.box:
            lines.append("box " + " ".join(f"{k}=[{v.lo!r},{v.hi!r}]" for k, v in sorted(e.box.items())))
        rep.emit(data, lines)
        return EXIT_INCONCLUSIVE
    except DomainViolation as e:
        return rep.error("E-DOMAIN", str(e))
    except FormulaError as e:
        return rep.error("E-SYNTAX", str(e))
    verdict = str(res.verdict)
    data: dict = {"verdict": verdict, "delta": format_rational(res.delta), "stats": _stats(res.stats)}
    lines = []
    if verdict == "delta-sat":
        data["witness"] = _point(res.witness)
        lines += [f"witness {k} {v}" for k, v in data["witness"].items()]
    elif verdict == "delta-false":
        data["counterexample"] = _point(res.counterexample)
        lines += [f"counterexample {k} {v}" for k, v in data["counterexample"].items()]
    lines.append("stats " + " ".join(f"{k}={v}" for k, v in data["stats"].items()))
    if args.certificate:
        try:
            with open(args.certificate, "w", encoding="utf-8") as fh:
                fh.write(emit_certificate(res))
        except OSError as e:
            return rep.error("E-IO", f"cannot write {args.certificate}: {e}")
        data["certificate_path"] = args.certificate
        lines.append(f"certificate {args.certificate}")
    rep.emit(data, lines)
    return EXIT_OK


def cmd_classify(args, rep: _Report) -> int:
    try:
        pf = _load(args.file)
        phi, _ = build(pf, strict_for(pf, args))
    except ProblemError as e:
        return rep.error(e.code, _message(e))
    cls = classify_prefix(normalize_nnf(phi))
    rep.emit({"verdict": str(cls), "class": cls.kind, "level": cls.n}, [])
    return EXIT_OK


def cmd_verify(args, rep: _Report) -> int:
    try:
        pf = _load(args.file)
        phi, _ = build(pf, strict_for(pf, args))
        with open(args.cert, encoding="utf-8") as fh:
            text = fh.read()
    except ProblemError as e:
        return rep.error(e.code, _message(e))
    except (OSError, UnicodeDecodeError) as e:
        return rep.error("E-IO", f"cannot read {args.cert}: {e}")
    try:
        out = verify_certificate(text, phi, args.delta)
    except CertificateError as e:
        return rep.error("E-CERT", str(e))
    if out:
        rep.emit({"verdict": "accepted"}, [])
        return EXIT_OK
    rep.emit({"verdict": "rejected", "reason": out.reason}, [f"reason {out.reason}"])
    return EXIT_REJECTED


def parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="deltactl", description="Bounded delta-decisions over the reals with ODE flows.")
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(sp):
        sp.add_argument("--output", choices=("text", "json"), default="text")
        sp.add_argument("--strict-lyapunov", choices=("on", "off"), default=None)

    r = sub.add_parser("run", help="decide the command in a problem file")
    r.add_argument("file")
    r.add_argument("--delta", type=_rational, default=None)
    r.add_argument("--max-depth", type=int, default=None)
    r.add_argument("--timeout-ms", type=int, default=None)
    r.add_argument("--workers", type=int, default=None)
    r.add_argument("--certificate", metavar="PATH", default=None)
    common(r)

    c = sub.add_parser("classify", help="print the quantifier class of the sentence a file asks about")
    c.add_argument("file")
    common(c)

    v = sub.add_parser("verify", help="check a certificate against a problem file")
    v.add_argument("file")
    v.add_argument("cert")
    v.add_argument("--delta", type=_rational, default=None)
    common(v)
    return p


def main(argv=None) -> int:
    args = parser().parse_args(argv)
    rep = _Report(args.output, sys.stdout)
    handler = {"run": cmd_run, "classify": cmd_classify, "verify": cmd_verify}[args.cmd]
    code = handler(args, rep)
    sys.stdout.flush()
    return code


if __name__ == "__main__":
    sys.exit(main())
