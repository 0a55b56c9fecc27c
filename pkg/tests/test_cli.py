import contextlib
import io
import json
from fractions import Fraction
from importlib import resources
from pathlib import Path

import jsonschema
import pytest

from deltactl.cli import main
from deltactl.formula import Exists
from deltactl.problem import ProblemError, format_problem, parse
from corpus import corpus_paths

PROBLEMS = Path(__file__).resolve().parents[1] / "problems"
SCHEMA = json.loads((resources.files("deltactl") / "report.schema.json").read_text())


def cli(*argv):
    buf = io.StringIO()
    with contextlib.redirect_stdout(buf):
        code = main([str(a) for a in argv])
    return code, buf.getvalue()


def write(tmp_path, text, name="p.dl"):
    path = tmp_path / name
    path.write_text(text)
    return path


# ---------------------------------------------------------------- parsing


def test_parse_sigma1_file():
    pf = parse("(declare-var x [0 2]) (assert (exists ((x [0 2])) (= (* x x) 2))) (check-sat :delta 1/100)")
    assert len(pf.assertions) == 1 and isinstance(pf.assertions[0], Exists)
    assert pf.command.name == "check-sat" and pf.command.get("delta") == Fraction(1, 100)


def test_decimal_literal_is_exact():
    pf = parse("(declare-var x [0 1]) (assert (> x 0.25)) (check-sat)")
    assert pf.assertions[0].rhs.value == Fraction(1, 4)


def test_comments_and_ode_declaration():
    pf = parse((PROBLEMS / "lyapunov_cubic.dl").read_text())
    assert "cubic" in pf.systems


@pytest.mark.parametrize(
    "text, code",
    [
        ("(declare-var x)\n(check-sat)", "E-SYNTAX"),
        ("(declare-var x [0 1])\n(assert (> x 0)\n(check-sat)", "E-SYNTAX"),
        ("(declare-var x [0 1])\n(assert (> y 0))\n(check-sat)", "E-UNDECLARED"),
        ("(declare-var x [0 1])\n(assert (> (sin x x) 0))\n(check-sat)", "E-ARITY"),
        ("(declare-var x [0 1])\n(assert (> x 0))", "E-SYNTAX"),
        ("(declare-var x [0 1])\n(assert (> x 0))\n(check-sat)\n(check-sat)", "E-SYNTAX"),
        ("(declare-var x [2 1])\n(check-sat)", "E-DOMAIN"),
    ],
)
def test_parse_errors(text, code):
    with pytest.raises(ProblemError) as info:
        parse(text)
    assert info.value.code == code


def test_syntax_error_position():
    with pytest.raises(ProblemError) as info:
        parse("(declare-var x [0 1])\n(assert (> y 0))\n(check-sat)")
    assert (info.value.line, info.value.col) == (2, 12)


@pytest.mark.parametrize("path", corpus_paths() + sorted(PROBLEMS.glob("*.dl")), ids=lambda p: p.name)
def test_pretty_print_round_trip(path):
    pf = parse(path.read_text())
    assert parse(format_problem(pf)) == pf


# ---------------------------------------------------------------- running


def test_square_root_pipeline(tmp_path):
    cert = tmp_path / "out.cert"
    code, out = cli("run", PROBLEMS / "sqrt2.dl", "--certificate", cert)
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "delta-sat"
    x = Fraction(lines[1].split()[2])
    assert abs(x * x - 2) <= Fraction(1, 100)
    assert lines[-1] == f"certificate {cert}"
    assert cli("verify", PROBLEMS / "sqrt2.dl", cert) == (0, "accepted\n")


def test_tampered_certificate_is_rejected(tmp_path):
    cert = tmp_path / "out.cert"
    cli("run", PROBLEMS / "sqrt2.dl", "--certificate", cert)
    cert.write_text(cert.read_text().replace("(x 181/128)", "(x 1)"))
    code, out = cli("verify", PROBLEMS / "sqrt2.dl", cert)
    assert code == 1 and out.startswith("rejected\nreason ")


def test_classify_stability():
    assert cli("classify", PROBLEMS / "stability.dl") == (0, "Pi(3)  ((Pi_3)^P)^C\n")


def test_classify_command_in_file(tmp_path):
    path = write(tmp_path, "(declare-var x [0 1])\n(assert (exists ((x [0 1])) (> x 0)))\n(classify)\n")
    assert cli("run", path) == (0, "Sigma(1)  ((Sigma_1)^P)^C\n")


@pytest.mark.parametrize(
    "name, verdict",
    [
        ("lyapunov_cubic.dl", "valid"),
        ("lyapunov_growth.dl", "delta-false"),
        ("lyapunov_synth.dl", "delta-sat"),
        ("reach.dl", "delta-sat"),
        ("pid.dl", "delta-sat"),
        ("stability.dl", "valid"),
    ],
)
def test_control_commands(name, verdict):
    code, out = cli("run", PROBLEMS / name)
    assert code == 0 and out.splitlines()[0] == verdict


def test_free_variables_are_existential(tmp_path):
    path = write(tmp_path, "(declare-var x [0 1])\n(assert (> x 1/2))\n(check-sat :delta 1/10)\n")
    code, out = cli("run", path)
    assert code == 0 and out.startswith("delta-sat\nwitness x ")


def test_error_reports_have_no_verdict(tmp_path):
    path = write(tmp_path, "(declare-var x [0 1])\n(assert (> y 0))\n(check-sat)\n")
    code, out = cli("run", path)
    assert code == 2
    assert out.splitlines()[0] == "error"
    assert out.splitlines()[1].startswith("E-UNDECLARED 2:12")


def test_missing_file():
    code, out = cli("run", "/nonexistent/problem.dl")
    assert code == 2 and out.splitlines()[1].startswith("E-IO ")


def test_domain_error(tmp_path):
    path = write(tmp_path, "(declare-var x [-1 1])\n(assert (> (log x) 5))\n(check-sat :delta 1/100)\n")
    code, out = cli("run", path)
    assert code == 2 and out.splitlines()[1].startswith("E-DOMAIN ")


def test_bad_worker_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("DELTACTL_WORKERS", "many")
    code, out = cli("run", PROBLEMS / "sqrt2.dl")
    assert code == 2 and out.splitlines()[1].startswith("E-CONFIG ")


def test_inconclusive_exit_code():
    code, out = cli("run", PROBLEMS / "sqrt2.dl", "--delta", "1/1000000000000", "--max-depth", "2")
    assert code == 3
    lines = out.splitlines()
    assert lines[0] == "inconclusive" and lines[1].startswith("reason ")


def test_flag_beats_environment_beats_file(monkeypatch):
    monkeypatch.setenv("DELTACTL_WORKERS", "2")
    _, file_delta = cli("run", PROBLEMS / "sqrt2.dl", "--output", "json")
    assert json.loads(file_delta)["delta"] == "1/100"
    _, flag_delta = cli("run", PROBLEMS / "sqrt2.dl", "--output", "json", "--delta", "1/10")
    assert json.loads(flag_delta)["delta"] == "1/10"


def test_strict_lyapunov_flag(tmp_path):
    text = "(declare-ode grow ((x x)) :domain ([-2 2]) :horizon 10)\n(lyapunov-check :system grow :V 0 :region ([-1 1]) :delta 1/1000)\n"
    path = write(tmp_path, text)
    assert cli("run", path)[1].startswith("delta-false")
    assert cli("run", path, "--strict-lyapunov", "off")[1].startswith("valid")


# ---------------------------------------------------------------- JSON reports


@pytest.mark.parametrize("path", corpus_paths(), ids=lambda p: p.name)
def test_json_reports_match_schema(path, tmp_path):
    code, out = cli("run", path, "--output", "json", "--certificate", tmp_path / "c.cert")
    assert code == 0
    report = json.loads(out)
    jsonschema.validate(report, SCHEMA)
    assert report["certificate_path"] == str(tmp_path / "c.cert")


def test_error_and_inconclusive_reports_match_schema(tmp_path):
    bad = write(tmp_path, "(declare-var x)\n(check-sat)\n")
    for argv in (
        ("run", bad, "--output", "json"),
        ("run", PROBLEMS / "sqrt2.dl", "--output", "json", "--delta", "1/1000000000000", "--max-depth", "2"),
        ("classify", PROBLEMS / "stability.dl", "--output", "json"),
    ):
        _, out = cli(*argv)
        jsonschema.validate(json.loads(out), SCHEMA)


def test_worker_counts_give_identical_output(tmp_path):
    outs = set()
    for w in (1, 8):
        cert = tmp_path / f"w{w}.cert"
        _, out = cli("run", PROBLEMS / "reach.dl", "--workers", w, "--certificate", cert)
        outs.add((out.replace(str(cert), "CERT"), cert.read_bytes()))
    assert len(outs) == 1
