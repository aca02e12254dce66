"""File formats, the query grammar, and the command-line surface.

Commands run in-process through main(argv) so exit codes and output are
asserted directly; one smoke test goes through `python3 -m bnsearch.cli` to
cover the real entry point.
"""

import json
import subprocess
import sys

import numpy as np
import pytest

from bnsearch.circuits import AdderSpec, build_adder
from bnsearch.cli import (
    EXIT_INPUT,
    EXIT_OK,
    EXIT_USAGE,
    EXIT_ZERO_EVIDENCE,
    emit_network,
    main,
    parse_evidence,
    parse_network,
    parse_query,
)
from bnsearch.errors import ParseError
from bnsearch.model import And, Atom, Not, Or, NetworkSpec, build_network
from bnsearch.worlds import enumerate_exact

NET_TEXT = """\
# a small chain
net chain3
var a t f
var b t f
var c t f
parents b a
parents c b
cpt a
| 0.3 0.7
cpt b
t | 0.9 0.1
f | 0.2 0.8
cpt c
t | 0.6 0.4
f | 0.5 0.5
end
"""


def chain3():
    return build_network(parse_network(NET_TEXT).to_spec())


# -- network format -----------------------------------------------------------


def test_parse_network_round_trip():
    net = chain3()
    assert [v.name for v in net.variables] == ["a", "b", "c"]
    again = build_network(parse_network(emit_network(net)).to_spec())
    assert [v.name for v in again.variables] == [v.name for v in net.variables]
    for a, b in zip(net.cpts, again.cpts):
        assert a.parent_indices == b.parent_indices
        assert np.array_equal(a.table, b.table)


def test_emit_is_a_fixpoint():
    text = emit_network(chain3())
    again = emit_network(build_network(parse_network(text).to_spec()))
    assert text == again


@pytest.mark.parametrize(
    "mutation,complaint",
    [
        (lambda t: t.replace("net chain3\nvar a t f", "var a t f\nnet chain3"), "first"),
        (lambda t: t.replace("var a t f", "var a"), "at least one value"),
        (lambda t: t.replace("parents b a", "parents b zz"), "unknown parent"),
        (lambda t: t.replace("f | 0.2 0.8\n", ""), "1 of 2 row"),
        (lambda t: t.replace("t | 0.9 0.1", "f | 0.9 0.1"), "should list parent values"),
        (lambda t: t.replace("t | 0.9 0.1", "t | 0.9"), "1 probabilities"),
        (lambda t: t.replace("t | 0.9 0.1", "t | 0.9 zebra"), "must be numbers"),
        (lambda t: t.replace("end\n", ""), "missing end"),
        (lambda t: t + "var late t f\n", "after end"),
        (lambda t: t.replace("cpt a\n| 0.3 0.7\n", "cpt a\n| 0.3 0.7\n| 0.1 0.9\n"), "too many rows"),
    ],
)
def test_parse_network_errors(mutation, complaint):
    with pytest.raises(ParseError, match=complaint):
        parse_network(mutation(NET_TEXT))


def test_parse_errors_carry_line_numbers():
    bad = NET_TEXT.replace("t | 0.9 0.1", "t | 0.9 zebra")
    with pytest.raises(ParseError) as exc:
        parse_network(bad)
    assert exc.value.line == 11
    assert str(exc.value).startswith("line 11:")


def test_section_order_enforced():
    shuffled = NET_TEXT.replace(
        "parents c b\ncpt a", "cpt a"
    ).replace("cpt c\n", "parents c b\ncpt c\n")
    with pytest.raises(ParseError, match="section"):
        parse_network(shuffled)


def test_var_declared_twice():
    with pytest.raises(ParseError, match="declared twice"):
        parse_network(NET_TEXT.replace("var b t f", "var b t f\nvar b t f"))


# -- evidence format ----------------------------------------------------------


def test_parse_evidence():
    net = chain3()
    obs = parse_evidence("# noise\nb = t\n\nc = f\n", net)
    assert obs.as_dict() == {net.index_of("b"): 0, net.index_of("c"): 1}


def test_parse_evidence_errors():
    net = chain3()
    with pytest.raises(ParseError, match="name = value"):
        parse_evidence("b\n", net)
    with pytest.raises(ParseError, match="observed twice"):
        parse_evidence("b = t\nb = f\n", net)
    with pytest.raises(ParseError) as exc:
        parse_evidence("b = t\noops\n", net)
    assert exc.value.line == 2


# -- query grammar ------------------------------------------------------------


def test_query_precedence_not_over_and_over_or():
    net = chain3()
    f = parse_query("!a=t & b=t | c=f", net)
    # (!a=t & b=t) | c=f
    assert isinstance(f, Or)
    left, right = f.operands
    assert isinstance(left, And)
    assert isinstance(left.operands[0], Not)
    assert isinstance(right, Atom)


def test_query_parens_override():
    net = chain3()
    f = parse_query("a=t & (b=t | c=f)", net)
    assert isinstance(f, And)
    assert isinstance(f.operands[1], Or)


def test_query_not_binds_to_parens():
    net = chain3()
    f = parse_query("!(a=t | b=t)", net)
    assert isinstance(f, Not)
    assert isinstance(f.operand, Or)


@pytest.mark.parametrize(
    "text,complaint",
    [
        ("", "empty query"),
        ("a=t &", "ended unexpectedly"),
        ("(a=t", "missing"),
        ("a=t b=t", "trailing"),
        ("a", "name=value"),
        ("=t", "name=value"),
        ("a=t )", "trailing"),
    ],
)
def test_query_parse_errors(text, complaint):
    net = chain3()
    with pytest.raises(ParseError, match=complaint):
        parse_query(text, net)


def test_query_checks_names_and_values():
    from bnsearch.errors import BadReference

    net = chain3()
    with pytest.raises(BadReference):
        parse_query("zz=t", net)
    with pytest.raises(BadReference):
        parse_query("a=x", net)


# -- commands -----------------------------------------------------------------


@pytest.fixture()
def chain_files(tmp_path):
    net = tmp_path / "chain.net"
    net.write_text(NET_TEXT)
    ev = tmp_path / "chain.ev"
    ev.write_text("b = t\n")
    return str(net), str(ev)


def test_query_command_machine_output(chain_files, capsys):
    net, ev = chain_files
    rc = main(
        ["query", "--network", net, "--evidence", ev, "--query", "c=t", "--machine"]
    )
    assert rc == EXIT_OK
    payload = json.loads(capsys.readouterr().out)
    assert payload["midpoint"] == pytest.approx(0.6)
    assert payload["maxError"] <= 1e-12
    assert payload["stop"] == "exhausted"
    assert payload["lower"] <= 0.6 <= payload["upper"]
    assert "priorLower" not in payload
    assert set(payload) >= {
        "query",
        "lower",
        "upper",
        "midpoint",
        "maxError",
        "pWgObs",
        "pWobs",
        "pQ",
        "worlds",
        "expansions",
        "stop",
        "engine",
    }


def test_query_command_unconditioned_reports_prior(chain_files, capsys):
    net, _ = chain_files
    rc = main(["query", "--network", net, "--query", "b=t", "--machine"])
    assert rc == EXIT_OK
    payload = json.loads(capsys.readouterr().out)
    assert payload["priorLower"] == pytest.approx(0.41)
    assert payload["priorUpper"] == pytest.approx(0.41)


def test_query_command_human_output(chain_files, capsys):
    net, ev = chain_files
    rc = main(["query", "--network", net, "--evidence", ev, "--query", "c=t"])
    assert rc == EXIT_OK
    out = capsys.readouterr().out
    assert "posterior in [" in out
    assert "stop exhausted" in out


def test_query_command_trace(chain_files, tmp_path, capsys):
    net, ev = chain_files
    trace = tmp_path / "trace.csv"
    rc = main(
        [
            "query",
            "--network",
            net,
            "--evidence",
            ev,
            "--query",
            "c=t",
            "--trace",
            str(trace),
        ]
    )
    assert rc == EXIT_OK
    lines = trace.read_text().strip().splitlines()
    assert len(lines) >= 2
    last = lines[-1].split(",")
    assert last[0] == "step"
    lower, upper = float(last[4]), float(last[5])
    assert lower <= 0.6 <= upper
    # bounds tighten monotonically in a trace
    lowers = [float(l.split(",")[4]) for l in lines]
    uppers = [float(l.split(",")[5]) for l in lines]
    assert lowers == sorted(lowers)
    assert uppers == sorted(uppers, reverse=True)
    assert float(last[6]) <= 1e-12


def test_diagnose_command(chain_files, capsys):
    net, ev = chain_files
    rc = main(
        ["diagnose", "--network", net, "--evidence", ev, "--top", "2", "--machine"]
    )
    assert rc == EXIT_OK
    payload = json.loads(capsys.readouterr().out)
    assert len(payload["worlds"]) == 2
    first = payload["worlds"][0]
    assert first["rank"] == 1
    assert first["probability"] == pytest.approx(0.3 * 0.9 * 0.6)
    assert 0.0 <= first["posteriorLower"] <= first["posteriorUpper"] <= 1.0


def test_gen_adder_then_query_round_trip(tmp_path, capsys):
    netp = tmp_path / "adder.net"
    evp = tmp_path / "adder.ev"
    rc = main(
        [
            "gen-adder",
            "--bits",
            "1",
            "--error-bit",
            "1",
            "--out",
            f"{netp},{evp}",
        ]
    )
    assert rc == EXIT_OK
    capsys.readouterr()
    net = build_network(parse_network(netp.read_text()).to_spec())
    assert net.n == 13
    obs = parse_evidence(evp.read_text(), net)
    # the flipped sum line reads on instead of off
    assert obs.names(net) == {"out-x2_1": "on"}

    rc = main(
        [
            "query",
            "--network",
            str(netp),
            "--evidence",
            str(evp),
            "--query",
            "x1ok_1=stuck1 | x2ok_1=stuck1",
            "--machine",
        ]
    )
    assert rc == EXIT_OK
    payload = json.loads(capsys.readouterr().out)
    adder = build_adder(AdderSpec(1))
    want = enumerate_exact(
        adder.network,
        parse_query("x1ok_1=stuck1 | x2ok_1=stuck1", adder.network),
        adder.observe_outputs([1]),
    ).posterior
    assert payload["midpoint"] == pytest.approx(want, abs=1e-9)


def test_bench_command_writes_csv(tmp_path, capsys):
    out = tmp_path / "bench.csv"
    rc = main(["bench", "--grid", "1,1,on,2;1,1,off,2", "--out", str(out)])
    assert rc == EXIT_OK
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "nBits,k,conflicts,m,expansions,worlds,maxError,wallMs"
    assert len(lines) == 3


def test_engines_command(capsys):
    rc = main(["engines"])
    assert rc == EXIT_OK
    out = capsys.readouterr().out
    assert "compiled_available:" in out
    assert "default:" in out


# -- exit codes ---------------------------------------------------------------


def test_usage_error_exit_code(capsys):
    assert main(["query", "--network", "x.net"]) == EXIT_USAGE
    assert "usage error" in capsys.readouterr().err


def test_missing_file_exit_code(capsys):
    rc = main(["query", "--network", "/nonexistent.net", "--query", "a=t"])
    assert rc == EXIT_INPUT
    assert "error:" in capsys.readouterr().err


def test_parse_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.net"
    bad.write_text("net x\nvar a t f\ncpt a\n| 0.3 0.7\n")  # no end
    rc = main(["query", "--network", str(bad), "--query", "a=t"])
    assert rc == EXIT_INPUT
    assert "line" in capsys.readouterr().err


def test_zero_evidence_exit_code(tmp_path, capsys):
    netp = tmp_path / "det.net"
    spec = NetworkSpec(name="det")
    spec.add("a", ("t", "f"), rows=[[1.0, 0.0]])
    netp.write_text(emit_network(build_network(spec)))
    evp = tmp_path / "det.ev"
    evp.write_text("a = f\n")
    rc = main(
        ["query", "--network", str(netp), "--evidence", str(evp), "--query", "a=t"]
    )
    assert rc == EXIT_ZERO_EVIDENCE
    assert "zero evidence" in capsys.readouterr().err


def test_module_entry_point(tmp_path):
    netp = tmp_path / "chain.net"
    netp.write_text(NET_TEXT)
    proc = subprocess.run(
        [
            sys.executable,
            "-m",
            "bnsearch.cli",
            "query",
            "--network",
            str(netp),
            "--query",
            "b=t",
            "--machine",
        ],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["midpoint"] == pytest.approx(0.41)
