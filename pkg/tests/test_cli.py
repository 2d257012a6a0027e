import csv
import io
import json
import pathlib

import jsonschema
import pytest

from gasflow import cli

CONFIGS = pathlib.Path(__file__).resolve().parent.parent / "docs" / "configs"


def cfg(name):
    return str(CONFIGS / name)


def invoke(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = cli.run([str(a) for a in argv], out, err)
    text = out.getvalue()
    return code, (json.loads(text) if text else None), err.getvalue(), text


def write(tmp_path, name, doc):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.json")), ids=lambda p: p.name)
def test_published_configs_validate(path):
    doc = json.loads(path.read_text())
    schema = cli.FAMILY_SCHEMA if "parameter" in doc else cli.SYSTEM_SCHEMA
    cli.validate(doc, schema)
    (cli.Family if "parameter" in doc else cli.System)(doc)


def test_check_gas_supported():
    code, rep, _, _ = invoke("check-gas", "--system", cfg("lin2d.json"), "--samples", 200)
    assert code == 0 and rep["verdict"] == "supported"
    assert rep["results"]["converged"] == 200


def test_check_gas_falsified():
    code, rep, _, _ = invoke("check-gas", "--system", cfg("id.json"), "--samples", 20)
    assert code == 2 and rep["verdict"] == "falsified"
    assert rep["results"]["escape_witnesses"]


def test_obstruct_rotation():
    code, rep, _, _ = invoke("obstruct", "--family", cfg("rot.json"))
    assert code == 2
    assert rep["verdict"] == "OBSTRUCTED" and rep["results"]["winding"] == 2


def test_obstruct_constant():
    code, rep, _, _ = invoke("obstruct", "--family", cfg("const_family.json"))
    assert code == 0 and rep["results"]["winding"] == 1


def test_degree_identity():
    code, rep, _, _ = invoke("degree", "--system", cfg("id.json"), "--radius", 1)
    assert code == 0 and rep["results"]["value"] == 1
    for key in ("value", "raw", "residual", "method", "mesh"):
        assert key in rep["results"]


def test_lyapunov_with_explicit_function(tmp_path):
    grid = tmp_path / "v.csv"
    code, rep, _, _ = invoke("lyapunov", "--system", cfg("cubic_plus_linear.json"), "--samples", 200,
                             "--grid-csv", grid, "--grid-n", 5)
    assert code == 0 and rep["verdict"] == "pass"
    rows = list(csv.reader(grid.open()))
    assert rows[0] == ["x1", "V"] and len(rows) == 6
    assert float(rows[3][1]) == 0.0


def test_lyapunov_massera_fails_for_center():
    code, rep, _, _ = invoke("lyapunov", "--system", cfg("center.json"), "--samples", 20)
    assert code == 2 and rep["verdict"] == "fail"


def test_homotopy_continuation(tmp_path):
    trace = tmp_path / "trace.csv"
    code, rep, _, _ = invoke("homotopy", "--kind", "continuation", "--from", cfg("neg1d.json"),
                             "--to", cfg("cubic_plus_linear.json"), "--verify", "--t-grid", 11,
                             "--trace", trace, "--trace-points", 4)
    assert code == 0 and rep["verdict"] == "pass"
    assert rep["results"]["endpoint_fidelity"]["end"] <= 1e-9
    rows = list(csv.reader(trace.open()))
    assert rows[0] == ["t", "x1", "H1"] and len(rows) == 1 + 11 * 4


def test_homotopy_to_unstable_target_is_refused():
    # the target's Massera function does not exist: the orbits escape
    code, rep, err, _ = invoke("homotopy", "--kind", "continuation", "--from", cfg("lin2d.json"),
                               "--to", cfg("id.json"), "--verify", "--t-grid", 5, "--samples", 20)
    assert code == 1 and rep is None
    assert "escape" in err


def test_homotopy_kinds_build():
    for args in (["--kind", "complete", "--from", cfg("spiral.json")],
                 ["--kind", "appendix-hyp", "--from", cfg("spiral.json")],
                 ["--kind", "appendix-morse", "--from", cfg("bowl.json")],
                 ["--kind", "alexander", "--from", cfg("quartic.json")],
                 ["--kind", "translate", "--from", cfg("shifted.json"), "--target", 0, 0]):
        code, rep, err, _ = invoke("homotopy", *args)
        assert code == 0, err
        assert max(rep["results"]["endpoint_fidelity"].values()) <= 1e-6


def test_linearize_eval(tmp_path):
    pts = tmp_path / "pts.csv"
    pts.write_text("x1,x2\n2,0\n0.5,0\n")
    out = tmp_path / "h.csv"
    code, rep, _, _ = invoke("linearize", "--system", cfg("lin2d.json"), "--eval", pts,
                             "--eval-out", out, "--check", "--samples", 20)
    assert code == 0 and rep["verdict"] == "pass"
    assert rep["results"]["points"][0]["h"] == pytest.approx([2, 0], rel=1e-7)
    assert len(list(csv.reader(out.open()))) == 3


def test_morse_check():
    code, rep, _, _ = invoke("morse", "--system", cfg("quartic.json"), "--check", "--samples", 50)
    assert code == 0 and rep["results"]["check"]["max"] <= 1e-6


def test_family_check_pitchfork():
    code, rep, _, _ = invoke("family-check", "--family", cfg("pitchfork_family.json"),
                             "--t-range", 0.1, 0.5, "--local-t", 0.25, 0.5, 1)
    assert code == 2 and rep["verdict"] == "not-attracting"
    assert all(c["verdict"] == "pass" for c in rep["results"]["local_checks"])


# -------------------------------------------------------------- errors


def test_schema_violation_reports_pointer(tmp_path):
    p = write(tmp_path, "bad.json", {"schema": 1, "dimension": 2, "field": ["-x1", 3]})
    code, rep, err, _ = invoke("check-gas", "--system", p)
    assert code == 1 and rep is None
    assert "/field/1" in err


def test_wrong_schema_version(tmp_path):
    p = write(tmp_path, "bad.json", {"schema": 2, "dimension": 1, "field": ["-x1"]})
    code, _, err, _ = invoke("check-gas", "--system", p)
    assert code == 1 and "/schema" in err


def test_field_and_potential_exclusive(tmp_path):
    p = write(tmp_path, "bad.json", {"schema": 1, "dimension": 1, "field": ["-x1"],
                                     "potential": "x1^2"})
    assert invoke("check-gas", "--system", p)[0] == 1


def test_dimension_mismatch(tmp_path):
    p = write(tmp_path, "bad.json", {"schema": 1, "dimension": 2, "field": ["-x1"]})
    code, _, err, _ = invoke("check-gas", "--system", p)
    assert code == 1 and "dimension" in err


def test_bad_expression(tmp_path):
    p = write(tmp_path, "bad.json", {"schema": 1, "dimension": 1, "field": ["-x1 +* 2"]})
    assert invoke("check-gas", "--system", p)[0] == 1


def test_usage_errors(tmp_path):
    assert invoke("frobnicate")[0] == 1
    assert invoke("check-gas")[0] == 1
    assert invoke("check-gas", "--system", tmp_path / "missing.json")[0] == 1
    assert invoke("degree", "--system", cfg("lin2d.json"), "--threads", 0)[0] == 1
    assert invoke("morse", "--system", cfg("lin2d.json"))[0] == 1


def test_vanishing_on_sphere_is_an_error():
    code, _, err, _ = invoke("degree", "--system", cfg("lin2d.json"), "--center", 1, 0,
                             "--radius", 1.0)
    assert code == 1 and "vanishes" in err
    code, rep, _, _ = invoke("degree", "--system", cfg("shifted.json"), "--center", 0, 0)
    assert code == 0 and rep["results"]["value"] == 0


# -------------------------------------------------------------- reports


REPORT_RUNS = [
    ("check-gas", "--system", cfg("spiral.json"), "--samples", 30),
    ("lyapunov", "--system", cfg("neg1d.json"), "--samples", 50),
    ("homotopy", "--kind", "sontag", "--from", cfg("cubic1d.json"), "--verify", "--samples", 30),
    ("linearize", "--system", cfg("cubic1d.json"), "--check", "--samples", 20),
    ("morse", "--system", cfg("bowl.json"), "--check", "--samples", 20),
    ("degree", "--system", cfg("lin2d.json")),
    ("obstruct", "--family", cfg("rot.json")),
    ("family-check", "--family", cfg("pitchfork_family.json"), "--samples", 8, "--horizon", 2000),
]


@pytest.mark.parametrize("argv", REPORT_RUNS, ids=lambda a: a[0])
def test_reports_validate_and_are_deterministic(argv):
    code1, rep, _, text1 = invoke(*argv, "--seed", 5)
    assert code1 in (0, 2)
    jsonschema.validate(rep, cli.REPORT_SCHEMA)
    assert rep["seed"] == 5 and rep["command"] == argv[0]
    code2, _, _, text2 = invoke(*argv, "--seed", 5, "--threads", 3)
    assert code1 == code2 and text1 == text2


def test_report_is_self_contained(tmp_path):
    code, rep, _, _ = invoke("check-gas", "--system", cfg("spiral.json"), "--samples", 10,
                             "--seed", 11)
    p = write(tmp_path, "echo.json", rep["inputs"]["config"])
    opts = rep["inputs"]["options"]
    again = invoke("check-gas", "--system", p, "--samples", opts["samples"], "--box", opts["box"],
                   "--horizon", opts["horizon"], "--seed", rep["seed"])[1]
    assert again["results"] == rep["results"]


def test_out_file(tmp_path):
    out = tmp_path / "r.json"
    code, rep, _, text = invoke("degree", "--system", cfg("id.json"), "--out", out)
    assert code == 0 and text == ""
    assert json.loads(out.read_text())["results"]["value"] == 1


def test_non_finite_values_become_null():
    assert json.loads(cli.render_report({"a": float("inf"), "b": [float("nan"), 1.0]})) == \
        {"a": None, "b": [None, 1.0]}
