import json

from torusforge.cli import EXIT_ERROR, EXIT_NOT_APPLICABLE, EXIT_OK, main

EXAMPLE_DOC = {
    "system": {"P": "0", "Q": "y*z", "R": "-x^2 + x*y + z^2"},
    "perturbation": {"simple": True},
    "interval": [-1.0, 1.0],
    "parameters": {"mu": 0.05, "eps": 0.05},
}


def _write_doc(tmp_path, doc, name="doc.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def test_analyze_example(tmp_path):
    doc = _write_doc(tmp_path, EXAMPLE_DOC)
    out = tmp_path / "out"
    assert main(["analyze", "--input", doc, "--out", str(out)]) == EXIT_OK
    report = json.loads((out / "analyze.json").read_text())
    assert report["criteria"]["omega"] == 2.0
    assert abs(report["criteria"]["ell1"] + 48.0) <= 1e-9
    assert report["criteria"]["applicable"] is True
    assert report["meta"]["tool"] == "torusforge"
    assert len(report["meta"]["input_sha256"]) == 64


def test_analyze_deterministic_bytes(tmp_path):
    doc = _write_doc(tmp_path, EXAMPLE_DOC)
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    main(["analyze", "--input", doc, "--out", str(out_a), "--seed", "0"])
    main(["analyze", "--input", doc, "--out", str(out_b), "--seed", "0"])
    assert (out_a / "analyze.json").read_bytes() == (out_b / "analyze.json").read_bytes()


def test_analyze_linear_term_error(tmp_path):
    doc = _write_doc(tmp_path, {
        "system": {"P": "x", "Q": "y*z", "R": "z^2"},
        "perturbation": {"simple": True},
    })
    out = tmp_path / "out"
    assert main(["analyze", "--input", doc, "--out", str(out)]) == EXIT_ERROR
    err = json.loads((out / "analyze_error.json").read_text())
    assert err["error"] == "LinearTermPresent"


def test_analyze_not_applicable(tmp_path):
    doc = _write_doc(tmp_path, {
        "system": {"P": "x*z", "Q": "y*z", "R": "x^2 + y^2"},
        "perturbation": {"simple": True},
    })
    out = tmp_path / "out"
    assert main(["analyze", "--input", doc, "--out", str(out)]) == EXIT_NOT_APPLICABLE
    report = json.loads((out / "analyze.json").read_text())
    assert report["criteria"]["applicable"] is False
    assert "NondegeneracyFailed" in report["criteria"]["reasons"]


def test_melnikov_csv(tmp_path):
    doc = _write_doc(tmp_path, EXAMPLE_DOC)
    out = tmp_path / "out"
    assert main(["melnikov", "--input", doc, "--out", str(out),
                 "--grid", "4", "--mu", "0.0"]) == EXIT_OK
    lines = (out / "melnikov.csv").read_text().splitlines()
    assert lines[0] == "r,w,f1_1,f1_2,f2_1,f2_2"
    assert len(lines) == 1 + 16


def test_simulate(tmp_path):
    doc = dict(EXAMPLE_DOC)
    doc["periods"] = 3
    path = _write_doc(tmp_path, doc)
    out = tmp_path / "out"
    assert main(["simulate", "--input", path, "--out", str(out)]) == EXIT_OK
    lines = (out / "trajectory.csv").read_text().splitlines()
    assert lines[0] == "t,x,y,z"
    assert len(lines) > 10


def test_lift_command(tmp_path):
    doc = _write_doc(tmp_path, {
        "system": {"P": "2 + x + 1/2*z + x^2", "Q": "1 - y + 2*z + y^2",
                   "R": "3 + x + z^2"},
        "ball": {"center": [0, 0, 0], "radius": 1.0},
    })
    out = tmp_path / "out"
    assert main(["lift", "--input", doc, "--out", str(out)]) == EXIT_OK
    report = json.loads((out / "lift.json").read_text())
    assert report["lift"]["char_poly_ok"] is True
    assert report["lift"]["A_limit"] == report["lift"]["A_limit_printed"]
    assert report["criteria"]["applicable"] is True
    text = (out / "lifted_system.txt").read_text()
    assert "P = " in text and "X1 = " in text


def test_missing_input_is_error(tmp_path):
    out = tmp_path / "out"
    assert main(["analyze", "--input", str(tmp_path / "nope.json"),
                 "--out", str(out)]) == EXIT_ERROR


def test_bad_tolerance_rejected(tmp_path):
    doc = _write_doc(tmp_path, EXAMPLE_DOC)
    assert main(["analyze", "--input", doc, "--out", str(tmp_path),
                 "--tol", "-1.0"]) == EXIT_ERROR


def test_invalid_schema(tmp_path):
    doc = _write_doc(tmp_path, {"perturbation": {"simple": True}})
    assert main(["analyze", "--input", doc, "--out", str(tmp_path)]) == EXIT_ERROR
