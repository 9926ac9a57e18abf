import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from _util import UNIT, make
from convopt.control import optimize_semismooth_newton
from convopt.errors import ConfigError, SemanticError
from convopt.io import export_field, export_report, load_report, parse_config, read_field_csv
from convopt.mesh import DiffusionTensor, VectorCoefficient, build_grid
from convopt.problem import problem_from_config
from convopt.report import DiagnosticReport
from convopt.verification import manufactured_convergence

MINIMAL = {
    "problem": {
        "grid": {"nx": 16, "ny": 16},
        "nonlinearity": {"kind": "power", "r": 2},
        "objective": {"nu": 1e-2, "target": {"kind": "constant", "value": 0.0}},
        "bounds": [-1, 1],
    },
    "command": {"task": "optimize"},
}


def cfg_text(**sections):
    d = json.loads(json.dumps(MINIMAL))
    for k, v in sections.items():
        d.setdefault(k, {}).update(v)
    return json.dumps(d)


def test_minimal_config_valid():
    cfg = parse_config(json.dumps(MINIMAL))
    assert cfg["problem"]["domain"] == [0.0, 1.0, 0.0, 1.0]
    assert cfg["solver"]["tol_state"] == 1e-10
    p = problem_from_config(cfg["problem"])
    assert (p.nx, p.alpha, p.beta, p.nu) == (16, -1.0, 1.0, 1e-2)


def test_nu_zero_semantic():
    with pytest.raises(SemanticError, match="nu > 0") as info:
        parse_config(cfg_text(problem={"objective": {"nu": 0.0}}))
    assert info.value.path == "/problem/objective/nu"


def test_bounds_order_semantic():
    with pytest.raises(SemanticError, match="alpha < beta"):
        parse_config(cfg_text(problem={"bounds": [1, 1]}))


def test_unknown_key_names_path():
    with pytest.raises(ConfigError) as info:
        parse_config(cfg_text(solver={"stabilise": 0.1}))
    assert info.value.path == "/solver/stabilise"
    assert "stabilise" in str(info.value)


def test_type_error_has_pointer():
    with pytest.raises(ConfigError) as info:
        parse_config(cfg_text(problem={"grid": {"nx": "many"}}))
    assert info.value.path == "/problem/grid/nx"


def test_bad_json_and_bad_coefficient():
    with pytest.raises(ConfigError, match="line 1"):
        parse_config("{")
    with pytest.raises(SemanticError):
        parse_config(cfg_text(problem={"nonlinearity": {"kind": "power", "a0": "x1 - 2"}}))


def test_catalog_base_merges_overrides():
    cfg = parse_config(json.dumps({"problem": {"catalog": "power_divergent", "grid": {"nx": 8}, "bounds": [None, 2]}}))
    p = problem_from_config(cfg["problem"])
    assert (p.nx, p.ny, p.f.r, p.alpha, p.beta) == (8, 8, 3, -math.inf, 2.0)


# fields ----------------------------------------------------------------------

def test_zero_field_csv(tmp_path):
    g = build_grid(UNIT, 2, 2)
    path = export_field(g, np.zeros(g.n_dofs), tmp_path / "z.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "x,y,value"
    assert len(lines) == 10
    assert all(row.split(",")[2] == "0" for row in lines[1:])


@given(v=hnp.arrays(float, 25, elements=st.floats(-1e300, 1e300, allow_subnormal=True)))
def test_csv_round_trip_bit_exact(tmp_path_factory, v):
    g = build_grid(UNIT, 4, 4)
    path = export_field(g, v, tmp_path_factory.mktemp("f") / "f.csv")
    x, y, got = read_field_csv(path)
    np.testing.assert_array_equal(got, v)
    np.testing.assert_array_equal(x, g.node_coords[0])


def test_vtk_header(tmp_path):
    g = build_grid(UNIT, 4, 3)
    text = export_field(g, np.arange(g.n_dofs, dtype=float), tmp_path / "f.vtk", "vtk", name="state").read_text()
    assert "DATASET STRUCTURED_POINTS" in text
    assert "DIMENSIONS 5 4 1" in text
    assert "POINT_DATA 20" in text
    assert "SCALARS state double 1" in text
    assert len(text.splitlines()) == 10 + 20


def test_unwritable_path(tmp_path):
    g = build_grid(UNIT, 2, 2)
    with pytest.raises(OSError):
        export_field(g, np.zeros(1), tmp_path / "missing" / "f.csv")


# reports ---------------------------------------------------------------------

def test_optresult_json(tmp_path):
    p = make(8, target="sin(pi*x1)", alpha=-0.1, beta=0.1)
    res = optimize_semismooth_newton(p, np.zeros(49))
    export_report(res, tmp_path / "r.json")
    d = load_report(tmp_path / "r.json")
    assert d["status"] == "converged"
    assert d["residual_history"] == res.residual_history
    assert len(d["residual_history"]) == res.iterations + 1


def test_convergence_plot_files(tmp_path):
    study = manufactured_convergence(DiffusionTensor.identity(), VectorCoefficient.zero(),
                                     make(2).f, grids=(4, 8, 16))
    written = export_report(study, tmp_path / "conv.json")
    assert {w.name for w in written} == {"conv.json", "conv_L2.dat", "conv_H1.dat", "conv_max.dat"}
    rows = (tmp_path / "conv_L2.dat").read_text().splitlines()
    assert len(rows) == 3
    h, e = map(float, rows[0].split())
    assert h == study.h[0] and e == study.errors["L2"][0]


@given(vals=st.dictionaries(st.text("abcxyz", min_size=1, max_size=5),
                            st.floats(allow_nan=False, allow_infinity=False), max_size=6))
def test_report_round_trip(tmp_path_factory, vals):
    rep = DiagnosticReport("x", True, vals, tolerance=1e-9, seed=3)
    path = tmp_path_factory.mktemp("r") / "r.json"
    export_report(rep, path)
    assert load_report(path)["values"] == vals


def test_report_keys_sorted(tmp_path):
    rep = DiagnosticReport("x", True, {"b": 1, "a": 2})
    export_report(rep, tmp_path / "r.json")
    d = json.loads((tmp_path / "r.json").read_text())
    assert list(d) == sorted(d) and list(d["values"]) == ["a", "b"]
