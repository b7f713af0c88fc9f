import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mayersens import dynamics as dy
from mayersens.exceptions import ConfigError
from mayersens.expr import evaluate_constant, parse_expression
from mayersens.problem_file import load_problem, parse_problem

BASE = """\
let c = 2
name = demo
dim = 1
dynamics = interval
f = -c
g = c * (1 + x^2)
phi = abs(x - 0.5)
t0 = 0
T = 1
box = [-1, 1]
"""


def test_parse_interval_problem():
    d = parse_problem(BASE)
    F = d.problem.F
    assert isinstance(F, dy.Interval1D)
    assert F.support([0.5], [1.0]).value == pytest.approx(2.5)
    assert F.support([0.5], [-1.0]).value == pytest.approx(2.0)
    assert d.problem.phi_values(np.array([[0.0]]))[0] == pytest.approx(0.5)
    assert d.grid.pad == "auto" and d.grid.nt == 101


def test_parse_ball_polytope_body(tmp_path):
    ball = """
name = b
dim = 2
dynamics = ball
center = [-x2, x1]
radius = 0.5 + 0*x1
center_jac = [[0, -1], [1, 0]]
phi = x1^2 + x2^2
T = 1
box = [[-1, 1], [-1, 1]]
grid_nx = [21, 31]
"""
    d = parse_problem(ball)
    assert d.grid.nx == (21, 31)
    x, p = np.array([0.3, 0.4]), np.array([1.0, 0.0])
    assert d.problem.F.support(x, p).value == pytest.approx(-0.4 + 0.5)
    np.testing.assert_allclose(d.problem.F.x_subgradient(x, p)[0], [0.0, -1.0])

    poly = ball.replace("dynamics = ball\ncenter = [-x2, x1]\nradius = 0.5 + 0*x1\ncenter_jac = [[0, -1], [1, 0]]\n",
                        "dynamics = polytope\nvertices = [[1, 0], [0, 1], [-1, x1]]\n")
    d = parse_problem(poly)
    assert d.problem.F.support(np.array([0.5, 0.0]), np.array([0.0, 1.0])).value == pytest.approx(1.0)

    path = tmp_path / "body.prob"
    path.write_text(ball.replace("dynamics = ball\ncenter = [-x2, x1]\nradius = 0.5 + 0*x1\n"
                                 "center_jac = [[0, -1], [1, 0]]\n",
                                 "dynamics = body\nbody = polygon([[0, 0], [1, 0], [0, 1]])\n"))
    d = load_problem(path)
    assert d.problem.F.support(np.zeros(2), np.array([1.0, 1.0])).value == pytest.approx(1.0)
    assert d.source == str(path)


@pytest.mark.parametrize("text,line,fragment", [
    (BASE + "bogus = 1\n", 11, "unknown key"),
    (BASE + "phi = x\n", 11, "duplicate key"),
    (BASE.replace("f = -c", "f = -c +"), 5, "syntax error"),
    (BASE.replace("f = -c", "f = -k"), 5, "unknown name"),
    (BASE.replace("f = -c", "f = __import__('os')"), 5, "unknown function"),
    (BASE.replace("let c = 2", "let c = 2\nlet c = 3"), 2, "redefined"),
    (BASE.replace("box = [-1, 1]", "box = [1, -1]"), 10, "lo < hi"),
    (BASE.replace("T = 1", "T = 0"), 9, "t0 < T"),
    (BASE.replace("dim = 1", "dim = 2"), 4, "dim = 1"),
    (BASE.replace("dynamics = interval", "dynamics = blob"), 4, "unknown dynamics"),
    ("name demo\n", 1, "key = value"),
])
def test_errors_carry_line_numbers(text, line, fragment):
    with pytest.raises(ConfigError) as info:
        parse_problem(text, "demo.prob")
    assert info.value.line == line
    assert fragment in str(info.value)
    assert "demo.prob" in str(info.value)


def test_missing_required_key():
    with pytest.raises(ConfigError, match="missing required key 'phi'"):
        parse_problem(BASE.replace("phi = abs(x - 0.5)\n", ""))


def test_column_points_at_key():
    with pytest.raises(ConfigError) as info:
        parse_problem(BASE + "   bogus = 1\n")
    assert info.value.column == 4


def test_expression_functions_and_vectors():
    e = parse_expression("[max(x, 0, -1), clip(x, -0.5, 0.5), sign(x) * sqrt(abs(x))]", ["x"])
    out = e(x=np.array([-2.0, 0.25]))
    np.testing.assert_allclose(out[0], [0.0, 0.25])
    np.testing.assert_allclose(out[1], [-0.5, 0.25])
    np.testing.assert_allclose(out[2], [-np.sqrt(2), 0.5])
    assert evaluate_constant("2^3 + pi - pi") == 8.0
    assert evaluate_constant("[[1, 2], [3, 4]]") == [[1.0, 2.0], [3.0, 4.0]]
    with pytest.raises(ValueError):
        e()


@pytest.mark.parametrize("bad", ["x.real", "x[0]", "lambda: 1", "'s'", "x if x else 1", "abs(x, 1)", "x < 1",
                                 "True"])
def test_expression_whitelist(bad):
    with pytest.raises(ConfigError):
        parse_expression(bad, ["x"])


@settings(max_examples=50, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.1, 3))
def test_expression_arithmetic_matches_python(a, b, c):
    e = parse_expression("a * b - c ^ 2 / (1 + abs(a)) + exp(-c)", ["a", "b", "c"])
    expected = a * b - c ** 2 / (1 + abs(a)) + np.exp(-c)
    assert float(e(a=a, b=b, c=c)) == pytest.approx(expected, rel=1e-12, abs=1e-12)
