import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp

from mayersens import benchmarks, flow
from mayersens.exceptions import DichotomyError, DomainExitError, SubgradientError


@pytest.fixture(scope="module")
def ball():
    return benchmarks.instance("ball_linear")


def test_select_policies():
    G = np.array([[2.0, 0.0], [0.0, 2.0]])
    np.testing.assert_allclose(flow.select(G, "min_norm"), [1.0, 1.0], atol=1e-9)
    np.testing.assert_allclose(flow.select(G, "first"), [2.0, 0.0])
    np.testing.assert_allclose(flow.select(G, "last"), [0.0, 2.0])
    with pytest.raises(SubgradientError):
        flow.select(np.zeros((0, 2)), "first")
    with pytest.raises(ValueError):
        flow.select(G, "random")


def test_dichotomy_classification():
    assert flow.check_dichotomy(np.zeros((5, 2))) == "all_zero"
    assert flow.check_dichotomy(np.ones((5, 2))) == "never_zero"
    p = np.ones((5, 1))
    p[2] = 0.0
    with pytest.raises(DichotomyError):
        flow.check_dichotomy(p)


def test_characteristics_match_closed_form(ball):
    z = ball.optimal_pair(0.0, [-0.5, 0.5], 1000).x[-1]
    pair = flow.integrate_characteristics(ball.problem, z, 1000)
    ref = ball.optimal_pair(0.0, pair.x[0], 1000)
    np.testing.assert_allclose(pair.x, ref.x, atol=1e-9)
    np.testing.assert_allclose(pair.p, ref.p, atol=1e-9)


def test_characteristics_against_scipy(ball):
    # independent adaptive integrator on the smooth Hamiltonian system
    A = benchmarks.BALL_A
    r = benchmarks.BALL_RADIUS
    z = np.array([0.4, -0.2])
    pT = -ball.problem.phi_gradient(z)

    def rhs(s, y):
        x, p = y[:2], y[2:]
        return np.concatenate([A @ x + r * p / np.linalg.norm(p), -A.T @ p])

    sol = solve_ivp(rhs, (1.0, 0.0), np.concatenate([z, pT]), rtol=1e-11, atol=1e-12, dense_output=True)
    pair = flow.integrate_characteristics(ball.problem, z, 1000)
    ref = sol.sol(pair.t).T
    np.testing.assert_allclose(pair.x, ref[:, :2], atol=1e-8)
    np.testing.assert_allclose(pair.p, ref[:, 2:], atol=1e-8)


def test_maximum_principle_rejection_power(ball):
    pair = flow.integrate_characteristics(ball.problem, np.array([0.3, 0.1]), 1000)
    assert flow.maximum_principle_residual(pair, ball.problem).max <= 1e-6
    bad = flow.rotated_dual(pair)
    assert bad.info["corrupted"]
    assert flow.maximum_principle_residual(bad, ball.problem).max >= 0.1


def test_zero_terminal_gradient_gives_stationary_arc():
    b = benchmarks.instance("flat_eikonal1d")
    pair = flow.integrate_characteristics(b.problem, np.array([0.2]), 50)
    assert pair.stationary
    assert flow.check_dichotomy(pair.p) == "all_zero"
    np.testing.assert_array_equal(pair.x, 0.2)


def test_forward_matches_backward(ball):
    back = flow.integrate_characteristics(ball.problem, np.array([0.1, 0.6]), 400)
    fwd = flow.integrate_forward(ball.problem, 0.0, back.x[0], back.p[0], ts=back.t)
    np.testing.assert_allclose(fwd.x, back.x, atol=1e-10)
    np.testing.assert_allclose(fwd.p, back.p, atol=1e-10)
    with pytest.raises(DichotomyError):
        flow.integrate_forward(ball.problem, 0.0, back.x[0], np.zeros(2), steps=10)


def test_bounds_violation_raises(ball):
    with pytest.raises(DomainExitError):
        flow.integrate_characteristics(ball.problem, np.array([0.95, 0.0]), 100, bounds=([-0.5, -0.5], [0.5, 0.5]))


def test_solve_dual_terminal_on_cone_variant():
    cv = benchmarks.cone_variant(0.0, 0.5)
    s, X = cv.trajectory(1000)
    for q in (0.5, 1.7, 2.5):
        pair = flow.solve_dual_terminal(flow.ArcPair(s, X, np.zeros_like(X)), [q], cv.problem)
        np.testing.assert_allclose(pair.p, cv.dual(q, 1000), atol=1e-9)
        assert flow.maximum_principle_residual(pair, cv.problem).max <= 1e-4
    zero = flow.solve_dual_terminal(X, [0.0], cv.problem, t=s)
    assert zero.stationary


def test_forward_flow_stability_exponent(ball):
    pair = ball.optimal_pair(0.0, [-0.5, 0.5], 500)
    out = flow.forward_flow(ball.problem, 0.0, pair.x[0], pair, compare=pair.x[0] + 1e-3)
    # p is interpolated linearly at RK4 half steps: O(h^2) agreement
    np.testing.assert_allclose(out.x, pair.x, atol=1e-7)
    # y' = A y + r p/|p| is affine in y with contraction rate 0.2: no expansion
    assert out.info["stability_exponent"] <= 1e-6
    assert out.info["max_separation_ratio"] <= 1.0 + 1e-9


def test_gronwall_envelope(ball):
    pair = flow.integrate_characteristics(ball.problem, np.array([-0.3, 0.4]), 200)
    # |p(t)| = e^{-0.2 (T - t)} |p(T)| here, so any c_K >= 0 bounds it
    assert flow.gronwall_ratio(pair, 0.0) <= 1.0
    assert flow.gronwall_ratio(pair, np.linalg.norm(benchmarks.BALL_A, 2)) <= 1.0


def test_arc_csv_and_id(ball, tmp_path):
    pair = ball.optimal_pair(0.0, [0.0, 0.0], 10)
    text = pair.to_csv(tmp_path / "a.csv")
    assert text.splitlines()[0] == "t,x1,x2,p1,p2"
    assert len(text.splitlines()) == 12
    assert pair.arc_id == ball.optimal_pair(0.0, [0.0, 0.0], 10).arc_id
    assert pair.arc_id != ball.optimal_pair(0.0, [0.0, 0.1], 10).arc_id


def test_arc_recorder_sees_integrations(ball):
    with flow.record_arcs() as log:
        flow.integrate_characteristics(ball.problem, np.array([0.1, 0.1]), 20)
        ball.optimal_pair(0.0, [0.0, 0.0], 20)
    assert len(log) == 1 and log[0][0] is ball.problem


@settings(max_examples=15, deadline=None)
@given(st.floats(-0.9, 0.9), st.floats(-0.9, 0.9))
def test_characteristic_norm_identity(a, b):
    # for the rotating contraction, |p(t)| = e^{-0.2 (T - t)} |p(T)| exactly
    prob = benchmarks.instance("ball_linear").problem
    z = np.array([a, b])
    if np.linalg.norm(z - benchmarks.BALL_TARGET) < 1e-6:
        return
    pair = flow.integrate_characteristics(prob, z, 100)
    ratio = pair.dual_norms / pair.dual_norms[-1]
    np.testing.assert_allclose(ratio, np.exp(-benchmarks.BALL_DECAY * (1.0 - pair.t)), rtol=1e-9)
