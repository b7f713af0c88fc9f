import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad, solve_ivp
from scipy.linalg import expm
from scipy.optimize import minimize_scalar

from mayersens import benchmarks as bm
from mayersens.hjb import GridSpec, Trajectory, check_admissible, solve_hjb
from mayersens.nonsmooth import proximal_supergradient_test
from mayersens.problem_file import parse_problem


def brute_1d(phi, x, tau, n=400_001):
    # unit-speed reachable set is [x - tau, x + tau]
    ys = np.linspace(x - tau, x + tau, n)
    return float(np.min(phi(ys[:, None])))


@pytest.mark.parametrize("name", ["eikonal1d", "two_ray", "flat_eikonal1d"])
@pytest.mark.parametrize("t,x", [(0.0, 1.7), (0.3, -0.4), (0.9, 0.05), (0.0, 0.0)])
def test_unit_speed_values_against_brute_force(name, t, x):
    b = bm.instance(name)
    # oracle error: grid spacing (~3.5e-6) times the Lipschitz constant of phi on [-2, 2]
    assert b.V(t, [x]) == pytest.approx(brute_1d(b.problem.phi, x, 1.0 - t), abs=2e-5)


def test_ball_value_against_expm_and_quadrature():
    b = bm.instance("ball_linear")
    A = bm.BALL_A
    rng = np.random.default_rng(5)
    for _ in range(10):
        t = rng.uniform(0, 1)
        x = rng.uniform(-1, 1, 2)
        tau = 1 - t
        c = expm(A * tau) @ x
        # reachable radius: r * int_0^tau ||exp(A s)|| ds
        rho = bm.BALL_RADIUS * quad(lambda s: np.linalg.norm(expm(A * s), 2), 0, tau)[0]
        d = np.linalg.norm(c - bm.BALL_TARGET)
        assert b.V(t, x) == pytest.approx(max(d - rho, 0) ** 2, abs=1e-10)


def test_quartic_velocity_minimizes_linear_cost():
    res = minimize_scalar(lambda s: (s + s ** 4) / np.sqrt(2), bounds=(-1, 0), method="bounded",
                          options={"xatol": 1e-12})
    assert bm.QUARTIC_VELOCITY[0] == pytest.approx(res.x, abs=1e-6)
    F = bm.instance("quartic_body").problem.F
    # the sampled body attains the same support value up to its boundary resolution
    h = F.support(np.zeros(2), -bm.QUARTIC_DIRECTION).value
    assert -h == pytest.approx(bm.QUARTIC_DIRECTION @ bm.QUARTIC_VELOCITY, abs=1e-7)


def test_interval_fg_value_against_ode():
    b = bm.instance("interval_fg")
    for t, x in [(0.0, 0.5), (0.4, -0.8), (0.9, 1.0)]:
        sol = solve_ivp(lambda s, y: -1 - y ** 2 / 4, (t, 1.0), [x], rtol=1e-12, atol=1e-12)
        assert b.V(t, [x]) == pytest.approx(sol.y[0, -1], abs=1e-9)


@pytest.mark.parametrize("name,t,x", [
    ("eikonal1d", 0.0, [2.0]), ("two_ray", 0.0, [0.5]), ("ball_linear", 0.0, [-0.5, 0.5]),
    ("quartic_body", 0.0, [0.0, 0.0]), ("interval_fg", 0.0, [0.5]), ("flat_eikonal1d", 0.5, [0.0]),
])
def test_closed_form_arcs_are_admissible_and_optimal(name, t, x):
    b = bm.instance(name)
    pair = b.optimal_pair(t, x, 400)
    # forward-difference velocities of a curved arc leave F(y) by O(step)
    assert check_admissible(b.problem.F, Trajectory(pair.t, pair.x)) <= 0.1 * pair.step
    assert b.problem.phi_values(pair.x[-1:])[0] == pytest.approx(b.V(t, x), abs=1e-9)
    # V is constant along an optimal arc
    vals = np.array([b.V(tk, xk) for tk, xk in zip(pair.t[::40], pair.x[::40])])
    np.testing.assert_allclose(vals, vals[0], atol=1e-9)


def test_closed_form_duals_satisfy_transversality():
    for name, t, x in [("eikonal1d", 0.0, [2.0]), ("ball_linear", 0.0, [-0.5, 0.5]), ("interval_fg", 0.0, [0.5]),
                       ("two_ray", 0.0, [0.5]), ("quartic_body", 0.0, [0.1, 0.2])]:
        b = bm.instance(name)
        pair = b.optimal_pair(t, x, 100)
        np.testing.assert_allclose(-pair.p[-1], b.problem.phi_gradient(pair.x[-1]), atol=1e-9)


def test_eikonal_dual_absent_at_kink():
    b = bm.instance("eikonal1d")
    assert np.isnan(b.optimal_pair(0.0, [0.5], 10).p).all()


def test_two_ray_branches_are_both_optimal():
    s = np.linspace(0, 1, 11)
    b = bm.instance("two_ray")
    ends = []
    for traj, dual in bm.two_ray_branches():
        X = traj(0.0, np.array([0.0]), s)
        ends.append(X[-1, 0])
        assert b.problem.phi_values(X[-1:])[0] == pytest.approx(b.V(0.0, [0.0]))
        # p = -grad phi(y(T)) = 2 y(T), constant along the ray
        np.testing.assert_allclose(dual(0.0, np.array([0.0]), s)[:, 0], 2 * X[-1, 0], atol=1e-12)
    assert sorted(ends) == [-1.0, 1.0]


def test_cone_variant_superdifferential():
    cv = bm.cone_variant()
    phi = cv.problem.phi_function()
    lo, hi = cv.superdifferential
    assert (lo, hi) == (0.5, 2.5)
    for q in (lo, 1.5, hi):
        assert proximal_supergradient_test(phi, [cv.endpoint], [q], 0.1).proximal
    for q in (0.2, 3.0):
        assert not proximal_supergradient_test(phi, [cv.endpoint], [q], 0.1).proximal


def test_registry_and_profiles():
    assert set(bm.NAMES) == {"eikonal1d", "two_ray", "ball_linear", "quartic_body", "interval_fg",
                             "flat_eikonal1d"}
    assert bm.instance("quartic_body").profile["H2"] is False
    with pytest.raises(KeyError):
        bm.problem_text("nope")


@pytest.mark.parametrize("name", bm.NAMES)
def test_registry_text_round_trips(name):
    d = parse_problem(bm.problem_text(name))
    b = bm.instance(name)
    assert d.problem.name == name
    np.testing.assert_array_equal(d.problem.lo, b.problem.lo)
    X = d.problem.lo + (d.problem.hi - d.problem.lo) * np.random.default_rng(0).random((20, b.dim))
    np.testing.assert_allclose(d.problem.phi_values(X), b.problem.phi_values(X))


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, 0.95), st.floats(-1.0, 1.0), st.floats(-1.0, 1.0))
def test_ball_value_semiconcave_and_nonnegative(t, a, c):
    b = bm.instance("ball_linear")
    x = np.array([a, c])
    v = b.V(t, x)
    assert v >= 0
    # second differences bounded above (semiconcavity with a moderate constant)
    h = np.array([1e-3, -2e-3])
    assert b.V(t, x + h) + b.V(t, x - h) - 2 * v <= 2.5 * (h @ h)


def _halved(n):
    return (n - 1) // 2 + 1


@pytest.mark.parametrize("name", bm.NAMES)
def test_solver_converges_to_closed_form(name):
    b = bm.instance(name)
    g = b.grid
    nx = _halved(g.nx) if isinstance(g.nx, int) else tuple(_halved(n) for n in g.nx)
    coarse = solve_hjb(b.problem, GridSpec(_halved(g.nt), nx, g.pad, g.directions)).sup_error(b.value)
    fine = solve_hjb(b.problem, g).sup_error(b.value)
    # quartic_body is exact up to the support resolution of the sampled body (~1e-8)
    assert np.log2(coarse / fine) >= 0.8 or max(coarse, fine) < 1e-7
