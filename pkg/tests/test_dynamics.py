import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from mayersens import dynamics as dy
from mayersens.exceptions import InvalidDynamicsError

A = np.array([[-0.2, -0.5], [0.5, -0.2]])


def ball_linear(radius=0.5):
    return dy.Ball(lambda X: X @ A.T, lambda X: np.full(len(X), radius), 2,
                   center_jac=lambda X: np.broadcast_to(A, (len(X), 2, 2)))


def square():
    V = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
    return dy.Polytope(lambda X: np.broadcast_to(V, (len(X),) + V.shape) + X[:, None, :] * 0.1, 2)


vec2 = st.tuples(st.floats(-3, 3), st.floats(-3, 3)).map(np.array)


def test_ball_support_matches_closed_form():
    F = ball_linear()
    x = np.array([0.3, -0.7])
    p = np.array([1.5, 2.0])
    ev = F.support(x, p)
    assert ev.value == pytest.approx(A @ x @ p + 0.5 * 2.5, abs=1e-12)
    assert ev.is_singleton
    np.testing.assert_allclose(ev.argmax_set[0], A @ x + 0.5 * p / 2.5, atol=1e-12)


def test_polytope_support_agrees_with_linear_program():
    F = square()
    rng = np.random.default_rng(3)
    for _ in range(20):
        x = rng.uniform(-1, 1, 2)
        p = rng.normal(size=2)
        V = F.body_samples(x)
        # maximize <sum w_i v_i, p> over the simplex
        res = linprog(-(V @ p), A_eq=np.ones((1, len(V))), b_eq=[1.0], bounds=[(0, None)] * len(V))
        assert F.support(x, p).value == pytest.approx(-res.fun, abs=1e-9)


def test_polytope_tie_returns_face():
    F = square()
    ev = F.support(np.zeros(2), np.array([1.0, 1.0]))
    assert not ev.is_singleton
    assert len(ev.argmax_set) == 2


def test_disk_body_support_resolution():
    F = dy.FixedBody.disk(2.0)
    for ang in np.linspace(0, 2 * np.pi, 13):
        p = np.array([np.cos(ang), np.sin(ang)]) * 3.0
        assert F.support(np.zeros(2), p).value == pytest.approx(6.0, abs=6.0 * 2e-6)


def test_interval_support_and_zero_covector():
    F = dy.Interval1D(lambda s: -1 - s ** 2, lambda s: 2 + s)
    assert F.support([1.0], [2.0]).value == pytest.approx(6.0)
    assert F.support([1.0], [-2.0]).value == pytest.approx(4.0)
    ev = F.support([1.0], [0.0])
    assert ev.value == 0.0 and not ev.is_singleton


def test_interval_rejects_crossed_bounds():
    F = dy.Interval1D(lambda s: np.ones_like(s), lambda s: np.zeros_like(s))
    with pytest.raises(InvalidDynamicsError):
        F.support([0.0], [1.0])


def test_ball_x_subgradient_matches_difference_quotients():
    F = ball_linear()
    x = np.array([0.2, 0.4])
    p = np.array([-1.0, 0.3])
    h = 1e-6
    fd = [(F.support(x + e, p).value - F.support(x - e, p).value) / (2 * h) for e in np.eye(2) * h]
    np.testing.assert_allclose(F.x_subgradient(x, p)[0], fd, atol=1e-7)
    np.testing.assert_allclose(F.x_subgradient(x, p)[0], A.T @ p, atol=1e-12)


def test_interval_kink_gives_one_sided_pair():
    F = dy.Interval1D(lambda s: -np.ones_like(s), lambda s: 1 - np.abs(s), kinks=(0.0,))
    G = F.x_subgradient([0.0], [2.0])
    np.testing.assert_allclose(np.sort(G[:, 0]), [-2.0, 2.0], atol=1e-6)


def test_midpoint_semiconvexity_concave_kink_diverges():
    bad = dy.Interval1D(lambda s: -np.ones_like(s), lambda s: 1 - np.abs(s))
    good = dy.Interval1D(lambda s: -np.ones_like(s), lambda s: 1 + np.abs(s))
    assert dy.check_midpoint_semiconvexity(bad, ([-1.0], [1.0])).diverges
    res = dy.check_midpoint_semiconvexity(good, ([-1.0], [1.0]))
    assert not res.diverges


def test_midpoint_constant_of_quadratic_interval():
    # H(x, 1) = 1 + x^2/4 has second difference h^2/2, so c = 1/2 at p = +-1
    F = dy.Interval1D(lambda s: -1 - s ** 2 / 4, lambda s: 1 + s ** 2 / 4)
    res = dy.check_midpoint_semiconvexity(F, ([-1.0], [1.0]))
    assert not res.diverges
    assert res.constant <= 1e-9


def test_r_convexity_of_disk():
    F = dy.FixedBody.disk(2.0)
    lo = dy.check_r_convexity(F, np.zeros(2), 1.0)
    hi = dy.check_r_convexity(F, np.zeros(2), 2.0)
    assert not lo.verdict and hi.verdict
    assert lo.agree and hi.agree


def test_quartic_body_is_not_r_convex():
    F = dy.FixedBody.quartic(1.0)
    assert dy.r_convexity_radius(F, np.zeros(2), R_max=1e3) == np.inf


def test_ball_radius_and_modulus_consistent():
    F = ball_linear()
    R = dy.r_convexity_radius(F, np.zeros(2))
    c = dy.h2_modulus(F, np.zeros(2))
    assert R == pytest.approx(0.5, rel=1e-3)
    assert 2 * R * c == pytest.approx(1.0, rel=0.1)


def test_singleton_body_is_vacuously_convex():
    F = dy.Ball(lambda X: np.zeros_like(X), lambda X: np.zeros(len(X)), 2, constant=True)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        assert dy.check_r_convexity(F, np.zeros(2), 1.0).vacuous


def test_audit_ball_linear():
    a = dy.audit_hypotheses(ball_linear(), ([-1, -1], [1, 1]))
    assert a.sh_ok and a.h1_ok and a.h2_ok
    assert a.r_convexity_radius == pytest.approx(0.5, rel=0.01)
    assert a.consistency_gap() < 0.1
    assert a.lipschitz_constant == pytest.approx(np.linalg.norm(A, 2), rel=0.05)


def test_audit_quartic_fails_h2():
    a = dy.audit_hypotheses(dy.FixedBody.quartic(1.0), ([-1, -1], [1, 1]), budget=4)
    assert not a.h2_ok
    assert a.partial


@settings(max_examples=40, deadline=None)
@given(vec2, vec2, vec2, st.floats(0.0, 5.0))
def test_hamiltonian_convex_and_homogeneous(x, p, q, lam):
    for F in (ball_linear(), square()):
        Hp = F.support(x, p).value
        assert F.support(x, lam * p).value == pytest.approx(lam * Hp, abs=1e-9 * (1 + abs(Hp) * lam))
        # subadditivity (convexity for a positively homogeneous function)
        assert F.support(x, p + q).value <= Hp + F.support(x, q).value + 1e-9


@settings(max_examples=40, deadline=None)
@given(vec2, vec2)
def test_samples_never_exceed_support(x, p):
    for F in (ball_linear(), square()):
        S = F.velocity_samples(x[None])[0]
        assert np.max(S @ p) <= F.support(x, p).value + 1e-9 * (1 + np.abs(p).sum())


def test_unannotated_kink_is_rejected():
    from mayersens.exceptions import SubgradientError
    F = dy.Interval1D(lambda s: -np.ones_like(s), lambda s: 1 - np.abs(s))
    with pytest.raises(SubgradientError):
        F.x_subgradient([0.0], [2.0])
    # away from the kink the difference quotient is used
    np.testing.assert_allclose(F.x_subgradient([0.3], [2.0]), [[-2.0]], atol=1e-6)
