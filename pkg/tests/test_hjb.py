import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mayersens import dynamics as dy, hjb, kernels
from mayersens.exceptions import CFLError, DomainError, DomainExitError

unit = dy.Interval1D(lambda s: -np.ones_like(s), lambda s: np.ones_like(s))


def eikonal(phi=lambda X: np.abs(X[:, 0]), lo=-2.0, hi=2.0):
    return hjb.MayerProblem(unit, phi, 0.0, 1.0, [lo], [hi], name="eik")


def exact(t, x):
    return np.maximum(np.abs(x) - (1 - t), 0)


@pytest.fixture(scope="module")
def eik_field():
    return hjb.solve_hjb(eikonal(), hjb.GridSpec(201, 201))


@pytest.fixture
def both_backends():
    prev = kernels.get_backend()
    yield
    kernels.set_backend(prev)


# -- kernels ------------------------------------------------------------------

@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=3, max_size=3), st.integers(0, 10_000))
def test_multilinear_reproduces_affine_functions(coef, seed):
    rng = np.random.default_rng(seed)
    ax = [np.linspace(-1, 1, 7), np.linspace(0, 2, 5)]
    G = np.meshgrid(*ax, indexing="ij")
    vals = coef[0] + coef[1] * G[0] + coef[2] * G[1]
    pts = np.column_stack([rng.uniform(-1, 1, 50), rng.uniform(0, 2, 50)])
    out, clamped = kernels.interp_multilinear(vals, [-1, 0], [1 / 3, 0.5], pts)
    np.testing.assert_allclose(out, coef[0] + pts @ coef[1:], atol=1e-12)
    assert not clamped.any()


def test_interpolation_clamps_outside(both_backends):
    vals = np.arange(4.0)
    for b in ("numpy", "numba"):
        kernels.set_backend(b)
        out, cl = kernels.interp_multilinear(vals, [0.0], [1.0], np.array([[-1.0], [1.5], [9.0]]))
        np.testing.assert_allclose(out, [0.0, 1.5, 3.0])
        assert cl.tolist() == [True, False, True]


def test_backends_agree_bitwise(both_backends):
    rng = np.random.default_rng(1)
    vals = rng.normal(size=(9, 11))
    mask = (rng.random((9, 11)) < 0.1).astype(float)
    feet = rng.uniform(-0.2, 1.2, size=(40, 6, 2))
    res = {}
    for b in ("numpy", "numba"):
        kernels.set_backend(b)
        res[b] = (kernels.sl_min(vals, mask, [0, 0], [1 / 8, 1 / 10], feet),
                  kernels.interp_multilinear(vals, [0, 0], [1 / 8, 1 / 10], feet[:, 0]))
    (o1, a1, w1), (i1, c1) = res["numpy"]
    (o2, a2, w2), (i2, c2) = res["numba"]
    np.testing.assert_array_equal(o1, o2)
    np.testing.assert_array_equal(a1, a2)
    np.testing.assert_array_equal(w1, w2)
    np.testing.assert_array_equal(i1, i2)
    np.testing.assert_array_equal(c1, c2)


def test_sl_min_matches_brute_force():
    rng = np.random.default_rng(2)
    vals = rng.normal(size=(6, 6))
    feet = rng.uniform(0.05, 0.95, size=(10, 5, 2))
    out, arg, w = kernels.sl_min(vals, np.zeros_like(vals), [0, 0], [0.2, 0.2], feet)
    brute = np.array([kernels.interp_multilinear(vals, [0, 0], [0.2, 0.2], f)[0] for f in feet])
    np.testing.assert_allclose(out, brute.min(axis=1))
    np.testing.assert_array_equal(arg, brute.argmin(axis=1))
    np.testing.assert_array_equal(w, 0.0)


def test_backend_name_validation():
    with pytest.raises(ValueError):
        kernels.set_backend("cuda")


# -- solver -------------------------------------------------------------------

def test_eikonal_error_and_terminal_slice(eik_field):
    f = eik_field
    assert f.sup_error(lambda t, X: exact(t, X[:, 0])) <= 5e-2
    sl = f.user_slice()[0]
    np.testing.assert_allclose(f.values[-1][sl], np.abs(f.axes[0][sl]))
    assert f.meta["lookback"] == 4  # floor(h / (dt * speed))


def test_eikonal_first_order(eik_field):
    e1 = eik_field.sup_error(lambda t, X: exact(t, X[:, 0]))
    e2 = hjb.solve_hjb(eikonal(), hjb.GridSpec(401, 401)).sup_error(lambda t, X: exact(t, X[:, 0]))
    assert 0.35 <= e2 / e1 <= 0.65


def test_solution_in_user_box_is_untouched_by_padding(eik_field):
    assert not eik_field.affected[(slice(None),) + eik_field.user_slice()].any()
    assert eik_field.meta["pad"] >= 1.0


def test_cfl_rejection():
    with pytest.raises(CFLError):
        hjb.plan_grid(eikonal(), hjb.GridSpec(5, 401))


def test_explicit_small_pad_is_detected():
    # optimal motion is outward for -x^2, so clamped edge data would leak in
    with pytest.raises(DomainExitError):
        hjb.solve_hjb(eikonal(lambda X: -X[:, 0] ** 2), hjb.GridSpec(101, 101, pad=0.1))
    # for |x| optimal feet point inward: a thin pad is harmless
    hjb.solve_hjb(eikonal(), hjb.GridSpec(101, 101, pad=0.1))


def test_grid_needs_two_nodes():
    with pytest.raises(ValueError):
        hjb.GridSpec(1, 10).nodes(1)


def test_comparison_principle():
    f1 = hjb.solve_hjb(eikonal(lambda X: np.abs(X[:, 0])), hjb.GridSpec(101, 101))
    f2 = hjb.solve_hjb(eikonal(lambda X: np.abs(X[:, 0]) + 0.1 * X[:, 0] ** 2), hjb.GridSpec(101, 101))
    assert np.all(f1.values <= f2.values + 1e-12)


def test_two_ray_value_concave_profile():
    prob = eikonal(lambda X: -X[:, 0] ** 2, -1.5, 1.5)
    f = hjb.solve_hjb(prob, hjb.GridSpec(101, 301))
    err = f.sup_error(lambda t, X: -(np.abs(X[:, 0]) + 1 - t) ** 2)
    assert err < 0.05


def test_serialization_roundtrip(eik_field, tmp_path):
    f = eik_field
    data = f.to_bytes()
    g = hjb.ValueField.from_bytes(data)
    np.testing.assert_array_equal(g.values, f.values)
    np.testing.assert_array_equal(g.affected, f.affected)
    assert g.to_bytes() == data
    path = tmp_path / "v.csv"
    f.to_csv(path)
    h = hjb.ValueField.from_csv(path)
    np.testing.assert_array_equal(h.values, f.values)
    np.testing.assert_array_equal(h.t, f.t)
    with pytest.raises(ValueError):
        hjb.ValueField.from_bytes(b"nope" + data[4:])


def test_time_index_requires_mesh_time(eik_field):
    assert eik_field.time_index(0.5) == 100
    with pytest.raises(DomainError):
        eik_field.time_index(0.50123)


def test_budgets_are_positive_and_local(eik_field):
    f = eik_field
    glob = f.interpolation_error()
    # the kink line |x| = 1 - t drives the global budget; a smooth patch has none
    assert glob > 0
    assert f.interpolation_error((0.0, 0.1), np.array([0.0]), 0.2) == 0.0
    assert f.slope_error() >= glob


def test_viscosity_residual_small_off_kinks(eik_field):
    stats = hjb.viscosity_residual(eik_field, unit, count=300, seed=3)
    # exact away from the kink line; samples straddling it are bounded by the slope budget
    assert stats.quantiles["0.9"] < 1e-9
    assert stats.max <= eik_field.slope_error()
    assert stats.count > 100


def test_dpp_monotone_along_random_trajectories(eik_field):
    prob = eikonal()
    trs = hjb.random_admissible_trajectories(prob, 50, seed=4)
    rep = hjb.dpp_check(eik_field, unit, trs)
    assert rep.passed
    s = np.linspace(0, 1, 101)
    ray = hjb.Trajectory(s, (1.8 - s)[:, None], True, "ray")
    assert hjb.dpp_check(eik_field, unit, [ray]).passed
    # standing still is admissible but not optimal from 1.8
    idle = hjb.Trajectory(s, np.full((101, 1), 1.8), True, "idle")
    assert not hjb.dpp_check(eik_field, unit, [idle]).passed


def test_dpp_rejects_inadmissible(eik_field):
    s = np.linspace(0, 1, 11)
    fast = hjb.Trajectory(s, (3 * s - 1.5)[:, None])
    with pytest.raises(ValueError):
        hjb.dpp_check(eik_field, unit, [fast])


def test_synthesized_trajectory_is_optimal(eik_field):
    tr = hjb.synthesize_trajectory(eik_field, unit, 0.0, [1.8])
    assert tr.y[-1, 0] == pytest.approx(0.8, abs=1e-9)
    assert hjb.check_admissible(unit, tr) <= 1e-9


def test_planar_ball_value(solved):
    b, f = solved("ball_linear")
    assert f.sup_error(b.value) < 0.05


def test_terminal_gradient_fallback():
    prob = eikonal(lambda X: X[:, 0] ** 3)
    assert prob.terminal_gradient([0.5]) == pytest.approx([0.75], abs=1e-8)
    with pytest.raises(ValueError):
        prob.phi_gradient([0.5])
