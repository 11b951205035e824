import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tubeflow.errors import DegenerateMetric, NotNormal, OutOfDomain, RankDeficient, SpecError
from tubeflow.families import circle, ellipse, from_spec, graph, sampled, segment, sphere, torus
from tubeflow.manifold import ChartedManifold, curvature_summary, fundamental_forms, max_curvature_K

angles = st.floats(min_value=-10.0, max_value=10.0, allow_nan=False)


def _rotation3(a, b, c):
    ca, sa, cb, sb, cc, sc = np.cos(a), np.sin(a), np.cos(b), np.sin(b), np.cos(c), np.sin(c)
    Rz = np.array([[ca, -sa, 0], [sa, ca, 0], [0, 0, 1]])
    Ry = np.array([[cb, 0, sb], [0, 1, 0], [-sb, 0, cb]])
    Rx = np.array([[1, 0, 0], [0, cc, -sc], [0, sc, cc]])
    return Rz @ Ry @ Rx


def test_evaluate_examples():
    c = circle()
    np.testing.assert_allclose(c.evaluate([0.0]), [1.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(c.evaluate([2 * np.pi]), [1.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(torus(2.0, 0.5).evaluate([0.0, 0.0]), [2.5, 0.0, 0.0], atol=1e-15)


def test_evaluate_rejects_points_outside_nonperiodic_axis():
    with pytest.raises(OutOfDomain):
        segment().evaluate([1.5])


@given(u=angles)
def test_periodic_axes_wrap(u):
    t = torus()
    a = t.evaluate([u, 0.3])
    b = t.evaluate([u + 2 * np.pi, 0.3 - 4 * np.pi])
    np.testing.assert_allclose(a, b, atol=1e-10)


def test_jacobian_examples():
    c = circle()
    np.testing.assert_allclose(c.jacobian([0.0])[:, 0], [0.0, 1.0], atol=1e-15)
    J = c.jacobian(c.grid_params())
    np.testing.assert_allclose(np.linalg.norm(J[..., 0], axis=-1), 1.0, atol=1e-14)


def test_sphere_equator_jacobian_has_orthogonal_unit_columns():
    s = sphere(1.0)
    u = [0.4, np.pi / 2]
    J = s.jacobian(u)
    np.testing.assert_allclose(J.T @ J, np.eye(2), atol=1e-14)
    # independent route: plain central differences of the closed form
    h = 1e-6
    fd = np.stack([(s.evaluate(np.add(u, e)) - s.evaluate(np.subtract(u, e))) / (2 * h)
                   for e in (np.array([h, 0.0]), np.array([0.0, h]))], axis=-1)
    np.testing.assert_allclose(J, fd, atol=1e-8)


def test_fundamental_forms_circle_orientations():
    c = circle()
    out = fundamental_forms(c, [0.0], [1.0, 0.0])
    np.testing.assert_allclose(out.g, [[1.0]], atol=1e-14)
    np.testing.assert_allclose(out.l, [[-1.0]], atol=1e-14)
    np.testing.assert_allclose(out.principal_curvatures, [-1.0], atol=1e-14)
    inward = fundamental_forms(c, [0.0], [-1.0, 0.0])
    np.testing.assert_allclose(inward.principal_curvatures, [1.0], atol=1e-14)


def test_fundamental_forms_sphere_against_difference_hessian():
    analytic = sphere(2.0)
    u = np.array([0.7, 1.1])
    v = -analytic.evaluate(u) / 2.0
    p = fundamental_forms(analytic, u, v).principal_curvatures
    np.testing.assert_allclose(p, [0.5, 0.5], atol=1e-12)
    # same chart with no derivative closures: both derivatives by differences
    plain = ChartedManifold(analytic._func, k=2, N=3, bounds=analytic.bounds, periodic=analytic.periodic,
                            grid=analytic.grid, placement=analytic.placement)
    assert plain.deriv_order == 0
    np.testing.assert_allclose(fundamental_forms(plain, u, v).principal_curvatures, [0.5, 0.5], atol=1e-4)


def test_fundamental_forms_preconditions():
    c = circle()
    with pytest.raises(NotNormal):
        fundamental_forms(c, [0.0], [0.0, 1.0])
    with pytest.raises(NotNormal):
        fundamental_forms(c, [0.0], [2.0, 0.0])
    s = sphere(1.0)
    with pytest.raises(DegenerateMetric):
        fundamental_forms(s, [0.3, 0.0], [1.0, 0.0, 0.0])


@given(u=angles, w=angles)
@settings(max_examples=30, deadline=None)
def test_principal_curvatures_flip_with_normal(u, w):
    t = torus()
    pt = np.array([u, w])
    J = t.jacobian(pt)
    n = np.cross(J[:, 0], J[:, 1])
    n /= np.linalg.norm(n)
    a = fundamental_forms(t, pt, n).principal_curvatures
    b = fundamental_forms(t, pt, -n).principal_curvatures
    np.testing.assert_allclose(np.sort(a), np.sort(-b), atol=1e-12)
    # closed-form torus curvatures, 1/r and cos v / (R + r cos v)
    ref = np.sort(np.abs([2.0, np.cos(w) / (2 + 0.5 * np.cos(w))]))
    np.testing.assert_allclose(np.sort(np.abs(a)), ref, atol=1e-10)


@pytest.mark.parametrize("make", [circle, sphere, torus, ellipse, segment])
def test_metric_is_the_jacobian_gram_matrix(make):
    m = make()
    J = m.grid_jacobian().reshape(-1, m.N, m.k)
    s = np.linalg.svd(J, compute_uv=False)
    assert np.all(s[:, -1] > 1e-10 * s[:, 0])
    u = m.flat_params()[len(J) // 3]
    Ju = m.jacobian(u)
    n = np.linalg.svd(Ju)[0][:, m.k]
    np.testing.assert_allclose(fundamental_forms(m, u, n).g, Ju.T @ Ju, rtol=0, atol=1e-15)


@pytest.mark.parametrize("make,expected,tol", [
    (circle, 1.0, 1e-6),
    (lambda: torus(2.0, 0.5), 2.0, 1e-3),
    (lambda: sphere(2.0), 0.5, 1e-4),
    (lambda: ellipse(2.0, 1.0), 2.0, 1e-4),
    (segment, 0.0, 0.0),
])
def test_max_curvature_examples(make, expected, tol):
    assert abs(max_curvature_K(make()) - expected) <= tol


def test_flat_manifold_reports_zero_curvature():
    assert max_curvature_K(graph("plane", bounds=((-1, 1), (-1, 1)), grid=(9, 9))) == 0.0
    assert max_curvature_K(segment()) >= 0.0


def test_paraboloid_curvature_peaks_at_the_vertex():
    m = graph("paraboloid", bounds=((-1, 1), (-1, 1)), grid=(21, 21))
    summary = curvature_summary(m)
    assert abs(summary.K - 2.0) < 1e-6
    np.testing.assert_allclose(summary.argmax_u, [0.0, 0.0], atol=0.1)


def test_codimension_two_curvature_is_orientation_free():
    # unit circle in the plane z = 0 of R^3: normal space is 2D, max is still 1
    c3 = circle(1.0, grid=128, N=3)
    assert abs(max_curvature_K(c3) - 1.0) < 1e-6


def test_torus_finite_differences_are_second_order():
    t = torus()
    U = t.grid_params()[::7, ::5].reshape(-1, 2)
    exact = t.jacobian(U)
    errs = []
    for h in (0.02, 0.01, 0.005):
        errs.append(np.abs(t._fd(t._func, U, h) - exact).max())
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert np.all((3.5 <= ratios) & (ratios <= 4.5)), ratios


@given(a=angles, b=angles, c=angles, shift=st.lists(st.floats(-5, 5), min_size=3, max_size=3))
@settings(max_examples=10, deadline=None)
def test_curvature_is_rigid_motion_invariant(a, b, c, shift):
    t = torus(grid=(64, 32))
    moved = t.rigid_motion(_rotation3(a, b, c), np.array(shift))
    assert abs(max_curvature_K(moved) - max_curvature_K(t)) < 1e-8


def test_dilation_scales_curvature():
    assert abs(max_curvature_K(circle().dilate(4.0)) - 0.25) < 1e-9


def test_rank_deficient_chart_is_rejected():
    # astroid: cusps at every quarter turn
    def f(U):
        return np.stack([np.cos(U[..., 0]) ** 3, np.sin(U[..., 0]) ** 3], axis=-1)

    def jac(U):
        c, s = np.cos(U[..., 0]), np.sin(U[..., 0])
        return np.stack([-3 * c * c * s, 3 * s * s * c], axis=-1)[..., None]

    with pytest.raises(RankDeficient):
        ChartedManifold(f, k=1, N=2, bounds=[(0, 2 * np.pi)], periodic=[True], grid=64, jac=jac)


def test_sampled_circle_tracks_the_closed_form():
    c = circle(grid=256)
    s = sampled(c.samples(), bounds=c.bounds, periodic=[True])
    assert abs(max_curvature_K(s) - 1.0) < 1e-3
    np.testing.assert_allclose(s.evaluate([0.123]), c.evaluate([0.123]), atol=1e-7)


def test_sampled_manifolds_reject_tiny_grids():
    with pytest.raises(SpecError):
        sampled(np.zeros((3, 2)), bounds=[(0, 1)], periodic=[False])


def test_spec_round_trip_and_grid_override():
    m = from_spec({"family": "torus", "params": {"R": 3.0, "r": 1.0}, "grid": [32, 16]}, grid=[48, 24])
    assert m.grid == (48, 24)
    assert abs(max_curvature_K(m) - 1.0) < 1e-3
    with pytest.raises(SpecError):
        from_spec({"family": "klein bottle"})


def test_polar_chart_closes_at_both_poles():
    s = sphere(1.0, grid=(16, 8))
    lo, hi = s.closure_maps()[1]
    ghost = s.evaluate(np.column_stack([s.axis_nodes(0), np.full(16, s.axis_nodes(1)[0])]))
    mirror = s.samples()[lo, 0]
    # the mirror of a node across the pole is the node half a turn away
    np.testing.assert_allclose(mirror, ghost[(np.arange(16) + 8) % 16], atol=1e-12)
    assert hi is not None
    assert torus().closure_maps() == ((None, None), (None, None))
