import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tubeflow.errors import EmptyCloud, NotBijective, SpecError
from tubeflow.families import circle, segment, sphere, torus
from tubeflow.penalty import (ConstantPenalty, DataCloud, DistancePenalty, PhaseShift, PinnedCoordinate,
                              VolumePenalty, Warp, WeightedPenalty, decompose, gradient_field, l2_gradient,
                              load_cloud, normality_defect, pairing, reparametrization_invariance)


def ring_cloud(n=64, radius=1.5):
    th = 2 * np.pi * np.arange(n) / n
    return DataCloud(radius * np.stack([np.cos(th), np.sin(th)], axis=1), np.full(n, 1.0 / n))


@pytest.mark.parametrize("m,expected,tol", [
    (circle(1.0, grid=256), 2 * np.pi, 1e-6),
    (circle(2.0, grid=256), 4 * np.pi, 1e-6),
    (torus(2.0, 0.5, grid=(128, 64)), 4 * np.pi ** 2, 1e-4),
    (segment(2.0), 2.0, 1e-12),
])
def test_volume_examples(m, expected, tol):
    assert abs(VolumePenalty()(m) - expected) < tol


def test_sample_functional_matches_the_closed_form_volume():
    c = circle()
    h = c.spacing[0]
    # central differences of a unit-speed circle have length sin(h) / h
    assert VolumePenalty().sample_value(c.samples(), c) == pytest.approx(2 * np.pi * np.sin(h) / h, rel=1e-13)


def test_distance_examples():
    c = circle()
    assert DistancePenalty(DataCloud([[2.0, 0.0]], None))(c) == pytest.approx(1.0, abs=1e-15)
    assert DistancePenalty(DataCloud([[1.0, 0.0]], None))(c) == pytest.approx(0.0, abs=1e-15)
    centre = DistancePenalty(DataCloud([[0.0, 0.0]], None)).evaluate(c)
    assert centre.value == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_array_equal(centre.tie_points, [0])
    assert centre.nearest[0] == 0


def test_cloud_validation():
    with pytest.raises(EmptyCloud):
        DataCloud(np.zeros((0, 2)), None)
    with pytest.raises(SpecError):
        DataCloud([[0.0, 1.0]], [0.0])
    with pytest.raises(SpecError):
        DistancePenalty(DataCloud([[0.0, 1.0, 2.0]], None))(circle())


def test_cloud_csv(tmp_path):
    p = tmp_path / "cloud.csv"
    p.write_text("x,y,weight\n1.5,0,2\n0,1.5,1\n")
    cloud = load_cloud(p, N=2)
    np.testing.assert_array_equal(cloud.weights, [2.0, 1.0])
    np.testing.assert_array_equal(cloud.points, [[1.5, 0.0], [0.0, 1.5]])
    q = tmp_path / "plain.csv"
    q.write_text("x,y\n1,2\n")
    np.testing.assert_array_equal(load_cloud(q).weights, [1.0])
    r = tmp_path / "headless.csv"
    r.write_text("1,2\n3,4\n")
    with pytest.raises(SpecError):
        load_cloud(r)
    e = tmp_path / "empty.csv"
    e.write_text("x,y\n")
    with pytest.raises(EmptyCloud):
        load_cloud(e)


def test_combination_coefficients_must_be_nonnegative():
    with pytest.raises(SpecError):
        WeightedPenalty([(-1.0, VolumePenalty())])
    both = VolumePenalty() + 2.0 * ConstantPenalty(1.0)
    assert both(circle()) == pytest.approx(2 * np.pi + 2.0)


def test_volume_gradient_is_the_outward_curvature_vector():
    c = circle(1.0, grid=256)
    g = l2_gradient(VolumePenalty(), c)
    assert normality_defect(g) < 1e-3
    assert np.linalg.norm(g.Z - c.samples(), axis=-1).max() < 1e-3


def test_distance_gradient_is_supported_at_the_nearest_node():
    c = circle(1.0, grid=64)
    g = l2_gradient(DistancePenalty(DataCloud([[2.0, 0.0]], None)), c)
    norms = np.linalg.norm(g.Z, axis=-1)
    assert np.all(norms[1:] == 0.0)
    # d/dphi |phi - x|^2 = 2 (phi - x) = (-2, 0), spread over the node weight
    np.testing.assert_allclose(g.Z[0], [-2.0 / c.spacing[0], 0.0], rtol=1e-6)


def test_constant_penalty_has_zero_gradient():
    g = l2_gradient(ConstantPenalty(3.0), circle(grid=32))
    assert np.all(g.Z == 0.0)
    assert normality_defect(g) == 0.0


def test_defect_of_a_tangential_field_is_one():
    c = circle(grid=64)
    X = c.samples()
    tangential = np.stack([-X[:, 1], X[:, 0]], axis=-1)
    assert abs(normality_defect(tangential, c) - 1.0) < 1e-12


@given(seed=st.integers(0, 2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_decomposition_reconstructs_the_field(seed):
    t = torus(grid=(8, 6))
    Z = np.random.default_rng(seed).normal(size=t.grid + (3,))
    tan, nor = decompose(Z, t.grid_jacobian())
    np.testing.assert_allclose(tan + nor, Z, atol=1e-12)
    assert np.abs(np.einsum("...nk,...n->...k", t.grid_jacobian(), nor)).max() < 1e-12


@given(seed=st.integers(0, 2**32 - 1))
@settings(max_examples=5, deadline=None)
def test_pairing_matches_the_directional_derivative(seed):
    c = circle(1.0, grid=256)
    rng = np.random.default_rng(seed)
    u = c.axis_nodes(0)
    # random smooth field: a few low Fourier modes per coordinate
    X = np.zeros((256, 2))
    for k in range(1, 4):
        X += rng.normal(size=2) * np.cos(k * u)[:, None] + rng.normal(size=2) * np.sin(k * u)[:, None]
    vol = VolumePenalty()
    g = l2_gradient(vol, c)
    eps = 1e-6
    dP = (vol.sample_value(c.samples() + eps * X, c) - vol.sample_value(c.samples() - eps * X, c)) / (2 * eps)
    assert pairing(g, X, c) == pytest.approx(dP, rel=1e-4)


def test_invariant_penalties_have_normal_gradients():
    c = circle(1.0, grid=256)
    h = c.spacing[0]
    for pen in (VolumePenalty(), DistancePenalty(ring_cloud()), ConstantPenalty(1.0)):
        gap = reparametrization_invariance(pen, c, Warp(0.5))
        assert gap < 10 * h * h
        assert normality_defect(l2_gradient(pen, c)) < 1e-2


def test_pinned_coordinate_is_not_normal():
    c = circle(1.0, grid=256)
    assert normality_defect(l2_gradient(PinnedCoordinate(), c)) > 0.5
    assert reparametrization_invariance(PinnedCoordinate(), c, Warp(0.5)) > 0.1


def test_distance_gradient_is_radial_away_from_ties():
    c = circle(1.0, grid=256)
    pen = DistancePenalty(ring_cloud())
    assert len(pen.evaluate(c).tie_points) == 0
    assert normality_defect(l2_gradient(pen, c)) < 1e-2


def test_reparametrization_examples():
    c = circle(1.0, grid=256)
    assert reparametrization_invariance(VolumePenalty(), c, PhaseShift([0.3])) < 1e-10
    assert reparametrization_invariance(VolumePenalty(), c, Warp(0.5)) < 1e-6
    assert reparametrization_invariance(VolumePenalty(), torus(), Warp(0.3, axis=1)) < 1e-6


def test_distance_gap_shrinks_like_the_squared_spacing():
    pen = DistancePenalty(ring_cloud())
    gaps = []
    for n in (128, 256, 512):
        c = circle(1.0, grid=n)
        gaps.append(reparametrization_invariance(pen, c, PhaseShift([0.5 * c.spacing[0]])))
    ratios = np.array(gaps[:-1]) / np.array(gaps[1:])
    assert np.all((3 <= ratios) & (ratios <= 5)), ratios


def test_non_bijective_warps_are_rejected():
    with pytest.raises(NotBijective):
        circle().reparametrize(Warp(1.0))
    with pytest.raises(NotBijective):
        segment().reparametrize(PhaseShift([0.1]))
    # a warp on a non-periodic axis fixes both ends
    s = segment().reparametrize(Warp(0.5))
    np.testing.assert_allclose(s.evaluate([[0.0], [1.0]]), segment().evaluate([[0.0], [1.0]]), atol=1e-15)


@pytest.mark.parametrize("m", [circle(grid=64), sphere(1.0, grid=(24, 12)), torus(grid=(24, 12))])
def test_exact_and_difference_gradients_agree(m):
    fd = l2_gradient(VolumePenalty(), m)
    exact = VolumePenalty().discrete_gradient(m)
    assert np.abs(fd.Z - exact.Z).max() <= 1e-6 * np.abs(exact.Z).max()


def test_sphere_volume_gradient_converges_away_from_the_poles():
    errs = []
    for grid in ((64, 32), (128, 64)):
        s = sphere(1.0, grid=grid)
        g = VolumePenalty().discrete_gradient(s)
        # mean curvature vector of the unit sphere: 2 x, relative to its length 2
        rel = np.linalg.norm(g.Z - 2 * s.samples(), axis=-1) / 2
        # the row next to each pole is excluded: the polar grid is singular there
        errs.append(rel[:, 1:-1].max())
    assert errs[1] < 1e-2
    assert errs[0] / errs[1] >= 1.8


def test_gradient_export_rows():
    c = circle(grid=16)
    g = l2_gradient(VolumePenalty(), c)
    rows = g.to_rows(c)
    assert rows.shape == (16, 1 + 2 + 2)
    np.testing.assert_allclose(rows[:, 3], g.tangential_norm)
    assert isinstance(gradient_field(g.Z, c).normal, np.ndarray)
