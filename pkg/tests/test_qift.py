import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tubeflow.errors import NoValidDelta, OutsideCertifiedBox, OutsideTube, SingularMatrix, SpecError
from tubeflow.families import circle, segment, torus
from tubeflow.qift import (ImplicitProblem, TubeAnalysis, _box_samples, _contraction_sup, adjugate_inverse,
                          entry_norm, qift_constants, qift_solve, safe_flow_time, safe_radius_delta,
                          tube_constants_at)

BASELINE = json.loads((Path(__file__).parent / "data" / "circle_baseline.json").read_text())


def quadratic():
    return ImplicitProblem(lambda x, lam: x * x - lam, [1.0], [1.0],
                           dF_x=lambda x, lam: (2 * np.asarray(x))[..., None],
                           dF_lam=lambda x, lam: -np.ones(np.shape(lam) + (1,)))


def linear():
    return ImplicitProblem(lambda x, lam: x - lam, [0.0], [0.0])


def coupled():
    # F(x, lam) = (x0 + 0.2 x1^2 - lam0, x1 - 0.3 sin x0 - lam1), base at the origin
    def F(x, lam):
        x = np.asarray(x, dtype=float)
        return np.stack([x[..., 0] + 0.2 * x[..., 1] ** 2, x[..., 1] - 0.3 * np.sin(x[..., 0])], axis=-1) - lam

    return ImplicitProblem(F, [0.0, 0.0], [0.0, 0.0])


def test_adjugate_examples():
    np.testing.assert_array_equal(adjugate_inverse(np.eye(3)), np.eye(3))
    np.testing.assert_allclose(adjugate_inverse([[2.0, 0.0], [0.0, 4.0]]), [[0.5, 0.0], [0.0, 0.25]])
    with pytest.raises(SingularMatrix):
        adjugate_inverse([[1.0, 2.0], [2.0, 4.0]])


def test_adjugate_is_not_transposed():
    A = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_allclose(adjugate_inverse(A), [[-2.0, 1.0], [1.5, -0.5]], atol=1e-15)


@given(n=st.integers(1, 6), seed=st.integers(0, 2**32 - 1))
@settings(max_examples=60, deadline=None)
def test_adjugate_matches_dense_inverse(n, seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n, n)) + n * np.eye(n)
    if np.linalg.cond(A) > 1e3:
        return
    ref = np.linalg.inv(A)
    np.testing.assert_allclose(adjugate_inverse(A), ref, rtol=0, atol=1e-10 * np.abs(ref).max())


def test_random_unit_determinant_matrix():
    rng = np.random.default_rng(7)
    A = rng.normal(size=(4, 4))
    A /= abs(np.linalg.det(A)) ** 0.25
    np.testing.assert_allclose(A @ adjugate_inverse(A), np.eye(4), atol=1e-10)


def test_quadratic_constants_match_hand_values():
    c = qift_constants(quadratic())
    assert abs(c.M_norm - 0.5) < 1e-9
    assert abs(c.B_delta - 1.0) < 1e-9
    assert abs(c.delta - 0.5) < 1e-9
    assert abs(c.delta1 - 0.5) < 1e-9


def test_linear_problem_takes_the_largest_grid_value():
    c = qift_constants(linear(), search_grid=[0.1, 0.4, 2.0, 1.0])
    assert c.delta == 2.0
    assert c.delta1 == pytest.approx(1.0)
    assert qift_solve(linear(), c, [0.3])[0] == pytest.approx(0.3, abs=1e-15)


def test_no_valid_delta_on_a_bad_grid():
    with pytest.raises(NoValidDelta):
        qift_constants(quadratic(), search_grid=[0.9, 0.8])


def test_base_point_must_solve_the_problem():
    with pytest.raises(SpecError):
        ImplicitProblem(lambda x, lam: x * x - lam, [1.0], [2.0])


def test_solver_examples():
    p = quadratic()
    c = qift_constants(p)
    assert abs(qift_solve(p, c, [1.2])[0] - np.sqrt(1.2)) < 1e-10
    assert qift_solve(p, c, [1.0])[0] == 1.0
    with pytest.raises(OutsideCertifiedBox):
        qift_solve(p, c, [1.6])


@pytest.mark.parametrize("make", [quadratic, coupled])
def test_contraction_holds_on_a_fresh_sample(make):
    p = make()
    c = qift_constants(p)
    rng = np.random.default_rng(12345)
    base = np.concatenate([p.x0, p.lam0])
    Z = base + c.delta * rng.uniform(-1, 1, (1000, base.size))
    x, lam = Z[:, :p.m], Z[:, p.m:]
    D = np.eye(p.m) - np.linalg.inv(p.A0) @ p.dF_x(x, lam)
    assert entry_norm(D).max() <= 0.5 + 1e-9


@given(frac=st.floats(min_value=-0.999, max_value=0.999))
@settings(max_examples=40, deadline=None)
def test_solver_certificate(frac):
    p = coupled()
    c = qift_constants(p)
    lam = np.array([frac, -0.7 * frac]) * c.delta1
    x = qift_solve(p, c, lam)
    assert np.abs(x - p.x0).max() <= c.delta
    assert np.abs(p.F(x, lam)).max() < 1e-12


def test_unit_circle_point_constants_are_positive():
    d0, d1, d3, dp = tube_constants_at(circle(), None, [0.0], [0.0])
    assert d0 > 0 and d1 > 0 and d3 > 0
    assert dp == min(d0, d3)
    assert abs(abs(TubeAnalysis(circle()).constants_at([0.0], [0.0]).det_DE) - 1.0) < 1e-12


def test_radius_beyond_the_tube_is_rejected():
    with pytest.raises(OutsideTube):
        tube_constants_at(circle(), None, [0.0], [1.0])


def test_flat_segment_caps_delta0_at_the_domain_scale():
    an = TubeAnalysis(segment())
    assert an.K == 0.0
    assert np.all(an.G == 0.0)
    tc = an.safe_flow_time()
    assert tc.K_inv == np.inf
    np.testing.assert_allclose(tc.per_point["delta0"], segment().scale)
    assert tc.t_star == pytest.approx(tc.delta / 3)


def test_table_invariants_on_the_torus():
    tc = TubeAnalysis(torus(grid=(32, 16)), refine=False).safe_flow_time()
    pp = tc.per_point
    for key in ("delta0", "delta1", "delta3", "delta_point"):
        assert np.all(pp[key] > 0)
    assert np.all(pp["delta_point"] <= pp["delta0"])
    assert tc.t_star <= tc.epsilon
    assert tc.t_star <= 0.5


def test_circle_t_star_respects_the_curvature_cap():
    tc = safe_flow_time(circle())
    assert 0 < tc.t_star <= 1.0
    assert tc.t_star == tc.epsilon == min(tc.K_inv, tc.delta / 3)


def test_circle_delta_matches_the_frozen_baseline():
    delta = safe_radius_delta(circle(1.0, grid=256))
    assert delta == pytest.approx(float(BASELINE["delta"]), rel=1e-8)


def test_dilation_scales_every_point_constant():
    a = TubeAnalysis(circle()).safe_flow_time()
    b = TubeAnalysis(circle().dilate(2.0)).safe_flow_time()
    np.testing.assert_allclose(b.per_point["delta_point"] / a.per_point["delta_point"], 2.0, rtol=0.05)
    assert b.delta / a.delta == pytest.approx(2.0, rel=0.05)


def test_rotation_leaves_delta_unchanged():
    th = 1.3
    Q = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    a = safe_radius_delta(circle())
    b = safe_radius_delta(circle().rigid_motion(Q, [2.0, 5.0]))
    assert abs(b - a) / a < 1e-6


def test_generic_engine_agrees_with_the_tube_constants():
    an = TubeAnalysis(circle())
    problem = an.endpoint_problem([0.3], [0.0])
    generic = qift_constants(problem)
    tp = an.constants_at([0.3], [0.0])
    assert generic.M_norm == pytest.approx(tp.M, rel=1e-10)
    # the tube bound is a sufficient condition, so it can only be smaller
    assert generic.delta >= tp.delta0
    base = np.concatenate([problem.x0, problem.lam0])
    assert _contraction_sup(problem, generic.A0_inv, _box_samples(base, tp.delta0, 9)) <= 0.5
