import json
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tubeflow import _kernels

needs_numba = pytest.mark.skipif(not _kernels.NUMBA_AVAILABLE, reason="numba path disabled")


@needs_numba
@given(n=st.integers(1, 6), batch=st.integers(1, 20), seed=st.integers(0, 2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_adjugate_paths_agree(n, batch, seed):
    A = np.random.default_rng(seed).normal(size=(batch, n, n)) + n * np.eye(n)
    inv_a, det_a = _kernels._adjugate_inverse_numba(np.ascontiguousarray(A))
    inv_b, det_b = _kernels._adjugate_inverse_numpy(A)
    np.testing.assert_allclose(det_a, det_b, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(inv_a, inv_b, rtol=1e-10, atol=1e-10)


@needs_numba
@given(n=st.integers(2, 80), seed=st.integers(0, 2**32 - 1), thr=st.floats(0.01, 0.5))
@settings(max_examples=40, deadline=None)
def test_close_pair_paths_agree(n, seed, thr):
    rng = np.random.default_rng(seed)
    params = np.sort(rng.uniform(0, 2 * np.pi, n))[:, None]
    points = rng.uniform(-1, 1, (n, 2))
    periods = np.array([2 * np.pi])
    a = _kernels._close_pair_numba(points, params, periods, thr, 0.3)
    b = _kernels._close_pair_numpy(points, params, periods, thr, 0.3)
    assert a[:2] == b[:2]
    assert a[2] == pytest.approx(b[2]) or a[2] == b[2] == np.inf


def test_close_pair_finds_the_lemniscate_crossing():
    u = 2 * np.pi * np.arange(200) / 200
    s = np.sin(u)
    points = np.c_[np.cos(u), s * np.cos(u)] / (1 + s * s)[:, None]
    i, j, amb, par = _kernels.close_pair(points, u[:, None], np.array([2 * np.pi]), 0.05, 1.0)
    assert i >= 0 and amb < 0.05 and par > 1.0


def test_pure_numpy_path_matches(tmp_path):
    script = (
        "import json, numpy as np\n"
        "from tubeflow import NUMBA_AVAILABLE\n"
        "from tubeflow.families import circle\n"
        "from tubeflow.qift import safe_radius_delta\n"
        "print(json.dumps({'numba': NUMBA_AVAILABLE, 'delta': safe_radius_delta(circle(grid=64))}))\n")
    env = dict(os.environ, TUBEFLOW_DISABLE_NUMBA="1")
    res = subprocess.run([sys.executable, "-c", script], env=env, capture_output=True, text=True, check=True)
    out = json.loads(res.stdout.strip().splitlines()[-1])
    assert out["numba"] is False
    from tubeflow.families import circle
    from tubeflow.qift import safe_radius_delta

    assert out["delta"] == pytest.approx(safe_radius_delta(circle(grid=64)), rel=1e-10)
