import math
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from recon import _kernels_py, kernels

try:
    from recon import _kernels as _kernels_c
except ImportError:  # extension not built
    _kernels_c = None

needs_ext = pytest.mark.skipif(_kernels_c is None, reason="compiled kernels not built")
BOUNDS = (0.0, 0.0, 10.0, 8.0)


def _obstacles(rng, n=6):
    return np.column_stack([rng.uniform(1, 9, n), rng.uniform(1, 7, n), rng.uniform(0.3, 1.0, n)])


@needs_ext
@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.5, 9.5), st.floats(0.5, 7.5), st.floats(-math.pi, math.pi))
def test_raycast_backends_agree(seed, x, y, theta):
    obs = _obstacles(np.random.default_rng(seed))
    a = _kernels_py.raycast(x, y, theta, 32, 10.0, obs, BOUNDS)
    b = _kernels_c.raycast(x, y, theta, 32, 10.0, obs, BOUNDS)
    np.testing.assert_allclose(a, b, atol=1e-12)


@needs_ext
@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.5, 9.5), st.floats(0.5, 7.5), st.floats(-2, 2), st.floats(-2, 2))
def test_sweep_backends_agree(seed, x, y, dx, dy):
    obs = _obstacles(np.random.default_rng(seed))
    a = _kernels_py.sweep(x, y, x + dx, y + dy, 0.25, obs, BOUNDS)
    b = _kernels_c.sweep(x, y, x + dx, y + dy, 0.25, obs, BOUNDS)
    assert a == pytest.approx(b, abs=1e-12)


@needs_ext
@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6))
def test_astar_backends_agree(seed):
    rng = np.random.default_rng(seed)
    free = (rng.random((20, 25)) > 0.3).astype(np.uint8)
    free[0, 0] = free[19, 24] = 1
    ca, pa = _kernels_py.grid_astar(free, 0, 0, 19, 24)
    cb, pb = _kernels_c.grid_astar(free, 0, 0, 19, 24)
    if math.isinf(ca):
        assert math.isinf(cb)
    else:
        # both backends break f ties by lowest cell index, so paths match exactly
        assert ca == cb
        np.testing.assert_array_equal(pa, pb)
        assert tuple(pa[0]) == (0, 0) and tuple(pa[-1]) == (19, 24)


@needs_ext
def test_cover_trace_backends_agree():
    rng = np.random.default_rng(3)
    free = (rng.random((80, 100)) > 0.1).astype(np.uint8)
    px, py = rng.uniform(0, 10, 40), rng.uniform(0, 8, 40)
    a = _kernels_py.cover_trace(px, py, 2.0, 0.0, 0.0, 0.1, free)
    b = _kernels_c.cover_trace(px, py, 2.0, 0.0, 0.0, 0.1, free)
    np.testing.assert_array_equal(a, b)


def test_astar_open_grid_is_octile_distance():
    free = np.ones((10, 10), dtype=np.uint8)
    cost, path = kernels.grid_astar(free, 0, 0, 3, 7)
    assert cost == pytest.approx(4 + 3 * math.sqrt(2))
    assert len(path) == 8


def test_astar_blocked_goal():
    free = np.ones((5, 5), dtype=np.uint8)
    free[:, 2] = 0
    cost, path = kernels.grid_astar(free, 0, 0, 4, 4)
    assert math.isinf(cost) and len(path) == 0


def test_pure_python_env_var_selects_fallback():
    env = dict(os.environ, RECON_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import recon; print(recon.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
