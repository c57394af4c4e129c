import os
import subprocess
import sys

import numpy as np
import pytest

from ddrf import _accel

pytestmark = pytest.mark.skipif(not _accel.HAS_NUMBA, reason="numba not installed")


def test_im2col_backends_agree_exactly():
    rng = np.random.default_rng(0)
    xp = rng.standard_normal((2, 3, 11, 9))
    for stride in (1, 2):
        ho, wo = (11 - 3) // stride + 1, (9 - 3) // stride + 1
        a = _accel.im2col_numpy(xp, 3, stride, ho, wo)
        b = _accel.im2col_numba(xp, 3, stride, ho, wo)
        assert np.array_equal(a, b)


def test_col2im_backends_agree():
    rng = np.random.default_rng(1)
    cols = rng.standard_normal((2, 27, 49))
    a = _accel.col2im_numpy(cols, 3, 9, 9, 3, 1, 7, 7)
    b = _accel.col2im_numba(cols, 3, 9, 9, 3, 1, 7, 7)
    assert np.max(np.abs(a - b)) <= 1e-13


def test_correlate_backends_agree():
    rng = np.random.default_rng(2)
    xp, k = rng.random((40, 37)), rng.random((15, 15))
    assert np.max(np.abs(_accel.correlate_valid_numpy(xp, k) - _accel.correlate_valid_numba(xp, k))) <= 1e-12


def test_env_flag_selects_numpy():
    env = dict(os.environ, DDRF_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", "import ddrf; print(ddrf.BACKEND, ddrf.HAS_NUMBA)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["numpy", "False"]
