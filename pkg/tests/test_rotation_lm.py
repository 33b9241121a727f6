import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from angloc.lm import levenberg_marquardt, numeric_jacobian
from angloc.rotation import d_exp_so3, exp_so3, log_so3, random_rotation, rotation_angle, skew

vec3 = arrays(np.float64, 3, elements=st.floats(-3.0, 3.0))


@given(vec3)
def test_exp_is_rotation(w):
    R = exp_so3(w)
    assert np.allclose(R.T @ R, np.eye(3), atol=1e-12)
    assert np.linalg.det(R) == pytest.approx(1.0)


@given(vec3)
def test_log_inverts_exp(w):
    th = np.linalg.norm(w)
    if th >= math.pi - 1e-6:
        w = w * (math.pi - 1e-3) / th
    assert np.allclose(log_so3(exp_so3(w)), w, atol=1e-7)


def test_log_near_pi():
    axis = np.array([1.0, 2.0, -2.0]) / 3
    R = exp_so3(math.pi * axis)
    assert rotation_angle(exp_so3(log_so3(R)), R) < 1e-6


@given(vec3)
def test_derivative_matches_finite_differences(w):
    D = d_exp_so3(w)
    for i in range(3):
        e = np.zeros(3)
        e[i] = 1e-6
        num = (exp_so3(w + e) - exp_so3(w - e)) / 2e-6
        assert np.allclose(D[i], num, atol=1e-6)


def test_skew_is_cross_product(rng):
    a, b = rng.standard_normal(3), rng.standard_normal(3)
    assert np.allclose(skew(a) @ b, np.cross(a, b))


def test_random_rotation_uniform_trace(rng):
    # for Haar rotations E[trace] = 0
    tr = [np.trace(random_rotation(rng)) for _ in range(4000)]
    assert abs(np.mean(tr)) < 0.05


def test_lm_rosenbrock():
    res = levenberg_marquardt(lambda x: np.array([10 * (x[1] - x[0] ** 2), 1 - x[0]]),
                              lambda x: np.array([[-20 * x[0], 10.0], [-1.0, 0.0]]),
                              [-1.2, 1.0])
    assert res.converged
    assert np.allclose(res.x, [1.0, 1.0], atol=1e-6)


def test_lm_linear_least_squares(rng):
    A = rng.standard_normal((20, 4))
    b = rng.standard_normal(20)
    res = levenberg_marquardt(lambda x: A @ x - b, lambda x: A, np.zeros(4), ftol=1e-15)
    assert np.allclose(res.x, np.linalg.lstsq(A, b, rcond=None)[0], atol=1e-8)


def test_numeric_jacobian():
    f = lambda x: np.array([np.sin(x[0]) * x[1], x[1] ** 3])
    x = np.array([0.3, 1.7])
    assert np.allclose(numeric_jacobian(f, x), [[np.cos(0.3) * 1.7, np.sin(0.3)], [0, 3 * 1.7**2]], atol=1e-8)
