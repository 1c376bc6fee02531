import numpy as np
import pytest

from ifdd import kernels
from ifdd.kernels import _ref

from oracles import conv2d_naive

CASES = [(1, 1), (2, 1), (1, 2), (2, 2), (4, 2), (3, 1)]


def test_active_backend_reported():
    assert kernels.BACKEND in ("cython", "numpy")


@pytest.mark.parametrize("stride,dilation", CASES)
def test_ref_forward_matches_naive(rng, stride, dilation):
    x = rng.standard_normal((2, 7, 6, 3))
    w = rng.standard_normal((3, 3, 3, 4))
    assert np.allclose(_ref.conv2d_forward(x, w, stride, dilation), conv2d_naive(x, w, stride, dilation), atol=1e-12)


@pytest.mark.parametrize("stride,dilation", CASES)
def test_backends_agree(rng, stride, dilation):
    if kernels.BACKEND == "numpy":
        pytest.skip("compiled backend not built")
    cy = kernels.get_impl("cython")
    for dtype, tol in ((np.float64, 1e-12), (np.float32, 1e-4)):
        x = rng.standard_normal((2, 7, 6, 3)).astype(dtype)
        w = rng.standard_normal((3, 3, 3, 4)).astype(dtype)
        y_ref = _ref.conv2d_forward(x, w, stride, dilation)
        y_cy = cy.conv2d_forward(x, w, stride, dilation)
        assert y_cy.dtype == dtype
        assert np.allclose(y_ref, y_cy, atol=tol)
        gy = rng.standard_normal(y_ref.shape).astype(dtype)
        gx_r, gw_r = _ref.conv2d_backward(x, w, gy, stride, dilation)
        gx_c, gw_c = cy.conv2d_backward(x, w, gy, stride, dilation)
        assert np.allclose(gx_r, gx_c, atol=tol)
        assert np.allclose(gw_r, gw_c, atol=tol * 10)


def test_output_extent_is_ceil_div(rng):
    x = rng.standard_normal((1, 8, 5, 1))
    w = rng.standard_normal((3, 3, 1, 1))
    assert kernels.conv2d_forward(x, w, 4, 2).shape == (1, 2, 2, 1)
    assert kernels.conv2d_forward(x, w, 2, 1).shape == (1, 4, 3, 1)
