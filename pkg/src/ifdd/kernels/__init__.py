"""Convolution kernel backends.

The hot loops of training are the 3x3 convolution forward and backward
passes. A compiled Cython implementation is preferred when the extension
built; otherwise a pure-numpy implementation is used. Both expose the same
contract and agree to floating-point rounding.

Set IFDD_KERNEL_BACKEND=numpy or =cython to force a backend (forcing cython
without the extension installed is an error).
"""

import os

from . import _ref

_forced = os.environ.get("IFDD_KERNEL_BACKEND")

if _forced == "numpy":
    _impl = _ref
    BACKEND = "numpy"
else:
    try:
        from . import _convkernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        if _forced == "cython":
            raise ImportError(
                "IFDD_KERNEL_BACKEND=cython but the compiled extension is not "
                "available; build it with `python setup.py build_ext --inplace`"
            )
        _impl = _ref
        BACKEND = "numpy"


def conv2d_forward(x, w, stride=1, dilation=1):
    """3x3 conv of (T, H, W, Cin) with (3, 3, Cin, Cout); padding = dilation."""
    return _impl.conv2d_forward(x, w, int(stride), int(dilation))


def conv2d_backward(x, w, gy, stride=1, dilation=1, need_gx=True, need_gw=True):
    """Gradients (gx, gw) of conv2d_forward given upstream gy.

    Skipping an unneeded side (e.g. gx for the first layer, whose input is
    data) saves a large share of the backward cost.
    """
    return _impl.conv2d_backward(x, w, gy, int(stride), int(dilation),
                                 bool(need_gx), bool(need_gw))


def get_impl(name):
    """Return a backend module by name ('numpy' or 'cython'), for benchmarks."""
    if name == "numpy":
        return _ref
    if name == "cython":
        from . import _convkernels  # type: ignore[attr-defined]

        return _convkernels
    raise ValueError(f"unknown kernel backend {name!r}")
