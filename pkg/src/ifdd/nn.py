"""Parameter construction helpers shared by the model modules."""

import numpy as np

from .tensor import Tensor


def glorot(rng, shape, fan_in, fan_out, dtype=np.float64):
    """Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out))."""
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-a, a, size=shape).astype(dtype), requires_grad=True)


def dense(rng, n_in, n_out, dtype=np.float64):
    return glorot(rng, (n_in, n_out), n_in, n_out, dtype)


def conv_kernel(rng, c_in, c_out, dtype=np.float64):
    return glorot(rng, (3, 3, c_in, c_out), 9 * c_in, 9 * c_out, dtype)


def zeros(shape, dtype=np.float64):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def ones(shape, dtype=np.float64):
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)
