import os

# Pin BLAS to one thread before numpy loads anywhere: determinism contracts
# (bitwise-identical reruns) assume a single-threaded run.
for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(var, "1")

import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
