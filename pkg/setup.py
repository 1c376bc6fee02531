"""Build script: compiles the optional Cython convolution kernels.

The package works without the extension (a numpy fallback is selected at
import time), so a missing compiler or Cython only costs speed. Set
IFDD_PURE=1 to skip the extension build entirely.
"""

import os

from setuptools import setup

ext_modules = []
if os.environ.get("IFDD_PURE") != "1":
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "ifdd.kernels._convkernels",
                    ["src/ifdd/kernels/_convkernels.pyx"],
                    include_dirs=[numpy.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            language_level=3,
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
