"""Build script for the optional compiled kernel core.

The package works without the extension (a NumPy fallback is selected at
import time), so a missing Cython or C toolchain degrades to a pure build
instead of failing the install.
"""

from setuptools import setup

try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension

    extensions = cythonize(
        [
            Extension(
                "crossview._kernels._native",
                ["src/crossview/_kernels/_native.pyx"],
                include_dirs=[np.get_include()],
                # -ffp-contract=off keeps the C arithmetic bitwise identical
                # to the NumPy fallback (no fused multiply-add).
                extra_compile_args=["-O3", "-ffp-contract=off"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
