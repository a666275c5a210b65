"""Build hook for the optional compiled kernel core.

The package is pure Python plus one Cython extension holding the hot
kernels (column model right-hand sides, Jacobians, surrogate evaluation,
section chain solves).  If the extension cannot be built the package
still installs and falls back to the numpy reference kernels at import
time (see colnmpc.kernels).
"""

from setuptools import setup
from setuptools.extension import Extension

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize

    ext = Extension(
        "colnmpc.kernels._fast",
        ["src/colnmpc/kernels/_fast.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        optional=True,
    )
    ext_modules = cythonize([ext], language_level=3)
except ImportError:
    # No Cython available: install without the compiled core.
    ext_modules = []

setup(ext_modules=ext_modules)
