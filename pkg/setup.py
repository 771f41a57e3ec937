"""Build script: compiles the optional Cython kernel extension.

Set SMOOTHCAL_NO_EXT=1 to skip the extension; the package then runs on the
pure-numpy kernels.
"""

import os

from setuptools import setup

ext_modules = []
if not os.environ.get("SMOOTHCAL_NO_EXT"):
    import numpy
    from Cython.Build import cythonize
    from setuptools.extension import Extension

    ext_modules = cythonize(
        [
            Extension(
                "smoothcal._kernels",
                ["src/smoothcal/_kernels.pyx"],
                include_dirs=[numpy.get_include(), "src/smoothcal"],
                extra_compile_args=["-O3", "-march=native", "-funroll-loops"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                depends=["src/smoothcal/_kernels_impl.h"],
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
