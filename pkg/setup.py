import os

import numpy
from setuptools import Extension, setup

# -O3 without -ffast-math: the exact identities (stacking, zero-level
# equivalence) rely on IEEE comparisons shared with the numpy fallback.
# The extension is optional: without it the package runs on the pure
# numpy backend selected in medianflow._backend.
ext_modules = []
_pyx = os.path.join("src", "medianflow", "_core.pyx")
if os.path.exists(_pyx):
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "medianflow._core",
                [_pyx],
                language="c++",
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3", "-std=c++11"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
