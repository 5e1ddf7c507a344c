"""Build script for the optional compiled kernel core.

The package is fully functional without the extension (a pure numpy
implementation is selected at import time), so any failure to build it
is non-fatal.
"""
import numpy
from setuptools import Extension, setup

ext_modules = []
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "fbmflow._ckernels",
                sources=["src/fbmflow/_ckernels.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "language_level": "3",
        },
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
