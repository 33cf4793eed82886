"""Builds the optional Cython dwell kernel.

The package works without the extension: feedlab._kernels falls back to the
pure-Python implementation when the compiled module is missing (or when
FEEDLAB_PURE_PYTHON=1). `python setup.py build_ext --inplace` rebuilds it
in a source checkout.
"""

from setuptools import setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        "src/feedlab/_kernels/_dwell_cy.pyx",
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
        },
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
