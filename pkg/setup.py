"""Build script for the optional compiled kernels.

The package works without the extension (a pure-numpy fallback is selected at
import time); building it just makes the hot paths -- the simplex-grid
divergence search and the batched smoothed forward pass -- much faster.
"""

from setuptools import Extension, setup

try:
    import numpy
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "attncert._kernels",
                sources=["src/attncert/_kernels.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                optional=True,
            )
        ],
        compiler_directives={"language_level": 3},
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
