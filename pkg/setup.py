"""Build script for the optional compiled kernels.

The package works without them: ``adapt_transfer._backend`` falls back to the
numpy implementation when ``adapt_transfer._ckernels`` cannot be imported.
"""
import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if os.environ.get("ADAPT_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize
    except ImportError:  # build the pure-Python package only
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "adapt_transfer._ckernels",
                    ["src/adapt_transfer/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                    libraries=["m"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
