"""Builds the optional compiled kernels; the package falls back to pure Python without them."""
import os

import numpy as np
from setuptools import setup

ext_modules = []
if os.environ.get("SEQGROUND_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "seqground._ckernels",
                    ["src/seqground/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
