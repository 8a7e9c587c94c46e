import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python install, kernels fall back to numpy
    cythonize = None

ext_modules = []
if cythonize is not None and not os.environ.get("BDSFK_NO_EXT"):
    extensions = [
        Extension(
            "bdsfk._ckernels",
            ["src/bdsfk/_ckernels.pyx"],
            include_dirs=[np.get_include()],
            extra_compile_args=["-O3"],
        )
    ]
    ext_modules = cythonize(
        extensions,
        compiler_directives=dict(
            language_level=3, boundscheck=False, wraparound=False, cdivision=True
        ),
    )

setup(ext_modules=ext_modules)
