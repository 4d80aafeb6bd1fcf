import os

import numpy as np
from setuptools import setup

ext_modules = []
if os.environ.get("BVMEM_NO_BINARY", "0") not in ("1", "true", "True"):
    try:
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "bvmem._core",
                    sources=["src/bvmem/_core.pyx"],
                    include_dirs=[np.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    extra_compile_args=["-O3"],
                )
            ],
            language_level=3,
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
