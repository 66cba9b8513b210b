"""Builds the optional compiled RNN kernels.

If the extension fails to compile the package still works through the
numpy fallback in ``multireward.policy._fallback``.
"""
import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("MULTIREWARD_NO_EXT"):
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "multireward.policy._kernels",
                    ["src/multireward/policy/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3", "-ffast-math"],
                    extra_link_args=["-lmvec"],
                )
            ],
            compiler_directives={"language_level": 3},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
