"""Build hook for the optional compiled kernel.

``pip install -e . --no-build-isolation`` compiles ``idtsim._kernel``.  When
Cython or a C compiler is unavailable the package still installs and falls
back to ``idtsim._kernel_py`` at import time.
"""
import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("IDTSIM_NO_EXT"):
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "idtsim._kernel",
                    ["src/idtsim/_kernel.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                    optional=True,
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
