"""Build script for the optional compiled kernel extension.

The package works without the extension (a numpy fallback is selected at
import time), so a failed compile is not fatal: run with
``GAPENS_SKIP_EXT=1 pip install -e . --no-build-isolation`` to skip it.
"""

import os

from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("GAPENS_SKIP_EXT"):
    import numpy as np
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "gapens._kernels._ckernels",
                ["src/gapens/_kernels/_ckernels.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
