"""Build script: compiles the optional dense-kernel extension.

The package works without the extension (a numpy fallback is selected at
import time); set FEDDESK_SKIP_EXT=1 to force a pure-python build.
"""

import os

from setuptools import setup

ext_modules = []
if not os.environ.get("FEDDESK_SKIP_EXT"):
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "feddesk._kernels",
                    ["src/feddesk/_kernels.pyx"],
                    include_dirs=[numpy.get_include()],
                    # source-built for the local machine, so -march=native is
                    # safe; no -ffast-math (it would unfix the reduction order)
                    extra_compile_args=["-O3", "-march=native"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
