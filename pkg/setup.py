import os
import sys

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python install; ocshield._fallback is used
    cythonize = None

ext_modules = []
if cythonize is not None and not os.environ.get("OCSHIELD_PURE_PYTHON"):
    extra = ["-O3"] if sys.platform != "win32" else ["/O2"]
    ext_modules = cythonize(
        [
            Extension(
                "ocshield._core",
                ["src/ocshield/_core.pyx"],
                include_dirs=[np.get_include(), "src/ocshield"],
                extra_compile_args=extra,
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3", "boundscheck": False, "wraparound": False},
    )

setup(ext_modules=ext_modules)
