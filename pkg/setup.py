import os

import numpy
from setuptools import Extension, setup

ext_modules = []
if os.environ.get("RATERIRT_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "raterirt._ckernels",
                    ["src/raterirt/_ckernels.pyx"],
                    include_dirs=[numpy.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            language_level=3,
        )

setup(ext_modules=ext_modules)
