import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if os.environ.get("PRECODER_FORGE_PURE", "") not in ("1", "true", "yes"):
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "precoder_forge._ckernels",
                    ["src/precoder_forge/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
