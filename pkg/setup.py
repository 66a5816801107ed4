import os

import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

openmp = [] if os.environ.get("MESHFIELD_NO_OPENMP") else ["-fopenmp"]

ext_modules = [
    Extension(
        "meshfield._kernels",
        ["src/meshfield/_kernels.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3"] + openmp,
        extra_link_args=openmp,
    )
]

setup(
    ext_modules=cythonize(
        ext_modules, compiler_directives={"language_level": "3"}
    ),
)
