from setuptools import Extension, setup

import numpy as np

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "surfvae.kernels._cykernels",
                ["src/surfvae/kernels/_cykernels.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    # No Cython: the package still works on the pure-numpy kernel backend.
    ext_modules = []

setup(ext_modules=ext_modules)
