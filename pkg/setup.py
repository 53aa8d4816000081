"""Build the optional compiled barrier kernel.

The package works without it: ``eonalloc.solver.kernels`` falls back to the
numpy/scipy implementation when the extension is missing.
"""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("EONALLOC_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "eonalloc.solver._lse_kernels",
                    ["src/eonalloc/solver/_lse_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
