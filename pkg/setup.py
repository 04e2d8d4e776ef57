import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

ext_modules = []
if cythonize is not None:
    ext = Extension(
        "superproc._kernels._euler",
        ["src/superproc/_kernels/_euler.pyx"],
        include_dirs=[np.get_include()],
        # fp-contract off: no FMA fusion, keeps roundings identical to the
        # pure-python fallback kernel
        extra_compile_args=["-O3", "-ffp-contract=off"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    ext_modules = cythonize([ext], language_level="3")

setup(ext_modules=ext_modules)
