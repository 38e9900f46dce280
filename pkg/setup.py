import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    USE_CYTHON = False
else:
    USE_CYTHON = True

if USE_CYTHON:
    extensions = cythonize(
        [Extension("eclab._kernels", ["src/eclab/_kernels.pyx"],
                   include_dirs=[np.get_include()],
                   extra_compile_args=["-O3"])],
        language_level="3",
    )
else:
    # Without Cython the package runs on the numpy fallback kernels.
    extensions = []

setup(ext_modules=extensions)
