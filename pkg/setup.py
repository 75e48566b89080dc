"""Build script for the optional compiled convolution kernels.

The package is fully functional without the extension: mmkdda.backend
falls back to the numpy kernels when the import fails.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "mmkdda._convkernels",
                ["src/mmkdda/_convkernels.pyx"],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
