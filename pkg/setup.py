"""Builds the optional compiled SGD kernel.

If Cython or a C compiler is missing the package installs without it and
falls back to the NumPy kernel at import time.
"""
from setuptools import setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "fedmix._sgd",
                ["src/fedmix/_sgd.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except Exception as exc:  # noqa: BLE001
    print(f"fedmix: building without compiled kernel ({exc})")

setup(ext_modules=ext_modules)
