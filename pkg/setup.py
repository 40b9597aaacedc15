"""Build script: compiles the RK4 stepping kernel when Cython and a C
compiler are available, otherwise installs pure-Python only (the package
falls back to a NumPy implementation at import time)."""
from setuptools import Extension, setup

ext_modules = []
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "gridfreq._rk4",
                ["src/gridfreq/_rk4.pyx"],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
