import warnings

from setuptools import Extension, setup

# The compiled shortest-path kernels are optional: salsa2d.kernels falls back
# to the pure numpy/heapq implementations when the extension is absent.
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [Extension("salsa2d._speedups", ["src/salsa2d/_speedups.pyx"])],
        language_level=3,
    )
except ImportError:
    warnings.warn("Cython not available; installing without compiled kernels")
    ext_modules = []

setup(ext_modules=ext_modules)
