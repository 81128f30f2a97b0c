"""Build script for the optional compiled assembly kernel.

The package works without the extension (a numpy fallback is selected at
import time), so any build failure here is deliberately non-fatal.
"""

from setuptools import setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        ["src/adaptcdr/kernels/_core.pyx"],
        language_level=3,
    )
    include_dirs = [numpy.get_include()]
    for ext in ext_modules:
        ext.include_dirs = include_dirs
except Exception:
    ext_modules = []

setup(ext_modules=ext_modules)
