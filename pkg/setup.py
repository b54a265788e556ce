import os

import numpy
from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("UPREID_NO_EXT"):
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "upreid._mmd_ext",
                    ["src/upreid/_mmd_ext.pyx"],
                    include_dirs=[numpy.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules, zip_safe=False)
