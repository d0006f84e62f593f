"""Build the optional Cython kernel module.

The extension is marked optional: if the C compiler or Cython is missing the
package still installs and ``gtnet.sparse`` falls back to the numpy kernels.

Developers can rebuild in place with::

    python3 setup.py build_ext --inplace
"""

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pragma: no cover - build without Cython
    cythonize = None

ext_modules = []
if cythonize is not None:
    extensions = [
        Extension(
            "gtnet.sparse._ckernels",
            ["src/gtnet/sparse/_ckernels.pyx"],
            include_dirs=[np.get_include()],
            extra_compile_args=["-O3"],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            optional=True,
        )
    ]
    ext_modules = cythonize(
        extensions,
        compiler_directives={
            "language_level": 3,
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "initializedcheck": False,
        },
    )

setup(ext_modules=ext_modules)
