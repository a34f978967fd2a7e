"""Build script for the compiled primal-dual kernel.

The extension is optional: set CACHECAST_NO_EXT=1 to install the pure-Python
package only.  At import time the solver falls back to a numpy implementation
of the same kernel when the extension is absent.
"""

import os

from setuptools import setup

ext_modules = []
if not os.environ.get("CACHECAST_NO_EXT"):
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        "src/cachecast/_pdcore.pyx",
        compiler_directives={"language_level": "3"},
    )
    for ext in ext_modules:
        ext.include_dirs.append(numpy.get_include())
        ext.define_macros.append(("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION"))

setup(ext_modules=ext_modules)
