import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("SQLEARN_NO_EXTENSION", "") in ("", "0"):
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:
        # the numpy fallback in sqlearn._pycore covers this case
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "sqlearn._core",
                    ["src/sqlearn/_core.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
