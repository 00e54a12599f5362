import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

# fp-contract off: keeps the compiled kernels bit-identical to the numpy fallback
extensions = [
    Extension(
        "rmlmc._kernels",
        ["src/rmlmc/_kernels.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3", "-ffp-contract=off"],
    )
]

setup(
    ext_modules=cythonize(extensions, compiler_directives={"language_level": "3"}),
)
