import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

extensions = []
if cythonize is not None:
    extensions = cythonize(
        [
            Extension(
                "ssmrl._scan",
                ["src/ssmrl/_scan.pyx"],
                include_dirs=[numpy.get_include()],
                # the float32 scans must round after every op: no FMA
                # contraction, no fast-math reassociation
                extra_compile_args=["-O2", "-ffp-contract=off"],
            )
        ],
        language_level="3str",
    )

setup(ext_modules=extensions)
