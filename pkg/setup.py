"""Build script for the optional compiled kernel core.

The extension is optional: when Cython or a C compiler is missing the
package installs without it and ``mdksim.kernels`` falls back to numpy.
"""
import sys

from setuptools import setup
from setuptools.command.build_ext import build_ext

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "mdksim._ckernels",
                ["src/mdksim/_ckernels.pyx"],
                include_dirs=[np.get_include()],
                # keep IEEE semantics: no fast-math, no FMA contraction
                extra_compile_args=["-O2", "-ffp-contract=off"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except Exception as exc:  # pragma: no cover - build environment dependent
    print(f"compiled kernels disabled: {exc}", file=sys.stderr)


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # pragma: no cover
            print(f"compiled kernels failed to build: {exc}", file=sys.stderr)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # pragma: no cover
            print(f"skipping {ext.name}: {exc}", file=sys.stderr)


setup(ext_modules=ext_modules, cmdclass={"build_ext": OptionalBuildExt})
