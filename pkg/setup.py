"""Build script: compiles the optional Cython kernel core.

The extension is a performance core only; if it cannot be built the package
installs anyway and falls back to the numpy kernels at import time.
"""
import os

from setuptools import setup
from setuptools.command.build_ext import build_ext
from setuptools.extension import Extension


class optional_build_ext(build_ext):
    """Swallow compiler failures so the pure-numpy install still works."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # noqa: BLE001 - any build failure is non-fatal
            print(f"warning: skipping compiled kernels ({exc}); "
                  "edgefield will use the numpy fallback")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # noqa: BLE001
            print(f"warning: failed to build {ext.name} ({exc}); "
                  "edgefield will use the numpy fallback")


ext_modules = []
if os.environ.get("EDGEFIELD_SKIP_EXT") != "1":
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "edgefield.kernels._gridcore",
                    ["src/edgefield/kernels/_gridcore.pyx"],
                    extra_compile_args=["-O3"],
                )
            ],
            language_level=3,
        )
    except ImportError:
        print("warning: Cython not available; edgefield will use the numpy fallback")

setup(ext_modules=ext_modules, cmdclass={"build_ext": optional_build_ext})
