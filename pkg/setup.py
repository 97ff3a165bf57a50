"""Build hooks for the optional compiled word kernel.

The package is pure Python except for evmsleuth.words._native, a Cython twin
of evmsleuth.words._pure. The build degrades gracefully: if Cython or a C
toolchain is missing, the extension is skipped and the import-time backend
selection falls back to the pure module.
"""

from setuptools import setup
from setuptools.command.build_ext import build_ext


def _extensions():
    try:
        from Cython.Build import cythonize
    except ImportError:
        return []
    from setuptools import Extension

    ext = Extension(
        "evmsleuth.words._native",
        sources=["src/evmsleuth/words/_native.pyx"],
    )
    return cythonize([ext], language_level=3)


class optional_build_ext(build_ext):
    """Never fail the install over the speedup module."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # noqa: BLE001 - any compiler failure is fine
            print(f"warning: skipping compiled kernel ({exc}); using pure backend")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # noqa: BLE001
            print(f"warning: skipping {ext.name} ({exc}); using pure backend")


setup(
    ext_modules=_extensions(),
    cmdclass={"build_ext": optional_build_ext},
)
