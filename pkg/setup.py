"""Builds the optional compiled loop kernel.

The package works without it (a pure-Python kernel is selected at import
time), so any failure here should not block installation.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "quantlqg._loop_cy",
                ["src/quantlqg/_loop_cy.pyx"],
                # -ffp-contract=off: the pure-Python kernel must produce
                # bit-identical trajectories, so FMA contraction is banned.
                extra_compile_args=["-O2", "-ffp-contract=off"],
            )
        ],
        language_level=3,
    )
except Exception as exc:  # pragma: no cover - exercised only without Cython
    print(f"quantlqg: compiled kernel skipped ({exc}); pure-Python fallback will be used")

setup(ext_modules=ext_modules)
