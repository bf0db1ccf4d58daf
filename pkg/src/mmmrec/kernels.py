"""Kernel dispatch: compiled extension when importable, numpy otherwise.

Set ``MMMREC_PURE_PYTHON=1`` before import to force the numpy path.
"""
import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if not os.environ.get("MMMREC_PURE_PYTHON"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"

THOMAS_FERMI_CONSTANT = _kernels_py.THOMAS_FERMI_CONSTANT

promolecular_fields = _impl.promolecular_fields
elf_kernel = _impl.elf_kernel
thomas_fermi = _impl.thomas_fermi
ddi_pair_counts = _impl.ddi_pair_counts


def implementations():
    """Available backends keyed by name, for benchmarks and cross-checks."""
    impls = {"python": _kernels_py}
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        impls["cython"] = _compiled
    return impls
