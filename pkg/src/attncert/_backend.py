"""Selects the compiled kernels if present, else the numpy fallback.

Two operations dominate runtime: the simplex-lattice search behind the
brute-force divergence oracle, and the batched transformer forward pass
that every Monte-Carlo estimate and finite-difference attack step runs
thousands of times.  Both exist twice -- a Cython extension and a pure
numpy implementation with identical semantics -- and the extension is used
whenever it imported cleanly.  Set ``ATTNCERT_FORCE_PYTHON=1`` to insist on
the fallback (useful for benchmarking and for testing parity).
"""

from __future__ import annotations

import os

from . import _kernels_py

_FORCE_ENV = "ATTNCERT_FORCE_PYTHON"

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built; numpy path is fully functional
    _compiled = None


def get_kernels():
    """Return the active kernel namespace (compiled if available)."""
    if os.environ.get(_FORCE_ENV, "") not in ("", "0") or _compiled is None:
        return _kernels_py
    return _compiled


def backend_name() -> str:
    return get_kernels().BACKEND_NAME


def available_backends() -> dict:
    """Mapping of backend name to kernel namespace, for benchmarks/tests."""
    out = {"python": _kernels_py}
    if _compiled is not None:
        out["compiled"] = _compiled
    return out
