"""Select the path-integration backend.

The compiled extension is used when it imports; otherwise the pure-Python
twin.  ``MANYDELTA_BACKEND=python`` forces the fallback.
"""
import os

from . import _pykernels

python_kernels = _pykernels

if os.environ.get("MANYDELTA_BACKEND", "").lower() == "python":
    kernels = _pykernels
    compiled_kernels = None
else:
    try:
        from . import _kernels as compiled_kernels
    except ImportError:
        compiled_kernels = None
    kernels = compiled_kernels if compiled_kernels is not None else _pykernels

NAME = "compiled" if kernels is not _pykernels else "python"
