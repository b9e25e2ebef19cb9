"""Kernel backend selection.

The hot inner-loop kernels exist twice: a Cython extension
(fusemt.backend._ckernels) and a numpy fallback (pykernels). The
compiled module is preferred when importable; set FUSEMT_BACKEND=numpy
to force the fallback, FUSEMT_BACKEND=c to require the extension.
Everything above this module goes through `kernels`.
"""

import os

from fusemt.backend import pykernels

_requested = os.environ.get("FUSEMT_BACKEND", "").lower()

if _requested in ("", "c", "compiled"):
    try:
        from fusemt.backend import _ckernels as kernels
    except ImportError:
        if _requested:
            raise ImportError(
                "FUSEMT_BACKEND=c but the compiled kernel module is not built; "
                "reinstall with `pip install -e . --no-build-isolation`"
            )
        kernels = pykernels
elif _requested in ("numpy", "python", "py"):
    kernels = pykernels
else:
    raise ImportError(f"unknown FUSEMT_BACKEND value: {_requested!r}")

BACKEND_NAME = kernels.NAME
