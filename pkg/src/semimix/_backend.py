"""Kernel backend selection.

The EM inner loops exist twice: as numba-compiled scalar loops and as
vectorised numpy code.  Numba is used when it imports cleanly unless the
environment variable ``SEMIMIX_DISABLE_NUMBA`` is set to a truthy value.
"""

from __future__ import annotations

import os

_FLAG = os.environ.get("SEMIMIX_DISABLE_NUMBA", "").strip().lower()
_DISABLED = _FLAG not in ("", "0", "false", "no")

try:
    import numba  # noqa: F401

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not _DISABLED


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
