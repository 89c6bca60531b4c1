"""EM kernels, dispatched to numba or numpy per ``SEMIMIX_DISABLE_NUMBA``."""

from .._backend import USE_NUMBA, backend_name

if USE_NUMBA:
    from ._numba import em_count, em_gaussian, lr_batch_count, lr_batch_gaussian
else:
    from ._numpy import em_count, em_gaussian, lr_batch_count, lr_batch_gaussian

__all__ = [
    "backend_name",
    "em_count",
    "em_gaussian",
    "lr_batch_count",
    "lr_batch_gaussian",
]
