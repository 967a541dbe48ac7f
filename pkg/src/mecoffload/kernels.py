"""Hot per-interval kernels, compiled when available.

The Cython build (``_kernels``) is used if it imports; otherwise the
pure-Python twin in ``_kernels_py`` is loaded. Set ``MECOFFLOAD_PURE_PYTHON=1``
to force the fallback. Both backends give bit-identical results for the same
inputs and generator state.

``interval_physics`` returns per-user arrays:

``n_off`` / ``n_loc``
    whole tasks offloaded / computed locally this interval
``off_budget`` / ``loc_budget``
    bit budgets (``floor(tau * rate)`` and ``floor(tau * f / L)``)
``e_off`` / ``e_loc``
    energy charged for offloading (airtime at ``tx_power``) / local compute
``rate``, ``tx_power``, ``freq``
    uplink rate of selected users, their transmit power, local CPU frequency
``new_energy``
    energy after both charges and the standby draw
"""

import os

from . import _kernels_py

if os.environ.get("MECOFFLOAD_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:  # extension not built
        _impl = _kernels_py

BACKEND = _impl.BACKEND

max_feasible_power = _impl.max_feasible_power
local_frequency = _impl.local_frequency
local_compute_budget = _impl.local_compute_budget
path_gain = _impl.path_gain
uplink_rate = _impl.uplink_rate
poisson_knuth = _impl.poisson_knuth
poisson_batch = _impl.poisson_batch
interval_physics = _impl.interval_physics

__all__ = [
    "BACKEND", "max_feasible_power", "local_frequency", "local_compute_budget",
    "path_gain", "uplink_rate", "poisson_knuth", "poisson_batch", "interval_physics",
]
