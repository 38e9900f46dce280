"""Backend selection for the hot kernels.

The compiled extension ``eclab._kernels`` is used when it imports; otherwise,
or when the environment variable ``ECLAB_PURE_PYTHON`` is set to a non-empty
value other than ``0``, the numpy versions in ``eclab._fallback`` are used.
``BACKEND`` names the active choice.
"""
import os

from eclab import _fallback

_force_pure = os.environ.get("ECLAB_PURE_PYTHON", "") not in ("", "0")

if _force_pure:
    _impl = _fallback
    BACKEND = "python"
else:
    try:
        from eclab import _kernels as _impl
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _fallback
        BACKEND = "python"

lift_jacobian = _impl.lift_jacobian
newton_solve = _impl.newton_solve
orbit_series = _impl.orbit_series
eval_modes = _fallback.eval_modes


def get_backend(name):
    """Return the kernel module for ``"python"`` or ``"cython"``."""
    if name == "python":
        return _fallback
    if name == "cython":
        from eclab import _kernels
        return _kernels
    raise ValueError(f"unknown backend {name!r}")
