"""Backend selection for the hot cell-model kernels.

The compiled extension ``battmpc._kernel`` is used when it imports cleanly;
otherwise the pure-Python twin in ``battmpc._kernel_py`` is used. Setting
``BATTMPC_PURE_PYTHON=1`` forces the fallback.
"""

import os

import numpy as np

from battmpc import _kernel_py

BACKEND = "python"
_impl = _kernel_py

if os.environ.get("BATTMPC_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from battmpc import _kernel as _compiled
    except ImportError:  # pragma: no cover - depends on build
        _compiled = None
    if _compiled is not None:
        _impl = _compiled
        BACKEND = "cython"

from battmpc._kernel_py import (  # noqa: E402
    COL_CF, COL_CN, COL_CP, COL_CR, COL_DF, COL_E, COL_I, COL_JSD, COL_PHIN,
    COL_PHIP, COL_V, DOMAIN, N_COLS, N_PARAMS, NONCONVERGENCE, OK, OVERCHARGE,
    OVERDISCHARGE,
)

__all__ = [
    "BACKEND", "available_backends", "get_backend", "pack_parameters", "ocv_tables",
    "COL_CF", "COL_CN", "COL_CP", "COL_CR", "COL_DF", "COL_E", "COL_I", "COL_JSD",
    "COL_PHIN", "COL_PHIP", "COL_V", "DOMAIN", "N_COLS", "NONCONVERGENCE", "OK",
    "OVERCHARGE", "OVERDISCHARGE",
]


def available_backends():
    names = ["python"]
    try:
        from battmpc import _kernel  # noqa: F401
    except ImportError:
        pass
    else:
        names.append("cython")
    return names


def get_backend(name=None):
    """Return the kernel module for ``name`` (default: the active backend)."""
    if name is None:
        return _impl
    if name == "python":
        return _kernel_py
    if name == "cython":
        from battmpc import _kernel

        return _kernel
    raise ValueError(f"unknown kernel backend {name!r}")


def pack_parameters(p):
    """Flatten a :class:`~battmpc.params.CellParameters` for the kernels."""
    v = np.empty(N_PARAMS)
    v[_kernel_py.P_F] = p.constants.F
    v[_kernel_py.P_R] = p.constants.R
    v[_kernel_py.P_T] = p.temperature
    v[_kernel_py.P_CE] = p.electrolyte_concentration
    for e, (D, R, K, CMAX, S) in (
        (p.neg, (_kernel_py.P_DN, _kernel_py.P_RN, _kernel_py.P_KN, _kernel_py.P_CNMAX, _kernel_py.P_SN)),
        (p.pos, (_kernel_py.P_DP, _kernel_py.P_RP, _kernel_py.P_KP, _kernel_py.P_CPMAX, _kernel_py.P_SP)),
    ):
        v[D] = e.diffusivity
        v[R] = e.radius
        v[K] = e.rate_constant
        v[CMAX] = e.max_concentration
        v[S] = e.area
    v[_kernel_py.P_I0SD] = p.side.exchange_current_density
    v[_kernel_py.P_UREF] = p.side.reference_potential
    v[_kernel_py.P_MSD] = p.side.molar_mass
    v[_kernel_py.P_RHOSD] = p.side.density
    v[_kernel_py.P_KAPPA] = p.side.conductivity
    v[_kernel_py.P_RSEI] = p.side.initial_resistance
    v[_kernel_py.P_QMAX] = p.capacity
    v[_kernel_py.P_EMAX] = p.energy
    v.setflags(write=False)
    return v


def ocv_tables(p, backend=None):
    """Backend-specific OCV evaluators for (negative, positive)."""
    mod = get_backend(backend)
    return tuple(mod.make_ocv(e.ocv.x, e.ocv.c) for e in (p.neg, p.pos))
