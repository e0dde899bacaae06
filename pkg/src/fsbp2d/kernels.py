"""Hot inner kernels of the multi-block right-hand side.

Time stepping dominates the runtime of convergence studies: every Runge-
Kutta stage applies two dense derivative operators per element and couples
neighbors through interface fluxes. The kernel exists twice with identical
semantics: a numba @njit version and a vectorized pure-numpy version. The
environment variable FSBP2D_BACKEND selects between "numba" and "numpy";
without it, numba is used when importable. benchmarks/bench_rhs.py compares
the two.

Kernel contract: du is overwritten with

    du[e] = -(a Dx + b Dy) u[e] + src[e]
            + P^{-1} [ Bx (a u - fx*) + By (b u - fy*) ]   on surface slots,

where the outer state of surface slot m is the matched neighbor value, or
bvals[e, m] at physical-boundary slots (prefilled with inflow data or the
inner state), and fx*, fy* are local Lax-Friedrichs fluxes.
"""

from __future__ import annotations

import os
import warnings

import numpy as np

_env = os.environ.get("FSBP2D_BACKEND", "").strip().lower()

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised via FSBP2D_BACKEND=numpy
    numba = None
    HAVE_NUMBA = False

if _env == "numpy":
    BACKEND = "numpy"
elif _env == "numba":
    if not HAVE_NUMBA:
        raise ImportError("FSBP2D_BACKEND=numba but numba is not importable")
    BACKEND = "numba"
elif _env:
    raise ValueError(f"unknown FSBP2D_BACKEND {_env!r}")
else:
    BACKEND = "numba" if HAVE_NUMBA else "numpy"
    if not HAVE_NUMBA:
        warnings.warn("numba unavailable, falling back to the numpy kernels")


def backend_name() -> str:
    return BACKEND


def rhs_numpy(u, du, class_of, Dx, Dy, Pinv, Bxd, Byd, ns,
              nbr_elem, nbr_slot, nrm, bvals, src, a, b, cmax):
    E, N = u.shape
    for c in range(Dx.shape[0]):
        idx = np.nonzero(class_of == c)[0]
        if len(idx):
            du[idx] = -(a * (u[idx] @ Dx[c].T) + b * (u[idx] @ Dy[c].T))
    du += src

    eidx = np.repeat(np.arange(E), ns)
    midx = np.tile(np.arange(ns), E)
    ui = u[eidx, midx]
    ne = nbr_elem.ravel()
    uo = np.where(ne >= 0, u[np.maximum(ne, 0), nbr_slot.ravel()], bvals.ravel())
    cls = class_of[eidx]
    nx = nrm[cls, midx, 0]
    ny = nrm[cls, midx, 1]
    fx = 0.5 * a * (ui + uo) - np.sign(nx) * (0.5 * cmax) * (uo - ui)
    fy = 0.5 * b * (ui + uo) - np.sign(ny) * (0.5 * cmax) * (uo - ui)
    sat = Pinv[cls, midx] * (
        Bxd[cls, midx] * (a * ui - fx) + Byd[cls, midx] * (b * ui - fy)
    )
    du[eidx, midx] += sat
    return du


def _rhs_loops(u, du, class_of, Dx, Dy, Pinv, Bxd, Byd, ns,
               nbr_elem, nbr_slot, nrm, bvals, src, a, b, cmax):
    E, N = u.shape
    for e in range(E):
        c = class_of[e]
        for i in range(N):
            acc = 0.0
            for j in range(N):
                acc += (a * Dx[c, i, j] + b * Dy[c, i, j]) * u[e, j]
            du[e, i] = -acc + src[e, i]
        for m in range(ns):
            ui = u[e, m]
            neb = nbr_elem[e, m]
            uo = bvals[e, m] if neb < 0 else u[neb, nbr_slot[e, m]]
            nx = nrm[c, m, 0]
            ny = nrm[c, m, 1]
            sx = 0.0 if nx == 0.0 else (1.0 if nx > 0.0 else -1.0)
            sy = 0.0 if ny == 0.0 else (1.0 if ny > 0.0 else -1.0)
            fx = 0.5 * a * (ui + uo) - sx * 0.5 * cmax * (uo - ui)
            fy = 0.5 * b * (ui + uo) - sy * 0.5 * cmax * (uo - ui)
            du[e, m] += Pinv[c, m] * (
                Bxd[c, m] * (a * ui - fx) + Byd[c, m] * (b * ui - fy)
            )
    return du


if HAVE_NUMBA:
    rhs_numba = numba.njit(cache=True)(_rhs_loops)
else:  # pragma: no cover
    rhs_numba = None


def rhs_kernel(backend: str | None = None):
    """Return the kernel for the requested (or default) backend."""
    name = backend or BACKEND
    if name == "numpy":
        return rhs_numpy
    if name == "numba":
        if rhs_numba is None:
            raise RuntimeError("numba backend requested but unavailable")
        return rhs_numba
    raise ValueError(f"unknown backend {name!r}")
