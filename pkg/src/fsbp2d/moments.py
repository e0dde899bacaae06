"""High-precision moments of basis functions over domains and boundary parts.

The exactness right-hand sides of the quadrature systems need integrals that
are accurate to machine precision. Volume integrals use adaptive uniform
subdivision with a tensor Gauss rule per cell (Duffy-mapped on triangles,
polar-mapped on disks); boundary integrals use composite Gauss-Legendre along
the constant-speed parametrization. Refinement continues until two successive
levels agree to a relative tolerance.

Results are cached per (function, target, weight) because node-count
escalation repeatedly asks for the same moments.
"""

from __future__ import annotations

import numpy as np

from .geometry import Arc, BoundaryPart, Disk, Domain, Rectangle, Triangle

_RTOL = 1e-13
_MAX_LEVELS = 12
_GAUSS_N = 10

_cache: dict = {}


class MomentError(RuntimeError):
    """Raised when the adaptive rule fails to converge."""


def _gauss01(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def _triangle_grid(vertices, level):
    """Quadrature points/weights: 4**level congruent subtriangles, Duffy rule."""
    u, wu = _gauss01(_GAUSS_N)
    U, V = np.meshgrid(u, u, indexing="ij")
    WU, WV = np.meshgrid(wu, wu, indexing="ij")
    # Duffy map of the unit square onto the unit simplex
    r = (U * (1.0 - V)).ravel()
    s = (U * V).ravel()
    wref = (WU * WV * U).ravel()  # jacobian U; integrates the unit simplex

    n = 2**level
    v = np.asarray(vertices, dtype=float)
    e1, e2 = v[1] - v[0], v[2] - v[0]
    corners = []
    for i in range(n):
        for j in range(n - i):
            a = v[0] + (i / n) * e1 + (j / n) * e2
            corners.append((a, a + e1 / n, a + e2 / n))
            if i + j < n - 1:
                b = a + e1 / n + e2 / n
                corners.append((b, b - e1 / n, b - e2 / n))
    corners = np.asarray(corners)  # (T, 3, 2)
    A0 = corners[:, 0]
    E1 = corners[:, 1] - corners[:, 0]
    E2 = corners[:, 2] - corners[:, 0]
    pts = (
        A0[:, None, :]
        + r[None, :, None] * E1[:, None, :]
        + s[None, :, None] * E2[:, None, :]
    ).reshape(-1, 2)
    jac = np.abs(E1[:, 0] * E2[:, 1] - E1[:, 1] * E2[:, 0])
    wts = (jac[:, None] * wref[None, :]).reshape(-1)
    return pts, wts


def _rectangle_grid(lower, upper, level):
    u, wu = _gauss01(_GAUSS_N)
    n = 2**level
    edges = np.linspace(0.0, 1.0, n + 1)
    t = (edges[:-1, None] + np.diff(edges)[:, None] * u[None, :]).ravel()
    w = (np.diff(edges)[:, None] * wu[None, :]).ravel()
    x = lower[0] + (upper[0] - lower[0]) * t
    y = lower[1] + (upper[1] - lower[1]) * t
    wx = (upper[0] - lower[0]) * w
    wy = (upper[1] - lower[1]) * w
    X, Y = np.meshgrid(x, y, indexing="ij")
    W = np.outer(wx, wy)
    return np.stack([X.ravel(), Y.ravel()], axis=1), W.ravel()


def _disk_grid(center, radius, level):
    """Polar tensor rule: composite Gauss in radius and angle."""
    u, wu = _gauss01(_GAUSS_N)
    nr = 2**level
    nth = 4 * 2**level
    redges = np.linspace(0.0, radius, nr + 1)
    rho = (redges[:-1, None] + np.diff(redges)[:, None] * u[None, :]).ravel()
    wr = (np.diff(redges)[:, None] * wu[None, :]).ravel()
    tedges = np.linspace(0.0, 2.0 * np.pi, nth + 1)
    th = (tedges[:-1, None] + np.diff(tedges)[:, None] * u[None, :]).ravel()
    wt = (np.diff(tedges)[:, None] * wu[None, :]).ravel()
    R, T = np.meshgrid(rho, th, indexing="ij")
    W = np.outer(wr * rho, wt)
    x = center[0] + R * np.cos(T)
    y = center[1] + R * np.sin(T)
    return np.stack([x.ravel(), y.ravel()], axis=1), W.ravel()


def _volume_grid(domain: Domain, level: int):
    if isinstance(domain, Triangle):
        return _triangle_grid(domain.vertices, level)
    if isinstance(domain, Disk):
        return _disk_grid(domain.center, domain.radius, level)
    if isinstance(domain, Rectangle):
        return _rectangle_grid(domain.lower, domain.upper, level)
    raise TypeError(f"no volume rule for domain kind {domain.kind!r}")


def _part_grid(part: BoundaryPart, level: int):
    u, wu = _gauss01(_GAUSS_N)
    n = 2**level if not isinstance(part, Arc) else 4 * 2**level
    edges = np.linspace(0.0, 1.0, n + 1)
    t = (edges[:-1, None] + np.diff(edges)[:, None] * u[None, :]).ravel()
    w = (np.diff(edges)[:, None] * wu[None, :]).ravel() * part.arc_length
    return t, w


def _adaptive(grid_fn, eval_fn, what):
    prev = cur = None
    for level in range(_MAX_LEVELS + 1):
        cur = eval_fn(grid_fn(level))
        if prev is not None:
            err = np.abs(cur - prev)
            if np.all(err <= _RTOL * (1.0 + np.abs(cur))):
                return cur
        prev = cur
    raise MomentError(
        f"moment oracle failed for {what}: last estimates {prev!r} vs {cur!r}"
    )


def volume_moments(funcs, domain: Domain) -> np.ndarray:
    """Integrals of the functions over the domain, to ~1e-13 relative."""
    key = ("vol", tuple(funcs), domain)
    try:
        return _cache[key].copy()
    except (KeyError, TypeError):
        pass

    def ev(grid):
        pts, wts = grid
        x, y = pts[:, 0], pts[:, 1]
        return np.array([np.sum(wts * f.value(x, y)) for f in funcs])

    out = _adaptive(lambda lv: _volume_grid(domain, lv), ev,
                    f"volume on {domain.kind}")
    try:
        _cache[key] = out.copy()
    except TypeError:
        pass
    return out


def surface_moments(funcs, part: BoundaryPart, weight: str | None = None
                    ) -> np.ndarray:
    """Integrals of f * (weight of normal) along the part.

    weight is None for plain arc-length integration, or "nx"/"ny" to include
    the corresponding component of the outward unit normal.
    """
    if weight not in (None, "nx", "ny"):
        raise ValueError(f"unknown weight {weight!r}")
    key = ("surf", tuple(funcs), part, weight)
    try:
        return _cache[key].copy()
    except (KeyError, TypeError):
        pass

    def ev(grid):
        t, w = grid
        pts = part.point(t)
        x, y = pts[:, 0], pts[:, 1]
        if weight is None:
            factor = w
        else:
            n = part.normal(t)
            factor = w * (n[:, 0] if weight == "nx" else n[:, 1])
        return np.array([np.sum(factor * f.value(x, y)) for f in funcs])

    out = _adaptive(lambda lv: _part_grid(part, lv), ev,
                    f"surface part (len {part.arc_length:.3g})")
    try:
        _cache[key] = out.copy()
    except TypeError:
        pass
    return out


def boundary_moments(funcs, domain: Domain, weight: str) -> np.ndarray:
    """Closed-boundary integrals: sum of the per-part weighted moments."""
    total = np.zeros(len(funcs))
    for part in domain.parts:
        total += surface_moments(funcs, part, weight)
    return total
