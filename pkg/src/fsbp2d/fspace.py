"""Function spaces built from analytically differentiable basis functions.

A function space is an ordered list of basis functions, each of which can be
evaluated together with its gradient (and Hessian, needed for derivative
wrappers) at arbitrary points. The quadrature exactness conditions require
spanning sets for all pairwise products and for the directional derivatives
of those products; both are generated here. Possible linear dependence in the
generated sets is tolerated and removed downstream by SVD compression.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class UnisolvencyError(ValueError):
    """Raised when a node set cannot resolve the function space."""


# ---------------------------------------------------------------------------
# basis function families
# ---------------------------------------------------------------------------

class BasisFunction:
    """Scalar function of (x, y) with analytic first and second derivatives.

    All evaluation methods are vectorized over numpy arrays ``x`` and ``y``
    of equal shape.
    """

    def value(self, x, y):
        raise NotImplementedError

    def grad(self, x, y):
        """Return (df/dx, df/dy)."""
        raise NotImplementedError

    def hess(self, x, y):
        """Return (fxx, fxy, fyy)."""
        raise NotImplementedError

    def directional_derivative(self, x, y, xi):
        gx, gy = self.grad(x, y)
        return xi[0] * gx + xi[1] * gy


@dataclass(frozen=True)
class Monomial(BasisFunction):
    """x**ax * y**ay."""

    ax: int
    ay: int

    def value(self, x, y):
        return x**self.ax * y**self.ay

    def grad(self, x, y):
        a, b = self.ax, self.ay
        gx = a * x ** (a - 1) * y**b if a >= 1 else np.zeros_like(x)
        gy = b * x**a * y ** (b - 1) if b >= 1 else np.zeros_like(x)
        return gx, gy

    def hess(self, x, y):
        a, b = self.ax, self.ay
        z = np.zeros_like(x)
        fxx = a * (a - 1) * x ** (a - 2) * y**b if a >= 2 else z
        fyy = b * (b - 1) * x**a * y ** (b - 2) if b >= 2 else z
        fxy = a * b * x ** (a - 1) * y ** (b - 1) if (a >= 1 and b >= 1) else z
        return fxx, fxy, fyy

    def __repr__(self):
        return f"x^{self.ax} y^{self.ay}"


@dataclass(frozen=True)
class TrigLinear(BasisFunction):
    """sin or cos of the linear form omega*(c1*x + c2*y)."""

    kind: str  # "sin" or "cos"
    omega: float
    c1: float
    c2: float

    def __post_init__(self):
        if self.kind not in ("sin", "cos"):
            raise ValueError(f"unknown trig kind {self.kind!r}")

    def _phase(self, x, y):
        return self.omega * (self.c1 * x + self.c2 * y)

    def value(self, x, y):
        p = self._phase(x, y)
        return np.sin(p) if self.kind == "sin" else np.cos(p)

    def grad(self, x, y):
        p = self._phase(x, y)
        d = self.omega * np.cos(p) if self.kind == "sin" else -self.omega * np.sin(p)
        return self.c1 * d, self.c2 * d

    def hess(self, x, y):
        w2 = self.omega**2
        d2 = -w2 * self.value(x, y)
        return self.c1**2 * d2, self.c1 * self.c2 * d2, self.c2**2 * d2

    def __repr__(self):
        return f"{self.kind}({self.omega:g}*({self.c1:g}x+{self.c2:g}y))"


@dataclass(frozen=True)
class GaussianRbf(BasisFunction):
    """exp(-|p - center|^2 / diameter^2)."""

    x0: float
    y0: float
    diameter: float

    def value(self, x, y):
        r2 = (x - self.x0) ** 2 + (y - self.y0) ** 2
        return np.exp(-r2 / self.diameter**2)

    def grad(self, x, y):
        f = self.value(x, y)
        c = -2.0 / self.diameter**2
        return c * (x - self.x0) * f, c * (y - self.y0) * f

    def hess(self, x, y):
        f = self.value(x, y)
        c = -2.0 / self.diameter**2
        dx, dy = x - self.x0, y - self.y0
        fxx = (c + c * c * dx * dx) * f
        fyy = (c + c * c * dy * dy) * f
        fxy = c * c * dx * dy * f
        return fxx, fxy, fyy

    def __repr__(self):
        return f"rbf(({self.x0:g},{self.y0:g}),d={self.diameter:g})"


@dataclass(frozen=True)
class Product(BasisFunction):
    """Pointwise product of two basis functions."""

    left: BasisFunction
    right: BasisFunction

    def value(self, x, y):
        return self.left.value(x, y) * self.right.value(x, y)

    def grad(self, x, y):
        f, g = self.left.value(x, y), self.right.value(x, y)
        fx, fy = self.left.grad(x, y)
        gx, gy = self.right.grad(x, y)
        return fx * g + f * gx, fy * g + f * gy

    def hess(self, x, y):
        f, g = self.left.value(x, y), self.right.value(x, y)
        fx, fy = self.left.grad(x, y)
        gx, gy = self.right.grad(x, y)
        fxx, fxy, fyy = self.left.hess(x, y)
        gxx, gxy, gyy = self.right.hess(x, y)
        hxx = fxx * g + 2.0 * fx * gx + f * gxx
        hyy = fyy * g + 2.0 * fy * gy + f * gyy
        hxy = fxy * g + fx * gy + fy * gx + f * gxy
        return hxx, hxy, hyy

    def __repr__(self):
        return f"({self.left!r})*({self.right!r})"


@dataclass(frozen=True)
class DirectionalDerivative(BasisFunction):
    """Directional derivative of a wrapped function along a unit vector.

    Used for the derivative spanning sets; the wrapped function is usually a
    Product. The gradient needs the wrapped function's Hessian.
    """

    inner: BasisFunction
    xi: tuple[float, float]

    def value(self, x, y):
        gx, gy = self.inner.grad(x, y)
        return self.xi[0] * gx + self.xi[1] * gy

    def grad(self, x, y):
        hxx, hxy, hyy = self.inner.hess(x, y)
        return (
            self.xi[0] * hxx + self.xi[1] * hxy,
            self.xi[0] * hxy + self.xi[1] * hyy,
        )

    def hess(self, x, y):
        raise NotImplementedError("third derivatives are not provided")

    def __repr__(self):
        return f"d/d{self.xi!r}[{self.inner!r}]"


# ---------------------------------------------------------------------------
# function spaces
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FunctionSpace:
    """Ordered basis of a finite-dimensional subspace of C^1."""

    basis: tuple[BasisFunction, ...]
    label: str
    params: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return len(self.basis)

    def constant_index(self):
        """Index of an exact constant basis function, or None."""
        for k, f in enumerate(self.basis):
            if isinstance(f, Monomial) and f.ax == 0 and f.ay == 0:
                return k
        return None


def eval_vandermonde(space: FunctionSpace, points: np.ndarray):
    """Evaluate basis values and both partial derivatives at the points.

    Parameters
    ----------
    points : (N, 2) array of node coordinates, N >= space.dim.

    Returns
    -------
    V, Vx, Vy : (N, K) arrays with V[n, k] = f_k(x_n) and the nodal values of
        the partial derivatives.

    Raises
    ------
    UnisolvencyError
        If V is numerically rank deficient (sigma_min < 1e-10 * sigma_max),
        which signals the caller to add nodes.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[1] != 2 or len(points) == 0:
        raise ValueError("points must be a nonempty (N, 2) array")
    if len(points) < space.dim:
        raise UnisolvencyError(
            f"need at least {space.dim} nodes, got {len(points)}"
        )
    x, y = points[:, 0], points[:, 1]
    V = np.column_stack([f.value(x, y) for f in space.basis])
    Vx = np.column_stack([f.grad(x, y)[0] for f in space.basis])
    Vy = np.column_stack([f.grad(x, y)[1] for f in space.basis])
    sv = np.linalg.svd(V, compute_uv=False)
    if sv[-1] < 1e-10 * sv[0]:
        raise UnisolvencyError(
            f"nodes not {space.label}-unisolvent (sigma ratio {sv[-1] / sv[0]:.2e})"
        )
    return V, Vx, Vy


def product_spanning_set(space: FunctionSpace) -> list[BasisFunction]:
    """All pairwise products f_i * f_j; spans the product space.

    The list has length K^2 and generally contains repeated or linearly
    dependent entries, which downstream SVD compression removes.
    """
    K = space.dim
    return [
        Product(space.basis[i], space.basis[j])
        for j in range(K)
        for i in range(K)
    ]


def derivative_spanning_set(space: FunctionSpace, xi) -> list[BasisFunction]:
    """Directional derivatives of all pairwise products along unit vector xi."""
    xi = np.asarray(xi, dtype=float)
    if abs(np.hypot(xi[0], xi[1]) - 1.0) > 1e-12:
        raise ValueError("xi must be a unit vector")
    return [
        DirectionalDerivative(p, (float(xi[0]), float(xi[1])))
        for p in product_spanning_set(space)
    ]


def constant_representation(space: FunctionSpace, points: np.ndarray):
    """Least-squares coefficients of the constant 1 in the basis.

    Returns (coefficients, residual). The residual must be small (<= 1e-10)
    for conservation; all builtin spaces contain the constant exactly.
    """
    points = np.asarray(points, dtype=float)
    x, y = points[:, 0], points[:, 1]
    V = np.column_stack([f.value(x, y) for f in space.basis])
    ones = np.ones(len(points))
    coef, *_ = np.linalg.lstsq(V, ones, rcond=None)
    resid = float(np.max(np.abs(V @ coef - ones)))
    return coef, resid


def translate_space(space: FunctionSpace, offset) -> FunctionSpace:
    """Re-express the space in coordinates shifted by ``offset``.

    The returned space spans { f(. + offset) : f in span(space) }. Monomial
    and trig-of-linear-form families are translation closed, so their basis
    is returned unchanged (the span is identical, verified numerically); RBF
    centers are shifted explicitly.

    Raises ValueError if the span is not translation closed.
    """
    ox, oy = float(offset[0]), float(offset[1])
    if ox == 0.0 and oy == 0.0:
        return space

    candidate = []
    for f in space.basis:
        if isinstance(f, GaussianRbf):
            candidate.append(GaussianRbf(f.x0 - ox, f.y0 - oy, f.diameter))
        else:
            candidate.append(f)

    # span check: translated originals vs candidate, on deterministic samples
    rng = np.random.default_rng(20230815)
    pts = rng.uniform(0.0, 1.0, size=(50, 2))
    x, y = pts[:, 0], pts[:, 1]
    T = np.column_stack([f.value(x + ox, y + oy) for f in space.basis])
    C = np.column_stack([f.value(x, y) for f in candidate])
    scale = max(np.max(np.abs(T)), 1.0)
    for A, B in ((C, T), (T, C)):
        coef, *_ = np.linalg.lstsq(A, B, rcond=None)
        if np.max(np.abs(A @ coef - B)) > 1e-9 * scale:
            raise ValueError(
                f"space {space.label!r} is not translation closed"
            )
    return FunctionSpace(tuple(candidate), space.label, dict(space.params))


# ---------------------------------------------------------------------------
# builtin spaces
# ---------------------------------------------------------------------------

def monomial_space(max_degree: int, label: str | None = None) -> FunctionSpace:
    """All monomials of total degree <= max_degree, degree-major order."""
    basis = [
        Monomial(d - k, k)
        for d in range(max_degree + 1)
        for k in range(d + 1)
    ]
    return FunctionSpace(
        tuple(basis), label or f"monomials<= {max_degree}", {"degree": max_degree}
    )


def poly_cubic() -> FunctionSpace:
    """Ten monomials of total degree <= 3."""
    space = monomial_space(3)
    return FunctionSpace(space.basis, "f1", {})


def trig_diagonal(omega: float) -> FunctionSpace:
    """{1, x, y, sin(omega*(x+y)), cos(omega*(x+y))}."""
    basis = (
        Monomial(0, 0),
        Monomial(1, 0),
        Monomial(0, 1),
        TrigLinear("sin", omega, 1.0, 1.0),
        TrigLinear("cos", omega, 1.0, 1.0),
    )
    return FunctionSpace(basis, "f2", {"omega": float(omega)})


def linear_plus_rbf(center=(1.0 / 3.0, 1.0 / 3.0), diameter=0.2) -> FunctionSpace:
    """{1, x, y, Gaussian RBF}."""
    basis = (
        Monomial(0, 0),
        Monomial(1, 0),
        Monomial(0, 1),
        GaussianRbf(float(center[0]), float(center[1]), float(diameter)),
    )
    return FunctionSpace(
        basis, "f3", {"center": (float(center[0]), float(center[1])),
                      "diameter": float(diameter)}
    )


def trig_tensor(omega: float) -> FunctionSpace:
    """{1, x, y} plus the four sin/cos tensor products in x and y."""
    sx = TrigLinear("sin", omega, 1.0, 0.0)
    cx = TrigLinear("cos", omega, 1.0, 0.0)
    sy = TrigLinear("sin", omega, 0.0, 1.0)
    cy = TrigLinear("cos", omega, 0.0, 1.0)
    basis = (
        Monomial(0, 0),
        Monomial(1, 0),
        Monomial(0, 1),
        Product(sx, sy),
        Product(cx, cy),
        Product(sx, cy),
        Product(cx, sy),
    )
    return FunctionSpace(basis, "f4", {"omega": float(omega)})


def space_from_config(name: str, **params) -> FunctionSpace:
    """Construct a builtin space by name with its parameters."""
    if name == "f1":
        return poly_cubic()
    if name == "f2":
        return trig_diagonal(params.get("omega", np.pi / 10.0))
    if name == "f3":
        return linear_plus_rbf(
            params.get("center", (1.0 / 3.0, 1.0 / 3.0)),
            params.get("diameter", 0.2),
        )
    if name == "f4":
        return trig_tensor(params.get("omega", 2.0 * np.pi))
    if name == "linear":
        return monomial_space(1, "linear")
    raise ValueError(f"unknown function space {name!r}")
