"""Reference domains, their piecewise-smooth boundaries, and node generation.

Supported domains are triangles (by vertices), disks, and axis-aligned
rectangles. Boundary parts are line segments or circular arcs, each carrying
an exact outward unit normal. Surface nodes are placed at midpoint-equidistant
parameters, which keeps them off the corners and makes shared mesh faces
reflection symmetric; interior nodes come from the Halton sequence restricted
to the domain.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


# ---------------------------------------------------------------------------
# boundary parts
# ---------------------------------------------------------------------------

class BoundaryPart:
    """Smooth boundary piece parametrized over t in [0, 1] at constant speed."""

    arc_length: float

    def point(self, t):
        raise NotImplementedError

    def normal(self, t):
        """Outward unit normal at parameter t (vectorized)."""
        raise NotImplementedError


@dataclass(frozen=True)
class Segment(BoundaryPart):
    """Straight boundary edge from p0 to p1 with a constant outward normal."""

    p0: tuple[float, float]
    p1: tuple[float, float]

    def __post_init__(self):
        dx = self.p1[0] - self.p0[0]
        dy = self.p1[1] - self.p0[1]
        length = float(np.hypot(dx, dy))
        if length == 0.0:
            raise ValueError("degenerate segment")
        object.__setattr__(self, "arc_length", length)
        # outward normal for a counterclockwise-oriented boundary
        object.__setattr__(self, "_normal", (dy / length, -dx / length))

    def point(self, t):
        t = np.asarray(t, dtype=float)
        x = self.p0[0] + t * (self.p1[0] - self.p0[0])
        y = self.p0[1] + t * (self.p1[1] - self.p0[1])
        return np.stack([x, y], axis=-1)

    def normal(self, t):
        t = np.asarray(t, dtype=float)
        n = np.empty(t.shape + (2,))
        n[..., 0] = self._normal[0]
        n[..., 1] = self._normal[1]
        return n


@dataclass(frozen=True)
class Arc(BoundaryPart):
    """Circular arc around ``center`` traversed counterclockwise."""

    center: tuple[float, float]
    radius: float
    theta0: float
    theta1: float

    def __post_init__(self):
        if self.radius <= 0 or self.theta1 <= self.theta0:
            raise ValueError("invalid arc")
        object.__setattr__(
            self, "arc_length", float(self.radius * (self.theta1 - self.theta0))
        )

    def _angle(self, t):
        return self.theta0 + np.asarray(t, dtype=float) * (self.theta1 - self.theta0)

    def point(self, t):
        a = self._angle(t)
        x = self.center[0] + self.radius * np.cos(a)
        y = self.center[1] + self.radius * np.sin(a)
        return np.stack([x, y], axis=-1)

    def normal(self, t):
        a = self._angle(t)
        return np.stack([np.cos(a), np.sin(a)], axis=-1)


# ---------------------------------------------------------------------------
# domains
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Domain:
    """Bounded reference domain with an analytic area and boundary parts."""

    kind: str
    parts: tuple[BoundaryPart, ...]
    area: float

    def bounding_box(self):
        raise NotImplementedError

    def diameter(self) -> float:
        (x0, y0), (x1, y1) = self.bounding_box()
        return float(np.hypot(x1 - x0, y1 - y0))

    def corners(self) -> np.ndarray:
        """Boundary-part junction points (empty for a full circle)."""
        pts = []
        for p in self.parts:
            pts.append(p.point(0.0))
            pts.append(p.point(1.0))
        pts = np.asarray(pts).reshape(-1, 2)
        # a closed single smooth part (full circle) has no corner
        if len(self.parts) == 1:
            return np.empty((0, 2))
        return pts

    def contains(self, points, margin_factor=1e-12) -> np.ndarray:
        raise NotImplementedError

    def perimeter(self) -> float:
        return float(sum(p.arc_length for p in self.parts))


@dataclass(frozen=True)
class Triangle(Domain):
    vertices: tuple = ()

    def bounding_box(self):
        v = np.asarray(self.vertices)
        return (v[:, 0].min(), v[:, 1].min()), (v[:, 0].max(), v[:, 1].max())

    def contains(self, points, margin_factor=1e-12):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        v = np.asarray(self.vertices)
        margin = margin_factor * self.diameter()
        inside = np.ones(len(points), dtype=bool)
        for i in range(3):
            a, b = v[i], v[(i + 1) % 3]
            e = b - a
            # signed distance to edge line, positive on the interior side (CCW)
            cross = e[0] * (points[:, 1] - a[1]) - e[1] * (points[:, 0] - a[0])
            inside &= cross / np.hypot(e[0], e[1]) > margin
        return inside


@dataclass(frozen=True)
class Disk(Domain):
    center: tuple[float, float] = (0.0, 0.0)
    radius: float = 1.0

    def bounding_box(self):
        cx, cy, r = self.center[0], self.center[1], self.radius
        return (cx - r, cy - r), (cx + r, cy + r)

    def contains(self, points, margin_factor=1e-12):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        margin = margin_factor * self.diameter()
        d = np.hypot(points[:, 0] - self.center[0], points[:, 1] - self.center[1])
        return d < self.radius - margin


@dataclass(frozen=True)
class Rectangle(Domain):
    lower: tuple[float, float] = (0.0, 0.0)
    upper: tuple[float, float] = (1.0, 1.0)

    def bounding_box(self):
        return self.lower, self.upper

    def contains(self, points, margin_factor=1e-12):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        margin = margin_factor * self.diameter()
        return (
            (points[:, 0] > self.lower[0] + margin)
            & (points[:, 0] < self.upper[0] - margin)
            & (points[:, 1] > self.lower[1] + margin)
            & (points[:, 1] < self.upper[1] - margin)
        )


def triangle(vertices) -> Triangle:
    """Triangle domain from three counterclockwise vertices."""
    v = np.asarray(vertices, dtype=float)
    if v.shape != (3, 2):
        raise ValueError("expected three 2D vertices")
    area = 0.5 * abs(
        (v[1, 0] - v[0, 0]) * (v[2, 1] - v[0, 1])
        - (v[2, 0] - v[0, 0]) * (v[1, 1] - v[0, 1])
    )
    signed = (v[1, 0] - v[0, 0]) * (v[2, 1] - v[0, 1]) - (v[2, 0] - v[0, 0]) * (
        v[1, 1] - v[0, 1]
    )
    if signed <= 0:
        raise ValueError("vertices must be counterclockwise")
    parts = tuple(
        Segment(tuple(v[i]), tuple(v[(i + 1) % 3])) for i in range(3)
    )
    return Triangle("triangle", parts, float(area), tuple(map(tuple, v)))


def unit_triangle() -> Triangle:
    """Right triangle with legs on the axes: 0 <= x, 0 <= y, x + y <= 1."""
    return triangle([(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)])


def disk(center=(0.5, 0.5), radius=0.5) -> Disk:
    part = Arc(tuple(map(float, center)), float(radius), 0.0, 2.0 * np.pi)
    return Disk(
        "disk", (part,), float(np.pi * radius**2), tuple(map(float, center)),
        float(radius),
    )


def rectangle(lower=(0.0, 0.0), upper=(1.0, 1.0)) -> Rectangle:
    (x0, y0), (x1, y1) = lower, upper
    if not (x1 > x0 and y1 > y0):
        raise ValueError("degenerate rectangle")
    parts = (
        Segment((x0, y0), (x1, y0)),
        Segment((x1, y0), (x1, y1)),
        Segment((x1, y1), (x0, y1)),
        Segment((x0, y1), (x0, y0)),
    )
    area = (x1 - x0) * (y1 - y0)
    return Rectangle(
        "rectangle", parts, float(area), (float(x0), float(y0)),
        (float(x1), float(y1)),
    )


def point_in_domain(domain: Domain, p) -> bool:
    """Strict interior test with a 1e-12 * diameter margin."""
    return bool(domain.contains(np.asarray(p, dtype=float).reshape(1, 2))[0])


# ---------------------------------------------------------------------------
# node generation
# ---------------------------------------------------------------------------

def equidistant_surface_nodes(part: BoundaryPart, m: int):
    """m nodes at midpoint parameters t_k = (k - 1/2)/m with exact normals.

    Midpoint placement excludes the part endpoints, so no node ever sits on a
    domain corner, and the node set is symmetric under reversal of the part,
    which face matching in multi-block meshes relies on.
    """
    if m < 1:
        raise ValueError("need at least one node per part")
    t = (np.arange(1, m + 1) - 0.5) / m
    return part.point(t), part.normal(t)


def _radical_inverse(i: int, base: int) -> float:
    f, r = 1.0, 0.0
    while i > 0:
        f /= base
        r += f * (i % base)
        i //= base
    return r


def halton_interior_nodes(domain: Domain, n: int, skip: int = 0) -> np.ndarray:
    """First n Halton points (bases 2, 3) strictly inside the domain.

    Points are generated in the domain's bounding box and filtered by the
    strict interior test; the sequence index starts at skip + 1, so results
    are reproducible bit for bit for fixed (n, skip) and successive n share
    a common prefix.
    """
    if n < 0:
        raise ValueError("n must be nonnegative")
    out = np.empty((n, 2))
    if n == 0:
        return out
    (x0, y0), (x1, y1) = domain.bounding_box()
    found, i = 0, skip
    while found < n:
        i += 1
        p = (
            x0 + (x1 - x0) * _radical_inverse(i, 2),
            y0 + (y1 - y0) * _radical_inverse(i, 3),
        )
        if point_in_domain(domain, p):
            out[found] = p
            found += 1
    return out


# ---------------------------------------------------------------------------
# node sets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NodeSet:
    """Surface nodes grouped by boundary part, plus interior nodes.

    The flat ordering used by all operator matrices is surface nodes first
    (parts in domain order), then interior nodes.
    """

    surface_points: tuple  # one (m_j, 2) array per part
    surface_normals: tuple  # one (m_j, 2) array per part
    interior: np.ndarray  # (n_i, 2)

    @property
    def n_surface(self) -> int:
        return int(sum(len(p) for p in self.surface_points))

    @property
    def n_total(self) -> int:
        return self.n_surface + len(self.interior)

    def all_points(self) -> np.ndarray:
        blocks = list(self.surface_points) + [self.interior.reshape(-1, 2)]
        return np.vstack(blocks)

    def all_surface_points(self) -> np.ndarray:
        return np.vstack([p.reshape(-1, 2) for p in self.surface_points])

    def all_surface_normals(self) -> np.ndarray:
        return np.vstack([p.reshape(-1, 2) for p in self.surface_normals])

    def part_slices(self):
        """Flat index slice of each part's surface nodes."""
        out, start = [], 0
        for p in self.surface_points:
            out.append(slice(start, start + len(p)))
            start += len(p)
        return out


def build_node_set(domain: Domain, nodes_per_part, n_interior: int,
                   skip: int = 0) -> NodeSet:
    """Generate and validate the node set for the given counts.

    nodes_per_part is either an int (same count on every part) or a sequence
    with one count per boundary part.
    """
    if isinstance(nodes_per_part, int):
        nodes_per_part = [nodes_per_part] * len(domain.parts)
    if len(nodes_per_part) != len(domain.parts):
        raise ValueError("one surface count per boundary part required")
    pts, nrm = [], []
    for part, m in zip(domain.parts, nodes_per_part):
        p, n = equidistant_surface_nodes(part, m)
        pts.append(p)
        nrm.append(n)
    interior = halton_interior_nodes(domain, n_interior, skip)
    ns = NodeSet(tuple(pts), tuple(nrm), interior)
    validate_node_set(domain, ns)
    return ns


def validate_node_set(domain: Domain, nodes: NodeSet):
    """Check corner clearance, strict interiority, and distinctness."""
    diam = domain.diameter()
    corners = domain.corners()
    if len(corners):
        surf = nodes.all_surface_points()
        d = np.min(
            np.hypot(
                surf[:, None, 0] - corners[None, :, 0],
                surf[:, None, 1] - corners[None, :, 1],
            )
        )
        if d < 1e-9 * diam:
            raise ValueError(f"surface node within {d:.2e} of a corner")
    if len(nodes.interior) and not np.all(domain.contains(nodes.interior)):
        raise ValueError("interior node outside the strict interior")
    for p in nodes.surface_points:
        if len(p) > 1:
            dists = np.hypot(
                p[:, None, 0] - p[None, :, 0], p[:, None, 1] - p[None, :, 1]
            )
            np.fill_diagonal(dists, np.inf)
            if dists.min() < 1e-12 * diam:
                raise ValueError("coincident surface nodes within a part")
