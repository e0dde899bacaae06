"""Multi-block geometry: structured triangulations and face matching.

A square domain is split into K^2 cells, each cut along the diagonal into a
lower and an upper triangle. The two orientations are separate congruence
classes; every element is a pure translation of its class's local domain, so
one operator per class serves the whole mesh. Shared faces must carry the
same quadrature nodes and weights on both sides for inter-element
conservation, which midpoint-equidistant surface nodes guarantee; the
matching step verifies it and fails loudly otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fspace import FunctionSpace, GaussianRbf, translate_space
from .geometry import Domain, disk, rectangle, triangle
from .operator import SbpOperator, assemble_operator
from .quadrature import PocsConfig


class MeshError(RuntimeError):
    pass


@dataclass(frozen=True)
class Element:
    class_id: str
    origin: tuple[float, float]


@dataclass
class FacePairing:
    """One interior face: aligned surface-node indices of both sides."""

    elem_left: int
    part_left: int
    elem_right: int
    part_right: int
    idx_left: np.ndarray = None  # flat surface-node indices, filled by matching
    idx_right: np.ndarray = None


@dataclass
class BoundaryFace:
    elem: int
    part: int
    tag: str


@dataclass
class Mesh:
    h: float
    classes: dict  # class_id -> Domain (local, translation origin at zero)
    elements: list
    pairings: list
    boundary: list
    reflections: dict = field(default_factory=dict)  # class -> point-reflected partner
    operators: dict = field(default_factory=dict)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    def total_area(self) -> float:
        return float(sum(self.classes[e.class_id].area for e in self.elements))

    def build_operators(self, space: FunctionSpace, cfg: PocsConfig,
                        nodes_per_part=None, n_interior=None,
                        strict: bool | None = None):
        """One operator per congruence class, then face matching.

        On piecewise-straight multi-class meshes all classes draw their
        surface weights from one shared reference-edge profile, so shared
        faces carry identical weights by construction.
        """
        order = sorted(self.classes, key=lambda c: (c in self.reflections, c))
        self.operators = {}
        for cid in order:
            surfq = None
            partner = self.reflections.get(cid)
            if partner is not None and partner in self.operators:
                surfq = _mirrored_surface_quadrature(self.operators[partner])
            self.operators[cid] = instantiate_class_operator(
                self, cid, space, cfg, nodes_per_part, n_interior, strict,
                surface_quadrature=surfq,
                symmetric_edges=len(self.classes) > 1,
            )
        ns = {op.n_nodes for op in self.operators.values()}
        if len(ns) != 1:
            raise MeshError(f"classes ended up with different node counts {ns}")
        match_faces(self)
        return self.operators


def structured_triangulation(K: int, rect=None) -> Mesh:
    """2 K^2 triangles from K^2 equal squares of a square domain."""
    if K < 1:
        raise ValueError("K must be at least 1")
    if rect is None:
        rect = rectangle((0.0, 0.0), (1.0, 1.0))
    (x0, y0), (x1, y1) = rect.lower, rect.upper
    if abs((x1 - x0) - (y1 - y0)) > 1e-14 * (x1 - x0):
        raise ValueError("structured triangulation needs a square domain")
    h = (x1 - x0) / K

    lower = triangle([(0.0, 0.0), (h, 0.0), (0.0, h)])
    upper = triangle([(h, h), (0.0, h), (h, 0.0)])
    classes = {"lower": lower, "upper": upper}
    # part indices: lower = (bottom, hypotenuse, left); upper = (top,
    # hypotenuse, right). Hypotenuse is part 1 in both classes.

    elements, index = [], {}
    for j in range(K):
        for i in range(K):
            origin = (x0 + i * h, y0 + j * h)
            index[("L", i, j)] = len(elements)
            elements.append(Element("lower", origin))
            index[("U", i, j)] = len(elements)
            elements.append(Element("upper", origin))

    pairings, boundary = [], []
    for j in range(K):
        for i in range(K):
            L = index[("L", i, j)]
            U = index[("U", i, j)]
            pairings.append(FacePairing(L, 1, U, 1))
            if j > 0:
                pairings.append(FacePairing(L, 0, index[("U", i, j - 1)], 0))
            else:
                boundary.append(BoundaryFace(L, 0, "bottom"))
            if i > 0:
                pairings.append(FacePairing(L, 2, index[("U", i - 1, j)], 2))
            else:
                boundary.append(BoundaryFace(L, 2, "left"))
            if j == K - 1:
                boundary.append(BoundaryFace(U, 0, "top"))
            if i == K - 1:
                boundary.append(BoundaryFace(U, 2, "right"))
    return Mesh(h, classes, elements, pairings, boundary,
                reflections={"upper": "lower"})


def disk_mesh(center=(0.5, 0.5), radius=0.5) -> Mesh:
    """Single-element mesh on the disk (no interior faces)."""
    d = disk(center, radius)
    return Mesh(
        2.0 * radius,
        {"disk": d},
        [Element("disk", (0.0, 0.0))],
        [],
        [BoundaryFace(0, 0, "circle")],
    )


def scale_space_to_element(space: FunctionSpace, h: float) -> FunctionSpace:
    """Express reference-element RBF parameters at the element scale h.

    Trig frequencies and monomials stay in physical coordinates; RBF centers
    and diameters are understood as fractions of the element and scale with
    it, since a Gaussian bump has no translation-closed span.
    """
    if h == 1.0 or not any(isinstance(f, GaussianRbf) for f in space.basis):
        return space
    basis = tuple(
        GaussianRbf(f.x0 * h, f.y0 * h, f.diameter * h)
        if isinstance(f, GaussianRbf) else f
        for f in space.basis
    )
    return FunctionSpace(basis, space.label, dict(space.params))


def class_local_space(mesh: Mesh, class_id: str,
                      space: FunctionSpace) -> FunctionSpace:
    """The function space as seen by one congruence class.

    Translation-closed spans pass through unchanged (re-expressed at the
    canonical origin). RBF parameters live in reference-element fractions and
    scale with h; the upper triangle carries the point-reflected center so
    the bump sits inside its own domain.
    """
    local = scale_space_to_element(space, mesh.h)
    if class_id == "upper" and any(
        isinstance(f, GaussianRbf) for f in local.basis
    ):
        basis = tuple(
            GaussianRbf(mesh.h - f.x0, mesh.h - f.y0, f.diameter)
            if isinstance(f, GaussianRbf) else f
            for f in local.basis
        )
        local = FunctionSpace(basis, local.label, dict(local.params))
    return translate_space(local, (0.0, 0.0))


def _mirrored_surface_quadrature(op: SbpOperator):
    """Surface rule of a point-reflected congruence class.

    The two triangle orientations are exact mirror images through the cell
    center, and their boundary parts and node slots are enumerated so that
    the reflection is the identity on (part, slot). The partner's weight
    vector therefore solves the reflected exactness system with the same
    residual, and matched face nodes carry identical weights by construction.
    """
    from .quadrature import Quadrature

    v = op.surface_weights
    meta = dict(op.meta.get("surface", {}))
    meta["mirrored"] = True
    return Quadrature(op.nodes.all_surface_points(), v,
                      float(meta.get("residual", np.nan)), meta)


def instantiate_class_operator(mesh: Mesh, class_id: str,
                               space: FunctionSpace, cfg: PocsConfig,
                               nodes_per_part=None, n_interior=None,
                               strict: bool | None = None,
                               surface_quadrature=None,
                               symmetric_edges: bool = False) -> SbpOperator:
    """Build the operator for one congruence class in local coordinates.

    The function space is re-expressed at the class's canonical origin, which
    for translation-closed spans leaves the basis unchanged; every element of
    the class then uses this one operator.
    """
    local = class_local_space(mesh, class_id, space)
    return assemble_operator(local, mesh.classes[class_id], cfg,
                             nodes_per_part, n_interior, strict,
                             surface_quadrature=surface_quadrature,
                             symmetric_edges=symmetric_edges)


def _surface_layout(op: SbpOperator):
    pts = op.nodes.all_surface_points()
    nrm = op.nodes.all_surface_normals()
    return pts, nrm, op.surface_weights, op.nodes.part_slices()


def match_faces(mesh: Mesh):
    """Fill the node index maps of every pairing by coordinate matching.

    Paired nodes must coincide to 1e-12 h in global coordinates, carry equal
    surface weights (inter-element conservation), and antiparallel normals.
    """
    if not mesh.operators:
        raise MeshError("build operators before matching faces")
    layouts = {cid: _surface_layout(op) for cid, op in mesh.operators.items()}
    tol = 1e-12 * mesh.h
    for pair in mesh.pairings:
        eL = mesh.elements[pair.elem_left]
        eR = mesh.elements[pair.elem_right]
        ptsL, nrmL, vL, slL = layouts[eL.class_id]
        ptsR, nrmR, vR, slR = layouts[eR.class_id]
        sL = slL[pair.part_left]
        sR = slR[pair.part_right]
        gL = ptsL[sL] + np.asarray(eL.origin)
        gR = ptsR[sR] + np.asarray(eR.origin)
        if len(gL) != len(gR):
            raise MeshError("non-conforming face nodes (count mismatch)")
        d2 = (gL[:, None, 0] - gR[None, :, 0]) ** 2 + (
            gL[:, None, 1] - gR[None, :, 1]
        ) ** 2
        jmin = np.argmin(d2, axis=1)
        if not np.all(np.sqrt(d2[np.arange(len(gL)), jmin]) <= tol):
            raise MeshError(
                f"non-conforming face nodes between elements "
                f"{pair.elem_left} and {pair.elem_right}"
            )
        if len(np.unique(jmin)) != len(jmin):
            raise MeshError("ambiguous face node matching")
        iL = np.arange(sL.start, sL.stop)
        iR = jmin + sR.start
        wdiff = float(np.max(np.abs(vL[iL] - vR[iR])))
        if wdiff > 1e-11:
            raise MeshError(
                f"conservation violated at interface: weight mismatch {wdiff:.3e}"
            )
        ndiff = float(np.max(np.abs(nrmL[iL] + nrmR[iR])))
        if ndiff > 1e-14:
            raise MeshError(
                f"paired normals not antiparallel (defect {ndiff:.3e})"
            )
        pair.idx_left = iL
        pair.idx_right = iR
    return mesh.pairings
