"""Assembly of diagonal-norm derivative operators with mimetic boundaries.

An operator D = P^{-1} Q per coordinate direction is built in four steps:
surface quadrature -> boundary matrices, volume quadrature -> norm matrix P,
then an exactly anti-symmetric Q_A solving Q_A V = P V_xi - B_xi V / 2 via
alternating projections, and finally Q = Q_A + B/2. Both directions share P
and the surface weight vector, which the energy estimates require. The
summation-by-parts identity Q + Q^T = B holds to rounding by construction.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import moments
from .fspace import FunctionSpace, eval_vandermonde, product_spanning_set, space_from_config
from .geometry import Domain, NodeSet, build_node_set, disk, rectangle, triangle
from .quadrature import (
    PocsConfig,
    PocsFailure,
    Quadrature,
    build_surface_quadrature,
    build_volume_quadrature,
    escalate_nodes,
)


class OperatorError(RuntimeError):
    """An assembled operator violates one of its invariants."""


@dataclass
class SbpOperator:
    """Derivative operators on one node set, with construction metadata.

    Matrices are dense; node counts stay small (tens of nodes per element).
    Flat node ordering is surface nodes first, then interior nodes.
    """

    space_label: str
    space_params: dict
    domain_info: dict
    nodes: NodeSet
    P_diag: np.ndarray
    bx_diag: np.ndarray
    by_diag: np.ndarray
    Qx: np.ndarray
    Qy: np.ndarray
    meta: dict = field(default_factory=dict)
    surface_weights: np.ndarray | None = None

    def __post_init__(self):
        if self.surface_weights is None:
            ns = self.nodes.n_surface
            self.surface_weights = np.hypot(self.bx_diag[:ns],
                                            self.by_diag[:ns])

    @property
    def n_nodes(self) -> int:
        return len(self.P_diag)

    @property
    def n_surface(self) -> int:
        return self.nodes.n_surface

    @property
    def Dx(self) -> np.ndarray:
        return self.Qx / self.P_diag[:, None]

    @property
    def Dy(self) -> np.ndarray:
        return self.Qy / self.P_diag[:, None]

    def points(self) -> np.ndarray:
        return self.nodes.all_points()


def assemble_boundary_matrices(surfq: Quadrature, nodes: NodeSet):
    """Diagonals of B_x and B_y: weight times normal component.

    Entries vanish at interior nodes; at surface nodes they factor as the
    (nonnegative) surface weight times the normal component.
    """
    N = nodes.n_total
    normals = nodes.all_surface_normals()
    ns = nodes.n_surface
    if len(surfq.weights) != ns:
        raise ValueError("surface quadrature does not match the node set")
    bx = np.zeros(N)
    by = np.zeros(N)
    bx[:ns] = surfq.weights * normals[:, 0]
    by[:ns] = surfq.weights * normals[:, 1]
    return bx, by


def build_QA(V, V_xi, P_diag, b_diag, cfg: PocsConfig, strict: bool = True):
    """Exactly anti-symmetric Q_A with Q_A V ~= P V_xi - diag(b) V / 2.

    The solve happens in the norm-weighted metric: substituting
    Q_A = P^(1/2) Q P^(1/2) turns the exactness conditions into
    Q (P^(1/2) V) = P^(-1/2) T and makes the minimized residual equal the
    derivative exactness defect ||D V - V_xi||, which is the quantity the
    operator is judged by. Anti-symmetry is preserved exactly under the
    back-substitution.

    Alternating projections (exactness set through the pseudo-inverse,
    anti-symmetrization) are seeded with the minimum-norm anti-symmetric
    solution, the limit the zero-start iteration approaches impractically
    slowly when V is nearly rank deficient. When the quadrature inputs are
    internally inconsistent the residual plateaus; with strict=True that
    raises PocsFailure, otherwise the best iterate is returned for
    reproduction-style builds.
    """
    s = np.sqrt(P_diag)
    Vh = s[:, None] * V
    Th = s[:, None] * V_xi - 0.5 * (b_diag / s)[:, None] * V
    Vp = np.linalg.pinv(Vh)
    scale = 1.0 + float(np.linalg.norm(P_diag[:, None] * V_xi))
    soft = max(1e-14 * scale, 1e-15)

    # seed: H = Th Vh^+ - (Vh^+)^T Th^T Pi solves H Vh = Th whenever
    # Vh^T Th is anti-symmetric; subtracting Pi H Pi (the component with
    # H Vh = 0) leaves the minimum-norm representative
    Pi = np.eye(Vh.shape[0]) - Vh @ Vp
    H = Th @ Vp - Vp.T @ Th.T @ Pi
    H = 0.5 * (H - H.T)
    Q = H - Pi @ H @ Pi
    Q = 0.5 * (Q - Q.T)
    best_Q, best_res = Q.copy(), np.inf
    checkpoint = np.inf
    iters = 0
    for iters in range(1, cfg.max_iters + 1):
        R = Th - Q @ Vh
        res = float(np.linalg.norm(R))
        if res < best_res:
            best_res, best_Q = res, Q.copy()
        if res <= soft:
            break
        if iters % cfg.stall_window == 0:
            if best_res > cfg.stall_ratio * checkpoint:
                break
            checkpoint = best_res
        Q = Q + R @ Vp
        Q = 0.5 * (Q - Q.T)

    QA = s[:, None] * best_Q * s[None, :]
    T = P_diag[:, None] * V_xi - 0.5 * b_diag[:, None] * V
    res_plain = float(np.linalg.norm(QA @ V - T))
    res_exactness = float(np.linalg.norm((QA @ V - T) / P_diag[:, None]))
    hard = cfg.tol * scale
    # the plain residual has an fp-intrinsic floor near minimal node counts;
    # what the operator is judged by is the derivative exactness defect, so
    # either bound is an acceptable outcome of the solve
    budget = cfg.qa_exactness_budget * (1.0 + float(np.linalg.norm(V_xi)))
    if strict and res_plain > hard and res_exactness > budget:
        raise PocsFailure(
            f"anti-symmetric solve stalled at residual {res_plain:.3e} "
            f"(target {hard:.3e}, exactness {res_exactness:.3e} over budget "
            f"{budget:.3e}); inconsistent B/P inputs or too few nodes",
            residual=res_plain,
        )
    return QA, {
        "iterations": iters,
        "residual": res_plain,
        "residual_weighted": best_res,
        "exactness_residual": res_exactness,
    }


def _fix_constant_column(QA, b_diag, const_col):
    """Rank-two anti-symmetric correction making Q 1 = 0 hold to rounding.

    With the constant in the span, conservation needs the constant column of
    the exactness conditions to hold essentially exactly, which a finite
    projection tolerance does not deliver on its own. The correction stays in
    the anti-symmetric set and only perturbs other columns at the level of
    the constant-column residual. ``const_col`` is the Vandermonde column of
    the constant basis function (a constant vector by construction).
    """
    N = len(b_diag)
    ones = np.ones(N)
    t = -0.5 * b_diag * const_col
    t = t - ones * (t.sum() / N)
    rho = t - QA @ const_col
    rho = rho / const_col[0]
    delta = (rho[:, None] - rho[None, :]) / N
    return QA + delta


def assemble_operator(space: FunctionSpace, domain: Domain, cfg: PocsConfig,
                      nodes_per_part=None, n_interior=None,
                      strict: bool | None = None,
                      surface_quadrature=None,
                      symmetric_edges: bool = False) -> SbpOperator:
    """Run the full construction and validate the result.

    Node counts may be given explicitly (nodes_per_part, n_interior) or left
    None to escalate from minimal counts. ``strict`` controls whether the
    exactness-level checks are enforced (defaults to cfg.enforce_oracle);
    structural properties (SBP identity, positivity, conservation) are always
    enforced. A precomputed surface quadrature (e.g. a mesh-shared edge
    profile) may be supplied with explicit node counts.
    """
    if strict is None:
        strict = cfg.enforce_oracle
    if (nodes_per_part is None) != (n_interior is None):
        raise ValueError("give both node counts or neither")
    if nodes_per_part is None:
        if surface_quadrature is not None:
            raise ValueError("a supplied surface quadrature needs node counts")
        nodes, surfq, volq = escalate_nodes(space, domain, cfg)
    else:
        nodes = build_node_set(domain, nodes_per_part, n_interior,
                               cfg.halton_skip)
        if surface_quadrature is not None:
            surfq = surface_quadrature
            if len(surfq.weights) != nodes.n_surface:
                raise ValueError("surface quadrature does not fit node set")
        else:
            surfq = build_surface_quadrature(space, domain.parts, nodes, cfg,
                                             symmetric_edges=symmetric_edges)
        volq = build_volume_quadrature(
            space, domain, nodes, cfg,
            surface_quadrature=surfq if cfg.volume_targets == "boundary" else None,
        )

    points = nodes.all_points()
    V, Vx, Vy = eval_vandermonde(space, points)
    bx, by = assemble_boundary_matrices(surfq, nodes)
    P = volq.weights.copy()

    const_idx = space.constant_index()
    Qs, infos = {}, {}
    for name, Vxi, b in (("x", Vx, bx), ("y", Vy, by)):
        QA, info = build_QA(V, Vxi, P, b, cfg, strict=strict)
        if const_idx is not None:
            QA = _fix_constant_column(QA, b, V[:, const_idx])
        Q = QA.copy()
        Q[np.diag_indices_from(Q)] += 0.5 * b
        Qs[name] = Q
        infos[name] = info

    meta = {
        "nodes_per_part": [len(p) for p in nodes.surface_points],
        "n_interior": int(len(nodes.interior)),
        "halton_skip": cfg.halton_skip,
        "w_min": volq.meta["w_min"],
        "surface": dict(surfq.meta, residual=surfq.residual),
        "volume": dict(volq.meta, residual=volq.residual),
        "qa_x": infos["x"],
        "qa_y": infos["y"],
        "strict": strict,
        "qa_hash": hashlib.sha256(
            Qs["x"].tobytes() + Qs["y"].tobytes()
        ).hexdigest()[:16],
    }
    op = SbpOperator(
        space_label=space.label,
        space_params=dict(space.params),
        domain_info=_domain_info(domain),
        nodes=nodes,
        P_diag=P,
        bx_diag=bx,
        by_diag=by,
        Qx=Qs["x"],
        Qy=Qs["y"],
        meta=meta,
        surface_weights=surfq.weights.copy(),
    )
    report = validate_operator(op, space, exactness_tol=None if strict else np.inf,
                               boundary_tol=None if strict else np.inf)
    meta["validation"] = report.as_dict()
    if not report.passed:
        raise OperatorError(
            "operator invariant violated:\n" + report.as_text()
        )
    return op


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

@dataclass
class ValidationReport:
    sbp_defect: dict
    exactness: dict
    max_d1: dict
    min_p_weight: float
    w_min: float
    p_sum_defect: float
    boundary_defect: dict
    checks: dict

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def as_dict(self) -> dict:
        return {
            "sbp_defect": self.sbp_defect,
            "exactness": self.exactness,
            "max_d1": self.max_d1,
            "min_p_weight": self.min_p_weight,
            "w_min": self.w_min,
            "p_sum_defect": self.p_sum_defect,
            "boundary_defect": self.boundary_defect,
            "checks": self.checks,
        }

    def as_text(self) -> str:
        lines = []
        for d in ("x", "y"):
            lines.append(
                f"direction {d}: sbp defect {self.sbp_defect[d]:.3e}, "
                f"exactness {self.exactness[d]:.3e}, "
                f"max |D 1| {self.max_d1[d]:.3e}, "
                f"boundary defect {self.boundary_defect[d]:.3e}"
            )
        lines.append(
            f"min P weight {self.min_p_weight:.6e} (floor {self.w_min:.6e}), "
            f"weight sum defect {self.p_sum_defect:.3e}"
        )
        for name, ok in self.checks.items():
            lines.append(f"check {name}: {'pass' if ok else 'FAIL'}")
        return "\n".join(lines)


def validate_operator(op: SbpOperator, space: FunctionSpace,
                      exactness_tol: float | None = None,
                      boundary_tol: float | None = None) -> ValidationReport:
    """Measure every operator invariant and compare against thresholds.

    exactness_tol defaults to 1e-9 at unit scale; boundary_tol to 1e-10
    relative to the largest boundary moment. Pass numpy.inf to record the
    measurements without gating (reproduction builds).
    """
    V, Vx, Vy = eval_vandermonde(space, op.points())
    domain = domain_from_info(op.domain_info)
    spanning = product_spanning_set(space)
    K = space.dim
    ones = np.ones(op.n_nodes)

    sbp, exact, d1, bdef = {}, {}, {}, {}
    bscale = 0.0
    for name, Q, b, Vxi, w in (
        ("x", op.Qx, op.bx_diag, Vx, "nx"),
        ("y", op.Qy, op.by_diag, Vy, "ny"),
    ):
        D = Q / op.P_diag[:, None]
        sbp[name] = float(np.max(np.abs(Q + Q.T - np.diag(b))))
        exact[name] = float(np.linalg.norm(D @ V - Vxi))
        d1[name] = float(np.max(np.abs(D @ ones)))
        G = V.T @ (b[:, None] * V)
        O = moments.boundary_moments(spanning, domain, w).reshape(K, K).T
        bdef[name] = float(np.max(np.abs(G - O)))
        bscale = max(bscale, float(np.max(np.abs(O))))

    w_min = float(op.meta.get("w_min", 0.0))
    min_p = float(op.P_diag.min())
    p_sum_defect = float(abs(op.P_diag.sum() - domain.area))

    if exactness_tol is None:
        exactness_tol = 1e-9
    if boundary_tol is None:
        boundary_tol = 1e-10 * (1.0 + bscale)
    bmax = max(np.max(np.abs(op.bx_diag)), np.max(np.abs(op.by_diag)))
    checks = {
        "sbp_identity": all(
            v <= 1e-13 * bmax + 1e-15 for v in sbp.values()
        ),
        "exactness": all(v <= exactness_tol for v in exact.values()),
        "conservation_d1": all(v <= 1e-12 for v in d1.values()),
        "p_positive": min_p >= w_min * (1.0 - 1e-12),
        "p_sum": p_sum_defect <= 1e-11 * max(1.0, domain.area),
        "boundary_exactness": all(v <= boundary_tol for v in bdef.values()),
    }
    return ValidationReport(
        sbp_defect=sbp,
        exactness=exact,
        max_d1=d1,
        min_p_weight=min_p,
        w_min=w_min,
        p_sum_defect=p_sum_defect,
        boundary_defect=bdef,
        checks=checks,
    )


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

SCHEMA_VERSION = 1


def _domain_info(domain: Domain) -> dict:
    if domain.kind == "triangle":
        return {"kind": "triangle", "vertices": [list(v) for v in domain.vertices]}
    if domain.kind == "disk":
        return {"kind": "disk", "center": list(domain.center),
                "radius": domain.radius}
    if domain.kind == "rectangle":
        return {"kind": "rectangle", "lower": list(domain.lower),
                "upper": list(domain.upper)}
    raise TypeError(f"cannot serialize domain kind {domain.kind!r}")


def domain_from_info(info: dict) -> Domain:
    kind = info["kind"]
    if kind == "triangle":
        return triangle(info["vertices"])
    if kind == "disk":
        return disk(info["center"], info["radius"])
    if kind == "rectangle":
        return rectangle(info["lower"], info["upper"])
    raise ValueError(f"unknown domain kind {kind!r}")


def space_from_descriptor(desc: dict) -> FunctionSpace:
    params = dict(desc.get("params", {}))
    if "center" in params:
        params["center"] = tuple(params["center"])
    return space_from_config(desc["name"], **params)


def operator_to_json(op: SbpOperator) -> str:
    """Serialize with shortest round-tripping decimal encodings.

    Python's float repr (17 significant digits at most) is used for every
    number, so writing and re-reading reproduces the exact binary values and
    rebuilding with the same config yields byte-identical files.
    """
    doc = {
        "schema_version": SCHEMA_VERSION,
        "space": {"name": op.space_label, "params": _jsonable(op.space_params)},
        "domain": op.domain_info,
        "nodes": {
            "surface_parts": [
                {"points": p.tolist(), "normals": n.tolist()}
                for p, n in zip(op.nodes.surface_points, op.nodes.surface_normals)
            ],
            "interior": op.nodes.interior.tolist(),
        },
        "P_diag": op.P_diag.tolist(),
        "Bx_diag": op.bx_diag.tolist(),
        "By_diag": op.by_diag.tolist(),
        "Qx": op.Qx.tolist(),
        "Qy": op.Qy.tolist(),
        "meta": _jsonable(op.meta),
    }
    return json.dumps(doc, indent=1)


def operator_from_json(text: str) -> SbpOperator:
    doc = json.loads(text)
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema version {doc.get('schema_version')!r}")
    parts_p = tuple(np.asarray(p["points"], dtype=float)
                    for p in doc["nodes"]["surface_parts"])
    parts_n = tuple(np.asarray(p["normals"], dtype=float)
                    for p in doc["nodes"]["surface_parts"])
    interior = np.asarray(doc["nodes"]["interior"], dtype=float).reshape(-1, 2)
    nodes = NodeSet(parts_p, parts_n, interior)
    return SbpOperator(
        space_label=doc["space"]["name"],
        space_params=doc["space"]["params"],
        domain_info=doc["domain"],
        nodes=nodes,
        P_diag=np.asarray(doc["P_diag"], dtype=float),
        bx_diag=np.asarray(doc["Bx_diag"], dtype=float),
        by_diag=np.asarray(doc["By_diag"], dtype=float),
        Qx=np.asarray(doc["Qx"], dtype=float),
        Qy=np.asarray(doc["Qy"], dtype=float),
        meta=doc.get("meta", {}),
    )


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj
