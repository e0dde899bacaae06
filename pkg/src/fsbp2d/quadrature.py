"""Positive quadratures from exactness conditions via alternating projections.

Exactness of a quadrature for a spanning set is a linear system A w = b; the
weights must additionally sit above a lower bound (zero for surface
quadratures, an area-scaled floor for volume quadratures so that the inverse
norm matrix stays well conditioned). Both constraint sets are closed and
convex, so a point in their intersection is found by alternating orthogonal
projections. Ill-conditioned spanning sets are first compressed to a
discretely orthonormal basis with an SVD threshold sweep, keeping the weight
vector that best fits the original conditions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import moments
from .fspace import FunctionSpace, derivative_spanning_set, product_spanning_set
from .geometry import BoundaryPart, Domain, NodeSet, build_node_set

DEFAULT_EPS_SWEEP = tuple(10.0**k for k in range(-16, -4))


class PocsFailure(RuntimeError):
    """POCS did not reach the tolerance; carries the best iterate."""

    def __init__(self, message, best_weights=None, residual=None):
        super().__init__(message)
        self.best_weights = best_weights
        self.residual = residual


class QuadratureInfeasible(PocsFailure):
    """No acceptable quadrature at these node counts; add nodes."""


class EscalationError(RuntimeError):
    """Node-count escalation hit its configured ceiling."""


@dataclass(frozen=True)
class PocsConfig:
    """Tolerances and limits for the quadrature and operator solves.

    ``tol`` is the relative exactness tolerance of the solved (compressed)
    system. ``enforce_oracle`` additionally gates each build on the
    uncompressed conditions against the adaptive moment oracle, allowing
    ``oracle_factor * tol`` relative defects; turn it off to reproduce
    minimal-node constructions whose exactness holds only on the numerically
    resolvable part of the spanning set.
    """

    tol: float = 1e-12
    max_iters: int = 100_000
    eps_sweep: tuple = DEFAULT_EPS_SWEEP
    w_min_fraction: float = 0.1
    enforce_oracle: bool = True
    oracle_factor: float = 10.0
    stall_window: int = 1000
    stall_ratio: float = 0.999
    qa_exactness_budget: float = 1e-9
    volume_targets: str = "oracle"  # or "boundary": discrete divergence data
    max_surface_nodes: int = 64
    max_interior_nodes: int = 512
    halton_skip: int = 0


@dataclass
class ExactnessSystem:
    """Stacked exactness conditions A w = b with row bookkeeping."""

    A: np.ndarray
    b: np.ndarray
    provenance: list

    @property
    def shape(self):
        return self.A.shape


@dataclass
class Quadrature:
    """Nodes with nonnegative weights and the achieved exactness residual.

    ``residual`` is the max-norm violation of the solved compressed system;
    the defect against the uncompressed oracle conditions is in ``meta``.
    """

    nodes: np.ndarray
    weights: np.ndarray
    residual: float
    meta: dict = field(default_factory=dict)


def compute_moments(funcs, target, weight: str | None = None) -> np.ndarray:
    """Machine-precision moments of the functions over a domain or part."""
    if isinstance(target, Domain):
        if weight is not None:
            raise ValueError("normal-weighted moments need a boundary part")
        return moments.volume_moments(funcs, target)
    if isinstance(target, BoundaryPart):
        return moments.surface_moments(funcs, target, weight)
    raise TypeError(f"cannot integrate over {type(target).__name__}")


# ---------------------------------------------------------------------------
# compression and POCS
# ---------------------------------------------------------------------------

def compress_system(A: np.ndarray, b: np.ndarray, eps: float):
    """Orthonormalize the exactness rows, dropping directions below eps.

    Returns (A_eps, b_eps, M) where A_eps consists of the right singular
    vectors with singular value >= eps (so A_eps A_eps^T = I) and b_eps is
    the correspondingly transformed right-hand side.
    """
    if A.size == 0:
        raise ValueError("empty exactness system")
    U, S, Vt = np.linalg.svd(A, full_matrices=False)
    keep = S >= eps
    if not np.any(keep):
        raise ValueError("empty compressed system")
    A_eps = Vt[keep]
    b_eps = (U[:, keep].T @ b) / S[keep]
    return A_eps, b_eps, int(keep.sum())


def pocs_step(A, b, lower, w):
    """One alternating projection: onto {Aw = b}, then onto {w >= lower}.

    A must have orthonormal rows so that A^+ = A^T.
    """
    v = w + A.T @ (b - A @ w)
    return np.maximum(v, lower)


def _polish(A, b, lower, w, wscale):
    """Re-solve the equality system exactly on the inactive set.

    POCS stops at a finite tolerance; once the active bounds are identified,
    the remaining weights solve an unconstrained least-squares problem, which
    recovers exactness to rounding when the constraints are compatible.
    """
    active = w <= lower + 1e-9 * wscale
    if np.all(active):
        return None
    rhs = b - A[:, active] @ lower[active]
    wf, *_ = np.linalg.lstsq(A[:, ~active], rhs, rcond=None)
    out = lower.copy()
    out[~active] = wf
    return np.maximum(out, lower)


def pocs_bounded_solve(A, b, lower, cfg: PocsConfig, w0=None):
    """Weights with w >= lower and ||A w - b||_inf <= tol * (1 + ||b||_inf).

    Starts from the clamped least-squares point, alternates the exactness and
    bound projections, and ends on the clamp so the bounds hold exactly. A
    final least-squares polish on the inactive set is kept when it does not
    worsen the residual. Raises PocsFailure (with the best iterate) when the
    tolerance is unreachable within max_iters or progress stalls.
    """
    lower = np.broadcast_to(np.asarray(lower, dtype=float), (A.shape[1],)).copy()
    bscale = 1.0 + np.max(np.abs(b), initial=0.0)
    target = cfg.tol * bscale
    soft = max(5e-15 * bscale, 1e-15)
    wscale = max(np.max(np.abs(b), initial=0.0), np.max(lower, initial=0.0), 1e-300)

    w = np.maximum(A.T @ b, lower) if w0 is None else np.maximum(np.asarray(w0, float), lower)
    best_w, best_res = w.copy(), np.inf
    checkpoint_res = np.inf
    stalled = False
    iters = 0
    for iters in range(1, cfg.max_iters + 1):
        r = b - A @ w
        res = float(np.max(np.abs(r), initial=0.0))
        if res < best_res:
            best_res, best_w = res, w.copy()
        if res <= soft:
            break
        if iters % cfg.stall_window == 0:
            if best_res > cfg.stall_ratio * checkpoint_res:
                stalled = True
                break
            checkpoint_res = best_res
        w = np.maximum(w + A.T @ r, lower)

    w, res = best_w, best_res
    polished = _polish(A, b, lower, w, wscale)
    if polished is not None:
        res_p = float(np.max(np.abs(A @ polished - b), initial=0.0))
        if res_p <= res:
            w, res = polished, res_p
    if res > target:
        why = "stalled" if stalled else f"after {iters} iterations"
        raise PocsFailure(
            f"infeasible or slow - add nodes (residual {res:.3e} {why}, "
            f"target {target:.3e})",
            best_weights=w, residual=res,
        )
    return w, {"iterations": iters, "residual": res}


def solve_exactness_system(system: ExactnessSystem, lower, cfg: PocsConfig):
    """Threshold sweep: solve the compressed system for each eps, keep the
    weights that best fit the original uncompressed conditions."""
    A, b = system.A, system.b
    U, S, Vt = np.linalg.svd(A, full_matrices=False)
    bscale = 1.0 + np.max(np.abs(b), initial=0.0)

    best = None
    seen_ranks = set()
    last_failure = None
    for eps in cfg.eps_sweep:
        keep = S >= eps
        M = int(keep.sum())
        if M == 0 or M in seen_ranks:
            continue
        seen_ranks.add(M)
        A_eps = Vt[keep]
        b_eps = (U[:, keep].T @ b) / S[keep]
        try:
            w, info = pocs_bounded_solve(A_eps, b_eps, lower, cfg)
        except PocsFailure as exc:
            last_failure = exc
            continue
        orig = float(np.linalg.norm(A @ w - b))
        if best is None or orig < best["orig_residual"]:
            best = {
                "weights": w,
                "eps": eps,
                "rank": M,
                "orig_residual": orig,
                "residual": info["residual"],
                "iterations": info["iterations"],
            }
            if orig <= 1e-14 * bscale * np.sqrt(len(b)):
                break
    if best is None:
        raise QuadratureInfeasible(
            "no threshold in the sweep produced a feasible quadrature"
            + (f" (last: {last_failure})" if last_failure else ""),
            best_weights=getattr(last_failure, "best_weights", None),
            residual=getattr(last_failure, "residual", None),
        )
    return best


def _oracle_gate(kind, A, b, w, cfg: PocsConfig):
    """Defect of the weights against the uncompressed oracle conditions."""
    defect = np.abs(A @ w - b)
    allowed = cfg.oracle_factor * cfg.tol * (1.0 + np.abs(b))
    worst = float(np.max(defect - allowed))
    max_defect = float(np.max(defect, initial=0.0))
    if cfg.enforce_oracle and worst > 0.0:
        raise QuadratureInfeasible(
            f"increase {kind} nodes (oracle defect {max_defect:.3e} exceeds "
            f"{cfg.oracle_factor:g}*tol band)",
            best_weights=w, residual=max_defect,
        )
    return max_defect


# ---------------------------------------------------------------------------
# surface and volume builders
# ---------------------------------------------------------------------------

def surface_exactness_system(space: FunctionSpace, parts, nodes: NodeSet
                             ) -> ExactnessSystem:
    """Per-part, per-direction exactness rows for all product functions.

    Each row constrains only the weights of its own part, so the stacked
    system decouples into independent per-part solves; rows where the normal
    component vanishes identically are zero rows and disappear under
    compression.
    """
    spanning = product_spanning_set(space)
    M = nodes.n_surface
    slices = nodes.part_slices()
    rows, rhs, prov = [], [], []
    for j, (part, sl) in enumerate(zip(parts, slices)):
        pts = nodes.surface_points[j]
        nrm = nodes.surface_normals[j]
        x, y = pts[:, 0], pts[:, 1]
        G = np.column_stack([g.value(x, y) for g in spanning])  # (m_j, L)
        for direction, comp in (("nx", 0), ("ny", 1)):
            mom = moments.surface_moments(spanning, part, direction)
            block = np.zeros((len(spanning), M))
            block[:, sl] = (nrm[:, comp][:, None] * G).T
            rows.append(block)
            rhs.append(mom)
            prov.extend((j, direction, k) for k in range(len(spanning)))
    return ExactnessSystem(np.vstack(rows), np.concatenate(rhs), prov)


def _enforce_part_constants(parts, nodes: NodeSet, w):
    """Exactly enforce the constant function's normal moments per part.

    Conservation (D 1 = 0) hinges on sum(v n_xi) matching the closed-form
    integrals of the normal components, which a finite-tolerance solve only
    delivers approximately. Straight edges carry one length condition,
    arcs the two component conditions; all right-hand sides are analytic.
    The correction is a tiny per-part projection, so it keeps the per-part
    decoupling that shared-face weight matching relies on.
    """
    from .geometry import Arc, Segment

    w = w.copy()
    for j, (part, sl) in enumerate(zip(parts, nodes.part_slices())):
        v = w[sl]
        if isinstance(part, Segment):
            v = v + (part.arc_length - v.sum()) / len(v)
        elif isinstance(part, Arc):
            A = nodes.surface_normals[j].T  # rows: cos(theta_m), sin(theta_m)
            r, t0, t1 = part.radius, part.theta0, part.theta1
            b = np.array([r * (np.sin(t1) - np.sin(t0)),
                          -r * (np.cos(t1) - np.cos(t0))])
            corr, *_ = np.linalg.lstsq(A @ A.T, b - A @ v, rcond=None)
            v = v + A.T @ corr
        w[sl] = v
    return np.maximum(w, 0.0)


def per_part_systems(space: FunctionSpace, parts, nodes: NodeSet,
                     symmetric_edges: bool = False):
    """One independent exactness system per smooth boundary part.

    Straight edges have constant normals, so both direction conditions
    reduce to the unweighted arc-length conditions; arcs keep the two
    normal-weighted condition groups. With symmetric_edges, each straight
    edge additionally carries the reversed-orientation conditions, so the
    rule is exact for the reversal-closed family; multi-block face matching
    requires this together with a symmetric weight profile.
    """
    from .geometry import Segment

    spanning = product_spanning_set(space)
    out = []
    for j, part in enumerate(parts):
        pts = nodes.surface_points[j]
        x, y = pts[:, 0], pts[:, 1]
        G = np.stack([g.value(x, y) for g in spanning])
        if isinstance(part, Segment):
            A = G
            b = moments.surface_moments(spanning, part)
            prov = [(j, None, k) for k in range(len(spanning))]
            if symmetric_edges:
                A = np.vstack([G, G[:, ::-1]])
                b = np.concatenate([b, b])
                prov = prov + [(j, "rev", k) for k in range(len(spanning))]
        else:
            nrm = nodes.surface_normals[j]
            A = np.vstack([nrm[:, 0] * G, nrm[:, 1] * G])
            b = np.concatenate([
                moments.surface_moments(spanning, part, "nx"),
                moments.surface_moments(spanning, part, "ny"),
            ])
            prov = [(j, d, k) for d in ("nx", "ny")
                    for k in range(len(spanning))]
        out.append(ExactnessSystem(A, b, prov))
    return out


def build_surface_quadrature(space: FunctionSpace, parts, nodes: NodeSet,
                             cfg: PocsConfig,
                             symmetric_edges: bool = False) -> Quadrature:
    """Nonnegative weights making the boundary rule product-exact per part.

    One weight per surface node is shared between both coordinate directions,
    which the energy estimate of the solver requires. Zero weights are kept
    (nodes are never dropped) so operator matrices retain a fixed indexing.
    Each smooth part is solved independently (its conditions touch only its
    own weights); the constant function's normal moments are then enforced
    exactly, and the result is gated against the oracle-moment conditions.
    With symmetric_edges, straight-edge rules are exact for the
    reversal-closed family and reversal symmetric (see per_part_systems).
    """
    from .geometry import Segment

    w = np.zeros(nodes.n_surface)
    metas = []
    try:
        for part, sysj, sl in zip(
            parts, per_part_systems(space, parts, nodes, symmetric_edges),
            nodes.part_slices()
        ):
            best = solve_exactness_system(sysj, np.zeros(sl.stop - sl.start),
                                          cfg)
            wj = best["weights"]
            if symmetric_edges and isinstance(part, Segment):
                # the system is reversal invariant here, so averaging the
                # orientations cannot worsen the residual and makes the
                # symmetry exact, which mirrored classes rely on
                wj = 0.5 * (wj + wj[::-1])
            w[sl] = wj
            metas.append({k: best[k] for k in
                          ("eps", "rank", "iterations", "orig_residual")})
    except QuadratureInfeasible as exc:
        raise QuadratureInfeasible(
            f"increase surface nodes ({exc})",
            best_weights=exc.best_weights, residual=exc.residual,
        ) from exc
    w = _enforce_part_constants(parts, nodes, w)
    system = surface_exactness_system(space, parts, nodes)
    defect = _oracle_gate("surface", system.A, system.b, w, cfg)
    meta = {
        "parts": metas,
        "eps": [m["eps"] for m in metas],
        "rank": sum(m["rank"] for m in metas),
        "iterations": max(m["iterations"] for m in metas),
        "oracle_defect": defect,
        "orig_residual": float(np.linalg.norm(system.A @ w - system.b)),
    }
    residual = float(max(m["orig_residual"] for m in metas))
    return Quadrature(nodes.all_surface_points(), w, residual, meta)


def _discrete_divergence_targets(space: FunctionSpace, nodes: NodeSet,
                                 surfq: Quadrature, component: int):
    """Boundary-rule values of the product functions, weighted by a normal
    component: the discrete counterpart of the divergence identity
    int d_xi(f g) = oint f g n_xi."""
    spanning = product_spanning_set(space)
    pts = nodes.all_surface_points()
    nrm = nodes.all_surface_normals()
    x, y = pts[:, 0], pts[:, 1]
    G = np.column_stack([g.value(x, y) for g in spanning])
    return G.T @ (surfq.weights * nrm[:, component])


def volume_exactness_system(space: FunctionSpace, domain: Domain,
                            nodes: NodeSet,
                            surface_quadrature: Quadrature | None = None
                            ) -> ExactnessSystem:
    """Stacked x- and y-derivative product exactness rows on all nodes.

    Without a surface quadrature the right-hand sides are the oracle
    integrals. Given one, they are its discrete divergence-identity values
    instead: the norm and boundary matrices then satisfy the compatibility
    relation V^T P V_xi + V_xi^T P V = V^T B V to solver precision, which is
    what makes an anti-symmetric derivative correction exist. The two
    right-hand sides agree up to the boundary rule's own exactness defect.
    """
    pts = nodes.all_points()
    x, y = pts[:, 0], pts[:, 1]
    rows, rhs, prov = [], [], []
    for direction, xi, comp in (("dx", (1.0, 0.0), 0), ("dy", (0.0, 1.0), 1)):
        spanning = derivative_spanning_set(space, xi)
        if surface_quadrature is None:
            mom = moments.volume_moments(spanning, domain)
        else:
            mom = _discrete_divergence_targets(
                space, nodes, surface_quadrature, comp
            )
        A = np.stack([g.value(x, y) for g in spanning])
        rows.append(A)
        rhs.append(mom)
        prov.extend((direction, k) for k in range(len(spanning)))
    return ExactnessSystem(np.vstack(rows), np.concatenate(rhs), prov)


def build_volume_quadrature(space: FunctionSpace, domain: Domain,
                            nodes: NodeSet, cfg: PocsConfig,
                            surface_quadrature: Quadrature | None = None
                            ) -> Quadrature:
    """Volume weights >= area/(10 N), exact for both derivative spanning sets.

    The weight floor keeps ||P^{-1}|| <= 1/w_min; it is scaled by the domain
    area so the bound is dimensionally consistent under element refinement.
    The oracle gate always compares against the independent adaptive
    integrals, regardless of which right-hand sides were solved.
    """
    system = volume_exactness_system(space, domain, nodes, surface_quadrature)
    N = nodes.n_total
    w_min = cfg.w_min_fraction * domain.area / N
    try:
        best = solve_exactness_system(system, np.full(N, w_min), cfg)
    except QuadratureInfeasible as exc:
        raise QuadratureInfeasible(
            f"increase interior nodes ({exc})",
            best_weights=exc.best_weights, residual=exc.residual,
        ) from exc
    w = best["weights"]
    if cfg.enforce_oracle:
        b_oracle = np.concatenate([
            moments.volume_moments(derivative_spanning_set(space, xi), domain)
            for xi in ((1.0, 0.0), (0.0, 1.0))
        ])
        defect = _oracle_gate("interior", system.A, b_oracle, w, cfg)
    else:
        defect = None
    meta = {
        "eps": best["eps"],
        "rank": best["rank"],
        "iterations": best["iterations"],
        "oracle_defect": defect,
        "orig_residual": best["orig_residual"],
        "w_min": w_min,
        "weight_sum_defect": float(abs(w.sum() - domain.area)),
    }
    return Quadrature(nodes.all_points(), w, best["residual"], meta)


# ---------------------------------------------------------------------------
# node-count escalation
# ---------------------------------------------------------------------------

def escalate_nodes(space: FunctionSpace, domain: Domain, cfg: PocsConfig,
                   start_surface: int = 1, start_interior: int = 0):
    """Smallest node counts (in scan order) admitting both quadratures.

    Surface nodes per part are increased one at a time until the surface
    quadrature exists, then interior Halton points are added one at a time
    until the volume quadrature exists. Fully deterministic.
    """
    surfq = None
    for m in range(start_surface, cfg.max_surface_nodes + 1):
        nodes = build_node_set(domain, m, 0, cfg.halton_skip)
        try:
            surfq = build_surface_quadrature(space, domain.parts, nodes, cfg)
            break
        except PocsFailure:
            continue
    if surfq is None:
        raise EscalationError(
            f"no surface quadrature up to {cfg.max_surface_nodes} nodes per part"
        )
    for i in range(start_interior, cfg.max_interior_nodes + 1):
        nodes = build_node_set(domain, m, i, cfg.halton_skip)
        try:
            volq = build_volume_quadrature(
                space, domain, nodes, cfg,
                surface_quadrature=(
                    surfq if cfg.volume_targets == "boundary" else None
                ),
            )
            return nodes, surfq, volq
        except PocsFailure:
            continue
    raise EscalationError(
        f"no volume quadrature up to {cfg.max_interior_nodes} interior nodes"
    )
