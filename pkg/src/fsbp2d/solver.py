"""Semi-discretization and SSPRK(3,3) time integration for linear advection.

Boundary data enters weakly: on a single element through the penalty term
P^{-1} (a Bx + b By)(u - g), and in the multi-block form through local
Lax-Friedrichs fluxes at faces, with the outer state taken from the matched
neighbor node, from the inflow data where a*nx + b*ny < 0, or mirrored from
the inside at outflow. Mass and energy diagnostics use the operators' own
norm matrices.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .fspace import BasisFunction, Product, TrigLinear
from .kernels import rhs_kernel
from .mesh import Mesh
from .operator import SbpOperator


class SolverError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# problems and sources
# ---------------------------------------------------------------------------

class SourceTerm:
    """Source of the form s(u, x, y) = base(x, y) - u."""

    def base(self, x, y):
        raise NotImplementedError

    def nodal(self, u, x, y, t):
        return self.base(x, y) - u


@dataclass
class PaperLiteralSource(SourceTerm):
    """The inhomogeneous test source, verbatim additive trig terms.

    Note the additive terms sin(wx) + sin(wy): with a = b = 1 this source
    does NOT make sin(wx) sin(wy) a steady solution; it is kept for fidelity
    and reported separately. Use MmsSource for a self-consistent steady test.
    """

    omega: float

    def base(self, x, y):
        w = self.omega
        return (
            w * np.cos(w * x) * np.sin(w * y)
            + w * np.sin(w * x) * np.cos(w * y)
            + np.sin(w * x)
            + np.sin(w * y)
        )


@dataclass
class MmsSource(SourceTerm):
    """Manufactured source a ux* + b uy* + (u* - u) for a target steady state."""

    target: BasisFunction
    a: float
    b: float

    def base(self, x, y):
        gx, gy = self.target.grad(x, y)
        return self.a * gx + self.b * gy + self.target.value(x, y)


@dataclass
class AdvectionProblem:
    a: float
    b: float
    u0: callable  # u0(x, y)
    g: callable  # g(t, x, y), used on the inflow boundary
    source: SourceTerm | None = None
    final_time: float = 1.0
    exact: callable | None = None  # exact(t, x, y)
    c_max: float | None = None

    def __post_init__(self):
        if abs(self.a) + abs(self.b) <= 0.0:
            raise ValueError("advection velocity must be nonzero")

    @property
    def wave_speed(self) -> float:
        return self.c_max if self.c_max is not None else max(abs(self.a), abs(self.b))


def advected_sine_problem(a=1.0, b=1.0, omega=np.pi, final_time=1.0
                          ) -> AdvectionProblem:
    """u0 = sin(omega (x+y)); exact solution advects with speed (a, b)."""

    def exact(t, x, y):
        return np.sin(omega * (x + y - (a + b) * t))

    return AdvectionProblem(
        a=a, b=b,
        u0=lambda x, y: exact(0.0, x, y),
        g=lambda t, x, y: exact(t, x, y),
        final_time=final_time,
        exact=exact,
    )


def zero_problem(a=1.0, b=1.0, final_time=1.0) -> AdvectionProblem:
    zero2 = lambda x, y: np.zeros_like(x)
    return AdvectionProblem(
        a=a, b=b, u0=zero2, g=lambda t, x, y: np.zeros_like(x),
        final_time=final_time, exact=lambda t, x, y: np.zeros_like(x),
    )


def steady_trig_target(omega: float) -> BasisFunction:
    return Product(
        TrigLinear("sin", omega, 1.0, 0.0), TrigLinear("sin", omega, 0.0, 1.0)
    )


def steady_problem(a=1.0, b=1.0, omega=2.0 * np.pi, final_time=2.0,
                   source_mode="mms") -> AdvectionProblem:
    """Zero data with a source whose steady state is sin(wx) sin(wy).

    source_mode "mms" manufactures the consistent source; "paper_literal"
    keeps the verbatim additive form (whose steady state differs).
    """
    target = steady_trig_target(omega)
    if source_mode == "mms":
        source = MmsSource(target, a, b)
    elif source_mode == "paper_literal":
        source = PaperLiteralSource(omega)
    else:
        raise ValueError(f"unknown source mode {source_mode!r}")
    zero2 = lambda x, y: np.zeros_like(x)
    return AdvectionProblem(
        a=a, b=b, u0=zero2, g=lambda t, x, y: np.zeros_like(x),
        source=source, final_time=final_time,
        exact=lambda t, x, y: target.value(x, y),
    )


@dataclass
class SolverConfig:
    dt: float = 1e-3
    record_every: int = 10
    backend: str | None = None  # None = kernels module default

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")


# ---------------------------------------------------------------------------
# single-domain form
# ---------------------------------------------------------------------------

def llf_flux(u_in, u_out, n, a, b, c_max):
    """Local Lax-Friedrichs fluxes (fx*, fy*) across a face with normal n."""
    nx, ny = n[..., 0], n[..., 1]
    jump = np.asarray(u_out) - np.asarray(u_in)
    mean = 0.5 * (np.asarray(u_in) + np.asarray(u_out))
    fx = a * mean - np.sign(nx) * 0.5 * c_max * jump
    fy = b * mean - np.sign(ny) * 0.5 * c_max * jump
    return fx, fy


def make_g_vec(op: SbpOperator, u, g_values, a, b):
    """Boundary data vector: g at inflow nodes, u itself elsewhere.

    g_values holds boundary data per surface node (length n_surface).
    Interior entries are never touched by the boundary matrices; they are
    set to u for definiteness.
    """
    normals = op.nodes.all_surface_normals()
    flow = a * normals[:, 0] + b * normals[:, 1]
    g_vec = u.copy()
    ns = op.n_surface
    g_vec[:ns] = np.where(flow < 0.0, g_values, u[:ns])
    return g_vec


def rhs_single_domain(op: SbpOperator, u, g_vec, a, b, source_vals=None):
    """-a Dx u - b Dy u + P^{-1} (a Bx + b By)(u - g)."""
    du = -(a * (op.Dx @ u) + b * (op.Dy @ u))
    du += (a * op.bx_diag + b * op.by_diag) * (u - g_vec) / op.P_diag
    if source_vals is not None:
        du += source_vals
    return du


# ---------------------------------------------------------------------------
# multi-block form
# ---------------------------------------------------------------------------

@dataclass
class RunContext:
    """Flattened per-class tables driving the RHS kernels."""

    mesh: Mesh
    class_ids: list
    class_of: np.ndarray  # (E,)
    Dx: np.ndarray  # (C, N, N)
    Dy: np.ndarray
    P: np.ndarray  # (C, N)
    Pinv: np.ndarray
    Bxd: np.ndarray  # (C, N)
    Byd: np.ndarray
    nrm: np.ndarray  # (C, ns, 2)
    ns: int
    coords: np.ndarray  # (E, N, 2) global
    nbr_elem: np.ndarray  # (E, ns), -1 at physical boundary
    nbr_slot: np.ndarray
    b_elem: np.ndarray  # boundary slot lists
    b_slot: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n_elements(self) -> int:
        return len(self.class_of)

    @property
    def n_nodes(self) -> int:
        return self.coords.shape[1]


def build_context(mesh: Mesh) -> RunContext:
    if not mesh.operators:
        raise SolverError("mesh has no operators; call build_operators first")
    class_ids = sorted(mesh.operators)
    cindex = {cid: k for k, cid in enumerate(class_ids)}
    ops = [mesh.operators[cid] for cid in class_ids]
    N = ops[0].n_nodes
    ns_set = {op.n_surface for op in ops}
    if len(ns_set) != 1 or len({op.n_nodes for op in ops}) != 1:
        raise SolverError("congruence classes disagree on node counts")
    ns = ns_set.pop()

    Dx = np.stack([op.Dx for op in ops])
    Dy = np.stack([op.Dy for op in ops])
    P = np.stack([op.P_diag for op in ops])
    Bxd = np.stack([op.bx_diag for op in ops])
    Byd = np.stack([op.by_diag for op in ops])
    nrm = np.stack([op.nodes.all_surface_normals() for op in ops])

    E = mesh.n_elements
    class_of = np.array([cindex[e.class_id] for e in mesh.elements], dtype=np.int64)
    pts = np.stack([op.points() for op in ops])  # (C, N, 2)
    origins = np.array([e.origin for e in mesh.elements])
    coords = pts[class_of] + origins[:, None, :]

    nbr_elem = np.full((E, ns), -1, dtype=np.int64)
    nbr_slot = np.zeros((E, ns), dtype=np.int64)
    for pair in mesh.pairings:
        if pair.idx_left is None:
            raise SolverError("faces not matched; call match_faces first")
        nbr_elem[pair.elem_left, pair.idx_left] = pair.elem_right
        nbr_slot[pair.elem_left, pair.idx_left] = pair.idx_right
        nbr_elem[pair.elem_right, pair.idx_right] = pair.elem_left
        nbr_slot[pair.elem_right, pair.idx_right] = pair.idx_left

    b_elem, b_slot = [], []
    for face in mesh.boundary:
        op = mesh.operators[mesh.elements[face.elem].class_id]
        sl = op.nodes.part_slices()[face.part]
        for m in range(sl.start, sl.stop):
            if nbr_elem[face.elem, m] != -1:
                raise SolverError("boundary face overlaps a pairing")
            b_elem.append(face.elem)
            b_slot.append(m)
    b_elem = np.asarray(b_elem, dtype=np.int64)
    b_slot = np.asarray(b_slot, dtype=np.int64)

    covered = (nbr_elem >= 0)
    covered[b_elem, b_slot] = True
    if not covered.all():
        raise SolverError("some surface nodes are neither paired nor boundary")
    return RunContext(
        mesh=mesh, class_ids=class_ids, class_of=class_of, Dx=Dx, Dy=Dy,
        P=P, Pinv=1.0 / P, Bxd=Bxd, Byd=Byd, nrm=nrm, ns=ns, coords=coords,
        nbr_elem=nbr_elem, nbr_slot=nbr_slot, b_elem=b_elem, b_slot=b_slot,
    )


def _boundary_outer_state(ctx: RunContext, u, t, problem: AdvectionProblem):
    """Outer states at physical-boundary slots per the inflow/outflow rule."""
    bx = ctx.coords[ctx.b_elem, ctx.b_slot, 0]
    by = ctx.coords[ctx.b_elem, ctx.b_slot, 1]
    n = ctx.nrm[ctx.class_of[ctx.b_elem], ctx.b_slot]
    flow = problem.a * n[:, 0] + problem.b * n[:, 1]
    u_in = u[ctx.b_elem, ctx.b_slot]
    g = np.asarray(problem.g(t, bx, by), dtype=float)
    return np.where(flow < 0.0, g, u_in)


def rhs_multiblock(ctx: RunContext, u, t, problem: AdvectionProblem,
                   backend: str | None = None, src_base=None):
    """Per-element du/dt of the coupled multi-block semi-discretization."""
    E, N = u.shape
    if src_base is not None:
        src = src_base - u
    elif problem.source is not None:
        src = problem.source.nodal(
            u, ctx.coords[..., 0], ctx.coords[..., 1], t
        )
    else:
        src = np.zeros_like(u)

    bvals = np.zeros((E, ctx.ns))
    if len(ctx.b_elem):
        bvals[ctx.b_elem, ctx.b_slot] = _boundary_outer_state(ctx, u, t, problem)

    du = np.empty_like(u)
    kern = rhs_kernel(backend)
    kern(u, du, ctx.class_of, ctx.Dx, ctx.Dy, ctx.Pinv, ctx.Bxd, ctx.Byd,
         ctx.ns, ctx.nbr_elem, ctx.nbr_slot, ctx.nrm, bvals, src,
         float(problem.a), float(problem.b), float(problem.wave_speed))
    if np.isnan(du).any():
        e = int(np.argwhere(np.isnan(du).any(axis=1))[0][0])
        raise SolverError(f"NaN in RHS at t={t:.6g}, element {e}")
    return du


def boundary_flux_quadrature(ctx: RunContext, u, t, problem: AdvectionProblem):
    """Physical-boundary flux integral sum_m [Bx fx* + By fy*] at slot m.

    With conservative operators the total mass rate equals the negative of
    this quantity; interior faces cancel exactly.
    """
    if not len(ctx.b_elem):
        return 0.0
    uo = _boundary_outer_state(ctx, u, t, problem)
    ui = u[ctx.b_elem, ctx.b_slot]
    cls = ctx.class_of[ctx.b_elem]
    n = ctx.nrm[cls, ctx.b_slot]
    fx, fy = llf_flux(ui, uo, n, problem.a, problem.b, problem.wave_speed)
    bx = ctx.Bxd[cls, ctx.b_slot]
    by = ctx.Byd[cls, ctx.b_slot]
    return float(np.sum(bx * fx + by * fy))


def total_mass(ctx: RunContext, u) -> float:
    return float(np.sum(ctx.P[ctx.class_of] * u))


def total_energy(ctx: RunContext, u) -> float:
    return float(np.sum(ctx.P[ctx.class_of] * u * u))


def sample_initial_state(ctx: RunContext, problem: AdvectionProblem):
    return np.asarray(
        problem.u0(ctx.coords[..., 0], ctx.coords[..., 1]), dtype=float
    ).reshape(ctx.n_elements, ctx.n_nodes)


def compute_error(ctx: RunContext, u, exact, t) -> float:
    """Root mean square nodal error over all elements and nodes."""
    ref = exact(t, ctx.coords[..., 0], ctx.coords[..., 1])
    return float(np.sqrt(np.mean((ref - u) ** 2)))


# ---------------------------------------------------------------------------
# time integration
# ---------------------------------------------------------------------------

def ssprk33_step(rhs, u, t, dt):
    """One step of the three-stage third-order SSP Runge-Kutta scheme."""
    u1 = u + dt * rhs(u, t)
    u2 = 0.75 * u + 0.25 * (u1 + dt * rhs(u1, t + dt))
    return u / 3.0 + (2.0 / 3.0) * (u2 + dt * rhs(u2, t + 0.5 * dt))


def _cfl_heuristic(ctx: RunContext, problem, dt):
    min_p = float(ctx.P.min())
    max_b = float(max(np.max(np.abs(ctx.Bxd)), np.max(np.abs(ctx.Byd))))
    lhs = dt * problem.wave_speed / ctx.mesh.h
    rhs = 0.5 * min_p / max_b if max_b > 0 else np.inf
    return lhs, rhs


def run_experiment(mesh: Mesh, problem: AdvectionProblem, scfg: SolverConfig):
    """Integrate to the final time, recording (t, error, mass, energy).

    Returns a dict with the records array (columns t, error, mass, energy;
    error is nan without an exact solution), the final state, and run
    metadata. The time step is fixed; a CFL-style heuristic only warns.
    """
    ctx = build_context(mesh)
    u = sample_initial_state(ctx, problem)
    dt, T = scfg.dt, problem.final_time

    lhs, bound = _cfl_heuristic(ctx, problem, dt)
    cfl_flag = lhs > bound
    if cfl_flag:
        warnings.warn(
            f"time step heuristic: dt*c/h = {lhs:.3e} exceeds 0.5*minP/maxB "
            f"= {bound:.3e}; the run continues",
            stacklevel=2,
        )

    src_base = None
    if problem.source is not None and isinstance(problem.source, SourceTerm):
        try:
            src_base = problem.source.base(
                ctx.coords[..., 0], ctx.coords[..., 1]
            )
        except NotImplementedError:
            src_base = None

    def rhs(state, time):
        return rhs_multiblock(ctx, state, time, problem,
                              backend=scfg.backend, src_base=src_base)

    def record(time, state):
        err = (
            compute_error(ctx, state, problem.exact, time)
            if problem.exact is not None else np.nan
        )
        rows.append((time, err, total_mass(ctx, state), total_energy(ctx, state)))

    n_steps = int(round(T / dt))
    remainder = T - n_steps * dt
    rows = []
    t = 0.0
    record(t, u)
    for k in range(n_steps):
        u = ssprk33_step(rhs, u, t, dt)
        t = (k + 1) * dt
        if np.isnan(u).any():
            raise SolverError(f"NaN state after step {k + 1} (t={t:.6g})")
        if (k + 1) % scfg.record_every == 0 or k + 1 == n_steps:
            record(t, u)
    if abs(remainder) > 1e-12 * max(1.0, T):
        u = ssprk33_step(rhs, u, t, remainder)
        t = T
        record(t, u)

    records = np.asarray(rows)
    return {
        "records": records,
        "final_state": u,
        "final_time": t,
        "context": ctx,
        "cfl_warned": bool(cfl_flag),
        "final_error": float(records[-1, 1]),
    }
