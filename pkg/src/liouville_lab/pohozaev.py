"""Pohozaev balance on the half-disk chart ``B+ = {|x| <= 1, x1 >= 0}``.

Pairing ``-Δu = f`` with ``<x - p, ∇u>`` for a pivot ``p = (0, p2)`` on the
flat side gives, with outward normal ``nu``,

    ∫ <x-p, ∇u> f  =  -A(c),   A(c) = ∫_∂ <x-p, ∇u><nu, ∇u> + c ∫_∂ <x-p, nu> |∇u|^2,

at ``c = -1/2``. For ``f = lambda V w e^u`` with ``w = |x|^(-2 alpha)`` and ``V``
frozen at ``V0``, integrating by parts on the right instead gives

    ∫ <x-p, ∇u> f  =  B - 2(1-alpha) V0 ∫ w e^u - 2 alpha V0 p2 ∫ x2 |x|^(-2 alpha-2) e^u

plus the error from freezing ``V``. Both sides are assembled here from
nodal quadrature and least-squares gradients.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .blowup import BlowupCandidate, FieldData, extract
from .mesh import HalfDiskGeometry, build_half_disk
from .solver import LiouvilleProblem, Potential, SolutionField, newton_solve
from .tables import write_json, write_rows

# Coefficient on the boundary |∇u|^2 term and the overall sign of A, both
# fixed by the manufactured calibration (see calibrate_boundary_coefficient).
DEFAULT_COEFF = -0.5
IDENTITY_SIGN = -1.0
_STENCIL_FACTOR = 1.6
_MIN_STENCIL = 10


@dataclass(frozen=True)
class PivotPoint:
    p2: float

    @property
    def p(self) -> np.ndarray:
        return np.array([0.0, self.p2])

    @classmethod
    def from_center(cls, center) -> "PivotPoint":
        return cls(float(center[1]))


def _pivot(pivot) -> np.ndarray:
    if isinstance(pivot, PivotPoint):
        return pivot.p
    p = np.asarray(pivot, dtype=float)
    if p.shape != (2,) or p[0] != 0.0:
        raise ValueError("pivot must be a point (0, p2) on the flat side")
    return p


def _stencil_scale(mesh) -> np.ndarray:
    # interior nodes use their own cell size, boundary nodes borrow the nearest interior one
    size = np.where(mesh.cell_area > 0.0, mesh.cell_size, np.nan)
    bad = ~np.isfinite(size)
    if np.any(bad):
        inner = mesh.interior
        from scipy.spatial import cKDTree

        _, j = cKDTree(mesh.nodes[inner]).query(mesh.nodes[bad])
        size[bad] = mesh.cell_size[inner[j]]
    return size


def gradient_field(mesh, u) -> np.ndarray:
    """Nodal gradient from a weighted quadratic least-squares fit over nearby nodes.

    The neighbourhood of a node is the ball of radius ``1.6 x`` its cell size,
    so anisotropic boundary cells still see points in both directions; at the
    boundary the stencil is one-sided by construction. Exact for quadratics.
    """
    u = np.asarray(u, dtype=float)
    if u.shape != (mesh.n_nodes,) or not np.all(np.isfinite(u)):
        raise ValueError("u must be a finite nodal field")
    tree = mesh.kdtree()
    scale = _stencil_scale(mesh)
    hits = tree.query_ball_point(mesh.nodes, _STENCIL_FACTOR * scale)
    for i, h in enumerate(hits):
        if len(h) < _MIN_STENCIL:
            hits[i] = list(tree.query(mesh.nodes[i], k=_MIN_STENCIL)[1])
    m = max(len(h) for h in hits)
    n = mesh.n_nodes
    idx = np.zeros((n, m), dtype=np.int64)
    wt = np.zeros((n, m))
    for i, h in enumerate(hits):
        idx[i, : len(h)] = sorted(h)
        wt[i, : len(h)] = 1.0
    d = (mesh.nodes[idx] - mesh.nodes[:, None, :]) / scale[:, None, None]
    dx, dy = d[..., 0], d[..., 1]
    A = np.stack([np.ones_like(dx), dx, dy, 0.5 * dx * dx, dx * dy, 0.5 * dy * dy], axis=-1) * wt[..., None]
    b = (u[idx] - u[:, None]) * wt
    # the constant is fitted too; data are taken relative to the centre value
    ata = np.einsum("nki,nkj->nij", A, A)
    atb = np.einsum("nki,nk->ni", A, b)
    coef = np.linalg.solve(ata, atb[..., None])[..., 0]
    return coef[:, 1:3] / scale[:, None]


def pohozaev_lhs(mesh, u, f, pivot, grad=None) -> float:
    """``∫_{B+} <x - p, ∇u> f`` by nodal quadrature."""
    p = _pivot(pivot)
    g = gradient_field(mesh, u) if grad is None else grad
    f = np.asarray(f, dtype=float)
    xp = mesh.nodes - p
    integrand = (xp[:, 0] * g[:, 0] + xp[:, 1] * g[:, 1]) * f
    inner = mesh.cell_area > 0.0
    return float(np.dot(mesh.cell_area[inner], integrand[inner]))


def _boundary_parts(geo: HalfDiskGeometry):
    mesh = geo.mesh
    arc = geo.arc_nodes
    nu_arc = mesh.nodes[arc] / np.hypot(mesh.nodes[arc, 0], mesh.nodes[arc, 1])[:, None]
    flat = geo.flat_nodes
    nu_flat = np.tile(np.asarray(geo.flat_normal, dtype=float), (flat.size, 1))
    return [(arc, geo.arc_weights, nu_arc), (flat, geo.flat_weights, nu_flat)]


def pohozaev_boundary_parts(geo: HalfDiskGeometry, u, pivot, coeff_c: float = DEFAULT_COEFF, grad=None):
    """``A(c)`` split into its arc and flat contributions."""
    p = _pivot(pivot)
    g = gradient_field(geo.mesh, u) if grad is None else grad
    out = []
    for nodes, wts, nu in _boundary_parts(geo):
        xp = geo.mesh.nodes[nodes] - p
        gi = g[nodes]
        xg = np.sum(xp * gi, axis=1)
        ng = np.sum(nu * gi, axis=1)
        xn = np.sum(xp * nu, axis=1)
        out.append(float(np.dot(wts, xg * ng + coeff_c * xn * np.sum(gi * gi, axis=1))))
    return tuple(out)


def pohozaev_boundary(geo: HalfDiskGeometry, u, pivot, coeff_c: float = DEFAULT_COEFF, grad=None) -> float:
    """``A(c) = ∫_∂ <x-p, ∇u><nu, ∇u> + c ∫_∂ <x-p, nu> |∇u|^2`` over arc and flat parts."""
    return sum(pohozaev_boundary_parts(geo, u, pivot, coeff_c, grad))


def flat_annihilation_terms(geo: HalfDiskGeometry, u, pivot, v_at_center: float, alpha: float, grad=None):
    """Flat-side pieces carrying the factor ``<x - p, nu>``: ``∫ <x-p, nu>|∇u|^2`` and the flat part of ``B``.

    Both vanish identically because ``x1 = 0`` on the flat side and ``nu = (-1, 0)``.
    """
    p = _pivot(pivot)
    g = gradient_field(geo.mesh, u) if grad is None else grad
    nodes, wts, nu = _boundary_parts(geo)[1]
    xn = np.sum((geo.mesh.nodes[nodes] - p) * nu, axis=1)
    grad_term = float(np.dot(wts, xn * np.sum(g[nodes] ** 2, axis=1)))
    return grad_term, pohozaev_B_parts(geo, u, pivot, v_at_center, alpha)[1]


def pohozaev_B_parts(geo: HalfDiskGeometry, u, pivot, v_at_center: float, alpha: float):
    p = _pivot(pivot)
    u = np.asarray(u, dtype=float)
    out = []
    for nodes, wts, nu in _boundary_parts(geo):
        x = geo.mesh.nodes[nodes]
        xn = np.sum((x - p) * nu, axis=1)
        r = np.hypot(x[:, 0], x[:, 1])
        out.append(float(v_at_center * np.dot(wts, xn * r ** (-2.0 * alpha) * np.exp(u[nodes]))))
    return tuple(out)


def pohozaev_B(geo: HalfDiskGeometry, u, pivot, v_at_center: float, alpha: float) -> float:
    """``V0 ∫_∂ <x-p, nu> |x|^(-2 alpha) e^u``; the flat part vanishes since ``x1 = 0`` there."""
    return sum(pohozaev_B_parts(geo, u, pivot, v_at_center, alpha))


def interior_terms(f: FieldData, pivot, v_at_center: float) -> tuple[float, float]:
    """``(-2(1-alpha) V0 ∫ w e^u, -2 alpha V0 p2 ∫ x2 |x|^(-2 alpha-2) e^u)``."""
    p = _pivot(pivot)
    a = f.cfg.alpha
    mesh = f.mesh
    e = np.exp(f.u)
    t1 = -2.0 * (1.0 - a) * v_at_center * float(np.dot(f.weight.corrected_cell_weight, e))
    inner = mesh.cell_area > 0.0
    x = mesh.nodes[inner]
    r2 = x[:, 0] ** 2 + x[:, 1] ** 2
    cross = float(np.dot(mesh.cell_area[inner], x[:, 1] * r2 ** (-a - 1.0) * e[inner]))
    t2 = -2.0 * a * v_at_center * p[1] * cross
    return t1, t2


def local_weighted_mass(f: FieldData, cand: BlowupCandidate, epsilon: float) -> float:
    """``∫_{B(x*, delta eps)} w e^u`` (no ``lambda V`` factor)."""
    r = np.hypot(f.mesh.nodes[:, 0] - cand.center[0], f.mesh.nodes[:, 1] - cand.center[1])
    inside = r < cand.delta * epsilon
    return float(np.dot(f.weight.corrected_cell_weight[inside], np.exp(f.u[inside])))


def center_strength(f: FieldData, cand: BlowupCandidate) -> float:
    """``V(x*)`` as it enters the equation, i.e. ``lambda V`` at the candidate node."""
    return float(f.lam * f.v[cand.node])


def theorem2_residual(f: FieldData, cand: BlowupCandidate, epsilon: float) -> float:
    """``2 (1 - 2 alpha) V(x*) ∫_{B(x*, delta eps)} w e^u``."""
    return 2.0 * (1.0 - 2.0 * f.cfg.alpha) * center_strength(f, cand) * local_weighted_mass(f, cand, epsilon)


def grad_diff_norm(mesh, u, u_ref, q: float) -> float:
    """``(∫ |∇(u - u_ref)|^q)^(1/q)`` for ``1 <= q < 2``.

    Both fields are expected to vanish on the boundary; then this is a norm
    on nodal fields.
    """
    if not 1.0 <= q < 2.0:
        raise ValueError("q must lie in [1, 2)")
    g = gradient_field(mesh, np.asarray(u, dtype=float) - np.asarray(u_ref, dtype=float))
    inner = mesh.cell_area > 0.0
    mag = np.hypot(g[inner, 0], g[inner, 1])
    return float(np.dot(mesh.cell_area[inner], mag**q) ** (1.0 / q))


def holder_modulus(V: Potential, center, radius: float, s: float, n_radial: int = 64, n_angle: int = 64) -> float:
    """Empirical ``max |V(x) - V(c)| / |x - c|^s`` over a polar sample of ``B(c, radius)``."""
    if not 0.5 < s <= 1.0:
        raise ValueError("s must lie in (1/2, 1]")
    c = np.asarray(center, dtype=float)
    rho = radius * np.geomspace(1e-6, 1.0, n_radial)
    th = np.linspace(0.0, 2.0 * np.pi, n_angle, endpoint=False)
    pts = c + (rho[:, None, None] * np.stack([np.cos(th), np.sin(th)], axis=-1)[None]).reshape(-1, 2)
    d = np.hypot(pts[:, 0] - c[0], pts[:, 1] - c[1])
    v0 = float(V(c[None, :])[0])
    return float(np.max(np.abs(V(pts) - v0) / d**s))


# -- manufactured check ---------------------------------------------------
def manufactured_field(x) -> tuple[np.ndarray, np.ndarray]:
    """``u = x1 (1 - |x|^2)`` and ``f = -Δu = 8 x1``."""
    x = np.asarray(x, dtype=float)
    r2 = x[:, 0] ** 2 + x[:, 1] ** 2
    return x[:, 0] * (1.0 - r2), 8.0 * x[:, 0]


@dataclass(frozen=True)
class ManufacturedTerms:
    lhs: float
    A_minus_half: float
    A_plus_one: float
    flat_grad: float
    flat_B: float
    gap: float


def _rel_gap(a: float, b: float) -> float:
    den = max(abs(a), abs(b))
    return 0.0 if den == 0.0 else abs(a - b) / den


def manufactured_terms(n_r: int = 64, n_t: int = 128, zero: bool = False, pivot=(0.0, 0.0)) -> ManufacturedTerms:
    geo, mesh = build_half_disk(n_r, n_t)
    u, f = manufactured_field(mesh.nodes)
    if zero:
        u, f = np.zeros_like(u), np.zeros_like(f)
    g = gradient_field(mesh, u)
    lhs = pohozaev_lhs(mesh, u, f, pivot, g)
    a_half = pohozaev_boundary(geo, u, pivot, -0.5, g)
    a_one = pohozaev_boundary(geo, u, pivot, 1.0, g)
    flat_g, flat_b = flat_annihilation_terms(geo, u, pivot, 1.0, 0.25, g)
    gap = _rel_gap(lhs, IDENTITY_SIGN * (a_half if DEFAULT_COEFF == -0.5 else a_one))
    return ManufacturedTerms(lhs, a_half, a_one, flat_g, flat_b, gap)


def manufactured_identity_check(n_r: int = 64, n_t: int = 128, zero: bool = False) -> float:
    """Relative gap of ``lhs = sign * A(c)`` on ``u = x1 (1 - |x|^2)``, ``f = 8 x1``."""
    return manufactured_terms(n_r, n_t, zero).gap


def calibrate_boundary_coefficient(n_r: int = 64, n_t: int = 128, tol: float = 1e-3) -> list[tuple[float, float]]:
    """All ``(coeff_c, sign)`` with ``coeff_c in {1, -1/2}``, ``sign in {1, -1}`` closing the manufactured identity."""
    t = manufactured_terms(n_r, n_t)
    out = []
    for c, a in ((1.0, t.A_plus_one), (-0.5, t.A_minus_half)):
        for sign in (1.0, -1.0):
            if _rel_gap(t.lhs, sign * a) <= tol:
                out.append((c, sign))
    return out


# -- reports on solutions ---------------------------------------------------
def masked_resolve(problem: LiouvilleProblem, sol: SolutionField, cand: BlowupCandidate, epsilon: float,
                   tol: float = 1e-10) -> SolutionField:
    """Far-field surrogate of the limit: switch the density off in ``B(x*, delta eps)`` and put the
    ball's mass ``lambda ∫_B V w e^u`` at ``x*`` as a point charge, then re-solve."""
    nodes = problem.mesh.nodes[problem.idx]
    inside = np.hypot(nodes[:, 0] - cand.center[0], nodes[:, 1] - cand.center[1]) < cand.delta * epsilon
    u_int = sol.u[problem.idx]
    d = problem.density(u_int, sol.lam)
    m_ball = float(np.dot(problem.area[inside], d[inside]))
    j = int(np.flatnonzero(problem.idx == cand.node)[0])
    dirac = np.zeros(problem.n)
    dirac[j] = m_ball / problem.area[j]
    forcing = problem.matvec(dirac)
    mask = (~inside).astype(float)
    u0 = sol.u.copy()
    u0[problem.idx[inside]] = 0.0
    return newton_solve(problem, sol.lam, u0, tol=tol, source_mask=mask, forcing=forcing)


@dataclass
class PohozaevReport:
    lhs_interior: float
    A_term: float
    B_term: float
    interior_2a: tuple[float, float]
    residual: float
    identity_gap: float
    ibp_gap: float
    local_weighted_mass: float
    v_at_center: float
    grad_q_norms: dict = field(default_factory=dict)
    center: tuple[float, float] = (0.0, 0.0)
    peak: float = 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["interior_2a"] = list(self.interior_2a)
        d["center"] = list(self.center)
        d["grad_q_norms"] = {repr(float(k)): v for k, v in self.grad_q_norms.items()}
        return d

    def to_json(self, path) -> None:
        write_json(path, self.to_dict())


def pohozaev_report(problem: LiouvilleProblem, geo: HalfDiskGeometry, sol: SolutionField, epsilon: float = 0.1,
                    q_values=(1.5,), cand: BlowupCandidate | None = None, rhs=None) -> PohozaevReport:
    """Every term of the balance for one solution on the half-disk chart.

    ``rhs`` overrides the right side ``lambda V w e^u`` (for manufactured
    fields that do not solve the equation).
    """
    fd = FieldData.from_solution(problem, sol)
    if cand is None:
        rep = extract(fd, epsilon, peak_threshold=-math.inf, max_candidates=1)
        cand = rep.candidates[0]
    pivot = PivotPoint.from_center(cand.center)
    v0 = center_strength(fd, cand)
    u = np.asarray(sol.u)
    g = gradient_field(problem.mesh, u)
    if rhs is None:
        rhs = np.zeros(problem.mesh.n_nodes)
        rhs[problem.idx] = problem.density(u[problem.idx], sol.lam)
    lhs = pohozaev_lhs(problem.mesh, u, rhs, pivot, g)
    A = pohozaev_boundary(geo, u, pivot, DEFAULT_COEFF, g)
    B = pohozaev_B(geo, u, pivot, v0, problem.cfg.alpha)
    t = interior_terms(fd, pivot, v0)
    norms = {}
    if q_values:
        ref = masked_resolve(problem, sol, cand, epsilon)
        norms = {float(q): grad_diff_norm(problem.mesh, u, ref.u, q) for q in q_values}
    return PohozaevReport(
        lhs_interior=lhs,
        A_term=A,
        B_term=B,
        interior_2a=t,
        residual=theorem2_residual(fd, cand, epsilon),
        identity_gap=_rel_gap(lhs, IDENTITY_SIGN * A),
        ibp_gap=_rel_gap(lhs, B + t[0] + t[1]),
        local_weighted_mass=local_weighted_mass(fd, cand, epsilon),
        v_at_center=v0,
        grad_q_norms=norms,
        center=cand.center,
        peak=cand.peak,
    )


def write_family_csv(reports, path) -> None:
    """One row per family member, for trend plots."""
    qs = sorted({q for r in reports for q in r.grad_q_norms})
    cols = ["member", "peak", "lhs_interior", "A_term", "B_term", "interior_2a_0", "interior_2a_1",
            "residual", "identity_gap", "ibp_gap", "local_weighted_mass", "v_at_center"]
    rows = []
    for i, r in enumerate(reports):
        row = [i, r.peak, r.lhs_interior, r.A_term, r.B_term, r.interior_2a[0], r.interior_2a[1],
               r.residual, r.identity_gap, r.ibp_gap, r.local_weighted_mass, r.v_at_center]
        rows.append([row[0]] + [float(v) for v in row[1:]] + [float(r.grad_q_norms.get(q, math.nan)) for q in qs])
    write_rows(path, cols + [f"grad_q{q:g}" for q in qs], rows)
