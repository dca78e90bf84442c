"""Discrete solver for ``u = G[lambda V w e^u]`` and exact synthetic fields.

Unknowns are the interior nodal values; boundary nodes carry ``u = 0``. The
density on a cell is ``lambda V(node) wbar e^u(node)`` where ``wbar`` is the
cell-averaged weight, so the singular cell at ``x0`` is integrated exactly.
Linear systems are solved by GMRES against the cached dense Green matrix.
The Jacobian ``I - K diag(d)`` is a compact perturbation of the identity and
GMRES needs few iterations at any resolution.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, eigs, gmres

from .errors import BlowupEscape, ConfigError, FoldDetected, NonConvergence
from .mesh import DiskMesh, SingularityConfig
from .quadrature import NEAR_FACTOR, GreenOperator, build_weight
from .tables import write_rows

BLOWUP_GUARD = 700.0
MAX_HALVINGS = 30
MASS_CAP = 16.0 * math.pi
FOLD_TOL = 0.05
_ROW_BLOCK = 256


@dataclass(frozen=True)
class Potential:
    """Prescribed curvature ``V``: a constant or ``level - A min(|x-c|, r)^s`` clipped to ``[0, b]``."""

    kind: str = "constant"
    level: float = 1.0
    bound_b: float | None = None
    hoelder_A: float = 0.0
    hoelder_s: float = 1.0
    bump_center: tuple[float, float] = (0.0, 0.0)
    bump_radius: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant", "hoelder_bump"):
            raise ConfigError(f"unknown potential kind {self.kind!r}")
        if not (math.isfinite(self.level) and self.level >= 0.0):
            raise ConfigError("level must be finite and >= 0")
        b = self.level if self.bound_b is None else float(self.bound_b)
        if not (math.isfinite(b) and b >= 0.0):
            raise ConfigError("bound_b must be finite and >= 0")
        object.__setattr__(self, "bound_b", b)
        if self.kind == "constant" and self.level > b:
            raise ConfigError("constant level exceeds bound_b")
        if not (math.isfinite(self.hoelder_A) and self.hoelder_A >= 0.0):
            raise ConfigError("hoelder_A must be >= 0")
        if self.kind == "hoelder_bump" and not (0.5 < self.hoelder_s <= 1.0):
            raise ConfigError("hoelder_s must lie in (1/2, 1]")
        if not (math.isfinite(self.bump_radius) and self.bump_radius >= 0.0):
            raise ConfigError("bump_radius must be >= 0")
        object.__setattr__(self, "bump_center", tuple(float(c) for c in self.bump_center))

    @classmethod
    def constant(cls, level: float = 1.0) -> "Potential":
        return cls("constant", level)

    @classmethod
    def bump(cls, level=1.0, A=1.0, s=0.75, center=(0.5, 0.0), radius=0.5, bound_b=None) -> "Potential":
        return cls("hoelder_bump", level, bound_b, A, s, center, radius)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "constant":
            return np.full(x.shape[:-1], self.level)
        d = np.hypot(x[..., 0] - self.bump_center[0], x[..., 1] - self.bump_center[1])
        v = self.level - self.hoelder_A * np.minimum(d, self.bump_radius) ** self.hoelder_s
        return np.clip(v, 0.0, self.bound_b)


@dataclass(frozen=True)
class SolutionField:
    """An accepted (or flagged best) discrete solution; ``u`` is read-only."""

    u: np.ndarray
    lam: float
    residual_norm: float
    total_mass: float
    weight_mass: float
    newton_iters: int
    converged: bool = True
    nodes: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        u = np.array(self.u, dtype=float)
        u.setflags(write=False)
        object.__setattr__(self, "u", u)

    @property
    def peak_index(self) -> int:
        return int(np.argmax(self.u))

    @property
    def peak(self) -> float:
        return float(self.u[self.peak_index])

    @property
    def peak_location(self) -> tuple[float, float]:
        p = self.nodes[self.peak_index]
        return (float(p[0]), float(p[1]))

    def summary(self) -> dict:
        return {
            "lambda": self.lam,
            "mass": self.total_mass,
            "weight_mass": self.weight_mass,
            "peak": self.peak,
            "peak_location": list(self.peak_location),
            "iters": self.newton_iters,
            "residual_norm": self.residual_norm,
            "converged": self.converged,
        }

    def to_csv(self, path) -> None:
        rows = ((i, float(p[0]), float(p[1]), float(v)) for i, (p, v) in enumerate(zip(self.nodes, self.u)))
        write_rows(path, ["idx", "x1", "x2", "u"], rows)


class LiouvilleProblem:
    """Mesh, weight, potential and the interior Green matrix for one configuration."""

    def __init__(
        self,
        mesh: DiskMesh,
        cfg: SingularityConfig,
        potential: Potential | None = None,
        near_factor: float = NEAR_FACTOR,
        threads: int = 1,
    ):
        self.mesh = mesh
        self.cfg = cfg
        self.potential = potential or Potential()
        self.threads = max(1, int(threads))
        self.weight = build_weight(mesh, cfg, near_factor)
        self.idx = mesh.interior
        self.op = GreenOperator(mesh, targets=mesh.nodes[self.idx], near_factor=near_factor, threads=threads)
        self.v = self.potential(mesh.nodes[self.idx])
        self.wbar = self.weight.cell_average[self.idx]
        self.area = mesh.cell_area[self.idx]
        self.vw = self.v * self.wbar
        self._blocks = [slice(s, min(self.n, s + _ROW_BLOCK)) for s in range(0, self.n, _ROW_BLOCK)]

    @property
    def n(self) -> int:
        return self.idx.size

    @property
    def K(self) -> np.ndarray:
        return self.op.matrix()

    def matvec(self, x) -> np.ndarray:
        """``K x`` over fixed row blocks, so results do not depend on the thread count."""
        k = self.K
        out = np.empty(self.n)

        def run(b):
            out[b] = k[b] @ x

        if self.threads > 1:
            with ThreadPoolExecutor(self.threads) as ex:
                list(ex.map(run, self._blocks))
        else:
            for b in self._blocks:
                run(b)
        return out

    def rmatvec(self, x) -> np.ndarray:
        return self.K.T @ x

    # -- field helpers ---------------------------------------------------
    def full(self, u_int) -> np.ndarray:
        u = np.zeros(self.mesh.n_nodes)
        u[self.idx] = u_int
        return u

    def interior_values(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape == (self.mesh.n_nodes,):
            return u[self.idx].copy()
        if u.shape == (self.n,):
            return u.copy()
        raise ValueError("field does not match the mesh")

    def density(self, u_int, lam) -> np.ndarray:
        if np.any(u_int > BLOWUP_GUARD):
            raise BlowupEscape("u exceeds the overflow guard; shorten the continuation step")
        return lam * self.vw * np.exp(u_int)

    def masses(self, u_int, lam) -> tuple[float, float]:
        e = np.exp(u_int)
        return float(lam * np.dot(self.area * self.vw, e)), float(np.dot(self.area * self.wbar, e))

    def field(self, u_int, lam, res, iters, converged=True) -> SolutionField:
        m, wm = self.masses(u_int, lam)
        return SolutionField(self.full(u_int), float(lam), float(res), m, wm, int(iters), converged, self.mesh.nodes)

    # -- spectral diagnostics -------------------------------------------
    def fold_gap(self, u_int, lam) -> float:
        """``min |1 - theta|`` over the leading eigenvalues theta of ``K diag(d)``; zero at a fold."""
        d = self.density(u_int, lam)
        if not np.any(d):
            return 1.0
        op = LinearOperator((self.n, self.n), matvec=lambda v: self.matvec(d * v), dtype=float)
        theta = eigs(op, k=3, which="LR", v0=np.ones(self.n), return_eigenvectors=False, tol=1e-8)
        return float(np.min(np.abs(1.0 - theta.real)))


def _gmres(op, b, tol):
    x, _ = gmres(op, b, rtol=1e-11, atol=0.01 * tol, restart=80, maxiter=10)
    return x


def residual(problem: LiouvilleProblem, u, lam: float) -> np.ndarray:
    """``u - G[lambda V w e^u]`` as a nodal field (zero on boundary nodes for admissible ``u``)."""
    u_int = problem.interior_values(u)
    r = u_int - problem.matvec(problem.density(u_int, lam))
    out = np.asarray(u, dtype=float).copy() if np.shape(u) == (problem.mesh.n_nodes,) else problem.full(0.0)
    out[problem.idx] = r
    return out


def total_mass(problem: LiouvilleProblem, sol: SolutionField) -> tuple[float, float]:
    """``(∫ lambda V w e^u, ∫ w e^u)`` recomputed from the stored field."""
    return problem.masses(sol.u[problem.idx], sol.lam)


def _res(problem, u_int, lam, mask=None, forcing=None):
    d = problem.density(u_int, lam)
    r = u_int - problem.matvec(d if mask is None else d * mask)
    return r if forcing is None else r - forcing


def newton_solve(
    problem: LiouvilleProblem,
    lam: float,
    u0=None,
    tol: float = 1e-10,
    max_iter: int = 50,
    damping: float = 1.0,
    source_mask=None,
    forcing=None,
    min_step: float = 2.0**-MAX_HALVINGS,
) -> SolutionField:
    """Damped Newton with line-search halving and a Picard fallback.

    Returns the accepted solution, or the best iterate flagged
    ``converged=False`` when ``max_iter`` runs out. Raises
    :class:`FoldDetected` when the iteration stalls at a singular Jacobian.
    ``source_mask`` (interior 0/1 vector) switches the density off on some
    cells and ``forcing`` (interior vector) is added to the Green potential;
    both serve the masked re-solve of the Pohozaev checker. The line search
    halves the step until it drops below ``min_step``.
    """
    if not tol > 0.0:
        raise ValueError("tol must be positive")
    if not 0.0 < damping <= 1.0:
        raise ValueError("damping must lie in (0, 1]")
    if not lam >= 0.0:
        raise ValueError("lambda must be >= 0")
    u = np.zeros(problem.n) if u0 is None else problem.interior_values(u0)
    mask = None if source_mask is None else np.asarray(source_mask, dtype=float)
    res = lambda v: _res(problem, v, lam, mask, forcing)  # noqa: E731
    F = res(u)
    nrm = float(np.max(np.abs(F)))
    it = 0
    stalled = False
    while nrm > tol and it < max_iter:
        it += 1
        d = problem.density(u, lam)
        if mask is not None:
            d = d * mask
        J = LinearOperator((problem.n, problem.n), matvec=lambda v: v - problem.matvec(d * v), dtype=float)
        delta = _gmres(J, -F, tol)
        step = damping
        while step >= min_step:
            trial = u + step * delta
            if np.all(trial <= BLOWUP_GUARD):
                Ft = res(trial)
                nt = float(np.max(np.abs(Ft)))
                if nt < nrm:
                    break
            step *= 0.5
        else:
            # Picard fallback
            trial = u - F
            Ft = res(trial) if np.all(trial <= BLOWUP_GUARD) else None
            nt = float(np.max(np.abs(Ft))) if Ft is not None else np.inf
            if not nt < nrm:
                stalled = True
                break
        u, F, nrm = trial, Ft, nt
    if nrm <= tol:
        return problem.field(u, lam, nrm, it)
    best = problem.field(u, lam, nrm, it, converged=False)
    gap = problem.fold_gap(u, lam) if mask is None else 1.0
    if gap < FOLD_TOL:
        raise FoldDetected(f"singular Jacobian near lambda={lam:g} (gap {gap:.3g})", best=best, sigma_min=gap)
    if stalled:
        raise NonConvergence("line search exhausted", best=best)
    return best


def _mass_solve(problem, target, u, ell, tol, max_iter):
    """Bordered Newton in ``(u, log lambda)`` for ``total_mass = target``."""
    scale = max(target, 1.0)

    def system(u, ell):
        d = problem.density(u, math.exp(ell))
        return u - problem.matvec(d), (float(np.dot(problem.area, d)) - target) / scale, d

    F, g, d = system(u, ell)
    nrm = max(float(np.max(np.abs(F))), abs(g))
    it = 0
    while nrm > tol and it < max_iter:
        it += 1
        kd = problem.matvec(d)
        ad = problem.area * d / scale
        sg = float(np.sum(ad))

        def mv(x, d=d, kd=kd, ad=ad, sg=sg):
            v, s = x[:-1], x[-1]
            return np.append(v - problem.matvec(d * v) - s * kd, np.dot(ad, v) + s * sg)

        n1 = problem.n + 1
        delta = _gmres(LinearOperator((n1, n1), matvec=mv, dtype=float), -np.append(F, g), tol)
        step = 1.0
        for _ in range(MAX_HALVINGS + 1):
            tu, te = u + step * delta[:-1], ell + step * delta[-1]
            if np.all(tu <= BLOWUP_GUARD) and abs(te) < BLOWUP_GUARD:
                with np.errstate(over="ignore", invalid="ignore"):
                    Ft, gt, dt = system(tu, te)
                nt = max(float(np.max(np.abs(Ft))), abs(gt))
                if nt < nrm:
                    break
            step *= 0.5
        else:
            break
        u, ell, F, g, d, nrm = tu, te, Ft, gt, dt, nt
    return u, ell, nrm, it


@dataclass
class Family:
    """Ordered continuation family; ``stop_reason`` records why it halted."""

    members: list = field(default_factory=list)
    stop_reason: str = "schedule complete"

    def rows(self) -> list[dict]:
        return [dict(member=i, **m.summary()) for i, m in enumerate(self.members)]


def continuation_run(
    problem: LiouvilleProblem,
    lambda_steps=None,
    mass_targets=None,
    max_peak: float = 60.0,
    max_mass: float = MASS_CAP - 0.1,
    tol: float = 1e-10,
    max_iter: int = 60,
    max_step_halvings: int = 8,
) -> Family:
    """Trace a family in ``lambda`` or in total mass (bordered Newton, passes folds)."""
    if (lambda_steps is None) == (mass_targets is None):
        raise ValueError("give exactly one of lambda_steps or mass_targets")
    if not (math.isfinite(max_peak) and math.isfinite(max_mass)):
        raise ValueError("stop criteria must be finite")
    if max_mass >= MASS_CAP:
        raise ConfigError("mass ceiling must stay below 16 pi")
    sched = np.asarray(lambda_steps if mass_targets is None else mass_targets, dtype=float)
    if sched.ndim != 1 or np.any(np.diff(sched) <= 0.0) or np.any(sched < 0.0):
        raise ValueError("schedule must be non-negative and strictly increasing")
    fam = Family()
    if mass_targets is None:
        u = None
        for lam in sched:
            try:
                sol = newton_solve(problem, float(lam), u, tol=tol, max_iter=max_iter)
            except FoldDetected:
                fam.stop_reason = "fold"
                break
            if not sol.converged:
                fam.stop_reason = "non-convergence"
                break
            fam.members.append(sol)
            u = sol.u
            if _halt(fam, sol, max_peak, max_mass):
                break
        return fam

    hist = []  # (target, u, ell) of accepted members for the secant predictor
    for target in sched:
        if target > max_mass:
            fam.stop_reason = "max_mass"
            break
        if target == 0.0:
            sol = problem.field(np.zeros(problem.n), 0.0, 0.0, 0)
            fam.members.append(sol)
            continue
        todo = [float(target)]
        halvings = 0
        while todo:
            t = todo[-1]
            u, ell = _predict(problem, hist, t)
            try:
                u, ell, nrm, it = _mass_solve(problem, t, u, ell, tol, max_iter)
                ok = nrm <= tol
            except BlowupEscape:
                ok = False
            if not ok:
                halvings += 1
                if halvings > max_step_halvings:
                    raise NonConvergence(f"step halving exhausted at mass {t:g}", best=fam)
                prev = hist[-1][0] if hist else 0.0
                todo.append(0.5 * (prev + t))
                continue
            todo.pop()
            hist.append((t, u, ell))
            if not todo:
                sol = problem.field(u, math.exp(ell), nrm, it)
                fam.members.append(sol)
        if _halt(fam, fam.members[-1], max_peak, max_mass):
            break
    return fam


def _halt(fam, sol, max_peak, max_mass):
    if sol.peak >= max_peak:
        fam.stop_reason = "max_peak"
        return True
    if sol.total_mass >= max_mass:
        fam.stop_reason = "max_mass"
        return True
    return False


def _predict(problem, hist, t):
    if not hist:
        m0 = float(np.dot(problem.area, problem.vw))
        return np.zeros(problem.n), math.log(t / m0)
    if len(hist) == 1:
        return hist[-1][1].copy(), hist[-1][2]
    (t0, u0, l0), (t1, u1, l1) = hist[-2], hist[-1]
    s = (t - t1) / (t1 - t0)
    return u1 + s * (u1 - u0), l1 + s * (l1 - l0)


@dataclass(frozen=True)
class FoldLocation:
    lam: float
    mass: float
    family: Family = field(repr=False)


def locate_fold(problem: LiouvilleProblem, mass_targets) -> FoldLocation:
    """Largest ``lambda`` along a mass-targeted family, refined by a parabola through the top three points."""
    fam = continuation_run(problem, mass_targets=mass_targets)
    lam = np.array([m.lam for m in fam.members])
    mass = np.array([m.total_mass for m in fam.members])
    k = int(np.argmax(lam))
    if k == 0 or k == lam.size - 1:
        raise ValueError("fold not bracketed by the mass targets")
    c = np.polyfit(mass[k - 1 : k + 2], lam[k - 1 : k + 2], 2)
    m_star = -c[1] / (2.0 * c[0])
    return FoldLocation(float(np.polyval(c, m_star)), float(m_star), fam)


# -- exact fields ---------------------------------------------------------
@dataclass(frozen=True)
class GelfandBranch:
    """Radial solutions of ``-Δu = lambda e^u`` on the unit disk with ``u = 0`` on the circle."""

    lam: float
    mu_minus: float
    mu_plus: float

    def field(self, x, branch: str = "minus") -> np.ndarray:
        mu = self.mu_minus if branch == "minus" else self.mu_plus
        r2 = np.sum(np.asarray(x, dtype=float) ** 2, axis=-1)
        return np.log(8.0 * mu**2 / (self.lam * (1.0 + mu**2 * r2) ** 2))

    def mass(self, branch: str = "minus") -> float:
        t = (self.mu_minus if branch == "minus" else self.mu_plus) ** 2
        return 8.0 * math.pi * t / (1.0 + t)


def gelfand_exact(lam: float) -> GelfandBranch:
    """Roots ``mu`` of ``8 mu^2 = lambda (1 + mu^2)^2``; none past the fold at ``lambda = 2``."""
    if not lam > 0.0:
        raise ValueError("lambda must be positive")
    if lam > 2.0:
        raise FoldDetected(f"no real branch for lambda={lam:g} > 2")
    b = 8.0 / lam - 2.0
    disc = math.sqrt(max(b * b - 4.0, 0.0))
    t_minus = 2.0 / (b + disc)  # stable form of (b - disc) / 2
    t_plus = 0.5 * (b + disc)
    return GelfandBranch(float(lam), math.sqrt(t_minus), math.sqrt(t_plus))


def bubble_field(mu: float, center, x, cfg: SingularityConfig | None = None, truncate_to_disk: bool = False):
    """``log(8 mu^2 / (1 + mu^2 |x - c|^2)^2)`` at the points ``x``.

    With ``cfg`` the field is shifted by ``2 alpha log|c - x0|`` so that
    ``w e^u`` (not only ``e^u``) carries the plane mass ``8 pi`` near ``c``.
    With ``truncate_to_disk`` returns ``(field, tail)`` where ``tail`` is the
    mass ``8 pi / (1 + mu^2 R^2)`` lying outside ``B(c, R)``, ``R = 1 - |c|``.
    """
    if not mu > 0.0:
        raise ValueError("mu must be positive")
    c = np.asarray(center, dtype=float)
    if np.hypot(*c) > 1.0 + 1e-12:
        raise ValueError("center must lie in the closed disk")
    x = np.asarray(x, dtype=float)
    r2 = (x[..., 0] - c[0]) ** 2 + (x[..., 1] - c[1]) ** 2
    u = math.log(8.0 * mu**2) - 2.0 * np.log1p(mu**2 * r2)
    if cfg is not None:
        u = u + 2.0 * cfg.alpha * math.log(math.hypot(c[0] - cfg.x0[0], c[1] - cfg.x0[1]))
    if not truncate_to_disk:
        return u
    R = 1.0 - math.hypot(*c)
    return u, 8.0 * math.pi / (1.0 + mu**2 * R**2)


def bubble_superposition(mus, centers, x, cfg: SingularityConfig | None = None) -> np.ndarray:
    """``log sum_k exp(bubble_k)``: the exponentials (hence the masses) add."""
    fields = np.stack([bubble_field(m, c, x, cfg) for m, c in zip(mus, centers)])
    return np.logaddexp.reduce(fields, axis=0)
