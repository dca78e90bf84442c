"""Unit disk / half-disk geometry, graded polar meshes and the Dirichlet Green function."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, GeometryError, SingularEvaluation

TWO_PI = 2.0 * math.pi
# size of a refined cell relative to its distance from the refinement center
REFINE_SLOPE = 0.25


@dataclass(frozen=True)
class SingularityConfig:
    """Location ``x0`` of the boundary singularity and its exponent ``alpha``.

    On the full disk ``x0`` lies on the unit circle. The half-disk chart puts
    the singular point at the origin, the midpoint of the flat side.
    """

    x0: tuple[float, float]
    alpha: float
    half_chart: bool = False

    def __post_init__(self):
        if not (math.isfinite(self.alpha) and 0.0 < self.alpha < 0.5):
            raise ConfigError(f"alpha must lie in the open interval (0, 1/2), got {self.alpha}")
        x, y = (float(v) for v in self.x0)
        if not (math.isfinite(x) and math.isfinite(y)):
            raise ConfigError("x0 must be finite")
        if self.half_chart:
            if x != 0.0 or y != 0.0:
                raise ConfigError("the half-disk chart places x0 at the origin")
            object.__setattr__(self, "x0", (0.0, 0.0))
            return
        n = math.hypot(x, y)
        if n == 0.0:
            raise ConfigError("x0 must lie on the unit circle")
        object.__setattr__(self, "x0", (x / n, y / n))

    @classmethod
    def from_angle(cls, angle: float, alpha: float) -> "SingularityConfig":
        return cls((math.cos(angle), math.sin(angle)), alpha)

    @classmethod
    def chart(cls, alpha: float) -> "SingularityConfig":
        return cls((0.0, 0.0), alpha, half_chart=True)

    @property
    def angle(self) -> float:
        return math.atan2(self.x0[1], self.x0[0])


@dataclass
class DiskMesh:
    """Cell-centred polar discretization of the closed unit disk (or half-disk).

    Every interior node owns one polar cell ``cells[i] = (r0, r1, t0, t1)``;
    boundary nodes carry zero area and an arclength weight instead. A cell
    with ``r0 == 0`` spanning a full turn is the central disk.
    """

    nodes: np.ndarray
    cell_area: np.ndarray
    boundary_mask: np.ndarray
    cells: np.ndarray
    boundary_weight: np.ndarray
    boundary_normal: np.ndarray
    grading: dict
    domain: str = "disk"
    x0: tuple[float, float] = (1.0, 0.0)
    _tree: object = field(default=None, repr=False, compare=False)

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def interior(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_mask)

    @property
    def boundary(self) -> np.ndarray:
        return np.flatnonzero(self.boundary_mask)

    @property
    def cell_size(self) -> np.ndarray:
        """Diameter-like size of each cell (0 for boundary nodes)."""
        r0, r1, t0, t1 = self.cells.T
        rm = 0.5 * (r0 + r1)
        size = np.hypot(r1 - r0, rm * (t1 - t0))
        full = (r0 == 0.0) & (t1 - t0 >= TWO_PI - 1e-12)
        size = np.where(full, 2.0 * r1, size)
        return np.where(self.boundary_mask, 0.0, size)

    def boundary_distance(self, points) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        d = 1.0 - np.hypot(p[:, 0], p[:, 1])
        if self.domain == "half":
            d = np.minimum(d, p[:, 0])
        return np.maximum(d, 0.0)

    def kdtree(self):
        if self._tree is None:
            from scipy.spatial import cKDTree

            self._tree = cKDTree(self.nodes)
        return self._tree

    def to_csv(self, path) -> None:
        from .tables import write_rows

        rows = ((i, float(p[0]), float(p[1]), float(a), int(b))
                for i, (p, a, b) in enumerate(zip(self.nodes, self.cell_area, self.boundary_mask)))
        write_rows(path, ["idx", "x1", "x2", "area", "is_boundary"], rows)


@dataclass
class HalfDiskGeometry:
    """Boundary of the half-disk ``{|x| <= 1, x1 >= 0}`` split into flat side and arc."""

    mesh: DiskMesh
    arc_nodes: np.ndarray
    flat_nodes: np.ndarray
    flat_normal: tuple[float, float] = (-1.0, 0.0)

    @property
    def arc_weights(self) -> np.ndarray:
        return self.mesh.boundary_weight[self.arc_nodes]

    @property
    def flat_weights(self) -> np.ndarray:
        return self.mesh.boundary_weight[self.flat_nodes]


def radial_edges(n_r: int, grade: float) -> np.ndarray:
    """Radial cell edges, finest next to the unit circle when ``grade > 1``."""
    k = np.arange(n_r + 1) / n_r
    r = 1.0 - (1.0 - k) ** grade
    r[-1] = 1.0
    return r


def _check_grid(n_r, n_t, grade):
    for name, v in (("n_r", n_r), ("n_t", n_t)):
        if not isinstance(v, (int, np.integer)) or v < 8:
            raise ConfigError(f"{name} must be an integer >= 8, got {v!r}")
    if not (math.isfinite(grade) and grade >= 1.0):
        raise ConfigError(f"grade_exponent must be finite and >= 1, got {grade!r}")


def _ring_count(r_lo, r_hi, n_t, span, min_count):
    # coarsen rings near the centre by powers of two so cells stay roughly square
    dr = r_hi - r_lo
    rm = 0.5 * (r_lo + r_hi)
    n = n_t
    while n % 2 == 0 and n // 2 >= min_count and rm * span / (n // 2) <= math.sqrt(2.0) * dr:
        n //= 2
    return n


def _base_cells(n_r, n_t, grade, t_start, span):
    edges = radial_edges(n_r, grade)
    full = span >= TWO_PI
    min_count = 8 if full else 4
    cells = [(0.0, edges[1], t_start, t_start + span)]
    for k in range(1, n_r):
        n = _ring_count(edges[k], edges[k + 1], n_t, span, min_count)
        dt = span / n
        for j in range(n):
            cells.append((edges[k], edges[k + 1], t_start + j * dt, t_start + (j + 1) * dt))
    return cells


def _cell_geometry(c):
    r0, r1, t0, t1 = c
    if r0 == 0.0 and t1 - t0 >= TWO_PI - 1e-12:
        return 0.0, 0.0, 2.0 * r1
    if r0 == 0.0:
        tm = 0.5 * (t0 + t1)
        half = 0.5 * (t1 - t0)
        rc = 2.0 * r1 * math.sin(half) / (3.0 * half)
        return rc * math.cos(tm), rc * math.sin(tm), max(r1, r1 * (t1 - t0))
    # area centroid: the one-point rule is then exact for linear integrands
    rm = 0.5 * (r0 + r1)
    tm = 0.5 * (t0 + t1)
    half = 0.5 * (t1 - t0)
    rc = (2.0 / 3.0) * (r1**3 - r0**3) / (r1**2 - r0**2) * math.sin(half) / half
    return rc * math.cos(tm), rc * math.sin(tm), math.hypot(r1 - r0, rm * (t1 - t0))


def _split(c):
    r0, r1, t0, t1 = c
    if r0 == 0.0:
        full = t1 - t0 >= TWO_PI - 1e-12
        n = 8 if full else 4
        rh = 0.5 * r1
        dt = (t1 - t0) / n
        return [(0.0, rh, t0, t1)] + [(rh, r1, t0 + j * dt, t0 + (j + 1) * dt) for j in range(n)]
    rm = 0.5 * (r0 + r1)
    dr = r1 - r0
    arc = rm * (t1 - t0)
    tm = 0.5 * (t0 + t1)
    if dr > 2.0 * arc:
        return [(r0, rm, t0, t1), (rm, r1, t0, t1)]
    if arc > 2.0 * dr:
        return [(r0, r1, t0, tm), (r0, r1, tm, t1)]
    return [(r0, rm, t0, tm), (r0, rm, tm, t1), (rm, r1, t0, tm), (rm, r1, tm, t1)]


def _refine(cells, centers):
    if not centers:
        return cells
    out = []
    stack = list(reversed(cells))
    while stack:
        c = stack.pop()
        cx, cy, size = _cell_geometry(c)
        split = False
        for (px, py), radius, h_min, slope in centers:
            d = max(0.0, math.hypot(cx - px, cy - py) - 0.5 * size)
            if d < radius and size > max(h_min, slope * d):
                split = True
                break
        if split:
            stack.extend(reversed(_split(c)))
        else:
            out.append(c)
    return out


def _normalize_centers(refine_centers, default_h):
    out = []
    for rc in refine_centers or ():
        p, radius, *rest = rc
        h_min = rest[0] if rest else None
        slope = float(rest[1]) if len(rest) > 1 else REFINE_SLOPE
        px, py = (float(v) for v in p)
        radius = float(radius)
        h_min = float(h_min) if h_min is not None else radius / 256.0
        if not all(math.isfinite(v) for v in (px, py, radius, h_min, slope)) or min(radius, h_min, slope) <= 0:
            raise ConfigError(f"invalid refine center {rc!r}")
        if math.hypot(px, py) > 1.0 + 1e-12:
            raise ConfigError(f"refine center {p} lies outside the closed unit disk")
        out.append(((px, py), radius, h_min, slope))
    return out


def _assemble(cells, domain, grading, x0):
    cells = np.array(cells, dtype=float)
    geo = np.array([_cell_geometry(tuple(c)) for c in cells])
    nodes = [geo[:, :2]]
    r0, r1, t0, t1 = cells.T
    area = 0.5 * (r1**2 - r0**2) * (t1 - t0)

    on_arc = np.abs(r1 - 1.0) < 1e-14
    tm = 0.5 * (t0[on_arc] + t1[on_arc])
    arc_pts = np.column_stack([np.cos(tm), np.sin(tm)])
    arc_w = t1[on_arc] - t0[on_arc]
    arc_n = arc_pts.copy()

    b_pts = [arc_pts]
    b_w = [arc_w]
    b_n = [arc_n]
    if domain == "half":
        rm = 0.5 * (r0 + r1)
        for edge, sign in ((np.pi / 2, 1.0), (-np.pi / 2, -1.0)):
            sel = np.abs((t1 if sign > 0 else t0) - edge) < 1e-12
            pos = np.where(r0[sel] == 0.0, 0.5 * r1[sel], rm[sel])
            pts = np.column_stack([np.zeros(sel.sum()), sign * pos])
            b_pts.append(pts)
            b_w.append(r1[sel] - r0[sel])
            b_n.append(np.tile([-1.0, 0.0], (sel.sum(), 1)))
    bp = np.vstack(b_pts)
    n_int = cells.shape[0]
    n_b = bp.shape[0]
    nan_cells = np.full((n_b, 4), np.nan)
    mesh = DiskMesh(
        nodes=np.vstack(nodes + [bp]),
        cell_area=np.concatenate([area, np.zeros(n_b)]),
        boundary_mask=np.concatenate([np.zeros(n_int, bool), np.ones(n_b, bool)]),
        cells=np.vstack([cells, nan_cells]),
        boundary_weight=np.concatenate([np.zeros(n_int), np.concatenate(b_w)]),
        boundary_normal=np.vstack([np.zeros((n_int, 2)), np.vstack(b_n)]),
        grading=grading,
        domain=domain,
        x0=x0,
    )
    return mesh


def build_mesh(n_r=64, n_t=128, grade_exponent=2.0, refine_centers=(), cfg: SingularityConfig | None = None,
               x0_refine=(0.1, 2e-3)) -> DiskMesh:
    """Graded polar mesh of the unit disk.

    The angular grid is rotated so that a cell edge passes through ``cfg.x0``.
    ``refine_centers`` entries are ``(point, radius[, h_min[, slope]])``;
    cells inside the ball are split until their size is below
    ``max(h_min, slope * distance)`` (slope defaults to ``REFINE_SLOPE``).
    ``x0`` gets the same treatment with ``x0_refine = (radius, h_min)``
    unless that is None.
    """
    _check_grid(n_r, n_t, grade_exponent)
    t_start = cfg.angle if cfg is not None and not cfg.half_chart else 0.0
    centers = _normalize_centers(refine_centers, None)
    x0 = cfg.x0 if cfg is not None else (1.0, 0.0)
    if cfg is not None and x0_refine is not None:
        centers += _normalize_centers([(x0, *x0_refine)], None)
    cells = _base_cells(n_r, n_t, float(grade_exponent), t_start, TWO_PI)
    cells = _refine(cells, centers)
    grading = dict(n_r=n_r, n_t=n_t, grade_exponent=float(grade_exponent), refine_centers=centers)
    return _assemble(cells, "disk", grading, x0)


def build_half_disk(n_r=64, n_t=128, grade_exponent=2.0, refine_centers=(), x0_refine=(0.1, 2e-3)):
    """Mesh of ``B+ = {|x| <= 1, x1 >= 0}``; ``n_t`` angular cells span the half turn.

    Returns ``(HalfDiskGeometry, DiskMesh)``. The singular point of the chart
    is the origin.
    """
    _check_grid(n_r, n_t, grade_exponent)
    centers = _normalize_centers(refine_centers, None)
    if x0_refine is not None:
        centers += _normalize_centers([((0.0, 0.0), *x0_refine)], None)
    cells = _base_cells(n_r, n_t, float(grade_exponent), -np.pi / 2, np.pi)
    cells = _refine(cells, centers)
    grading = dict(n_r=n_r, n_t=n_t, grade_exponent=float(grade_exponent), refine_centers=centers)
    mesh = _assemble(cells, "half", grading, (0.0, 0.0))
    b = mesh.boundary
    on_flat = np.abs(mesh.nodes[b, 0]) < 1e-14
    geo = HalfDiskGeometry(mesh=mesh, arc_nodes=b[~on_flat], flat_nodes=b[on_flat])
    return geo, mesh


def green(x, y) -> float:
    """Dirichlet Green function of the unit disk, ``(1/2pi) log(|1 - conj(x) y| / |x - y|)``."""
    xc = complex(x[0], x[1])
    yc = complex(y[0], y[1])
    d = abs(xc - yc)
    if d == 0.0:
        raise SingularEvaluation("green(x, y) is singular at x = y; use the cell quadrature")
    if abs(xc) > 1.0 + 1e-12 or abs(yc) > 1.0 + 1e-12:
        raise GeometryError("green arguments must lie in the closed unit disk")
    return math.log(abs(1.0 - xc.conjugate() * yc) / d) / TWO_PI


def green_matrix(xs, ys) -> np.ndarray:
    """Vectorized pointwise ``green`` for point arrays (no coincidence check)."""
    xs = np.atleast_2d(xs)
    ys = np.atleast_2d(ys)
    dx = xs[:, None, 0] - ys[None, :, 0]
    dy = xs[:, None, 1] - ys[None, :, 1]
    dot = xs[:, None, 0] * ys[None, :, 0] + xs[:, None, 1] * ys[None, :, 1]
    n2 = (xs[:, None, 0] ** 2 + xs[:, None, 1] ** 2) * (ys[None, :, 0] ** 2 + ys[None, :, 1] ** 2)
    num = 1.0 - 2.0 * dot + n2
    return np.log(num / (dx * dx + dy * dy)) / (4.0 * math.pi)


_GL_X, _GL_W = np.polynomial.legendre.leggauss(32)


def green_small_ball_mass(xi, delta: float, n_angle: int = 256) -> float:
    """``∫_{B(xi, delta/2)} G(xi, y) dy`` in polar coordinates centred at ``xi``.

    The ``-log t`` part is integrated exactly in the radial variable; the
    smooth part ``log|1 - conj(xi) y|`` uses Gauss-Legendre in ``t`` and the
    trapezoid rule in the angle.
    """
    xi = complex(xi[0], xi[1])
    delta = float(delta)
    R = 0.5 * delta
    if not (math.isfinite(delta) and delta > 0.0):
        raise GeometryError("delta must be positive")
    if abs(xi) + R > 1.0 + 1e-12:
        raise GeometryError("B(xi, delta/2) is not contained in the unit disk")
    singular = 0.5 * R * R * (0.5 - math.log(R))  # 2pi * R^2 (1 - 2 log R)/4 / 2pi
    t = 0.5 * R * (_GL_X + 1.0)
    wt = 0.5 * R * _GL_W
    th = np.arange(n_angle) * (TWO_PI / n_angle)
    y = xi + t[:, None] * np.exp(1j * th)[None, :]
    smooth = np.log(np.abs(1.0 - np.conj(xi) * y))
    regular = np.sum(wt[:, None] * t[:, None] * smooth) * (TWO_PI / n_angle) / TWO_PI
    return singular + regular
