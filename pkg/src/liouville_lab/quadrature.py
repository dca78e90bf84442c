"""Weighted quadrature and the discrete Green operator.

The Green operator is assembled by product integration: the density is
taken constant on each cell and the kernel is integrated over the cell.
Far pairs use the midpoint rule; pairs closer than ``near_factor`` cell
sizes are integrated semi-analytically (see :mod:`cellquad`). The kernel is
split into the Newtonian part ``-(1/2pi) log|x - y|`` and the image part
``(1/2pi) log|1 - conj(x) y|``. On the half-disk chart the reflected cell is
subtracted, which turns the disk kernel into the half-disk one.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

from . import cellquad
from .errors import SingularEvaluation
from .mesh import DiskMesh, SingularityConfig

INV_2PI = 1.0 / (2.0 * math.pi)
NEAR_FACTOR = 3.0
# rows per block in matrix-free application
_BLOCK_ENTRIES = 2_000_000


def weight_eval(y, cfg: SingularityConfig):
    """``|y - x0|^(-2 alpha)``."""
    y = np.asarray(y, dtype=float)
    d = np.hypot(y[..., 0] - cfg.x0[0], y[..., 1] - cfg.x0[1])
    if np.any(d == 0.0):
        raise SingularEvaluation("weight evaluated at the singular point x0")
    return d ** (-2.0 * cfg.alpha)


@dataclass
class WeightField:
    values: np.ndarray
    corrected_cell_weight: np.ndarray
    cfg: SingularityConfig
    cell_area: np.ndarray

    @property
    def cell_average(self) -> np.ndarray:
        """Cell-averaged weight; zero on boundary nodes."""
        out = np.zeros_like(self.corrected_cell_weight)
        a = self.cell_area
        np.divide(self.corrected_cell_weight, a, out=out, where=a > 0)
        return out


def _sources(mesh: DiskMesh, reflect: bool = False):
    idx = mesh.interior
    c = mesh.cells[idx]
    r0, r1, t0, t1 = (np.ascontiguousarray(c[:, k]) for k in range(4))
    centers = mesh.nodes[idx].copy()
    if reflect:
        t0, t1 = np.pi - t1, np.pi - t0
        centers[:, 0] *= -1.0
    return idx, (r0, r1, t0, t1), centers, mesh.cell_size[idx]


def _second_moments(mesh: DiskMesh, reflect: bool = False) -> np.ndarray:
    """Complex central moment ``q = ∫ (y - c)^2 dA`` of each interior cell (y, c as complex numbers)."""
    idx, (r0, r1, t0, t1), centers, _ = _sources(mesh, reflect)
    q0 = 0.25 * (r1**4 - r0**4) * (np.exp(2j * t1) - np.exp(2j * t0)) / 2j
    c = centers[:, 0] + 1j * centers[:, 1]
    return q0 - mesh.cell_area[idx] * c**2


def _near_pairs(points, centers, sizes, factor):
    tree = cKDTree(points)
    hits = tree.query_ball_point(centers, factor * sizes)
    lens = np.fromiter((len(h) for h in hits), dtype=np.int64, count=len(hits))
    cell = np.repeat(np.arange(len(hits)), lens)
    tgt = np.fromiter((i for h in hits for i in sorted(h)), dtype=np.int64, count=int(lens.sum()))
    return tgt, cell


def build_weight(mesh: DiskMesh, cfg: SingularityConfig, near_factor: float = NEAR_FACTOR) -> WeightField:
    """Nodal weight values and singularity-corrected cell integrals of the weight."""
    idx, (r0, r1, t0, t1), centers, sizes = _sources(mesh)
    vals = np.zeros(mesh.n_nodes)
    d = np.hypot(mesh.nodes[:, 0] - cfg.x0[0], mesh.nodes[:, 1] - cfg.x0[1])
    vals[d > 0] = d[d > 0] ** (-2.0 * cfg.alpha)
    cw = np.zeros(mesh.n_nodes)
    cw[idx] = mesh.cell_area[idx] * vals[idx]
    x0 = np.array([cfg.x0])
    near = np.flatnonzero(np.hypot(centers[:, 0] - x0[0, 0], centers[:, 1] - x0[0, 1]) < near_factor * sizes)
    if near.size:
        exact = cellquad.cell_power_integrals(
            x0[:, 0], x0[:, 1], r0, r1, t0, t1, np.zeros(near.size, dtype=np.int64), near, cfg.alpha
        )
        cw[idx[near]] = exact
    return WeightField(values=vals, corrected_cell_weight=cw, cfg=cfg, cell_area=mesh.cell_area)


def integrate_weighted(f, w: WeightField) -> float:
    """``∫ f(y) |y - x0|^(-2 alpha) dy`` with the singular cells integrated exactly in the weight."""
    f = np.asarray(f, dtype=float)
    if f.shape != w.corrected_cell_weight.shape:
        raise ValueError("field does not match the mesh")
    mask = w.corrected_cell_weight != 0.0
    if not np.all(np.isfinite(f[mask])):
        raise ValueError("integrand is not finite")
    return float(np.dot(f[mask], w.corrected_cell_weight[mask]))


def integrate(f, mesh: DiskMesh) -> float:
    """Plain cell-midpoint integral of a nodal field."""
    return float(np.dot(np.asarray(f, dtype=float), mesh.cell_area))


class GreenOperator:
    """Discrete ``rho -> ∫ G(x, y) rho(y) dy`` evaluated at the mesh nodes (or given targets).

    Densities and results are full nodal vectors; boundary entries of the
    density are ignored (those nodes carry no area).
    """

    def __init__(self, mesh: DiskMesh, targets=None, near_factor: float = NEAR_FACTOR, threads: int = 1):
        self.mesh = mesh
        self.targets = np.asarray(mesh.nodes if targets is None else targets, dtype=float)
        self.threads = max(1, int(threads))
        self.half = mesh.domain == "half"
        self.src_idx = mesh.interior
        self.area = mesh.cell_area[self.src_idx]
        self.moments = (_second_moments(mesh), _second_moments(mesh, True) if self.half else None)
        self._matrix = None
        self._split_near = self._near_corrections(near_factor)

    # -- far field -------------------------------------------------------
    @staticmethod
    def _kernel(x, y, area, q, part):
        # one-point rule plus the exact second-moment term; both kernels are
        # harmonic in y, so the Hessian contraction is Re(F''(y) q)
        xc = x[..., 0] + 1j * x[..., 1]
        yc = y[..., 0] + 1j * y[..., 1]
        if part == 1:
            d = yc - xc
            d2 = d.real**2 + d.imag**2
            ok = d2 > 0.0
            ds = np.where(ok, d, 1.0)
            k = -INV_2PI * (0.5 * np.log(np.where(ok, d2, 1.0)) * area - 0.5 * (q / ds**2).real)
            return np.where(ok, k, 0.0)
        z = 1.0 - np.conj(xc) * yc
        return INV_2PI * (np.log(np.abs(z)) * area - 0.5 * (np.conj(xc) ** 2 * q / z**2).real)

    def _far_block(self, rows, part, reflect=False):
        y = self.mesh.nodes[self.src_idx]
        q = self.moments[1] if reflect else self.moments[0]
        if reflect:
            y = y * np.array([-1.0, 1.0])
        x = self.targets[rows]
        return self._kernel(x[:, None, :], y[None, :, :], self.area[None, :], q[None, :], part)

    def _far_pointwise(self, tgt, src, part, reflect=False):
        y = self.mesh.nodes[self.src_idx[src]]
        q = (self.moments[1] if reflect else self.moments[0])[src]
        if reflect:
            y = y * np.array([-1.0, 1.0])
        return self._kernel(self.targets[tgt], y, self.area[src], q, part)

    # -- near field ------------------------------------------------------
    def _near_corrections(self, factor):
        shape = (self.targets.shape[0], self.src_idx.size)
        x = self.targets
        rx = np.hypot(x[:, 0], x[:, 1])
        has_image = rx > 1e-12
        img = np.zeros_like(x)
        img[has_image] = x[has_image] / (rx[has_image] ** 2)[:, None]
        img_rows = np.flatnonzero(has_image)

        parts = {1: [], 2: []}
        for reflect in ([False, True] if self.half else [False]):
            sign = -1.0 if reflect else 1.0
            _, (r0, r1, t0, t1), centers, sizes = _sources(self.mesh, reflect)
            # Newtonian part
            tgt, cell = _near_pairs(x, centers, sizes, factor)
            exact = -INV_2PI * cellquad.cell_log_integrals(x[:, 0], x[:, 1], r0, r1, t0, t1, tgt, cell)
            corr = exact - self._far_pointwise(tgt, cell, 1, reflect)
            parts[1].append(sparse.coo_matrix((sign * corr, (tgt, cell)), shape=shape))
            # image part: log|1 - conj(x) y| = log|x| + log|x* - y|
            tgt, cell = _near_pairs(img[img_rows], centers, sizes, factor)
            tgt = img_rows[tgt]
            ilog = cellquad.cell_log_integrals(img[:, 0], img[:, 1], r0, r1, t0, t1, tgt, cell)
            exact = INV_2PI * (self.area[cell] * np.log(rx[tgt]) + ilog)
            corr = exact - self._far_pointwise(tgt, cell, 2, reflect)
            parts[2].append(sparse.coo_matrix((sign * corr, (tgt, cell)), shape=shape))
        return {k: sum(v[1:], v[0]).tocsr() for k, v in parts.items()}

    # -- application -----------------------------------------------------
    def _blocks(self):
        n = self.targets.shape[0]
        step = max(1, _BLOCK_ENTRIES // max(1, self.src_idx.size))
        return [np.arange(s, min(n, s + step)) for s in range(0, n, step)]

    def _far_apply(self, rho_src, part):
        out = np.zeros(self.targets.shape[0])

        def run(rows):
            k = self._far_block(rows, part)
            if self.half:
                k -= self._far_block(rows, part, reflect=True)
            out[rows] = k @ rho_src

        blocks = self._blocks()
        if self.threads > 1:
            with ThreadPoolExecutor(self.threads) as ex:
                list(ex.map(run, blocks))
        else:
            for b in blocks:
                run(b)
        return out

    def _src(self, rho):
        rho = np.asarray(rho, dtype=float)
        if rho.shape != (self.mesh.n_nodes,):
            raise ValueError("density must be a nodal field on the mesh")
        src = rho[self.src_idx]
        if not np.all(np.isfinite(src)):
            raise ValueError("density is not finite")
        return src

    def apply_parts(self, rho):
        """Return the Newtonian and image parts ``(v1, v2)`` separately."""
        src = self._src(rho)
        v1 = self._far_apply(src, 1) + self._split_near[1] @ src
        v2 = self._far_apply(src, 2) + self._split_near[2] @ src
        return v1, v2

    def matrix(self) -> np.ndarray:
        """Dense ``(n_targets, n_interior)`` matrix of the full Green operator (cached)."""
        if self._matrix is None:
            n = self.targets.shape[0]
            m = np.empty((n, self.src_idx.size))

            def run(rows):
                k = self._far_block(rows, 1) + self._far_block(rows, 2)
                if self.half:
                    k -= self._far_block(rows, 1, reflect=True) + self._far_block(rows, 2, reflect=True)
                m[rows] = k

            blocks = self._blocks()
            if self.threads > 1:
                with ThreadPoolExecutor(self.threads) as ex:
                    list(ex.map(run, blocks))
            else:
                for b in blocks:
                    run(b)
            near = (self._split_near[1] + self._split_near[2]).tocoo()
            np.add.at(m, (near.row, near.col), near.data)
            self._matrix = m
        return self._matrix

    def apply(self, rho):
        if self._matrix is not None:
            return self._matrix @ self._src(rho)
        v1, v2 = self.apply_parts(rho)
        return v1 + v2


def newtonian_potential_split(op: GreenOperator, rho):
    """``(v1, v2)`` with ``v1 = ∫ -(1/2pi) log|x - y| rho``, ``v2 = ∫ (1/2pi) log|1 - conj(x) y| rho``."""
    return op.apply_parts(rho)


def green_apply(op: GreenOperator, rho):
    """``∫ G(x, y) rho(y) dy`` at the operator's targets, as ``v1 + v2``."""
    v1, v2 = op.apply_parts(rho)
    return v1 + v2
