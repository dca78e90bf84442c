"""Oracle suites run by ``verify``: each compares a computed value with a closed form."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .mesh import SingularityConfig, build_mesh, green_matrix
from .pohozaev import manufactured_identity_check
from .quadrature import GreenOperator, green_apply
from .solver import LiouvilleProblem, bubble_field, gelfand_exact, newton_solve


@dataclass(frozen=True)
class SuiteResult:
    name: str
    value: float
    tolerance: float
    passed: bool

    def to_dict(self) -> dict:
        return asdict(self)


def _result(name, value, tol) -> SuiteResult:
    return SuiteResult(name, float(value), float(tol), bool(value <= tol))


def green_properties(seed: int = 0, n: int = 200) -> list[SuiteResult]:
    """Symmetry, positivity and boundary vanishing of the disk Green function at random points."""
    rng = np.random.default_rng(seed)
    r = np.sqrt(rng.uniform(0.0, 0.98, size=(2, n)))
    t = rng.uniform(0.0, 2.0 * np.pi, size=(2, n))
    x = np.stack([r[0] * np.cos(t[0]), r[0] * np.sin(t[0])], axis=-1)
    y = np.stack([r[1] * np.cos(t[1]), r[1] * np.sin(t[1])], axis=-1)
    g = green_matrix(x, y)
    sym = float(np.max(np.abs(g - green_matrix(y, x).T)))
    pos = float(max(0.0, -np.min(g)))
    edge = np.stack([np.cos(t[0]), np.sin(t[0])], axis=-1)
    bnd = float(np.max(np.abs(green_matrix(edge, y))))
    return [
        _result("green_symmetry", sym, 1e-12),
        _result("green_positivity", pos, 0.0),
        _result("green_boundary_zero", bnd, 1e-12),
    ]


def poisson_oracle(n_r: int = 64, n_t: int = 128, grade: float = 2.0, threads: int = 1) -> SuiteResult:
    """Max nodal error of ``G[1]`` against ``(1 - |x|^2)/4``, relative to its maximum ``1/4``."""
    cfg = SingularityConfig.from_angle(0.0, 0.25)
    mesh = build_mesh(n_r, n_t, grade, cfg=cfg)
    v = green_apply(GreenOperator(mesh, threads=threads), np.ones(mesh.n_nodes))
    exact = (1.0 - np.sum(mesh.nodes**2, axis=1)) / 4.0
    return _result("poisson_oracle", np.max(np.abs(v - exact)) / 0.25, 0.01)


def gelfand_oracle(n_r: int = 32, n_t: int = 64, grade: float = 2.0, threads: int = 1) -> SuiteResult:
    """``u(0)`` at ``lambda = 1`` against ``log(8 (3 - 2 sqrt 2))``."""
    cfg = SingularityConfig.from_angle(0.0, 1e-6)
    mesh = build_mesh(n_r, n_t, grade, cfg=cfg)
    sol = newton_solve(LiouvilleProblem(mesh, cfg, threads=threads), 1.0)
    center = int(np.argmin(np.hypot(mesh.nodes[:, 0], mesh.nodes[:, 1])))
    exact = float(gelfand_exact(1.0).field(np.zeros((1, 2)))[0])
    return _result("gelfand_oracle", abs(sol.u[center] - exact), 1e-2)


def bubble_mass_oracle(mu: float = 1e3, radius: float = 0.1) -> SuiteResult:
    """Relative error of ``∫_{B(0,R)} e^bubble`` against ``8 pi mu^2 R^2 / (1 + mu^2 R^2)``."""
    cfg = SingularityConfig.from_angle(0.0, 0.25)
    mesh = build_mesh(32, 64, cfg=cfg, refine_centers=[((0.0, 0.0), 2.0 * radius, 0.05 / mu, 0.15)])
    u = bubble_field(mu, (0.0, 0.0), mesh.nodes)
    inside = np.hypot(mesh.nodes[:, 0], mesh.nodes[:, 1]) < radius
    val = float(np.dot(mesh.cell_area[inside], np.exp(u[inside])))
    exact = 8.0 * math.pi * mu**2 * radius**2 / (1.0 + mu**2 * radius**2)
    return _result("bubble_mass_oracle", abs(val / exact - 1.0), 1e-3)


def manufactured_pohozaev(n_r: int = 64, n_t: int = 128) -> SuiteResult:
    return _result("manufactured_pohozaev", manufactured_identity_check(n_r, n_t), 1e-3)


def run_all(n_r: int = 64, n_t: int = 128, grade: float = 2.0, seed: int = 0, threads: int = 1) -> list[SuiteResult]:
    """Every suite; the Poisson and Gelfand oracles run on the given grid."""
    out = green_properties(seed)
    out.append(poisson_oracle(n_r, n_t, grade, threads))
    out.append(gelfand_oracle(max(2, n_r // 2), max(8, n_t // 2), grade, threads))
    out.append(bubble_mass_oracle())
    out.append(manufactured_pohozaev())
    return out
