"""Exact and semi-analytic integrals over polar cells.

A polar cell is the annular sector ``r0 <= |y| <= r1, t0 <= arg y <= t1``.
Near-field integrals are evaluated by splitting the cell into small pieces,
unrolling each piece into a rectangle in local (radial, tangential)
coordinates around the target, and integrating the kernel over that
rectangle in closed form (log kernel) or with an exact radial moment
(power kernel).
"""
from __future__ import annotations

import numpy as np

# max angular / relative radial extent of one unrolled piece
MAX_PIECE_ANGLE = 0.1
MAX_PIECE_RADIAL = 0.1

_GL_X, _GL_W = np.polynomial.legendre.leggauss(24)


def _wrap(angle):
    return (angle + np.pi) % (2.0 * np.pi) - np.pi


def rect_log_antiderivative(x, y):
    """Signed integral of ``log sqrt(s^2 + t^2)`` over ``[0, x] x [0, y]``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    r2 = x * x + y * y
    with np.errstate(divide="ignore", invalid="ignore"):
        lg = np.where(r2 > 0.0, np.log(np.where(r2 > 0.0, r2, 1.0)), 0.0)
        ax = np.where(x != 0.0, x * x * np.arctan(y / np.where(x != 0.0, x, 1.0)), 0.0)
        ay = np.where(y != 0.0, y * y * np.arctan(x / np.where(y != 0.0, y, 1.0)), 0.0)
    return 0.5 * (x * y * (lg - 3.0) + ax + ay)


def rect_log_integral(a1, a2, b1, b2):
    """Integral of ``log|y|`` over the rectangle ``[a1, a2] x [b1, b2]``."""
    F = rect_log_antiderivative
    return F(a2, b2) - F(a1, b2) - F(a2, b1) + F(a1, b1)


def _cosh_moment(z, alpha):
    # ∫_0^{asinh z} cosh(v)^(1 - 2 alpha) dv
    top = np.arcsinh(z)[:, None]
    v = 0.5 * top * (_GL_X + 1.0)
    return 0.5 * top[:, 0] * np.sum(_GL_W * np.cosh(v) ** (1.0 - 2.0 * alpha), axis=1)


def _corner_power(a, b, alpha):
    # integral of |y|^(-2 alpha) over [0, a] x [0, b], a, b >= 0; in polar
    # coordinates about the corner the radial moment is exact and the
    # angular variable is substituted as tan(phi) = sinh(v)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    a, b = np.broadcast_arrays(a, b)
    p = 2.0 - 2.0 * alpha
    out = np.zeros(a.shape)
    ok = (a > 0.0) & (b > 0.0)
    if not np.any(ok):
        return out
    a = a[ok]
    b = b[ok]
    out[ok] = (a**p * _cosh_moment(b / a, alpha) + b**p * _cosh_moment(a / b, alpha)) / p
    return out


def rect_power_integral(a1, a2, b1, b2, alpha):
    """Integral of ``|y|^(-2 alpha)`` over the rectangle ``[a1, a2] x [b1, b2]``."""

    def F(x, y):
        return np.sign(x) * np.sign(y) * _corner_power(np.abs(x), np.abs(y), alpha)

    return F(a2, b2) - F(a1, b2) - F(a2, b1) + F(a1, b1)


def disk_log_integral(R, z_abs):
    """Integral of ``log|z - y|`` over the disk ``|y| <= R``."""
    R = np.asarray(R, dtype=float)
    z_abs = np.asarray(z_abs, dtype=float)
    inside = np.pi * R**2 * np.log(R) - 0.5 * np.pi * (R**2 - z_abs**2)
    with np.errstate(divide="ignore"):
        outside = np.pi * R**2 * np.log(np.maximum(z_abs, 1e-300))
    return np.where(z_abs <= R, inside, outside)


def sector_log_from_origin(r0, r1, t0, t1):
    """Integral of ``log|y|`` over a polar cell, seen from the origin."""

    def m(r):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(r > 0.0, r * r * (2.0 * np.log(np.where(r > 0, r, 1.0)) - 1.0) / 4.0, 0.0)

    return (t1 - t0) * (m(r1) - m(r0))


def sector_power_from_origin(r0, r1, t0, t1, alpha):
    p = 2.0 - 2.0 * alpha
    return (t1 - t0) * (r1**p - r0**p) / p


def _pieces(r0, r1, t0, t1, pair_cell):
    """Split the cells referenced by ``pair_cell`` into unrolled pieces.

    Returns per-piece arrays (owner pair index, ra, rb, ta, tb).
    """
    dr = r1 - r0
    dt = t1 - t0
    rm = 0.5 * (r0 + r1)
    n_t = np.maximum(1, np.ceil(dt / MAX_PIECE_ANGLE - 1e-9)).astype(int)
    n_r = np.maximum(1, np.ceil(dr / (MAX_PIECE_RADIAL * np.maximum(rm, 1e-300)) - 1e-9)).astype(int)
    n_r = np.minimum(n_r, 64)
    per_cell = n_r * n_t
    counts = per_cell[pair_cell]
    owner = np.repeat(np.arange(pair_cell.size), counts)
    cell = pair_cell[owner]
    start = np.cumsum(counts) - counts
    k = np.arange(owner.size) - start[owner]
    ir = k // n_t[cell]
    it = k % n_t[cell]
    # geometric radial split keeps pieces near the origin well shaped
    hr = dr[cell] / n_r[cell]
    ra = r0[cell] + ir * hr
    rb = ra + hr
    ht = dt[cell] / n_t[cell]
    ta = t0[cell] + it * ht
    tb = ta + ht
    return owner, ra, rb, ta, tb


def _unrolled(px, py, ra, rb, ta, tb):
    # piece -> flat rectangle in the frame rotated to the piece's mid angle;
    # the target is rotated exactly, only the piece's curvature is dropped
    rho = np.hypot(px, py)
    phi = np.arctan2(py, px)
    rm = 0.5 * (ra + rb)
    tm = 0.5 * (ta + tb)
    d = phi - tm
    sr = rho * np.cos(d) - rm
    st = rho * np.sin(d)
    hr = 0.5 * (rb - ra)
    ht = 0.5 * rm * (tb - ta)
    return -hr - sr, hr - sr, -ht - st, ht - st, rho


def cell_log_integrals(px, py, r0, r1, t0, t1, pair_target, pair_cell):
    """``∫_cell log|p - y| dy`` for each (target, cell) pair.

    Cells with ``r0 == 0`` and a full turn are treated as disks and use the
    closed form; targets at the origin use the exact sector formula.
    """
    px = np.asarray(px, dtype=float)
    py = np.asarray(py, dtype=float)
    out = np.zeros(pair_target.size)
    disk = (r0[pair_cell] == 0.0) & (t1[pair_cell] - t0[pair_cell] >= 2.0 * np.pi - 1e-12)
    tx = px[pair_target]
    ty = py[pair_target]
    if np.any(disk):
        out[disk] = disk_log_integral(r1[pair_cell[disk]], np.hypot(tx[disk], ty[disk]))
    origin = ~disk & (np.hypot(tx, ty) < 1e-14)
    if np.any(origin):
        c = pair_cell[origin]
        out[origin] = sector_log_from_origin(r0[c], r1[c], t0[c], t1[c])
    rest = np.flatnonzero(~disk & ~origin)
    if rest.size:
        owner, ra, rb, ta, tb = _pieces(r0, r1, t0, t1, pair_cell[rest])
        a1, a2, b1, b2, _ = _unrolled(tx[rest][owner], ty[rest][owner], ra, rb, ta, tb)
        vals = rect_log_integral(a1, a2, b1, b2)
        out[rest] = np.bincount(owner, weights=vals, minlength=rest.size)
    return out


def cell_power_integrals(px, py, r0, r1, t0, t1, pair_target, pair_cell, alpha):
    """``∫_cell |y - p|^(-2 alpha) dy`` for each (target, cell) pair."""
    px = np.asarray(px, dtype=float)
    py = np.asarray(py, dtype=float)
    out = np.zeros(pair_target.size)
    tx = px[pair_target]
    ty = py[pair_target]
    origin = np.hypot(tx, ty) < 1e-14
    if np.any(origin):
        c = pair_cell[origin]
        out[origin] = sector_power_from_origin(r0[c], r1[c], t0[c], t1[c], alpha)
    rest = np.flatnonzero(~origin)
    if rest.size:
        owner, ra, rb, ta, tb = _pieces(r0, r1, t0, t1, pair_cell[rest])
        a1, a2, b1, b2, _ = _unrolled(tx[rest][owner], ty[rest][owner], ra, rb, ta, tb)
        vals = rect_power_integral(a1, a2, b1, b2, alpha)
        out[rest] = np.bincount(owner, weights=vals, minlength=rest.size)
    return out
