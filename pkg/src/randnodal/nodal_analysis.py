"""Nodal sets of random sections: zeros, components and critical points.

Surfaces are handled on a uniform chart grid.  The nodal curve is the
marching-squares polyline through sign changes on grid edges; ``b0`` is the
number of connected components of the graph whose vertices are crossed
edges and whose arcs are the cell segments.  Critical points of a fixed Morse
function ``p`` restricted to the curve are the solutions of

    s = 0,   D = det(ds, dp) = s_t p_f - s_f p_t = 0,

seeded wherever ``D`` changes sign along a segment of the polyline and
refined by Newton's method.  The Morse index of ``p|_{s=0}`` at a solution is
the sign of the restricted second derivative

    Hess p(v, v) - lam Hess s(v, v),    dp = lam ds,  v tangent to s = 0,

which is 0 for a local minimum and 1 for a local maximum.
"""
from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .model_ensembles import (
    RandomSection,
    SpectralBasis,
    build_basis,
    draw_section,
    eval_grid,
    grid_size,
    section_jet,
)

__all__ = [
    "MorseFunctionSpec",
    "default_morse",
    "NodalSummary",
    "NodalCurve",
    "EnsembleConfig",
    "TrialStats",
    "ResolutionError",
    "DegenerateFractionError",
    "count_zeros_circle",
    "extract_nodal_components",
    "extract_nodal_components_torus",
    "critical_points_on_nodal",
    "SurfaceGrid",
    "surface_grid",
    "critical_value_gaps",
    "analyze_section",
    "run_trials",
    "trial_section",
    "summarize_trials",
    "kac_rice_circle_mean",
]

MIN_CELLS_PER_WAVELENGTH = 8
DEFAULT_CELLS_PER_WAVELENGTH = 12
DEFAULT_EXCLUSION_RADIUS = 0.05


class ResolutionError(ValueError):
    pass


class DegenerateFractionError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# Morse functions


@dataclass(frozen=True)
class MorseFunctionSpec:
    """A Morse function on a chart with its gradient, Hessian and critical set.

    ``grad`` returns ``(k, 2)`` and ``hess`` ``(k, 2, 2)`` for ``(k, 2)``
    chart points.
    """

    manifold: str
    value: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    hess: Callable[[np.ndarray], np.ndarray]
    critical_points: np.ndarray
    exclusion_radius: float = DEFAULT_EXCLUSION_RADIUS
    name: str = "custom"

    def distance_to_critical(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if self.critical_points.size == 0:
            return np.full(len(pts), np.inf)
        if self.manifold == "torus2":
            d = pts[:, None, :] - self.critical_points[None, :, :]
            d = (d + math.pi) % (2 * math.pi) - math.pi
            return np.sqrt((d ** 2).sum(-1)).min(axis=1)
        # sphere: geodesic distance
        u = _sphere_unit(pts)
        c = _sphere_unit(self.critical_points)
        return np.arccos(np.clip(u @ c.T, -1.0, 1.0)).min(axis=1)


def _sphere_unit(pts):
    th, ph = pts[:, 0], pts[:, 1]
    return np.stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)], axis=1)


def default_morse(manifold: str, shift=(0.0, 0.0),
                  exclusion_radius: float = DEFAULT_EXCLUSION_RADIUS) -> MorseFunctionSpec:
    """``cos t + cos f / 2`` on the torus (optionally translated); height ``z`` on the sphere."""
    if manifold == "torus2":
        a, b = shift

        def value(x):
            return np.cos(x[:, 0] - a) + 0.5 * np.cos(x[:, 1] - b)

        def grad(x):
            return np.stack([-np.sin(x[:, 0] - a), -0.5 * np.sin(x[:, 1] - b)], axis=1)

        def hess(x):
            h = np.zeros((len(x), 2, 2))
            h[:, 0, 0] = -np.cos(x[:, 0] - a)
            h[:, 1, 1] = -0.5 * np.cos(x[:, 1] - b)
            return h

        crit = np.array([[0, 0], [0, math.pi], [math.pi, 0], [math.pi, math.pi]], float)
        crit = (crit + np.array([a, b])) % (2 * math.pi)
        return MorseFunctionSpec("torus2", value, grad, hess, crit, exclusion_radius,
                                 name="cos t + cos f / 2")
    if manifold == "sphere2":
        if any(shift):
            raise ValueError("the sphere Morse function is not translatable")

        def value(x):
            return np.cos(x[:, 0])

        def grad(x):
            return np.stack([-np.sin(x[:, 0]), np.zeros(len(x))], axis=1)

        def hess(x):
            h = np.zeros((len(x), 2, 2))
            h[:, 0, 0] = -np.cos(x[:, 0])
            return h

        crit = np.array([[0.0, 0.0], [math.pi, 0.0]])
        return MorseFunctionSpec("sphere2", value, grad, hess, crit, exclusion_radius,
                                 name="height z")
    raise ValueError(f"no default Morse function for {manifold!r}")


# --------------------------------------------------------------------------
# summaries


@dataclass
class NodalSummary:
    trial_id: int
    L: float
    manifold: str
    n_zeros: Optional[int] = None
    b0: Optional[int] = None
    crit0: Optional[int] = None
    crit1: Optional[int] = None
    excluded0: Optional[int] = None
    excluded1: Optional[int] = None
    degenerate: bool = False
    reasons: tuple = ()
    seconds: float = 0.0
    exclusion_radius: Optional[float] = None
    refinements: int = 0

    def as_row(self) -> dict:
        d = asdict(self)
        d["reasons"] = ";".join(self.reasons)
        d["degenerate"] = int(self.degenerate)
        return d


def kac_rice_circle_mean(L: float) -> float:
    """Exact expected zero count on the circle for the full ensemble ``U_L``.

    Stationary trigonometric ensemble: density ``(1/pi) sqrt(Var s' / Var s)``
    with ``Var s = (1/2 + K)/pi`` and ``Var s' = sum k^2 / pi``.
    """
    K = math.isqrt(int(math.floor(L)))
    sk2 = K * (K + 1) * (2 * K + 1) / 6
    return 2.0 * math.sqrt(sk2 / (0.5 + K))


# --------------------------------------------------------------------------
# circle


def _check_resolution(cells_per_wavelength: float) -> None:
    if cells_per_wavelength < MIN_CELLS_PER_WAVELENGTH:
        raise ResolutionError(
            f"grid resolution {cells_per_wavelength} cells per wavelength is below the "
            f"minimum of {MIN_CELLS_PER_WAVELENGTH}")


def _circle_amplitudes(section: RandomSection):
    b = section.basis
    c = section.coeffs * b.amplitude
    K = int(b.freq[:, 0].max()) if b.dim else 0
    Z = np.zeros(K + 1, dtype=complex)
    k = b.freq[:, 0]
    np.add.at(Z, k[b.kind == 1], c[b.kind == 1])
    np.add.at(Z, k[b.kind == 2], -1j * c[b.kind == 2])
    Z[0] += c[b.kind == 0].sum()
    return Z


def _circle_eval(Z: np.ndarray, theta: np.ndarray, orders: Sequence[int]) -> list[np.ndarray]:
    """Derivatives of ``Re sum_k Z_k e^{ik theta}`` through one power table."""
    K = Z.size - 1
    z = np.exp(1j * theta)
    pw = np.empty((theta.size, K + 1), dtype=complex)
    pw[:, 0] = 1.0
    if K:
        pw[:, 1:] = z[:, None]
        np.cumprod(pw[:, 1:], axis=1, out=pw[:, 1:])
    ik = 1j * np.arange(K + 1)
    W = np.stack([Z * ik ** r for r in orders], axis=1)
    out = np.real(pw @ W)
    return [out[:, j] for j in range(len(orders))]


def _bracketed_root(Z, lo, hi, order, tol, max_iter=100):
    """Roots of the ``order``-th derivative inside sign-changing brackets.

    Newton steps from the bracket midpoint, falling back to bisection whenever
    a step leaves the bracket; stops when the bracket or the step is below tol.
    """
    lo = lo.copy()
    hi = hi.copy()
    flo = _circle_eval(Z, lo, [order])[0]
    x = 0.5 * (lo + hi)
    active = np.ones(lo.size, dtype=bool)
    for _ in range(max_iter):
        if not active.any():
            break
        f, df = _circle_eval(Z, x[active], [order, order + 1])
        xa, la, ha, fla = x[active], lo[active], hi[active], flo[active]
        left = np.sign(f) == np.sign(fla)
        la = np.where(left, xa, la)
        fla = np.where(left, f, fla)
        ha = np.where(left, ha, xa)
        with np.errstate(divide="ignore", invalid="ignore"):
            xn = xa - f / df
        bad = ~np.isfinite(xn) | (xn <= la) | (xn >= ha)
        xn = np.where(bad, 0.5 * (la + ha), xn)
        done = (np.abs(xn - xa) < tol) | (ha - la < tol) | (f == 0)
        lo[active], hi[active], flo[active] = la, ha, fla
        x[active] = np.where(f == 0, xa, xn)
        idx = np.flatnonzero(active)
        active[idx[done]] = False
    return x


def count_zeros_circle(section: RandomSection,
                       cells_per_wavelength: float = DEFAULT_CELLS_PER_WAVELENGTH,
                       tol: float = 1e-10, trial_id: int = 0) -> NodalSummary:
    """Count the zeros of a trigonometric section on the circle.

    Critical points of ``s`` are located first (sign changes of ``s'`` on the
    grid, refined); between consecutive points of grid-plus-critical-points
    ``s`` is monotone, so sign changes along that merged sequence are exactly
    the zeros.  Each zero is then refined to ``tol``.
    """
    _check_resolution(cells_per_wavelength)
    t0 = time.perf_counter()
    b = section.basis
    L = b.L
    M = grid_size(L, cells_per_wavelength)
    Z = _circle_amplitudes(section)
    theta = 2 * math.pi * np.arange(M) / M
    s, ds = eval_grid(section, M, ["id", "t"])
    h = 2 * math.pi / M

    # critical points of s
    i = np.flatnonzero(np.sign(ds) != np.sign(np.roll(ds, -1)))
    crit = _bracketed_root(Z, theta[i], theta[i] + h, 1, tol) if i.size else np.empty(0)
    crit_vals = _circle_eval(Z, crit, [0])[0] if crit.size else np.empty(0)

    pts = np.concatenate([theta, crit % (2 * math.pi)])
    vals = np.concatenate([s, crit_vals])
    order = np.argsort(pts, kind="stable")
    pts, vals = pts[order], vals[order]
    nxt_pts = np.roll(pts, -1)
    nxt_pts[-1] += 2 * math.pi
    pos = vals > 0
    change = np.flatnonzero(pos != np.roll(pos, -1))
    roots = np.empty(0)
    reasons = []
    if change.size:
        lo, hi = pts[change], nxt_pts[change]
        roots = _bracketed_root(Z, lo, hi, 0, tol)
        f, df = _circle_eval(Z, roots, [0, 1])
        scale = section.scale
        kscale = math.sqrt(max(L, 1.0))
        if np.any((np.abs(f) < 1e-8 * scale) & (np.abs(df) < 1e-8 * scale * kscale)):
            reasons.append("tangential zero")
    n = int(change.size)
    if n % 2:
        reasons.append("odd zero count")
    return NodalSummary(trial_id=trial_id, L=L, manifold="circle", n_zeros=n,
                        degenerate=bool(reasons), reasons=tuple(reasons),
                        seconds=time.perf_counter() - t0)


# --------------------------------------------------------------------------
# surfaces: marching squares


@dataclass
class NodalCurve:
    """Marching-squares realization of ``s^{-1}(0)`` on a chart grid."""

    theta: np.ndarray
    phi: np.ndarray
    periodic_theta: bool
    nodes: np.ndarray          # (k, 2) chart coordinates of edge crossings
    node_edge: np.ndarray      # (k,) flat edge id
    segments: np.ndarray       # (m, 2) node indices
    labels: np.ndarray         # (k,) component label per node
    b0: int
    degenerate_cells: int = 0
    saddle_cells: int = 0
    extra: dict = field(default_factory=dict)
    vertex_pos: Optional[np.ndarray] = None


def _surface_grids(section: RandomSection, cells_per_wavelength: float, derivs):
    b = section.basis
    M = grid_size(b.L, cells_per_wavelength)
    if b.manifold == "torus2":
        theta = 2 * math.pi * np.arange(M) / M
        phi = theta
        grids = eval_grid(section, M, derivs)
        return theta, phi, True, grids, M
    if b.manifold == "sphere2":
        nt = M // 2 + 1
        theta = np.linspace(0.0, math.pi, nt)
        phi = 2 * math.pi * np.arange(M) / M
        grids = eval_grid(section, M, derivs, n_theta=nt)
        return theta, phi, False, grids, M
    raise ValueError("surface analysis needs torus2 or sphere2")


SNAP_FACTOR = 0.5


@dataclass
class SurfaceGrid:
    """Chart grid of ``s, s_t, s_f`` with explicit vertex positions.

    ``pos[a, b]`` is the regular grid point except at vertices that were
    moved onto a critical point of ``s`` (see :func:`surface_grid`).
    """

    theta: np.ndarray
    phi: np.ndarray
    periodic_theta: bool
    V: np.ndarray
    St: np.ndarray
    Sf: np.ndarray
    pos: np.ndarray
    snapped: int = 0
    conflicts: int = 0
    moved: Optional[np.ndarray] = None  # (nt, nph) mask of snapped vertices


def surface_grid(section: RandomSection,
                 cells_per_wavelength: float = DEFAULT_CELLS_PER_WAVELENGTH,
                 snap_factor: float = SNAP_FACTOR) -> SurfaceGrid:
    """Grid values, with near-zero critical points of ``s`` snapped onto vertices.

    A critical point whose zero level passes within ``snap_factor`` cells (see
    :func:`critical_value_gaps`) is invisible to the sign pattern of a regular
    grid.  Its nearest vertex is moved onto it and given the exact value there,
    so the four neighbouring vertices see the quadratic sign pattern around it:
    a saddle joins the correct pair of quadrants and an extremum gets its small
    oval.  Two such points claiming the same vertex are counted in
    ``conflicts``; the caller should refine the grid.
    """
    theta, phi, per_t, (V, St, Sf), _ = _surface_grids(section, cells_per_wavelength,
                                                       ["id", "t", "p"])
    T, P = np.meshgrid(theta, phi, indexing="ij")
    g = SurfaceGrid(theta, phi, per_t, V, St, Sf, np.stack([T, P], -1))
    if snap_factor > 0:
        x, v, gap = _critical_points_of_s(section, g)
        sel = gap < snap_factor
        if sel.any():
            _snap(section, g, x[sel])
    return g


def _snap(section, g, x):
    nt, nph = g.V.shape
    h_t = g.theta[1] - g.theta[0]
    h_p = g.phi[1] - g.phi[0]
    a = np.rint((x[:, 0] - g.theta[0]) / h_t).astype(int)
    b = np.rint((x[:, 1] - g.phi[0]) / h_p).astype(int) % nph
    if g.periodic_theta:
        a %= nt
    else:
        a = np.clip(a, 1, nt - 2)  # pole rows stay put
    flat = a * nph + b
    _, first = np.unique(flat, return_index=True)
    g.conflicts = int(len(flat) - first.size)
    a, b, x = a[first], b[first], x[first]
    jet = section_jet(section, x, order=1)
    g.V[a, b], g.St[a, b], g.Sf[a, b] = jet[0], jet[1], jet[2]
    g.pos[a, b] = x
    g.snapped = int(first.size)
    g.moved = np.zeros(g.V.shape, bool)
    g.moved[a, b] = True


def _delta(d, periodic_theta):
    """Chart displacement with the periodic coordinates wrapped into ``[-pi, pi)``."""
    d = d.copy()
    d[..., 1] = (d[..., 1] + math.pi) % (2 * math.pi) - math.pi
    if periodic_theta:
        d[..., 0] = (d[..., 0] + math.pi) % (2 * math.pi) - math.pi
    return d


def _cell_centers(section: RandomSection, theta, phi, periodic_theta):
    b = section.basis
    h_t = theta[1] - theta[0]
    h_p = phi[1] - phi[0]
    if b.manifold == "torus2":
        M = theta.size
        from .model_ensembles import _torus_lattice
        from scipy import fft as sfft

        Z = _torus_lattice(section, M)
        kk = sfft.fftfreq(M, 1.0 / M)
        shift = np.exp(1j * kk * h_t / 2)
        return np.real(sfft.ifft2(Z * shift[:, None] * shift[None, :]) * M * M)
    # sphere: separable evaluation at shifted rows/cols
    from .model_ensembles import mode_values

    tc = theta[:-1] + h_t / 2
    pc = phi + h_p / 2
    # evaluate directly; sphere grids are small
    T, P = np.meshgrid(tc, pc, indexing="ij")
    return (mode_values(b, np.stack([T.ravel(), P.ravel()], 1)) @ section.coeffs).reshape(T.shape)


def extract_nodal_components(section: RandomSection,
                             cells_per_wavelength: float = DEFAULT_CELLS_PER_WAVELENGTH,
                             grids=None) -> NodalCurve:
    """Marching squares + connected components of the nodal set on a surface.

    Saddle cells (alternating corner signs) are resolved with the sign of the
    field sampled at the cell center.  On the torus both chart directions
    wrap; on the sphere the longitude wraps and the pole rows, where every
    grid value coincides, never carry a crossing.
    """
    _check_resolution(cells_per_wavelength)
    if grids is None:
        grids = surface_grid(section, cells_per_wavelength)
    theta, phi, per_t, V, vpos = grids.theta, grids.phi, grids.periodic_theta, grids.V, grids.pos
    nt, nph = V.shape
    ct = nt if per_t else nt - 1  # number of cell rows
    pos = V > 0

    # horizontal edge (a,b)-(a,b+1): id a*nph + b ; vertical edge (a,b)-(a+1,b): H + a*nph + b
    H = nt * nph
    Vr = np.roll(V, -1, axis=1)
    h_cross = pos != np.roll(pos, -1, axis=1)
    if per_t:
        Vd = np.roll(V, -1, axis=0)
        v_cross = pos != np.roll(pos, -1, axis=0)
    else:
        Vd = np.vstack([V[1:], V[-1:]])
        v_cross = np.vstack([pos[:-1] != pos[1:], np.zeros((1, nph), bool)])

    h_ids = np.flatnonzero(h_cross.ravel())
    v_ids = np.flatnonzero(v_cross.ravel())
    node_edge = np.concatenate([h_ids, H + v_ids])
    node_of = np.full(2 * H, -1, dtype=np.int64)
    node_of[node_edge] = np.arange(node_edge.size)

    # crossing positions by linear interpolation between the (possibly moved) vertices
    ha, hb = np.divmod(h_ids, nph)
    v0, v1 = V.ravel()[h_ids], Vr.ravel()[h_ids]
    th_ = v0 / (v0 - v1)
    p0 = vpos[ha, hb]
    hpts = p0 + th_[:, None] * _delta(vpos[ha, (hb + 1) % nph] - p0, per_t)
    va, vb = np.divmod(v_ids, nph)
    w0, w1 = V.ravel()[v_ids], Vd.ravel()[v_ids]
    tv = w0 / (w0 - w1)
    q0 = vpos[va, vb]
    vpts = q0 + tv[:, None] * _delta(vpos[(va + 1) % nt, vb] - q0, per_t)
    nodes = _wrap(np.vstack([hpts, vpts]), section.basis.manifold)

    # cells (a, b): corners (a,b) (a,b+1) (a+1,b) (a+1,b+1)
    a = np.arange(ct)[:, None]
    bb = np.arange(nph)[None, :]
    a1 = (a + 1) % nt
    b1 = (bb + 1) % nph
    top = node_of[(a * nph + bb)]
    bottom = node_of[(a1 * nph + bb)]
    left = node_of[H + a * nph + bb]
    right = node_of[H + a * nph + b1]
    edges = np.stack([top, right, bottom, left], axis=-1).reshape(-1, 4)
    ncross = (edges >= 0).sum(1)

    segs = []
    two = ncross == 2
    e2 = edges[two]
    e2 = np.sort(e2, axis=1)[:, 2:]  # the two non-negative entries
    segs.append(e2)

    four = np.flatnonzero(ncross == 4)
    n_saddle = four.size
    if n_saddle:
        cells_a, cells_b = np.divmod(four, nph)
        center = _cell_centers(section, theta, phi, per_t)
        csign = center[cells_a, cells_b] > 0
        if grids.moved is not None:
            # a corner sitting on a critical point of s decides the cell like
            # the saddle of the bilinear interpolant would
            ca1, cb1 = (cells_a + 1) % nt, (cells_b + 1) % nph
            for ra, rb in ((cells_a, cells_b), (cells_a, cb1), (ca1, cells_b), (ca1, cb1)):
                hit = grids.moved[ra, rb]
                csign = np.where(hit, pos[ra, rb], csign)
        tl = pos[cells_a, cells_b]
        e4 = edges[four]
        # center agrees with top-left: the TL/BR region is joined, cut off TR and BL corners
        join = csign == tl
        s1 = np.where(join[:, None], e4[:, [0, 1]], e4[:, [0, 3]])  # (top,right) | (top,left)
        s2 = np.where(join[:, None], e4[:, [3, 2]], e4[:, [1, 2]])  # (left,bottom) | (right,bottom)
        segs += [s1, s2]
    segments = np.vstack(segs) if segs else np.empty((0, 2), int)

    # cells whose four corners are all numerically zero
    scale = section.scale
    av = np.abs(V)
    corners = np.stack([av[:ct], np.roll(av, -1, 1)[:ct],
                        np.roll(av, -1, 0)[:ct] if per_t else av[1:],
                        np.roll(np.roll(av, -1, 0), -1, 1)[:ct] if per_t else np.roll(av[1:], -1, 1)])
    n_deg = int(np.all(corners < 1e-12 * scale, axis=0).sum())

    k = nodes.shape[0]
    if k:
        g = coo_matrix((np.ones(len(segments)), (segments[:, 0], segments[:, 1])), shape=(k, k))
        b0, labels = connected_components(g, directed=False)
    else:
        b0, labels = 0, np.empty(0, int)
    return NodalCurve(theta, phi, per_t, nodes, node_edge, segments, labels, int(b0),
                      degenerate_cells=n_deg, saddle_cells=int(n_saddle), vertex_pos=vpos)


def extract_nodal_components_torus(section: RandomSection,
                                   cells_per_wavelength: float = DEFAULT_CELLS_PER_WAVELENGTH):
    if section.basis.manifold != "torus2":
        raise ValueError("expected a torus section")
    curve = extract_nodal_components(section, cells_per_wavelength)
    return curve.segments, curve.b0


# --------------------------------------------------------------------------
# critical points of p restricted to the nodal curve


def _residuals(jet, gp, hp):
    s, st, sf, stt, stf, sff = jet
    pt, pf = gp[:, 0], gp[:, 1]
    ptt, ptf, pff = hp[:, 0, 0], hp[:, 0, 1], hp[:, 1, 1]
    D = st * pf - sf * pt
    Dt = stt * pf + st * ptf - stf * pt - sf * ptt
    Df = stf * pf + st * pff - sff * pt - sf * ptf
    return s, D, np.stack([np.stack([st, sf], -1), np.stack([Dt, Df], -1)], -2)


def restricted_hessian(jet, gp, hp):
    """Second derivative of ``p`` along the nodal curve, tangent ``v = (-s_f, s_t)``.

    Returns ``(R, scale)``; the Morse index is 1 where ``R < 0``.
    """
    s, st, sf, stt, stf, sff = jet
    g2 = st * st + sf * sf
    lam = (gp[:, 0] * st + gp[:, 1] * sf) / g2
    vt, vf = -sf, st
    hp_vv = hp[:, 0, 0] * vt * vt + 2 * hp[:, 0, 1] * vt * vf + hp[:, 1, 1] * vf * vf
    hs_vv = stt * vt * vt + 2 * stf * vt * vf + sff * vf * vf
    R = hp_vv - lam * hs_vv
    # size of the two competing terms: a tiny R relative to them is a cancellation
    scale = np.abs(hp_vv) + np.abs(lam * hs_vv)
    return R, scale


def _wrap(pts, manifold):
    out = pts.copy()
    out[:, 1] %= 2 * math.pi
    if manifold == "torus2":
        out[:, 0] %= 2 * math.pi
    else:
        # reflect through a pole
        t = out[:, 0]
        over = t > math.pi
        under = t < 0
        out[over, 0] = 2 * math.pi - t[over]
        out[under, 0] = -t[under]
        out[over | under, 1] = (out[over | under, 1] + math.pi) % (2 * math.pi)
    return out


def _newton(section, morse, x0, step_max, tol, max_iter=60):
    """Damped Newton on ``(s, D) = 0``: steps capped at ``step_max`` and halved
    until the scaled residual decreases."""
    man = section.basis.manifold
    sc = section.scale
    dsc = sc * math.sqrt(max(section.basis.L, 1.0))

    def resid(pts):
        jet = section_jet(section, pts)
        s, D, J = _residuals(jet, morse.grad(pts), morse.hess(pts))
        return s, D, J, (s / sc) ** 2 + (D / dsc) ** 2

    x = x0.copy()
    conv = np.zeros(len(x), bool)
    s, D, J, f = resid(x)
    for _ in range(max_iter):
        act = np.flatnonzero(~conv)
        if act.size == 0:
            break
        Ja, sa, Da = J[act], s[act], D[act]
        det = Ja[:, 0, 0] * Ja[:, 1, 1] - Ja[:, 0, 1] * Ja[:, 1, 0]
        with np.errstate(divide="ignore", invalid="ignore"):
            dx0 = (Ja[:, 1, 1] * sa - Ja[:, 0, 1] * Da) / det
            dx1 = (-Ja[:, 1, 0] * sa + Ja[:, 0, 0] * Da) / det
        step = np.stack([dx0, dx1], 1)
        step[~np.isfinite(step)] = 0.0
        nrm = np.linalg.norm(step, axis=1)
        step *= np.minimum(1.0, step_max / np.maximum(nrm, 1e-300))[:, None]
        t = np.ones(act.size)
        pending = np.arange(act.size)
        for _ in range(12):
            xn = _wrap(x[act[pending]] - step[pending] * t[pending, None], man)
            sn, Dn, Jn, fn = resid(xn)
            ok = (fn <= f[act[pending]]) | (nrm[pending] * t[pending] < tol)
            idx = act[pending[ok]]
            x[idx], s[idx], D[idx], J[idx], f[idx] = xn[ok], sn[ok], Dn[ok], Jn[ok], fn[ok]
            pending = pending[~ok]
            if pending.size == 0:
                break
            t[pending] *= 0.5
        conv[act[nrm < tol]] = True
    return x, conv


def _duplicated(x, manifold, tol=1e-6):
    """Mask of points lying within ``tol`` of another point of ``x``."""
    d = _chart_distance(x[:, None, :], x[None, :, :], manifold)
    np.fill_diagonal(d, np.inf)
    return (d < tol).any(1)


def _chart_distance(p, q, manifold):
    d = p - q
    d[..., 1] = (d[..., 1] + math.pi) % (2 * math.pi) - math.pi
    if manifold == "torus2":
        d[..., 0] = (d[..., 0] + math.pi) % (2 * math.pi) - math.pi
    return np.sqrt((d ** 2).sum(-1))


def _edge_geometry(curve, V):
    """Grid endpoints of each crossed edge and the linear crossing parameter."""
    nt, nph = V.shape
    H = nt * nph
    e = curve.node_edge
    vert = e >= H
    flat = np.where(vert, e - H, e)
    a, b = np.divmod(flat, nph)
    nxt = np.where(vert, ((a + 1) % nt) * nph + b, a * nph + (b + 1) % nph)
    f0 = V.ravel()[flat]
    return flat, nxt, f0 / (f0 - V.ravel()[nxt])


def _refine_crossings(section, curve, V, which, iters=4):
    """Safeguarded Newton along crossed grid edges; returns nodes and first-order jets."""
    flat, nxt, t = _edge_geometry(curve, V)
    flat, nxt, t = flat[which], nxt[which], t[which]
    f0 = V.ravel()[flat]
    lo = np.zeros(flat.size)
    hi = np.ones(flat.size)
    P = curve.vertex_pos.reshape(-1, 2)
    base = P[flat]
    direction = _delta(P[nxt] - base, curve.periodic_theta)
    pos0 = f0 > 0
    for _ in range(iters):
        pts = _wrap(base + t[:, None] * direction, section.basis.manifold)
        jet = section_jet(section, pts, order=1)
        f = jet[0]
        df = jet[1] * direction[:, 0] + jet[2] * direction[:, 1]
        same = (f > 0) == pos0
        lo = np.where(same, t, lo)
        hi = np.where(same, hi, t)
        with np.errstate(divide="ignore", invalid="ignore"):
            tn = t - f / df
        bad = ~np.isfinite(tn) | (tn <= lo) | (tn >= hi)
        t = np.where(bad, 0.5 * (lo + hi), tn)
    pts = _wrap(base + t[:, None] * direction, section.basis.manifold)
    return pts, section_jet(section, pts, order=2)


def _project_to_curve(section, c, n, wmax, iters=6):
    """Zero of ``w -> s(c + w n)`` nearest to ``w = 0`` within ``|w| <= wmax``."""
    man = section.basis.manifold
    ws = np.linspace(-1.0, 1.0, 7)[None, :] * wmax[:, None]
    pts = c[:, None, :] + ws[..., None] * n[:, None, :]
    sv = section_jet(section, _wrap(pts.reshape(-1, 2), man), order=0)[0].reshape(ws.shape)
    chg = (sv[:, :-1] > 0) != (sv[:, 1:] > 0)
    mid = np.abs(0.5 * (ws[:, :-1] + ws[:, 1:]))
    mid = np.where(chg, mid, np.inf)
    k = mid.argmin(1)
    r = np.arange(len(c))
    ok = np.isfinite(mid[r, k])
    lo, hi = ws[r, k], ws[r, k + 1]
    flo = sv[r, k]
    w = 0.5 * (lo + hi)
    for _ in range(iters):
        jet = section_jet(section, _wrap(c + w[:, None] * n, man), order=1)
        f = jet[0]
        df = jet[1] * n[:, 0] + jet[2] * n[:, 1]
        same = (f > 0) == (flo > 0)
        lo = np.where(same, w, lo)
        hi = np.where(same, hi, w)
        with np.errstate(divide="ignore", invalid="ignore"):
            wn = w - f / df
        bad = ~np.isfinite(wn) | (wn <= np.minimum(lo, hi)) | (wn >= np.maximum(lo, hi))
        w = np.where(bad, 0.5 * (lo + hi), wn)
    return _wrap(c + w[:, None] * n, man), ok


def _root_on_segment(section, morse, p0, dp, d0, d1, iters=40, utol=1e-9):
    """Bracketed root of ``D`` along the true nodal arc between two crossings.

    Points of the arc are parametrized by ``u`` in ``[0, 1]``: the chord point
    ``p0 + u dp`` is moved onto ``s = 0`` along the chord normal.  ``D`` has
    opposite signs at the ends, so the Illinois variant of regula falsi keeps
    the root on the same branch even where another branch passes nearby.  The
    result is a seed for a final, tightly step-limited Newton polish.
    """
    k = len(p0)
    length = np.linalg.norm(dp, axis=1)
    n = np.stack([-dp[:, 1], dp[:, 0]], 1) / length[:, None]
    wmax = 0.75 * length
    ua, ub = np.zeros(k), np.ones(k)
    fa, fb = d0.copy(), d1.copy()
    ok = np.ones(k, bool)
    x = p0.copy()
    side = np.zeros(k, int)
    act = np.arange(k)
    for _ in range(iters):
        if act.size == 0:
            break
        A = act
        u = (ua[A] * fb[A] - ub[A] * fa[A]) / (fb[A] - fa[A])
        u = np.where(np.isfinite(u) & (u > ua[A]) & (u < ub[A]), u, 0.5 * (ua[A] + ub[A]))
        xa, okp = _project_to_curve(section, p0[A] + u[:, None] * dp[A], n[A], wmax[A])
        ok[A] &= okp
        x[A] = xa
        gp = morse.grad(xa)
        jet = section_jet(section, xa, order=1)
        fu = jet[1] * gp[:, 1] - jet[2] * gp[:, 0]
        left = (fu > 0) == (fa[A] > 0)
        # Illinois: halve the stale endpoint value when the same side repeats
        fb[A] = np.where(left & (side[A] == 1), 0.5 * fb[A], fb[A])
        fa[A] = np.where(~left & (side[A] == -1), 0.5 * fa[A], fa[A])
        ua[A] = np.where(left, u, ua[A])
        fa[A] = np.where(left, fu, fa[A])
        ub[A] = np.where(left, ub[A], u)
        fb[A] = np.where(left, fb[A], fu)
        side[A] = np.where(left, 1, -1)
        done = ((ub[A] - ua[A]) < utol) | (fu == 0)
        act = A[~done]
    return x, ok


def _hidden_pairs(section, morse, curve, seg, Dn, slope, tangent, samples=17):
    """Brackets for a min-max pair of ``p`` hiding inside one segment.

    Two nearby critical points leave ``D`` with the same sign at both ends of
    a segment.  Where both ends carry exact slopes, a cubic Hermite model of
    ``D`` along the chord is checked for a dip through zero; the dip point is
    moved onto the curve and, if ``D`` really changes sign there, the segment
    is split into two sign-changing brackets.  Returns ``(p0, dp, d0, d1,
    label)`` for the new brackets, or None.
    """
    man = section.basis.manifold
    ok = np.isfinite(slope[seg[:, 0], 0]) & np.isfinite(slope[seg[:, 1], 0])
    seg = seg[ok]
    if len(seg) == 0:
        return None
    a, b = seg[:, 0], seg[:, 1]
    p0 = curve.nodes[a]
    dp = _delta(curve.nodes[b] - p0, curve.periodic_theta)

    def along(i):
        # derivative of D along the curve, per unit of the chord parameter
        tau = tangent[i]
        tau = tau * np.sign((tau * dp).sum(1))[:, None]
        return (slope[i] * tau).sum(1) * (tau * dp).sum(1)

    d0, d1, m0, m1 = Dn[a], Dn[b], along(a), along(b)
    u = np.linspace(0.0, 1.0, samples)[None, :]
    h00, h10 = 2 * u ** 3 - 3 * u ** 2 + 1, u ** 3 - 2 * u ** 2 + u
    h01, h11 = -2 * u ** 3 + 3 * u ** 2, u ** 3 - u ** 2
    H = h00 * d0[:, None] + h10 * m0[:, None] + h01 * d1[:, None] + h11 * m1[:, None]
    H *= np.sign(d0)[:, None]
    k = H.argmin(1)
    dip = H[np.arange(len(H)), k] < 0
    if not dip.any():
        return None
    p0, dp, d0, d1 = p0[dip], dp[dip], d0[dip], d1[dip]
    us = u[0, k[dip]]
    n = np.stack([-dp[:, 1], dp[:, 0]], 1) / np.linalg.norm(dp, axis=1)[:, None]
    xm, found = _project_to_curve(section, p0 + us[:, None] * dp, n, 0.75 * np.linalg.norm(dp, axis=1))
    jet = section_jet(section, xm, order=1)
    gp = morse.grad(xm)
    dm = jet[1] * gp[:, 1] - jet[2] * gp[:, 0]
    real = found & ((dm > 0) != (d0 > 0))
    if not real.any():
        return None
    p0, dp, d0, d1, us, dm = p0[real], dp[real], d0[real], d1[real], us[real], dm[real]
    lab = curve.labels[seg[dip][real, 0]]
    first = (p0, us[:, None] * dp, d0, dm)
    second = (p0 + us[:, None] * dp, (1 - us)[:, None] * dp, dm, d1)
    return (np.vstack([first[0], _wrap(second[0], man)]), np.vstack([first[1], second[1]]),
            np.concatenate([first[2], second[2]]), np.concatenate([first[3], second[3]]),
            np.concatenate([lab, lab]))


@dataclass
class CriticalPoints:
    points: np.ndarray
    index: np.ndarray
    excluded: np.ndarray
    reasons: list
    component: Optional[np.ndarray] = None


def critical_points_on_nodal(section: RandomSection, morse: MorseFunctionSpec,
                             cells_per_wavelength: float = DEFAULT_CELLS_PER_WAVELENGTH,
                             newton_tol: float = 1e-12, curve: Optional[NodalCurve] = None,
                             grids=None) -> tuple[CriticalPoints, NodalCurve]:
    """Critical points of ``p`` restricted to ``s^{-1}(0)`` with Morse indices."""
    _check_resolution(cells_per_wavelength)
    b = section.basis
    if grids is None:
        grids = surface_grid(section, cells_per_wavelength)
    theta, phi, per_t = grids.theta, grids.phi, grids.periodic_theta
    V, St, Sf = grids.V, grids.St, grids.Sf
    if curve is None:
        curve = extract_nodal_components(section, cells_per_wavelength, grids)
    reasons = []
    if curve.degenerate_cells:
        reasons.append("flat cell")

    # D at crossings by linear interpolation of the grid values; where it is
    # small enough for the interpolation error to matter, move the crossing onto
    # the true curve along its edge and evaluate D exactly
    gp = morse.grad(grids.pos.reshape(-1, 2))
    Dg = St.ravel() * gp[:, 1] - Sf.ravel() * gp[:, 0]
    flat, nxt, t = _edge_geometry(curve, V)
    Dn = (1 - t) * Dg[flat] + t * Dg[nxt]
    near = np.abs(Dn) < 0.3 * math.sqrt(np.mean(Dg ** 2))
    slope = np.full((len(Dn), 2), np.nan)  # exact grad D and unit tangent at refined nodes
    tangent = np.full((len(Dn), 2), np.nan)
    if near.any():
        nodes, jet = _refine_crossings(section, curve, V, near)
        curve.nodes[near] = nodes
        s_, Dx, J = _residuals(jet, morse.grad(nodes), morse.hess(nodes))
        Dn[near] = Dx
        slope[near] = J[:, 1]
        tau = np.stack([-jet[2], jet[1]], 1)
        tangent[near] = tau / np.linalg.norm(tau, axis=1)[:, None]

    seg = curve.segments
    d0, d1 = Dn[seg[:, 0]], Dn[seg[:, 1]]
    chg = (d0 > 0) != (d1 > 0)
    sa, sb = seg[chg, 0], seg[chg, 1]
    p0 = curve.nodes[sa]
    dp = _delta(curve.nodes[sb] - p0, per_t)
    d0c, d1c = d0[chg], d1[chg]
    lab = curve.labels[sa]
    hidden = _hidden_pairs(section, morse, curve, seg[~chg], Dn, slope, tangent)
    if hidden is not None:
        p0 = np.vstack([p0, hidden[0]])
        dp = np.vstack([dp, hidden[1]])
        d0c = np.concatenate([d0c, hidden[2]])
        d1c = np.concatenate([d1c, hidden[3]])
        lab = np.concatenate([lab, hidden[4]])

    if len(p0) == 0:
        if curve.b0:
            reasons.append("component without critical points")
        empty = CriticalPoints(np.empty((0, 2)), np.empty(0, int), np.empty(0, bool), reasons,
                               np.empty(0, int))
        return empty, curve

    h = max(theta[1] - theta[0], phi[1] - phi[0])
    lin = _wrap(p0 + (d0c / (d0c - d1c))[:, None] * dp, b.manifold)
    x, conv = _newton(section, morse, lin, step_max=h, tol=newton_tol)
    bad = ~conv | (_chart_distance(x, lin, b.manifold) > 1.5 * h) | _duplicated(x, b.manifold)
    if bad.any():
        # near a saddle of s two branches can share a cell; keep the root on its own arc
        seeds, ok = _root_on_segment(section, morse, p0[bad], dp[bad], d0c[bad], d1c[bad])
        if not ok.all():
            reasons.append("nodal curve left its cell")
        xb, cb = _newton(section, morse, seeds, step_max=1e-3 * h, tol=newton_tol)
        if not cb.all():
            reasons.append("newton did not converge")
        if np.any(_chart_distance(xb, seeds, b.manifold) > 1e-2 * h):
            reasons.append("newton left its seed")
        x[bad] = xb

    # deduplicate
    keep = np.ones(len(x), bool)
    order = np.lexsort((x[:, 1], x[:, 0]))
    for i_, i in enumerate(order):
        if not keep[i]:
            continue
        close = _chart_distance(x[order[i_ + 1:]], x[i][None, :], b.manifold) < 1e-6
        if close.any():
            keep[order[i_ + 1:][close]] = False
            reasons.append("duplicate critical point")
    x = x[keep]
    comp = lab[keep]

    jet = section_jet(section, x)
    gpx, hpx = morse.grad(x), morse.hess(x)
    scale = section.scale
    L = b.L
    gnorm = np.hypot(jet[1], jet[2])
    if np.any(gnorm < 1e-8 * scale * math.sqrt(L)):
        reasons.append("singular nodal point")
    R, rscale = restricted_hessian(jet, gpx, hpx)
    if np.any(np.abs(R) < 1e-8 * rscale):
        reasons.append("degenerate restricted Hessian")
    index = (R < 0).astype(int)
    excluded = morse.distance_to_critical(x) < morse.exclusion_radius
    # on each closed component minima and maxima of p alternate
    per0 = np.bincount(comp[index == 0], minlength=curve.b0)
    per1 = np.bincount(comp[index == 1], minlength=curve.b0)
    if np.any(per0 != per1):
        reasons.append("unbalanced critical points")
    if np.any(per0 == 0):
        reasons.append("component without critical points")
    return CriticalPoints(x, index, excluded, list(dict.fromkeys(reasons)), comp), curve


def _corner_change(G, per_t):
    """Cells (as an ``(rows, cols)`` mask) whose four corner values change sign."""
    pos = G > 0
    if per_t:
        down = np.roll(pos, -1, 0)
    else:
        down = pos[1:]
        pos = pos[:-1]
    right, diag = np.roll(pos, -1, 1), np.roll(down, -1, 1)
    allp = pos & right & down & diag
    alln = ~(pos | right | down | diag)
    return ~(allp | alln)


def _critical_points_of_s(section: RandomSection, g: SurfaceGrid):
    """Critical points of ``s`` near which the zero level passes, with their
    values and the distance to that level in grid cells.

    Near a critical point with value ``v`` and Hessian eigenvalue ``lam`` of the
    opposite sign the nodal set passes at distance ``sqrt(2|v|/|lam|)``.  When
    that is well below the grid spacing marching squares can join or split
    branches (a saddle) or miss a small oval (an extremum) without any sign
    pattern betraying it.  Critical points whose level set does not reach
    zero nearby are omitted.
    """
    man = section.basis.manifold
    theta, phi = g.theta, g.phi
    h = max(theta[1] - theta[0], phi[1] - phi[0])
    cand = _corner_change(g.St, g.periodic_theta) & _corner_change(g.Sf, g.periodic_theta)
    a, b = np.nonzero(cand)
    x = np.stack([theta[a] + 0.5 * (theta[1] - theta[0]), phi[b] + 0.5 * (phi[1] - phi[0])], 1)
    if man == "sphere2":
        keep = np.sin(x[:, 0]) > 0.05
        x = x[keep]
    if len(x) == 0:
        return np.empty((0, 2)), np.empty(0), np.empty(0)
    x0 = x.copy()
    conv = np.zeros(len(x), bool)
    for _ in range(12):
        jet = section_jet(section, x)
        g = jet[1:3]
        hs = jet[3:6]
        det = hs[0] * hs[2] - hs[1] ** 2
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.stack([(hs[2] * g[0] - hs[1] * g[1]) / det,
                             (-hs[1] * g[0] + hs[0] * g[1]) / det], 1)
        step[~np.isfinite(step)] = 0.0
        nrm = np.linalg.norm(step, axis=1)
        step *= np.minimum(1.0, h / np.maximum(nrm, 1e-300))[:, None]
        x = _wrap(x - step, man)
        conv = nrm < 1e-10
        if conv.all():
            break
    ok = conv & (_chart_distance(x, x0, man) < 1.5 * h)
    x = x[ok]
    if len(x) == 0:
        return np.empty((0, 2)), np.empty(0), np.empty(0)
    x = x[_first_of_duplicates(x, man)]
    jet = section_jet(section, x)
    v = jet[0]
    Hm = np.stack([np.stack([jet[3], jet[4]], -1), np.stack([jet[4], jet[5]], -1)], -2)
    if man == "sphere2":
        w = 1.0 / np.sin(x[:, 0])
        Hm[:, 0, 1] *= w
        Hm[:, 1, 0] *= w
        Hm[:, 1, 1] *= w * w
    ev = np.linalg.eigvalsh(Hm)
    # curvature pulling the field back towards zero
    lam = np.where(v > 0, -ev[:, 0], ev[:, 1])
    with np.errstate(divide="ignore", invalid="ignore"):
        gap = np.sqrt(2.0 * np.abs(v) / lam)
    near = lam > 0
    return x[near], v[near], gap[near] / h


def critical_value_gaps(section: RandomSection,
                        cells_per_wavelength: float = DEFAULT_CELLS_PER_WAVELENGTH) -> np.ndarray:
    """Distances (in grid cells) from the critical points of ``s`` to the zero level."""
    g = surface_grid(section, cells_per_wavelength, snap_factor=0.0)
    return _critical_points_of_s(section, g)[2]


def _first_of_duplicates(x, manifold, tol=1e-7):
    d = _chart_distance(x[:, None, :], x[None, :, :], manifold)
    earlier = np.tril(d < tol, k=-1).any(1)
    return ~earlier


def _analyze_surface(section, morse, cpw, newton_tol):
    g = surface_grid(section, cpw)
    curve = extract_nodal_components(section, cpw, g)
    cps, curve = critical_points_on_nodal(section, morse, cpw, newton_tol, curve=curve, grids=g)
    if g.conflicts:
        cps.reasons.append("near-zero critical points of s share a grid vertex")
    return cps, curve


def analyze_section(section: RandomSection, morse: Optional[MorseFunctionSpec] = None,
                    cells_per_wavelength: float = DEFAULT_CELLS_PER_WAVELENGTH,
                    trial_id: int = 0, newton_tol: float = 1e-12,
                    max_refinements: int = 3) -> NodalSummary:
    """One-trial :class:`NodalSummary` (zeros on the circle, ``b0``/crit counts on surfaces).

    ``crit0``/``crit1`` count every critical point of ``p`` on the nodal curve;
    ``excluded0``/``excluded1`` are the ones within the exclusion radius of
    ``Crit(p)`` (already included in ``crit0``/``crit1``).

    A surface trial that fails a consistency check (typically two nodal
    branches passing within one grid cell near a saddle of ``s`` close to the
    zero level) is redone on a grid twice as fine, up to ``max_refinements``
    times; only if it still fails is it reported as degenerate.
    """
    b = section.basis
    if b.manifold == "circle":
        return count_zeros_circle(section, cells_per_wavelength, trial_id=trial_id)
    t0 = time.perf_counter()
    morse = morse or default_morse(b.manifold)
    _check_resolution(cells_per_wavelength)
    cpw = cells_per_wavelength
    for attempt in range(max_refinements + 1):
        cps, curve = _analyze_surface(section, morse, cpw, newton_tol)
        reasons = list(cps.reasons)
        if not reasons:
            break
        cpw *= 2
    c0 = int((cps.index == 0).sum())
    c1 = int((cps.index == 1).sum())
    return NodalSummary(
        trial_id=trial_id, L=b.L, manifold=b.manifold, b0=curve.b0, crit0=c0, crit1=c1,
        excluded0=int(((cps.index == 0) & cps.excluded).sum()),
        excluded1=int(((cps.index == 1) & cps.excluded).sum()),
        degenerate=bool(reasons), reasons=tuple(reasons),
        seconds=time.perf_counter() - t0, exclusion_radius=morse.exclusion_radius,
        refinements=attempt)


# --------------------------------------------------------------------------
# trials


@dataclass(frozen=True)
class EnsembleConfig:
    manifold: str
    L: float
    window: Optional[float] = None
    pure: bool = False
    cells_per_wavelength: float = DEFAULT_CELLS_PER_WAVELENGTH
    exclusion_radius: float = DEFAULT_EXCLUSION_RADIUS
    coefficient_scale: float = 1.0

    def basis(self) -> SpectralBasis:
        return _cached_basis(self.manifold, self.L, self.window, self.pure)


@lru_cache(maxsize=32)
def _cached_basis(manifold, L, window, pure):
    return build_basis(manifold, L, window=window, pure=pure)


def trial_section(config: EnsembleConfig, seed: int, trial_id: int) -> RandomSection:
    """The section of trial ``trial_id``: stream ``SeedSequence(seed, spawn_key=(trial_id,))``."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(trial_id,)))
    sec = draw_section(config.basis(), rng)
    sec = RandomSection(sec.basis, sec.coeffs, (seed, trial_id))
    if config.coefficient_scale != 1.0:
        sec = sec.scaled(config.coefficient_scale)
    return sec


def _run_chunk(args):
    config, seed, ids = args
    morse = None
    if config.manifold != "circle":
        morse = default_morse(config.manifold, exclusion_radius=config.exclusion_radius)
    return [analyze_section(trial_section(config, seed, i), morse,
                            config.cells_per_wavelength, trial_id=i) for i in ids]


@dataclass
class TrialStats:
    statistic: str
    mean: float
    stderr: float
    n_clean: int
    n_degenerate: int

    @property
    def degenerate_fraction(self) -> float:
        tot = self.n_clean + self.n_degenerate
        return self.n_degenerate / tot if tot else 0.0


def summarize_trials(summaries: Sequence[NodalSummary], statistic: str) -> TrialStats:
    clean = [getattr(s, statistic) for s in summaries if not s.degenerate]
    deg = sum(1 for s in summaries if s.degenerate)
    x = np.asarray(clean, dtype=float)
    mean = float(x.mean()) if x.size else float("nan")
    se = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else float("nan")
    return TrialStats(statistic, mean, se, int(x.size), deg)


def run_trials(config: EnsembleConfig, trials: int, seed: int, workers: int = 1,
               chunk: int = 16, max_degenerate_fraction: float = 0.01) -> list[NodalSummary]:
    """Independent trials ``0..trials-1``; results ordered by trial id.

    Each trial draws from its own stream derived from ``(seed, trial_id)``, so
    the output does not depend on ``workers``.  Degenerate trials are kept in
    the list (flagged); if their fraction exceeds ``max_degenerate_fraction``
    a :class:`DegenerateFractionError` is raised.
    """
    if trials < 1:
        raise ValueError("need at least one trial")
    ids = list(range(trials))
    chunks = [(config, seed, ids[i:i + chunk]) for i in range(0, trials, chunk)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            parts = list(ex.map(_run_chunk, chunks))
    else:
        parts = [_run_chunk(c) for c in chunks]
    out = [s for part in parts for s in part]
    deg = sum(s.degenerate for s in out)
    if deg / trials > max_degenerate_fraction:
        raise DegenerateFractionError(
            f"{deg} of {trials} trials were degenerate (> {max_degenerate_fraction:.0%}); "
            f"increase cells_per_wavelength (currently {config.cells_per_wavelength})")
    return out
