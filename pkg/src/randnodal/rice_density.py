"""Expected density of critical points of ``p`` on the nodal set of ``s``.

Finite ``L``: critical points of ``p|_{s=0}`` are the zeros of
``G = (s, D)``, ``D = s_t p_f - s_f p_t``, so their density at a chart point
``x`` is

    rho_i(x) = E[ |det dG(x)| 1{index = i} | G(x) = 0 ] * density of G(x) at 0.

Everything is linear in the 2-jet of ``s``, whose Gaussian law comes from the
kernel diagonal.  The jet is rotated to ``(s, D, w, s_tt, s_tf, s_ff)`` with
``w = dp . ds``; conditioning on ``s = D = 0`` is a Schur complement, after
which ``ds = w dp / |dp|^2`` and the remaining Hessian entries are sampled.

Large ``L``: closed-form constants assembled from the moments of the symbol
body and the matrix-space expectations ``E(i, n-1-i)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .gaussian_linalg import (
    DetEstimate,
    SingularConditioningError,
    TraceCoupledGaussian,
    expected_det_closed_form,
    expected_det_index,
)
from .model_ensembles import SpectralBasis, jet_index, mode_values
from .nodal_analysis import MorseFunctionSpec, default_morse
from .symbol_geometry import (
    MomentSet,
    annulus_moments,
    ball_moments,
    sphere_shell_moments,
    sym2_inner,
)

__all__ = [
    "DensityQuery",
    "DensityResult",
    "AsymptoticConstant",
    "finite_L_density",
    "integrated_density",
    "asymptotic_constant",
    "dtn_constants",
    "circle_oracle_density",
]

FAMILIES = ("full", "window", "pure")
_COND_LIMIT = 1e12
_SAMPLE_CHUNK = 4096


@dataclass
class DensityQuery:
    basis: SpectralBasis
    point: tuple
    index: int = 0
    samples: int = 20000
    seed: int = 0
    morse: Optional[MorseFunctionSpec] = None
    scale: float = 1.0


@dataclass
class DensityResult:
    point: tuple
    index: int
    density: float          # per unit chart area
    stderr: float
    jacobian: float         # chart measure / Riemannian measure at the point
    samples: int

    @property
    def density_metric(self) -> float:
        return self.density / self.jacobian

    @property
    def stderr_metric(self) -> float:
        return self.stderr / self.jacobian


def circle_oracle_density(L: float) -> float:
    """Exact zero density of the full circle ensemble: ``(1/pi) sqrt(sum k^2 / (1/2 + K))``."""
    K = math.isqrt(int(math.floor(L)))
    sk2 = K * (K + 1) * (2 * K + 1) / 6
    return math.sqrt(sk2 / (0.5 + K)) / math.pi


def _jet_covariances(basis: SpectralBasis, pts: np.ndarray, scale: float) -> np.ndarray:
    rows = np.stack([mode_values(basis, pts, d) for d in jet_index(basis.n)])
    return scale * np.einsum("ipk,jpk->pij", rows, rows)


def _chart_jacobian(basis: SpectralBasis, pts: np.ndarray) -> np.ndarray:
    if basis.manifold == "sphere2":
        return np.sin(pts[:, 0])
    return np.ones(len(pts))


def _psd_sqrt(C: np.ndarray) -> np.ndarray:
    # Cholesky is continuous in C, which keeps common random numbers coherent
    # across points; eigh is only the fallback for singular blocks
    try:
        return np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        out = np.empty_like(C)
        for k in range(len(C)):
            try:
                out[k] = np.linalg.cholesky(C[k])
            except np.linalg.LinAlgError:
                w, V = np.linalg.eigh(C[k])
                out[k] = V * np.sqrt(np.clip(w, 0.0, None))
        return out


def _circle_values(C: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Per-sample Kac-Rice integrand for zeros on the circle, shape ``(P, S)``."""
    c00 = C[:, 0, 0]
    if np.any(c00 <= 0):
        raise SingularConditioningError(np.inf)
    var1 = C[:, 1, 1] - C[:, 0, 1] ** 2 / c00
    p0 = 1.0 / np.sqrt(2 * math.pi * c00)
    return np.abs(np.sqrt(np.clip(var1, 0, None))[:, None] * z[None, :, 0]) * p0[:, None]


def _surface_values(C, pts, morse, index, z):
    """Per-sample integrand ``|det dG| 1{index} p_G(0)`` at each point, shape ``(P, S)``."""
    gp = morse.grad(pts)
    hp = morse.hess(pts)
    pt, pf = gp[:, 0], gp[:, 1]
    P = len(pts)
    T = np.zeros((P, 6, 6))
    T[:, 0, 0] = 1.0
    T[:, 1, 1], T[:, 1, 2] = pf, -pt
    T[:, 2, 1], T[:, 2, 2] = pt, pf
    T[:, 3, 3] = T[:, 4, 4] = T[:, 5, 5] = 1.0
    CY = T @ C @ np.swapaxes(T, 1, 2)
    A = CY[:, :2, :2]
    B = CY[:, 2:, :2]
    cond = np.linalg.cond(A)
    if np.any(~np.isfinite(cond) | (cond > _COND_LIMIT)):
        raise SingularConditioningError(float(np.max(cond)))
    Ainv = np.linalg.inv(A)
    Cc = CY[:, 2:, 2:] - B @ Ainv @ np.swapaxes(B, 1, 2)
    Cc = 0.5 * (Cc + np.swapaxes(Cc, 1, 2))
    p0 = 1.0 / (2 * math.pi * np.sqrt(np.linalg.det(A)))
    X = np.einsum("pij,sj->psi", _psd_sqrt(Cc), z)
    w, htt, htf, hff = (X[..., k] for k in range(4))
    g = (pt * pt + pf * pf)[:, None]
    st = pt[:, None] * w / g
    sf = pf[:, None] * w / g
    ptt, ptf, pff = (hp[:, 0, 0][:, None], hp[:, 0, 1][:, None], hp[:, 1, 1][:, None])
    pt_, pf_ = pt[:, None], pf[:, None]
    Dt = htt * pf_ + st * ptf - htf * pt_ - sf * ptt
    Df = htf * pf_ + st * pff - hff * pt_ - sf * ptf
    det = st * Df - sf * Dt
    # second derivative of p along the curve: tangent v = (-s_f, s_t), dp = lam ds
    vt, vf = -sf, st
    lam = g / w
    hp_vv = ptt * vt * vt + 2 * ptf * vt * vf + pff * vf * vf
    hs_vv = htt * vt * vt + 2 * htf * vt * vf + hff * vf * vf
    R = hp_vv - lam * hs_vv
    sel = (R < 0) if index == 1 else (R > 0)
    return np.abs(det) * sel * p0[:, None]


def _values(basis, pts, morse, index, samples, seed, scale):
    """Integrand samples at every point with common random numbers across points."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    if basis.n == 1:
        pts = pts.reshape(-1, 1)
    k = 1 if basis.n == 1 else 4
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((samples, k))
    C = _jet_covariances(basis, pts, scale)
    out = np.empty((len(pts), samples))
    for i in range(0, samples, _SAMPLE_CHUNK):
        zc = z[i:i + _SAMPLE_CHUNK]
        if basis.n == 1:
            out[:, i:i + len(zc)] = _circle_values(C, zc)
        else:
            out[:, i:i + len(zc)] = _surface_values(C, pts, morse, index, zc)
    return out


def _check_index(basis, index):
    if basis.n == 1:
        if index != 0:
            raise ValueError("on the circle the nodal set is a finite set; only index 0 exists")
    elif index not in (0, 1):
        raise ValueError(f"index must be 0 or 1 on a surface, got {index}")


def finite_L_density(query: DensityQuery) -> DensityResult:
    """Monte Carlo evaluation of the finite-``L`` Kac-Rice density at one point.

    On the circle this is the density of zeros of ``s``.  The returned
    density is per unit chart measure; ``density_metric`` divides by the chart
    Jacobian (``sin theta`` on the sphere).
    """
    b = query.basis
    _check_index(b, query.index)
    if query.samples < 2:
        raise ValueError("need at least two samples")
    pt = np.atleast_1d(np.asarray(query.point, dtype=float))
    if pt.size != b.n:
        raise ValueError(f"point must have {b.n} coordinates")
    morse = None
    if b.n == 2:
        morse = query.morse or default_morse(b.manifold)
        d = morse.distance_to_critical(pt[None, :])[0]
        if d < morse.exclusion_radius:
            raise ValueError(f"point lies within {morse.exclusion_radius} of a critical "
                             f"point of p (distance {d:.3g})")
    vals = _values(b, pt[None, :], morse, query.index, query.samples, query.seed,
                   query.scale)[0]
    jac = float(_chart_jacobian(b, pt[None, :])[0])
    return DensityResult(tuple(pt.tolist()), query.index, float(vals.mean()),
                         float(vals.std(ddof=1) / math.sqrt(vals.size)), jac, query.samples)


def integrated_density(basis: SpectralBasis, index: int = 0,
                       morse: Optional[MorseFunctionSpec] = None, grid: int = 32,
                       samples: int = 4000, seed: int = 0, point_chunk: int = 64) -> dict:
    """Average density over the chart region outside the exclusion discs.

    Uses a uniform midpoint grid (``grid x grid`` on the torus, ``grid`` points
    on the circle).  The same random numbers drive every point, so the
    standard error comes from the spread of the per-sample grid averages.
    Returns ``{"density", "stderr", "area", "expected", "points"}`` where
    ``expected`` is the mean count in the region.
    """
    _check_index(basis, index)
    if basis.manifold == "sphere2":
        raise ValueError("integrated_density supports the circle and the torus")
    u = 2 * math.pi * (np.arange(grid) + 0.5) / grid
    if basis.n == 1:
        pts = u[:, None]
        area = 2 * math.pi
    else:
        morse = morse or default_morse(basis.manifold)
        T, P = np.meshgrid(u, u, indexing="ij")
        pts = np.stack([T.ravel(), P.ravel()], 1)
        pts = pts[morse.distance_to_critical(pts) >= morse.exclusion_radius]
        r = morse.exclusion_radius
        area = 4 * math.pi ** 2 - len(morse.critical_points) * math.pi * r * r
    total = np.zeros(samples)
    for i in range(0, len(pts), point_chunk):
        total += _values(basis, pts[i:i + point_chunk], morse, index, samples, seed,
                         1.0).sum(0)
    per = total / len(pts)
    dens = float(per.mean())
    se = float(per.std(ddof=1) / math.sqrt(samples))
    return {"density": dens, "stderr": se, "area": area, "expected": dens * area,
            "points": len(pts)}


# --------------------------------------------------------------------------
# asymptotic constants


@dataclass(frozen=True)
class AsymptoticConstant:
    """Density constant multiplying ``|dvol_g| L^exponent`` for one Morse index."""

    n: int
    index: int
    family: str
    value: float
    stderr: float
    gamma: Optional[float]
    order: float
    det_value: float

    def __post_init__(self):
        if not self.value > 0:
            raise ValueError("asymptotic constant must be positive")

    @property
    def exponent(self) -> float:
        return self.n / self.order

    def as_dict(self) -> dict:
        return {"n": self.n, "index": self.index, "family": self.family, "value": self.value,
                "stderr": self.stderr, "gamma": self.gamma, "order": self.order,
                "exponent": self.exponent, "det_value": self.det_value}


def _check_ball_ratios(m: MomentSet, rtol: float) -> None:
    # dilation-invariant ratios, so a rescaled Laplace symbol is accepted
    n = m.n
    targets = {"c1^2/(c0 c2)": (m.c1 ** 2 / (m.c0 * m.c2), (n + 4) / (n + 2)),
               "c4/c2": (m.c4 / m.c2, 3.0)}
    if m.is_estimated:
        rel = max(m.c0_stderr / m.c0, m.c1_stderr / m.c1, m.c2_stderr / m.c2,
                  m.c4_stderr / m.c4)
        rtol = max(rtol, 6 * rel)
    for name, (got, want) in targets.items():
        if abs(got - want) > rtol * want:
            raise ValueError(f"moments are not those of a Euclidean ball: {name} = {got:.6g}, "
                             f"expected {want:.6g}")


def _det_value(det, spec: TraceCoupledGaussian, i: int, samples: int, seed: int):
    if det is None:
        if spec.size <= 1:
            return expected_det_closed_form(spec, i), 0.0
        est = expected_det_index(spec, i, samples, seed)
        return est.estimate, est.stderr
    if isinstance(det, DetEstimate):
        return det.estimate, det.stderr
    if isinstance(det, tuple):
        return float(det[0]), float(det[1])
    return float(det), 0.0


def asymptotic_constant(n: int, i: int, family: str = "full",
                        moments: Optional[MomentSet] = None,
                        det: Union[None, float, tuple, DetEstimate] = None,
                        gamma: Optional[float] = None, order: float = 2.0,
                        samples: int = 1_000_000, seed: int = 0,
                        ratio_rtol: float = 1e-6) -> AsymptoticConstant:
    """Limit of ``E(nu_i) / L^{n/order}`` per unit Riemannian volume.

    ``value = E(i, n-1-i) / pi^{(n+1)/2} * c0^{-1/2} * (sqrt(c2)/c1)^{n-1} * c1^{n/2}``

    The trace coupling of the matrix ensemble is read off the moments, so the
    same code serves the ball (full), annulus (window) and sphere (pure)
    bodies.  The value is unchanged when all moments share a common factor.  ``det``
    overrides the matrix expectation (a number, ``(value, stderr)`` or a
    :class:`DetEstimate`); by default it is exact for ``n <= 2`` and Monte
    Carlo otherwise.
    """
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}; expected one of {FAMILIES}")
    if not 0 <= i <= n - 1:
        raise ValueError(f"index {i} out of range for the nodal set of dimension {n - 1}")
    if moments is None:
        if family == "full":
            moments = ball_moments(n)
        elif family == "pure":
            moments = sphere_shell_moments(n)
        else:
            if gamma is None:
                raise ValueError("window family needs gamma or explicit moments")
            moments = annulus_moments(n, gamma, m=order)
    moments.validate()
    if moments.n != n:
        raise ValueError(f"moments are for dimension {moments.n}, not {n}")
    if family == "full":
        _check_ball_ratios(moments, ratio_rtol)
    inner = sym2_inner(moments)
    g = inner.dual_trace_coupling() if inner.size else None
    spec = TraceCoupledGaussian(n - 1, g if g is not None else 0.0)
    e, e_se = _det_value(det, spec, i, samples, seed)
    c0, c1, c2 = moments.c0, moments.c1, moments.c2
    factor = (math.pi ** (-(n + 1) / 2) / math.sqrt(c0)
              * (math.sqrt(c2) / c1) ** (n - 1) * c1 ** (n / 2))
    return AsymptoticConstant(n=n, index=i, family=family, value=e * factor,
                              stderr=e_se * factor, gamma=g, order=order, det_value=e)


def dtn_constants(n: int, moments: Optional[MomentSet] = None, i: int = 0,
                  **kw) -> AsymptoticConstant:
    """Constants for the Dirichlet-to-Neumann operator (order 1).

    Its symbol body is the unit ball as for the Laplacian, so the numbers
    coincide; only the scaling exponent changes from ``n/2`` to ``n``.
    """
    moments = moments or ball_moments(n)
    return asymptotic_constant(n, i, "full", moments, order=1.0, **kw)
