"""Spectral bases ``U_L`` on the circle, flat torus and round sphere.

Charts:

* circle  -- ``theta`` in ``[0, 2 pi)``, eigenfunctions ``1/sqrt(2 pi)``,
  ``cos(k theta)/sqrt(pi)``, ``sin(k theta)/sqrt(pi)``, eigenvalue ``k^2``;
* torus2  -- ``(theta, phi)`` in ``[0, 2 pi)^2`` (flat, volume ``4 pi^2``),
  ``cos/sin(j theta + k phi)/(pi sqrt 2)`` over a half lattice plus the
  constant ``1/(2 pi)``, eigenvalue ``j^2 + k^2``;
* sphere2 -- colatitude/longitude ``(theta, phi)``, real spherical harmonics,
  eigenvalue ``l(l+1)``.

Coefficients of random sections are i.i.d. standard normal.  The Gaussian
``exp(-<s,s>)`` normalization would give variance 1/2 instead; nodal sets do
not see a global factor, and every density built here is invariant under it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import fft as sfft

from .legendre import legendre_table, legendre_with_derivatives

__all__ = [
    "MANIFOLDS",
    "SpectralBasis",
    "RandomSection",
    "JetCovariance",
    "build_basis",
    "draw_section",
    "eval_section",
    "eval_grid",
    "mode_values",
    "kernel_diag",
    "jet_covariance",
    "jet_index",
    "section_jet",
    "grid_size",
    "verify_kernel_asymptotics",
    "weyl_ratio",
    "parse_deriv",
]

MANIFOLDS = ("circle", "torus2", "sphere2")
_DIM = {"circle": 1, "torus2": 2, "sphere2": 2}
_VOLUME = {"circle": 2 * math.pi, "torus2": 4 * math.pi ** 2, "sphere2": 4 * math.pi}


@dataclass(frozen=True, eq=False)
class SpectralBasis:
    """Immutable orthonormal eigenbasis.

    ``freq`` holds the frequency descriptor of each mode: ``k`` (circle),
    ``(j, k)`` (torus) or ``(l, m)`` (sphere, ``m < 0`` meaning the sine
    harmonic).  ``kind`` is 0 for constant, 1 for cosine, 2 for sine modes
    (circle and torus only).
    """

    manifold: str
    L: float
    freq: np.ndarray
    kind: np.ndarray
    eigenvalues: np.ndarray
    window: Optional[float] = None
    pure: bool = False

    @property
    def n(self) -> int:
        return _DIM[self.manifold]

    @property
    def dim(self) -> int:
        return int(self.eigenvalues.size)

    @property
    def volume(self) -> float:
        return _VOLUME[self.manifold]

    @property
    def lmax(self) -> int:
        return int(np.abs(self.freq[:, 0]).max()) if self.dim else 0

    @property
    def amplitude(self) -> np.ndarray:
        if self.manifold == "circle":
            return np.where(self.kind == 0, 1 / math.sqrt(2 * math.pi), 1 / math.sqrt(math.pi))
        if self.manifold == "torus2":
            return np.where(self.kind == 0, 1 / (2 * math.pi), 1 / (math.pi * math.sqrt(2)))
        return np.where(self.freq[:, 1] == 0, 1.0, math.sqrt(2.0))

    def describe(self) -> dict:
        return {"manifold": self.manifold, "L": self.L, "N_L": self.dim,
                "window": self.window, "pure": self.pure}


def _window_mask(lam, L, window, pure):
    if pure:
        return lam == L
    lo = 0.0 if window is None else window * L
    return (lam <= L) & (lam >= lo)


def build_basis(manifold: str, L: float, window: Optional[float] = None,
                pure: bool = False) -> SpectralBasis:
    """Enumerate the modes of ``U_L`` (or ``U_L^a`` / the pure eigenspace)."""
    if manifold not in MANIFOLDS:
        raise ValueError(f"unknown manifold {manifold!r}; choose from {MANIFOLDS}")
    if not L > 0:
        raise ValueError(f"L must be positive, got {L}")
    if window is not None and not pure and not 0.0 <= window < 1.0:
        raise ValueError("window fraction must lie in [0, 1); use pure mode for a = 1")
    if window is not None and pure:
        raise ValueError("choose either a window fraction or pure mode")

    if manifold == "circle":
        K = math.isqrt(int(math.floor(L)))
        ks = np.arange(0, K + 1)
        freq = np.concatenate([[0], np.repeat(ks[1:], 2)])[:, None]
        kind = np.concatenate([[0], np.tile([1, 2], K)])
        lam = freq[:, 0].astype(float) ** 2
    elif manifold == "torus2":
        R = math.isqrt(int(math.floor(L)))
        j, k = np.meshgrid(np.arange(-R, R + 1), np.arange(-R, R + 1), indexing="ij")
        j, k = j.ravel(), k.ravel()
        half = (j > 0) | ((j == 0) & (k > 0))
        sel = half & (j * j + k * k <= L)
        jj, kk = j[sel], k[sel]
        order = np.lexsort((kk, jj))
        jj, kk = jj[order], kk[order]
        freq = np.concatenate([[[0, 0]], np.repeat(np.stack([jj, kk], 1), 2, axis=0)])
        kind = np.concatenate([[0], np.tile([1, 2], jj.size)])
        lam = (freq[:, 0] ** 2 + freq[:, 1] ** 2).astype(float)
    else:
        lmax = 0
        while (lmax + 1) * (lmax + 2) <= L:
            lmax += 1
        rows = [(l, m) for l in range(lmax + 1) for m in range(-l, l + 1)]
        freq = np.array(rows, dtype=int)
        kind = np.where(freq[:, 1] == 0, 0, np.where(freq[:, 1] > 0, 1, 2))
        lam = (freq[:, 0] * (freq[:, 0] + 1)).astype(float)

    if pure and not np.any(lam == L):
        raise ValueError(f"pure mode requires L to be an exact eigenvalue; {L} is not")
    mask = _window_mask(lam, L, window, pure)
    return SpectralBasis(manifold, float(L), freq[mask], kind[mask], lam[mask],
                         window=window, pure=pure)


@dataclass(frozen=True, eq=False)
class RandomSection:
    basis: SpectralBasis
    coeffs: np.ndarray
    seed: Optional[tuple] = None

    def scaled(self, factor: float) -> "RandomSection":
        return RandomSection(self.basis, self.coeffs * factor, self.seed)

    @property
    def scale(self) -> float:
        """Root-mean-square amplitude ``sqrt(sum c^2 / Vol)``; proportional to ``|c|``."""
        return float(np.linalg.norm(self.coeffs) / math.sqrt(self.basis.volume))


def draw_section(basis: SpectralBasis, rng) -> RandomSection:
    """Standard-normal coefficients.  ``rng`` is a Generator or a seed."""
    seed = None
    if not isinstance(rng, np.random.Generator):
        seed = rng if isinstance(rng, tuple) else (rng,)
        rng = np.random.default_rng(np.random.SeedSequence(list(seed)))
    return RandomSection(basis, rng.standard_normal(basis.dim), seed)


def parse_deriv(spec, n: int) -> tuple:
    """``'id'``, ``'t'``, ``'p'``, ``'tt'``, ``'tp'``, ``'pp'`` or a tuple -> multi-index."""
    if isinstance(spec, tuple):
        d = tuple(int(x) for x in spec)
    else:
        s = str(spec).strip().lower()
        if s == "id":
            s = ""
        if set(s) - {"t", "p"}:
            raise ValueError(f"cannot parse derivative spec {spec!r}")
        d = (s.count("t"), s.count("p")) if n == 2 else (s.count("t"),)
        if n == 1 and "p" in s:
            raise ValueError("the circle has only the theta direction")
    if len(d) != n or sum(d) > 2 or min(d) < 0:
        raise ValueError(f"derivative multi-order {d} invalid (order <= 2, dimension {n})")
    return d


def _check_points(basis: SpectralBasis, points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if basis.n == 1 and pts.ndim == 1:
        pts = pts[:, None]
    pts = np.atleast_2d(pts)
    if pts.shape[-1] != basis.n:
        raise ValueError(f"points must have {basis.n} chart coordinates")
    if not np.all(np.isfinite(pts)):
        raise ValueError("points must be finite")
    if basis.manifold == "sphere2" and (np.any(pts[:, 0] < 0) or np.any(pts[:, 0] > math.pi)):
        raise ValueError("sphere colatitude must lie in [0, pi]")
    return pts


def _trig_deriv(c, s, kind, r):
    """r-th derivative of cos (kind 1) or sin (kind 2) given cos/sin values."""
    r %= 4
    if r == 0:
        return np.where(kind == 2, s, c)
    if r == 1:
        return np.where(kind == 2, c, -s)
    if r == 2:
        return np.where(kind == 2, -s, -c)
    return np.where(kind == 2, -c, s)


def mode_values(basis: SpectralBasis, points, deriv=None) -> np.ndarray:
    """Matrix ``(n_points, N_L)`` of derivatives of every basis function."""
    pts = _check_points(basis, points)
    d = (0,) * basis.n if deriv is None else parse_deriv(deriv, basis.n)
    amp = basis.amplitude
    if basis.manifold in ("circle", "torus2"):
        f = basis.freq.astype(float)
        u = pts @ f.T
        r = sum(d)
        vals = _trig_deriv(np.cos(u), np.sin(u), basis.kind[None, :], r)
        vals = vals * np.prod(f ** np.array(d), axis=1)[None, :]
        if r > 0:
            vals = np.where(basis.kind[None, :] == 0, 0.0, vals)
        return vals * amp[None, :]
    return _sphere_mode_values(basis, pts, d)


def _sphere_mode_values(basis, pts, d):
    a, b = d
    lmax = basis.lmax
    tables = legendre_with_derivatives(lmax, pts[:, 0], order=a)
    P = tables[a]
    l = basis.freq[:, 0]
    m = basis.freq[:, 1]
    am = np.abs(m)
    leg = P[l, am].T  # (points, modes)
    u = pts[:, 1:2] * am[None, :]
    kind = np.where(m < 0, 2, 1)
    trig = _trig_deriv(np.cos(u), np.sin(u), kind[None, :], b) * (am[None, :] ** b)
    if b > 0:
        trig = np.where(m[None, :] == 0, 0.0, trig)
    else:
        trig = np.where(m[None, :] == 0, 1.0, trig)
    return leg * trig * basis.amplitude[None, :]


def eval_section(section: RandomSection, points, deriv=None) -> np.ndarray:
    """Exact finite-sum evaluation at chart points."""
    return mode_values(section.basis, points, deriv) @ section.coeffs


def grid_size(L: float, cells_per_wavelength: float) -> int:
    """FFT-friendly grid size with at least the requested resolution over ``2 pi``."""
    return int(sfft.next_fast_len(int(math.ceil(cells_per_wavelength * math.sqrt(L)))))


def _torus_lattice(section: RandomSection, M: int) -> np.ndarray:
    b = section.basis
    c = section.coeffs * b.amplitude
    Z = np.zeros((M, M), dtype=complex)
    cosm = b.kind == 1
    sinm = b.kind == 2
    const = b.kind == 0
    j, k = b.freq[:, 0], b.freq[:, 1]
    np.add.at(Z, (j[cosm] % M, k[cosm] % M), c[cosm])
    np.add.at(Z, (j[sinm] % M, k[sinm] % M), -1j * c[sinm])
    Z[0, 0] += c[const].sum()
    return Z


def eval_grid(section: RandomSection, M: int, derivs: Sequence = ("id",),
              n_theta: Optional[int] = None) -> list[np.ndarray]:
    """Values on the uniform chart grid, one array per requested derivative.

    circle: ``theta_a = 2 pi a / M``; torus: ``grid[a, b] = s(theta_a, phi_b)``
    via an inverse FFT of the frequency lattice; sphere: ``n_theta`` rows from
    pole to pole inclusive by ``M`` longitudes (separable Legendre x Fourier).
    """
    b = section.basis
    ds = [parse_deriv(d, b.n) for d in derivs]
    if b.manifold == "circle":
        c = section.coeffs * b.amplitude
        Z = np.zeros(M, dtype=complex)
        k = b.freq[:, 0]
        np.add.at(Z, k[b.kind == 1] % M, c[b.kind == 1])
        np.add.at(Z, k[b.kind == 2] % M, -1j * c[b.kind == 2])
        Z[0] += c[b.kind == 0].sum()
        kk = sfft.fftfreq(M, 1.0 / M)
        out = []
        for (a,) in ds:
            out.append(np.real(sfft.ifft(Z * (1j * kk) ** a) * M))
        return out
    if b.manifold == "torus2":
        Z = _torus_lattice(section, M)
        kk = sfft.fftfreq(M, 1.0 / M)
        out = []
        for (a, bb) in ds:
            F = Z * ((1j * kk)[:, None] ** a) * ((1j * kk)[None, :] ** bb)
            out.append(np.real(sfft.ifft2(F) * (M * M)))
        return out
    return _sphere_grid(section, M, n_theta or (M // 2 + 1), ds)


def _sphere_grid(section, M, n_theta, ds):
    b = section.basis
    theta = np.linspace(0.0, math.pi, n_theta)
    phi = 2 * math.pi * np.arange(M) / M
    amax = max(d[0] for d in ds)
    tables = legendre_with_derivatives(b.lmax, theta, order=amax)
    l, m = b.freq[:, 0], b.freq[:, 1]
    am = np.abs(m)
    c = section.coeffs * b.amplitude
    out = []
    for (a, bb) in ds:
        P = tables[a][l, am]  # (modes, n_theta)
        u = phi[None, :] * am[:, None]
        kind = np.where(m < 0, 2, 1)[:, None]
        trig = _trig_deriv(np.cos(u), np.sin(u), kind, bb) * (am[:, None] ** bb)
        trig = np.where(m[:, None] == 0, 1.0 if bb == 0 else 0.0, trig)
        out.append((P * c[:, None]).T @ trig)
    return out


_JET_CHUNK = 2048


def _powers(x, lo, hi):
    """``exp(1j * k * x)`` for integer ``k`` in ``lo..hi``, shape ``(len(x), hi-lo+1)``."""
    z = np.exp(1j * x)
    out = np.empty((x.size, hi - lo + 1), dtype=complex)
    out[:, 0] = np.exp(1j * lo * x)
    if hi > lo:
        out[:, 1:] = z[:, None]
        out = np.cumprod(out, axis=1)
    return out


def _exp_table(pts, freq):
    """``exp(1j * pts @ freq.T)`` for integer frequencies via per-axis power tables."""
    freq = np.asarray(freq, dtype=np.int64)
    E = None
    for ax in range(freq.shape[1]):
        lo, hi = int(freq[:, ax].min()), int(freq[:, ax].max())
        T = _powers(pts[:, ax], lo, hi)[:, freq[:, ax] - lo]
        E = T if E is None else E * T
    return E


def section_jet(section: RandomSection, points, order: int = 2) -> np.ndarray:
    """Derivatives up to ``order`` (at most 2) at scattered points, shape ``(n_jet, k)``.

    Rows follow :func:`jet_index`.  Circle and torus use one complex
    exponential per (point, frequency) pair; the sphere goes through the
    Legendre tables.
    """
    b = section.basis
    pts = _check_points(b, points)
    if len(pts) > _JET_CHUNK:
        return np.hstack([section_jet(section, pts[i:i + _JET_CHUNK], order)
                          for i in range(0, len(pts), _JET_CHUNK)])
    idx = [d for d in jet_index(b.n) if sum(d) <= order]
    if b.manifold == "sphere2":
        return _sphere_jet(section, pts, idx)
    amp = b.amplitude
    c = section.coeffs * amp
    cos_m = b.kind == 1
    f = b.freq[cos_m].astype(float)
    Zf = c[cos_m] - 1j * c[b.kind == 2]
    const = c[b.kind == 0].sum()
    E = _exp_table(pts, b.freq[cos_m])
    cols = []
    for d in idx:
        w = Zf * (1j ** sum(d)) * np.prod(f ** np.array(d), axis=1)
        cols.append(w)
    vals = np.real(E @ np.stack(cols, axis=1)).T
    vals[0] += const
    return vals


def _sphere_jet(section, pts, idx):
    # contract over l first: A[a][p, m] = sum_l (coef_lm - i coef_l,-m) d^a Pbar_lm(theta_p)
    b = section.basis
    lmax = b.lmax
    c = section.coeffs * b.amplitude
    l, m = b.freq[:, 0], b.freq[:, 1]
    Z = np.zeros((lmax + 1, lmax + 1), dtype=complex)
    np.add.at(Z, (l[m >= 0], m[m >= 0]), c[m >= 0])
    np.add.at(Z, (l[m < 0], -m[m < 0]), -1j * c[m < 0])
    top = max(d[0] for d in idx)
    tables = legendre_with_derivatives(lmax, pts[:, 0], order=top)
    A = [np.einsum("lm,lmp->pm", Z, T) for T in tables]
    E = _powers(pts[:, 1], 0, lmax)
    ms = np.arange(lmax + 1)
    return np.vstack([np.real((A[a] * (1j * ms) ** bb * E).sum(1)) for a, bb in idx])


def jet_index(n: int) -> list[tuple]:
    if n == 1:
        return [(0,), (1,), (2,)]
    return [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]


def kernel_diag(basis: SpectralBasis, point, q1="id", q2="id") -> float:
    """``sum_k (Q1 phi_k)(x) (Q2 phi_k)(x)``."""
    v1 = mode_values(basis, [point] if basis.n > 1 else [[point]], q1)[0]
    v2 = mode_values(basis, [point] if basis.n > 1 else [[point]], q2)[0]
    return float(v1 @ v2)


@dataclass(frozen=True, eq=False)
class JetCovariance:
    point: tuple
    L: float
    index: list
    matrix: np.ndarray = field(repr=False)

    def sub(self, keys) -> np.ndarray:
        pos = [self.index.index(k) for k in keys]
        return self.matrix[np.ix_(pos, pos)]


def jet_covariance(basis: SpectralBasis, point, scale: float = 1.0) -> JetCovariance:
    """Covariance of ``(s, ds, d^2 s)`` at ``point`` from the kernel's diagonal.

    ``scale`` multiplies the coefficient variance (used to check that
    downstream densities do not depend on it).
    """
    idx = jet_index(basis.n)
    pt = np.atleast_1d(np.asarray(point, dtype=float))
    rows = np.vstack([mode_values(basis, pt[None, :], d)[0] for d in idx])
    return JetCovariance(tuple(pt.tolist()), basis.L, idx, scale * (rows @ rows.T))


def weyl_ratio(basis: SpectralBasis) -> float:
    from .symbol_geometry import ball_moments

    c0 = ball_moments(basis.n).c0
    return basis.dim / (c0 * basis.volume * basis.L ** (basis.n / 2))


def verify_kernel_asymptotics(manifold: str, Ls: Sequence[float], q1="id", q2="id",
                              point=None, require_sweep: bool = True) -> list[dict]:
    """Exact diagonal kernel entries vs the leading term from the ball moments.

    The ``(Q1, Q2)`` entry with multi-orders ``a, b`` scales like
    ``L^{(n + |a| + |b|)/2}`` times the moment ``(2 pi)^-n int_K xi^a xi^b``.
    Entries whose moment vanishes by parity predict 0; their relative error is
    reported against the exact value's natural scale.  With ``require_sweep``
    (the default) at least three increasing ``L`` values are needed.
    """
    from .symbol_geometry import ball_moments

    Ls = [float(x) for x in Ls]
    if require_sweep and len(Ls) < 3:
        raise ValueError("need at least three L values")
    if not Ls:
        raise ValueError("need at least one L value")
    if any(b <= a for a, b in zip(Ls, Ls[1:])):
        raise ValueError("L values must be strictly increasing")
    n = _DIM[manifold]
    d1, d2 = parse_deriv(q1, n), parse_deriv(q2, n)
    tot = tuple(x + y for x, y in zip(d1, d2))
    mom = _ball_monomial_moment(n, tot, ball_moments(n))
    # derivatives of cos/sin pick up i^|a| (-i)^|b|: real sign (-1)^((|a|-|b|)/2)
    r1, r2 = sum(d1), sum(d2)
    sign = (-1) ** ((r1 - r2) // 2) if (r1 - r2) % 2 == 0 else 0
    if point is None:
        point = (0.3,) if n == 1 else (0.3, 1.1)
    # sphere chart: d/dphi has length sin(theta)
    metric = math.sin(point[0]) ** (d1[-1] + d2[-1]) if manifold == "sphere2" else 1.0
    rows = []
    for L in Ls:
        basis = build_basis(manifold, L)
        exact = kernel_diag(basis, point if n > 1 else point[0], d1, d2) / metric
        pred = sign * mom * L ** ((n + r1 + r2) / 2)
        ref = abs(pred) if pred != 0 else _ball_monomial_moment(
            n, tuple(2 * x for x in d1), ball_moments(n)) * L ** ((n + 2 * r1) / 2)
        rows.append({"L": L, "exact": exact, "predicted": pred,
                     "rel_error": abs(exact - pred) / ref})
    return rows


def _ball_monomial_moment(n: int, powers: tuple, mom) -> float:
    """``(2 pi)^-n int_{|xi|<=1} xi^powers`` for total degree <= 4."""
    if any(p % 2 for p in powers):
        return 0.0
    key = tuple(sorted((p for p in powers if p), reverse=True))
    if key == ():
        return mom.c0
    if key == (2,):
        return mom.c1
    if key == (4,):
        return mom.c4
    if key == (2, 2):
        return mom.c2
    raise ValueError(f"monomial degree {powers} not supported")
