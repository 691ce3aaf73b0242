"""Homogeneous symbols, their sublevel bodies and moment constants.

All moments are stored already divided by ``(2*pi)**n``.  For a body ``K`` in
``R^n``::

    c0 = |K|                     / (2 pi)^n
    c1 = int_K xi_1^2            / (2 pi)^n
    c2 = int_K xi_1^2 xi_2^2     / (2 pi)^n
    c4 = int_K xi_1^4            / (2 pi)^n

For ``n = 1`` there is no second axis; ``c2`` is then defined as ``c4 / 3`` so
that the rotation-invariant relation ``c4 = 3 c2`` keeps holding.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = [
    "SymbolSpec",
    "MomentSet",
    "Sym2InnerSpec",
    "euclidean_symbol",
    "check_symbol",
    "ball_moments",
    "annulus_moments",
    "sphere_shell_moments",
    "mc_moments",
    "gp_metric",
    "sym2_inner",
]


@dataclass(frozen=True)
class SymbolSpec:
    """An even, positive, degree-``order`` homogeneous function on ``R^n``.

    ``evaluator`` takes an array of shape ``(k, n)`` and returns ``(k,)``.
    """

    n: int
    order: float
    evaluator: Callable[[np.ndarray], np.ndarray]
    kind: str = "custom"

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"invalid dimension n={self.n}")
        if not self.order > 0:
            raise ValueError(f"order must be positive, got {self.order}")
        if self.kind not in ("euclidean-ball", "custom"):
            raise ValueError(f"unknown symbol kind {self.kind!r}")

    def __call__(self, xi) -> np.ndarray:
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        return np.asarray(self.evaluator(xi), dtype=float)


def euclidean_symbol(n: int, order: float = 2.0) -> SymbolSpec:
    """``xi -> |xi|^order``.  Order 2 is the Laplacian, order 1 the DtN map."""
    return SymbolSpec(
        n=n,
        order=order,
        evaluator=lambda xi: np.sum(xi * xi, axis=1) ** (0.5 * order),
        kind="euclidean-ball",
    )


def check_symbol(symbol: SymbolSpec, samples: int = 1000, seed: int = 0,
                 rtol: float = 1e-12) -> bool:
    """Sample homogeneity, evenness and positivity; raise on failure."""
    rng = np.random.default_rng(seed)
    xi = rng.standard_normal((samples, symbol.n))
    t = rng.uniform(0.1, 10.0, size=samples)
    base = symbol(xi)
    if not np.all(np.isfinite(base)) or np.any(base <= 0):
        raise ValueError("symbol is not positive on nonzero covectors")
    scaled = symbol(t[:, None] * xi)
    if not np.allclose(scaled, t ** symbol.order * base, rtol=rtol, atol=0):
        raise ValueError("symbol is not homogeneous of the declared order")
    if not np.allclose(symbol(-xi), base, rtol=rtol, atol=0):
        raise ValueError("symbol is not even")
    return True


@dataclass(frozen=True)
class MomentSet:
    n: int
    c0: float
    c1: float
    c2: float
    c4: float
    gamma_window: Optional[float] = None
    c0_stderr: Optional[float] = None
    c1_stderr: Optional[float] = None
    c2_stderr: Optional[float] = None
    c4_stderr: Optional[float] = None
    kind: str = "ball"
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def is_estimated(self) -> bool:
        return self.c0_stderr is not None

    def validate(self) -> None:
        vals = (self.c0, self.c1, self.c2, self.c4)
        if not all(np.isfinite(v) and v > 0 for v in vals):
            raise ValueError(f"degenerate moments: {vals}")

    def as_dict(self) -> dict:
        out = {"n": self.n, "c0": self.c0, "c1": self.c1, "c2": self.c2, "c4": self.c4}
        if self.gamma_window is not None:
            out["gamma"] = self.gamma_window
        if self.is_estimated:
            out.update(
                c0_stderr=self.c0_stderr,
                c1_stderr=self.c1_stderr,
                c2_stderr=self.c2_stderr,
                c4_stderr=self.c4_stderr,
            )
        return out


def _check_dim(n) -> int:
    if isinstance(n, bool) or int(n) != n or n < 1:
        raise ValueError(f"invalid dimension n={n}")
    return int(n)


def _unit_ball_volume(n: int) -> float:
    return math.pi ** (n / 2) / math.gamma(n / 2 + 1)


def _shell_moments(n: int, rho: float) -> tuple[float, float, float, float]:
    # radial integrals over rho <= |xi| <= 1 of r^(n-1), r^(n+1), r^(n+3)
    base = _unit_ball_volume(n) / (2 * math.pi) ** n
    c0 = base * (1.0 - rho ** n)
    c1 = base * (1.0 - rho ** (n + 2)) / (n + 2)
    c2 = base * (1.0 - rho ** (n + 4)) / ((n + 2) * (n + 4))
    return c0, c1, c2, 3.0 * c2


def ball_moments(n: int) -> MomentSet:
    """Closed-form moments of the unit ball (the Laplace / DtN body)."""
    n = _check_dim(n)
    c0, c1, c2, c4 = _shell_moments(n, 0.0)
    return MomentSet(n=n, c0=c0, c1=c1, c2=c2, c4=c4, kind="ball")


def annulus_moments(n: int, gamma: float, m: float = 2.0) -> MomentSet:
    """Moments of ``{gamma <= sigma <= 1}`` for ``sigma = |xi|^m``.

    The inner radius is ``gamma**(1/m)``.  ``gamma = 0`` returns exactly
    :func:`ball_moments`.
    """
    n = _check_dim(n)
    if not m > 0:
        raise ValueError(f"order must be positive, got {m}")
    if not 0.0 <= gamma < 1.0:
        raise ValueError(f"annulus requires 0 <= gamma < 1, got {gamma}")
    if gamma == 0.0:
        return ball_moments(n)
    c0, c1, c2, c4 = _shell_moments(n, gamma ** (1.0 / m))
    return MomentSet(n=n, c0=c0, c1=c1, c2=c2, c4=c4, gamma_window=float(gamma),
                     kind="annulus")


def sphere_shell_moments(n: int) -> MomentSet:
    """Moments of the uniform surface measure on the unit sphere ``K^1``.

    Only ratios of these numbers enter the asymptotic constants, which are
    homogeneous of degree zero in the moments, so the overall normalization
    of the surface measure is immaterial.  The value used here is the limit of
    ``annulus_moments(n, 1 - eps) / (n * eps / m)``.
    """
    n = _check_dim(n)
    area = n * _unit_ball_volume(n) / (2 * math.pi) ** n
    c1 = area / n
    c2 = area / (n * (n + 2))
    return MomentSet(n=n, c0=area, c1=c1, c2=c2, c4=3.0 * c2, gamma_window=1.0,
                     kind="sphere")


def _min_on_sphere(symbol: SymbolSpec, rng: np.random.Generator, k: int = 20000) -> float:
    u = rng.standard_normal((k, symbol.n))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    vals = symbol(u)
    if not np.all(np.isfinite(vals)) or np.any(vals < 0):
        raise ValueError("symbol evaluator returned negative or non-finite values")
    return float(vals.min())


def mc_moments(symbol: SymbolSpec, samples: int, seed: int) -> MomentSet:
    """Monte Carlo moments of ``K = {sigma <= 1}`` by rejection in a box.

    The box half-width is ``1.01 * (min_{|u|=1} sigma(u))**(-1/m)``: for
    ``xi = r u`` in ``K`` homogeneity gives ``r <= sigma(u)**(-1/m)``.
    """
    if samples < 1000:
        raise ValueError("mc_moments needs at least 1e3 samples")
    n = symbol.n
    rng = np.random.default_rng(seed)
    smin = _min_on_sphere(symbol, rng)
    if not smin > 0:
        raise ValueError("symbol vanishes on the unit sphere (not elliptic)")
    R = 1.01 * smin ** (-1.0 / symbol.order)
    box = (2 * R) ** n / (2 * math.pi) ** n

    chunk = 1 << 18
    sums = np.zeros(4)
    sq = np.zeros(4)
    done = 0
    while done < samples:
        k = min(chunk, samples - done)
        xi = rng.uniform(-R, R, size=(k, n))
        sig = symbol(xi)
        if not np.all(np.isfinite(sig)) or np.any(sig < 0):
            raise ValueError("symbol evaluator returned negative or non-finite values")
        inside = (sig <= 1.0).astype(float)
        x1 = xi[:, 0] ** 2
        x2 = xi[:, 1] ** 2 if n > 1 else None
        cols = [inside, inside * x1, inside * x1 * x2 if n > 1 else np.zeros(k), inside * x1 * x1]
        f = np.stack(cols, axis=1) * box
        sums += f.sum(axis=0)
        sq += (f * f).sum(axis=0)
        done += k
    mean = sums / samples
    var = np.maximum(sq / samples - mean ** 2, 0.0)
    se = np.sqrt(var / (samples - 1))
    c0, c1, c2, c4 = mean
    s0, s1, s2, s4 = se
    if n == 1:
        c2, s2 = c4 / 3.0, s4 / 3.0
    if not c0 > 0:
        raise ValueError("no samples fell inside K; symbol body is degenerate")
    return MomentSet(n=n, c0=c0, c1=c1, c2=c2, c4=c4, c0_stderr=s0, c1_stderr=s1,
                     c2_stderr=s2, c4_stderr=s4, kind="mc",
                     meta={"samples": samples, "seed": seed, "box_half_width": R})


def gp_metric(moments: MomentSet) -> tuple[float, float]:
    """Conformal factor of the induced metric and its volume density.

    For a rotation-invariant body the induced metric is ``c1 * g``; the
    associated volume density relative to ``|dvol_g|`` is ``sqrt(c1)**n``.
    """
    moments.validate()
    return moments.c1, math.sqrt(moments.c1) ** moments.n


@dataclass(frozen=True)
class Sym2InnerSpec:
    """``<A,B> = tr_pair * Tr(AB) + trace_product * Tr(A) Tr(B)`` on Sym(size)."""

    size: int
    tr_pair: float
    trace_product: float

    def dual_trace_coupling(self) -> float:
        """Trace coupling of the dual form, after normalizing to ``1/2 Tr(AB)``.

        If ``<.,.>`` is ``tr_pair * (Tr AB + t Tr A Tr B)`` on the dual, the
        inverse operator is ``(1/tr_pair) (X - t/(1 + size t) Tr(X) I)``, i.e.
        ``(2/tr_pair) * (1/2 Tr AB + gamma Tr A Tr B)`` with
        ``gamma = -t / (2 (1 + size t))``.
        """
        t = self.trace_product / self.tr_pair
        denom = 1.0 + self.size * t
        if denom <= 0:
            raise ValueError("Sym2 inner product is not positive definite")
        return -t / (2.0 * denom)


def sym2_inner(moments: MomentSet) -> Sym2InnerSpec:
    moments.validate()
    return Sym2InnerSpec(
        size=moments.n - 1,
        tr_pair=2.0 * moments.c2,
        trace_product=moments.c2 - moments.c1 ** 2 / moments.c0,
    )
