"""Trace-coupled Gaussian symmetric matrices and Gaussian conditioning.

The measure on ``Sym(m)`` has density proportional to ``exp(-<A,A>)`` with

    <A,B> = 1/2 Tr(AB) + gamma Tr(A) Tr(B).

Off-diagonal entries are independent ``N(0, 1/2)``; the diagonal is an
independent ``N(0, (I + 2 gamma J)^-1)`` vector, ``J`` the all-ones matrix.
``gamma = 1/6`` is the full Laplace ensemble and ``gamma = 1/2`` the
pure/window-limit ensemble.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

__all__ = [
    "TraceCoupledGaussian",
    "SignatureResult",
    "BlockGaussianMap",
    "SingularConditioningError",
    "sample_sym",
    "sample_sym_batch",
    "signature",
    "signature_batch",
    "DetEstimate",
    "expected_det_index",
    "expected_det_closed_form",
    "expected_det_profile",
    "schur_conditional",
    "goe_domination_check",
]

SHARD_SIZE = 1 << 16


@dataclass(frozen=True)
class TraceCoupledGaussian:
    size: int
    gamma: float

    def __post_init__(self):
        if int(self.size) != self.size or self.size < 0:
            raise ValueError(f"invalid matrix size {self.size}")
        if not self.gamma >= 0:
            raise ValueError(f"trace coupling must be nonnegative, got {self.gamma}")

    @property
    def diag_cov(self) -> np.ndarray:
        m = self.size
        return np.linalg.inv(np.eye(m) + 2.0 * self.gamma * np.ones((m, m)))

    def inner(self, A, B) -> np.ndarray:
        A = np.asarray(A, dtype=float)
        B = np.asarray(B, dtype=float)
        tab = np.einsum("...ij,...ji->...", A, B)
        tra = np.trace(A, axis1=-2, axis2=-1)
        trb = np.trace(B, axis1=-2, axis2=-1)
        return 0.5 * tab + self.gamma * tra * trb

    def _diag_factor(self) -> np.ndarray:
        # closed-form square root of (I + 2 gamma J)^-1:
        # I + c P has eigenvalues 1 (on 1-perp) and 1 + c m (on 1), P = J/m
        m = self.size
        if m == 0:
            return np.zeros((0, 0))
        lam = 1.0 + 2.0 * self.gamma * m
        return np.eye(m) + (lam ** -0.5 - 1.0) * np.full((m, m), 1.0 / m)


def sample_sym_batch(spec: TraceCoupledGaussian, count: int,
                     rng: np.random.Generator) -> np.ndarray:
    """``count`` exact draws, shape ``(count, m, m)``."""
    m = spec.size
    out = np.zeros((count, m, m))
    if m == 0:
        return out
    d = rng.standard_normal((count, m)) @ spec._diag_factor()
    idx = np.arange(m)
    out[:, idx, idx] = d
    iu, ju = np.triu_indices(m, k=1)
    if iu.size:
        off = rng.standard_normal((count, iu.size)) * math.sqrt(0.5)
        out[:, iu, ju] = off
        out[:, ju, iu] = off
    return out


def sample_sym(spec: TraceCoupledGaussian, rng: np.random.Generator) -> np.ndarray:
    return sample_sym_batch(spec, 1, rng)[0]


@dataclass(frozen=True)
class SignatureResult:
    index: int
    positive: int
    degenerate: int
    tol: float

    @property
    def is_degenerate(self) -> bool:
        return self.degenerate > 0


def _check_symmetric(A: np.ndarray) -> None:
    scale = np.max(np.abs(A), axis=(-2, -1), initial=0.0)
    asym = np.max(np.abs(A - np.swapaxes(A, -1, -2)), axis=(-2, -1), initial=0.0)
    if np.any(asym > 1e-12 * np.maximum(scale, np.finfo(float).tiny)):
        raise ValueError("matrix is not symmetric")


def signature_batch(A: np.ndarray, tol: float = 1e-9):
    """Vectorized signature: returns ``(index, positive, degenerate)`` arrays."""
    A = np.asarray(A, dtype=float)
    _check_symmetric(A)
    m = A.shape[-1]
    if m == 0:
        z = np.zeros(A.shape[:-2], dtype=int)
        return z, z.copy(), z.copy()
    ev = np.linalg.eigvalsh(A)
    norm = np.max(np.abs(ev), axis=-1, keepdims=True)
    small = np.abs(ev) <= tol * norm
    neg = (ev < 0) & ~small
    return neg.sum(-1), ((ev > 0) & ~small).sum(-1), small.sum(-1)


def signature(A, tol: float = 1e-9) -> SignatureResult:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("signature expects a square matrix")
    i, p, d = signature_batch(A, tol)
    return SignatureResult(int(i), int(p), int(d), tol)


@dataclass(frozen=True)
class DetEstimate:
    estimate: float
    stderr: float
    degenerate_fraction: float
    samples: int


def _shard_sums(spec, n_draws, seq, tol):
    """Sufficient statistics for every index from one shard of draws."""
    m = spec.size
    rng = np.random.default_rng(seq)
    A = sample_sym_batch(spec, n_draws, rng)
    ev = np.linalg.eigvalsh(A)
    norm = np.max(np.abs(ev), axis=-1, keepdims=True)
    small = np.abs(ev) <= tol * norm
    degenerate = small.any(axis=-1)
    index = ((ev < 0) & ~small).sum(-1)
    absdet = np.abs(np.prod(ev, axis=-1))
    s1 = np.zeros(m + 1)
    s2 = np.zeros(m + 1)
    cnt = np.zeros(m + 1)
    ok = ~degenerate
    for i in range(m + 1):
        sel = ok & (index == i)
        s1[i] = absdet[sel].sum()
        s2[i] = (absdet[sel] ** 2).sum()
        cnt[i] = sel.sum()
    return s1, s2, cnt, int(degenerate.sum())


def expected_det_profile(spec: TraceCoupledGaussian, samples: int, seed: int,
                         tol: float = 1e-9, workers: int = 1) -> list[DetEstimate]:
    """Estimates of ``E(i, m-i)`` for every ``i`` from one shared set of draws.

    Samples are split into fixed shards of ``SHARD_SIZE`` draws, shard ``k``
    seeded by ``SeedSequence(seed).spawn``; the result does not depend on
    ``workers``.
    """
    m = spec.size
    if m == 0:
        return [DetEstimate(1.0, 0.0, 0.0, samples)]
    sizes = [SHARD_SIZE] * (samples // SHARD_SIZE)
    if samples % SHARD_SIZE:
        sizes.append(samples % SHARD_SIZE)
    seqs = np.random.SeedSequence(seed).spawn(len(sizes))
    jobs = list(zip(sizes, seqs))
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(lambda j: _shard_sums(spec, j[0], j[1], tol), jobs))
    else:
        parts = [_shard_sums(spec, k, s, tol) for k, s in jobs]
    s1 = sum(p[0] for p in parts)
    s2 = sum(p[1] for p in parts)
    deg = sum(p[3] for p in parts)
    mean = s1 / samples
    var = np.maximum(s2 / samples - mean ** 2, 0.0)
    se = np.sqrt(var / (samples - 1))
    frac = deg / samples
    return [DetEstimate(float(mean[i]), float(se[i]), frac, samples) for i in range(m + 1)]


def expected_det_index(spec: TraceCoupledGaussian, i: int, samples: int, seed: int,
                       tol: float = 1e-9, workers: int = 1) -> DetEstimate:
    """Monte Carlo ``E(i, m-i) = E[|det A| 1{index(A) = i}]``."""
    if not 0 <= i <= spec.size:
        raise ValueError(f"index {i} out of range for size {spec.size}")
    if spec.size == 0:
        return DetEstimate(1.0, 0.0, 0.0, samples)
    if samples < 10_000:
        raise ValueError("expected_det_index needs at least 1e4 samples")
    return expected_det_profile(spec, samples, seed, tol, workers)[i]


def expected_det_closed_form(spec: TraceCoupledGaussian, i: int) -> float:
    """Exact ``E(i, m-i)`` for ``m <= 1``.

    ``m = 0`` is the empty-determinant convention (1).  For ``m = 1`` the
    matrix is a scalar ``a ~ N(0, 1/(1 + 2 gamma))`` and each sign carries
    half of ``E|a| = sqrt(2 / (pi (1 + 2 gamma)))``.
    """
    if not 0 <= i <= spec.size:
        raise ValueError(f"index {i} out of range for size {spec.size}")
    if spec.size == 0:
        return 1.0
    if spec.size == 1:
        return 1.0 / math.sqrt(2.0 * math.pi * (1.0 + 2.0 * spec.gamma))
    raise ValueError("closed form only for matrices of size 0 or 1")


class SingularConditioningError(np.linalg.LinAlgError):
    def __init__(self, cond):
        self.condition = cond
        super().__init__(f"conditioning block is singular (condition number {cond:.3e})")


def schur_conditional(cov, n_first: int, cond_limit: float = 1e12) -> np.ndarray:
    """Covariance of the first ``n_first`` coordinates given the rest.

    ``cov`` is a joint covariance ``[[S11, S12], [S21, S22]]``; returns
    ``S11 - S12 S22^-1 S21``.  A :class:`BlockGaussianMap` is accepted too.
    """
    if isinstance(cov, BlockGaussianMap):
        return cov.conditional_covariance(cond_limit)
    cov = np.asarray(cov, dtype=float)
    s11 = cov[:n_first, :n_first]
    s12 = cov[:n_first, n_first:]
    s22 = cov[n_first:, n_first:]
    if s22.size == 0:
        return s11.copy()
    cond = np.linalg.cond(s22)
    if not np.isfinite(cond) or cond > cond_limit:
        raise SingularConditioningError(cond)
    out = s11 - s12 @ np.linalg.solve(s22, s12.T)
    return 0.5 * (out + out.T)


@dataclass(frozen=True)
class BlockGaussianMap:
    """``A = [[a, b], [0, c]] : K_F + K_F^perp -> K_G + L_G``.

    With a standard Gaussian on the source, ``A A*`` is the covariance of the
    image, and ``a a*`` is recovered from the blocks of ``A A*`` alone.
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def full(self) -> np.ndarray:
        a, b, c = (np.atleast_2d(np.asarray(x, dtype=float)) for x in (self.a, self.b, self.c))
        zero = np.zeros((c.shape[0], a.shape[1]))
        return np.block([[a, b], [zero, c]])

    def covariance(self) -> np.ndarray:
        A = self.full()
        return A @ A.T

    def conditional_covariance(self, cond_limit: float = 1e12) -> np.ndarray:
        k = np.atleast_2d(self.a).shape[0]
        return schur_conditional(self.covariance(), k, cond_limit)


def goe_domination_check(spec: TraceCoupledGaussian, samples: int, seed: int,
                         profile_samples: Optional[int] = None) -> dict:
    """Pointwise ``exp(-<A,A>) <= exp(-Tr(A^2)/2)`` and the index profile.

    Returns the verdict, the largest observed ratio of the two densities
    (``<= 1`` when ``gamma >= 0``) and the estimates ``E(i, m-i)`` with the
    mid-index dominance verdict.
    """
    rng = np.random.default_rng(seed)
    A = sample_sym_batch(spec, samples, rng)
    q = spec.inner(A, A)
    goe = 0.5 * np.einsum("kij,kji->k", A, A)
    ratio = np.exp(goe - q)
    holds = bool(np.all(q >= goe))
    out = {"holds": holds, "max_ratio": float(ratio.max()) if samples else 1.0}
    if spec.size <= 8:
        prof = expected_det_profile(spec, profile_samples or samples, seed + 1)
        mid = spec.size // 2
        out["profile"] = [(p.estimate, p.stderr) for p in prof]
        out["mid_dominates"] = bool(prof[mid].estimate >= prof[0].estimate)
    return out
