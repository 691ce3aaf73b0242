"""Fully normalized associated Legendre functions and their theta-derivatives.

``Pbar[l, m](theta)`` is normalized so that the real spherical harmonics

    Y_l0 = Pbar[l, 0](theta)
    Y_lm = sqrt(2) Pbar[l, m](theta) cos(m phi)       m > 0
    Y_l,-m = sqrt(2) Pbar[l, m](theta) sin(m phi)     m > 0

are orthonormal on the unit sphere.  No Condon-Shortley phase.  Values come
from the standard three-term recurrence in ``l`` (stable well past degree
30; no factorials).
"""
from __future__ import annotations

import math

import numpy as np


def legendre_table(lmax: int, theta) -> np.ndarray:
    """Array ``(lmax+1, lmax+1, *theta.shape)``; entries with ``m > l`` are 0."""
    theta = np.asarray(theta, dtype=float)
    x = np.cos(theta)
    sx = np.sin(theta)
    P = np.zeros((lmax + 1, lmax + 1) + theta.shape)
    P[0, 0] = 1.0 / math.sqrt(4.0 * math.pi)
    for m in range(1, lmax + 1):
        P[m, m] = math.sqrt((2 * m + 1) / (2.0 * m)) * sx * P[m - 1, m - 1]
    for m in range(0, lmax):
        P[m + 1, m] = math.sqrt(2 * m + 3) * x * P[m, m]
    for m in range(0, lmax + 1):
        for l in range(m + 2, lmax + 1):
            a = math.sqrt((4.0 * l * l - 1.0) / (l * l - m * m))
            b = math.sqrt(((l - 1.0) ** 2 - m * m) / (4.0 * (l - 1.0) ** 2 - 1.0))
            P[l, m] = a * (x * P[l - 1, m] - b * P[l - 2, m])
    return P


def dtheta(P: np.ndarray) -> np.ndarray:
    """Apply ``d/dtheta`` to a table of the same shape as :func:`legendre_table`.

    Uses ``dP_l^m = 1/2 [sqrt((l+m)(l-m+1)) P_l^{m-1} - sqrt((l-m)(l+m+1)) P_l^{m+1}]``
    for ``m >= 1`` and ``dP_l^0 = -sqrt(l(l+1)) P_l^1``; regular at the poles,
    so it can be applied repeatedly.
    """
    lmax = P.shape[0] - 1
    out = np.zeros_like(P)
    for l in range(1, lmax + 1):
        out[l, 0] = -math.sqrt(l * (l + 1.0)) * P[l, 1]
        for m in range(1, l + 1):
            up = math.sqrt((l - m) * (l + m + 1.0)) * P[l, m + 1] if m < l else 0.0
            out[l, m] = 0.5 * (math.sqrt((l + m) * (l - m + 1.0)) * P[l, m - 1] - up)
    return out


def legendre_with_derivatives(lmax: int, theta, order: int = 2) -> list[np.ndarray]:
    tables = [legendre_table(lmax, theta)]
    for _ in range(order):
        tables.append(dtheta(tables[-1]))
    return tables
